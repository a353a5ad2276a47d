# scripts/batch_track.py

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Sequence, Tuple

from tqdm import tqdm

from ingest.sequences import BoundingBox, load_sequence
from services.config import RunManifest, TrackerConfig, save_manifest
from services.evaluation import SequenceScore, TrackResult, evaluate, export
from services.tracker import run_sequence

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.yaml"


def track_one(seq_dir: str, config: TrackerConfig) -> Tuple[TrackResult, List[BoundingBox]]:
    seq = load_sequence(seq_dir)
    return run_sequence(seq, config), list(seq.groundtruth)


def batch_track(
    seq_dirs: Sequence[str],
    config: TrackerConfig,
    out_dir: str,
    workers: int = 1,
    progress: bool = True,
    seed: int = 0,
    plots: bool = False,
) -> Tuple[List[TrackResult], List[SequenceScore]]:
    """
    Track every sequence directory with ``config`` and write results, curves,
    summary and the run manifest under ``out_dir``.
    """
    os.makedirs(out_dir, exist_ok=True)
    save_manifest(
        RunManifest(config=config, sequences=[os.path.abspath(d) for d in seq_dirs],
                    output_dir=os.path.abspath(out_dir), seed=seed),
        os.path.join(out_dir, MANIFEST_FILE),
    )

    outcomes = []
    if workers > 1 and len(seq_dirs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(track_one, d, config) for d in seq_dirs]
            for fut in tqdm(futures, desc="Tracking", disable=not progress):
                outcomes.append(fut.result())
    else:
        for d in tqdm(seq_dirs, desc="Tracking", disable=not progress):
            outcomes.append(track_one(d, config))

    results = [r for r, _ in outcomes]
    gts: Dict[str, List[BoundingBox]] = {r.name: gt for r, gt in outcomes}
    scores = evaluate(results, gts)
    export(results, scores, out_dir, plots=plots)
    for r in results:
        logger.info("[OK] %s: %d frames, %.1f fps", r.name, len(r), r.fps)
    return results, scores
