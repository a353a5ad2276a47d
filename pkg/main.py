import argparse
import itertools
import logging
import os
import sys
import time
from typing import List, Optional

import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from ingest.sequences import SequenceError, write_sequence
from ingest.synthetic import PRESETS, SyntheticSpecError, generate_synthetic, preset
from scripts.batch_track import batch_track
from services.config import TrackerConfig, load_config
from services.evaluation import EvaluationError, evaluate, export, load_ground_truth, load_results
from services.features import FeatureError, build_color_table, resolve_color_table_path, save_color_table
from services.solver import SolverError
from services.tracker import TrackerError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("kaot")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _output_root() -> str:
    return os.getenv("KAOT_OUTPUT_ROOT", "out")


def _overrides(args) -> dict:
    return {
        "stepsize": getattr(args, "stepsize", None),
        "gamma": getattr(args, "gamma", None),
        "base_score": getattr(args, "base_score", None),
        "admm_iters": getattr(args, "admm_iters", None),
    }


def cmd_track(args) -> int:
    config = load_config(args.config, _overrides(args))
    out_dir = args.out or _output_root()
    start = time.perf_counter()
    results, scores = batch_track(args.seq, config, out_dir, workers=args.workers,
                                  progress=not args.no_progress, seed=args.seed, plots=args.plots)
    for r in results:
        print(f"{r.name}: {len(r)} frames, {r.fps:.2f} fps")
    summary = scores[-1]
    print(f"precision@20={summary.precision_20:.3f} auc={summary.auc:.3f} "
          f"({time.perf_counter() - start:.1f}s total) -> {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    results = load_results(args.results)
    gts = load_ground_truth(args.gt, [r.name for r in results])
    scores = evaluate(results, gts)
    out_dir = args.out or _output_root()
    export([], scores, out_dir, plots=args.plots)
    for s in scores:
        print(f"{s.name}: precision@20={s.precision_20:.3f} auc={s.auc:.3f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    names: List[str] = args.preset or list(PRESETS)
    for name in names:
        spec = preset(name, n_frames=args.frames, seed=args.seed)
        path = write_sequence(generate_synthetic(spec), os.path.join(args.out, spec.name))
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.stepsizes:
        raise UsageError("sweep needs at least one stepsize")
    config = load_config(args.config, _overrides(args))
    gammas = args.gammas or [config.gamma]
    base_scores = args.base_scores or [config.base_score]
    out_root = args.out or _output_root()

    # validate the whole grid before the first run starts
    grid = [
        TrackerConfig.model_validate({**config.model_dump(), "stepsize": T, "gamma": gamma, "base_score": s})
        for T, gamma, s in itertools.product(args.stepsizes, gammas, base_scores)
    ]

    rows = []
    for run_config in grid:
        T, gamma, s = run_config.stepsize, run_config.gamma, run_config.base_score
        run_dir = os.path.join(out_root, f"T{T}_gamma{gamma:g}_s{s:g}")
        logger.info("sweep: T=%d gamma=%g s=%g", T, gamma, s)
        _, scores = batch_track(args.seq, run_config, run_dir, workers=args.workers,
                                progress=not args.no_progress, seed=args.seed)
        summary = scores[-1]
        rows.append({"stepsize": T, "gamma": gamma, "base_score": s, "frames": summary.frames,
                     "precision_20": summary.precision_20, "auc": summary.auc, "fps": summary.fps,
                     "output_dir": run_dir})
    frame = pd.DataFrame(rows)
    os.makedirs(out_root, exist_ok=True)
    path = os.path.join(out_root, "sweep_summary.csv")
    frame.to_csv(path, index=False)
    print(frame.drop(columns=["output_dir"]).to_string(index=False))
    print(f"-> {path}")
    return EXIT_OK


def cmd_colortable(args) -> int:
    path = save_color_table(build_color_table(args.temperature), resolve_color_table_path(args.out))
    print(f"wrote {path}")
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seq", action="append", required=True, help="sequence directory (repeatable)")
    p.add_argument("--config", help="config file or run manifest")
    p.add_argument("--gamma", type=float)
    p.add_argument("--base-score", dest="base_score", type=float)
    p.add_argument("--admm-iters", dest="admm_iters", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-progress", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kaot", description="Keyfilter-aware correlation-filter tracker and OPE benchmark.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    track = sub.add_parser("track", help="run the tracker on sequence directories")
    _add_run_flags(track)
    track.add_argument("--stepsize", type=int)
    track.add_argument("--plots", action="store_true")
    track.set_defaults(func=cmd_track)

    ev = sub.add_parser("eval", help="score result files against ground truth")
    ev.add_argument("--results", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--out")
    ev.add_argument("--plots", action="store_true")
    ev.set_defaults(func=cmd_eval)

    synth = sub.add_parser("synth", help="write the bundled synthetic sequences")
    synth.add_argument("--out", required=True)
    synth.add_argument("--preset", action="append", choices=PRESETS)
    synth.add_argument("--frames", type=int, default=100)
    synth.add_argument("--seed", type=int, default=7)
    synth.set_defaults(func=cmd_synth)

    sweep = sub.add_parser("sweep", help="track over a grid of stepsizes (and optional gamma / base-score grids)")
    _add_run_flags(sweep)
    sweep.add_argument("--stepsizes", type=int, nargs="*", default=list(range(1, 9)))
    sweep.add_argument("--gammas", type=float, nargs="+")
    sweep.add_argument("--base-scores", dest="base_scores", type=float, nargs="+")
    sweep.set_defaults(func=cmd_sweep)

    table = sub.add_parser("colortable", help="generate the color-attribute lookup table")
    table.add_argument("--out", help="target file (default: KAOT_COLOR_TABLE or resources/color_names.bin)")
    table.add_argument("--temperature", type=float, default=20.0)
    table.set_defaults(func=cmd_colortable)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("KAOT_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SequenceError, SyntheticSpecError, EvaluationError, FeatureError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, TrackerError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
