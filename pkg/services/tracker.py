"""
services/tracker.py

Online tracking loop.

Per frame: detect with the previous frame's filter over a scale pyramid,
move/resize the box, blend the new target features into the appearance
model, ask the scheduler whether this frame learns context and/or refreshes
the keyfilter, train the filter against the current keyfilter, commit.

Key functions:
- `init(frame, box, config)`: build the geometry and train the first filter (context on, keyfilter term off).
- `detect(state, frame)`: scale-pyramid correlation, global peak, sub-cell parabolic refinement.
- `update_model(model, features, rate)`: linear interpolation of the appearance model.
- `step(state, frame)`: one full frame of the loop, returns the box and the next state.
- `run_sequence(sequence, config)`: one-pass run over a Sequence -> TrackResult.

Usage:
    from services.tracker import run_sequence
    result = run_sequence(seq, load_config())
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ingest.sequences import BoundingBox, Frame, Sequence
from services.config import TrackerConfig
from services.context import ContextPatch, ContextPatchSet, place_patches, score_patches
from services.dsp import Label, gaussian_label, label_sigma
from services.evaluation import TrackResult
from services.features import FeatureMap, PatchSpec, crop_patch, extract_features
from services.scheduler import FrameDirective, KeyfilterState, commit, directive_for
from services.solver import CropOperator, FilterState, SolverParams, filter_response, train_filter

logger = logging.getLogger(__name__)


class TrackerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Geometry:
    """Model-resolution layout of the search window, fixed for a track."""

    base_target: Tuple[float, float]   # target (w, h) in model pixels
    window: Tuple[int, int]            # search window (w, h) in model pixels
    grid: Tuple[int, int]              # (MH, MW) cells
    filter_cells: Tuple[int, int]      # (mh, mw) cells
    scale_factors: np.ndarray
    min_scale: float
    max_scale: float


@dataclass(frozen=True)
class ResponseMap:
    responses: np.ndarray
    peak_value: float
    peak: Tuple[int, int]
    peak_scale: int
    displacement: Tuple[float, float]  # (rows, cols) in cells, sub-cell refined


@dataclass(frozen=True)
class AppearanceModel:
    features: np.ndarray
    learning_rate: float


@dataclass(frozen=True)
class TrainingRecord:
    frame: int
    learn_context: bool
    refresh_keyfilter: bool
    context_scores: Tuple[float, ...]
    keyfilter_generation: int


@dataclass
class TrackerState:
    config: TrackerConfig
    geometry: Geometry
    crop: CropOperator
    label: Label
    box: BoundingBox
    scale_factor: float
    frame_index: int
    filter: FilterState
    keyfilter: KeyfilterState
    model: AppearanceModel
    history: List[TrainingRecord] = field(default_factory=list)


def solver_params(config: TrackerConfig) -> SolverParams:
    return SolverParams(
        lambda_=config.lambda_, gamma=config.gamma, mu0=config.mu0, beta=config.beta,
        mu_max=config.mu_max, admm_iters=config.admm_iters,
    )


def _geometry(box: BoundingBox, frame_shape: Tuple[int, int], config: TrackerConfig) -> Tuple[Geometry, float]:
    cs = config.cell_size
    pad = config.search_area_scale
    cells = (box.w * pad / cs) * (box.h * pad / cs)
    resize = math.sqrt(cells / config.max_model_cells) if cells > config.max_model_cells else 1.0
    base = (box.w / resize, box.h / resize)
    window = (max(int(round(base[0] * pad / cs)), 1) * cs, max(int(round(base[1] * pad / cs)), 1) * cs)
    grid = (window[1] // cs, window[0] // cs)
    filter_cells = (
        min(max(int(math.floor(base[1] / cs)), 1), grid[0]),
        min(max(int(math.floor(base[0] / cs)), 1), grid[1]),
    )
    n = config.number_of_scales
    exponents = np.arange(-((n - 1) // 2), (n - 1) - (n - 1) // 2 + 1)
    geometry = Geometry(
        base_target=base,
        window=window,
        grid=grid,
        filter_cells=filter_cells,
        scale_factors=config.scale_step ** exponents.astype(float),
        min_scale=max(5.0 / window[0], 5.0 / window[1]),
        max_scale=min(frame_shape[0] / base[1], frame_shape[1] / base[0]),
    )
    return geometry, resize


def _sample(pixels: np.ndarray, center: Tuple[float, float], scale: float, geometry: Geometry,
            config: TrackerConfig) -> FeatureMap:
    spec = PatchSpec(
        center=center,
        size=(geometry.window[0] * scale, geometry.window[1] * scale),
        target=geometry.window,
    )
    patch = crop_patch(pixels, spec)
    return extract_features(patch, config.cell_size, config.channels, window=True,
                            color_table=config.color_table)


def _context(pixels: np.ndarray, box: BoundingBox, scale: float, geometry: Geometry,
             config: TrackerConfig) -> ContextPatchSet:
    if config.base_score == 0 or config.num_context_patches == 0:
        return ContextPatchSet.empty()
    centers = place_patches(box, config.num_context_patches)
    scores = score_patches(box, centers, config.base_score)
    return ContextPatchSet(patches=tuple(
        ContextPatch(center=c, score=s, features=_sample(pixels, c, scale, geometry, config))
        for c, s in zip(centers, scores)
    ))


def _clamp_box(box: BoundingBox, frame: Frame) -> BoundingBox:
    cx = min(max(box.cx, 0.0), frame.width - 1.0)
    cy = min(max(box.cy, 0.0), frame.height - 1.0)
    return box.moved_to(cx, cy)


def init(frame: Frame, box: BoundingBox, config: TrackerConfig) -> TrackerState:
    """Train the first filter on ``frame`` around ``box``; it also seeds keyfilter generation 0."""
    if box.w < 2 * config.cell_size or box.h < 2 * config.cell_size:
        raise TrackerError(
            f"initial box {box.w:.1f}x{box.h:.1f} is smaller than two cells ({2 * config.cell_size} px)"
        )
    box = _clamp_box(box, frame)
    geometry, scale = _geometry(box, (frame.height, frame.width), config)
    crop = CropOperator(full=geometry.grid, cropped=geometry.filter_cells)
    label = gaussian_label(geometry.grid[0], geometry.grid[1],
                           label_sigma(geometry.filter_cells, config.output_sigma_factor))

    features = _sample(frame.pixels, box.center, scale, geometry, config)
    directive = directive_for(1, config.stepsize)
    context = _context(frame.pixels, box, scale, geometry, config)
    trained = train_filter(features, context, label, None, solver_params(config), crop)
    keyfilter = commit(trained, directive, None)
    logger.info("tracker init: box=%s grid=%s filter=%s scale=%.3f",
                box.to_corner(), geometry.grid, geometry.filter_cells, scale)
    return TrackerState(
        config=config, geometry=geometry, crop=crop, label=label, box=box,
        scale_factor=scale, frame_index=1, filter=trained, keyfilter=keyfilter,
        model=AppearanceModel(features=features.data, learning_rate=config.learning_rate),
        history=[TrainingRecord(1, directive.learn_context, directive.refresh_keyfilter,
                                tuple(context.scores), keyfilter.generation)],
    )


def _parabolic(prev: float, center: float, nxt: float) -> float:
    denom = prev - 2.0 * center + nxt
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (prev - nxt) / denom, -0.5, 0.5))


def _wrap(index: int, size: int) -> int:
    half = (size - 1) // 2
    return (index + half) % size - half


def detect(state: TrackerState, frame: Frame) -> Tuple[BoundingBox, ResponseMap]:
    """Locate the target in ``frame`` with the filter trained on the previous frame."""
    geometry, config = state.geometry, state.config
    mid = (len(geometry.scale_factors) - 1) // 2
    responses = []
    for i, factor in enumerate(geometry.scale_factors):
        features = _sample(frame.pixels, state.box.center, state.scale_factor * factor, geometry, config)
        response = filter_response(features, state.filter.g_hat)
        responses.append(response * config.scale_penalty ** abs(i - mid))
    responses = np.stack(responses)

    sind, row, col = np.unravel_index(int(np.argmax(responses)), responses.shape)
    resp = responses[sind]
    mh, mw = resp.shape
    d_row = _wrap(row, mh) + (_parabolic(resp[(row - 1) % mh, col], resp[row, col], resp[(row + 1) % mh, col])
                              if mh >= 3 else 0.0)
    d_col = _wrap(col, mw) + (_parabolic(resp[row, (col - 1) % mw], resp[row, col], resp[row, (col + 1) % mw])
                              if mw >= 3 else 0.0)

    sample_scale = state.scale_factor * geometry.scale_factors[sind]
    step_px = config.cell_size * sample_scale
    new_scale = float(np.clip(sample_scale, geometry.min_scale, geometry.max_scale))
    box = BoundingBox(
        cx=state.box.cx + d_col * step_px,
        cy=state.box.cy + d_row * step_px,
        w=geometry.base_target[0] * new_scale,
        h=geometry.base_target[1] * new_scale,
    )
    response_map = ResponseMap(
        responses=responses, peak_value=float(resp[row, col]), peak=(int(row), int(col)),
        peak_scale=int(sind), displacement=(float(d_row), float(d_col)),
    )
    return box, response_map


def update_model(model: AppearanceModel, new_features: np.ndarray, rate: Optional[float] = None) -> AppearanceModel:
    rate = model.learning_rate if rate is None else rate
    if not 0.0 <= rate <= 1.0:
        raise TrackerError(f"learning rate must lie in [0, 1], got {rate}")
    new_features = np.asarray(getattr(new_features, "data", new_features))
    if new_features.shape != model.features.shape:
        raise TrackerError(f"feature shape {new_features.shape} does not match model {model.features.shape}")
    return AppearanceModel(features=(1.0 - rate) * model.features + rate * new_features,
                           learning_rate=model.learning_rate)


def step(state: TrackerState, frame: Frame) -> Tuple[BoundingBox, TrackerState]:
    k = state.frame_index + 1
    config = state.config
    box, _ = detect(state, frame)
    scale = box.w / state.geometry.base_target[0]

    features = _sample(frame.pixels, box.center, scale, state.geometry, config)
    model = update_model(state.model, features.data)

    directive: FrameDirective = directive_for(k, config.stepsize)
    if directive.learn_context:
        context = _context(frame.pixels, box, scale, state.geometry, config)
    else:
        context = ContextPatchSet.empty()
    trained = train_filter(model.features, context, state.label, state.keyfilter,
                           solver_params(config), state.crop)
    keyfilter = commit(trained, directive, state.keyfilter)
    logger.debug("frame %d: box=%s context=%s refresh=%s", k, box.to_corner(),
                 directive.learn_context, directive.refresh_keyfilter)

    record = TrainingRecord(k, directive.learn_context, directive.refresh_keyfilter,
                            tuple(context.scores), keyfilter.generation)
    new_state = replace(
        state, box=box, scale_factor=scale, frame_index=k, filter=trained,
        keyfilter=keyfilter, model=model, history=state.history + [record],
    )
    return box, new_state


def run_sequence(sequence: Sequence, config: TrackerConfig, progress: bool = False) -> TrackResult:
    """One-pass run: initialize on the first ground-truth box, track every later frame."""
    boxes, times = [], []
    start = time.perf_counter()
    state = init(sequence.frames[0], sequence.init_box, config)
    times.append(time.perf_counter() - start)
    boxes.append(sequence.init_box)
    for frame in tqdm(sequence.frames[1:], desc=sequence.name, disable=not progress, leave=False):
        start = time.perf_counter()
        box, state = step(state, frame)
        times.append(time.perf_counter() - start)
        boxes.append(box)
    result = TrackResult(name=sequence.name, boxes=boxes, times=times)
    logger.info("tracked %s: %d frames at %.1f fps", sequence.name, len(boxes), result.fps)
    return result
