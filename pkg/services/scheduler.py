"""
services/scheduler.py

Keyfilter lifecycle and intermittent context learning.

Per frame k with stepsize T:
- k mod 2T == 0 : learn context, refresh the keyfilter
- k mod T  == 0 : refresh the keyfilter (no context)
- otherwise     : train under the current keyfilter only
Frame 1 always learns context and seeds keyfilter generation 0.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)


class SchedulerError(ValueError):
    pass


@dataclass(frozen=True)
class FrameDirective:
    frame: int
    learn_context: bool
    refresh_keyfilter: bool
    stepsize: int


@dataclass(frozen=True)
class KeyfilterState:
    w: np.ndarray
    source_frame: int
    generation: int


def directive_for(k: int, stepsize: int) -> FrameDirective:
    if k < 1 or stepsize < 1:
        raise SchedulerError(f"frame index and stepsize must be >= 1, got k={k}, T={stepsize}")
    if k == 1:
        return FrameDirective(frame=1, learn_context=True, refresh_keyfilter=True, stepsize=stepsize)
    return FrameDirective(
        frame=k,
        learn_context=k % (2 * stepsize) == 0,
        refresh_keyfilter=k % stepsize == 0,
        stepsize=stepsize,
    )


def seed_keyfilter(filter_state, frame: int = 1) -> KeyfilterState:
    return KeyfilterState(w=np.array(filter_state.w, copy=True), source_frame=frame, generation=0)


def commit(filter_state, directive: FrameDirective, state: Optional[KeyfilterState]) -> KeyfilterState:
    """Return the keyfilter constraining the frames after ``directive.frame``."""
    if state is None:
        return seed_keyfilter(filter_state, directive.frame)
    if filter_state.w.shape != state.w.shape:
        raise SchedulerError(f"filter shape {filter_state.w.shape} does not match keyfilter {state.w.shape}")
    if not directive.refresh_keyfilter:
        return state
    logger.debug("keyfilter generation %d from frame %d", state.generation + 1, directive.frame)
    return KeyfilterState(
        w=np.array(filter_state.w, copy=True),
        source_frame=directive.frame,
        generation=state.generation + 1,
    )
