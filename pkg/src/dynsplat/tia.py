"""Temporal interval adjustment.

Positional-gradient norms are accumulated per temporal segment; on the
adjustment period, segments whose accumulated statistic clears the
mean-plus-tau-sigma threshold are shrunk by one step on each adjustable side.
The comparison uses the raw accumulated values against a threshold computed
from count-normalized means, exactly as the procedure is specified;
``compare_normalized`` switches to comparing the normalized means instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .deform import CanonicalTimes

__all__ = ["TiaSchedule", "TiaState", "accumulate", "adjust", "segment_of"]


@dataclass
class TiaSchedule:
    start: int = 500
    until: int = 10_000
    period: int = 1_000


@dataclass
class TiaState:
    times: CanonicalTimes
    schedule: TiaSchedule = field(default_factory=TiaSchedule)
    tau: float = 1.0
    step: float = 0.05
    compare_normalized: bool = False
    g_acc: np.ndarray = None
    nu_acc: np.ndarray = None

    def __post_init__(self):
        l = self.times.l
        if self.g_acc is None:
            self.g_acc = np.zeros(l)
        else:
            self.g_acc = np.asarray(self.g_acc, dtype=np.float64)
        if self.nu_acc is None:
            self.nu_acc = np.zeros(l, dtype=np.int64)
        else:
            self.nu_acc = np.asarray(self.nu_acc, dtype=np.int64)
        if self.g_acc.size != l or self.nu_acc.size != l:
            raise ValueError("accumulator length must equal the segment count")
        if np.any(self.g_acc < 0) or np.any(self.nu_acc < 0):
            raise ValueError("accumulators must be non-negative")

    @property
    def l(self) -> int:
        return self.times.l

    def reset(self) -> None:
        self.g_acc[:] = 0.0
        self.nu_acc[:] = 0


def segment_of(state: TiaState, t: float) -> int:
    bounds = state.times.boundaries()
    j = int(np.searchsorted(bounds, t, side="right") - 1)
    return min(max(j, 0), state.l - 1)


def accumulate(state: TiaState, t: float, grad_norm: float) -> None:
    """Add one view's positional-gradient norm to the segment containing ``t``."""
    if not (0.0 <= t <= 1.0):
        raise ValueError("timestamp must lie in [0, 1]")
    if grad_norm < 0:
        raise ValueError("gradient norm must be non-negative")
    c = segment_of(state, t)
    state.g_acc[c] += grad_norm
    state.nu_acc[c] += 1


def adjust(state: TiaState, iteration: int) -> bool:
    """Run one adjustment pass; no-op outside the schedule window or period.

    Returns True when an adjustment pass executed (accumulators were reset),
    regardless of whether any boundary moved.
    """
    sched = state.schedule
    if not (sched.start <= iteration <= sched.until):
        return False
    if iteration % sched.period != 0:
        return False

    if not np.any(state.nu_acc):
        # nothing accumulated: no statistics to act on, boundaries stay put
        state.reset()
        return True

    l = state.l
    means = np.where(state.nu_acc > 0,
                     state.g_acc / np.maximum(state.nu_acc, 1), 0.0)
    mu = means.mean()
    sigma = np.sqrt(((means - mu) ** 2).mean())
    stat = means if state.compare_normalized else state.g_acc
    threshold = mu + state.tau * sigma
    step = state.step

    t = state.times.t_c  # interior boundaries, t_c[i] == t_{i+1}
    for j in range(l):
        if stat[j] < threshold:
            continue
        # left/right boundaries of segment j, with t_0 = 0 and t_l = 1 fixed
        left = t[j - 1] if j != 0 else 0.0
        right = t[j] if j != l - 1 else 1.0
        if j != 0 and left <= right - step:
            t[j - 1] += step
            left = t[j - 1]
        if j != l - 1 and left <= right - step:
            t[j] -= step
    state.reset()
    return True
