"""PID-style refinement pulling generated trajectories through conditioning
points with decaying corrections.

For each conditioning point, the error against the trajectory at its grid
index is held over a forward window of decay_window steps and run through a
discrete PID law (integral: running sum times dt; derivative: backward
difference with the pre-window error taken as zero).  Each step's output is
scaled by a linear decay weight and normalized by the step-zero gain, which
makes the trajectory meet the conditioning value exactly at the snapped
index and release smoothly afterwards.

Points are processed in ascending grid order with errors measured against
the already-corrected trajectory, so every conditioning point is met exactly
even when decay windows overlap; outside all windows the input passes
through bit-unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ObservationSet
from .errors import ConfigError


@dataclass(frozen=True)
class PidConfig:
    kp: float = 1.0
    ki: float = 0.0
    kd: float = 0.1
    decay_window: int = 20
    dt: float | None = None   # defaults to 1/T at refinement time

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0 or self.kd < 0:
            raise ConfigError("PID gains must be >= 0")
        if self.decay_window < 1:
            raise ConfigError("decay_window must be >= 1")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.kp == 0 and self.ki == 0 and self.kd == 0:
            raise ConfigError("at least one PID gain must be positive")


def _correction_profile(cfg: PidConfig, dt: float, window: int) -> np.ndarray:
    """Per-step scale factors applied to the held error over the window.

    Index 0 is exactly 1 by the gain normalization; later entries combine
    the proportional and integral response with the linear decay weight.
    """
    k = np.arange(window)
    decay = 1.0 - k / cfg.decay_window
    gains = cfg.kp + cfg.ki * (k + 1) * dt
    gains[0] += cfg.kd / dt
    return decay * gains / gains[0]


def refine(times: np.ndarray, values: np.ndarray,
           conditioning: ObservationSet, cfg: PidConfig) -> np.ndarray:
    """Return a corrected copy of values meeting every conditioning point.

    Conditioning times snap to the nearest grid index; two points snapping
    to the same index are rejected since they would demand two values at
    one sample.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    T = len(times)
    if values.shape[0] != T:
        raise ValueError("times and values must have matching length")
    if cfg.decay_window > T:
        raise ConfigError(f"decay_window {cfg.decay_window} exceeds T={T}")
    if np.any(conditioning.times < 0.0) or np.any(conditioning.times > 1.0):
        raise ValueError("conditioning times must lie in [0, 1]")

    dt = cfg.dt if cfg.dt is not None else 1.0 / T
    snapped = [int(np.argmin(np.abs(times - t))) for t in conditioning.times]
    if len(set(snapped)) != len(snapped):
        raise ValueError("two conditioning points snap to the same grid index")

    out = values.copy()
    for c, sm in sorted(zip(snapped, conditioning.values), key=lambda cs: cs[0]):
        window = min(cfg.decay_window, T - c)
        profile = _correction_profile(cfg, dt, window)
        err = sm - out[c]
        out[c:c + window] += profile[:, None] * err[None, :]
    return out
