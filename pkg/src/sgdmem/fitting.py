"""Log-log power-law exponent fits of loss trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .evolution import LossTrajectory

__all__ = ["FitResult", "fit_exponent", "geometric_thin"]


@dataclass(frozen=True)
class FitResult:
    """Result of fitting L_t ~ amplitude * t^(-exponent) on a window."""

    exponent: float
    amplitude: float
    r_squared: float
    window: tuple
    n_points: int

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "amplitude": self.amplitude,
            "r_squared": self.r_squared,
            "window": list(self.window),
            "n_points": self.n_points,
        }


def geometric_thin(times: np.ndarray, ratio: float = 1.05) -> np.ndarray:
    """Indices of a geometrically thinned subset of sorted positive times."""
    keep = []
    last = 0.0
    for i, t in enumerate(times):
        if t >= last * ratio:
            keep.append(i)
            last = float(t)
    return np.array(keep, dtype=int)


def fit_exponent(
    traj: LossTrajectory, window=None, ratio: float = 1.05
) -> FitResult:
    """Least-squares fit of log L vs log t over a geometric subsample.

    ``window`` is (t_lo, t_hi); the default is [T/100, T].  The exponent is
    the negated slope.  Raises if the trajectory diverged inside the window
    or contains nonpositive values there.
    """
    t_max = int(traj.times.max())
    if window is None:
        window = (max(1, t_max // 100), t_max)
    t_lo, t_hi = int(window[0]), int(window[1])
    if not (0 < t_lo < t_hi):
        raise ValueError(f"need 0 < t_lo < t_hi, got ({t_lo}, {t_hi})")
    if traj.diverged_at is not None and traj.diverged_at <= t_hi:
        raise ValueError(
            f"trajectory diverged at step {traj.diverged_at}, inside window "
            f"({t_lo}, {t_hi})"
        )
    mask = (traj.times >= t_lo) & (traj.times <= t_hi)
    times = traj.times[mask].astype(float)
    values = traj.values[mask]
    if times.size == 0:
        raise ValueError(f"no samples inside window ({t_lo}, {t_hi})")
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise ValueError("window contains nonpositive or non-finite losses")
    idx = geometric_thin(times, ratio)
    times, values = times[idx], values[idx]
    if times.size < 2:
        raise ValueError("need at least two fit points; widen the window")

    x = np.log(times)
    y = np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    r2 = min(max(r2, 0.0), 1.0)
    return FitResult(
        exponent=-float(slope),
        amplitude=math.exp(float(intercept)),
        r_squared=r2,
        window=(t_lo, t_hi),
        n_points=int(times.size),
    )
