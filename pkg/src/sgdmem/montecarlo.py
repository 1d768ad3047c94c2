"""Stochastic validation of the deterministic loss dynamics.

Actual memory-M SGD on Gaussian data x ~ N(0, diag(lambda_k)), where the
optimum is w*_k = sqrt(c_k^2).  Batch gradients use the empirical Hessian
of |B| i.i.d. samples; the recorded loss is always the population loss
0.5 * sum_k lambda_k (delta w_k)^2.

Reproducibility: each run owns a PCG64 generator seeded explicitly, and
Gaussians come from a Box-Muller transform of uniforms (fixed stream
consumption per draw, no rejection), so trajectories are deterministic
functions of the seed across platforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .algorithm import Schedule
from .evolution import DIVERGENCE_FACTOR, LossTrajectory
from .spectrum import Spectrum

__all__ = [
    "EnsembleResult",
    "sgd_run",
    "ensemble",
    "SigmaFit",
    "empirical_sigma_check",
    "gaussians",
]


def gaussians(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals via Box-Muller on Generator.random() uniforms."""
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # in (0, 1], log-safe
    u2 = rng.random(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:n].reshape(shape)


def sgd_run(
    s: Spectrum, sched: Schedule, batch_size: int, T: int, seed: int
) -> LossTrajectory:
    """One SGD-with-memory trajectory on the Gaussian problem.

    Deterministic given ``seed``.  A non-finite or exploding population
    loss (beyond 1e12 * L_0) flags divergence at that step and stops.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    lam = s.lambdas
    sqrt_lam = np.sqrt(lam)
    dw = -np.sqrt(s.coeffs_sq)  # delta w_0 = -w*
    m = sched.memory
    u = np.zeros((m, s.size))

    losses = np.empty(T + 1)
    losses[0] = 0.5 * float(np.add.reduce((lam * dw**2)[::-1]))
    threshold = DIVERGENCE_FACTOR * max(losses[0], np.finfo(float).tiny)
    diverged_at = None

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            prm = sched.params(t)
            x = sqrt_lam * gaussians(rng, (batch_size, s.size))
            query = dw + prm.a @ u if m else dw
            grad = (x @ query) @ x / batch_size
            dw = dw - prm.alpha * grad + (prm.b @ u if m else 0.0)
            if m:
                u = np.outer(prm.c, grad) + prm.D @ u
            loss = 0.5 * float(np.add.reduce((lam * dw**2)[::-1]))
            losses[t + 1] = loss
            if not np.isfinite(loss) or loss > threshold:
                diverged_at = t + 1
                losses = losses[: t + 2]
                break

    times = np.arange(losses.size)
    fingerprint = {
        "schedule": sched.name,
        "preset": sched.preset,
        "batch_size": batch_size,
        "seed": seed,
        "K": s.size,
        "T": T,
    }
    return LossTrajectory(times, losses, "montecarlo", diverged_at, fingerprint)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Seed-averaged loss curve with its standard error."""

    times: np.ndarray
    mean: np.ndarray  # NaN from the first step at which any seed diverged
    stderr: np.ndarray
    n_seeds: int
    n_alive: np.ndarray
    n_diverged: int
    fingerprint: Optional[dict] = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "mean", "stderr", "n_alive"])
            for t, mu, se_, alive in zip(self.times, self.mean, self.stderr, self.n_alive):
                writer.writerow([int(t), repr(float(mu)), repr(float(se_)), int(alive)])

    def as_trajectory(self) -> LossTrajectory:
        diverged_at = None
        bad = np.nonzero(~np.isfinite(self.mean))[0]
        if bad.size:
            diverged_at = int(self.times[bad[0]])
        return LossTrajectory(
            self.times, self.mean, "montecarlo", diverged_at, self.fingerprint
        )


def ensemble(
    s: Spectrum,
    sched: Schedule,
    batch_size: int,
    T: int,
    n_seeds: int,
    base_seed: int = 0,
) -> EnsembleResult:
    """Mean and standard error over seeds base_seed + 0 .. n_seeds - 1.

    Runs are independent, so execution order does not matter; the reduction
    is performed in fixed seed order.
    """
    if n_seeds < 2:
        raise ValueError(f"n_seeds must be >= 2, got {n_seeds}")
    table = np.full((n_seeds, T + 1), np.nan)
    n_diverged = 0
    for i in range(n_seeds):
        traj = sgd_run(s, sched, batch_size, T, base_seed + i)
        table[i, : traj.values.size] = traj.values
        if traj.diverged:
            n_diverged += 1
            table[i, traj.values.size :] = np.nan
            table[i, traj.diverged_at :] = np.nan
    mean = np.mean(table, axis=0)  # NaN wherever any seed has diverged
    with np.errstate(invalid="ignore"):
        stderr = np.std(table, axis=0, ddof=1) / np.sqrt(n_seeds)
    n_alive = np.count_nonzero(np.isfinite(table), axis=0)
    fingerprint = {
        "schedule": sched.name,
        "preset": sched.preset,
        "batch_size": batch_size,
        "n_seeds": n_seeds,
        "base_seed": base_seed,
        "K": s.size,
        "T": T,
    }
    return EnsembleResult(
        np.arange(T + 1), mean, stderr, n_seeds, n_alive, n_diverged, fingerprint
    )


@dataclass(frozen=True)
class SigmaFit:
    """Least-squares (tau1, tau2) fit of an empirical noise map."""

    tau1: float
    tau2: float
    residual: float
    degenerate: bool

    def as_dict(self) -> dict:
        return {
            "tau1": self.tau1,
            "tau2": self.tau2,
            "residual": self.residual,
            "degenerate": self.degenerate,
        }


def empirical_sigma_check(
    H, C: np.ndarray, n_samples: int, seed: int = 0
) -> SigmaFit:
    """Monte-Carlo estimate of the sampling-noise map and its SE fit.

    Estimates Sigma(C) = E[<x, C x> x x^T] - H C H for Gaussian x ~ N(0, H)
    (H diagonal, given as a vector or a diagonal matrix) and fits (tau1,
    tau2) in tau1*Tr(HC)H - tau2*HCH by least squares.  A rank-deficient
    basis (e.g. rank-1 H, where the two terms are proportional) is flagged
    degenerate and the minimum-norm fit is returned.
    """
    H = np.asarray(H, dtype=float)
    h_diag = np.diag(H) if H.ndim == 2 else H
    dim = h_diag.size
    if dim > 8:
        raise ValueError(f"dense estimation supports dimension <= 8, got {dim}")
    C = np.asarray(C, dtype=float)
    if C.shape != (dim, dim):
        raise ValueError(f"C must be {dim}x{dim}, got {C.shape}")

    rng = np.random.default_rng(seed)
    h_mat = np.diag(h_diag)
    hch = h_mat @ C @ h_mat
    basis1 = np.trace(h_mat @ C) * h_mat
    basis2 = -hch

    acc = np.zeros((dim, dim))
    remaining = int(n_samples)
    chunk = 200_000
    while remaining > 0:
        n = min(chunk, remaining)
        x = np.sqrt(h_diag) * gaussians(rng, (n, dim))
        quad = np.einsum("ni,ij,nj->n", x, C, x)
        acc += np.einsum("n,ni,nj->ij", quad, x, x)
        remaining -= n
    sigma_hat = acc / n_samples - hch

    gram = np.array(
        [
            [np.sum(basis1 * basis1), np.sum(basis1 * basis2)],
            [np.sum(basis2 * basis1), np.sum(basis2 * basis2)],
        ]
    )
    rhs = np.array([np.sum(basis1 * sigma_hat), np.sum(basis2 * sigma_hat)])
    sv = np.linalg.svd(gram, compute_uv=False)
    degenerate = bool(sv[-1] <= 1e-12 * max(sv[0], 1e-300))
    coef, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    fit = coef[0] * basis1 + coef[1] * basis2
    residual = float(np.linalg.norm(sigma_hat - fit))
    return SigmaFit(float(coef[0]), float(coef[1]), residual, degenerate)
