"""Exact expected-loss dynamics under mini-batch noise.

The second moments of the state (delta-w, u) close on themselves once the
sampling-noise covariance is replaced by the spectrally expressible form

    Sigma_SE(C) = tau1 * Tr(HC) H - tau2 * H C H.

Only the H-diagonal part matters for the expected loss, so the state is a
collection of symmetric (M+1)x(M+1) blocks Z_k, one per eigenvalue, evolving
as

    Z_k <- S_k Z_k S_k^T + [ s * lam_k - (tau2/|B|) lam_k^2 g_k ] * v v^T,
    g_k = e^T Z_k e,   s = (tau1/|B|) sum_j lam_j g_j,

with e = (1, a), v = (-alpha, c) and S_k the per-eigenvalue step matrix.
The expected loss is L_t = 0.5 * sum_k lam_k (Z_k)_{00}.  The tau1 = tau2 = 0
case coincides with the noiseless first-moment dynamics, also provided here.

Everything is plain float64 numpy; the cross-eigenvalue reduction uses
numpy's pairwise summation in a fixed order, so repeated runs are bitwise
identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .algorithm import MemoryParams, Schedule, s_matrix
from .spectrum import Spectrum

__all__ = [
    "SEParams",
    "MomentState",
    "LossTrajectory",
    "init_state",
    "step",
    "run",
    "run_noiseless",
    "sigma_se",
]

# block entries beyond this multiple of the initial loss flag divergence
DIVERGENCE_FACTOR = 1e12

ENGINES = ("evolution", "expansion", "montecarlo", "noiseless", "adiabatic")


@dataclass(frozen=True)
class SEParams:
    """Noise-model parameters (tau1, tau2) and the batch size."""

    tau1: float
    tau2: float
    batch_size: int = 1

    def __post_init__(self):
        if int(self.batch_size) < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        object.__setattr__(self, "batch_size", int(self.batch_size))

    @property
    def nonneg_propagators(self) -> bool:
        """True when tau1 >= 0 >= tau2, which keeps all propagators >= 0."""
        return self.tau1 >= 0.0 and self.tau2 <= 0.0


@dataclass(eq=False)
class MomentState:
    """Per-eigenvalue symmetric second-moment blocks plus a step counter."""

    blocks: np.ndarray  # (K, M+1, M+1)
    lambdas: np.ndarray  # (K,) matching eigenvalues, descending
    step: int = 0

    @property
    def memory(self) -> int:
        return self.blocks.shape[1] - 1

    def loss(self) -> float:
        """Expected loss 0.5 * sum_k lambda_k (Z_k)_00 of this state."""
        return _loss_of_blocks(self.blocks, self.lambdas)


@dataclass(frozen=True, eq=False)
class LossTrajectory:
    """Time-indexed expected losses with provenance metadata."""

    times: np.ndarray
    values: np.ndarray
    engine: str
    diverged_at: Optional[int] = None
    fingerprint: Optional[dict] = None

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}; expected {ENGINES}")
        times = np.asarray(self.times, dtype=int)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape:
            raise ValueError("times and values must have matching shapes")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "loss", "engine", "diverged_flag"])
            for t, loss in zip(self.times, self.values):
                flag = int(self.diverged_at is not None and t >= self.diverged_at)
                writer.writerow([int(t), repr(float(loss)), self.engine, flag])

    @classmethod
    def from_csv(cls, path) -> "LossTrajectory":
        times, values, engines, flags = [], [], [], []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if [h.strip() for h in header] != ["t", "loss", "engine", "diverged_flag"]:
                raise ValueError(f"unexpected trajectory CSV header: {header}")
            for row in reader:
                if not row:
                    continue
                times.append(int(row[0]))
                values.append(float(row[1]))
                engines.append(row[2])
                flags.append(int(row[3]))
        diverged_at = None
        for t, flag in zip(times, flags):
            if flag:
                diverged_at = t
                break
        engine = engines[0] if engines else "evolution"
        return cls(np.array(times), np.array(values), engine, diverged_at)


def init_state(s: Spectrum, memory: int) -> MomentState:
    """Blocks Z_k = c_k^2 * e_00 for the start w_0 = 0, u_0 = 0."""
    blocks = np.zeros((s.size, memory + 1, memory + 1))
    blocks[:, 0, 0] = s.coeffs_sq
    return MomentState(blocks, s.lambdas, step=0)


def _vectors(params: MemoryParams):
    probe = np.concatenate(([1.0], params.a))
    update = np.concatenate(([-params.alpha], params.c))
    return probe, update


def _s_matrices(params: MemoryParams, lambdas: np.ndarray) -> np.ndarray:
    probe, update = _vectors(params)
    base = s_matrix(params, 0.0)
    return base[None, :, :] + lambdas[:, None, None] * np.outer(update, probe)


def _step_blocks(blocks, lambdas, params, se, s_mats):
    """One moment-evolution step on the (K, M+1, M+1) block stack."""
    probe, update = _vectors(params)
    g = np.einsum("kij,i,j->k", blocks, probe, probe)
    s_scalar = se.tau1 / se.batch_size * float(np.add.reduce((lambdas * g)[::-1]))
    weight = s_scalar * lambdas - (se.tau2 / se.batch_size) * lambdas**2 * g
    new = np.matmul(np.matmul(s_mats, blocks), s_mats.transpose(0, 2, 1))
    new += weight[:, None, None] * np.outer(update, update)[None, :, :]
    return 0.5 * (new + new.transpose(0, 2, 1))


def step(state: MomentState, params: MemoryParams, se: SEParams) -> MomentState:
    """Advance the moment state by one iteration."""
    if state.blocks.shape[1] != params.memory + 1:
        raise ValueError(
            f"state memory {state.blocks.shape[1] - 1} does not match "
            f"params memory {params.memory}"
        )
    s_mats = _s_matrices(params, state.lambdas)
    with np.errstate(over="ignore", invalid="ignore"):
        new = _step_blocks(state.blocks, state.lambdas, params, se, s_mats)
    return MomentState(new, state.lambdas, step=state.step + 1)


def _loss_of_blocks(blocks, lambdas) -> float:
    return 0.5 * float(np.add.reduce((lambdas * blocks[:, 0, 0])[::-1]))


def _record_times(T: int, record: str) -> np.ndarray:
    if record == "all":
        return np.arange(T + 1)
    if record == "geometric":
        ts = {0, T}
        t, n = 1, 0
        while t <= T:
            ts.add(t)
            n += 1
            t = int(np.ceil(1.02**n))
        return np.array(sorted(ts))
    raise ValueError(f"record must be 'all' or 'geometric', got {record!r}")


def run(
    s: Spectrum,
    sched: Schedule,
    se: SEParams,
    T: int,
    record: str = "all",
) -> LossTrajectory:
    """Deterministic expected-loss trajectory L_0 .. L_T.

    Divergence (any block entry non-finite or larger than 1e12 * L_0) is
    flagged with the step at which it occurred and iteration stops there.
    """
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    lambdas = s.lambdas
    blocks = init_state(s, sched.memory).blocks
    l0 = _loss_of_blocks(blocks, lambdas)
    threshold = DIVERGENCE_FACTOR * max(l0, np.finfo(float).tiny)

    times = _record_times(T, record)
    recorded = {int(t): i for i, t in enumerate(times)}
    values = np.full(times.shape, np.nan)
    if 0 in recorded:
        values[recorded[0]] = l0

    params0 = sched.params(0)
    s_mats = _s_matrices(params0, lambdas) if sched.stationary else None
    diverged_at = None
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            params = params0 if sched.stationary else sched.params(t)
            mats = s_mats if sched.stationary else _s_matrices(params, lambdas)
            blocks = _step_blocks(blocks, lambdas, params, se, mats)
            peak = float(np.max(np.abs(blocks)))
            bad = not np.isfinite(peak) or peak > threshold
            if (t + 1) in recorded or bad:
                loss = _loss_of_blocks(blocks, lambdas)
                idx = recorded.get(t + 1)
                if idx is not None:
                    values[idx] = loss
            if bad:
                diverged_at = t + 1
                keep = times <= diverged_at
                if not np.any(times == diverged_at):
                    times = np.append(times[keep], diverged_at)
                    values = np.append(values[keep], loss)
                else:
                    times, values = times[keep], values[keep]
                break

    fingerprint = {
        "schedule": sched.name,
        "preset": sched.preset,
        "tau1": se.tau1,
        "tau2": se.tau2,
        "batch_size": se.batch_size,
        "K": s.size,
        "T": T,
    }
    return LossTrajectory(times, values, "evolution", diverged_at, fingerprint)


def run_noiseless(s: Spectrum, sched: Schedule, T: int, record: str = "all") -> LossTrajectory:
    """First-moment (full-batch) dynamics: per-eigenvalue (M+1)-vectors."""
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    lambdas = s.lambdas
    m = sched.memory
    r = np.zeros((s.size, m + 1))
    r[:, 0] = -np.sqrt(s.coeffs_sq)
    l0 = 0.5 * float(np.add.reduce((lambdas * r[:, 0] ** 2)[::-1]))
    threshold = DIVERGENCE_FACTOR * max(l0, np.finfo(float).tiny)

    times = _record_times(T, record)
    recorded = {int(t): i for i, t in enumerate(times)}
    values = np.full(times.shape, np.nan)
    if 0 in recorded:
        values[recorded[0]] = l0

    params0 = sched.params(0)
    s_mats0 = _s_matrices(params0, lambdas) if sched.stationary else None
    diverged_at = None
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            mats = s_mats0 if sched.stationary else _s_matrices(sched.params(t), lambdas)
            r = np.einsum("kij,kj->ki", mats, r)
            peak = float(np.max(np.abs(r)))
            bad = not np.isfinite(peak) or peak**2 > threshold
            loss = 0.5 * float(np.add.reduce((lambdas * r[:, 0] ** 2)[::-1]))
            idx = recorded.get(t + 1)
            if idx is not None:
                values[idx] = loss
            if bad:
                diverged_at = t + 1
                keep = times <= diverged_at
                if not np.any(times == diverged_at):
                    times = np.append(times[keep], diverged_at)
                    values = np.append(values[keep], loss)
                else:
                    times, values = times[keep], values[keep]
                break

    fingerprint = {"schedule": sched.name, "preset": sched.preset, "K": s.size, "T": T}
    return LossTrajectory(times, values, "noiseless", diverged_at, fingerprint)


def sigma_se(C: np.ndarray, H: np.ndarray, se: SEParams) -> np.ndarray:
    """Literal tau1 * Tr(HC) H - tau2 * H C H on explicit matrices."""
    C = np.asarray(C, dtype=float)
    H = np.asarray(H, dtype=float)
    if C.shape != H.shape or C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"C and H must be square with equal shape, got {C.shape}, {H.shape}")
    return se.tau1 * np.trace(H @ C) * H - se.tau2 * (H @ C @ H)
