"""Signal/noise propagators and the combinatorial loss expansion.

For a stationary algorithm, let A_lambda be the per-eigenvalue linear map
on (M+1)x(M+1) moment blocks,

    A_lambda Z = S_lambda Z S_lambda^T
                 - (tau2/|B|) lambda^2 (e^T Z e) v v^T,

with e = (1, a) and v = (-alpha, c).  The scalar sequences

    V_t  = sum_k lam_k c_k^2 <e_00,    A^{t-1}_k e_00>
    V'_t = sum_k lam_k c_k^2 <e e^T,   A^{t-1}_k e_00>
    U_t  = (tau1/|B|) sum_k lam_k^2 <e_00,  A^{t-1}_k v v^T>
    U'_t = (tau1/|B|) sum_k lam_k^2 <e e^T, A^{t-1}_k v v^T>

reconstruct the expected loss exactly through a causal convolution: with
L'_t the all-primed variant,

    L'_t = V'_{t+1}/2 + sum_{s<t} U'_{t-s} L'_s,
    L_t  = V_{t+1}/2  + sum_{s<t} U_{t-s}  L'_s.

When a = 0 the primed and unprimed sequences coincide.  The partial sums
U_Sigma etc. control convergence (U'_Sigma < 1) and the constants in the
power-law loss asymptotics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .algorithm import MemoryParams, Schedule, effective_learning_rate
from .evolution import LossTrajectory, SEParams, _s_matrices, _vectors
from .spectrum import PowerLawSpec, Spectrum, build_power_law

__all__ = [
    "PropagatorSeries",
    "PropagatorSums",
    "compute_propagators",
    "compute_propagators_nonstationary",
    "loss_from_expansion",
    "propagator_sums",
    "AsymptoticPredictions",
    "asymptotic_predictions",
]


def _sum_ascending(values: np.ndarray) -> float:
    return float(np.add.reduce(values[::-1]))


@dataclass(eq=False)
class PropagatorSeries:
    """Propagator sequences; array index i holds the t = i + 1 value."""

    V: np.ndarray
    V_prime: np.ndarray
    U: np.ndarray
    U_prime: np.ndarray
    fingerprint: Optional[dict] = None

    @property
    def length(self) -> int:
        return self.V.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "V", "V_prime", "U", "U_prime"])
            for i in range(self.length):
                writer.writerow(
                    [
                        i + 1,
                        repr(float(self.V[i])),
                        repr(float(self.V_prime[i])),
                        repr(float(self.U[i])),
                        repr(float(self.U_prime[i])),
                    ]
                )


def compute_propagators(
    s: Spectrum, params: MemoryParams, se: SEParams, T: int
) -> PropagatorSeries:
    """Iterate A_lambda from the two seed blocks and take inner products.

    Cost is O(K * T * (M+1)^3).  Exponential growth of unstable
    configurations is recorded as-is, not trapped.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    lambdas = s.lambdas
    probe, update = _vectors(params)
    s_mats = _s_matrices(params, lambdas)
    s_mats_t = s_mats.transpose(0, 2, 1)
    vvt = np.outer(update, update)
    noise_scale = se.tau1 / se.batch_size
    tau2_scale = se.tau2 / se.batch_size

    k = s.size
    dim = params.memory + 1
    z_sig = np.zeros((k, dim, dim))
    z_sig[:, 0, 0] = 1.0
    z_noise = np.tile(vvt, (k, 1, 1))

    w_sig = lambdas * s.coeffs_sq
    w_noise = noise_scale * lambdas**2

    V = np.empty(T)
    Vp = np.empty(T)
    U = np.empty(T)
    Up = np.empty(T)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(T):
            V[i] = _sum_ascending(w_sig * z_sig[:, 0, 0])
            Vp[i] = _sum_ascending(
                w_sig * np.einsum("kij,i,j->k", z_sig, probe, probe)
            )
            U[i] = _sum_ascending(w_noise * z_noise[:, 0, 0])
            Up[i] = _sum_ascending(
                w_noise * np.einsum("kij,i,j->k", z_noise, probe, probe)
            )
            if i == T - 1:
                break
            for z in (z_sig, z_noise):
                g = np.einsum("kij,i,j->k", z, probe, probe)
                nxt = np.matmul(np.matmul(s_mats, z), s_mats_t)
                nxt -= (tau2_scale * lambdas**2 * g)[:, None, None] * vvt[None]
                z[...] = 0.5 * (nxt + nxt.transpose(0, 2, 1))

    fingerprint = {
        "K": s.size,
        "T": T,
        "tau1": se.tau1,
        "tau2": se.tau2,
        "batch_size": se.batch_size,
        "memory": params.memory,
    }
    return PropagatorSeries(V, Vp, U, Up, fingerprint)


def compute_propagators_nonstationary(
    s: Spectrum, sched: Schedule, se: SEParams, t_end: int
):
    """Propagators with fixed right endpoint ``t_end`` for a schedule.

    Returns a dict with arrays ``U[s]``/``U_prime[s]`` holding the
    two-time propagators ending at t_end and starting at s = 1..t_end-1,
    plus the scalars ``V``/``V_prime`` at t_end.  Implemented as one
    backward pass of the adjoint maps

        A^T W = S^T W S - (tau2/|B|) lambda^2 (v^T W v) e e^T.
    """
    if t_end < 1:
        raise ValueError(f"t_end must be >= 1, got {t_end}")
    lambdas = s.lambdas
    k = lambdas.size
    probe_end, _ = _vectors(sched.params(t_end))
    dim = sched.memory + 1
    tau2_scale = se.tau2 / se.batch_size
    noise_scale = se.tau1 / se.batch_size
    w_noise = noise_scale * lambdas**2
    w_sig = lambdas * s.coeffs_sq

    w_unprimed = np.zeros((k, dim, dim))
    w_unprimed[:, 0, 0] = 1.0
    w_primed = np.tile(np.outer(probe_end, probe_end), (k, 1, 1))

    U = np.full(t_end, np.nan)
    Up = np.full(t_end, np.nan)
    with np.errstate(over="ignore", invalid="ignore"):
        for src in range(t_end - 1, -1, -1):
            prm = sched.params(src)
            probe, update = _vectors(prm)
            if src >= 1:
                quad_p = np.einsum("kij,i,j->k", w_primed, update, update)
                quad_u = np.einsum("kij,i,j->k", w_unprimed, update, update)
                Up[src] = _sum_ascending(w_noise * quad_p)
                U[src] = _sum_ascending(w_noise * quad_u)
            if src == 0:
                break
            # move the left end of the interval one step down: W <- A_src^T W
            mats = _s_matrices(prm, lambdas)
            mats_t = mats.transpose(0, 2, 1)
            eet = np.outer(probe, probe)
            for w in (w_primed, w_unprimed):
                g = np.einsum("kij,i,j->k", w, update, update)
                nxt = np.matmul(np.matmul(mats_t, w), mats)
                nxt -= (tau2_scale * lambdas**2 * g)[:, None, None] * eet[None]
                w[...] = 0.5 * (nxt + nxt.transpose(0, 2, 1))

    V_prime = _sum_ascending(w_sig * w_primed[:, 0, 0])
    V = _sum_ascending(w_sig * w_unprimed[:, 0, 0])
    return {"U": U, "U_prime": Up, "V": V, "V_prime": V_prime, "t_end": t_end}


def loss_from_expansion(series: PropagatorSeries, T: int) -> LossTrajectory:
    """Rebuild L_0..L_T from the propagators by the causal convolution."""
    if series.length < T + 1:
        raise ValueError(
            f"series of length {series.length} too short for T = {T} "
            f"(need at least T + 1)"
        )
    V, Vp = series.V, series.V_prime
    U, Up = series.U, series.U_prime
    l_primed = np.empty(T + 1)
    l = np.empty(T + 1)
    l_primed[0] = 0.5 * Vp[0]
    l[0] = 0.5 * V[0]
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, T + 1):
            l_primed[t] = 0.5 * Vp[t] + float(np.dot(Up[t - 1 :: -1], l_primed[:t]))
            l[t] = 0.5 * V[t] + float(np.dot(U[t - 1 :: -1], l_primed[:t]))
    return LossTrajectory(
        np.arange(T + 1), l, "expansion", None, dict(series.fingerprint or {})
    )


@dataclass(frozen=True)
class PropagatorSums:
    """Truncated (optionally tail-corrected) propagator mass."""

    U_Sigma: float
    U_prime_Sigma: float
    V_Sigma: float
    V_prime_Sigma: float
    truncation: int
    tail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "U_Sigma": self.U_Sigma,
            "U_prime_Sigma": self.U_prime_Sigma,
            "V_Sigma": self.V_Sigma,
            "V_prime_Sigma": self.V_prime_Sigma,
            "truncation": self.truncation,
            "tail": dict(self.tail),
        }


def _tail_corrected_sum(arr: np.ndarray, mode: str) -> tuple[float, str]:
    total = float(np.add.reduce(arr))
    if mode == "truncate" or arr.size < 12:
        return total, "truncate"
    last = arr[-11:]
    if np.any(last <= 0) or not np.all(np.isfinite(last)):
        return total, "truncate"
    ratios = last[1:] / last[:-1]
    r = float(ratios[-1])
    stable = float(np.max(ratios) / np.min(ratios)) < 1.01
    if stable and 0.0 < r < 1.0:
        return total + float(arr[-1]) * r / (1.0 - r), "geometric"
    return total, "truncate"


def propagator_sums(series: PropagatorSeries, tail: str = "truncate") -> PropagatorSums:
    """Partial sums of all four propagator sequences.

    ``tail="geometric"`` adds U_T * r / (1 - r) with r estimated from the
    last ratio, but only when the last 10 ratios are stable within 1% and
    0 < r < 1; otherwise that series falls back to plain truncation.
    """
    if tail not in ("truncate", "geometric"):
        raise ValueError(f"tail must be 'truncate' or 'geometric', got {tail!r}")
    out = {}
    modes = {}
    for name, arr in [
        ("U_Sigma", series.U),
        ("U_prime_Sigma", series.U_prime),
        ("V_Sigma", series.V),
        ("V_prime_Sigma", series.V_prime),
    ]:
        out[name], modes[name] = _tail_corrected_sum(np.asarray(arr, float), tail)
    return PropagatorSums(truncation=series.length, tail=modes, **out)


@dataclass(frozen=True)
class AsymptoticPredictions:
    """Power-law predictions for the propagators and the loss."""

    C_V: float
    xi_V: float
    C_U: float
    xi_U: float
    regime: str  # "signal-dominated" | "noise-dominated"
    alpha_eff: float
    loss_constant: float
    loss_exponent: float
    sums: PropagatorSums
    stable: bool

    def as_dict(self) -> dict:
        d = {
            "C_V": self.C_V,
            "xi_V": self.xi_V,
            "C_U": self.C_U,
            "xi_U": self.xi_U,
            "regime": self.regime,
            "alpha_eff": self.alpha_eff,
            "loss_constant": self.loss_constant,
            "loss_exponent": self.loss_exponent,
            "stable": self.stable,
            "sums": self.sums.as_dict(),
        }
        return d


def predicted_v(pl: PowerLawSpec, alpha_eff: float, t) -> np.ndarray:
    """Leading asymptotic Q Gamma(zeta+1) (2 alpha_eff t)^-zeta of V_t."""
    t = np.asarray(t, dtype=float)
    return pl.Q * math.gamma(pl.zeta + 1.0) * (2.0 * alpha_eff * t) ** (-pl.zeta)


def predicted_u(pl: PowerLawSpec, alpha_eff: float, se: SEParams, t) -> np.ndarray:
    """Leading asymptotic of U_t: power 1/nu - 2 with the stated constant."""
    t = np.asarray(t, dtype=float)
    amp = (
        (alpha_eff * pl.big_lambda) ** (1.0 / pl.nu)
        * se.tau1
        * math.gamma(2.0 - 1.0 / pl.nu)
        / (se.batch_size * pl.nu)
    )
    return amp * (2.0 * t) ** (1.0 / pl.nu - 2.0)


def asymptotic_predictions(
    pl: PowerLawSpec,
    params: MemoryParams,
    se: SEParams,
    sums_T: int = 2000,
    tail: str = "truncate",
    spectrum: Optional[Spectrum] = None,
) -> AsymptoticPredictions:
    """Predicted propagator laws, regime and loss constant for a power law.

    The finite propagator sums entering the constants are computed by
    truncation at ``sums_T`` (reported in the record); pass a prebuilt
    ``spectrum`` to avoid rebuilding it.
    """
    if pl.nu <= 0.5:
        raise ValueError(
            f"nu = {pl.nu} <= 1/2 means sum(lambda_k^2) diverges: immediate divergence"
        )
    alpha_eff = effective_learning_rate(params)
    c_v = float(predicted_v(pl, alpha_eff, 1.0) * 1.0)  # t^-zeta coefficient
    xi_v = pl.zeta
    c_u = float(predicted_u(pl, alpha_eff, se, 1.0))
    xi_u = 2.0 - 1.0 / pl.nu
    regime = "signal-dominated" if pl.zeta < xi_u else "noise-dominated"

    if spectrum is None:
        spectrum = build_power_law(pl)
    series = compute_propagators(spectrum, params, se, sums_T)
    sums = propagator_sums(series, tail=tail)

    stable = sums.U_prime_Sigma < 1.0
    general_factor = 1.0 - sums.U_prime_Sigma + sums.U_Sigma
    if stable:
        if regime == "signal-dominated":
            loss_constant = general_factor * c_v / (2.0 * (1.0 - sums.U_prime_Sigma))
            loss_exponent = xi_v
        else:
            loss_constant = (
                general_factor
                * sums.V_prime_Sigma
                * c_u
                / (2.0 * (1.0 - sums.U_prime_Sigma) ** 2)
            )
            loss_exponent = xi_u
    else:
        loss_constant = math.inf
        loss_exponent = math.nan
    return AsymptoticPredictions(
        C_V=c_v,
        xi_V=xi_v,
        C_U=c_u,
        xi_U=xi_u,
        regime=regime,
        alpha_eff=alpha_eff,
        loss_constant=loss_constant,
        loss_exponent=loss_exponent,
        sums=sums,
        stable=stable,
    )
