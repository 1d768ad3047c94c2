"""Stability analysis of memory-1 algorithms and spectral diagnostics.

Any memory-1 algorithm is characterized, up to basis changes of the memory,
by the triplet (delta, alpha_eff, q0) with delta = 1 - D and recurrence
coefficients q1 = -q0 - delta*alpha_eff.  This module provides:

  * the strict-stability region of the per-eigenvalue step matrices,
      0 < delta < 2,  -q0 < delta/lam_max,  0 < delta*alpha_eff
                                            < (4 - 2*delta)/lam_max - 2*q0,
  * the eigenvalue locus (non-real eigenvalues of S_lambda lie on the
    circle |q1 x + q0|^2 = delta^2 alpha_eff (alpha_eff + q1)),
  * the closed-form per-eigenvalue noise response

      R_lam = (2 lam q0^2 + (lam q0 + 2 - delta) delta alpha_eff)
              / (lam (delta + lam q0) (4 - 2 delta - lam (2 q0 + delta alpha_eff)))

    valid for strictly stable S_lambda at tau2 = 0, whose lam^2-weighted
    spectral sum is the mini-batch stability mass U'_Sigma,
  * finite-spectrum surrogates of the accelerated-region criteria,
  * the small-lambda slope of the dominant eigenvalue of A_lambda
    (equals -2 alpha_eff), and
  * the adiabatic rate predictor for the AM1 schedule.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .algorithm import (
    MemoryParams,
    MultistepCoeffs,
    Schedule,
    from_multistep,
    s_matrix,
    to_multistep,
)
from .evolution import LossTrajectory
from .spectrum import Spectrum, power_law_spec_of

__all__ = [
    "Memory1Point",
    "StabilityVerdict",
    "strict_stability",
    "EigenvalueLocus",
    "eigenvalue_locus",
    "r_lambda",
    "NoiseStabilityResult",
    "noise_stability_sum",
    "ConditionReport",
    "accelerated_region_check",
    "a_matrix",
    "dominant_eigenvalue",
    "leading_eigenvalue_slope",
    "AdiabaticResult",
    "adiabatic_v",
    "memory1_point_of",
]


@dataclass(frozen=True)
class Memory1Point:
    """The (delta, alpha_eff, q0) triplet that fixes memory-1 behaviour."""

    delta: float
    alpha_eff: float
    q0: float

    def __post_init__(self):
        vals = (self.delta, self.alpha_eff, self.q0)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"entries must be finite, got {vals}")

    @property
    def q1(self) -> float:
        return -self.q0 - self.delta * self.alpha_eff

    @property
    def beta(self) -> float:
        return 1.0 - self.delta

    def to_coeffs(self) -> MultistepCoeffs:
        return MultistepCoeffs(
            p=[-(1.0 - self.delta), 2.0 - self.delta], q=[self.q0, self.q1]
        )

    def to_params(self) -> MemoryParams:
        """Canonical (a=0, b=e1, companion-D) realization of the triplet."""
        return from_multistep(self.to_coeffs())


def memory1_point_of(x) -> Memory1Point:
    """Triplet of a memory-1 algorithm given params or coefficients."""
    coeffs = to_multistep(x) if isinstance(x, MemoryParams) else x
    if coeffs.memory != 1:
        raise ValueError(f"memory-1 input required, got memory {coeffs.memory}")
    delta = 2.0 - float(coeffs.p[1])
    q0, q1 = float(coeffs.q[0]), float(coeffs.q[1])
    if delta == 0.0:
        raise ValueError("delta = 0: effective learning rate undefined")
    return Memory1Point(delta=delta, alpha_eff=-(q0 + q1) / delta, q0=q0)


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    reason: Optional[str]
    checks: tuple = ()

    def __bool__(self) -> bool:
        return self.stable


def strict_stability(p: Memory1Point, lambda_max: float) -> StabilityVerdict:
    """Strict stability of D and of S_lambda for all 0 < lambda <= lambda_max.

    Evaluates the four inequalities in order and reports the first violated
    one.
    """
    if not (lambda_max > 0):
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")
    d, ae, q0 = p.delta, p.alpha_eff, p.q0
    checks = (
        ("D strictly stable: 0 < delta < 2", 0.0 < d < 2.0, d, (0.0, 2.0)),
        ("-q0 < delta/lambda_max", -q0 < d / lambda_max, -q0, d / lambda_max),
        ("delta*alpha_eff > 0", d * ae > 0.0, d * ae, 0.0),
        (
            "delta*alpha_eff < (4-2*delta)/lambda_max - 2*q0",
            d * ae < (4.0 - 2.0 * d) / lambda_max - 2.0 * q0,
            d * ae,
            (4.0 - 2.0 * d) / lambda_max - 2.0 * q0,
        ),
    )
    for name, ok, *_ in checks:
        if not ok:
            return StabilityVerdict(False, name, checks)
    return StabilityVerdict(True, None, checks)


@dataclass(frozen=True)
class EigenvalueLocus:
    """Per-lambda eigenvalue pairs of S_lambda and their geometric support."""

    lambdas: np.ndarray
    roots: np.ndarray  # (n, 2) complex
    is_real: np.ndarray  # (n,) bool
    kind: str  # "circle" | "line" | "all-real"
    center: Optional[float] = None
    radius: Optional[float] = None
    line_re: Optional[float] = None


def eigenvalue_locus(p: Memory1Point, lambdas) -> EigenvalueLocus:
    """Closed-form eigenvalues x of S_lambda over a grid of lambdas.

    Roots of x^2 - x (2 - delta - lam (delta alpha_eff + q0)) + 1 - delta
    - lam q0.  Non-real roots lie on a circle centered at -q0/q1 (on a
    vertical line when q1 = 0).
    """
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    d, ae, q0, q1 = p.delta, p.alpha_eff, p.q0, p.q1
    trace = 2.0 - d - lambdas * (d * ae + q0)
    det = 1.0 - d - lambdas * q0
    disc = trace**2 - 4.0 * det
    root = np.sqrt(disc.astype(complex))
    roots = np.stack([(trace + root) / 2.0, (trace - root) / 2.0], axis=1)
    is_real = disc >= 0

    if q1 == 0.0:
        return EigenvalueLocus(
            lambdas, roots, is_real, "line", line_re=1.0 - d / 2.0
        )
    if q1 <= -ae:
        return EigenvalueLocus(lambdas, roots, is_real, "all-real")
    center = -q0 / q1
    radius = abs(d * math.sqrt(ae * (ae + q1)) / q1)
    return EigenvalueLocus(lambdas, roots, is_real, "circle", center, radius)


def r_lambda(p: Memory1Point, lam: float) -> float:
    """Closed-form noise response sum at eigenvalue ``lam`` (tau2 = 0).

    Equals sum_t <e e^T, A_lam^t v v^T> for the strictly stable case;
    raises at or beyond the stability boundary where the expression has a
    pole.
    """
    verdict = strict_stability(p, lam)
    if not verdict.stable:
        raise ValueError(f"unstable at lambda = {lam}: {verdict.reason}")
    d, ae, q0 = p.delta, p.alpha_eff, p.q0
    numer = 2.0 * lam * q0**2 + (lam * q0 + 2.0 - d) * d * ae
    denom = lam * (d + lam * q0) * (4.0 - 2.0 * d - lam * (2.0 * q0 + d * ae))
    if denom <= 0.0:
        raise ValueError(f"pole: denominator {denom} <= 0 at lambda = {lam}")
    return numer / denom


@dataclass(frozen=True)
class NoiseStabilityResult:
    """U'_Sigma = (tau1/|B|) sum_k lam_k^2 R_k with its three-region split."""

    value: float
    lam1_cr: float
    lam2_cr: float
    region_sums: tuple  # (below lam1, between, above lam2)
    region_counts: tuple

    def as_dict(self) -> dict:
        return {
            "U_prime_Sigma": self.value,
            "lam1_cr": self.lam1_cr,
            "lam2_cr": self.lam2_cr,
            "region_sums": list(self.region_sums),
            "region_counts": list(self.region_counts),
        }


def noise_stability_sum(
    s: Spectrum, p: Memory1Point, tau1: float, batch_size: int
) -> NoiseStabilityResult:
    """Closed-form mini-batch stability mass over a whole spectrum.

    Every eigenvalue must be strictly inside the stability region; the
    error names the first offending (1-based) index otherwise.
    """
    verdict = strict_stability(p, s.lambda_max)
    if not verdict.stable:
        # conditions are monotone in lambda, so the largest eigenvalues fail first
        for k, lam in enumerate(s.lambdas):
            if not strict_stability(p, lam).stable:
                raise ValueError(
                    f"eigenvalue k={k + 1} (lambda={lam}) violates stability: "
                    f"{strict_stability(p, lam).reason}"
                )
        raise ValueError(f"unstable point: {verdict.reason}")

    d, ae, q0 = p.delta, p.alpha_eff, p.q0
    lam = s.lambdas
    numer = 2.0 * lam * q0**2 + (lam * q0 + 2.0 - d) * d * ae
    denom = lam * (d + lam * q0) * (4.0 - 2.0 * d - lam * (2.0 * q0 + d * ae))
    contrib = tau1 / batch_size * lam**2 * (numer / denom)
    total = float(np.add.reduce(contrib[::-1]))

    if q0 > 0:
        lam1, lam2 = d / q0, d * ae / q0**2
    else:
        lam1 = lam2 = math.nan
    if math.isnan(lam1):
        masks = [np.zeros(lam.size, bool), np.zeros(lam.size, bool), np.ones(lam.size, bool)]
    else:
        masks = [lam < lam1, (lam >= lam1) & (lam < lam2), lam >= lam2]
    sums = tuple(float(np.add.reduce(contrib[m][::-1])) for m in masks)
    counts = tuple(int(np.count_nonzero(m)) for m in masks)
    return NoiseStabilityResult(total, lam1, lam2, sums, counts)


@dataclass(frozen=True)
class ConditionReport:
    name: str
    passed: Optional[bool]  # None = reported only
    lhs: float
    rhs: float


def accelerated_region_check(
    s: Spectrum, p: Memory1Point, slack: float = 10.0, epsilon: Optional[float] = None
) -> list[ConditionReport]:
    """Finite-spectrum surrogates of the stable-acceleration conditions.

    The asymptotic O(.) conditions are operationalized with an explicit
    slack constant (both sides of each inequality are reported):

      1. delta small           -- reported, not thresholded
      2. q0 > 0
      3. sum_{lam_k < delta/q0} lam_k       <= slack / alpha_eff
      4. #{k: delta/q0 < lam_k < delta*alpha_eff/q0^2}
                                            <= slack * q0 / (delta*alpha_eff)

    The report also states (not thresholded) how many eigenvalues sit
    within ``epsilon`` of the spectral edge, where the surrogates degrade;
    epsilon defaults to 0.01 * lambda_max.
    """
    d, ae, q0 = p.delta, p.alpha_eff, p.q0
    if epsilon is None:
        epsilon = 0.01 * s.lambda_max
    near_edge = int(np.count_nonzero(s.lambdas > s.lambda_max - epsilon))
    out = [
        ConditionReport("delta_small", None, d, math.nan),
        ConditionReport("eigenvalues_within_eps_of_edge", None, near_edge, epsilon),
    ]
    out.append(ConditionReport("q0_positive", q0 > 0, q0, 0.0))
    if q0 > 0:
        lam1, lam2 = d / q0, d * ae / q0**2
        lam = s.lambdas
        tail = float(np.add.reduce(lam[lam < lam1][::-1]))
        rhs3 = slack / ae
        out.append(ConditionReport("small_lambda_tail_sum", tail <= rhs3, tail, rhs3))
        count = int(np.count_nonzero((lam > lam1) & (lam < lam2)))
        rhs4 = slack * q0 / (d * ae)
        out.append(ConditionReport("middle_region_count", count <= rhs4, count, rhs4))
    else:
        out.append(
            ConditionReport("small_lambda_tail_sum", False, math.nan, math.nan)
        )
        out.append(
            ConditionReport("middle_region_count", False, math.nan, math.nan)
        )
    return out


def a_matrix(params: MemoryParams, lam: float, tau2_over_b: float = 0.0) -> np.ndarray:
    """Explicit (M+1)^2 x (M+1)^2 matrix of the moment map A_lambda.

    Row-major flattening: A(Z) = S Z S^T - tau2_over_b * lam^2 (e^T Z e) v v^T
    becomes kron(S, S) - tau2_over_b*lam^2 * vec(v v^T) vec(e e^T)^T.
    """
    s = s_matrix(params, lam)
    mat = np.kron(s, s)
    if tau2_over_b != 0.0:
        probe = np.concatenate(([1.0], params.a))
        update = np.concatenate(([-params.alpha], params.c))
        mat -= (
            tau2_over_b
            * lam**2
            * np.outer(np.outer(update, update).ravel(), np.outer(probe, probe).ravel())
        )
    return mat


def dominant_eigenvalue(
    mat: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000
) -> complex:
    """Largest-|.| eigenvalue by power iteration, dense eigensolve as fallback."""
    n = mat.shape[0]
    x = np.full(n, 1.0 / math.sqrt(n))
    x[0] += 1e-3  # break symmetry
    x /= np.linalg.norm(x)
    mu = 0.0
    for _ in range(max_iter):
        y = mat @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0 + 0.0j
        mu = float(x @ y)
        x_new = y / norm
        if np.linalg.norm(mat @ x_new - mu * x_new) <= tol * max(1.0, abs(mu)):
            return complex(mu)
        x = x_new
    eigs = np.linalg.eigvals(mat)
    return complex(eigs[np.argmax(np.abs(eigs))])


def leading_eigenvalue_slope(params: MemoryParams) -> float:
    """d(mu_A)/d(lambda) at lambda -> 0+ (theory: -2 * alpha_eff).

    Richardson extrapolation of (mu(lam) - 1)/lam over lam in
    {1e-4, 5e-5, 2.5e-5}, using the dominant eigenvalue of the explicit
    A_lambda matrix at tau2 = 0.
    """
    lams = (1e-4, 5e-5, 2.5e-5)
    f = [
        (dominant_eigenvalue(a_matrix(params, lam)).real - 1.0) / lam for lam in lams
    ]
    return (8.0 * f[2] - 6.0 * f[1] + f[0]) / 3.0


@dataclass(frozen=True)
class AdiabaticResult:
    trajectory: LossTrajectory
    predicted_exponent: Optional[float]


def adiabatic_v(s: Spectrum, am1: Schedule, T: int, n_points: int = 400) -> AdiabaticResult:
    """Adiabatic estimate of the noiseless loss for the AM1 schedule.

    Replaces the time-ordered operator products by products of instantaneous
    leading eigenvalues, giving (with alpha_eff_t = scale * t^alpha_bar)

        V_adi(t) = sum_k lam_k c_k^2 exp(-(2*scale/(1+alpha_bar)) lam_k t^(1+alpha_bar)),

    recorded as 0.5 * V_adi so it is directly comparable to loss curves.
    The predicted decay exponent is zeta * (1 + alpha_bar) when the spectrum
    carries a power-law generator record, None otherwise.
    """
    preset = am1.preset
    if preset.get("kind") != "am1":
        raise ValueError(f"adiabatic_v expects an am1 schedule, got {am1.name!r}")
    delta_bar = preset["delta_bar"]
    alpha_bar = preset["alpha_bar"]
    scale = preset["scale"]
    if delta_bar >= 1.0:
        warnings.warn(
            "adiabatic approximation is uncontrolled at delta_bar = 1; "
            "compare against the exact noiseless run"
        )
    times = np.unique(
        np.rint(np.geomspace(1, max(T, 1), num=min(n_points, T))).astype(int)
    )
    rate = 2.0 * scale / (1.0 + alpha_bar)
    weights = (s.lambdas * s.coeffs_sq)[::-1]
    lam_asc = s.lambdas[::-1]
    values = np.empty(times.size)
    for i, t in enumerate(times):
        values[i] = 0.5 * float(
            np.add.reduce(weights * np.exp(-rate * lam_asc * float(t) ** (1.0 + alpha_bar)))
        )
    traj = LossTrajectory(times, values, "adiabatic", None, {"schedule": am1.name, "preset": preset})
    pl = power_law_spec_of(s)
    predicted = pl.zeta * (1.0 + alpha_bar) if pl is not None else None
    return AdiabaticResult(traj, predicted)
