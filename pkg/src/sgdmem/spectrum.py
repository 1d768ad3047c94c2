"""Discrete spectra (lambda_k, c_k^2) of quadratic problems.

A problem instance is a Hessian spectrum lambda_1 > lambda_2 > ... > 0
together with the squared expansion coefficients c_k^2 of the optimal
parameters over the Hessian eigenbasis.  The central family here is the
power-law one,

    lambda_k = Lambda * k^(-nu),
    sum_{k: lambda_k < lam} lambda_k c_k^2 -> Q * lam^zeta   (lam -> 0),

with eigenvalue exponent nu > 0 and target exponent zeta > 0.  The second
condition is realized exactly at the sequence level by setting

    lambda_k c_k^2 = zeta * nu * Q * Lambda^zeta * k^(-zeta*nu - 1),

which is the unique power sequence whose tail sums reproduce Q*lam^zeta.
Note that zeta < 1 makes sum_k c_k^2 divergent ("infeasible" targets);
the library supports this case throughout, which is why the pair
(lambda_k, c_k^2) rather than ||w*|| is the primitive object.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "Spectrum",
    "PowerLawSpec",
    "build_power_law",
    "tail_sum",
    "classify_divergence",
]


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Strictly decreasing positive eigenvalues with target amplitudes.

    Immutable after construction; safe to share across workers.  Arrays are
    stored in descending-lambda order; all internal summations accumulate
    ascending (smallest lambda first) to reduce floating-point error.
    """

    lambdas: np.ndarray
    coeffs_sq: np.ndarray
    metadata: Optional[dict] = None

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        cs = np.asarray(self.coeffs_sq, dtype=float)
        if lam.ndim != 1 or cs.ndim != 1:
            raise ValueError("lambdas and coeffs_sq must be 1-d sequences")
        if lam.size == 0:
            raise ValueError("spectrum must contain at least one eigenvalue")
        if lam.size != cs.size:
            raise ValueError("lambdas and coeffs_sq must have equal length")
        if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(cs)):
            raise ValueError("spectrum entries must be finite")
        if np.any(lam <= 0):
            raise ValueError("eigenvalues must be strictly positive")
        if np.any(np.diff(lam) >= 0):
            raise ValueError("eigenvalues must be strictly decreasing")
        if np.any(cs < 0):
            raise ValueError("coeffs_sq must be nonnegative")
        lam = lam.copy()
        cs = cs.copy()
        lam.flags.writeable = False
        cs.flags.writeable = False
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "coeffs_sq", cs)
        if not np.isfinite(self.weighted_sum()):
            raise ValueError("sum of lambda_k * c_k^2 overflows")

    @property
    def size(self) -> int:
        return self.lambdas.size

    @property
    def lambda_max(self) -> float:
        return float(self.lambdas[0])

    def weighted_sum(self) -> float:
        """sum_k lambda_k c_k^2, accumulated smallest-lambda first."""
        return float(np.add.reduce((self.lambdas * self.coeffs_sq)[::-1]))

    def initial_loss(self) -> float:
        """Expected loss at w = 0, i.e. 0.5 * sum_k lambda_k c_k^2."""
        return 0.5 * self.weighted_sum()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["lambda", "coeff_sq"])
            for lam, cs in zip(self.lambdas, self.coeffs_sq):
                writer.writerow([repr(float(lam)), repr(float(cs))])

    @classmethod
    def from_csv(cls, path) -> "Spectrum":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if [h.strip() for h in header] != ["lambda", "coeff_sq"]:
                raise ValueError(f"unexpected spectrum CSV header: {header}")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        lam = np.array([r[0] for r in rows])
        cs = np.array([r[1] for r in rows])
        return cls(lam, cs, metadata={"source": str(path)})


@dataclass(frozen=True)
class PowerLawSpec:
    """Parameters of an exact power-law spectrum.

    ``Q`` is the tail-law constant; when omitted it is normalized so that
    lambda_1 * c_1^2 = 1, i.e. Q = Lambda^(-zeta) / (zeta * nu).
    """

    nu: float
    zeta: float
    big_lambda: float = 1.0
    K: int = 10_000
    Q: Optional[float] = field(default=None)

    def __post_init__(self):
        if not (self.nu > 0):
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not (self.zeta > 0):
            raise ValueError(f"zeta must be positive, got {self.zeta}")
        if not (self.big_lambda > 0):
            raise ValueError(f"big_lambda must be positive, got {self.big_lambda}")
        if int(self.K) < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        if self.Q is None:
            q = self.big_lambda ** (-self.zeta) / (self.zeta * self.nu)
            object.__setattr__(self, "Q", q)
        elif not (self.Q > 0):
            raise ValueError(f"Q must be positive, got {self.Q}")

    def as_dict(self) -> dict:
        return {
            "kind": "power_law",
            "nu": self.nu,
            "zeta": self.zeta,
            "big_lambda": self.big_lambda,
            "K": self.K,
            "Q": self.Q,
        }


def build_power_law(spec: PowerLawSpec) -> Spectrum:
    """Materialize the exact power-law family described by ``spec``.

    lambda_k = Lambda k^(-nu) to full floating precision, and
    lambda_k c_k^2 = zeta*nu*Q*Lambda^zeta * k^(-zeta*nu-1) so that
    tail_sum(lam) ~ Q lam^zeta.
    """
    k = np.arange(1, spec.K + 1, dtype=float)
    lambdas = spec.big_lambda * k ** (-spec.nu)
    amp = spec.zeta * spec.nu * spec.Q * spec.big_lambda**spec.zeta
    coeffs_sq = amp * k ** (-spec.zeta * spec.nu - 1.0) / lambdas
    return Spectrum(lambdas, coeffs_sq, metadata=spec.as_dict())


def power_law_spec_of(s: Spectrum) -> Optional[PowerLawSpec]:
    """Recover the generator record of a power-law spectrum, if present."""
    md = s.metadata or {}
    if md.get("kind") != "power_law":
        return None
    return PowerLawSpec(
        nu=md["nu"], zeta=md["zeta"], big_lambda=md["big_lambda"], K=md["K"], Q=md["Q"]
    )


def tail_sum(s: Spectrum, lam: float) -> float:
    """sum of lambda_k c_k^2 over eigenvalues strictly below ``lam``.

    Nondecreasing in lam; 0 for lam <= lambda_K, the full weighted sum for
    lam > lambda_1.
    """
    if not (lam > 0):
        raise ValueError(f"lam must be positive, got {lam}")
    ascending = (s.lambdas * s.coeffs_sq)[::-1]
    # eigenvalues ascending; strict inequality lambda_k < lam
    idx = np.searchsorted(s.lambdas[::-1], lam, side="left")
    return float(np.add.reduce(ascending[:idx]))


def estimate_nu(s: Spectrum) -> float:
    """Log-log estimate of the eigenvalue decay exponent from the tail half.

    A finite spectrum cannot by itself decide the convergence of
    sum lambda_k or sum lambda_k^2; this fit is the surrogate used when no
    power-law extrapolation is supplied.
    """
    k = np.arange(1, s.size + 1, dtype=float)
    half = s.size // 2
    logk = np.log(k[half:])
    loglam = np.log(s.lambdas[half:])
    if logk.size < 2:
        # single eigenvalue: no decay information, treat as fast decay
        return np.inf
    slope = np.polyfit(logk, loglam, 1)[0]
    return -slope


def classify_divergence(s: Spectrum, extrapolate: Optional[PowerLawSpec] = None) -> str:
    """One of ``"immediate"``, ``"eventual"``, ``"convergent-candidate"``.

    Immediate divergence means the one-step noise propagator is already
    infinite (sum lambda_k^2 = inf, i.e. nu <= 1/2 under power-law
    extrapolation); eventual means sum lambda_k = inf but sum lambda_k^2 is
    finite (1/2 < nu <= 1).
    """
    nu = extrapolate.nu if extrapolate is not None else estimate_nu(s)
    if nu <= 0.5:
        return "immediate"
    if nu <= 1.0:
        return "eventual"
    return "convergent-candidate"
