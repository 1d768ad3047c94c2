"""Memory-M first-order algorithms in matrix and multistep form.

A memory-M algorithm keeps M auxiliary velocity-like vectors u^(1..M) and
updates, with scalar learning rate alpha, M-vectors a, b, c and an MxM
matrix D:

    g_t     = grad L(w_t + a^T u_t)
    w_{t+1} = w_t - alpha * g_t + b^T u_t
    u_{t+1} = c g_t + D u_t

Plain GD is M = 0; Heavy Ball and averaged GD are M = 1.  On quadratic
losses every *stationary* memory-M algorithm is equivalent to a multistep
recurrence

    w_{t+M+1} = sum_m p_m w_{t+m} + sum_m q_m grad L(w_{t+m}),
    sum_m p_m = 1,

and the correspondence is constructive in both directions: (p, q) are read
off two determinant expansions of the per-eigenvalue step matrix S_lambda,
and conversely any (p, q) with sum p = 1 is realized by a canonical form
with a = 0, b = e_1 and a companion matrix D.  This module implements both
directions, the per-eigenvalue matrices S_lambda and their characteristic
polynomial / eigenvalues, the effective learning rate

    alpha_eff = alpha - b^T (1-D)^{-1} c = (sum_m q_m) / (sum_m m p_m - M - 1),

and the preset schedules used throughout the package (GD, HB, averaged GD,
generalized memory-1, Jacobi-style HB, and the accelerated memory-1
schedule AM1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "MemoryParams",
    "MultistepCoeffs",
    "Schedule",
    "preset_gd",
    "preset_hb",
    "preset_averaged_gd",
    "preset_memory1",
    "preset_am1",
    "preset_jacobi_hb",
    "schedule_from_dict",
    "to_multistep",
    "from_multistep",
    "effective_learning_rate",
    "s_matrix",
    "char_poly",
    "s_eigenvalues",
    "run_iteration",
    "run_multistep",
    "solve_initial_memory",
]


def _readonly(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class MemoryParams:
    """One step's parameters (alpha, a, b, c, D); M = 0 degenerates to GD."""

    alpha: float
    a: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    D: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        a = _readonly(np.atleast_1d(self.a))
        b = _readonly(np.atleast_1d(self.b))
        c = _readonly(np.atleast_1d(self.c))
        D = _readonly(np.atleast_2d(self.D)) if np.size(self.D) else _readonly(
            np.zeros((0, 0))
        )
        m = a.size
        if not (b.size == c.size == m and D.shape == (m, m)):
            raise ValueError(
                f"inconsistent memory sizes: a={a.size}, b={b.size}, "
                f"c={c.size}, D={D.shape}"
            )
        entries = [np.asarray(self.alpha, float), a, b, c, D]
        if not all(np.all(np.isfinite(e)) for e in entries):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "D", D)

    @property
    def memory(self) -> int:
        return self.a.size


@dataclass(frozen=True, eq=False)
class MultistepCoeffs:
    """Recurrence coefficients (p_0..p_M, q_0..q_M) with sum(p) = 1."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = _readonly(np.atleast_1d(self.p))
        q = _readonly(np.atleast_1d(self.q))
        if p.size != q.size or p.size < 1:
            raise ValueError("p and q must have equal positive length")
        if abs(float(np.sum(p)) - 1.0) > 1e-9:
            raise ValueError(f"sum(p) must be 1, got {np.sum(p)!r}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def memory(self) -> int:
        return self.p.size - 1


class Schedule:
    """Step-indexed parameters t -> MemoryParams.

    The generator must be a pure function of t; values are cached so
    repeated evolution passes do not recompute them.  ``stationary=True``
    promises params(t) is the same object for every t.
    """

    def __init__(
        self,
        params_fn: Callable[[int], MemoryParams],
        stationary: bool,
        name: str,
        preset: Optional[dict] = None,
    ):
        self._fn = params_fn
        self.stationary = bool(stationary)
        self.name = name
        self.preset = dict(preset) if preset else {}
        self._cache: dict[int, MemoryParams] = {}

    def params(self, t: int) -> MemoryParams:
        if t < 0:
            raise ValueError(f"step index must be >= 0, got {t}")
        if self.stationary:
            t = 0
        hit = self._cache.get(t)
        if hit is None:
            hit = self._fn(t)
            self._cache[t] = hit
        return hit

    @property
    def memory(self) -> int:
        return self.params(0).memory

    def __repr__(self):
        return f"Schedule({self.name!r}, stationary={self.stationary})"


def _stationary(params: MemoryParams, name: str, preset: dict) -> Schedule:
    return Schedule(lambda t: params, True, name, preset)


def preset_gd(alpha: float) -> Schedule:
    """Plain gradient descent (memory 0)."""
    return _stationary(MemoryParams(alpha), "gd", {"kind": "gd", "alpha": alpha})


def preset_hb(alpha: float, beta: float) -> Schedule:
    """Heavy Ball / momentum: w_{t+1} = w_t - alpha g_t + beta (w_t - w_{t-1})."""
    if abs(beta) >= 1:
        warnings.warn(f"|beta| = {abs(beta)} >= 1: D is not strictly stable")
    params = MemoryParams(alpha, a=[0.0], b=[beta], c=[-alpha], D=[[beta]])
    return _stationary(params, "hb", {"kind": "hb", "alpha": alpha, "beta": beta})


def preset_averaged_gd(alpha: float) -> Schedule:
    """Running average of a GD trajectory, as a nonstationary memory-1 scheme."""

    def fn(t: int) -> MemoryParams:
        s = t + 1.0
        return MemoryParams(
            alpha / s, a=[1.0], b=[1.0 / s], c=[-alpha * t / s], D=[[t / s]]
        )

    return Schedule(fn, False, "averaged_gd", {"kind": "averaged_gd", "alpha": alpha})


def _memory1_params(delta: float, alpha_eff: float, q0: float) -> MemoryParams:
    """Momentum-buffer realization of the (delta, alpha_eff, q0) triplet.

    u_{t+1} = beta u_t - g_t;  w_{t+1} = w_t + alpha2 u_{t+1} - alpha1 g_t,
    with beta = 1 - delta, alpha1 = q0 / beta, alpha2 = delta*(alpha_eff - alpha1).
    """
    beta = 1.0 - delta
    if q0 == 0.0:
        alpha1 = 0.0
    else:
        if beta == 0.0:
            raise ValueError("beta = 1 - delta must be nonzero when q0 != 0")
        alpha1 = q0 / beta
    alpha2 = delta * (alpha_eff - alpha1)
    return MemoryParams(
        alpha1 + alpha2, a=[0.0], b=[alpha2 * beta], c=[-1.0], D=[[beta]]
    )


def preset_memory1(delta: float, alpha_eff: float, q0: float) -> Schedule:
    """Stationary generalized memory-1 point (delta, alpha_eff, q0).

    HB plus an extra instantaneous-gradient learning rate; q0 = 0 recovers
    HB with the same effective learning rate.
    """
    if not (0 < delta < 2):
        raise ValueError(f"delta must lie in (0, 2), got {delta}")
    params = _memory1_params(delta, alpha_eff, q0)
    return _stationary(
        params,
        "memory1",
        {"kind": "memory1", "delta": delta, "alpha_eff": alpha_eff, "q0": q0},
    )


def preset_am1(
    alpha1: float,
    alpha_eff_scale: float,
    delta_bar: float,
    alpha_bar: float,
    delta_cap: float = 1.0,
) -> Schedule:
    """Accelerated memory-1 schedule.

    Power-law ansatz delta_t = min(t^-delta_bar, delta_cap),
    alpha_eff_t = alpha_eff_scale * t^alpha_bar, q0_t = alpha1 * beta_t;
    each step is assembled through the generalized memory-1 map.  Step 0
    reuses the t = 1 values.
    """
    if not (0 < delta_bar <= 1):
        raise ValueError(f"delta_bar must lie in (0, 1], got {delta_bar}")
    if alpha_bar < 0:
        raise ValueError(f"alpha_bar must be >= 0, got {alpha_bar}")

    def fn(t: int) -> MemoryParams:
        t = max(t, 1)
        delta = min(t ** (-delta_bar), delta_cap)
        beta = 1.0 - delta
        alpha_eff = alpha_eff_scale * t**alpha_bar
        alpha2 = delta * (alpha_eff - alpha1)
        return MemoryParams(
            alpha1 + alpha2, a=[0.0], b=[alpha2 * beta], c=[-1.0], D=[[beta]]
        )

    return Schedule(
        fn,
        False,
        "am1",
        {
            "kind": "am1",
            "alpha1": alpha1,
            "scale": alpha_eff_scale,
            "delta_bar": delta_bar,
            "alpha_bar": alpha_bar,
        },
    )


def preset_jacobi_hb(alpha: float) -> Schedule:
    """HB with constant alpha and momentum beta_t = 1 - 2/t (0 for t < 2)."""
    if not (alpha > 0):
        raise ValueError(f"alpha must be positive, got {alpha}")

    def fn(t: int) -> MemoryParams:
        beta = 1.0 - 2.0 / t if t >= 2 else 0.0
        return MemoryParams(alpha, a=[0.0], b=[beta], c=[-alpha], D=[[beta]])

    return Schedule(fn, False, "jacobi_hb", {"kind": "jacobi_hb", "alpha": alpha})


_PRESETS = {
    "gd": preset_gd,
    "hb": preset_hb,
    "averaged_gd": preset_averaged_gd,
    "memory1": preset_memory1,
    "am1": preset_am1,
    "jacobi_hb": preset_jacobi_hb,
}


def schedule_from_dict(spec: dict) -> Schedule:
    """Build a preset schedule from a {kind: ..., params...} mapping."""
    spec = dict(spec)
    try:
        kind = spec.pop("kind")
    except KeyError:
        raise ValueError("schedule spec needs a 'kind' entry") from None
    try:
        factory = _PRESETS[kind]
    except KeyError:
        raise ValueError(
            f"unknown schedule kind {kind!r}; known: {sorted(_PRESETS)}"
        ) from None
    # keep config-file spelling 'scale' for preset_am1's alpha_eff_scale
    if kind == "am1" and "scale" in spec:
        spec["alpha_eff_scale"] = spec.pop("scale")
    return factory(**spec)


# ---------------------------------------------------------------------------
# polynomial helpers (coefficient arrays, ascending powers)
# ---------------------------------------------------------------------------


def _poly_add(p, q):
    n = max(len(p), len(q))
    out = np.zeros(n)
    out[: len(p)] += p
    out[: len(q)] += q
    return out


def _poly_det(entries) -> np.ndarray:
    """Determinant of a matrix of polynomials by cofactor expansion."""
    n = len(entries)
    if n == 0:
        return np.array([1.0])
    if n == 1:
        return np.asarray(entries[0][0], dtype=float)
    acc = np.zeros(1)
    for j in range(n):
        minor = [row[:j] + row[j + 1 :] for row in entries[1:]]
        term = np.convolve(entries[0][j], _poly_det(minor))
        acc = _poly_add(acc, -term if j % 2 else term)
    return acc


def _det_by_interpolation(mat_fn, degree: int) -> np.ndarray:
    """Fit det(mat_fn(x)) with a degree-``degree`` polynomial at M+2 points."""
    xs = np.arange(degree + 2, dtype=float)
    vals = np.array([np.linalg.det(mat_fn(x)) for x in xs])
    vander = np.vander(xs, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(vander, vals, rcond=None)
    return coef


def _char_poly_of(D: np.ndarray) -> np.ndarray:
    """Coefficients (ascending) of det(x I - D), monic of degree M."""
    m = D.shape[0]
    if m == 0:
        return np.array([1.0])
    if m <= 3:
        entries = [
            [
                np.array([-D[i, j], 1.0]) if i == j else np.array([-D[i, j]])
                for j in range(m)
            ]
            for i in range(m)
        ]
        coef = _poly_det(entries)
    else:
        coef = _det_by_interpolation(lambda x: x * np.eye(m) - D, m)
    coef = np.resize(coef, m + 1)
    coef[m] = 1.0  # monic by construction
    return coef


def _q_poly(params: MemoryParams) -> np.ndarray:
    """Coefficients (ascending, length M+1) of the gradient-side determinant."""
    m = params.memory
    a, b, c, D = params.a, params.b, params.c, params.D
    top_left = float(a @ c - params.alpha)
    top_right = a @ (np.eye(m) - D) - b
    if m <= 3:
        entries = [[np.array([top_left])] + [np.array([v]) for v in top_right]]
        for i in range(m):
            row = [np.array([c[i]])]
            for j in range(m):
                row.append(
                    np.array([-D[i, j], 1.0]) if i == j else np.array([-D[i, j]])
                )
            entries.append(row)
        coef = _poly_det(entries)
    else:

        def mat(x):
            out = np.empty((m + 1, m + 1))
            out[0, 0] = top_left
            out[0, 1:] = top_right
            out[1:, 0] = c
            out[1:, 1:] = x * np.eye(m) - D
            return out

        coef = _det_by_interpolation(mat, m)
    return np.resize(coef, m + 1)


# ---------------------------------------------------------------------------
# equivalence maps
# ---------------------------------------------------------------------------


def to_multistep(params: MemoryParams) -> MultistepCoeffs:
    """Multistep coefficients of a stationary memory-M algorithm.

    p comes from expanding x^(M+1) - (x-1) det(x - D); since det(x - D) is
    monic, p_m = d_m - d_{m-1} telescopes to sum(p) = 1.
    """
    d = _char_poly_of(params.D)
    m = params.memory
    p = np.empty(m + 1)
    prev = 0.0
    for i in range(m + 1):
        p[i] = d[i] - prev
        prev = d[i]
    q = _q_poly(params)
    return MultistepCoeffs(p, q)


def _companion_from_p(p: np.ndarray) -> np.ndarray:
    m = p.size - 1
    d = np.zeros((m, m))
    p_cum = np.cumsum(p[:m])  # p'_0 .. p'_{M-1}
    for i in range(m):
        d[i, 0] = -p_cum[m - 1 - i]
        if i + 1 < m:
            d[i, i + 1] = 1.0
    return d


def from_multistep(coeffs: MultistepCoeffs) -> MemoryParams:
    """Canonical matrix form (a = 0, b = e_1, companion D) of a recurrence.

    alpha = -q_M; c holds the coefficients of sum_m q_m x^m + alpha det(x-D),
    a polynomial of degree <= M-1, read off highest power first.
    """
    m = coeffs.memory
    alpha = -float(coeffs.q[m])
    if m == 0:
        return MemoryParams(alpha)
    D = _companion_from_p(coeffs.p)
    d = _char_poly_of(D)
    residual = _poly_add(coeffs.q, alpha * d)[:m]
    c = residual[::-1].copy()
    b = np.zeros(m)
    b[0] = 1.0
    return MemoryParams(alpha, a=np.zeros(m), b=b, c=c, D=D)


def effective_learning_rate(x) -> float:
    """alpha - b^T (1-D)^{-1} c, cross-checked against (sum q)/(sum m p_m - M - 1).

    Accepts MemoryParams or MultistepCoeffs.  Raises on singular 1 - D and
    on disagreement beyond 1e-9 between the two routes.
    """
    if isinstance(x, MultistepCoeffs):
        params, coeffs = from_multistep(x), x
    elif isinstance(x, MemoryParams):
        params, coeffs = x, to_multistep(x)
    else:
        raise TypeError(f"expected MemoryParams or MultistepCoeffs, got {type(x)}")

    m = params.memory
    if m == 0:
        via_params = params.alpha
    else:
        eye_minus_d = np.eye(m) - params.D
        if abs(np.linalg.det(eye_minus_d)) < 1e-300:
            raise ValueError("1 - D is singular: effective learning rate undefined")
        try:
            via_params = params.alpha - params.b @ np.linalg.solve(
                eye_minus_d, params.c
            )
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"1 - D is singular: {exc}") from exc

    denom = float(np.arange(m + 1) @ coeffs.p) - (m + 1)
    if denom == 0.0:
        raise ValueError("sum(m p_m) - M - 1 vanishes: 1 - D is singular")
    via_coeffs = float(np.sum(coeffs.q)) / denom
    if abs(via_params - via_coeffs) > 1e-9 * max(1.0, abs(via_params), abs(via_coeffs)):
        raise AssertionError(
            f"effective learning rate mismatch: {via_params} vs {via_coeffs}"
        )
    return float(via_params)


# ---------------------------------------------------------------------------
# per-eigenvalue step matrices
# ---------------------------------------------------------------------------


def s_matrix(params: MemoryParams, lam: float) -> np.ndarray:
    """The (M+1)x(M+1) one-step matrix acting on (delta-w, u) eigencomponents."""
    m = params.memory
    s = np.zeros((m + 1, m + 1))
    s[0, 0] = 1.0
    if m:
        s[0, 1:] = params.b
        s[1:, 1:] = params.D
    update = np.concatenate(([-params.alpha], params.c))
    probe = np.concatenate(([1.0], params.a))
    return s + lam * np.outer(update, probe)


def char_poly(params: MemoryParams, lam: float) -> np.ndarray:
    """Ascending coefficients of det(x - S_lambda) = (x-1)det(x-D) - lam * q(x)."""
    coeffs = to_multistep(params)
    m = params.memory
    out = np.zeros(m + 2)
    out[m + 1] = 1.0
    out[: m + 1] = -coeffs.p - lam * coeffs.q
    return out


def s_eigenvalues(params: MemoryParams, lam: float) -> np.ndarray:
    """Eigenvalues of S_lambda (closed-form for M <= 1, dense solve above)."""
    m = params.memory
    s = s_matrix(params, lam)
    if m == 0:
        return np.array([complex(s[0, 0])])
    if m == 1:
        tr = s[0, 0] + s[1, 1]
        det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
        disc = complex(tr * tr - 4.0 * det)
        root = np.sqrt(disc)
        return np.array([(tr + root) / 2.0, (tr - root) / 2.0])
    return np.linalg.eigvals(s)


# ---------------------------------------------------------------------------
# trajectory runners (deterministic, any gradient oracle)
# ---------------------------------------------------------------------------


def run_iteration(sched: Schedule, grad_fn, w0, u0=None, T: int = 100) -> np.ndarray:
    """Iterate the matrix form for T steps; returns array [w_0, ..., w_T]."""
    w = np.array(w0, dtype=float)
    m = sched.memory
    if u0 is None:
        u = np.zeros((m,) + w.shape)
    else:
        u = np.array(u0, dtype=float).reshape((m,) + w.shape)
    out = np.empty((T + 1,) + w.shape)
    out[0] = w
    for t in range(T):
        prm = sched.params(t)
        query = w + prm.a @ u if m else w
        g = np.asarray(grad_fn(query), dtype=float)
        w = w - prm.alpha * g + (prm.b @ u if m else 0.0)
        if m:
            u = np.outer(prm.c, g).reshape((m,) + w.shape) + np.tensordot(
                prm.D, u, axes=1
            )
        out[t + 1] = w
    return out


def run_multistep(coeffs: MultistepCoeffs, grad_fn, w_init, T: int = 100) -> np.ndarray:
    """Iterate the recurrence from its M+1 seed vectors; returns [w_0, ..., w_T]."""
    m = coeffs.memory
    w_init = np.asarray(w_init, dtype=float)
    if w_init.shape[0] != m + 1:
        raise ValueError(f"need {m + 1} seed iterates, got {w_init.shape[0]}")
    out = np.empty((T + 1,) + w_init.shape[1:])
    out[: m + 1] = w_init[: T + 1]
    for t in range(T - m):
        acc = np.zeros(w_init.shape[1:])
        for j in range(m + 1):
            acc += coeffs.p[j] * out[t + j] + coeffs.q[j] * grad_fn(out[t + j])
        out[t + m + 1] = acc
    return out


def solve_initial_memory(sched: Schedule, grad_fn, w_targets) -> np.ndarray:
    """Initial memory u_0 reproducing the desired first M+1 iterates.

    Valid for the canonical (a = 0, b = e_1, companion D) form, where the
    m-th difference w_m - w_{m-1} depends on u_0^(m) with unit coefficient
    and not on later components, so the components can be fixed one by one.
    """
    w_targets = np.asarray(w_targets, dtype=float)
    m = sched.memory
    u0 = np.zeros((m,) + w_targets.shape[1:])
    for comp in range(m):
        achieved = run_iteration(sched, grad_fn, w_targets[0], u0, T=comp + 1)
        u0[comp] += w_targets[comp + 1] - achieved[comp + 1]
    return u0
