"""Stability landscape of generalized memory-1 algorithms.

A memory-1 algorithm is the triplet (delta, alpha_eff, q0).  Heavy Ball
(q0 = 0) can only reach large alpha_eff by pushing its eigenvalue circle
against the unit circle; a positive q0 shrinks the circle toward +1 and
keeps the per-eigenvalue noise response summable, which is what makes
stable acceleration possible.
"""

import numpy as np

from sgdmem import (
    Memory1Point,
    PowerLawSpec,
    accelerated_region_check,
    build_power_law,
    eigenvalue_locus,
    noise_stability_sum,
    r_lambda,
    strict_stability,
)

bench = build_power_law(PowerLawSpec(nu=3.0, zeta=0.5, K=10_000))

print("strict stability at lambda_max = 1 on a (delta, alpha_eff) slice, q0 = 1:")
deltas = (0.02, 0.05, 0.1, 0.2, 0.5, 1.0)
alphas = (1, 2, 5, 10, 20, 50, 100)
print(f"{'':>8}" + "".join(f"{a:>6}" for a in alphas) + "   <- alpha_eff")
for d in deltas:
    row = "".join(
        f"{'  ok' if strict_stability(Memory1Point(d, a, 1.0), 1.0).stable else '   .':>6}"
        for a in alphas
    )
    print(f"{d:>8}" + row)

print("\neigenvalue loci (non-real eigenvalues of the step matrix):")
for label, point in [
    ("Heavy Ball        (0.25, 14, 0)  ", Memory1Point(0.25, 13.99, 0.0)),
    ("generalized      (0.15, 4, 1.3)  ", Memory1Point(0.15, 4.0, 1.3)),
]:
    locus = eigenvalue_locus(point, np.linspace(1e-3, 1.0, 200))
    print(f"  {label}: circle center {locus.center:+.3f}, radius {locus.radius:.3f}")
print("small circles near +1 = contraction withOUT a long noise memory")

point = Memory1Point(1e-3, 10.0, 1.0)
print(f"\nper-eigenvalue noise response R_lam for {point}:")
for lam in (1e-4, 1e-3, 1e-2, 1e-1, 0.9):
    print(f"  lam = {lam:8.4f}: lam^2 R = {lam**2 * r_lambda(point, lam):.4g}")
noise = noise_stability_sum(bench, point, tau1=1.0, batch_size=1)
print(f"U'_Sigma over the benchmark = {noise.value:.4f} "
      f"(regions split at {noise.lam1_cr:.3g}, {noise.lam2_cr:.3g}; "
      f"sums {tuple(round(v, 4) for v in noise.region_sums)})")

print("\naccelerated-region report for the ansatz alpha_eff = delta^-h, "
      "q0 = delta^0.2:")
g = 0.2
h = 0.5 * (1 - 1 / 3) * (1 - g)
for delta in (1e-2, 1e-3, 1e-4):
    p = Memory1Point(delta, delta**-h, delta**g)
    report = accelerated_region_check(bench, p)
    verdicts = ", ".join(
        f"{c.name}={'pass' if c.passed else 'FAIL'}"
        for c in report
        if c.passed is not None
    )
    u = noise_stability_sum(bench, p, 1.0, 1).value
    print(f"  delta = {delta:g}: U'_Sigma = {u:.3f}; {verdicts}")
