"""Signal/noise propagators and the exact loss reconstruction.

The expected loss of a stationary run decomposes into products of scalar
propagators: one signal factor V' and any number of noise factors U'.
Summing the products is a causal convolution, reproducing the moment
evolution exactly; the propagator tails then predict the power-law loss
exponent and constant.
"""

import numpy as np

from sgdmem import (
    PowerLawSpec,
    SEParams,
    build_power_law,
    asymptotic_predictions,
    compute_propagators,
    fit_exponent,
    loss_from_expansion,
    preset_gd,
    propagator_sums,
    run,
)
from sgdmem.propagators import predicted_u, predicted_v

pl = PowerLawSpec(nu=3.0, zeta=0.5, K=2000)
s = build_power_law(pl)
sched = preset_gd(0.25)
se = SEParams(1.0, 0.0, 1)

series = compute_propagators(s, sched.params(0), se, T=2001)
expansion = loss_from_expansion(series, T=2000)
reference = run(s, sched, se, T=2000)
err = np.max(np.abs(expansion.values - reference.values) / reference.values)
print(f"expansion vs moment evolution, T = 2000: max relative error {err:.2e}")

sums = propagator_sums(series, tail="geometric")
print(f"\npropagator mass: U_Sigma = {sums.U_Sigma:.4f} (< 1: mini-batch "
      f"noise is summable), V_Sigma = {sums.V_Sigma:.4f}")

print("\npropagator tails vs power-law predictions:")
print(f"{'t':>6} {'V_t':>12} {'predicted':>12} {'U_t':>12} {'predicted':>12}")
for t in (100, 400, 1600):
    pv = float(predicted_v(pl, 0.25, t))
    pu = float(predicted_u(pl, 0.25, se, t))
    print(f"{t:>6} {series.V[t - 1]:>12.4g} {pv:>12.4g} "
          f"{series.U[t - 1]:>12.4g} {pu:>12.4g}")

preds = asymptotic_predictions(pl, sched.params(0), se, sums_T=2000)
fit = fit_exponent(reference, window=(100, 2000))
print(f"\nregime: {preds.regime}")
print(f"predicted loss: {preds.loss_constant:.4f} * t^-{preds.loss_exponent}")
print(f"fitted exponent over [100, 2000]: {fit.exponent:.4f}")
print(f"measured plateau L_t * t^zeta at t = 2000: "
      f"{reference.values[-1] * 2000**0.5:.4f}")
