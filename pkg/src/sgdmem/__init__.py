"""Simulation and analysis of first-order optimization with memory.

Exact expected-loss dynamics of memory-M SGD on quadratic problems with
(power-law) discrete spectra, the signal/noise propagator expansion of the
loss, memory-1 stability theory, the accelerated memory-1 schedule, and
Monte-Carlo validation on Gaussian data.
"""

from .algorithm import (
    MemoryParams,
    MultistepCoeffs,
    Schedule,
    char_poly,
    effective_learning_rate,
    from_multistep,
    preset_am1,
    preset_averaged_gd,
    preset_gd,
    preset_hb,
    preset_jacobi_hb,
    preset_memory1,
    run_iteration,
    run_multistep,
    s_eigenvalues,
    s_matrix,
    schedule_from_dict,
    solve_initial_memory,
    to_multistep,
)
from .evolution import (
    LossTrajectory,
    MomentState,
    SEParams,
    init_state,
    run,
    run_noiseless,
    sigma_se,
    step,
)
from .fitting import FitResult, fit_exponent
from .montecarlo import EnsembleResult, empirical_sigma_check, ensemble, sgd_run
from .propagators import (
    AsymptoticPredictions,
    PropagatorSeries,
    PropagatorSums,
    asymptotic_predictions,
    compute_propagators,
    compute_propagators_nonstationary,
    loss_from_expansion,
    propagator_sums,
)
from .spectrum import (
    PowerLawSpec,
    Spectrum,
    build_power_law,
    classify_divergence,
    tail_sum,
)
from .stability import (
    AdiabaticResult,
    Memory1Point,
    accelerated_region_check,
    adiabatic_v,
    eigenvalue_locus,
    leading_eigenvalue_slope,
    memory1_point_of,
    noise_stability_sum,
    r_lambda,
    strict_stability,
)

__version__ = "0.1.0"
