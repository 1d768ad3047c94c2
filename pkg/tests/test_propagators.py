import numpy as np
import pytest

from sgdmem import (
    Memory1Point,
    PowerLawSpec,
    PropagatorSeries,
    SEParams,
    Spectrum,
    build_power_law,
    asymptotic_predictions,
    compute_propagators,
    compute_propagators_nonstationary,
    loss_from_expansion,
    preset_gd,
    preset_hb,
    propagator_sums,
    run,
    s_matrix,
)
from sgdmem.algorithm import MemoryParams, Schedule

rng = np.random.default_rng(23)


def random_spectrum(k):
    lam = np.sort(rng.uniform(0.02, 1.0, size=k))[::-1]
    return Spectrum(lam, rng.uniform(0.1, 2.0, size=k))


def stable_memory1_point():
    while True:
        delta = rng.uniform(0.1, 1.8)
        q0 = rng.uniform(-0.8 * delta, 1.5)
        upper = ((4 - 2 * delta) - 2 * q0) / delta
        if upper <= 0.1:
            continue
        alpha_eff = rng.uniform(0.05, 0.9 * upper)
        return Memory1Point(delta, alpha_eff, q0)


def test_first_propagator_values():
    s = random_spectrum(20)
    prm = MemoryParams(0.2, a=[0.3], b=[0.4], c=[-0.1], D=[[0.5]])
    se = SEParams(1.7, 0.0, 4)
    series = compute_propagators(s, prm, se, T=3)
    assert series.V[0] == pytest.approx(np.sum(s.lambdas * s.coeffs_sq), rel=1e-12)
    expected_u1p = (
        1.7 / 4 * (0.3 * -0.1 - 0.2) ** 2 * np.sum(s.lambdas**2)
    )
    assert series.U_prime[0] == pytest.approx(expected_u1p, rel=1e-12)


def test_gd_signal_propagator_closed_form():
    s = random_spectrum(15)
    alpha = 0.4
    series = compute_propagators(s, preset_gd(alpha).params(0), SEParams(1, 0, 1), T=40)
    t = np.arange(1, 41)
    expected = np.array(
        [np.sum(s.lambdas * s.coeffs_sq * (1 - alpha * s.lambdas) ** (2 * (tt - 1)))
         for tt in t]
    )
    np.testing.assert_allclose(series.V, expected, rtol=1e-12)


def test_hb_noise_propagator_matrix_power_oracle():
    s = random_spectrum(8)
    prm = preset_hb(0.12, 0.7).params(0)
    se = SEParams(1.0, 0.0, 2)
    series = compute_propagators(s, prm, se, T=25)
    v = np.array([-prm.alpha, prm.c[0]])
    for t in (1, 5, 13, 25):
        total = 0.0
        for lam in s.lambdas:
            p = np.linalg.matrix_power(s_matrix(prm, lam), t - 1)
            z = p @ np.outer(v, v) @ p.T
            total += lam**2 * z[0, 0]
        assert series.U[t - 1] == pytest.approx(0.5 * total, rel=1e-12)


def test_primed_equals_unprimed_when_a_zero():
    s = random_spectrum(10)
    prm = preset_hb(0.1, 0.5).params(0)
    series = compute_propagators(s, prm, SEParams(1.0, -0.5, 1), T=30)
    np.testing.assert_allclose(series.V, series.V_prime, rtol=0, atol=1e-12)
    np.testing.assert_allclose(series.U, series.U_prime, rtol=0, atol=1e-12)


def test_loss_expansion_small_cases():
    s = random_spectrum(12)
    prm = stable_memory1_point().to_params()
    se = SEParams(1.0, 0.0, 1)
    series = compute_propagators(s, prm, se, T=10)
    traj = loss_from_expansion(series, T=2)
    assert traj.values[0] == pytest.approx(0.5 * series.V[0], rel=1e-14)
    expected_l1 = 0.5 * (series.V[1] + series.U[0] * series.V_prime[0])
    assert traj.values[1] == pytest.approx(expected_l1, rel=1e-14)


def draw_noise_stable_config(tau2, with_shift=False, max_tries=200):
    """Random spectrum + memory-1 params whose noisy dynamics stay bounded."""
    for _ in range(max_tries):
        k = int(rng.integers(10, 30))
        s = random_spectrum(k)
        base = stable_memory1_point().to_params()
        prm = (
            MemoryParams(base.alpha, a=[float(rng.uniform(-0.4, 0.4))],
                         b=base.b, c=base.c, D=base.D)
            if with_shift
            else base
        )
        se = SEParams(1.0, tau2, int(rng.integers(1, 4)))
        series = compute_propagators(s, prm, se, T=201)
        sums = propagator_sums(series)
        if np.all(np.isfinite(series.U_prime)) and sums.U_prime_Sigma < 0.9:
            return s, prm, se, series
    raise AssertionError("could not draw a noise-stable configuration")


@pytest.mark.parametrize("tau2", [0.0, -0.5])
def test_expansion_matches_evolution(tau2):
    # the central reconstruction identity, exercised with a != 0 as well
    for trial in range(4):
        s, prm, se, series = draw_noise_stable_config(tau2, with_shift=trial % 2 == 1)
        sched = Schedule(lambda t, prm=prm: prm, True, "random")
        expansion = loss_from_expansion(series, T=200)
        reference = run(s, sched, se, T=200)
        np.testing.assert_allclose(
            expansion.values, reference.values, rtol=1e-8, atol=1e-13
        )


def test_nonstationary_variant_matches_stationary_powers():
    s = random_spectrum(9)
    prm = stable_memory1_point().to_params()
    se = SEParams(1.0, -0.3, 2)
    sched = Schedule(lambda t, prm=prm: prm, True, "stat")
    t_end = 17
    series = compute_propagators(s, prm, se, T=t_end)
    two_time = compute_propagators_nonstationary(s, sched, se, t_end)
    for src in range(1, t_end):
        assert two_time["U_prime"][src] == pytest.approx(
            series.U_prime[t_end - src - 1], rel=1e-10
        )
        assert two_time["U"][src] == pytest.approx(
            series.U[t_end - src - 1], rel=1e-10
        )
    assert two_time["V_prime"] == pytest.approx(series.V_prime[t_end - 1], rel=1e-10)
    assert two_time["V"] == pytest.approx(series.V[t_end - 1], rel=1e-10)


def test_batch_size_scaling_is_exact():
    s = random_spectrum(10)
    prm = preset_hb(0.1, 0.6).params(0)
    u1 = compute_propagators(s, prm, SEParams(1.0, 0.0, 1), T=20).U
    u2 = compute_propagators(s, prm, SEParams(1.0, 0.0, 2), T=20).U
    u4 = compute_propagators(s, prm, SEParams(1.0, 0.0, 4), T=20).U
    assert np.array_equal(u2, u1 / 2)
    assert np.array_equal(u4, u1 / 4)


def test_nonnegativity_under_sign_conditions():
    for _ in range(5):
        s = random_spectrum(12)
        prm = stable_memory1_point().to_params()
        se = SEParams(float(rng.uniform(0, 2)), float(-rng.uniform(0, 1)), 1)
        series = compute_propagators(s, prm, se, T=50)
        for arr in (series.V, series.V_prime, series.U, series.U_prime):
            assert arr.min() >= -1e-12


def test_propagator_sums_geometric_series():
    t = np.arange(1, 31)
    u = 0.5**t
    series = PropagatorSeries(u.copy(), u.copy(), u.copy(), u.copy())
    trunc = propagator_sums(series, tail="truncate")
    geo = propagator_sums(series, tail="geometric")
    assert trunc.U_Sigma == pytest.approx(1.0, abs=1e-6)
    assert geo.U_Sigma == pytest.approx(1.0, abs=1e-9)
    assert geo.tail["U_Sigma"] == "geometric"
    assert trunc.tail["U_Sigma"] == "truncate"


def test_propagator_sums_refuses_unstable_ratio():
    t = np.arange(1, 31).astype(float)
    u = 1.0 / t  # ratios drift by more than 1%
    series = PropagatorSeries(u, u, u, u)
    sums = propagator_sums(series, tail="geometric")
    assert sums.tail["U_Sigma"] == "truncate"


def test_zero_noise_sums_to_zero():
    s = random_spectrum(10)
    series = compute_propagators(
        s, preset_gd(0.3).params(0), SEParams(0.0, 0.0, 1), T=20
    )
    sums = propagator_sums(series)
    assert sums.U_Sigma == 0.0
    assert sums.U_prime_Sigma == 0.0


def test_benchmark_gd_noise_mass_below_one():
    pl = PowerLawSpec(nu=3.0, zeta=0.5, K=2000)
    s = build_power_law(pl)
    series = compute_propagators(s, preset_gd(0.25).params(0), SEParams(1, 0, 1), 2000)
    sums = propagator_sums(series, tail="geometric")
    assert sums.U_Sigma < 1.0
    # consistent with observed convergence
    traj = run(s, preset_gd(0.25), SEParams(1, 0, 1), T=2000)
    assert not traj.diverged
    assert traj.values[-1] < traj.values[0]


def test_asymptotic_predictions_regimes():
    gd = preset_gd(0.25).params(0)
    se = SEParams(1.0, 0.0, 1)
    signal = asymptotic_predictions(
        PowerLawSpec(nu=3.0, zeta=0.5, K=1000), gd, se, sums_T=500
    )
    assert signal.regime == "signal-dominated"
    assert signal.xi_U == pytest.approx(2 - 1 / 3)
    noise = asymptotic_predictions(
        PowerLawSpec(nu=2.0, zeta=1.8, K=1000), preset_gd(0.5).params(0), se, sums_T=500
    )
    assert noise.regime == "noise-dominated"
    assert noise.xi_U == pytest.approx(1.5)
    assert noise.loss_exponent == pytest.approx(1.5)


def test_immediate_divergence_rejected():
    with pytest.raises(ValueError):
        asymptotic_predictions(
            PowerLawSpec(nu=0.4, zeta=0.5, K=100),
            preset_gd(0.1).params(0),
            SEParams(1, 0, 1),
        )


def test_measured_v_approaches_prediction():
    # medium-size version of the asymptotic check (full scale in acceptance)
    pl = PowerLawSpec(nu=3.0, zeta=0.5, K=2000)
    s = build_power_law(pl)
    prm = preset_gd(0.25).params(0)
    series = compute_propagators(s, prm, SEParams(1, 0, 1), T=2000)
    from sgdmem.propagators import predicted_v

    measured = series.V[-1]
    predicted = float(predicted_v(pl, 0.25, 2000))
    assert measured == pytest.approx(predicted, rel=0.10)


def test_series_csv(tmp_path):
    s = random_spectrum(5)
    series = compute_propagators(s, preset_gd(0.2).params(0), SEParams(1, 0, 1), T=7)
    path = tmp_path / "series.csv"
    series.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,V,V_prime,U,U_prime"
    assert len(lines) == 8
