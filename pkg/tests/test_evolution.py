import numpy as np
import pytest

from sgdmem import (
    LossTrajectory,
    PowerLawSpec,
    SEParams,
    Spectrum,
    build_power_law,
    init_state,
    preset_gd,
    preset_hb,
    preset_jacobi_hb,
    run,
    run_noiseless,
    sigma_se,
    step,
)

rng = np.random.default_rng(11)

SINGLE = Spectrum([1.0], [1.0])
BENCH_SMALL = build_power_law(PowerLawSpec(nu=3.0, zeta=0.5, K=300))


def test_init_state_blocks():
    state = init_state(SINGLE, memory=1)
    np.testing.assert_array_equal(state.blocks[0], [[1.0, 0.0], [0.0, 0.0]])
    assert state.step == 0


def test_init_state_counts_and_loss():
    state = init_state(BENCH_SMALL, memory=2)
    assert state.blocks.shape == (300, 3, 3)
    l0 = 0.5 * float(np.sum(BENCH_SMALL.lambdas * state.blocks[:, 0, 0]))
    assert l0 == pytest.approx(BENCH_SMALL.initial_loss(), rel=1e-12)


def test_noiseless_gd_hand_recursion():
    # tau1 = tau2 = 0, alpha = 0.5 on {lambda=1, c^2=1}: L_t = 0.5 * 0.25^t
    traj = run(SINGLE, preset_gd(0.5), SEParams(0.0, 0.0, 1), T=6)
    expected = 0.5 * 0.25 ** np.arange(7)
    np.testing.assert_allclose(traj.values, expected, rtol=1e-14)
    assert traj.values[1] == pytest.approx(0.125)


def test_noisy_gd_hand_recursion():
    # tau1 = 1, tau2 = 0, B = 1: C_{t+1} = (0.25 + 0.25) C_t, so L_t = 0.5 * 0.5^t
    traj = run(SINGLE, preset_gd(0.5), SEParams(1.0, 0.0, 1), T=8)
    expected = 0.5 * 0.5 ** np.arange(9)
    np.testing.assert_allclose(traj.values, expected, rtol=1e-14)


def test_large_batch_limit_matches_noiseless():
    se = SEParams(1.0, -1.0, batch_size=10**6)
    sched = preset_hb(0.2, 0.5)
    noisy = run(BENCH_SMALL, sched, se, T=100)
    clean = run_noiseless(BENCH_SMALL, sched, T=100)
    np.testing.assert_allclose(noisy.values, clean.values, rtol=1e-4)


def test_noiseless_equals_zero_tau_run():
    for memory, sched in [(0, preset_gd(0.3)), (1, preset_hb(0.15, 0.6))]:
        lam = np.sort(rng.uniform(0.05, 1.0, size=12))[::-1]
        s = Spectrum(lam, rng.uniform(0.1, 2.0, size=12))
        a = run(s, sched, SEParams(0.0, 0.0, 1), T=60)
        b = run_noiseless(s, sched, T=60)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-300)


def test_step_matches_run():
    se = SEParams(1.0, -0.5, 2)
    sched = preset_hb(0.1, 0.7)
    state = init_state(BENCH_SMALL, 1)
    for _ in range(5):
        state = step(state, sched.params(0), se)
    traj = run(BENCH_SMALL, sched, se, T=5)
    assert state.loss() == traj.values[5]
    assert state.step == 5


def test_step_rejects_memory_mismatch():
    state = init_state(SINGLE, memory=0)
    with pytest.raises(ValueError):
        step(state, preset_hb(0.1, 0.5).params(0), SEParams(1, 0, 1))


def test_determinism_bitwise():
    se = SEParams(1.0, -1.0, 4)
    sched = preset_hb(0.15, 0.6)
    a = run(BENCH_SMALL, sched, se, T=200)
    b = run(BENCH_SMALL, sched, se, T=200)
    assert np.array_equal(a.values, b.values)


def test_noise_monotonicity_in_tau1():
    sched = preset_hb(0.1, 0.5)
    lo = run(BENCH_SMALL, sched, SEParams(0.5, 0.0, 1), T=150)
    hi = run(BENCH_SMALL, sched, SEParams(1.5, 0.0, 1), T=150)
    assert np.all(hi.values >= lo.values - 1e-15)


def test_blocks_stay_psd_when_tau2_nonpositive():
    se = SEParams(1.0, -1.0, 1)
    sched = preset_hb(0.2, 0.6)
    state = init_state(BENCH_SMALL, 1)
    probes = rng.normal(size=(8, 2))
    for t in range(300):
        state = step(state, sched.params(t), se)
        if (t + 1) % 100 == 0:
            quad = np.einsum("pi,kij,pj->kp", probes, state.blocks, probes)
            assert quad.min() >= -1e-12 * max(1.0, quad.max())


def test_divergence_flagging():
    traj = run(SINGLE, preset_gd(2.5), SEParams(0.0, 0.0, 1), T=10_000)
    assert traj.diverged
    assert traj.diverged_at is not None
    assert traj.times[-1] == traj.diverged_at
    assert traj.values.size == traj.diverged_at + 1


def test_divergent_jacobi_minibatch_small():
    # scaled-down analog of the mini-batch explosion of the HB schedule
    traj = run(BENCH_SMALL, preset_jacobi_hb(0.5), SEParams(1.0, 0.0, 1), T=20_000)
    peak = np.nanmax(traj.values)
    assert traj.diverged or peak > 10 * traj.values[0]


def test_geometric_recording_matches_full_run():
    se = SEParams(1.0, 0.0, 1)
    sched = preset_gd(0.25)
    full = run(BENCH_SMALL, sched, se, T=500)
    sub = run(BENCH_SMALL, sched, se, T=500, record="geometric")
    assert sub.times[0] == 0 and sub.times[-1] == 500
    assert sub.times.size < full.times.size
    np.testing.assert_array_equal(sub.values, full.values[sub.times])


def test_hb_and_gd_agree_at_equal_effective_learning_rate():
    # stationary noiseless: same alpha_eff implies the same loss asymptotics
    gd = run_noiseless(BENCH_SMALL, preset_gd(0.5), T=4000)
    hb = run_noiseless(BENCH_SMALL, preset_hb(0.5 * (1 - 0.8), 0.8), T=4000)
    window = slice(1000, 4001)
    ratio = hb.values[window] / gd.values[window]
    assert np.max(np.abs(ratio - 1.0)) < 0.10


def test_sigma_se_identity_case():
    out = sigma_se(np.eye(2), np.eye(2), SEParams(1.0, 0.0, 1))
    np.testing.assert_allclose(out, 2 * np.eye(2), atol=1e-15)


def test_sigma_se_rank1_vanishes_at_equal_taus():
    h = np.outer([1.0, 2.0, -0.5], [1.0, 2.0, -0.5])
    for tau in (0.3, 1.0, 2.5):
        c = rng.normal(size=(3, 3))
        c = c @ c.T
        out = sigma_se(c, h, SEParams(tau, tau, 1))
        np.testing.assert_allclose(out, 0.0, atol=1e-12 * np.abs(c).max())


def test_sigma_se_preserves_psd():
    h = np.diag(rng.uniform(0.1, 2.0, size=3))
    for _ in range(1000):
        c = rng.normal(size=(3, 3))
        c = c @ c.T
        tau2 = float(rng.uniform(-1.0, 1.0))
        tau1 = float(rng.uniform(max(tau2, 0.0), max(tau2, 0.0) + 2.0))
        out = sigma_se(c, h, SEParams(tau1, tau2, 1))
        assert np.linalg.eigvalsh(out).min() >= -1e-10 * max(np.abs(out).max(), 1e-12)


def test_trajectory_csv_round_trip(tmp_path):
    traj = run(BENCH_SMALL, preset_gd(0.25), SEParams(1.0, 0.0, 1), T=50)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    back = LossTrajectory.from_csv(path)
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.values, traj.values)
    assert back.engine == "evolution"
    assert back.diverged_at is None


def test_diverged_csv_round_trip(tmp_path):
    traj = run(SINGLE, preset_gd(3.0), SEParams(0.0, 0.0, 1), T=5000)
    path = tmp_path / "div.csv"
    traj.to_csv(path)
    back = LossTrajectory.from_csv(path)
    assert back.diverged_at == traj.diverged_at
