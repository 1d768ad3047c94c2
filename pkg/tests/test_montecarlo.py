import numpy as np
import pytest

from sgdmem import (
    PowerLawSpec,
    SEParams,
    Spectrum,
    build_power_law,
    empirical_sigma_check,
    ensemble,
    preset_gd,
    preset_hb,
    preset_jacobi_hb,
    run,
    run_noiseless,
    sgd_run,
)

rng = np.random.default_rng(41)

SMALL = build_power_law(PowerLawSpec(nu=3.0, zeta=0.5, K=16))


def test_same_seed_is_deterministic():
    a = sgd_run(SMALL, preset_hb(0.2, 0.5), batch_size=2, T=50, seed=123)
    b = sgd_run(SMALL, preset_hb(0.2, 0.5), batch_size=2, T=50, seed=123)
    assert np.array_equal(a.values, b.values)
    c = sgd_run(SMALL, preset_hb(0.2, 0.5), batch_size=2, T=50, seed=124)
    assert not np.array_equal(a.values, c.values)


def test_large_batch_approaches_noiseless():
    s = build_power_law(PowerLawSpec(nu=3.0, zeta=0.5, K=8))
    run_mc = sgd_run(s, preset_gd(0.3), batch_size=10_000, T=100, seed=5)
    clean = run_noiseless(s, preset_gd(0.3), T=100)
    np.testing.assert_allclose(run_mc.values, clean.values, rtol=0.01)


def test_single_mode_ensemble_matches_gaussian_evolution():
    # lambda = 1, c^2 = 1, GD alpha = 0.5, B = 1 against SE with (1, -1).
    # L_t is here a product of iid heavy-tailed factors whose relative
    # variance grows as 4.556^t, so the seed mean only concentrates for
    # small t; beyond that no practical ensemble estimates E[L_t].
    s = Spectrum([1.0], [1.0])
    ens = ensemble(s, preset_gd(0.5), batch_size=1, T=4, n_seeds=2000, base_seed=0)
    det = run(s, preset_gd(0.5), SEParams(1.0, -1.0, 1), T=4)
    # the deterministic run reproduces the exact Gaussian law 0.5 * 0.75^t
    np.testing.assert_allclose(det.values, 0.5 * 0.75 ** np.arange(5), rtol=1e-12)
    for t in range(1, 5):
        assert abs(ens.mean[t] - det.values[t]) <= 3 * ens.stderr[t], t


def test_ensemble_stderr_scaling():
    small = ensemble(SMALL, preset_gd(0.25), 1, T=100, n_seeds=64, base_seed=3)
    big = ensemble(SMALL, preset_gd(0.25), 1, T=100, n_seeds=256, base_seed=3)
    t_check = [20, 50, 100]
    ratio = np.mean([small.stderr[t] / big.stderr[t] for t in t_check])
    assert ratio == pytest.approx(2.0, rel=0.2)


@pytest.mark.parametrize("batch", [1, 4])
def test_se_exactness_smoke(batch):
    # deterministic evolution with (tau1, tau2) = (1, -1) matches ensembles
    sched = preset_hb(0.15, 0.5)
    ens = ensemble(SMALL, sched, batch, T=300, n_seeds=300, base_seed=17)
    det = run(SMALL, sched, SEParams(1.0, -1.0, batch), T=300)
    checkpoints = np.unique(np.geomspace(1, 300, 10).astype(int))
    for t in checkpoints:
        assert abs(ens.mean[t] - det.values[t]) <= 3 * ens.stderr[t], t


def test_sandwich_bounds_on_gaussian_problem():
    # MC loss lies between the (1,0) and (2,0) SE runs
    s = Spectrum([1.0, 0.5, 0.2], [1.0, 1.5, 0.3])
    sched = preset_gd(0.4)
    ens = ensemble(s, sched, 1, T=60, n_seeds=1500, base_seed=7)
    lo = run(s, sched, SEParams(1.0, 0.0, 1), T=60)
    hi = run(s, sched, SEParams(2.0, 0.0, 1), T=60)
    for t in range(1, 61, 6):
        assert ens.mean[t] >= lo.values[t] - 3 * ens.stderr[t]
        assert ens.mean[t] <= hi.values[t] + 3 * ens.stderr[t]


def test_batch_size_monotonicity():
    b1 = ensemble(SMALL, preset_gd(0.25), 1, T=200, n_seeds=400, base_seed=11)
    b8 = ensemble(SMALL, preset_gd(0.25), 8, T=200, n_seeds=400, base_seed=11)
    for t in range(10, 201, 27):
        assert b8.mean[t] <= b1.mean[t] + 3 * b1.stderr[t]


def test_jacobi_divergence_onset_grows_with_batch():
    s = build_power_law(PowerLawSpec(nu=3.0, zeta=0.5, K=64))
    onsets = []
    for batch in (1, 4, 16):
        traj = sgd_run(s, preset_jacobi_hb(0.5), batch, T=4000, seed=2)
        assert traj.diverged, batch
        onsets.append(traj.diverged_at)
    assert onsets[0] < onsets[1] < onsets[2]


def test_ensemble_requires_two_seeds():
    with pytest.raises(ValueError):
        ensemble(SMALL, preset_gd(0.1), 1, T=10, n_seeds=1)


def test_ensemble_csv(tmp_path):
    ens = ensemble(SMALL, preset_gd(0.25), 1, T=20, n_seeds=8, base_seed=0)
    path = tmp_path / "ens.csv"
    ens.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,mean,stderr,n_alive"
    assert len(lines) == 22
    assert ens.n_alive[-1] == 8


# ---------------------------------------------------------------------------
# empirical noise-map fit
# ---------------------------------------------------------------------------


def test_sigma_check_recovers_gaussian_taus():
    h = np.array([1.0, 0.4, 0.15])
    c = rng.normal(size=(3, 3))
    c = c @ c.T
    fit = empirical_sigma_check(h, c, n_samples=1_000_000, seed=0)
    assert fit.tau1 == pytest.approx(1.0, abs=0.05)
    assert fit.tau2 == pytest.approx(-1.0, abs=0.05)
    assert not fit.degenerate
    scale = float(np.trace(np.diag(h) @ c))
    assert fit.residual <= 0.05 * scale


def test_sigma_check_zero_c():
    h = np.array([1.0, 0.5])
    fit = empirical_sigma_check(h, np.zeros((2, 2)), n_samples=10_000, seed=1)
    assert fit.residual == 0.0
    assert fit.tau1 == 0.0 and fit.tau2 == 0.0


def test_sigma_check_rank1_degenerate():
    h = np.diag([1.0, 0.0, 0.0])
    c = rng.normal(size=(3, 3))
    c = c @ c.T
    fit = empirical_sigma_check(h, c, n_samples=400_000, seed=2)
    assert fit.degenerate
    # only tau1 - tau2 is identified; for Gaussian data it equals 2
    assert fit.tau1 - fit.tau2 == pytest.approx(2.0, abs=0.1)


def test_sigma_check_rejects_large_dimension():
    with pytest.raises(ValueError):
        empirical_sigma_check(np.ones(9), np.eye(9), 100)
