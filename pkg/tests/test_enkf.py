import numpy as np
import pytest

from preqda.enkf import EnKFConfig, Ensemble, analysis_step, forecast_step, run_filter


def test_config_validation():
    with pytest.raises(ValueError):
        EnKFConfig(ensemble_size=1)
    with pytest.raises(ValueError):
        EnKFConfig(obs_noise_var=0.0)


def test_forecast_zero_forcing_var_identical_members():
    cfg = EnKFConfig(ensemble_size=3, forcing_var=1e-30, forcing_mean=8.0,
                     dt=0.01, delta_t=0.1)
    members = np.tile(np.arange(8.0), (3, 1))
    out = forecast_step(Ensemble(members.copy()), cfg, np.random.default_rng(0))
    assert np.allclose(out.members[0], out.members[1], atol=1e-10)
    assert np.allclose(out.members[1], out.members[2], atol=1e-10)


def test_forecast_linear_ode_limit():
    # K = 1 single-scale drift degenerates to xdot = -x + F
    cfg = EnKFConfig(ensemble_size=500, forcing_mean=5.0, forcing_var=1e-30,
                     dt=0.001, delta_t=0.5)
    members = np.zeros((500, 1))
    out = forecast_step(Ensemble(members), cfg, np.random.default_rng(1))
    expected = 5.0 * (1 - np.exp(-0.5))
    assert out.members.mean() == pytest.approx(expected, rel=1e-4)


def test_forecast_deterministic_given_rng():
    cfg = EnKFConfig(ensemble_size=4, dt=0.01, delta_t=0.1)
    members = np.random.default_rng(2).standard_normal((4, 8))
    a = forecast_step(Ensemble(members.copy()), cfg, np.random.default_rng(7))
    b = forecast_step(Ensemble(members.copy()), cfg, np.random.default_rng(7))
    assert np.array_equal(a.members, b.members)


def test_analysis_huge_obs_noise_identity():
    rng = np.random.default_rng(3)
    members = rng.standard_normal((50, 4))
    out = analysis_step(Ensemble(members.copy()), np.zeros(4), 1e12,
                        np.random.default_rng(0))
    np.testing.assert_allclose(out.members, members, atol=1e-4)


def test_analysis_identical_members_unchanged():
    members = np.tile(np.arange(4.0), (10, 1))
    out = analysis_step(Ensemble(members.copy()), np.ones(4), 1.0,
                        np.random.default_rng(0))
    np.testing.assert_allclose(out.members, members, atol=1e-12)


def test_analysis_preserves_ensemble_size():
    rng = np.random.default_rng(4)
    out = analysis_step(Ensemble(rng.standard_normal((33, 5))),
                        np.zeros(5), 1.0, rng)
    assert out.members.shape == (33, 5)


def test_analysis_gain_spectral_norm_below_one():
    rng = np.random.default_rng(5)
    members = rng.standard_normal((200, 3)) * np.array([2.0, 0.5, 1.0])
    C = np.cov(members.T)
    R = 0.7 * np.eye(3)
    G = C @ np.linalg.inv(C + R)
    assert np.linalg.norm(G, 2) < 1.0


def test_analysis_matches_exact_kalman_1d():
    rng = np.random.default_rng(6)
    prior_mean, prior_var, r = 1.0, 4.0, 0.5
    members = prior_mean + np.sqrt(prior_var) * rng.standard_normal((10**4, 1))
    y = np.array([2.5])
    out = analysis_step(Ensemble(members), y, r, np.random.default_rng(7))
    # exact posterior
    gain = prior_var / (prior_var + r)
    post_mean = prior_mean + gain * (y[0] - prior_mean)
    post_var = (1 - gain) * prior_var
    emp_var = members.var()
    emp_gain = emp_var / (emp_var + r)
    assert abs(out.members.mean() - post_mean) < 0.05
    assert abs(out.members.var() - post_var) / post_var < 0.10


def test_run_filter_empty_series():
    cfg = EnKFConfig(ensemble_size=5, dt=0.01, delta_t=0.1)
    out = run_filter(np.zeros((0, 8)), cfg, seed=0)
    assert out.shape[0] == 0


def test_run_filter_deterministic():
    rng = np.random.default_rng(8)
    obs = rng.standard_normal((6, 8)) * 3
    cfg = EnKFConfig(ensemble_size=10, dt=0.01, delta_t=0.2)
    a = run_filter(obs, cfg, seed=5)
    b = run_filter(obs, cfg, seed=5)
    assert np.array_equal(a, b)
    assert a.shape == (6, 10, 8)


def test_run_filter_beats_climatology_on_well_specified_data():
    # generate data from the misspecified (single-scale) model itself
    from preqda.lorenz96 import drift_misspecified, rk4_step

    rng = np.random.default_rng(9)
    state = rng.standard_normal(8) + 3.0
    F = np.full(8, 20.0)
    obs = []
    for _ in range(60):
        for _ in range(200):
            state = rk4_step(state, 0.001, lambda s: drift_misspecified(s, F))
        obs.append(state + rng.standard_normal(8))
    obs = np.asarray(obs)

    cfg = EnKFConfig(ensemble_size=100, dt=0.001, delta_t=0.2)
    pred = run_filter(obs, cfg, seed=1)
    point = pred.mean(axis=1)
    # skip spin-up, compare to climatology (training-mean forecast)
    resid_f = obs[10:] - point[10:]
    resid_c = obs[10:] - obs[10:].mean(axis=0)
    assert np.sqrt((resid_f**2).mean()) < np.sqrt((resid_c**2).mean())
