import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from orpco.exceptions import ConfigurationError, NumericalError
from orpco.ope import (
    DENSITY_FLOOR,
    LoggingPropensity,
    RewardPredictor,
    effective_sample_size,
    estimate_dm,
    estimate_dr,
    estimate_ips,
    estimate_wis,
    fit_gaussian,
    fit_target_propensity,
    importance_weights,
    ope_report,
)
from orpco.synthetic import GaussianBandit

finite = st.floats(-100, 100, allow_nan=False)
positive = st.floats(0.01, 50, allow_nan=False)


def test_dm_of_constant_predictor():
    assert estimate_dm(np.full(17, 0.37)) == pytest.approx(0.37)
    assert estimate_dm([0.8]) == 0.8
    with pytest.raises(ConfigurationError):
        estimate_dm([])


def test_ips_and_wis_arithmetic():
    assert estimate_ips([2.0], [1.0]) == 2.0
    assert estimate_wis([1.0, 3.0], [0.0, 1.0]) == pytest.approx(0.75)
    r = np.array([0.2, 0.9, 0.4])
    assert estimate_ips(np.ones(3), r) == r.mean()
    assert estimate_wis(np.full(3, 7.0), r) == pytest.approx(r.mean())


def test_wis_rejects_all_zero_weights():
    with pytest.raises(NumericalError):
        estimate_wis(np.zeros(3), np.ones(3))


def test_dr_reductions():
    rng = np.random.default_rng(0)
    r_hat_pol, r_hat_log, r = rng.normal(size=(3, 20))
    w = rng.uniform(0, 3, 20)
    assert estimate_dr(r_hat_pol, np.zeros(20), r, r_hat_log) == pytest.approx(estimate_dm(r_hat_pol))
    assert estimate_dr(np.zeros(20), w, r, np.zeros(20)) == pytest.approx(estimate_ips(w, r))
    # a predictor that is exact on the logged pairs leaves only the direct term
    assert estimate_dr(r_hat_pol, w, r, r) == pytest.approx(estimate_dm(r_hat_pol))


@given(arrays(float, 12, elements=positive), arrays(float, 12, elements=finite), positive)
def test_wis_scale_invariant_and_convex(w, r, scale):
    v = estimate_wis(w, r)
    assert estimate_wis(w * scale, r) == pytest.approx(v, rel=1e-9, abs=1e-9)
    assert r.min() - 1e-9 <= v <= r.max() + 1e-9


@given(arrays(float, 9, elements=finite))
def test_ips_with_unit_weights_is_the_mean(r):
    assert estimate_ips(np.ones(len(r)), r) == np.mean(r)


def test_importance_weights_floor_the_logging_density():
    w = importance_weights([0.5, 0.5], [0.0, 0.25])
    assert w[0] == pytest.approx(0.5 / DENSITY_FLOOR)
    assert w[1] == pytest.approx(2.0)


def test_report_flags_capped_weights_but_keeps_raw_headline():
    w = np.array([1.0, 500.0, 2.0])
    r = np.array([1.0, 0.0, 1.0])
    rep = ope_report(r, w, np.zeros(3), np.zeros(3), cap=100.0)
    assert rep.ips == pytest.approx(estimate_ips(w, r))
    assert rep.capped["n_capped"] == 1
    assert rep.capped["ips"] == pytest.approx(estimate_ips(np.minimum(w, 100), r))
    assert rep.max_weight == 500.0
    assert rep.n_eff == pytest.approx(effective_sample_size(w))
    assert set(rep.to_dict()) >= {"dm", "ips", "wis", "dr", "weights", "n_eff"}


def test_report_rejects_non_finite_estimates():
    with pytest.raises(NumericalError):
        ope_report(np.array([1.0, np.nan]), np.ones(2), np.zeros(2), np.zeros(2))


def test_effective_sample_size_limits():
    assert effective_sample_size(np.ones(10)) == pytest.approx(10)
    assert effective_sample_size([1.0, 0.0, 0.0]) == pytest.approx(1)


def test_bandit_estimators_unbiased_and_wis_more_stable():
    bandit = GaussianBandit()
    truth = bandit.target_value()
    rng = np.random.default_rng(11)
    ips, wis, dr = [], [], []
    for _ in range(50):
        x, u, r = bandit.sample(400, rng)
        w = bandit.target_density(x, u) / bandit.logging_density(x, u)
        # misspecified model: true mean reward shifted by a constant
        r_hat_log = bandit.mean_reward(x, u) + 0.5
        r_hat_pol = bandit.mean_reward(x, bandit.sample_target(x, rng)) + 0.5
        ips.append(estimate_ips(w, r))
        wis.append(estimate_wis(w, r))
        dr.append(estimate_dr(r_hat_pol, w, r, r_hat_log))
    ips, wis, dr = map(np.asarray, (ips, wis, dr))
    se = ips.std(ddof=1) / np.sqrt(len(ips))
    assert abs(ips.mean() - truth) <= 3 * se
    assert wis.var() <= ips.var()
    assert np.mean(np.abs(dr - truth) <= np.abs(ips - truth)) >= 0.6


def test_perfect_reward_model_dm_near_truth():
    bandit = GaussianBandit(noise_std=0.0)
    rng = np.random.default_rng(3)
    x, _, _ = bandit.sample(4000, rng)
    r_hat = bandit.mean_reward(x, bandit.sample_target(x, rng))
    se = r_hat.std(ddof=1) / np.sqrt(len(r_hat))
    assert abs(estimate_dm(r_hat) - bandit.target_value()) <= 2 * se


def test_gaussian_fit_floor_and_moments():
    g = fit_gaussian(np.tile([0.3, 0.7], (10, 1)))
    np.testing.assert_allclose(g.mean, [0.3, 0.7])
    np.testing.assert_allclose(g.std, 1e-3)
    assert g.density([[5.0, 5.0]])[0] == DENSITY_FLOOR
    with pytest.raises(ConfigurationError):
        fit_gaussian([[0.1, 0.2]])


class _FixedPolicy:
    def __init__(self, optimum):
        self.optimum = np.asarray(optimum, dtype=float)

    def optimize(self, x, seed):
        return self.optimum, 0.0


class _TwoOptimaPolicy:
    """Lands on one of two symmetric optima depending on the seed."""

    def optimize(self, x, seed):
        u = np.array([0.2, 0.5]) if np.random.default_rng(seed).uniform() < 0.5 else np.array([0.8, 0.5])
        return u, 1.0


def test_target_propensity_of_seed_independent_optimizer_is_degenerate():
    g = fit_target_propensity(_FixedPolicy([0.4, 0.6]), np.zeros(2), n_repeats=10)
    np.testing.assert_allclose(g.mean, [0.4, 0.6])
    np.testing.assert_allclose(g.std, 1e-3)


def test_target_propensity_of_bimodal_optimizer():
    outs = []
    policy = _TwoOptimaPolicy()
    g = fit_target_propensity(policy, np.zeros(2), n_repeats=10, seed=4)
    from orpco.validation import spawn_seeds
    outs = np.stack([policy.optimize(None, s)[0] for s in spawn_seeds(4, 10)])
    np.testing.assert_allclose(g.mean, outs.mean(axis=0))
    assert 0.2 < g.mean[0] < 0.8
    assert g.std[0] > 1e-3
    assert g.std[1] == pytest.approx(1e-3)


def test_logging_propensity_deterministic_policy_hits_variance_floor():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(1024, 2))
    u = np.column_stack([x[:, 0] * 0.5 + 0.2, x[:, 1] * 0.3 + 0.1])
    model = LoggingPropensity(epochs=60, random_state=0).fit(x, u)
    _, std = model.moments(x[:50])
    floor_std = np.sqrt(model.variance_floor) * model.u_scaler_.scale_
    ratio = std / floor_std
    assert np.all(np.median(ratio, axis=0) <= 1.25)
    assert np.all(ratio <= 5)
    assert np.all(model.density(x[:50], u[:50] + 5.0) >= DENSITY_FLOOR)


def test_logging_propensity_rejects_empty_data():
    with pytest.raises(ConfigurationError):
        LoggingPropensity().fit(np.zeros((0, 2)), np.zeros((0, 2)))


def test_reward_predictor_learns_a_smooth_function():
    rng = np.random.default_rng(1)
    xu = rng.uniform(size=(2000, 3))
    r = np.sin(3 * xu[:, 0]) + xu[:, 1] * xu[:, 2]
    model = RewardPredictor(epochs=150, random_state=0).fit(xu, r)
    test = rng.uniform(size=(300, 3))
    truth = np.sin(3 * test[:, 0]) + test[:, 1] * test[:, 2]
    assert np.sqrt(np.mean((model.predict(test) - truth) ** 2)) < 0.05
    again = RewardPredictor(epochs=150, random_state=0).fit(xu, r)
    np.testing.assert_array_equal(model.predict(test), again.predict(test))


def test_bandit_closed_form_values_match_simulation():
    bandit = GaussianBandit()
    rng = np.random.default_rng(8)
    x, u, r = bandit.sample(400_000, rng)
    se = r.std(ddof=1) / np.sqrt(len(r))
    assert abs(r.mean() - bandit.logging_value()) <= 4 * se
    t = bandit.mean_reward(x, bandit.sample_target(x, rng))
    assert abs(t.mean() - bandit.target_value()) <= 4 * t.std(ddof=1) / np.sqrt(len(t))


@pytest.fixture(scope="module")
def uniform_logging():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(4000, 1))
    u = rng.uniform(0.2, 0.6, size=(4000, 1))
    model = LoggingPropensity(epochs=100, random_state=0).fit(x, u)
    probes = rng.uniform(size=(1000, 1)), rng.uniform(0.2, 0.6, size=(1000, 1))
    return model, probes


def test_uniform_logging_policy_gets_matching_gaussian_moments(uniform_logging):
    model, (xp, _) = uniform_logging
    mean, std = model.moments(xp)
    assert np.all(np.abs(mean - 0.4) < 0.03)
    assert np.all(np.abs(std - 0.4 / np.sqrt(12)) < 0.02)


@pytest.mark.xfail(strict=True, reason="a Gaussian density is within a factor 2 of a uniform one on "
                                       "at most ~82% of the box, even with exact moments")
def test_uniform_logging_density_within_factor_two(uniform_logging):
    model, (xp, up) = uniform_logging
    ratio = model.density(xp, up) * 0.4
    assert np.mean((ratio >= 0.5) & (ratio <= 2.0)) >= 0.95
