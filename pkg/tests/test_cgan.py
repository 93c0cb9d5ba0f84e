import numpy as np
import pytest
import torch
from sklearn.exceptions import NotFittedError

import orpco.cgan as cgan
from orpco.cgan import CganEnsemble, ConditionalGAN
from orpco.ensemble import empirical_moments, load_ensemble
from orpco.exceptions import ConfigurationError, TrainingError


def toy_process(n=4096, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=(n, 1))
    return u, u + 0.1 * rng.normal(size=(n, 1))


@pytest.fixture(scope="module")
def toy_gan():
    u, y = toy_process()
    return ConditionalGAN(epochs=100, learning_rate=1e-3, random_state=0).fit(u, y), u, y


def test_network_shapes(toy_gan):
    gan, _, _ = toy_gan
    assert gan.noise_dim_ == 3
    assert gan.generator_.spec.input_dim == gan.noise_dim_ + 1
    assert gan.generator_.spec.output_dim == 1
    assert gan.critic_.spec.output_dim == 1
    assert len(gan.history_) == 100 and {"d_loss", "g_loss"} <= set(gan.history_[0])


def test_default_hyperparameters():
    gan = ConditionalGAN()
    assert gan.gp_weight == 10.0 and gan.epochs == 3000
    assert gan.batch_size == 256 and gan.n_critic == 5
    assert CganEnsemble().n_members == 5


def test_toy_dynamics_are_recovered(toy_gan):
    gan, _, _ = toy_gan
    s = gan.sample([[0.5]], 4000, random_state=1)[0, :, 0]
    assert abs(s.mean() - 0.5) <= 0.05
    assert 0.05 <= s.std() <= 0.2


def test_gradient_penalty_holds_norms_near_one(toy_gan):
    gan, u, y = toy_gan
    norms = gan.gradient_norms(u[:2000], y[:2000], random_state=0)
    assert 0.8 <= norms.mean() <= 1.2


def test_sample_shapes_and_determinism(toy_gan):
    gan, _, _ = toy_gan
    assert gan.sample([[0.3]], 1).shape == (1, 1, 1)
    a = gan.sample([[0.3], [0.6]], 50, random_state=9)
    np.testing.assert_array_equal(a, gan.sample([[0.3], [0.6]], 50, random_state=9))


def test_unfitted_sampling_fails():
    with pytest.raises(NotFittedError):
        ConditionalGAN().sample([[0.1]], 3)


def test_dataset_smaller_than_batch():
    u, y = toy_process(100)
    with pytest.raises(ConfigurationError, match="batch"):
        ConditionalGAN(epochs=1).fit(u, y)


def test_non_finite_loss_reports_epoch(monkeypatch):
    u, y = toy_process(512)
    real_loss = cgan.critic_loss
    calls = {"n": 0}

    def poisoned(*args, **kwargs):
        loss, norms = real_loss(*args, **kwargs)
        calls["n"] += 1
        return (loss * float("nan") if calls["n"] > 4 else loss), norms

    monkeypatch.setattr(cgan, "critic_loss", poisoned)
    with pytest.raises(TrainingError) as err:
        ConditionalGAN(epochs=5, random_state=0).fit(u, y)
    assert err.value.epoch == 2


def test_warm_start_matches_one_long_run():
    u, y = toy_process(512)
    full = ConditionalGAN(epochs=4, random_state=3).fit(u, y)
    part = ConditionalGAN(epochs=2, random_state=3, warm_start=True).fit(u, y).fit(u, y)
    assert len(part.history_) == 4
    assert torch.equal(full.generator_.params, part.generator_.params)


def test_result_only_penalty_option():
    u, y = toy_process(512)
    gan = ConditionalGAN(epochs=2, penalize_conditions=False, ema_decay=None, random_state=0).fit(u, y)
    assert gan.sampler_ is gan.generator_


def test_ema_decay_validation():
    u, y = toy_process(512)
    with pytest.raises(ConfigurationError):
        ConditionalGAN(epochs=1, ema_decay=1.0).fit(u, y)


def test_ensemble_needs_two_members():
    u, y = toy_process(512)
    with pytest.raises(ConfigurationError):
        CganEnsemble(n_members=1, epochs=1).fit(u, y)


def test_ensemble_same_seed_is_identical():
    u, y = toy_process(512)
    a = CganEnsemble(n_members=2, epochs=2, random_state=5).fit(u, y)
    b = CganEnsemble(n_members=2, epochs=2, random_state=5).fit(u, y)
    for ma, mb in zip(a.members_, b.members_):
        assert torch.equal(ma.generator_.params, mb.generator_.params)
    assert not torch.equal(a.members_[0].generator_.params, a.members_[1].generator_.params)
    np.testing.assert_array_equal(a.sample([[0.5]], 10, 1), b.sample([[0.5]], 10, 1))
    assert a.sample([[0.5]], 10, 1).shape == (2, 1, 10, 1)


def test_member_index_on_failure(monkeypatch):
    u, y = toy_process(512)

    def boom(self, X, Y):
        raise TrainingError("diverged", epoch=0)

    monkeypatch.setattr(ConditionalGAN, "fit", boom)
    with pytest.raises(TrainingError) as err:
        CganEnsemble(n_members=2, epochs=1).fit(u, y)
    assert err.value.member == 0


def test_ensemble_checkpoint_roundtrip(tmp_path, small_schema):
    u, y = toy_process(512)
    ens = CganEnsemble(n_members=2, epochs=2, random_state=1).fit(u, y)
    ens.save(tmp_path / "ens")
    back = load_ensemble(tmp_path / "ens")
    assert back.get_params() == ens.get_params()
    np.testing.assert_array_equal(back.sample([[0.2]], 20, 4), ens.sample([[0.2]], 20, 4))


def test_empirical_moments_examples(rng):
    mu, cov = empirical_moments(np.full((5, 3), 2.0))
    np.testing.assert_array_equal(mu, [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(cov, np.zeros((3, 3)))
    mu, cov = empirical_moments(np.array([[0.0, 0.0], [2.0, 2.0]]))
    np.testing.assert_allclose(mu, [1.0, 1.0])
    np.testing.assert_allclose(cov, [[2.0, 2.0], [2.0, 2.0]])
    mu, cov = empirical_moments(rng.standard_normal((100_000, 2)))
    assert np.linalg.norm(mu) <= 0.02 and np.linalg.norm(cov - np.eye(2)) <= 0.05
    with pytest.raises(ValueError):
        empirical_moments(np.zeros((1, 2)))
