import numpy as np
import pytest
import torch

from orpco.data import ProcessDataset, Schema
from orpco.ddpg import (
    DdpgAgent,
    DdpgConfig,
    OUNoise,
    ReplayBuffer,
    evaluate_policy,
    step_seed,
    train_offline_ddpg,
)
from orpco.exceptions import ConfigurationError
from orpco.ib import SurrogateConfig, ib_reward, policy_return, rollout_dataset
from orpco.nn import AdamConfig, Mlp, Optimizer, to_tensor, torch_generator
from orpco.reward import BRANCHES, PenalizedEvaluator, RewardFunction, penalize

from stubs import GaussianStubEnsemble

IB_REWARD = RewardFunction(ib_reward, "ib")


@pytest.fixture(scope="module")
def ib_data():
    ds, _ = rollout_dataset("safe", n_traj=20, T=20, seed=0)
    return ds


def stub_evaluator(ds, n_members=2, n_samples=10, c=-2000.0):
    rng = np.random.default_rng(0)
    offsets = 0.5 + 0.01 * rng.standard_normal((n_members, 5))
    ens = GaussianStubEnsemble(offsets, np.linspace(0.01, 0.02, n_members), 8,
                               normalizer=ds.normalizer)
    return PenalizedEvaluator(ens, IB_REWARD, n_samples=n_samples, c=c, random_state=1).fit(ds.inputs[:50])


def test_config_validation():
    with pytest.raises(ConfigurationError):
        DdpgConfig(gamma=1.0)
    with pytest.raises(ConfigurationError):
        DdpgConfig(tau=0.0)
    with pytest.raises(ConfigurationError):
        DdpgConfig(batch_size=0)
    assert DdpgConfig().gamma == 0.99 and DdpgConfig(gamma=0.0).gamma == 0.0


def test_ou_noise_recursion():
    a, b = OUNoise(2, 0.15, 0.2, rng=3), np.random.default_rng(3)
    state = np.zeros(2)
    for _ in range(5):
        state = state - 0.15 * state + 0.2 * b.standard_normal(2)
        np.testing.assert_allclose(a(), state)
    a.reset()
    np.testing.assert_array_equal(a.state, 0.0)


def test_replay_buffer_fifo_eviction():
    buf = ReplayBuffer(3, 1, 1)
    for k in range(5):
        buf.add([k], [k], float(k), [k + 1], seed=k, branch=k % 3)
    assert len(buf) == 3
    np.testing.assert_array_equal(buf.r[buf.indices()], [2.0, 3.0, 4.0])
    np.testing.assert_array_equal(buf.seed[buf.indices()], [2, 3, 4])
    x, u, r, xn = buf.sample(10, np.random.default_rng(0))
    assert set(r) <= {2.0, 3.0, 4.0}
    np.testing.assert_array_equal(xn[:, 0], x[:, 0] + 1)


def test_actor_outputs_stay_in_control_bounds():
    agent = DdpgAgent(([0, 0], [100, 10]), ([-1, 2], [1, 5]), seed=0)
    with torch.no_grad():
        agent.actor.params.mul_(50.0)  # saturate the squashing
    x = np.random.default_rng(0).uniform(-500, 500, size=(10_000, 2))
    for noise in (None, np.full(2, 3.0)):
        u = agent.act(x, noise)
        assert np.all(u >= [-1, 2]) and np.all(u <= [1, 5])


def test_soft_updates_follow_exponential_average():
    cfg = DdpgConfig(tau=0.1, batch_size=4)
    agent = DdpgAgent(([0], [1]), ([-1], [1]), cfg, seed=0)
    rng = np.random.default_rng(0)
    target = agent.actor_target.params.detach().clone().double()
    for _ in range(6):
        x = rng.uniform(size=(4, 1))
        agent.update(x, rng.uniform(-1, 1, (4, 1)), rng.normal(size=4), x)
        target = 0.9 * target + 0.1 * agent.actor.params.detach().double()
    torch.testing.assert_close(agent.actor_target.params.detach().double(), target, rtol=1e-5, atol=1e-6)


def test_critic_regresses_immediate_reward_with_zero_discount():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(512, 2))
    u = rng.uniform(-1, 1, size=(512, 1))
    r = np.sin(3 * x[:, 0]) + x[:, 1] * u[:, 0]
    cfg = DdpgConfig(gamma=0.0, batch_size=128, critic_lr=3e-3)
    agent = DdpgAgent(([0, 0], [1, 1]), ([-1], [1]), cfg, seed=0)
    buf = ReplayBuffer(1000, 2, 1)
    for k in range(512):
        buf.add(x[k], u[k], r[k], x[k])
    for _ in range(3000):
        agent.update(*buf.sample(128, rng))
    direct = Mlp(agent.critic.spec, generator=torch_generator(0))
    opt = Optimizer(direct, AdamConfig(3e-3))
    inputs = torch.cat([agent._state(x), to_tensor(agent._to_unit(u))], 1)
    target = to_tensor(r)[:, None]
    for _ in range(3000):
        idx = torch.from_numpy(rng.integers(0, 512, 128))
        opt.step(((direct(inputs[idx]) - target[idx]) ** 2).mean())
    with torch.no_grad():
        fit = direct(inputs).numpy()[:, 0]
    assert np.mean((agent.q_value(x, u) - fit) ** 2) <= 1e-2
    assert np.mean((agent.q_value(x, u) - r) ** 2) <= 1e-2


def test_smoke_run_bookkeeping(ib_data):
    ev = stub_evaluator(ib_data)
    cfg = DdpgConfig(episodes=1, horizon=3, batch_size=2)
    agent, buf, log = train_offline_ddpg(ev, ib_data, cfg, seed=0)
    assert len(buf) == 3
    assert set(buf.branch[:3]) <= {0, 1, 2}
    assert sum(log.branch_counts.values()) == 3
    assert set(log.branch_counts) == set(BRANCHES)
    assert len(log.episode_returns) == 1
    assert agent.updates == 2


def test_replay_rewards_recompute_from_stored_seeds(ib_data):
    ev = stub_evaluator(ib_data)
    _, buf, _ = train_offline_ddpg(ev, ib_data, DdpgConfig(episodes=2, horizon=20, batch_size=8), seed=3)
    idx = buf.indices()
    for k in idx[::7]:
        s = ev.summarize(np.concatenate([buf.x[k], buf.u[k]])[None, :], int(buf.seed[k]))
        value, code = penalize(s.raw, s.kappa, s.varkappa, ev.epsilon_, ev.c)
        assert buf.r[k] == value[0]
        assert buf.branch[k] == code[0]
    assert buf.seed[idx[0]] == step_seed(3, 0, 0)


def test_next_states_come_from_pooled_samples(ib_data):
    ev = stub_evaluator(ib_data)
    _, buf, _ = train_offline_ddpg(ev, ib_data, DdpgConfig(episodes=1, horizon=5, batch_size=64), seed=1)
    norm = ib_data.normalizer
    for k in buf.indices():
        s = ev.summarize(np.concatenate([buf.x[k], buf.u[k]])[None, :], int(buf.seed[k]), keep_samples=True)
        pooled = norm.inverse_transform(s.samples[:, 0].reshape(-1, 5), "y")
        lo, hi = ib_data.schema.bounds("conditional")
        assert np.any(np.all(np.isclose(np.clip(pooled, lo, hi), buf.x_next[k]), axis=1))


def test_training_is_deterministic(ib_data):
    ev = stub_evaluator(ib_data)
    cfg = DdpgConfig(episodes=2, horizon=10, batch_size=8)
    a1, b1, l1 = train_offline_ddpg(ev, ib_data, cfg, seed=5)
    a2, b2, l2 = train_offline_ddpg(ev, ib_data, cfg, seed=5)
    assert l1.episode_returns == l2.episode_returns
    torch.testing.assert_close(a1.actor.params, a2.actor.params, rtol=0, atol=0)


def test_schema_without_state_mapping_rejected():
    ds = ProcessDataset(Schema.from_dims(1, 1, 1), np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)))
    with pytest.raises(ConfigurationError, match="mapping"):
        train_offline_ddpg(object(), ds)


def test_uncalibrated_evaluator_rejected(ib_data):
    ens = GaussianStubEnsemble(np.full((2, 5), 0.5), [0.01, 0.02], 8, normalizer=ib_data.normalizer)
    with pytest.raises(ConfigurationError, match="calibrated"):
        train_offline_ddpg(PenalizedEvaluator(ens, IB_REWARD), ib_data)


def test_checkpoint_round_trip(tmp_path, ib_data):
    ev = stub_evaluator(ib_data)
    agent, _, _ = train_offline_ddpg(ev, ib_data, DdpgConfig(episodes=1, horizon=4, batch_size=2), seed=0)
    loaded = DdpgAgent.load(agent.save(tmp_path / "agent"))
    x = ib_data.x[:20]
    np.testing.assert_array_equal(agent.act(x), loaded.act(x))
    np.testing.assert_array_equal(agent.q_value(x, agent.act(x)), loaded.q_value(x, agent.act(x)))


class _ZeroAgent:
    def act(self, states):
        return np.zeros((len(states), 3))


def test_evaluate_zero_actor_matches_autonomous_drift():
    cfg = SurrogateConfig()
    mean, std = evaluate_policy(_ZeroAgent(), cfg, n_episodes=20, T=30, seed=4)
    drift = policy_return(lambda s, rng: np.zeros((len(s), 3)), 20, 30, 4, cfg)
    assert mean == drift.mean() and std == drift.std(ddof=1)
    assert (mean, std) == evaluate_policy(_ZeroAgent(), cfg, n_episodes=20, T=30, seed=4)
