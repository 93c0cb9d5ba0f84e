"""Offline DDPG trained entirely inside the learned ensemble.

Each environment step queries the ensemble at ``(x_t, u_t)``: the evaluator
turns the pooled samples into a (penalised) reward and one of the pooled
samples, picked uniformly, becomes the next state through the schema's
result-to-state mapping.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .exceptions import ConfigurationError, TrainingError
from .nn import AdamConfig, Mlp, MlpSpec, Optimizer, soft_update, to_tensor, torch_generator
from .reward import BRANCHES, penalize


@dataclass(frozen=True)
class DdpgConfig:
    episodes: int = 1500
    horizon: int = 100
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 128
    buffer_size: int = 100_000
    hidden_dims: tuple[int, ...] = (64, 64)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 < self.tau <= 1:
            raise ConfigurationError(f"tau must lie in (0, 1], got {self.tau}")
        for name in ("episodes", "horizon", "batch_size", "buffer_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.reward_scale <= 0:
            raise ConfigurationError("reward_scale must be positive")

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


class OUNoise:
    """Ornstein-Uhlenbeck process ``n <- n - theta * n + sigma * N(0, 1)``."""

    def __init__(self, dim, theta=0.15, sigma=0.2, rng=None):
        self.dim, self.theta, self.sigma = dim, theta, sigma
        self.rng = np.random.default_rng(rng)
        self.reset()

    def reset(self):
        self.state = np.zeros(self.dim)

    def __call__(self):
        self.state = self.state - self.theta * self.state + self.sigma * self.rng.standard_normal(self.dim)
        return self.state.copy()


class ReplayBuffer:
    """FIFO ring buffer of ``(x, u, r, x_next)`` with the sampling seed and branch of each reward."""

    def __init__(self, capacity, x_dim, u_dim):
        self.capacity = int(capacity)
        self.x = np.zeros((capacity, x_dim))
        self.u = np.zeros((capacity, u_dim))
        self.r = np.zeros(capacity)
        self.x_next = np.zeros((capacity, x_dim))
        self.seed = np.zeros(capacity, dtype=np.int64)
        self.branch = np.zeros(capacity, dtype=np.int8)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, x, u, r, x_next, seed=0, branch=0):
        k = self._next
        self.x[k], self.u[k], self.r[k], self.x_next[k] = x, u, r, x_next
        self.seed[k], self.branch[k] = seed, branch
        self._next = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def indices(self):
        """Storage slots in insertion order (oldest first)."""
        start = self._next if self._size == self.capacity else 0
        return (start + np.arange(self._size)) % self.capacity

    def sample(self, batch_size, rng):
        idx = rng.integers(0, self._size, size=batch_size)
        return self.x[idx], self.u[idx], self.r[idx], self.x_next[idx]


class DdpgAgent:
    """Actor ``pi(x)`` and critic ``Q(x, u)`` with target copies.

    Networks see states scaled to ``[0, 1]`` with the supplied state bounds;
    the actor's tanh output is mapped onto the control box.
    """

    def __init__(self, state_bounds, control_bounds, config: DdpgConfig = DdpgConfig(), seed=0):
        self.config = config
        self.x_lo, self.x_hi = (np.asarray(b, dtype=float) for b in state_bounds)
        self.u_lo, self.u_hi = (np.asarray(b, dtype=float) for b in control_bounds)
        p, q = len(self.x_lo), len(self.u_lo)
        gen = torch_generator(seed)
        self.actor = Mlp(MlpSpec(p, config.hidden_dims, q, "relu", "tanh"), generator=gen)
        self.critic = Mlp(MlpSpec(p + q, config.hidden_dims, 1), generator=gen)
        self.actor_target, self.critic_target = self.actor.clone(), self.critic.clone()
        self.actor_opt = Optimizer(self.actor, AdamConfig(config.actor_lr))
        self.critic_opt = Optimizer(self.critic, AdamConfig(config.critic_lr))
        self.updates = 0

    # -- coordinate maps -------------------------------------------------

    def _state(self, x):
        return to_tensor((np.atleast_2d(x) - self.x_lo) / (self.x_hi - self.x_lo))

    def _to_unit(self, u):
        """Control units -> ``[-1, 1]``."""
        return 2.0 * (np.atleast_2d(u) - self.u_lo) / (self.u_hi - self.u_lo) - 1.0

    def _from_unit(self, a):
        return self.u_lo + (np.asarray(a) + 1.0) * 0.5 * (self.u_hi - self.u_lo)

    def act(self, x, noise=None):
        """Deterministic action (plus optional noise in ``[-1, 1]`` units), always inside the control box."""
        single = np.ndim(x) == 1
        with torch.no_grad():
            a = self.actor(self._state(x)).numpy().astype(float)
        if noise is not None:
            a = np.clip(a + noise, -1.0, 1.0)
        u = np.clip(self._from_unit(a), self.u_lo, self.u_hi)
        return u[0] if single else u

    def q_value(self, x, u):
        with torch.no_grad():
            return self.critic(torch.cat([self._state(x), to_tensor(self._to_unit(u))], 1)).numpy()[:, 0]

    # -- learning --------------------------------------------------------

    def update(self, x, u, r, x_next):
        """One critic and one actor step on a batch, then soft target updates."""
        cfg = self.config
        s, s_next = self._state(x), self._state(x_next)
        a = to_tensor(self._to_unit(u))
        r = to_tensor(np.asarray(r, dtype=float) * cfg.reward_scale)[:, None]
        with torch.no_grad():
            q_next = self.critic_target(torch.cat([s_next, self.actor_target(s_next)], 1))
            target = r + cfg.gamma * q_next
        critic_loss = ((self.critic(torch.cat([s, a], 1)) - target) ** 2).mean()
        c_loss = self.critic_opt.step(critic_loss)
        actor_loss = -self.critic(torch.cat([s, self.actor(s)], 1)).mean()
        a_loss = self.actor_opt.step(actor_loss)
        # the actor step leaves gradients on the critic; they are cleared on its next step
        soft_update(self.critic_target, self.critic, cfg.tau)
        soft_update(self.actor_target, self.actor, cfg.tau)
        self.updates += 1
        return c_loss, a_loss

    # -- persistence -----------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("actor", "critic", "actor_target", "critic_target"):
            getattr(self, name).save(directory / f"{name}.json")
        meta = {"config": self.config.to_dict(),
                "state_bounds": [self.x_lo.tolist(), self.x_hi.tolist()],
                "control_bounds": [self.u_lo.tolist(), self.u_hi.tolist()]}
        (directory / "agent.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta = json.loads((directory / "agent.json").read_text(encoding="utf-8"))
        cfg = meta["config"]
        cfg["hidden_dims"] = tuple(cfg["hidden_dims"])
        agent = cls(meta["state_bounds"], meta["control_bounds"], DdpgConfig(**cfg))
        for name in ("actor", "critic", "actor_target", "critic_target"):
            setattr(agent, name, Mlp.load(directory / f"{name}.json"))
        agent.actor_opt = Optimizer(agent.actor, AdamConfig(agent.config.actor_lr))
        agent.critic_opt = Optimizer(agent.critic, AdamConfig(agent.config.critic_lr))
        return agent


def step_seed(seed, episode, t) -> int:
    """Sampling seed of one model step, recoverable for audits."""
    return int(np.random.SeedSequence([int(seed), int(episode), int(t)]).generate_state(1, np.uint64)[0] >> np.uint64(2))


@dataclass
class TrainingLog:
    episode_returns: list
    branch_counts: dict

    def to_csv(self, path):
        lines = ["episode,return"] + [f"{k},{r!r}" for k, r in enumerate(self.episode_returns)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train_offline_ddpg(evaluator, dataset, config: DdpgConfig = DdpgConfig(), seed=0, kind="rp",
                       initial_states=None):
    """Algorithm: roll the agent out in the ensemble and learn from penalised rewards.

    ``evaluator`` is a calibrated :class:`~orpco.reward.PenalizedEvaluator`
    whose ``n_samples`` sets N. Returns ``(agent, buffer, log)``.
    """
    schema = dataset.schema
    if schema.next_state is None:
        raise ConfigurationError("continuous control needs a schema with a result-to-state mapping")
    if kind == "rp" and not hasattr(evaluator, "epsilon_"):
        raise ConfigurationError("the evaluator must be calibrated before training")
    rng = np.random.default_rng(seed)
    x_lo, x_hi = schema.bounds("conditional")
    u_lo, u_hi = schema.bounds("control")
    agent = DdpgAgent((x_lo, x_hi), (u_lo, u_hi), config, seed=int(rng.integers(2**62)))
    buffer = ReplayBuffer(config.buffer_size, schema.n_conditional, schema.n_control)
    noise = OUNoise(schema.n_control, config.ou_theta, config.ou_sigma, rng)
    norm = evaluator.normalizer_
    mapping = np.asarray(schema.next_state)
    if initial_states is None:
        starts = dataset.x if dataset.t is None else dataset.x[dataset.t == dataset.t.min()]
    else:
        starts = np.atleast_2d(np.asarray(initial_states, dtype=float))
    if len(starts) == 0:
        raise ConfigurationError("no initial states available")

    returns = []
    counts = dict.fromkeys(BRANCHES, 0)
    for episode in range(config.episodes):
        x = starts[rng.integers(len(starts))].copy()
        noise.reset()
        total = 0.0
        for t in range(config.horizon):
            u = agent.act(x, noise())
            s_seed = step_seed(seed, episode, t)
            summary = evaluator.summarize(np.concatenate([x, u])[None, :], s_seed, keep_samples=True)
            r = float(evaluator.values(summary, kind)[0])
            branch = 0
            if hasattr(evaluator, "epsilon_"):
                branch = int(penalize(summary.raw, summary.kappa, summary.varkappa,
                                      evaluator.epsilon_, evaluator.c)[1][0])
            pooled = summary.samples[:, 0].reshape(-1, summary.samples.shape[-1])
            y = norm.inverse_transform(pooled[rng.integers(len(pooled))], "y")
            x_next = np.clip(y[mapping], x_lo, x_hi)
            buffer.add(x, u, r, x_next, s_seed, branch)
            counts[BRANCHES[branch]] += 1
            total += r
            if len(buffer) >= config.batch_size:
                try:
                    agent.update(*buffer.sample(config.batch_size, rng))
                except TrainingError as exc:
                    raise TrainingError(f"episode {episode}: {exc}", step=agent.updates) from exc
            x = x_next
        returns.append(total)
    return agent, buffer, TrainingLog(returns, counts)


def evaluate_policy(agent, env_config, n_episodes=100, T=100, seed=0):
    """Mean and standard deviation of undiscounted returns of the deterministic actor."""
    from .ib import policy_return

    returns = policy_return(lambda states, rng: agent.act(states), n_episodes, T, seed, env_config)
    return float(returns.mean()), float(returns.std(ddof=1)) if n_episodes > 1 else 0.0
