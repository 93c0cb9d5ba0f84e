"""A small, fully specified stand-in for the Industrial Benchmark.

State ``x = [v, g, s, consumption, fatigue]``: velocity, gain and shift are
steering variables in ``[0, 100]``; consumption and fatigue are
non-negative costs. Actions ``u = [dv, dg, ds]`` in ``[-1, 1]`` move the
steering variables by ``step_scale`` units each. The result ``y`` is the
next state, so ``x_{t+1} = y_t`` and the reward is ``-c_{t+1} - 3 f_{t+1}``.

Laws (``eta``, ``eta'`` standard normal)::

    c' = max(0, 0.02 g' + 0.01 |v' - 50| + 0.5 f' + sigma_c eta)
    f' = max(0, 0.9 f + 0.01 max(0, v' - 60) + 0.01 max(0, g' - 60)
                + instability * max(0, instability_gain - g') + sigma_f eta')

The optional ``instability`` term (off by default) makes very low gain
unstable, so that fatigue builds up quickly there.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import ProcessDataset, Schema, Trajectory, VariableSpace
from .exceptions import ConfigurationError

STATE_NAMES = ("velocity", "gain", "shift", "consumption", "fatigue")
ACTION_NAMES = ("d_velocity", "d_gain", "d_shift")
STEER_MAX = 100.0
COST_MAX = 100.0
SAFE_LOW, SAFE_HIGH = 40.0, 60.0
SAFE_MEAN, SAFE_STD = 0.5, 1.0 / np.sqrt(3.0)


@dataclass(frozen=True)
class SurrogateConfig:
    step_scale: float = 10.0
    sigma_c: float = 0.2
    sigma_f: float = 0.05
    fatigue_decay: float = 0.9
    instability: float = 0.0
    instability_gain: float = 15.0
    init_low: float = 20.0
    init_high: float = 80.0

    def __post_init__(self):
        if self.sigma_c < 0 or self.sigma_f < 0 or self.instability < 0:
            raise ConfigurationError("noise scales and instability must be non-negative")
        if not 0 <= self.init_low < self.init_high <= STEER_MAX:
            raise ConfigurationError("initial steering range must lie inside [0, 100]")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class IbState:
    v: float
    g: float
    s: float
    consumption: float = 0.0
    fatigue: float = 0.0

    def __post_init__(self):
        for name in ("v", "g", "s"):
            if not 0.0 <= getattr(self, name) <= STEER_MAX:
                raise ConfigurationError(f"{name} must lie in [0, 100]")
        if self.consumption < 0 or self.fatigue < 0:
            raise ConfigurationError("consumption and fatigue must be non-negative")

    def to_array(self):
        return np.array([self.v, self.g, self.s, self.consumption, self.fatigue], dtype=float)

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in np.asarray(a).ravel()[:5]))


def ib_schema() -> Schema:
    """Variables for logged transitions; each result maps to the same-position state."""
    bounds = [(0.0, STEER_MAX)] * 3 + [(0.0, COST_MAX)] * 2
    variables = [VariableSpace(n, "conditional", *b) for n, b in zip(STATE_NAMES, bounds)]
    variables += [VariableSpace(n, "control", -1.0, 1.0) for n in ACTION_NAMES]
    variables += [VariableSpace(f"next_{n}", "result", *b) for n, b in zip(STATE_NAMES, bounds)]
    return Schema(tuple(variables), next_state=tuple(range(5)))


def ib_reward(y):
    """``-c - 3 f`` on (batches of) next states."""
    y = np.asarray(y, dtype=float)
    return -y[..., 3] - 3.0 * y[..., 4]


def step_batch(states, actions, rng, config: SurrogateConfig = SurrogateConfig()):
    """Advance ``(n, 5)`` states under ``(n, 3)`` actions; returns ``(next_states, rewards)``.

    Actions are clipped to ``[-1, 1]`` before they are applied.
    """
    rng = np.random.default_rng(rng)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.clip(np.atleast_2d(np.asarray(actions, dtype=float)), -1.0, 1.0)
    n = len(states)
    eta = rng.standard_normal((n, 2))
    steer = np.clip(states[:, :3] + config.step_scale * actions, 0.0, STEER_MAX)
    v, g = steer[:, 0], steer[:, 1]
    fatigue = (config.fatigue_decay * states[:, 4]
               + 0.01 * np.maximum(0.0, v - 60.0)
               + 0.01 * np.maximum(0.0, g - 60.0)
               + config.instability * np.maximum(0.0, config.instability_gain - g)
               + config.sigma_f * eta[:, 1])
    fatigue = np.clip(fatigue, 0.0, COST_MAX)
    consumption = 0.02 * g + 0.01 * np.abs(v - 50.0) + 0.5 * fatigue + config.sigma_c * eta[:, 0]
    consumption = np.clip(consumption, 0.0, COST_MAX)
    nxt = np.column_stack([steer, consumption, fatigue])
    return nxt, ib_reward(nxt)


def step(state: IbState, action, rng, config: SurrogateConfig = SurrogateConfig()):
    nxt, r = step_batch(state.to_array()[None, :], np.asarray(action, dtype=float)[None, :], rng, config)
    return IbState.from_array(nxt[0]), float(r[0])


def initial_states(n, rng, config: SurrogateConfig = SurrogateConfig()):
    """Steering variables uniform on the init range, costs from one zero-action step."""
    rng = np.random.default_rng(rng)
    s = np.zeros((n, 5))
    s[:, :3] = rng.uniform(config.init_low, config.init_high, size=(n, 3))
    return step_batch(s, np.zeros((n, 3)), rng, config)[0]


# -- behaviour policies ---------------------------------------------------------


def behavior_random(rng, n=None):
    rng = np.random.default_rng(rng)
    return rng.uniform(-1.0, 1.0, size=3 if n is None else (n, 3))


def behavior_safe(states, rng, clip=False):
    """Push velocity and gain back towards ``[40, 60]``; shift moves at random.

    Below 40 the delta is ``z ~ N(0.5, 1/sqrt(3))``, above 60 it is ``-z`` and
    in between uniform on ``[-1, 1]``. Raw draws are returned; the environment
    clips them when the action is applied (``clip=True`` clips here).
    """
    rng = np.random.default_rng(rng)
    states = np.asarray(states, dtype=float)
    single = states.ndim == 1
    states = np.atleast_2d(states)
    n = len(states)
    z = rng.normal(SAFE_MEAN, SAFE_STD, size=(n, 2))
    uniform = rng.uniform(-1.0, 1.0, size=(n, 3))
    steer = states[:, :2]
    out = uniform.copy()
    out[:, :2] = np.where(steer < SAFE_LOW, z, np.where(steer > SAFE_HIGH, -z, uniform[:, :2]))
    if clip:
        out = np.clip(out, -1.0, 1.0)
    return out[0] if single else out


BEHAVIORS = {
    "random": lambda states, rng: behavior_random(rng, len(states)),
    "safe": behavior_safe,
}


def rollout_dataset(policy="safe", n_traj=300, T=100, seed=0, config: SurrogateConfig = SurrogateConfig()):
    """Simulate ``n_traj`` trajectories of length ``T`` under a behaviour policy.

    Returns ``(dataset, trajectories)``; records are trajectory-major and the
    recorded action is the clipped one actually applied.
    """
    if policy not in BEHAVIORS:
        raise ConfigurationError(f"unknown behaviour policy {policy!r}; choose from {sorted(BEHAVIORS)}")
    if n_traj < 1 or T < 1:
        raise ConfigurationError("n_traj and T must be positive")
    rng = np.random.default_rng(seed)
    act = BEHAVIORS[policy]
    xs = np.empty((T, n_traj, 5))
    us = np.empty((T, n_traj, 3))
    ys = np.empty((T, n_traj, 5))
    rs = np.empty((T, n_traj))
    state = initial_states(n_traj, rng, config)
    for t in range(T):
        u = np.clip(act(state, rng), -1.0, 1.0)
        nxt, r = step_batch(state, u, rng, config)
        xs[t], us[t], ys[t], rs[t] = state, u, nxt, r
        state = nxt
    trajectories = [Trajectory(xs[:, k], us[:, k], rs[:, k], ys[:, k]) for k in range(n_traj)]
    flat = lambda a: np.swapaxes(a, 0, 1).reshape(n_traj * T, -1)
    t_index = np.tile(np.arange(T), n_traj)
    dataset = ProcessDataset(ib_schema(), flat(xs), flat(us), flat(ys), t=t_index).fit_normalizer()
    return dataset, trajectories


def policy_return(act, n_episodes, T, seed, config: SurrogateConfig = SurrogateConfig()):
    """Undiscounted returns of ``act(states, rng) -> actions`` over parallel episodes."""
    rng = np.random.default_rng(seed)
    state = initial_states(n_episodes, rng, config)
    total = np.zeros(n_episodes)
    for _ in range(T):
        state, r = step_batch(state, act(state, rng), rng, config)
        total += r
    return total
