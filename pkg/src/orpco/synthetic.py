"""Synthetic processes with known ground truth.

``MixtureProcess`` stands in for a discrete-control production line: three
conditional parameters, four controls and seven correlated, non-Gaussian
results scored by a pass/fail tolerance rule. Its logging policy only covers
part of the control space, and just past the logged range of the first
control sits a cliff (the "trap") that a model trained on the logs cannot
know about.

``GaussianBandit`` is a contextual bandit with Gaussian policies whose values
are available in closed form, used to check the off-policy estimators.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri, softmax
from scipy.stats import qmc

from .data import ProcessDataset, Schema
from .exceptions import ConfigurationError


def box_probability(mean, cov, lower, upper, n_points=4096, seed=0):
    """``P(lower <= Y <= upper)`` for ``Y ~ N(mean, cov)``.

    Genz's separation-of-variables transform integrated over a fixed
    scrambled Sobol point set, so the result is a deterministic function of
    its arguments and ``seed``.
    """
    mean, lower, upper = (np.asarray(a, dtype=float) for a in (mean, lower, upper))
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    d = len(mean)
    w = qmc.Sobol(max(d - 1, 1), scramble=True, seed=seed).random(n_points)
    y = np.zeros((n_points, d))
    f = np.ones(n_points)
    for i in range(d):
        shift = y[:, :i] @ chol[i, :i]
        lo = ndtr((lower[i] - mean[i] - shift) / chol[i, i])
        hi = ndtr((upper[i] - mean[i] - shift) / chol[i, i])
        f = f * (hi - lo)
        if i < d - 1:
            y[:, i] = ndtri(np.clip(lo + w[:, i] * (hi - lo), 1e-300, 1 - 1e-16))
    return float(f.mean())


def _correlated_cov(n_result, std, correlation, rng, spread=0.4):
    """Full covariance with ``corr(y0, y1) == correlation`` and random structure elsewhere."""
    a = np.zeros((n_result, n_result))
    a[0, 0] = a[1, 1] = 1.0
    a[0, 1] = a[1, 0] = correlation
    rest = n_result - 2
    if rest > 0:
        load = rng.normal(size=(rest, 2)) * spread
        block = load @ load.T
        d = np.sqrt(np.diag(block) + (1 - spread**2))
        block = block / np.outer(d, d)
        np.fill_diagonal(block, 1.0)
        a[2:, 2:] = block
    s = np.asarray(std) * np.ones(n_result)
    return a * np.outer(s, s)


@dataclass
class MixtureProcess:
    """Ground-truth conditional distribution ``p*(y | x, u)`` plus a logging policy.

    Results are ``y = mean(x, u) + offset_c + scale(x, u) * noise_c`` where
    component ``c`` is picked with softmax weights that depend on ``(x, u)``.
    Off-nominal settings hurt twice: the mean shifts every result upwards by
    ``defect_load * defect(x, u)`` and the scatter widens by
    ``scale = 1 + noise_growth * defect(x, u)``. A record passes when all
    results stay below ``threshold``.
    """

    n_conditional: int = 3
    n_control: int = 4
    n_result: int = 7
    correlation: float = 0.9
    noise_std: float = 0.22
    x_mean: float = 0.5
    x_std: float = 0.12
    free_low: float = 0.1
    free_high: float = 0.6
    trap_start: float = 0.62
    trap_slope: float = 12.0
    defect_slope: float = 1.5
    tracking_weight: float = 10.0
    tracking_noise: float = 0.05
    defect_load: float = 0.3
    noise_growth: float = 0.5
    threshold: float = 0.65
    y_lower: float = -6.0
    y_upper: float = 8.0
    seed: int = 0
    x_coef: np.ndarray = field(default=None, repr=False)
    offsets: np.ndarray = field(default=None, repr=False)
    covs: np.ndarray = field(default=None, repr=False)
    logit_w: np.ndarray = field(default=None, repr=False)
    logit_b: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_control < 1 or self.n_conditional < 1 or self.n_result < 2:
            raise ConfigurationError("need >=1 conditional, >=1 control and >=2 result variables")
        if not -1 < self.correlation < 1:
            raise ConfigurationError("correlation must lie in (-1, 1)")
        if not 0 <= self.free_low < self.free_high <= 1:
            raise ConfigurationError("need 0 <= free_low < free_high <= 1")
        rng = np.random.default_rng(self.seed)
        p, q, r = self.n_conditional, self.n_control, self.n_result
        if self.x_coef is None:
            self.x_coef = rng.uniform(-0.4, 0.4, size=(r, p))
        if self.offsets is None:
            off = np.zeros((3, r))
            pattern = rng.choice([-1.0, 1.0], size=max(r - 2, 0))
            off[1, 2:] = 1.6 * self.noise_std * pattern
            off[2, 2:] = -1.2 * self.noise_std * pattern
            self.offsets = off
        if self.covs is None:
            self.covs = np.stack([_correlated_cov(r, self.noise_std, self.correlation, rng)
                                  for _ in range(3)])
        if self.logit_w is None:
            self.logit_w = rng.normal(scale=2.0, size=(3, p + q))
        if self.logit_b is None:
            self.logit_b = np.zeros(3)
        for name in ("x_coef", "offsets", "covs", "logit_w", "logit_b"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self._chols = np.linalg.cholesky(self.covs)

    # -- structure ---------------------------------------------------------

    @property
    def schema(self) -> Schema:
        p, q, r = self.n_conditional, self.n_control, self.n_result
        lower = [0.0] * (p + q) + [self.y_lower] * r
        upper = [1.0] * (p + q) + [self.y_upper] * r
        return Schema.from_dims(p, q, r, lower, upper)

    def ideal_tracking(self, x):
        """Best value of controls ``u1..`` given ``x``; the logging policy aims here."""
        x = np.atleast_2d(x)
        q = self.n_control - 1
        idx = np.arange(q) % self.n_conditional
        return 0.5 + 0.6 * (x[:, idx] - 0.5)

    def defect(self, x, u):
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        d = self.defect_slope * np.maximum(0.0, self.free_high - u[:, 0])
        d = d + self.trap_slope * np.maximum(0.0, u[:, 0] - self.trap_start)
        if self.n_control > 1:
            d = d + self.tracking_weight * np.sum((u[:, 1:] - self.ideal_tracking(x)) ** 2, axis=1)
        return d

    def mean(self, x, u):
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        return self.defect_load * self.defect(x, u)[:, None] + (x - self.x_mean) @ self.x_coef.T

    def noise_scale(self, x, u):
        return 1.0 + self.noise_growth * self.defect(x, u)

    def weights(self, x, u):
        xu = np.hstack([np.atleast_2d(x), np.atleast_2d(u)])
        return softmax(xu @ self.logit_w.T + self.logit_b, axis=1)

    def reward(self, y):
        """Pass/fail rule: 1 when every result lies inside its tolerance box."""
        y = np.asarray(y)
        return np.all((y <= self.threshold) & (y >= self.y_lower), axis=-1).astype(float)

    @property
    def reward_box(self):
        r = self.n_result
        return np.full(r, self.y_lower), np.full(r, self.threshold)

    # -- sampling ----------------------------------------------------------

    def sample_results(self, x, u, rng, n=None):
        """One result per row of ``(x, u)``, or ``n`` results at a single input."""
        rng = np.random.default_rng(rng)
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        if n is not None:
            x, u = np.repeat(x[:1], n, 0), np.repeat(u[:1], n, 0)
        w = self.weights(x, u)
        comp = (rng.uniform(size=(len(x), 1)) > np.cumsum(w, axis=1)).sum(axis=1)
        comp = np.minimum(comp, 2)
        eps = rng.standard_normal(size=(len(x), self.n_result))
        noise = np.einsum("nij,nj->ni", self._chols[comp], eps) * self.noise_scale(x, u)[:, None]
        return self.mean(x, u) + self.offsets[comp] + noise

    def sample_conditions(self, n, rng):
        rng = np.random.default_rng(rng)
        x = rng.normal(self.x_mean, self.x_std, size=(n, self.n_conditional))
        return np.clip(x, 0.0, 1.0)

    def logging_controls(self, x, rng):
        rng = np.random.default_rng(rng)
        x = np.atleast_2d(x)
        u = np.empty((len(x), self.n_control))
        u[:, 0] = rng.uniform(self.free_low, self.free_high, size=len(x))
        if self.n_control > 1:
            track = self.ideal_tracking(x)
            u[:, 1:] = track + rng.normal(0.0, self.tracking_noise, size=track.shape)
        return np.clip(u, 0.0, 1.0)

    def logging_density(self, x, u):
        """Density of the logging policy at ``u`` given ``x`` (clipping ignored)."""
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        inside = (u[:, 0] >= self.free_low) & (u[:, 0] <= self.free_high)
        dens = inside / (self.free_high - self.free_low)
        if self.n_control > 1:
            z = stats.norm.pdf(u[:, 1:], self.ideal_tracking(x), self.tracking_noise)
            dens = dens * np.prod(z, axis=1)
        return dens

    # -- ground truth ------------------------------------------------------

    def expected_reward(self, x, u, seed=0):
        """Pass probability: weighted Gaussian box probabilities per component."""
        x, u = np.atleast_2d(x), np.atleast_2d(u)
        lo, hi = self.reward_box
        means = self.mean(x, u)
        scale = self.noise_scale(x, u)
        w = self.weights(x, u)
        out = np.zeros(len(x))
        for k in range(len(x)):
            for c in range(3):
                m = means[k] + self.offsets[c]
                out[k] += w[k, c] * box_probability(m, self.covs[c] * scale[k] ** 2, lo, hi, seed=seed)
        return out

    def mc_expected_reward(self, x, u, n, seed):
        y = self.sample_results(x, u, seed, n=n)
        r = self.reward(y)
        return float(r.mean()), float(r.std(ddof=1) / np.sqrt(n))

    # -- persistence -------------------------------------------------------

    def to_json(self) -> dict:
        doc = {}
        for k, v in self.__dict__.items():
            if k.startswith("_"):
                continue
            doc[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "MixtureProcess":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**doc)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_synthetic_discrete(spec: MixtureProcess, n: int, seed: int) -> ProcessDataset:
    """Draw ``n`` logged records: ``x`` from its prior, ``u`` from the logging policy, ``y`` from ``p*``."""
    if n < 0:
        raise ConfigurationError("n must be non-negative")
    rng = np.random.default_rng(seed)
    x = spec.sample_conditions(n, rng)
    u = spec.logging_controls(x, rng)
    y = spec.sample_results(x, u, rng) if n else np.zeros((0, spec.n_result))
    y = np.clip(y, spec.y_lower, spec.y_upper)
    ds = ProcessDataset(spec.schema, x, u, y, np.arange(n))
    return ds.fit_normalizer() if n else ds


@dataclass
class GaussianBandit:
    """Contextual bandit with closed-form policy values.

    ``x ~ N(0, I)``, logging ``u ~ N(A x, s_b^2 I)``, target
    ``u ~ N(B x + c, s_t^2 I)``. The mean reward
    ``exp(-|u - Theta x|^2 / (2 width^2))`` lies in ``(0, 1]`` like a pass
    probability; observed rewards add optional Gaussian noise.
    """

    n_context: int = 2
    n_action: int = 2
    logging_std: float = 1.0
    target_std: float = 0.6
    width: float = 1.0
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        p, q = self.n_context, self.n_action
        self.theta = rng.normal(scale=0.5, size=(q, p))
        self.A = self.theta + rng.normal(scale=0.3, size=(q, p))
        self.B = self.theta + rng.normal(scale=0.1, size=(q, p))
        self.c = rng.normal(scale=0.1, size=q)

    def mean_reward(self, x, u):
        return np.exp(-np.sum((u - x @ self.theta.T) ** 2, axis=1) / (2 * self.width**2))

    def _value(self, gain, shift, std) -> float:
        # u - Theta x ~ N(shift, D D^T + std^2 I) with D = gain - Theta
        d = gain - self.theta
        cov = d @ d.T + std**2 * np.eye(self.n_action)
        m = np.eye(self.n_action) + cov / self.width**2
        quad = shift @ np.linalg.solve(m, shift) / self.width**2
        return float(np.exp(-0.5 * quad) / np.sqrt(np.linalg.det(m)))

    def target_value(self) -> float:
        return self._value(self.B, self.c, self.target_std)

    def logging_value(self) -> float:
        return self._value(self.A, np.zeros(self.n_action), self.logging_std)

    def _density(self, u, mean, std):
        return np.prod(stats.norm.pdf(u, mean, std), axis=1)

    def logging_density(self, x, u):
        return self._density(u, x @ self.A.T, self.logging_std)

    def target_density(self, x, u):
        return self._density(u, x @ self.B.T + self.c, self.target_std)

    def sample_target(self, x, rng):
        return x @ self.B.T + self.c + rng.normal(0, self.target_std, size=(len(x), self.n_action))

    def sample(self, n, rng):
        """``(x, u, reward)`` logged under the logging policy."""
        rng = np.random.default_rng(rng)
        x = rng.standard_normal((n, self.n_context))
        u = x @ self.A.T + rng.normal(0, self.logging_std, size=(n, self.n_action))
        r = self.mean_reward(x, u) + rng.normal(0, self.noise_std, size=n) * (self.noise_std > 0)
        return x, u, r
