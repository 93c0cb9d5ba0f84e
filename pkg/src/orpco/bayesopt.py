"""Per-query Bayesian optimisation of control parameters.

For a fixed condition ``x`` the policy searches ``u* = argmax_u f(u | x)``
over the declared control box, where ``f`` is one of the evaluators of
:class:`~orpco.reward.PenalizedEvaluator`. Every probe of one query reuses
the same sampling seed (common random numbers), so differences between
probes reflect ``u`` rather than Monte-Carlo noise.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, OrpcoError
from .reward import EVALUATORS
from .validation import check_conditions, spawn_seeds


@dataclass(frozen=True)
class BoConfig:
    n_init: int = 10
    n_iter: int = 40
    acquisition: str = "ei"
    xi: float = 0.01
    length_scale: float = 0.3
    length_scale_bounds: tuple[float, float] = (1e-2, 1e2)
    noise: float = 1e-6
    n_candidates: int = 1024
    n_refine: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_init < 2:
            raise ConfigurationError(f"n_init must be >= 2, got {self.n_init}")
        if self.n_iter < 0:
            raise ConfigurationError(f"n_iter must be >= 0, got {self.n_iter}")
        if self.acquisition != "ei":
            raise ConfigurationError(f"unsupported acquisition {self.acquisition!r}; only 'ei' is implemented")
        if self.n_candidates < 1 or self.n_refine < 0:
            raise ConfigurationError("n_candidates must be >= 1 and n_refine >= 0")


@dataclass
class BoTrace:
    """Every probe in evaluation order, in the caller's (unscaled) coordinates."""

    points: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def add(self, point, value):
        self.points.append(np.asarray(point, dtype=float).copy())
        self.values.append(float(value))

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.values))  # first maximum wins ties

    @property
    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(np.asarray(self.values))

    def to_dict(self):
        return {"u": [p.tolist() for p in self.points], "value": list(self.values)}


def expected_improvement(mean, std, best, xi=0.01):
    std = np.maximum(std, 1e-12)
    z = (mean - best - xi) / std
    return (mean - best - xi) * stats.norm.cdf(z) + std * stats.norm.pdf(z)


def _surrogate(config: BoConfig, dim, seed):
    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * RBF(np.full(dim, config.length_scale), config.length_scale_bounds)
    return GaussianProcessRegressor(kernel, alpha=config.noise, normalize_y=True,
                                    n_restarts_optimizer=1, random_state=seed)


def _propose(gp, best, config: BoConfig, dim, rng):
    cand = rng.uniform(size=(config.n_candidates, dim))
    mean, std = gp.predict(cand, return_std=True)
    ei = expected_improvement(mean, std, best, config.xi)
    order = np.argsort(-ei, kind="stable")
    point, score = cand[order[0]], ei[order[0]]

    def neg_ei(v):
        m, s = gp.predict(v[None, :], return_std=True)
        return -expected_improvement(m, s, best, config.xi)[0]

    for start in cand[order[: config.n_refine]]:
        res = optimize.minimize(neg_ei, start, method="L-BFGS-B", bounds=[(0.0, 1.0)] * dim)
        if -res.fun > score:
            point, score = res.x, -res.fun
    return np.clip(point, 0.0, 1.0)


def bayes_optimize(objective, dim, config: BoConfig = BoConfig(), seed=None):
    """Maximise ``objective`` over the unit box ``[0, 1]^dim``.

    ``objective`` maps an array of shape ``(k, dim)`` to ``k`` values. The
    initial design is evaluated in one batch; later probes one at a time.
    Returns ``(best_point, trace)``.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    trace = BoTrace()

    def run(points, offset):
        try:
            vals = np.asarray(objective(points), dtype=float).reshape(len(points))
        except OrpcoError as exc:
            raise type(exc)(f"probe {offset}: {exc}") from exc
        if not np.all(np.isfinite(vals)):
            raise OrpcoError(f"probe {offset}: evaluator returned a non-finite value")
        for p, v in zip(points, vals):
            trace.add(p, v)

    run(rng.uniform(size=(config.n_init, dim)), 0)
    gp = _surrogate(config, dim, int(rng.integers(2**31)))
    for it in range(config.n_iter):
        X, y = np.asarray(trace.points), np.asarray(trace.values)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            gp.fit(X, y)
        run(_propose(gp, y.max(), config, dim, rng)[None, :], config.n_init + it)
    return trace.points[trace.best_index], trace


class DiscretePolicy(BaseEstimator):
    """Maps conditions to controls by running one BO search per query.

    Parameters
    ----------
    evaluator : PenalizedEvaluator
        Calibrated evaluator bound to a trained ensemble.
    kind : {"rp", "f1", "f3", "f4"}
        Which evaluator value the search maximises.
    control_bounds : (lower, upper), optional
        Search box; defaults to the control space of the ensemble's schema.
    """

    def __init__(self, evaluator, kind="rp", bo=BoConfig(), control_bounds=None):
        self.evaluator = evaluator
        self.kind = kind
        self.bo = bo
        self.control_bounds = control_bounds

    def fit(self, X=None, y=None):
        if self.kind not in EVALUATORS:
            raise ConfigurationError(f"unknown evaluator {self.kind!r}; choose from {EVALUATORS}")
        if self.control_bounds is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.control_bounds)
        else:
            schema = getattr(self.evaluator.ensemble, "schema_", None)
            if schema is None:
                raise ConfigurationError("control_bounds required when the ensemble carries no schema")
            lo, hi = schema.bounds("control")
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ConfigurationError("control bounds must satisfy lower < upper")
        self.lower_, self.upper_ = lo, hi
        return self

    def optimize(self, x, seed=None):
        """``(u*, trace)`` for one condition vector ``x``; trace points are in control units."""
        check_is_fitted(self, "lower_")
        x = np.asarray(x, dtype=float).ravel()
        seed = self.bo.seed if seed is None else seed
        # one shared sampling stream for every probe of this query
        eval_seed, bo_seed = spawn_seeds(seed, 2)
        span = self.upper_ - self.lower_

        def objective(unit):
            u = self.lower_ + unit * span
            X = np.hstack([np.repeat(x[None, :], len(u), 0), u])
            return np.array([self.evaluator.evaluate(row[None, :], self.kind, eval_seed)[0] for row in X])

        best, trace = bayes_optimize(objective, len(span), self.bo, bo_seed)
        trace.points = [self.lower_ + p * span for p in trace.points]
        return trace.points[trace.best_index], trace

    def predict(self, X, seed=None):
        """Optimised controls for each condition row."""
        X = check_conditions(X)
        seeds = spawn_seeds(self.bo.seed if seed is None else seed, len(X))
        return np.stack([self.optimize(x, s)[0] for x, s in zip(X, seeds)])


def optimize_controls(policy: DiscretePolicy, x, seed=None):
    if not hasattr(policy, "lower_"):
        policy.fit()
    return policy.optimize(x, seed)


def true_values(policy, ground_truth, X, seed=None):
    """Ground-truth expected reward of the policy's controls at each condition in ``X``."""
    X = check_conditions(X)
    U = policy.predict(X, seed) if hasattr(policy, "predict") else np.asarray(policy(X))
    return ground_truth.expected_reward(X, U)


def policy_value_true(policy, ground_truth, n_queries, seed=0):
    """Average true expected reward of the policy over ``n_queries`` fresh conditions."""
    X = ground_truth.sample_conditions(n_queries, seed)
    return float(np.mean(true_values(policy, ground_truth, X, seed)))
