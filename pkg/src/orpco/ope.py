"""Off-policy evaluation of discrete-control policies from logged records.

Four estimators share one set of inputs: realised rewards ``r_k`` of the
logged pairs ``(x_k, u_k)``, importance weights
``w_k = p_target(u_k | x_k) / p_log(u_k | x_k)`` and a reward model ``r_hat``
evaluated at the logged controls and at the target policy's controls.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, NumericalError
from .gpn import GaussianProbabilisticNetwork
from .nn import AdamConfig, Mlp, MlpSpec, Optimizer, to_tensor, torch_generator
from .validation import check_conditions, check_training_data, spawn_seeds

DENSITY_FLOOR = 1e-6
WEIGHT_CAP = 100.0


# -- propensities -----------------------------------------------------------------


class LoggingPropensity(BaseEstimator):
    """Diagonal-Gaussian ``p_log(u | x)`` from a probabilistic network.

    Inputs and controls are standardised internally; densities are returned
    in the original control units and floored at ``density_floor``.
    """

    def __init__(self, hidden_dims=(64, 64), epochs=100, batch_size=256, learning_rate=1e-3,
                 variance_floor=1e-4, density_floor=DENSITY_FLOOR, random_state=0):
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.variance_floor = variance_floor
        self.density_floor = density_floor
        self.random_state = random_state

    def fit(self, X, U):
        if len(X) == 0:
            raise ConfigurationError("cannot fit a propensity model on an empty dataset")
        X, U = check_conditions(X), check_conditions(U)
        self.x_scaler_ = StandardScaler().fit(X)
        self.u_scaler_ = StandardScaler().fit(U)
        self.network_ = GaussianProbabilisticNetwork(
            self.hidden_dims, self.epochs, self.batch_size, self.learning_rate,
            self.variance_floor, self.random_state,
        ).fit(self.x_scaler_.transform(X), self.u_scaler_.transform(U))
        return self

    def moments(self, X):
        """Mean and standard deviation of ``u | x`` in control units."""
        check_is_fitted(self, "network_")
        mean, var = self.network_.predict(self.x_scaler_.transform(check_conditions(X)), return_var=True)
        scale = self.u_scaler_.scale_
        return self.u_scaler_.inverse_transform(mean), np.sqrt(var) * scale

    def density(self, X, U):
        mean, std = self.moments(X)
        dens = np.prod(stats.norm.pdf(check_conditions(U), mean, std), axis=1)
        return np.maximum(dens, self.density_floor)


@dataclass(frozen=True)
class GaussianPropensity:
    """Diagonal Gaussian over controls at one condition."""

    mean: np.ndarray
    std: np.ndarray
    density_floor: float = DENSITY_FLOOR

    def density(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return np.maximum(np.prod(stats.norm.pdf(U, self.mean, self.std), axis=1), self.density_floor)

    def to_dict(self):
        return {"mean": np.asarray(self.mean).tolist(), "std": np.asarray(self.std).tolist()}


def fit_gaussian(samples, std_floor=1e-3, density_floor=DENSITY_FLOOR) -> GaussianPropensity:
    """Per-dimension mean and (floored) standard deviation of repeated control outputs."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) < 2:
        raise ConfigurationError("need at least two samples to fit a Gaussian")
    std = np.maximum(samples.std(axis=0, ddof=1), std_floor)
    return GaussianPropensity(samples.mean(axis=0), std, density_floor)


def fit_logging_propensity(train, **params) -> LoggingPropensity:
    return LoggingPropensity(**params).fit(train.x, train.u)


def fit_target_propensity(policy, x, n_repeats=10, seed=0, std_floor=1e-3) -> GaussianPropensity:
    """Gaussian over the controls the policy emits at ``x`` under ``n_repeats`` seeds."""
    outputs = [policy.optimize(x, s)[0] for s in spawn_seeds(seed, n_repeats)]
    return fit_gaussian(np.stack(outputs), std_floor)


# -- reward model -------------------------------------------------------------------


class RewardPredictor(BaseEstimator):
    """``r_hat(x, u)``: an MLP regressor on standardised inputs, trained on squared error."""

    def __init__(self, hidden_dims=(64, 64), epochs=100, batch_size=256, learning_rate=1e-3,
                 random_state=0):
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, XU, r):
        XU, r = check_training_data(XU, r)
        rng = np.random.default_rng(self.random_state)
        self.scaler_ = StandardScaler().fit(XU)
        self.r_mean_, self.r_scale_ = float(r.mean()), float(r.std()) or 1.0
        self.network_ = Mlp(MlpSpec(XU.shape[1], tuple(self.hidden_dims), 1),
                            generator=torch_generator(rng.integers(2**62)))
        opt = Optimizer(self.network_, AdamConfig(self.learning_rate))
        X = to_tensor(self.scaler_.transform(XU))
        y = to_tensor((r - self.r_mean_) / self.r_scale_)
        n, bs = len(X), min(self.batch_size, len(X))
        for _ in range(self.epochs):
            perm = torch.from_numpy(rng.permutation(n))
            for start in range(0, n, bs):
                idx = perm[start:start + bs]
                opt.step(((self.network_(X[idx]) - y[idx]) ** 2).mean())
        return self

    def predict(self, XU):
        check_is_fitted(self, "network_")
        with torch.no_grad():
            out = self.network_(to_tensor(self.scaler_.transform(check_conditions(XU)))).numpy()[:, 0]
        return out.astype(float) * self.r_scale_ + self.r_mean_


# -- estimators ---------------------------------------------------------------------


def importance_weights(p_target, p_log, floor=DENSITY_FLOOR):
    p_target = np.asarray(p_target, dtype=float)
    p_log = np.maximum(np.asarray(p_log, dtype=float), floor)
    return p_target / p_log


def estimate_dm(r_hat_policy):
    r = np.asarray(r_hat_policy, dtype=float)
    if r.size == 0:
        raise ConfigurationError("no records")
    return float(r.mean())


def estimate_ips(weights, rewards):
    w, r = np.asarray(weights, dtype=float), np.asarray(rewards, dtype=float)
    return float(np.mean(w * r))


def estimate_wis(weights, rewards):
    w, r = np.asarray(weights, dtype=float), np.asarray(rewards, dtype=float)
    total = w.sum()
    if not total > 0:
        raise NumericalError("all importance weights are zero")
    return float(np.sum(w * r) / total)


def estimate_dr(r_hat_policy, weights, rewards, r_hat_logged):
    r_hat_policy, w = np.asarray(r_hat_policy, dtype=float), np.asarray(weights, dtype=float)
    resid = np.asarray(rewards, dtype=float) - np.asarray(r_hat_logged, dtype=float)
    return float(np.mean(r_hat_policy + w * resid))


def effective_sample_size(weights):
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


@dataclass
class OpeReport:
    dm: float
    ips: float
    wis: float
    dr: float
    weights: np.ndarray
    n_eff: float
    max_weight: float
    capped: dict

    def to_dict(self):
        d = asdict(self)
        d["weights"] = np.asarray(self.weights).tolist()
        return d


def ope_report(rewards, weights, r_hat_policy, r_hat_logged, cap=WEIGHT_CAP) -> OpeReport:
    """All four estimates; ``capped`` repeats IPS/WIS/DR with weights clipped at ``cap``."""
    w = np.asarray(weights, dtype=float)
    wc = np.minimum(w, cap)
    report = OpeReport(
        dm=estimate_dm(r_hat_policy),
        ips=estimate_ips(w, rewards),
        wis=estimate_wis(w, rewards),
        dr=estimate_dr(r_hat_policy, w, rewards, r_hat_logged),
        weights=w,
        n_eff=effective_sample_size(w),
        max_weight=float(w.max()),
        capped={"cap": cap, "n_capped": int(np.sum(w > cap)),
                "ips": estimate_ips(wc, rewards), "wis": estimate_wis(wc, rewards),
                "dr": estimate_dr(r_hat_policy, wc, rewards, r_hat_logged)},
    )
    values = [report.dm, report.ips, report.wis, report.dr]
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite estimate among {values}")
    return report


def evaluate_offline(test, policy, reward_fn, predictor, logging, n_repeats=10, seed=0):
    """OPE of a discrete policy on a test split.

    The target density at each logged record comes from ``n_repeats``
    seed-varied optimisations; the policy's control is their mean.
    Returns ``(report, policy_controls)``.
    """
    rewards = reward_fn(test.y)
    targets = [fit_target_propensity(policy, x, n_repeats, s)
               for x, s in zip(test.x, spawn_seeds(seed, len(test)))]
    p_target = np.array([t.density(u)[0] for t, u in zip(targets, test.u)])
    u_star = np.stack([t.mean for t in targets])
    weights = importance_weights(p_target, logging.density(test.x, test.u))
    r_hat_policy = predictor.predict(np.hstack([test.x, u_star]))
    r_hat_logged = predictor.predict(test.inputs)
    return ope_report(rewards, weights, r_hat_policy, r_hat_logged), u_star
