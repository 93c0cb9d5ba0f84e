"""Monte-Carlo reward evaluation with epistemic-uncertainty penalties.

For an input ``(x, u)`` every ensemble member draws ``N`` results. From those
samples we get

* the raw expected reward, the mean of ``r(y)`` over all ``M * N`` draws;
* ``kappa``, the mean pairwise squared Hellinger distance between the
  members' Gaussian moment fits (disagreement);
* ``varkappa``, the mean Frobenius norm of the members' covariances (spread);
* ``disc``, the largest pairwise squared Hellinger distance.

The penalised reward shrinks positive rewards by ``(1 - kappa)``, inflates
negative ones by ``(1 + kappa)`` and replaces the reward by the floor ``c``
once ``varkappa`` exceeds the calibrated threshold ``epsilon``. Moments are
computed in normalised result coordinates; rewards on raw results.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ensemble import empirical_moments
from .exceptions import ConfigurationError, NumericalError
from .validation import check_conditions, spawn_seeds

EVALUATORS = ("rp", "f1", "f3", "f4")
BRANCHES = ("penalized_positive", "penalized_negative", "cutoff")

DISCRETE_C = 0.0
CONTINUOUS_C = -2000.0
DISCRETE_MOPO_WEIGHT = 1.0
CONTINUOUS_MOPO_WEIGHT = 1000.0


@dataclass(frozen=True)
class RewardFunction:
    """Known reward ``r(y)``, vectorised over the last axis of raw results."""

    fn: Callable[[np.ndarray], np.ndarray]
    name: str = "reward"
    bounds: tuple[float, float] | None = None

    def __call__(self, y):
        return np.asarray(self.fn(np.asarray(y, dtype=float)), dtype=float)


def box_indicator(lower, upper, name="pass_rate") -> RewardFunction:
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)

    def fn(y):
        return np.all((y >= lower) & (y <= upper), axis=-1).astype(float)

    return RewardFunction(fn, name, (0.0, 1.0))


# ---------------------------------------------------------------------------
# divergences


def _chol(a, jitter):
    d = a.shape[-1]
    try:
        return np.linalg.cholesky(a + jitter * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance not positive definite after jitter") from exc


def _logdet(chol):
    return 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)


def squared_hellinger(mu_i, cov_i, mu_j, cov_j, jitter=1e-6):
    """Closed-form squared Hellinger distance between two Gaussians.

    Works on stacked arrays too (leading batch axes). Determinants come from
    Cholesky factors in log space; the exponent is clipped at -50.
    """
    mu_i, mu_j = np.asarray(mu_i, dtype=float), np.asarray(mu_j, dtype=float)
    cov_i, cov_j = np.asarray(cov_i, dtype=float), np.asarray(cov_j, dtype=float)
    if mu_i.ndim == 0:
        mu_i, mu_j = mu_i[None], mu_j[None]
        cov_i, cov_j = cov_i.reshape(1, 1), cov_j.reshape(1, 1)
    mid = 0.5 * (cov_i + cov_j)
    li, lj, lm = _chol(cov_i, jitter), _chol(cov_j, jitter), _chol(mid, jitter)
    diff = mu_i - mu_j
    w = np.linalg.solve(lm, diff[..., None])[..., 0]
    maha = np.sum(w * w, axis=-1)
    log_coef = 0.25 * _logdet(li) + 0.25 * _logdet(lj) - 0.5 * _logdet(lm)
    h2 = 1.0 - np.exp(np.maximum(log_coef - maha / 8.0, -50.0))
    return np.clip(h2, 0.0, 1.0)


def pairwise_squared_hellinger(means, covs, jitter=1e-6):
    """All ``i < j`` distances: ``means (..., M, d)``, ``covs (..., M, d, d)`` -> ``(..., M(M-1)/2)``."""
    m = means.shape[-2]
    i, j = np.triu_indices(m, k=1)
    return squared_hellinger(means[..., i, :], covs[..., i, :, :],
                             means[..., j, :], covs[..., j, :, :], jitter)


def _unpack(moments):
    if isinstance(moments, tuple) and len(moments) == 2 and np.ndim(moments[0]) >= 2:
        return np.asarray(moments[0], float), np.asarray(moments[1], float)
    means = np.stack([np.asarray(m, float) for m, _ in moments])
    covs = np.stack([np.asarray(c, float) for _, c in moments])
    return means, covs


def compute_kappa(moments, jitter=1e-6):
    """Mean squared Hellinger distance over member pairs.

    ``moments`` is a list of ``(mean, cov)`` per member or a stacked
    ``(means, covs)`` tuple.
    """
    means, covs = _unpack(moments)
    if means.shape[-2] < 2:
        raise ValueError("kappa needs the moments of at least two members")
    return pairwise_squared_hellinger(means, covs, jitter).mean(axis=-1)


def compute_disc(moments, jitter=1e-6):
    means, covs = _unpack(moments)
    if means.shape[-2] < 2:
        raise ValueError("disc needs the moments of at least two members")
    return pairwise_squared_hellinger(means, covs, jitter).max(axis=-1)


def compute_varkappa(moments):
    """Mean Frobenius norm of the member covariances."""
    _, covs = _unpack(moments)
    return np.linalg.norm(covs, ord="fro", axis=(-2, -1)).mean(axis=-1)


def penalize(raw, kappa, varkappa, epsilon, c):
    """Apply the three-branch rule; returns ``(values, branch_codes)``.

    Branch codes index :data:`BRANCHES`. ``varkappa == epsilon`` stays in the
    penalised branches.
    """
    raw, kappa, varkappa = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (raw, kappa, varkappa)))
    cutoff = varkappa > epsilon
    value = np.where(raw > 0, (1.0 - kappa) * raw, (1.0 + kappa) * raw)
    value = np.where(cutoff, float(c), value)
    code = np.where(cutoff, 2, np.where(raw > 0, 0, 1))
    return value, code


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class PenaltyCalibration:
    epsilon: float
    c: float
    M: int = 5
    N: int = 1000

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.N < 2:
            raise ConfigurationError("N must be at least 2")


@dataclass
class UncertaintyReport:
    kappa: float
    varkappa: float
    disc: float
    raw_reward: float
    penalized_reward: float
    branch: str
    per_member_moments: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_member_moments"] = [{"mean": np.asarray(m).tolist(), "cov": np.asarray(c).tolist()}
                                   for m, c in self.per_member_moments]
        return d


@dataclass
class Summary:
    """Batched per-input statistics from one sampling pass."""

    raw: np.ndarray
    kappa: np.ndarray
    varkappa: np.ndarray
    disc: np.ndarray
    max_frobenius: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    samples: np.ndarray | None = None


def summarize_samples(samples, rewards, jitter=1e-6, keep_samples=False) -> Summary:
    """``samples (M, B, N, d)`` normalised results and ``rewards (M, B, N)``."""
    means, covs = empirical_moments(samples)  # (M, B, d), (M, B, d, d)
    means, covs = np.moveaxis(means, 0, 1), np.moveaxis(covs, 0, 1)
    h2 = pairwise_squared_hellinger(means, covs, jitter)
    frob = np.linalg.norm(covs, ord="fro", axis=(-2, -1))
    return Summary(
        raw=rewards.mean(axis=(0, 2)),
        kappa=h2.mean(axis=-1),
        varkappa=frob.mean(axis=-1),
        disc=h2.max(axis=-1),
        max_frobenius=frob.max(axis=-1),
        means=means,
        covs=covs,
        samples=samples if keep_samples else None,
    )


class PenalizedEvaluator(BaseEstimator):
    """Scores raw ``[x, u]`` inputs under any of the evaluators ``rp``, ``f1``, ``f3``, ``f4``.

    ``fit`` calibrates ``epsilon_`` (max ``varkappa``) and
    ``disc_threshold_`` (max ``disc``) on validation inputs unless they are
    given explicitly.

    Parameters
    ----------
    ensemble : fitted ensemble
        Trained on normalised data.
    reward : RewardFunction
        Applied to raw (denormalised) results.
    normalizer : Normalizer, optional
        Defaults to ``ensemble.normalizer_``.
    c : float
        Reward assigned when ``varkappa > epsilon``.
    mopo_weight : float
        Uncertainty weight of the ``f4`` comparator.
    """

    def __init__(self, ensemble, reward, normalizer=None, n_samples=1000, c=DISCRETE_C,
                 epsilon=None, disc_threshold=None, mopo_weight=DISCRETE_MOPO_WEIGHT,
                 jitter=1e-6, chunk_rows=100, random_state=0):
        self.ensemble = ensemble
        self.reward = reward
        self.normalizer = normalizer
        self.n_samples = n_samples
        self.c = c
        self.epsilon = epsilon
        self.disc_threshold = disc_threshold
        self.mopo_weight = mopo_weight
        self.jitter = jitter
        self.chunk_rows = chunk_rows
        self.random_state = random_state

    @property
    def normalizer_(self):
        norm = self.normalizer if self.normalizer is not None else getattr(self.ensemble, "normalizer_", None)
        if norm is None:
            raise ConfigurationError("no normaliser: pass one or train the ensemble via train_ensemble")
        return norm

    def fit(self, X, y=None):
        """Calibrate thresholds on raw validation inputs ``X``."""
        if len(X) == 0:
            raise ConfigurationError("calibration needs a non-empty validation set")
        X = check_conditions(X)
        s = self.summarize(X, self.random_state)
        self.epsilon_ = float(self.epsilon) if self.epsilon is not None else float(s.varkappa.max())
        self.disc_threshold_ = (float(self.disc_threshold) if self.disc_threshold is not None
                                else float(s.disc.max()))
        if not self.epsilon_ > 0:
            raise ConfigurationError(f"calibrated epsilon must be positive, got {self.epsilon_}")
        self.calibration_ = {"n_validation": len(X), "varkappa": s.varkappa, "disc": s.disc}
        return self

    @property
    def calibration(self) -> PenaltyCalibration:
        check_is_fitted(self, "epsilon_")
        return PenaltyCalibration(self.epsilon_, self.c, len(self.ensemble.members_), self.n_samples)

    def summarize(self, X, random_state=None, keep_samples=False) -> Summary:
        """One sampling pass over raw inputs ``X``; deterministic given ``random_state``."""
        X = check_conditions(X)
        norm = self.normalizer_
        Xn = norm.transform(X, "xu")
        chunks = range(0, len(X), self.chunk_rows)
        seeds = spawn_seeds(random_state, len(chunks))
        parts = []
        for start, seed in zip(chunks, seeds):
            samples = self.ensemble.sample(Xn[start:start + self.chunk_rows], self.n_samples, seed)
            rewards = self.reward(norm.inverse_transform(samples, "y"))
            parts.append(summarize_samples(samples, rewards, self.jitter, keep_samples))
        if len(parts) == 1:
            return parts[0]
        merged = {f: np.concatenate([getattr(p, f) for p in parts])
                  for f in ("raw", "kappa", "varkappa", "disc", "max_frobenius", "means", "covs")}
        if keep_samples:
            merged["samples"] = np.concatenate([p.samples for p in parts], axis=1)
        return Summary(**merged)

    def values(self, summary: Summary, evaluator="rp"):
        if evaluator == "f1":
            return summary.raw.copy()
        if evaluator == "rp":
            check_is_fitted(self, "epsilon_")
            return penalize(summary.raw, summary.kappa, summary.varkappa, self.epsilon_, self.c)[0]
        if evaluator == "f3":
            check_is_fitted(self, "disc_threshold_")
            return np.where(summary.disc <= self.disc_threshold_, summary.raw, 0.0)
        if evaluator == "f4":
            return summary.raw - self.mopo_weight * summary.max_frobenius
        raise ConfigurationError(f"unknown evaluator {evaluator!r}; choose from {EVALUATORS}")

    def evaluate(self, X, evaluator="rp", random_state=None):
        """Evaluator values for each raw input row."""
        seed = self.random_state if random_state is None else random_state
        return self.values(self.summarize(X, seed), evaluator)

    def reports(self, X, random_state=None) -> list[UncertaintyReport]:
        check_is_fitted(self, "epsilon_")
        seed = self.random_state if random_state is None else random_state
        s = self.summarize(X, seed)
        value, code = penalize(s.raw, s.kappa, s.varkappa, self.epsilon_, self.c)
        out = []
        for k in range(len(s.raw)):
            moments = [(s.means[k, i], s.covs[k, i]) for i in range(s.means.shape[1])]
            out.append(UncertaintyReport(float(s.kappa[k]), float(s.varkappa[k]), float(s.disc[k]),
                                         float(s.raw[k]), float(value[k]), BRANCHES[code[k]], moments))
        return out


# ---------------------------------------------------------------------------
# functional entry points


def _inputs(x, u):
    return np.hstack([np.atleast_2d(np.asarray(x, float)), np.atleast_2d(np.asarray(u, float))])


def expected_reward(ensemble, x, u, reward, N=1000, seed=0, normalizer=None):
    """Monte-Carlo mean of ``reward`` over the ``M * N`` pooled draws."""
    ev = PenalizedEvaluator(ensemble, reward, normalizer, n_samples=N)
    return float(ev.evaluate(_inputs(x, u), "f1", seed)[0])


def penalized_reward(ensemble, x, u, reward, calib: PenaltyCalibration, seed=0, normalizer=None):
    ev = PenalizedEvaluator(ensemble, reward, normalizer, n_samples=calib.N, c=calib.c,
                            epsilon=calib.epsilon)
    ev.epsilon_ = calib.epsilon
    return ev.reports(_inputs(x, u), seed)[0]


def calibrate_epsilon(ensemble, validation, N=1000, seed=0, reward=None, normalizer=None):
    """Largest ``varkappa`` over the validation inputs."""
    if len(validation) == 0:
        raise ConfigurationError("calibration needs a non-empty validation set")
    reward = reward or RewardFunction(lambda y: np.zeros(y.shape[:-1]), "zero")
    ev = PenalizedEvaluator(ensemble, reward, normalizer or validation.normalizer, n_samples=N,
                            random_state=seed)
    return ev.fit(validation.inputs).epsilon_


def f1_unpenalized(ensemble, x, u, reward, N=1000, seed=0, normalizer=None):
    return expected_reward(ensemble, x, u, reward, N, seed, normalizer)


def f3_morel(ensemble, x, u, reward, threshold, N=1000, seed=0, normalizer=None):
    ev = PenalizedEvaluator(ensemble, reward, normalizer, n_samples=N, disc_threshold=threshold)
    ev.disc_threshold_ = threshold
    return float(ev.evaluate(_inputs(x, u), "f3", seed)[0])


def f4_mopo(ensemble, x, u, reward, mopo_weight=DISCRETE_MOPO_WEIGHT, N=1000, seed=0, normalizer=None):
    ev = PenalizedEvaluator(ensemble, reward, normalizer, n_samples=N, mopo_weight=mopo_weight)
    return float(ev.evaluate(_inputs(x, u), "f4", seed)[0])
