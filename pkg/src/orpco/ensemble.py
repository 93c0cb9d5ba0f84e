"""Ensembles of conditional samplers approximating ``p(y | x, u)``.

Both backends (conditional GANs and Gaussian probabilistic networks) are
scikit-learn estimators exposing ``fit(X, Y)`` and
``sample(X, n_samples, random_state)``; ``X`` holds normalised ``[x, u]``
rows and ``Y`` normalised results. Everything downstream only talks to the
ensemble through ``sample``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Normalizer, ProcessDataset, Schema
from .exceptions import ConfigurationError, DataError, TrainingError
from .validation import check_conditions, check_training_data, spawn_seeds


def empirical_moments(samples):
    """Sample mean and unbiased covariance over the second-to-last axis.

    ``samples`` has shape ``(..., N, d)``; returns ``(mean (..., d), cov (..., d, d))``.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim < 2:
        raise ValueError("samples must have shape (..., N, d)")
    n = s.shape[-2]
    if n < 2:
        raise ValueError(f"need at least 2 samples for a covariance, got {n}")
    mu = s.mean(axis=-2)
    c = s - mu[..., None, :]
    cov = np.einsum("...ni,...nj->...ij", c, c) / (n - 1)
    return mu, cov


class BaseEnsemble(BaseEstimator):
    """Shared fit/sample/persistence logic; subclasses supply ``_make_member``."""

    kind: str = ""
    min_members = 2

    def _make_member(self, seed):
        raise NotImplementedError

    def _member_params(self):
        return {k: v for k, v in self.get_params().items() if k not in ("n_members", "random_state")}

    def fit(self, X, Y, X_val=None, Y_val=None):
        if self.n_members < self.min_members:
            raise ConfigurationError(
                f"an ensemble needs at least {self.min_members} members, got {self.n_members}")
        X, Y = check_training_data(X, Y)
        seeds = spawn_seeds(self.random_state, self.n_members)
        members = []
        for i, seed in enumerate(seeds):
            member = self._make_member(seed)
            try:
                if X_val is not None:
                    member.fit(X, Y, X_val=X_val, Y_val=Y_val)
                else:
                    member.fit(X, Y)
            except TrainingError as exc:
                raise TrainingError(str(exc), member=i) from exc
            members.append(member)
        self.members_ = members
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        return self

    def __len__(self):
        check_is_fitted(self, "members_")
        return len(self.members_)

    def sample(self, X, n_samples, random_state=None):
        """Results drawn by every member: array of shape ``(M, n_rows, n_samples, n_outputs)``.

        Each member gets its own stream derived from ``random_state``.
        """
        check_is_fitted(self, "members_")
        X = check_conditions(X, self.n_features_in_)
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        seeds = spawn_seeds(random_state, len(self.members_))
        return np.stack([m.sample(X, n_samples, s) for m, s in zip(self.members_, seeds)])

    # -- persistence ---------------------------------------------------------

    def save(self, directory, schema: Schema | None = None, normalizer: Normalizer | None = None):
        """One sub-folder per member plus ``manifest.json``."""
        check_is_fitted(self, "members_")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        schema = schema or getattr(self, "schema_", None)
        normalizer = normalizer or getattr(self, "normalizer_", None)
        manifest = {
            "kind": self.kind,
            "n_members": len(self.members_),
            "params": _jsonable(self.get_params()),
            "n_features_in": self.n_features_in_,
            "n_outputs": self.n_outputs_,
            "schema_hash": schema.digest() if schema else None,
            "schema": schema.to_json() if schema else None,
            "normalizer": normalizer.to_dict() if normalizer else None,
        }
        for i, m in enumerate(self.members_):
            sub = directory / f"member_{i}"
            sub.mkdir(exist_ok=True)
            m.save(sub)
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return directory


def _jsonable(params):
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}


def load_ensemble(directory) -> BaseEnsemble:
    from .cgan import CganEnsemble, ConditionalGAN
    from .gpn import GaussianProbabilisticNetwork, GpnEnsemble

    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise DataError(f"no ensemble manifest in {directory}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    cls, member_cls = {"cgan": (CganEnsemble, ConditionalGAN),
                       "gpn": (GpnEnsemble, GaussianProbabilisticNetwork)}[manifest["kind"]]
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in manifest["params"].items()}
    ens = cls(**params)
    ens.members_ = [member_cls.load(directory / f"member_{i}") for i in range(manifest["n_members"])]
    ens.n_features_in_ = manifest["n_features_in"]
    ens.n_outputs_ = manifest["n_outputs"]
    if manifest.get("schema") is not None:
        ens.schema_ = Schema.from_json(manifest["schema"])
    if manifest.get("normalizer") is not None:
        ens.normalizer_ = Normalizer.from_dict(manifest["normalizer"])
    return ens


def train_ensemble(train: ProcessDataset, kind="cgan", n_members=5, seed=0, validation=None, **params):
    """Fit an ensemble on a normalised dataset and attach its schema and normaliser."""
    from .cgan import CganEnsemble
    from .gpn import GpnEnsemble

    if train.normalizer is None:
        raise ConfigurationError("training dataset must carry a fitted normaliser")
    cls = {"cgan": CganEnsemble, "gpn": GpnEnsemble}.get(kind)
    if cls is None:
        raise ConfigurationError(f"unknown ensemble kind {kind!r}")
    X, Y = train.normalized()
    ens = cls(n_members=n_members, random_state=seed, **params)
    if validation is not None and kind == "gpn":
        Xv, Yv = validation.with_normalizer(train.normalizer).normalized()
        ens.fit(X, Y, X_val=Xv, Y_val=Yv)
    else:
        ens.fit(X, Y)
    ens.schema_ = train.schema
    ens.normalizer_ = train.normalizer
    return ens
