"""Deterministic stand-ins for trained ensembles."""
import numpy as np

from orpco.data import Normalizer


def identity_normalizer(n_conditional, n_control, n_result):
    total = n_conditional + n_control + n_result
    return Normalizer(np.zeros(total), np.ones(total), n_conditional, n_control)


class GaussianStubEnsemble:
    """Member ``i`` draws ``N(offsets[i] + X @ slope, scales[i]**2 I)``."""

    def __init__(self, offsets, scales, n_inputs, slope=None, normalizer=None, schema=None):
        self.offsets = np.atleast_2d(np.asarray(offsets, float))
        self.scales = np.asarray(scales, float)
        self.members_ = list(range(len(self.offsets)))
        d = self.offsets.shape[1]
        self.slope = np.zeros((n_inputs, d)) if slope is None else np.asarray(slope, float)
        self.n_features_in_ = n_inputs
        self.n_outputs_ = d
        if normalizer is not None:
            self.normalizer_ = normalizer
        if schema is not None:
            self.schema_ = schema

    def sample(self, X, n_samples, random_state=None):
        X = np.atleast_2d(np.asarray(X, float))
        rng = np.random.default_rng(random_state)
        base = X @ self.slope
        out = []
        for off, s in zip(self.offsets, self.scales):
            eps = rng.standard_normal((len(X), n_samples, self.n_outputs_))
            out.append(base[:, None, :] + off + s * eps)
        return np.stack(out)
