"""Gaussian probabilistic networks: the diagonal-Gaussian baseline dynamics model."""
from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ensemble import BaseEnsemble
from .exceptions import TrainingError
from .nn import AdamConfig, Mlp, MlpSpec, Optimizer, to_tensor, torch_generator
from .validation import check_conditions, check_positive, check_training_data

GPN_GRID = {
    "n_layers": (1, 2, 3, 4),
    "width": (8, 16, 32, 64, 128, 256),
    "epochs": (50, 100, 200),
}


def gaussian_nll(mean, var, target):
    """Mean per-record negative log-likelihood of a diagonal Gaussian."""
    return 0.5 * (torch.log(2 * torch.pi * var) + (target - mean) ** 2 / var).sum(dim=1).mean()


class GaussianProbabilisticNetwork(BaseEstimator):
    """MLP predicting mean and diagonal variance ``softplus(raw) + variance_floor``."""

    def __init__(self, hidden_dims=(64, 64), epochs=100, batch_size=256, learning_rate=1e-3,
                 variance_floor=1e-4, random_state=None):
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.variance_floor = variance_floor
        self.random_state = random_state

    def _split(self, out):
        d = self.n_outputs_
        return out[:, :d], F.softplus(out[:, d:]) + self.variance_floor

    def fit(self, X, Y, X_val=None, Y_val=None):
        X, Y = check_training_data(X, Y)
        for name in ("epochs", "batch_size", "learning_rate", "variance_floor"):
            check_positive(name, getattr(self, name))
        n, d_in = X.shape
        self.n_features_in_, self.n_outputs_ = d_in, Y.shape[1]
        rng = np.random.default_rng(self.random_state)
        self.network_ = Mlp(MlpSpec(d_in, self.hidden_dims, 2 * self.n_outputs_),
                            generator=torch_generator(rng.integers(2**62)))
        opt = Optimizer(self.network_, AdamConfig(self.learning_rate))
        Xt, Yt = to_tensor(X), to_tensor(Y)
        bs = min(self.batch_size, n)
        history = []
        for epoch in range(self.epochs):
            perm = torch.from_numpy(rng.permutation(n))
            losses = []
            try:
                for start in range(0, n, bs):
                    idx = perm[start:start + bs]
                    mean, var = self._split(self.network_(Xt[idx]))
                    losses.append(opt.step(gaussian_nll(mean, var, Yt[idx])))
            except TrainingError as exc:
                raise TrainingError(str(exc), epoch=epoch) from exc
            entry = {"epoch": epoch, "nll": float(np.mean(losses))}
            if X_val is not None:
                entry["val_nll"] = self.nll(X_val, Y_val)
            history.append(entry)
        self.history_ = history
        return self

    def predict(self, X, return_var=False):
        check_is_fitted(self, "network_")
        X = check_conditions(X, self.n_features_in_)
        with torch.no_grad():
            mean, var = self._split(self.network_(to_tensor(X)))
        mean, var = mean.numpy().astype(float), var.numpy().astype(float)
        return (mean, var) if return_var else mean

    def nll(self, X, Y):
        mean, var = self.predict(X, return_var=True)
        Y = np.asarray(Y, dtype=float).reshape(mean.shape)
        return float(np.mean(np.sum(0.5 * (np.log(2 * np.pi * var) + (Y - mean) ** 2 / var), axis=1)))

    def sample(self, X, n_samples, random_state=None):
        mean, var = self.predict(X, return_var=True)
        rng = np.random.default_rng(random_state)
        eps = rng.standard_normal((len(mean), n_samples, self.n_outputs_))
        return mean[:, None, :] + np.sqrt(var)[:, None, :] * eps

    def save(self, directory):
        self.network_.save(Path(directory) / "network.json")
        (Path(directory) / "floor.txt").write_text(repr(float(self.variance_floor)))

    @classmethod
    def load(cls, directory):
        net = Mlp.load(Path(directory) / "network.json")
        floor = float((Path(directory) / "floor.txt").read_text())
        self = cls(hidden_dims=net.spec.hidden_dims, variance_floor=floor)
        self.network_ = net
        self.n_features_in_ = net.spec.input_dim
        self.n_outputs_ = net.spec.output_dim // 2
        return self


class GpnEnsemble(BaseEnsemble):
    kind = "gpn"

    def __init__(self, n_members=5, hidden_dims=(64, 64), epochs=100, batch_size=256,
                 learning_rate=1e-3, variance_floor=1e-4, random_state=None):
        self.n_members = n_members
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.variance_floor = variance_floor
        self.random_state = random_state

    def _make_member(self, seed):
        return GaussianProbabilisticNetwork(**self._member_params(), random_state=seed)


def search_gpn(X, Y, X_val, Y_val, grid=None, random_state=0, **fixed):
    """Exhaustive grid search over depth, width and epochs by held-out NLL.

    Returns ``(best_params, log)`` where ``log`` lists every configuration tried.
    """
    grid = {**GPN_GRID, **(grid or {})}
    log = []
    best, best_nll = None, np.inf
    for n_layers, width, epochs in itertools.product(grid["n_layers"], grid["width"], grid["epochs"]):
        params = {"hidden_dims": (width,) * n_layers, "epochs": epochs, **fixed}
        model = GaussianProbabilisticNetwork(**params, random_state=random_state).fit(X, Y)
        score = model.nll(X_val, Y_val)
        log.append({"n_layers": n_layers, "width": width, "epochs": epochs, "val_nll": score})
        if score < best_nll:
            best, best_nll = params, score
    return best, log
