"""Conditional Wasserstein GANs with gradient penalty.

The generator maps ``[z, x, u]`` to a result vector, ``z ~ U(0, 1)^noise_dim``;
the critic scores ``[y, x, u]``. Conditions are concatenated raw (already
normalised) with the noise or result vector. By default results are
standardised per dimension before training: with unit-norm critic gradients,
narrow conditional spreads in ``[0, 1]`` coordinates otherwise give the
generator almost no signal about the spread.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ensemble import BaseEnsemble
from .exceptions import ConfigurationError, TrainingError
from .nn import AdamConfig, Mlp, MlpSpec, Optimizer, grad_input, soft_update, to_tensor, torch_generator
from .validation import check_conditions, check_positive, check_training_data


def critic_loss(critic: Mlp, real, fake, cond, gp_weight, alpha, penalize_conditions=True):
    """WGAN-GP critic objective; returns ``(loss, gradient norms on interpolates)``.

    ``alpha`` holds one interpolation coefficient per pair. The norm covers
    the whole critic input ``[y', x, u]`` unless ``penalize_conditions`` is
    false, in which case only the result block counts.
    """
    inter = (alpha * real + (1 - alpha) * fake).requires_grad_(True)
    g = grad_input(critic.spec, critic.params, torch.cat([inter, cond], 1), create_graph=True)
    norms = (g if penalize_conditions else g[:, : real.shape[1]]).norm(dim=1)
    loss = (critic(torch.cat([fake, cond], 1)).mean()
            - critic(torch.cat([real, cond], 1)).mean()
            + gp_weight * ((norms - 1.0) ** 2).mean())
    return loss, norms


class ConditionalGAN(BaseEstimator):
    """One conditional WGAN-GP.

    Parameters
    ----------
    noise_dim : int or None
        Latent width; ``None`` means ``n_outputs + 2``.
    epochs : int
        Passes over the training data. Each minibatch is one critic step and
        every ``n_critic`` critic steps are followed by one generator step.
    gp_weight : float
        Gradient-penalty coefficient (lambda).
    lr_final : float or None
        If set, both learning rates decay linearly from ``learning_rate`` to
        this value over the epochs of one ``fit`` call.
    standardize : bool
        Train on per-dimension z-scores of ``Y``; samples are mapped back.
    penalize_conditions : bool
        Take the gradient-penalty norm over ``[y', x, u]`` rather than ``y'``
        alone. With a result-only norm a one-dimensional critic can only flip
        the sign of its slope by passing through zero gradient, which the
        penalty forbids, and training drifts away from the data.
    ema_decay : float or None
        Samples come from an exponential moving average of the generator
        weights (updated after every generator step). ``None`` serves the raw
        generator.
    """

    def __init__(self, noise_dim=None, hidden_dims=(64, 64), epochs=3000, batch_size=256,
                 n_critic=5, gp_weight=10.0, learning_rate=1e-4, betas=(0.5, 0.9),
                 random_state=None, warm_start=False, lr_final=None, standardize=True,
                 penalize_conditions=True, ema_decay=0.99):
        self.noise_dim = noise_dim
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_critic = n_critic
        self.gp_weight = gp_weight
        self.learning_rate = learning_rate
        self.betas = betas
        self.random_state = random_state
        self.warm_start = warm_start
        self.lr_final = lr_final
        self.standardize = standardize
        self.penalize_conditions = penalize_conditions
        self.ema_decay = ema_decay

    def _check_params(self, n):
        for name in ("epochs", "batch_size", "n_critic", "learning_rate"):
            check_positive(name, getattr(self, name))
        check_positive("gp_weight", self.gp_weight, strict=False)
        if self.ema_decay is not None and not 0 <= self.ema_decay < 1:
            raise ConfigurationError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if n < self.batch_size:
            raise ConfigurationError(f"dataset has {n} records, smaller than one batch ({self.batch_size})")

    def fit(self, X, Y):
        X, Y = check_training_data(X, Y)
        n, d_cond = X.shape
        d_out = Y.shape[1]
        self._check_params(n)
        noise_dim = self.noise_dim or d_out + 2
        if self.warm_start and hasattr(self, "generator_"):
            rng, gen_t, opt_g, opt_d, critic_steps = self._state
            history = self.history_
        else:
            rng = np.random.default_rng(self.random_state)
            gen_t = torch_generator(rng.integers(2**62))
            self.generator_ = Mlp(MlpSpec(noise_dim + d_cond, self.hidden_dims, d_out), generator=gen_t)
            self.critic_ = Mlp(MlpSpec(d_out + d_cond, self.hidden_dims, 1), generator=gen_t)
            adam = AdamConfig(self.learning_rate, tuple(self.betas))
            opt_g, opt_d = Optimizer(self.generator_, adam), Optimizer(self.critic_, adam)
            history, critic_steps = [], 0
            self.generator_ema_ = self.generator_.clone() if self.ema_decay is not None else None
            if self.standardize:
                std = Y.std(axis=0)
                self.y_shift_, self.y_scale_ = Y.mean(axis=0), np.where(std > 0, std, 1.0)
            else:
                self.y_shift_, self.y_scale_ = np.zeros(d_out), np.ones(d_out)
        Xt, Yt = to_tensor(X), to_tensor((Y - self.y_shift_) / self.y_scale_)
        bs = self.batch_size
        first = len(history)
        for epoch in range(first, first + self.epochs):
            if self.lr_final is not None:
                frac = (epoch - first) / max(self.epochs - 1, 1)
                lr = self.learning_rate + frac * (self.lr_final - self.learning_rate)
                opt_g.set_lr(lr)
                opt_d.set_lr(lr)
            perm = torch.from_numpy(rng.permutation(n))
            d_losses, g_losses = [], []
            try:
                for start in range(0, n - bs + 1, bs):
                    idx = perm[start:start + bs]
                    cond, real = Xt[idx], Yt[idx]
                    z = torch.rand(bs, noise_dim, generator=gen_t)
                    with torch.no_grad():
                        fake = self.generator_(torch.cat([z, cond], 1))
                    alpha = torch.rand(bs, 1, generator=gen_t)
                    loss_d, _ = critic_loss(self.critic_, real, fake, cond, self.gp_weight, alpha,
                                            self.penalize_conditions)
                    d_losses.append(opt_d.step(loss_d))
                    critic_steps += 1
                    if critic_steps % self.n_critic == 0:
                        z = torch.rand(bs, noise_dim, generator=gen_t)
                        fake = self.generator_(torch.cat([z, cond], 1))
                        loss_g = -self.critic_(torch.cat([fake, cond], 1)).mean()
                        g_losses.append(opt_g.step(loss_g))
                        if self.generator_ema_ is not None:
                            soft_update(self.generator_ema_, self.generator_, 1.0 - self.ema_decay)
            except TrainingError as exc:
                raise TrainingError(str(exc), epoch=epoch) from exc
            history.append({"epoch": epoch,
                            "d_loss": float(np.mean(d_losses)),
                            "g_loss": float(np.mean(g_losses)) if g_losses else float("nan")})
        self.history_ = history
        self._state = (rng, gen_t, opt_g, opt_d, critic_steps)
        self.noise_dim_ = noise_dim
        self.n_features_in_ = d_cond
        self.n_outputs_ = d_out
        return self

    @property
    def sampler_(self) -> Mlp:
        """Network that serves samples: the weight average if kept, else the generator."""
        check_is_fitted(self, "generator_")
        ema = getattr(self, "generator_ema_", None)
        return self.generator_ if ema is None else ema

    def sample(self, X, n_samples, random_state=None, chunk_rows=250_000):
        """``n_samples`` results per condition row: shape ``(n_rows, n_samples, n_outputs)``."""
        net = self.sampler_
        X = check_conditions(X, self.n_features_in_)
        rng = np.random.default_rng(random_state)
        rows = len(X)
        z = rng.uniform(size=(rows * n_samples, self.noise_dim_))
        cond = np.repeat(X, n_samples, axis=0)
        out = np.empty((rows * n_samples, self.n_outputs_))
        with torch.no_grad():
            for s in range(0, len(z), chunk_rows):
                inp = np.hstack([z[s:s + chunk_rows], cond[s:s + chunk_rows]])
                out[s:s + chunk_rows] = net(to_tensor(inp)).numpy()
        out = out * self.y_scale_ + self.y_shift_
        return out.reshape(rows, n_samples, self.n_outputs_)

    def gradient_norms(self, X, Y, random_state=None):
        """Critic input-gradient norms on real/generated interpolates."""
        check_is_fitted(self, "critic_")
        X, Y = check_training_data(X, Y)
        rng = np.random.default_rng(random_state)
        fake = self.sample(X, 1, rng)[:, 0, :]
        alpha = to_tensor(rng.uniform(size=(len(X), 1)))
        real, fake = ((a - self.y_shift_) / self.y_scale_ for a in (Y, fake))
        _, norms = critic_loss(self.critic_, to_tensor(real), to_tensor(fake), to_tensor(X),
                               self.gp_weight, alpha, self.penalize_conditions)
        return norms.detach().numpy()

    def save(self, directory):
        directory = Path(directory)
        self.sampler_.save(directory / "generator.json")
        self.critic_.save(directory / "discriminator.json")
        scaling = {"shift": self.y_shift_.tolist(), "scale": self.y_scale_.tolist()}
        (directory / "scaling.json").write_text(json.dumps(scaling), encoding="utf-8")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        self = cls()
        self.generator_ = Mlp.load(directory / "generator.json")
        self.generator_ema_ = None
        self.critic_ = Mlp.load(directory / "discriminator.json")
        spec = self.generator_.spec
        self.n_outputs_ = spec.output_dim
        self.n_features_in_ = self.critic_.spec.input_dim - spec.output_dim
        self.noise_dim_ = spec.input_dim - self.n_features_in_
        self.noise_dim = self.noise_dim_
        self.hidden_dims = spec.hidden_dims
        scaling = directory / "scaling.json"
        if scaling.exists():
            doc = json.loads(scaling.read_text(encoding="utf-8"))
            self.y_shift_, self.y_scale_ = np.asarray(doc["shift"]), np.asarray(doc["scale"])
        else:
            self.y_shift_, self.y_scale_ = np.zeros(self.n_outputs_), np.ones(self.n_outputs_)
        return self


class CganEnsemble(BaseEnsemble):
    """``n_members`` independently seeded conditional GANs sharing one configuration."""

    kind = "cgan"

    def __init__(self, n_members=5, noise_dim=None, hidden_dims=(64, 64), epochs=3000,
                 batch_size=256, n_critic=5, gp_weight=10.0, learning_rate=1e-4,
                 betas=(0.5, 0.9), lr_final=None, standardize=True, penalize_conditions=True,
                 ema_decay=0.99, random_state=None):
        self.n_members = n_members
        self.noise_dim = noise_dim
        self.hidden_dims = hidden_dims
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_critic = n_critic
        self.gp_weight = gp_weight
        self.learning_rate = learning_rate
        self.betas = betas
        self.lr_final = lr_final
        self.standardize = standardize
        self.penalize_conditions = penalize_conditions
        self.ema_decay = ema_decay
        self.random_state = random_state

    def _make_member(self, seed):
        return ConditionalGAN(**self._member_params(), random_state=seed)
