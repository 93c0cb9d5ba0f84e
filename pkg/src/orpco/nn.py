"""Small feed-forward networks on a flat parameter vector.

Every network in the package (CGAN generator and critic, GPN, actor, critic,
reward predictor) is an :class:`Mlp`: a single ``torch`` parameter vector
interpreted layer by layer according to an :class:`MlpSpec`. Keeping the
parameters flat makes checkpointing, soft target updates and
finite-difference checks one-liners.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import ConfigurationError, TrainingError

ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "softplus": F.softplus,
    "identity": lambda t: t,
}


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    output_dim: int = 1
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims:
            raise ConfigurationError("hidden_dims must be non-empty")
        if min((self.input_dim, self.output_dim) + self.hidden_dims) <= 0:
            raise ConfigurationError("all layer widths must be positive")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {act!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def layers(self):
        """``(fan_in, fan_out, offset)`` per affine layer; weights precede biases."""
        out, offset = [], 0
        w = self.widths
        for a, b in zip(w[:-1], w[1:]):
            out.append((a, b, offset))
            offset += a * b + b
        return out

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def init_params(spec: MlpSpec, generator: torch.Generator | None = None,
                dtype=torch.float32) -> torch.Tensor:
    """Uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    flat = torch.empty(spec.n_params, dtype=dtype)
    for fan_in, fan_out, off in spec.layers:
        bound = 1.0 / math.sqrt(fan_in)
        n = fan_in * fan_out + fan_out
        flat[off:off + n].uniform_(-bound, bound, generator=generator)
    return flat


def forward(spec: MlpSpec, params: torch.Tensor, inputs: torch.Tensor) -> torch.Tensor:
    if params.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got {tuple(params.shape)}")
    if inputs.shape[-1] != spec.input_dim:
        raise ValueError(f"input width {inputs.shape[-1]} != input_dim {spec.input_dim}")
    h = inputs
    hidden = ACTIVATIONS[spec.hidden_activation]
    last = len(spec.layers) - 1
    for k, (fan_in, fan_out, off) in enumerate(spec.layers):
        w = params[off:off + fan_in * fan_out].view(fan_out, fan_in)
        b = params[off + fan_in * fan_out:off + fan_in * fan_out + fan_out]
        h = F.linear(h, w, b)
        h = ACTIVATIONS[spec.output_activation](h) if k == last else hidden(h)
    return h


def grad_params(loss_fn: Callable[[torch.Tensor], torch.Tensor], params: torch.Tensor,
                create_graph=False) -> torch.Tensor:
    """Reverse-mode gradient of the scalar ``loss_fn(params)``."""
    p = params.detach().requires_grad_(True)
    loss = loss_fn(p)
    if not loss.requires_grad:
        return torch.zeros_like(p)
    (g,) = torch.autograd.grad(loss, p, create_graph=create_graph, allow_unused=True)
    return torch.zeros_like(p) if g is None else g


def grad_input(spec: MlpSpec, params: torch.Tensor, inputs: torch.Tensor,
               create_graph=False) -> torch.Tensor:
    """Gradient of a scalar-output network with respect to its inputs, row by row.

    With ``create_graph=True`` the result stays differentiable in ``params``
    (needed for the gradient penalty).
    """
    if spec.output_dim != 1:
        raise ValueError("grad_input needs a scalar-output network")
    x = inputs if inputs.requires_grad else inputs.detach().requires_grad_(True)
    out = forward(spec, params, x)
    (g,) = torch.autograd.grad(out.sum(), x, create_graph=create_graph)
    return g


class Mlp(torch.nn.Module):
    """Module wrapper holding one flat parameter vector."""

    def __init__(self, spec: MlpSpec, params: torch.Tensor | None = None,
                 generator: torch.Generator | None = None, dtype=torch.float32):
        super().__init__()
        self.spec = spec
        if params is None:
            params = init_params(spec, generator, dtype)
        self.params = torch.nn.Parameter(params.detach().clone().to(dtype))

    def forward(self, inputs):
        return forward(self.spec, self.params, inputs)

    def clone(self) -> "Mlp":
        return Mlp(self.spec, self.params.detach(), dtype=self.params.dtype)

    def save(self, path):
        save_checkpoint(path, self.spec, self.params.detach())

    @classmethod
    def load(cls, path):
        spec, params = load_checkpoint(path)
        return cls(spec, params, dtype=params.dtype)


# ---------------------------------------------------------------------------
# optimisation


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


GAN_ADAM = AdamConfig(lr=1e-4, betas=(0.5, 0.9))


@dataclass
class AdamState:
    step: int = 0
    m: torch.Tensor | None = None
    v: torch.Tensor | None = None


def sgd_step(params: torch.Tensor, grads: torch.Tensor, state: AdamState | None = None,
             config: AdamConfig = AdamConfig()):
    """One bias-corrected adaptive-moment update; returns ``(new_params, new_state)``.

    Inputs are not modified.
    """
    if params.shape != grads.shape:
        raise ValueError("params and grads must have the same shape")
    state = AdamState() if state is None else state
    step = state.step + 1
    if not torch.isfinite(grads).all():
        raise TrainingError("non-finite gradient component", step=step)
    b1, b2 = config.betas
    m = torch.zeros_like(params) if state.m is None else state.m
    v = torch.zeros_like(params) if state.v is None else state.v
    m = b1 * m + (1 - b1) * grads
    v = b2 * v + (1 - b2) * grads * grads
    m_hat = m / (1 - b1 ** step)
    v_hat = v / (1 - b2 ** step)
    new = params - config.lr * m_hat / (torch.sqrt(v_hat) + config.eps)
    return new, AdamState(step, m, v)


class Optimizer:
    """Adam over one :class:`Mlp`, refusing non-finite losses and gradients."""

    def __init__(self, net: Mlp, config: AdamConfig = AdamConfig()):
        self.net = net
        self.config = config
        self._opt = torch.optim.Adam([net.params], lr=config.lr, betas=config.betas, eps=config.eps)
        self.steps = 0

    def set_lr(self, lr: float):
        for group in self._opt.param_groups:
            group["lr"] = lr

    def step(self, loss: torch.Tensor) -> float:
        self.steps += 1
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value}", step=self.steps)
        self._opt.zero_grad(set_to_none=True)
        loss.backward()
        if not torch.isfinite(self.net.params.grad).all():
            raise TrainingError("non-finite gradient component", step=self.steps)
        self._opt.step()
        return value


def soft_update(target: Mlp, source: Mlp, tau: float):
    """``target <- (1 - tau) * target + tau * source`` in place."""
    with torch.no_grad():
        target.params.mul_(1.0 - tau).add_(source.params, alpha=tau)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, spec: MlpSpec, params: torch.Tensor):
    """JSON manifest plus parameters; float32 values survive the float64 repr exactly."""
    p = params.detach().cpu()
    doc = {"spec": spec.to_dict(), "dtype": str(p.dtype).replace("torch.", ""),
           "params": p.to(torch.float64).tolist()}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    spec = MlpSpec.from_dict(doc["spec"])
    dtype = getattr(torch, doc.get("dtype", "float32"))
    params = torch.tensor(np.asarray(doc["params"], dtype=np.float64)).to(dtype)
    if params.shape != (spec.n_params,):
        raise ValueError(f"checkpoint {path} has {params.numel()} params, spec needs {spec.n_params}")
    return spec, params


def torch_generator(seed) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed) % (2**63 - 1))
    return g


def seed_from(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**62))


def to_tensor(a, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)


__all__ = [
    "MlpSpec", "Mlp", "init_params", "forward", "grad_params", "grad_input",
    "AdamConfig", "AdamState", "GAN_ADAM", "sgd_step", "Optimizer", "soft_update",
    "save_checkpoint", "load_checkpoint",
]
