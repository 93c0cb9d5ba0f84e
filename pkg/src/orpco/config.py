"""Experiment configuration: TOML files validated by pydantic models.

Unknown keys are rejected everywhere. ``--set section.key=value`` style
overrides are parsed as TOML values, so ``ensemble.epochs=50`` and
``penalty.c=-2000.0`` both work.
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigurationError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

RUNS_ENV = "ORPCO_RUNS_DIR"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataConfig(_Section):
    source: Literal["synthetic", "csv", "ib"] = "synthetic"
    path: Optional[str] = None
    schema_path: Optional[str] = None
    n_records: int = Field(20_000, ge=1)
    ratios: tuple[float, ...] = (0.72, 0.08, 0.2)
    process_path: Optional[str] = None

    @field_validator("ratios")
    @classmethod
    def _ratios(cls, v):
        if len(v) != 3 or any(r <= 0 for r in v) or abs(sum(v) - 1) > 1e-9:
            raise ValueError("ratios must be three positive fractions (train, validation, test) summing to 1")
        return v


class SurrogateSection(_Section):
    behaviors: tuple[Literal["random", "safe"], ...] = ("random", "safe")
    n_traj: int = Field(300, ge=1)
    horizon: int = Field(100, ge=1)
    instability: float = Field(0.0, ge=0)
    instability_gain: float = Field(15.0, ge=0)


class EnsembleConfig(_Section):
    kind: Literal["cgan", "gpn"] = "cgan"
    n_members: int = Field(5, ge=2)
    n_samples: int = Field(1000, ge=2)
    hidden_dims: tuple[int, ...] = (64, 64)
    epochs: int = Field(3000, ge=1)
    batch_size: int = Field(256, ge=1)
    n_critic: int = Field(5, ge=1)
    gp_weight: float = Field(10.0, ge=0)
    learning_rate: float = Field(1e-4, gt=0)
    betas: tuple[float, float] = (0.5, 0.9)
    noise_dim: Optional[int] = Field(None, ge=1)
    lr_final: Optional[float] = Field(None, gt=0)
    standardize: bool = True
    penalize_conditions: bool = True
    ema_decay: Optional[float] = Field(0.99, ge=0, lt=1)
    gpn_search: bool = True
    gpn_grid: Optional[dict[str, tuple[int, ...]]] = None


class PenaltyConfig(_Section):
    epsilon: Union[Literal["validation"], float] = "validation"
    c: Optional[float] = None
    disc_threshold: Union[Literal["validation"], float] = "validation"
    mopo_weight: Optional[float] = None
    calibration_rows: int = Field(2000, ge=1)


class BoSection(_Section):
    n_init: int = Field(10, ge=2)
    n_iter: int = Field(40, ge=0)
    n_candidates: int = Field(1024, ge=1)
    n_refine: int = Field(5, ge=0)
    xi: float = Field(0.01, ge=0)


class DdpgSection(_Section):
    episodes: int = Field(1500, ge=1)
    horizon: int = Field(100, ge=1)
    gamma: float = Field(0.99, gt=0, lt=1)
    tau: float = Field(0.005, gt=0, le=1)
    batch_size: int = Field(128, ge=1)
    buffer_size: int = Field(100_000, ge=1)
    actor_lr: float = Field(1e-4, gt=0)
    critic_lr: float = Field(1e-3, gt=0)
    reward_scale: float = Field(1.0, gt=0)
    eval_episodes: int = Field(100, ge=1)


class OptimizerConfig(_Section):
    evaluators: tuple[Literal["rp", "f1", "f3", "f4"], ...] = ("rp", "f1", "f3", "f4")
    gpn_baseline: bool = True
    bo: BoSection = BoSection()
    ddpg: DdpgSection = DdpgSection()


class OpeConfig(_Section):
    n_repeats: int = Field(10, ge=2)
    n_test: int = Field(200, ge=1)
    weight_cap: float = Field(100.0, gt=0)
    predictor_epochs: int = Field(100, ge=1)
    propensity_epochs: int = Field(100, ge=1)


class OodConfig(_Section):
    n_inputs: int = Field(300, ge=2)


class SeedConfig(_Section):
    data: int = 0
    split: int = 0
    ensemble: int = 0
    evaluation: int = 0
    policy: tuple[int, ...] = (0, 1, 2, 3, 4)


class ExperimentConfig(_Section):
    task: Literal["discrete", "continuous"] = "discrete"
    data: DataConfig = DataConfig()
    surrogate: SurrogateSection = SurrogateSection()
    ensemble: EnsembleConfig = EnsembleConfig()
    penalty: PenaltyConfig = PenaltyConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    ope: OpeConfig = OpeConfig()
    ood: OodConfig = OodConfig()
    seeds: SeedConfig = SeedConfig()

    @model_validator(mode="after")
    def _task_defaults(self):
        continuous = self.task == "continuous"
        if self.penalty.c is None or self.penalty.mopo_weight is None:
            updates = {}
            if self.penalty.c is None:
                updates["c"] = -2000.0 if continuous else 0.0
            if self.penalty.mopo_weight is None:
                updates["mopo_weight"] = 1000.0 if continuous else 1.0
            object.__setattr__(self, "penalty", self.penalty.model_copy(update=updates))
        return self

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def run_dir(self, root=None) -> Path:
        root = root or os.environ.get(RUNS_ENV, "runs")
        return Path(root) / self.digest()


def _set_path(doc: dict, dotted: str, value):
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override {dotted!r}: {k!r} is not a section")
    node[keys[-1]] = value


def parse_override(text: str):
    """``"a.b=value"`` -> ``("a.b", parsed value)``; values use TOML syntax, bare words are strings."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like section.key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def build_config(doc: dict | None = None, overrides=()) -> ExperimentConfig:
    doc = json.loads(json.dumps(doc or {}))
    for item in overrides:
        _set_path(doc, *parse_override(item))
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def load_config(path=None, overrides=()) -> ExperimentConfig:
    doc = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} not found")
        try:
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    return build_config(doc, overrides)


def dump_toml(config: ExperimentConfig) -> str:
    """Round-trippable TOML rendering (``None`` values are omitted)."""
    lines = []

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        if isinstance(v, dict):
            return "{" + ", ".join(f"{k} = {fmt(x)}" for k, x in v.items()) + "}"
        return repr(v)

    def emit(prefix, section):
        scalars = {k: v for k, v in section.items() if not isinstance(v, dict) or k == "gpn_grid"}
        tables = {k: v for k, v in section.items() if isinstance(v, dict) and k != "gpn_grid"}
        if prefix:
            lines.append(f"[{prefix}]")
        for k, v in scalars.items():
            if v is not None:
                lines.append(f"{k} = {fmt(v)}")
        lines.append("")
        for k, v in tables.items():
            emit(f"{prefix}.{k}" if prefix else k, v)

    emit("", config.model_dump(mode="json"))
    return "\n".join(lines).strip() + "\n"
