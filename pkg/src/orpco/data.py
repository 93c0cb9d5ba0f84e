"""Process datasets: variable spaces, records, normalisation and file I/O.

A dataset is three aligned blocks of columns, conditional parameters ``x``,
control parameters ``u`` and control results ``y``, plus an optional integer
time index. All variables are affinely mapped to ``[0, 1]`` with min/max
statistics fitted on the training split.
"""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .exceptions import ConfigurationError, ParseError, ValidationError

KINDS = ("conditional", "control", "result")
_PREFIX = {"conditional": "x", "control": "u", "result": "y"}


@dataclass(frozen=True)
class VariableSpace:
    name: str
    kind: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ConfigurationError(f"variable {self.name!r}: bounds must be finite")
        if not self.lower < self.upper:
            raise ConfigurationError(
                f"variable {self.name!r}: lower ({self.lower}) must be < upper ({self.upper})"
            )

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "lower": float(self.lower), "upper": float(self.upper)}


@dataclass(frozen=True)
class Schema:
    """Ordered variable declarations for one dataset.

    ``next_state`` is only set for continuous-control problems: entry ``k``
    names the result index that becomes conditional component ``k`` at the
    next time step.
    """

    variables: tuple[VariableSpace, ...]
    next_state: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigurationError(f"duplicate variable names: {dupes}")
        order = [KINDS.index(v.kind) for v in self.variables]
        if order != sorted(order):
            raise ConfigurationError("variables must be ordered conditional, control, result")
        if self.n_control == 0 or self.n_result == 0:
            raise ConfigurationError("schema needs at least one control and one result variable")
        if self.next_state is not None:
            ns = tuple(int(i) for i in self.next_state)
            if len(ns) != self.n_conditional or any(not 0 <= i < self.n_result for i in ns):
                raise ConfigurationError("next_state must map every conditional variable to a result index")
            object.__setattr__(self, "next_state", ns)

    @classmethod
    def from_dims(cls, n_conditional, n_control, n_result, lower=0.0, upper=1.0, next_state=None):
        """Schema with conventional names ``x0.., u0.., y0..`` and scalar or per-variable bounds."""
        total = n_conditional + n_control + n_result
        lo = np.broadcast_to(np.asarray(lower, dtype=float), (total,))
        hi = np.broadcast_to(np.asarray(upper, dtype=float), (total,))
        kinds = ["conditional"] * n_conditional + ["control"] * n_control + ["result"] * n_result
        counters = dict.fromkeys(KINDS, 0)
        variables = []
        for kind, a, b in zip(kinds, lo, hi):
            variables.append(VariableSpace(f"{_PREFIX[kind]}{counters[kind]}", kind, float(a), float(b)))
            counters[kind] += 1
        return cls(tuple(variables), next_state)

    def _of(self, kind):
        return tuple(v for v in self.variables if v.kind == kind)

    @property
    def conditional(self):
        return self._of("conditional")

    @property
    def control(self):
        return self._of("control")

    @property
    def result(self):
        return self._of("result")

    @property
    def n_conditional(self) -> int:
        return len(self.conditional)

    @property
    def n_control(self) -> int:
        return len(self.control)

    @property
    def n_result(self) -> int:
        return len(self.result)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def bounds(self, kind=None):
        """``(lower, upper)`` arrays for one kind, or for every variable."""
        vs = self.variables if kind is None else self._of(kind)
        return (np.array([v.lower for v in vs], dtype=float),
                np.array([v.upper for v in vs], dtype=float))

    def to_json(self):
        variables = [v.to_dict() for v in self.variables]
        if self.next_state is None:
            return variables
        return {"variables": variables, "next_state": list(self.next_state)}

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, dict):
            return cls(tuple(VariableSpace(**v) for v in doc["variables"]), doc.get("next_state"))
        return cls(tuple(VariableSpace(**v) for v in doc))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls.from_json(doc)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"malformed schema file {path}: {exc}") from exc

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Normalizer:
    """Per-variable affine map ``v -> (v - shift) / scale`` onto ``[0, 1]``."""

    shift: np.ndarray
    scale: np.ndarray
    n_conditional: int
    n_control: int

    @classmethod
    def fit(cls, values, n_conditional, n_control):
        values = np.asarray(values, dtype=float)
        lo = values.min(axis=0)
        span = values.max(axis=0) - lo
        span[span <= 0] = 1.0
        return cls(lo, span, n_conditional, n_control)

    def _slice(self, block):
        p, q = self.n_conditional, self.n_control
        return {"x": slice(0, p), "u": slice(p, p + q), "y": slice(p + q, None), "xu": slice(0, p + q)}[block]

    def transform(self, values, block):
        s = self._slice(block)
        return (np.asarray(values, dtype=float) - self.shift[s]) / self.scale[s]

    def inverse_transform(self, values, block):
        s = self._slice(block)
        return np.asarray(values, dtype=float) * self.scale[s] + self.shift[s]

    def to_dict(self):
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist(),
                "n_conditional": self.n_conditional, "n_control": self.n_control}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["shift"], dtype=float), np.asarray(d["scale"], dtype=float),
                   int(d["n_conditional"]), int(d["n_control"]))


@dataclass(frozen=True)
class ProcessRecord:
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    t: int | None = None


def _frozen(a, shape_cols, name):
    a = np.array(a, dtype=float, copy=True)
    if a.ndim == 1 and a.size == 0:
        a = a.reshape(0, shape_cols)
    if a.ndim != 2 or a.shape[1] != shape_cols:
        raise ValidationError(f"{name} must have shape (n, {shape_cols}), got {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ProcessDataset:
    """Immutable collection of logged ``(x, u, y)`` tuples."""

    schema: Schema
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    t: np.ndarray | None = None
    normalizer: Normalizer | None = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        s = self.schema
        object.__setattr__(self, "x", _frozen(self.x, s.n_conditional, "x"))
        object.__setattr__(self, "u", _frozen(self.u, s.n_control, "u"))
        object.__setattr__(self, "y", _frozen(self.y, s.n_result, "y"))
        n = len(self.x)
        if len(self.u) != n or len(self.y) != n:
            raise ValidationError("x, u and y must have the same number of rows")
        if self.t is not None:
            t = np.array(self.t, dtype=np.int64, copy=True).reshape(-1)
            if len(t) != n:
                raise ValidationError("t must have one entry per record")
            t.setflags(write=False)
            object.__setattr__(self, "t", t)
        if self.validate:
            check_bounds(s, self.x, self.u, self.y)

    def __len__(self):
        return len(self.x)

    def __iter__(self) -> Iterator[ProcessRecord]:
        for k in range(len(self)):
            yield self.record(k)

    def record(self, k) -> ProcessRecord:
        t = None if self.t is None else int(self.t[k])
        return ProcessRecord(self.x[k].copy(), self.u[k].copy(), self.y[k].copy(), t)

    @property
    def records(self) -> list[ProcessRecord]:
        return list(self)

    @property
    def inputs(self) -> np.ndarray:
        """Raw ``[x, u]`` rows."""
        return np.hstack([self.x, self.u])

    def fit_normalizer(self) -> "ProcessDataset":
        """Copy whose normaliser is fitted on this dataset's min/max."""
        if len(self) == 0:
            return self
        values = np.hstack([self.x, self.u, self.y])
        norm = Normalizer.fit(values, self.schema.n_conditional, self.schema.n_control)
        return self.with_normalizer(norm)

    def with_normalizer(self, normalizer) -> "ProcessDataset":
        return ProcessDataset(self.schema, self.x, self.u, self.y, self.t, normalizer, validate=False)

    def subset(self, index) -> "ProcessDataset":
        index = np.asarray(index, dtype=np.int64)
        t = None if self.t is None else self.t[index]
        return ProcessDataset(self.schema, self.x[index], self.u[index], self.y[index], t,
                              self.normalizer, validate=False)

    def normalized(self):
        """``(inputs, results)`` in normalised coordinates, ready for model fitting."""
        if self.normalizer is None:
            raise ConfigurationError("dataset has no fitted normaliser")
        n = self.normalizer
        return n.transform(self.inputs, "xu"), n.transform(self.y, "y")


def check_bounds(schema: Schema, x, u, y, rows_offset=0):
    """Raise :class:`ValidationError` naming the first variable outside its space."""
    for kind, block in (("conditional", x), ("control", u), ("result", y)):
        if len(block) == 0:
            continue
        lo, hi = schema.bounds(kind)
        bad = ~np.isfinite(block) | (block < lo) | (block > hi)
        if bad.any():
            row, col = map(int, np.argwhere(bad)[0])
            var = schema._of(kind)[col]
            raise ValidationError(
                f"row {row + rows_offset}: {var.name}={block[row, col]!r} outside "
                f"[{var.lower}, {var.upper}]",
                variable=var.name,
            )


@dataclass(frozen=True)
class Trajectory:
    """Ordered ``(x, u, reward, x_next)`` transitions of one rollout."""

    x: np.ndarray
    u: np.ndarray
    reward: np.ndarray
    x_next: np.ndarray

    def __post_init__(self):
        if not (len(self.x) == len(self.u) == len(self.reward) == len(self.x_next)):
            raise ValidationError("trajectory arrays must have equal length")
        if len(self.x) > 1 and not np.array_equal(self.x[1:], self.x_next[:-1]):
            raise ValidationError("x_next at step t must equal x at step t+1")

    @property
    def length(self) -> int:
        return len(self.x)

    @property
    def steps(self):
        return list(zip(self.x, self.u, self.reward, self.x_next))

    def total_reward(self) -> float:
        return float(np.sum(self.reward))

    def to_dict(self):
        return {"x": self.x.tolist(), "u": self.u.tolist(),
                "reward": self.reward.tolist(), "x_next": self.x_next.tolist()}


# ---------------------------------------------------------------------------
# files


def schema_path_for(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".schema.json")


def save_dataset(dataset: ProcessDataset, path, write_schema=True) -> Path:
    """Write the canonical CSV (plus schema sidecar). Floats use ``repr`` so reloads are exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dataset.schema.names + (["t"] if dataset.t is not None else [])
    values = np.hstack([dataset.x, dataset.u, dataset.y])
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, row in enumerate(values):
            cells = [repr(float(v)) for v in row]
            if dataset.t is not None:
                cells.append(str(int(dataset.t[k])))
            writer.writerow(cells)
    if write_schema:
        dataset.schema.save(schema_path_for(path))
    return path


def load_dataset(path, schema: Schema | str | Path | None = None) -> ProcessDataset:
    """Read a dataset CSV, validate every value and fit the normaliser.

    ``schema`` may be a :class:`Schema`, a path to a sidecar JSON file, or
    ``None`` to use ``<stem>.schema.json`` next to the CSV.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if schema is None:
        schema = schema_path_for(path)
    if not isinstance(schema, Schema):
        schema = Schema.load(schema)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path} is empty (no header row)") from None
        header = [h.strip() for h in header]
        has_t = header[-1:] == ["t"]
        names = header[:-1] if has_t else header
        if names != schema.names:
            raise ParseError(f"header {names} does not match schema {schema.names}")
        width = len(header)
        rows, times = [], []
        for k, row in enumerate(reader):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, found {len(row)}", row=k)
            try:
                rows.append([float(c) for c in row[: len(names)]])
                if has_t:
                    times.append(int(row[-1]))
            except ValueError as exc:
                raise ParseError(str(exc), row=k) from None
    p, q = schema.n_conditional, schema.n_control
    values = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    x, u, y = values[:, :p], values[:, p:p + q], values[:, p + q:]
    check_bounds(schema, x, u, y)
    ds = ProcessDataset(schema, x, u, y, np.asarray(times) if has_t else None, validate=False)
    if len(ds) == 0:
        warnings.warn(f"{path} contains no records; normaliser not fitted", stacklevel=2)
        return ds
    return ds.fit_normalizer()


# ---------------------------------------------------------------------------
# splitting and perturbation


def split(dataset: ProcessDataset, ratios: Sequence[float], seed: int):
    """Random disjoint partition of ``dataset``.

    Every part shares one normaliser, fitted on the first (training) part.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.ndim != 1 or len(ratios) < 2 or np.any(ratios <= 0) or abs(ratios.sum() - 1) > 1e-9:
        raise ConfigurationError(f"split ratios must be positive and sum to 1, got {ratios.tolist()}")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    cuts = np.rint(np.cumsum(ratios)[:-1] * n).astype(int)
    parts = [dataset.subset(np.sort(ix)) for ix in np.split(perm, cuts)]
    train = parts[0].fit_normalizer()
    norm = train.normalizer if len(train) else dataset.normalizer
    return tuple(p.with_normalizer(norm) for p in parts)


def _resample(values, lower, upper, n_dims, rng, dims=None):
    values = np.array(values, dtype=float, copy=True)
    total = values.shape[-1]
    if not 0 <= n_dims <= total:
        raise ValueError(f"n_dims must lie in [0, {total}], got {n_dims}")
    rows = values.reshape(-1, total)
    for row in rows:
        chosen = rng.choice(total, size=n_dims, replace=False) if dims is None else dims
        row[chosen] = rng.uniform(lower[chosen], upper[chosen])
    return rows.reshape(values.shape)


def randomize_dims(record: ProcessRecord, n_dims: int, seed, schema: Schema) -> ProcessRecord:
    """Copy of ``record`` with ``n_dims`` input dimensions redrawn uniformly over their spaces."""
    rng = np.random.default_rng(seed)
    lo, hi = (np.concatenate(b) for b in zip(schema.bounds("conditional"), schema.bounds("control")))
    xu = _resample(np.concatenate([record.x, record.u]), lo, hi, n_dims, rng)
    p = schema.n_conditional
    return ProcessRecord(xu[:p], xu[p:], record.y.copy(), record.t)


def randomize_inputs(inputs, n_dims, rng, schema: Schema, controls_only=False):
    """Vectorised variant over raw ``[x, u]`` rows.

    With ``controls_only`` the whole control block is redrawn and ``n_dims``
    is ignored.
    """
    rng = np.random.default_rng(rng)
    lo, hi = (np.concatenate(b) for b in zip(schema.bounds("conditional"), schema.bounds("control")))
    if controls_only:
        p = schema.n_conditional
        dims = np.arange(p, p + schema.n_control)
        return _resample(inputs, lo, hi, len(dims), rng, dims=dims)
    return _resample(inputs, lo, hi, n_dims, rng)
