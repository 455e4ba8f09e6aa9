"""Hyperparameter search spaces: declaration, sampling, grids, unit-cube encoding.

A space is an ordered list of parameter declarations. Every parameter maps to a
fixed block of coordinates in the unit cube: one coordinate per numeric
parameter (log-scaled first when flagged) and a one-hot block per categorical.
The encoding is what surrogate models and density estimators operate on, so
``decode(encode(c))`` must reproduce ``c`` for any valid configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

# A configuration is a plain name -> value mapping over exactly the space's params.
Configuration = dict[str, Any]

GRID_SIZE_CAP = 1_000_000

_KINDS = ("categorical", "int", "float")


class GridSizeError(ValueError):
    """Raised when a requested grid would exceed the enumeration cap."""


def _round_half_up(x: float) -> int:
    # round-half-up, not banker's rounding: 2.5 -> 3
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ParamSpec:
    """One tunable parameter.

    kind "categorical" uses ``choices``; kinds "int" and "float" use the
    inclusive bounds ``lo``/``hi`` and an optional log-scale flag. Log-scaled
    parameters require strictly positive bounds.
    """

    name: str
    kind: str
    choices: tuple[Any, ...] | None = None
    lo: float | None = None
    hi: float | None = None
    log: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("parameter name must be non-empty")
        if self.kind not in _KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.choices:
                raise ValueError(f"{self.name}: categorical needs at least one choice")
            if len(set(self.choices)) != len(self.choices):
                raise ValueError(f"{self.name}: duplicate choices")
            if self.lo is not None or self.hi is not None:
                raise ValueError(f"{self.name}: categorical takes no bounds")
        else:
            if self.lo is None or self.hi is None:
                raise ValueError(f"{self.name}: numeric parameter needs lo and hi")
            if not (self.lo < self.hi):
                raise ValueError(f"{self.name}: requires lo < hi")
            if self.log and self.lo <= 0:
                raise ValueError(f"{self.name}: log scale requires lo > 0")
            if self.kind == "int" and (
                self.lo != int(self.lo) or self.hi != int(self.hi)
            ):
                raise ValueError(f"{self.name}: int bounds must be integers")

    @property
    def encoded_width(self) -> int:
        return len(self.choices) if self.kind == "categorical" else 1

    def sample(self, rng: np.random.Generator) -> Any:
        if self.kind == "categorical":
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.log:
            v = math.exp(rng.uniform(math.log(self.lo), math.log(self.hi)))
        else:
            v = rng.uniform(self.lo, self.hi)
        if self.kind == "int":
            # sampled continuously, then rounded half-up and clamped
            return min(max(_round_half_up(v), int(self.lo)), int(self.hi))
        return float(v)

    def to_unit(self, value: Any) -> float:
        if self.log:
            return (math.log(value) - math.log(self.lo)) / (
                math.log(self.hi) - math.log(self.lo)
            )
        return (float(value) - self.lo) / (self.hi - self.lo)

    def from_unit(self, u: float) -> Any:
        u = min(max(float(u), 0.0), 1.0)
        if self.log:
            v = math.exp(
                math.log(self.lo) + u * (math.log(self.hi) - math.log(self.lo))
            )
        else:
            v = self.lo + u * (self.hi - self.lo)
        if self.kind == "int":
            return min(max(_round_half_up(v), int(self.lo)), int(self.hi))
        return float(min(max(v, self.lo), self.hi))

    def grid_values(self, resolution: int) -> list[Any]:
        if self.kind == "categorical":
            return list(self.choices)
        if resolution < 2:
            raise ValueError(f"{self.name}: grid resolution must be at least 2")
        if self.log:
            vals = np.exp(
                np.linspace(math.log(self.lo), math.log(self.hi), resolution)
            )
        else:
            vals = np.linspace(self.lo, self.hi, resolution)
        vals = vals.tolist()
        vals[0], vals[-1] = self.lo, self.hi  # endpoints exactly, no exp/log noise
        if self.kind == "int":
            ints = [min(max(_round_half_up(v), int(self.lo)), int(self.hi)) for v in vals]
            seen: list[int] = []
            for v in ints:
                if v not in seen:
                    seen.append(v)
            return seen
        return [float(v) for v in vals]

    def contains(self, value: Any) -> bool:
        if self.kind == "categorical":
            return value in self.choices
        if self.kind == "int":
            return isinstance(value, (int, np.integer)) and self.lo <= value <= self.hi
        return isinstance(value, (int, float, np.floating)) and self.lo <= value <= self.hi


class ConfigSpace:
    """Ordered collection of :class:`ParamSpec` with a fixed unit-cube encoding."""

    def __init__(self, params: Sequence[ParamSpec]):
        if not params:
            raise ValueError("a space needs at least one parameter")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.params: tuple[ParamSpec, ...] = tuple(params)
        self._by_name = {p.name: p for p in self.params}
        widths = [p.encoded_width for p in self.params]
        offsets = np.concatenate([[0], np.cumsum(widths)])
        self._offsets = {p.name: (int(offsets[i]), int(offsets[i + 1]))
                         for i, p in enumerate(self.params)}
        self.encoded_dim: int = int(offsets[-1])
        mask = np.zeros(self.encoded_dim, dtype=bool)
        for p in self.params:
            if p.kind == "categorical":
                a, b = self._offsets[p.name]
                mask[a:b] = True
        self.categorical_mask: np.ndarray = mask

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self) -> Iterable[ParamSpec]:
        return iter(self.params)

    def __getitem__(self, name: str) -> ParamSpec:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def validate(self, config: Mapping[str, Any]) -> None:
        extra = set(config) - set(self._by_name)
        missing = set(self._by_name) - set(config)
        if extra or missing:
            raise ValueError(
                f"configuration keys mismatch: extra={sorted(extra)} missing={sorted(missing)}"
            )
        for p in self.params:
            if not p.contains(config[p.name]):
                raise ValueError(f"{p.name}: value {config[p.name]!r} out of domain")

    def sample(self, rng: np.random.Generator) -> Configuration:
        """Draw one configuration: uniform over choices, uniform (or
        log-uniform) over numeric ranges."""
        return {p.name: p.sample(rng) for p in self.params}

    def grid(self, resolution: int | Mapping[str, int],
             max_size: int = GRID_SIZE_CAP) -> list[Configuration]:
        """Cartesian product grid.

        ``resolution`` is the per-parameter point count for numeric params,
        either one integer for all or a name -> int mapping. Raises
        :class:`GridSizeError` before enumerating anything larger than
        ``max_size``.
        """
        per_param: list[list[Any]] = []
        for p in self.params:
            res = resolution[p.name] if isinstance(resolution, Mapping) else resolution
            per_param.append(p.grid_values(res))
        size = math.prod(len(v) for v in per_param)
        if size > max_size:
            raise GridSizeError(f"grid of {size} points exceeds cap {max_size}")
        configs: list[Configuration] = [{}]
        for p, values in zip(self.params, per_param):
            configs = [dict(c, **{p.name: v}) for c in configs for v in values]
        return configs

    def encode(self, config: Mapping[str, Any]) -> np.ndarray:
        """Map a configuration to its unit-cube vector."""
        self.validate(config)
        vec = np.zeros(self.encoded_dim, dtype=float)
        for p in self.params:
            a, b = self._offsets[p.name]
            if p.kind == "categorical":
                vec[a + p.choices.index(config[p.name])] = 1.0
            else:
                vec[a] = p.to_unit(config[p.name])
        return vec

    def decode(self, vec: np.ndarray) -> Configuration:
        """Inverse of :meth:`encode`.

        Numeric coordinates are clamped to bounds, integers rounded half-up,
        and categorical blocks resolved by argmax (ties go to the first
        choice).
        """
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.encoded_dim,):
            raise ValueError(
                f"encoded vector has shape {vec.shape}, expected ({self.encoded_dim},)"
            )
        config: Configuration = {}
        for p in self.params:
            a, b = self._offsets[p.name]
            if p.kind == "categorical":
                config[p.name] = p.choices[int(np.argmax(vec[a:b]))]
            else:
                config[p.name] = p.from_unit(vec[a])
        return config

    def block(self, name: str) -> tuple[int, int]:
        """Coordinate range [a, b) of one parameter inside the encoding."""
        return self._offsets[name]

    # ------------------------------------------------------------------
    # declarative file format: name -> {type, choices | lo/hi, log}
    # ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, tree: Mapping[str, Mapping[str, Any]]) -> "ConfigSpace":
        params = []
        for name, entry in tree.items():
            if not isinstance(entry, Mapping) or "type" not in entry:
                raise ValueError(f"{name}: entry must be a mapping with a 'type' key")
            kind = entry["type"]
            if kind == "categorical":
                params.append(ParamSpec(name, "categorical",
                                        choices=tuple(entry["choices"])))
            elif kind in ("int", "float"):
                params.append(ParamSpec(name, kind, lo=entry["lo"], hi=entry["hi"],
                                        log=bool(entry.get("log", False))))
            else:
                raise ValueError(f"{name}: unknown type {kind!r}")
        return cls(params)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        tree: dict[str, dict[str, Any]] = {}
        for p in self.params:
            if p.kind == "categorical":
                tree[p.name] = {"type": "categorical", "choices": list(p.choices)}
            else:
                tree[p.name] = {"type": p.kind, "lo": p.lo, "hi": p.hi, "log": p.log}
        return tree

    @classmethod
    def from_file(cls, path: str) -> "ConfigSpace":
        with open(path) as fh:
            tree = yaml.safe_load(fh)
        if not isinstance(tree, Mapping):
            raise ValueError(f"{path}: expected a mapping of parameter entries")
        return cls.from_dict(tree)

    def to_file(self, path: str) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)
