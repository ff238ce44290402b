"""Discrete hyperparameter grids and the candidate pool.

Points are enumerated in axis-declaration-major lexicographic order: the
first declared axis varies slowest, the last fastest (``itertools.product``
order). The index of a point is its mixed-radix number under that order, so
``index_of(point(i)) == i`` on every platform.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import AlreadyConsumed, ConfigError, OutOfRange

LORA_AXES = ("rank", "alpha_multiplier", "batch_size", "learning_rate", "dropout")
INTEGER_AXES = frozenset({"rank", "batch_size"})

DEFAULT_LEARNING_RATES = (1e-6, 5e-6, 1e-5, 2e-5, 5e-5, 1e-4, 3e-4, 5e-4, 1e-3, 5e-3)


@dataclass(frozen=True)
class HyperparamConfig:
    """One LoRA configuration. ``alpha`` is derived as multiplier times rank."""

    rank: int
    alpha_multiplier: float
    batch_size: int
    learning_rate: float
    dropout: float

    @property
    def alpha(self) -> float:
        return self.alpha_multiplier * self.rank

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in LORA_AXES}

    @classmethod
    def from_mapping(cls, values: Mapping) -> "HyperparamConfig":
        """Build from axis values. Accepts ``alpha`` in place of the multiplier."""
        values = dict(values)
        if "alpha_multiplier" not in values and "alpha" in values:
            values["alpha_multiplier"] = values["alpha"] / values["rank"]
        missing = [a for a in LORA_AXES if a not in values]
        if missing:
            raise KeyError(f"missing hyperparameters: {missing}")
        return cls(
            rank=int(values["rank"]),
            alpha_multiplier=float(values["alpha_multiplier"]),
            batch_size=int(values["batch_size"]),
            learning_rate=float(values["learning_rate"]),
            dropout=float(values["dropout"]),
        )


@dataclass(frozen=True)
class Axis:
    name: str
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ConfigError(f"axes.{self.name}", "grid is empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError(f"axes.{self.name}", "grid must be strictly increasing")


class SearchSpace:
    """Immutable product grid over named axes."""

    def __init__(self, axes: Sequence[tuple[str, Sequence]]):
        names = [name for name, _ in axes]
        if not names:
            raise ConfigError("axes", "at least one axis is required")
        if len(set(names)) != len(names):
            raise ConfigError("axes", f"duplicate axis names in {names}")
        self.axes = tuple(
            Axis(name, tuple(int(v) if name in INTEGER_AXES else v for v in values))
            for name, values in axes
        )
        self.shape = tuple(len(a.values) for a in self.axes)
        self.size = int(np.prod(self.shape))
        self._lookup = [{v: i for i, v in enumerate(a.values)} for a in self.axes]
        self._strides = tuple(int(np.prod(self.shape[k + 1 :])) for k in range(len(self.shape)))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def is_lora(self) -> bool:
        return set(self.names) == set(LORA_AXES)

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other):
        return isinstance(other, SearchSpace) and self.axes == other.axes

    def __hash__(self):
        return hash(self.axes)

    def point(self, index: int) -> tuple:
        if not 0 <= index < self.size:
            raise OutOfRange(f"index {index} outside grid of size {self.size}")
        out = []
        for axis, stride, n in zip(self.axes, self._strides, self.shape):
            out.append(axis.values[(index // stride) % n])
        return tuple(out)

    def index_of(self, point) -> int:
        """Inverse of :meth:`point`. ``point`` may be a tuple, a mapping or a config."""
        if isinstance(point, HyperparamConfig):
            point = point.as_dict()
        if isinstance(point, Mapping):
            if self.is_lora and "alpha_multiplier" not in point and "alpha" in point:
                point = HyperparamConfig.from_mapping(point).as_dict()
            try:
                point = tuple(point[name] for name in self.names)
            except KeyError as exc:
                raise OutOfRange(f"point lacks axis {exc}") from None
        if len(point) != len(self.axes):
            raise OutOfRange(f"point has {len(point)} values, space has {len(self.axes)} axes")
        index = 0
        for value, lookup, stride, axis in zip(point, self._lookup, self._strides, self.axes):
            pos = _grid_position(lookup, value)
            if pos is None:
                raise OutOfRange(f"{axis.name}={value!r} is not on the grid")
            index += pos * stride
        return index

    def config(self, index: int) -> HyperparamConfig:
        if not self.is_lora:
            raise TypeError(f"space axes {self.names} are not the LoRA axes")
        return HyperparamConfig.from_mapping(dict(zip(self.names, self.point(index))))

    def contains(self, point) -> bool:
        try:
            self.index_of(point)
        except OutOfRange:
            return False
        return True

    def to_json(self) -> dict:
        return {"axes": [{"name": a.name, "values": list(a.values)} for a in self.axes]}

    @classmethod
    def from_json(cls, spec: Mapping) -> "SearchSpace":
        if not isinstance(spec, Mapping) or "axes" not in spec:
            raise ConfigError("space", 'expected {"axes": [...]} or "default_lora"')
        axes = []
        for k, item in enumerate(spec["axes"]):
            if not isinstance(item, Mapping) or "name" not in item or "values" not in item:
                raise ConfigError(f"space.axes[{k}]", "needs 'name' and 'values'")
            values = item["values"]
            if not isinstance(values, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
            ):
                raise ConfigError(f"space.axes[{k}].values", "must be a list of numbers")
            axes.append((str(item["name"]), values))
        return cls(axes)

    def __repr__(self):
        return f"SearchSpace({dict(zip(self.names, self.shape))})"


def _grid_position(lookup: dict, value):
    pos = lookup.get(value)
    if pos is not None:
        return pos
    # tolerate float round-off from JSON or arithmetic (e.g. 0.15000000000000002)
    for grid_value, i in lookup.items():
        if isinstance(value, (int, float)) and abs(grid_value - value) <= 1e-12 * max(1.0, abs(grid_value)):
            return i
    return None


def default_lora_space(learning_rates: Sequence[float] = DEFAULT_LEARNING_RATES) -> SearchSpace:
    """The 9 x 9 x 8 x 10 x 7 LoRA grid (45,360 points)."""
    return SearchSpace(
        [
            ("rank", [2**n for n in range(9)]),
            ("alpha_multiplier", [2.0**n for n in range(-1, 8)]),
            ("batch_size", [2**n for n in range(1, 9)]),
            ("learning_rate", list(learning_rates)),
            ("dropout", [round(0.05 * n, 2) for n in range(7)]),
        ]
    )


def enumerate_space(space: SearchSpace) -> Iterator[tuple]:
    """Yield every grid point in index order."""
    return itertools.product(*(a.values for a in space.axes))


class CandidatePool:
    """Unevaluated candidates of a space. Taking an index consumes it for good."""

    def __init__(self, space: SearchSpace):
        self.space = space
        self._remaining = np.ones(space.size, dtype=bool)
        self.consumed: list[int] = []

    def __len__(self) -> int:
        return self.n_remaining

    @property
    def n_remaining(self) -> int:
        return self.space.size - len(self.consumed)

    def is_remaining(self, index: int) -> bool:
        return 0 <= index < self.space.size and bool(self._remaining[index])

    def remaining(self) -> np.ndarray:
        """Sorted snapshot of remaining indices; safe to hold while the pool mutates."""
        return np.flatnonzero(self._remaining)

    def take(self, index: int):
        """Consume ``index`` and return its config (a plain tuple for non-LoRA spaces)."""
        index = int(index)
        if not 0 <= index < self.space.size:
            raise OutOfRange(f"index {index} outside pool of size {self.space.size}")
        if not self._remaining[index]:
            raise AlreadyConsumed(f"candidate {index} was already taken")
        self._remaining[index] = False
        self.consumed.append(index)
        return self.space.config(index) if self.space.is_lora else self.space.point(index)
