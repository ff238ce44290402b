"""Reference strategies: seeded random search and BO on raw 5-d vectors.

Both reuse the main loop, so they journal and resume exactly like the
deep-kernel optimizer. Raw BO fits the same Matérn-5/2 GP with EI, but on
per-axis scaled vectors instead of learned text features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import loop
from .evaluate import Evaluator
from .space import SearchSpace

LOG_SCALED = frozenset({"rank", "alpha_multiplier", "batch_size", "learning_rate"})


@dataclass(frozen=True)
class AxisScale:
    log: bool
    lo: float
    hi: float

    def forward(self, v):
        return np.log(v) if self.log else np.asarray(v, dtype=np.float64)


class RawVectorCodec:
    """Maps grid points into [0, 1]^d, log-scaling the geometric axes."""

    def __init__(self, space: SearchSpace, log_axes=LOG_SCALED):
        self.space = space
        self.scales = tuple(
            AxisScale(a.name in log_axes, float(min(a.values)), float(max(a.values))) for a in space.axes
        )

    def _unit(self, k: int, values) -> np.ndarray:
        sc = self.scales[k]
        lo, hi = sc.forward(sc.lo), sc.forward(sc.hi)
        if hi == lo:
            return np.zeros_like(np.asarray(values, dtype=np.float64))
        return (sc.forward(np.asarray(values, dtype=np.float64)) - lo) / (hi - lo)

    def encode(self, point) -> np.ndarray:
        if not isinstance(point, (tuple, list)):
            point = self.space.point(self.space.index_of(point))
        return np.array([float(self._unit(k, v)) for k, v in enumerate(point)])

    def decode(self, vector) -> tuple:
        """Nearest grid point, axis by axis, in the encoded coordinates."""
        out = []
        for k, axis in enumerate(self.space.axes):
            grid = self._unit(k, np.asarray(axis.values, dtype=np.float64))
            out.append(axis.values[int(np.argmin(np.abs(grid - vector[k])))])
        return tuple(out)

    def encode_all(self) -> np.ndarray:
        """Encoded vector for every grid index, in enumeration order."""
        grids = np.meshgrid(*(self._unit(k, np.asarray(a.values, dtype=np.float64))
                              for k, a in enumerate(self.space.axes)), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


def random_search(space: SearchSpace, evaluator: Evaluator, budget: int, seed: int, journal_path,
                  config_digest: str = "", config: dict | None = None) -> loop.Observation:
    problem = loop.Problem(space, evaluator, strategy="random", seed=seed, budget=budget)
    return loop.run(problem, journal_path, config_digest, config)


def raw_bo_problem(space: SearchSpace, evaluator: Evaluator, budget: int, seed: int,
                   codec: RawVectorCodec | None = None, **kwargs) -> loop.Problem:
    codec = codec or RawVectorCodec(space)
    return loop.Problem(space, evaluator, strategy="raw_bo", seed=seed, budget=budget,
                        inputs=codec.encode_all(), features=None, **kwargs)


def raw_bo(space: SearchSpace, evaluator: Evaluator, budget: int, seed: int, journal_path,
           codec: RawVectorCodec | None = None, config_digest: str = "",
           config: dict | None = None) -> loop.Observation:
    problem = raw_bo_problem(space, evaluator, budget, seed, codec)
    return loop.run(problem, journal_path, config_digest, config)

