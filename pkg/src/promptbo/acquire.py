"""Expected Improvement over the candidate pool (maximization convention)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import EmptyPool
from .surrogate import SurrogateState, posterior

SIGMA_FLOOR = 1e-12
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class AcquisitionScore:
    candidate_index: int
    ei: float
    mean: float
    variance: float


def expected_improvement(mean, variance, best_y):
    """EI of a Gaussian ``N(mean, variance)`` over the incumbent ``best_y``.

    Works elementwise on arrays. Where the standard deviation is at most
    1e-12 the improvement is the deterministic ``max(0, mean - best_y)``.
    """
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    gap = mean - best_y
    safe = sigma > SIGMA_FLOOR
    u = np.where(safe, gap / np.where(safe, sigma, 1.0), 0.0)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    ei = np.where(safe, gap * ndtr(u) + sigma * pdf, np.maximum(gap, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def score_arrays(state: SurrogateState, inputs: np.ndarray, best_y: float):
    """Inference-mode posterior and EI for each row of ``inputs``."""
    mean, var = posterior(state, np.atleast_2d(inputs))
    return expected_improvement(mean, var, best_y), mean, var


def score_pool(state: SurrogateState, candidates, inputs: np.ndarray, best_y: float) -> list[AcquisitionScore]:
    """Scores for every candidate index in ``candidates``.

    ``inputs`` holds one row per candidate, aligned with ``candidates``.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    ei, mean, var = score_arrays(state, inputs, best_y)
    return [
        AcquisitionScore(int(c), float(a), float(m), float(v))
        for c, a, m, v in zip(candidates, ei, mean, var)
    ]


def select_from_arrays(candidates, ei, variance) -> int:
    """Argmax EI; ties go to higher variance, then to the lower index."""
    candidates = np.asarray(candidates)
    if candidates.size == 0:
        raise EmptyPool("no candidates to select from")
    order = np.lexsort((candidates, -np.asarray(variance), -np.asarray(ei)))
    return int(candidates[order[0]])


def select_next(scores: list[AcquisitionScore]) -> int:
    if not scores:
        raise EmptyPool("no candidates to select from")
    return select_from_arrays(
        [s.candidate_index for s in scores], [s.ei for s in scores], [s.variance for s in scores]
    )
