"""Proxy evaluation of configurations.

Evaluators map a :class:`~promptbo.space.HyperparamConfig` to a scalar
metric. :class:`ExternalEvaluator` drives a real fine-tuning script through a
request/response file protocol. :class:`SyntheticEvaluator` scores configs on
a seeded analytic landscape, which stands in for fine-tuning so whole runs can
be done offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadFraction, DegenerateInput, EvaluatorFailure, EvaluatorTimeout
from .rng import substream
from .space import HyperparamConfig, SearchSpace

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# subset manifests


@dataclass(frozen=True)
class SubsetManifest:
    dataset_id: str
    total_count: int
    fraction: float
    seed: int
    indices: tuple[int, ...]
    strategy: str = "random"

    def to_json(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "total": self.total_count,
            "fraction": self.fraction,
            "seed": self.seed,
            "strategy": self.strategy,
            "indices": list(self.indices),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps() + "\n")
        return path

    @classmethod
    def read(cls, path) -> "SubsetManifest":
        data = json.loads(Path(path).read_text())
        return cls(data["dataset_id"], int(data["total"]), float(data["fraction"]), int(data["seed"]),
                   tuple(int(i) for i in data["indices"]), data.get("strategy", "random"))


def make_subset(total_count: int, fraction: float, seed: int, dataset_id: str = "dataset") -> SubsetManifest:
    """Seeded uniform sample of ``round(fraction * total_count)`` row indices."""
    if not (isinstance(fraction, (int, float)) and 0.0 < fraction <= 1.0):
        raise BadFraction(f"fraction must lie in (0, 1], got {fraction!r}")
    if total_count < 1:
        raise BadFraction("total_count must be at least 1")
    k = int(math.floor(fraction * total_count + 0.5))
    if k < 1:
        raise BadFraction(f"fraction {fraction} of {total_count} rows selects nothing")
    if k == total_count:
        indices = np.arange(total_count)
    else:
        indices = np.sort(np.random.default_rng(seed).choice(total_count, size=k, replace=False))
    return SubsetManifest(dataset_id, int(total_count), float(fraction), int(seed), tuple(int(i) for i in indices))


# --------------------------------------------------------------------------
# evaluators


class Evaluator:
    id: str = "evaluator"
    metric_name: str = "metric"
    higher_is_better: bool = True

    def evaluate(self, config: HyperparamConfig, seed: int = 0, tag: str | None = None) -> float:
        raise NotImplementedError


def request_payload(config: HyperparamConfig, manifest_path, metric_name: str) -> dict:
    return {
        "rank": int(config.rank),
        "alpha": config.alpha,
        "batch_size": int(config.batch_size),
        "learning_rate": float(config.learning_rate),
        "dropout": float(config.dropout),
        "subset_manifest": None if manifest_path is None else os.fspath(manifest_path),
        "metric": metric_name,
    }


class ExternalEvaluator(Evaluator):
    """Runs ``command + [request.json]`` and reads ``{"metric": x}`` back.

    If any element of ``command`` contains ``{request}`` the request path is
    substituted there instead of being appended. The response is read from
    ``result_path`` when configured (``{request}`` is substituted there as
    well), otherwise from the last JSON object printed on stdout.
    """

    def __init__(
        self,
        command: Sequence[str],
        request_dir,
        manifest_path=None,
        metric_name: str = "accuracy",
        timeout_s: float = 24 * 3600.0,
        result_path: str | None = None,
        higher_is_better: bool = True,
    ):
        if not command:
            raise ValueError("external evaluator needs a command")
        self.command = [str(c) for c in command]
        self.request_dir = Path(request_dir)
        self.manifest_path = manifest_path
        self.metric_name = metric_name
        self.timeout_s = float(timeout_s)
        self.result_path = result_path
        self.higher_is_better = higher_is_better
        self.id = f"external:{' '.join(self.command)}"
        self.last_metadata: dict | None = None
        self._counter = 0

    def _argv(self, request: Path) -> list[str]:
        if any("{request}" in c for c in self.command):
            return [c.replace("{request}", str(request)) for c in self.command]
        return [*self.command, str(request)]

    def evaluate(self, config: HyperparamConfig, seed: int = 0, tag: str | None = None) -> float:
        self._counter += 1
        self.request_dir.mkdir(parents=True, exist_ok=True)
        request = self.request_dir / f"request_{tag or self._counter}.json"
        request.write_text(json.dumps(request_payload(config, self.manifest_path, self.metric_name), indent=2))
        try:
            proc = subprocess.run(self._argv(request), capture_output=True, text=True, timeout=self.timeout_s)
        except subprocess.TimeoutExpired:
            raise EvaluatorTimeout(f"evaluation exceeded {self.timeout_s:g} s") from None
        except OSError as exc:
            raise EvaluatorFailure(f"could not launch evaluator: {exc}") from exc
        if proc.returncode != 0:
            raise EvaluatorFailure(f"evaluator exited with status {proc.returncode}: {proc.stderr.strip()[-500:]}")
        if self.result_path:
            path = Path(self.result_path.replace("{request}", str(request)))
            try:
                text = path.read_text()
            except OSError as exc:
                raise EvaluatorFailure(f"result file {path} unreadable: {exc}") from exc
        else:
            text = proc.stdout
        return self._parse(text)

    def _parse(self, text: str) -> float:
        response = None
        try:
            response = json.loads(text)
        except ValueError:
            for line in reversed(text.strip().splitlines()):
                try:
                    response = json.loads(line)
                    break
                except ValueError:
                    continue
        if not isinstance(response, dict) or "metric" not in response:
            raise EvaluatorFailure(f"unparseable evaluator output: {text.strip()[-200:]!r}")
        metric = response["metric"]
        if isinstance(metric, bool) or not isinstance(metric, (int, float)) or not math.isfinite(metric):
            raise EvaluatorFailure(f"metric must be a finite number, got {metric!r}")
        self.last_metadata = response.get("metadata")
        return float(metric)


def external_evaluate(config: HyperparamConfig, manifest: SubsetManifest | None, command: Sequence[str],
                      workdir, metric_name: str = "accuracy", timeout_s: float = 30.0) -> tuple[float, float]:
    """One-shot external evaluation. Returns ``(metric, wall_time_s)``."""
    workdir = Path(workdir)
    manifest_path = None if manifest is None else manifest.write(workdir / "subset_manifest.json")
    evaluator = ExternalEvaluator(command, workdir, manifest_path, metric_name, timeout_s)
    start = time.perf_counter()
    metric = evaluator.evaluate(config)
    return metric, time.perf_counter() - start


# --------------------------------------------------------------------------
# synthetic landscape


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class SyntheticLandscape:
    """Seeded smooth response surface over the LoRA axes, valued in (0, 1).

    Coordinates are ``log2 rank``, ``log2 multiplier``, ``log2 batch``,
    ``log10 lr`` and dropout. The score is a peak minus weighted squared
    distances to interior optima, where the best multiplier depends on rank
    and the best learning rate depends on batch size and multiplier, plus small
    pairwise bilinear terms. The score is passed through a logistic squash.
    """

    seed: int = 0
    noise_std: float = 0.005
    params: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        rng = substream(self.seed, "landscape")
        p = {
            "peak": rng.uniform(0.8, 1.4),
            "rank_opt": rng.uniform(3.0, 7.0),
            "rank_width": rng.uniform(2.5, 4.0),
            "mult_opt": rng.uniform(1.0, 5.0),
            "mult_slope": rng.uniform(0.2, 0.6),
            "mult_width": rng.uniform(2.0, 3.0),
            "lr_opt": rng.uniform(-4.8, -3.5),
            "lr_batch_slope": rng.uniform(0.1, 0.2),
            "lr_mult_slope": rng.uniform(0.1, 0.2),
            "lr_width": rng.uniform(0.8, 1.2),
            "batch_opt": rng.uniform(1.5, 4.0),
            "dropout_opt": rng.uniform(0.05, 0.25),
            "weights": (1.5, 0.6, 0.8, 0.4, 0.2),
            "pairs": rng.normal(0.0, 0.08, size=(5, 5)),
        }
        object.__setattr__(self, "params", p)

    def score(self, rank, multiplier, batch, lr, dropout):
        """Noise-free pre-squash score; broadcasts over array arguments."""
        p = self.params
        r = np.log2(np.asarray(rank, dtype=np.float64))
        a = np.log2(np.asarray(multiplier, dtype=np.float64))
        b = np.log2(np.asarray(batch, dtype=np.float64))
        lr_log = np.log10(np.asarray(lr, dtype=np.float64))
        d = np.asarray(dropout, dtype=np.float64)
        mult_opt = p["mult_opt"] - p["mult_slope"] * (r - 4.0)
        lr_opt = p["lr_opt"] + p["lr_batch_slope"] * (b - 4.0) - p["lr_mult_slope"] * (a - p["mult_opt"])
        w = p["weights"]
        s = (
            p["peak"]
            - w[0] * ((lr_log - lr_opt) / p["lr_width"]) ** 2
            - w[1] * ((r - p["rank_opt"]) / p["rank_width"]) ** 2
            - w[2] * ((a - mult_opt) / p["mult_width"]) ** 2
            - w[3] * ((b - p["batch_opt"]) / 3.0) ** 2
            - w[4] * ((d - p["dropout_opt"]) / 0.15) ** 2
        )
        # unit-range coordinates for the weak bilinear couplings
        u = [(r - 4.0) / 4.0, (a - 3.0) / 4.0, (b - 4.5) / 3.5, (lr_log + 4.15) / 1.85, (d - 0.15) / 0.15]
        pairs = p["pairs"]
        for i in range(5):
            for j in range(i + 1, 5):
                s = s + pairs[i, j] * u[i] * u[j]
        return s

    def mean_metric(self, config: HyperparamConfig) -> float:
        return float(_sigmoid(self.score(config.rank, config.alpha_multiplier, config.batch_size,
                                         config.learning_rate, config.dropout)))

    def grid_values(self, space: SearchSpace) -> np.ndarray:
        """Noise-free metric for every grid index, in enumeration order."""
        grids = np.meshgrid(*(np.asarray(a.values, dtype=np.float64) for a in space.axes), indexing="ij")
        named = dict(zip(space.names, (g.ravel() for g in grids)))
        return _sigmoid(self.score(named["rank"], named["alpha_multiplier"], named["batch_size"],
                                   named["learning_rate"], named["dropout"]))


def subset_noise_std(fraction: float) -> float:
    """Std of the fixed per-config gap between subset and full training.

    0.02 at a 10% subset, shrinking to 0 at the full set.
    """
    return 0.02 * math.sqrt((1.0 - fraction) / (9.0 * fraction))


def _config_key(config: HyperparamConfig) -> int:
    text = json.dumps(config.as_dict(), sort_keys=True)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def synthetic_evaluate(landscape: SyntheticLandscape, config: HyperparamConfig, eval_seed: int,
                       fraction: float = 1.0) -> float:
    """Landscape value plus subset gap plus seeded evaluation noise, clipped to [0, 1]."""
    value = landscape.mean_metric(config)
    if fraction < 1.0:
        gap_rng = substream(landscape.seed, "subset-gap", int(round(fraction * 1e6)), _config_key(config))
        value += subset_noise_std(fraction) * float(gap_rng.standard_normal())
    if landscape.noise_std > 0:
        value += landscape.noise_std * float(np.random.default_rng(eval_seed).standard_normal())
    return float(min(1.0, max(0.0, value)))


class SyntheticEvaluator(Evaluator):
    def __init__(self, landscape: SyntheticLandscape, fraction: float = 1.0, metric_name: str = "accuracy"):
        if not 0.0 < fraction <= 1.0:
            raise BadFraction(f"fraction must lie in (0, 1], got {fraction!r}")
        self.landscape = landscape
        self.fraction = float(fraction)
        self.metric_name = metric_name
        self.id = f"synthetic:seed={landscape.seed}:noise={landscape.noise_std:g}:fraction={self.fraction:g}"

    def evaluate(self, config: HyperparamConfig, seed: int = 0, tag: str | None = None) -> float:
        return synthetic_evaluate(self.landscape, config, seed, self.fraction)


# --------------------------------------------------------------------------
# correlation analysis


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length sequences of at least 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInput("pearson correlation undefined for zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


@dataclass
class CorrelationReport:
    pairs: list
    pearson: float

    def to_json(self) -> dict:
        return {"pairs": self.pairs, "pearson": self.pearson}


def correlation_study(configs: Sequence[HyperparamConfig], evaluator_a: Evaluator, evaluator_b: Evaluator,
                      seed: int = 0) -> CorrelationReport:
    """Evaluate each config under both evaluators and correlate the metrics."""
    if len(configs) < 2:
        raise ValueError("correlation study needs at least 2 configs")
    pairs = []
    for k, config in enumerate(configs):
        a = evaluator_a.evaluate(config, seed=int(substream(seed, "corr-a", k).integers(2**62)), tag=f"a_{k}")
        b = evaluator_b.evaluate(config, seed=int(substream(seed, "corr-b", k).integers(2**62)), tag=f"b_{k}")
        pairs.append({"config": config.as_dict(), "a": a, "b": b})
    return CorrelationReport(pairs, pearson([p["a"] for p in pairs], [p["b"] for p in pairs]))
