"""The optimization loop, its journal, and crash-safe resumption.

Each iteration selects a candidate, evaluates it, appends one JSON line to the
journal (flushed and fsynced), then refits the surrogate on all successful
observations. All randomness comes from counter-based substreams of the run
seed, and every fit is a deterministic function of the observations so far.
Replaying a journal therefore rebuilds the exact loop state, and a resumed run
continues along the same trajectory as an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import acquire
from .embed import FeatureExtractorParams
from .errors import (
    AlreadyConsumed,
    ConfigMismatch,
    EmptyPool,
    EvaluatorFailure,
    JournalCorrupt,
    OutOfRange,
    WarmStartNotInSpace,
)
from .evaluate import Evaluator
from .rng import substream, subseed
from .space import CandidatePool, HyperparamConfig, SearchSpace
from .surrogate import KernelParams, SurrogateState, fit

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_FAILURES = 5
TIMING_KEYS = ("wall_time_s", "timestamp")


@dataclass(frozen=True)
class Observation:
    config: HyperparamConfig
    metric: float
    iteration: int
    wall_time_s: float = 0.0
    candidate_index: int = -1


class RunAborted(EvaluatorFailure):
    """Too many consecutive evaluator failures."""


# --------------------------------------------------------------------------
# journal


class Journal:
    """Append-only JSON-lines file: a header line, then one record per attempt."""

    def __init__(self, path, header: dict | None = None, records: list | None = None,
                 torn_at: int | None = None):
        self.path = Path(path)
        self.header = header
        self.records = records or []
        # byte offset where a torn final line starts, if one was dropped on read
        self.torn_at = torn_at

    @classmethod
    def create(cls, path, header: dict) -> "Journal":
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        return cls(path, header, [])

    def append(self, record: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.records.append(record)

    @classmethod
    def read(cls, path) -> "Journal":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise JournalCorrupt(f"cannot read journal {path}: {exc}") from None
        lines = text.split("\n")
        torn_at = None
        if lines and lines[-1] == "":
            lines.pop()
        elif lines:
            logger.warning("dropping torn final journal line in %s", path)
            torn_at = len(text.encode("utf-8")) - len(lines.pop().encode("utf-8"))
        if not lines:
            raise JournalCorrupt(f"journal {path} is empty")
        try:
            parsed = [json.loads(line) for line in lines]
        except ValueError as exc:
            raise JournalCorrupt(f"journal {path} has a malformed line: {exc}") from None
        if not isinstance(parsed[0], dict) or "header" not in parsed[0]:
            raise JournalCorrupt("journal does not start with a header line")
        records = parsed[1:]
        seen = set()
        for k, rec in enumerate(records, start=1):
            missing = {"iter", "cand", "config", "metric", "status", "diag"} - set(rec) if isinstance(rec, dict) else {"*"}
            if missing:
                raise JournalCorrupt(f"record {k} lacks fields {sorted(missing)}")
            if rec["iter"] in seen:
                raise JournalCorrupt(f"duplicate iteration {rec['iter']}")
            seen.add(rec["iter"])
            if rec["iter"] != k:
                raise JournalCorrupt(f"record {k} has iteration {rec['iter']}")
            if rec["status"] not in ("ok", "failed"):
                raise JournalCorrupt(f"record {k} has unknown status {rec['status']!r}")
            if rec["status"] == "ok" and not isinstance(rec["metric"], (int, float)):
                raise JournalCorrupt(f"record {k} is ok but has no metric")
        return cls(path, parsed[0]["header"], records, torn_at)

    def drop_torn_tail(self) -> None:
        """Cut a torn final line off the file so appends start on a line boundary."""
        if self.torn_at is not None:
            os.truncate(self.path, self.torn_at)
            self.torn_at = None


def strip_timing(record: dict) -> dict:
    """Record without wall-clock fields, for determinism comparisons."""
    out = dict(record)
    out["diag"] = {k: v for k, v in record.get("diag", {}).items() if k not in TIMING_KEYS}
    return out


# --------------------------------------------------------------------------
# problem definition


@dataclass
class Problem:
    """Everything the loop needs, independent of where it came from.

    ``inputs`` holds one row per grid index: base embeddings for the deep
    kernel (with ``features`` the initial projection layer), or fixed encoded
    vectors with ``features=None``. Random search needs no inputs.
    """

    space: SearchSpace
    evaluator: Evaluator
    strategy: str = "deep_kernel"
    seed: int = 0
    budget: int = 30
    inputs: np.ndarray | None = None
    features: FeatureExtractorParams | None = None
    warm_start: Sequence[HyperparamConfig] = ()
    fit_steps: int = 200
    diagnostics_dir: Path | None = None

    @property
    def model_based(self) -> bool:
        return self.strategy != "random"


@dataclass
class LoopState:
    pool: CandidatePool
    observations: list = field(default_factory=list)
    surrogate: SurrogateState | None = None
    kernel: KernelParams = field(default_factory=KernelParams)
    features: FeatureExtractorParams | None = None
    attempts: int = 0
    leading_failures: int = 0
    consecutive_failures: int = 0
    permutation: np.ndarray | None = None
    perm_pos: int = 0

    def best(self, higher_is_better: bool = True) -> Observation | None:
        if not self.observations:
            return None
        sign = 1.0 if higher_is_better else -1.0
        return max(self.observations, key=lambda o: (sign * o.metric, -o.iteration))


def choose_initial(pool: CandidatePool, seed: int, warm_start: Sequence[HyperparamConfig] | None = None,
                   attempt: int = 0) -> int:
    """First remaining warm-start config, else a seeded uniform draw from the pool."""
    if pool.n_remaining == 0:
        raise EmptyPool("candidate pool is exhausted")
    for cfg in warm_start or ():
        try:
            index = pool.space.index_of(cfg)
        except OutOfRange as exc:
            raise WarmStartNotInSpace(str(exc)) from None
        if pool.is_remaining(index):
            return index
    remaining = pool.remaining()
    rng = substream(seed, "initial", attempt)
    return int(remaining[rng.integers(remaining.size)])


def _targets(state: LoopState, problem: Problem) -> tuple[np.ndarray, np.ndarray]:
    sign = 1.0 if problem.evaluator.higher_is_better else -1.0
    idx = np.array([o.candidate_index for o in state.observations], dtype=np.int64)
    y = np.array([sign * o.metric for o in state.observations])
    return idx, y


def refit(state: LoopState, problem: Problem) -> SurrogateState:
    """Fit on all observations, warm-started from the previous fit."""
    idx, y = _targets(state, problem)
    surrogate = fit(
        problem.inputs[idx],
        y,
        kernel=state.kernel,
        features=state.features,
        budget=problem.fit_steps,
        seed=problem.seed,
        stream=(len(idx),),
    )
    state.surrogate = surrogate
    state.kernel = surrogate.kernel
    state.features = surrogate.features
    return surrogate


def new_state(problem: Problem) -> LoopState:
    state = LoopState(pool=CandidatePool(problem.space), features=problem.features)
    if problem.strategy == "random":
        state.permutation = substream(problem.seed, "random-search").permutation(problem.space.size)
    return state


def _apply_record(state: LoopState, problem: Problem, rec: dict, fit_after: bool) -> None:
    state.attempts += 1
    try:
        state.pool.take(rec["cand"])
    except (AlreadyConsumed, OutOfRange) as exc:
        raise JournalCorrupt(f"record {rec['iter']}: {exc}") from None
    if rec["status"] == "ok":
        obs = Observation(problem.space.config(rec["cand"]), float(rec["metric"]), rec["iter"],
                          rec["diag"].get("wall_time_s", 0.0), rec["cand"])
        state.observations.append(obs)
        state.consecutive_failures = 0
        if fit_after and problem.model_based:
            refit(state, problem)
    else:
        state.consecutive_failures += 1
        if not state.observations:
            state.leading_failures += 1


def replay(problem: Problem, records: Sequence[dict], final_fit: bool = False) -> LoopState:
    """Rebuild loop state from journal records.

    Fits happen after every successful record except one that completes the
    budget, exactly as in a live run. ``final_fit`` forces that last fit too
    (used for exporting learned features).
    """
    state = new_state(problem)
    n_ok_total = sum(1 for r in records if r["status"] == "ok")
    n_ok = 0
    for rec in records:
        if rec["status"] == "ok":
            n_ok += 1
        wants_fit = n_ok < problem.budget or (final_fit and n_ok == n_ok_total)
        _apply_record(state, problem, rec, fit_after=wants_fit and rec["status"] == "ok")
    if final_fit and problem.model_based and state.observations and state.surrogate is None:
        refit(state, problem)
    return state


def _next_random(state: LoopState) -> int:
    perm = state.permutation
    while state.perm_pos < perm.size and not state.pool.is_remaining(int(perm[state.perm_pos])):
        state.perm_pos += 1
    if state.perm_pos >= perm.size:
        raise EmptyPool("candidate pool is exhausted")
    return int(perm[state.perm_pos])


def select(state: LoopState, problem: Problem) -> tuple[int, dict]:
    """Next candidate index and the diagnostics explaining the choice."""
    if problem.strategy == "random":
        return _next_random(state), {"source": "random"}
    if not state.observations:
        index = choose_initial(state.pool, problem.seed, problem.warm_start, state.leading_failures)
        return index, {"source": "initial"}
    surrogate = state.surrogate
    best = state.best(problem.evaluator.higher_is_better)
    sign = 1.0 if problem.evaluator.higher_is_better else -1.0
    ei, mean, var = acquire.score_arrays(surrogate, problem.inputs, sign * best.metric)
    remaining = state.pool.remaining()
    index = acquire.select_from_arrays(remaining, ei[remaining], var[remaining])
    diag = {"source": "acquisition", "ei": float(ei[index]), "pred_mean": float(sign * mean[index]),
            "pred_var": float(var[index]), **surrogate.diagnostics()}
    if problem.diagnostics_dir is not None:
        _dump_diagnostics(problem.diagnostics_dir, state.attempts + 1, surrogate, remaining, ei, mean, var)
    return index, diag


def _dump_diagnostics(directory: Path, iteration: int, surrogate, remaining, ei, mean, var, top_k: int = 10):
    directory.mkdir(parents=True, exist_ok=True)
    order = remaining[np.lexsort((remaining, -var[remaining], -ei[remaining]))][:top_k]
    payload = {
        "iter": iteration,
        "mll_trace": [float(v) for v in surrogate.mll_trace],
        **{k: v for k, v in surrogate.kernel.to_json().items()},
        "top_k": [{"cand": int(i), "ei": float(ei[i]), "mean": float(mean[i]), "variance": float(var[i])}
                  for i in order],
    }
    (directory / f"iter_{iteration:04d}.json").write_text(json.dumps(payload, indent=1))


def step(state: LoopState, problem: Problem, journal: Journal,
         on_record: Callable[[dict, LoopState], None] | None = None) -> dict:
    """Run one attempt: select, evaluate, journal, refit."""
    if state.consecutive_failures >= MAX_CONSECUTIVE_FAILURES:
        raise RunAborted(f"{state.consecutive_failures} consecutive evaluation failures")
    index, diag = select(state, problem)
    iteration = state.attempts + 1
    config = problem.space.config(index)
    eval_seed = subseed(problem.seed, "eval", iteration)
    started = time.perf_counter()
    try:
        metric = float(problem.evaluator.evaluate(config, seed=eval_seed, tag=f"{iteration:04d}"))
        if not np.isfinite(metric):
            raise EvaluatorFailure(f"non-finite metric {metric!r}")
        status, error = "ok", None
    except EvaluatorFailure as exc:
        metric, status, error = None, "failed", str(exc)
        logger.warning("evaluation of candidate %d failed: %s", index, exc)
    diag["wall_time_s"] = time.perf_counter() - started
    diag["timestamp"] = datetime.now(timezone.utc).isoformat()
    if error is not None:
        diag["error"] = error
    record = {"iter": iteration, "cand": index, "config": config.as_dict(), "metric": metric,
              "status": status, "diag": diag}
    journal.append(record)
    n_ok = len(state.observations) + (status == "ok")
    _apply_record(state, problem, record, fit_after=n_ok < problem.budget)
    if on_record is not None:
        on_record(record, state)
    return record


def continue_run(state: LoopState, problem: Problem, journal: Journal,
                 on_record: Callable[[dict, LoopState], None] | None = None) -> LoopState:
    while len(state.observations) < problem.budget:
        step(state, problem, journal, on_record)
    return state


def journal_header(problem: Problem, config_digest: str, config: dict | None = None) -> dict:
    return {
        "run_id": f"{config_digest[:12]}-s{problem.seed}",
        "seed": problem.seed,
        "digest": config_digest,
        "strategy": problem.strategy,
        "budget": problem.budget,
        "evaluator": problem.evaluator.id,
        "config": config,
    }


def run(problem: Problem, journal_path, config_digest: str = "", config: dict | None = None,
        on_record: Callable[[dict, LoopState], None] | None = None) -> Observation:
    """Run the loop from scratch, journaling to ``journal_path``. Returns the best observation."""
    journal = Journal.create(journal_path, journal_header(problem, config_digest, config))
    state = continue_run(new_state(problem), problem, journal, on_record)
    return state.best(problem.evaluator.higher_is_better)


def resume(problem: Problem, journal_path, config_digest: str = "",
           on_record: Callable[[dict, LoopState], None] | None = None) -> Observation | None:
    """Continue a journaled run to its budget. A completed run is a no-op."""
    journal = Journal.read(journal_path)
    if journal.header.get("digest", "") != config_digest:
        raise ConfigMismatch("journal was written under a different configuration")
    state = replay(problem, journal.records)
    journal.drop_torn_tail()
    state = continue_run(state, problem, journal, on_record)
    return state.best(problem.evaluator.higher_is_better)
