"""Assemble loop problems from run configs and drive the high-level commands."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import loop
from .analysis import principal_components
from .baselines import RawVectorCodec
from .config import RunConfig, build_space
from .embed import (
    EmbeddingCache,
    EmbeddingProvider,
    FeatureExtractorParams,
    OfflineHashProvider,
    RemoteProvider,
    embed_text,
    extract_features,
)
from .evaluate import (
    CorrelationReport,
    Evaluator,
    ExternalEvaluator,
    SyntheticEvaluator,
    SyntheticLandscape,
    correlation_study,
    make_subset,
)
from .errors import ConfigError, JournalCorrupt
from .prompt import PromptTemplate, render
from .rng import subseed, substream
from .space import HyperparamConfig, SearchSpace

logger = logging.getLogger(__name__)

JOURNAL_NAME = "journal.jsonl"


def make_provider(spec: dict, root_seed: int) -> EmbeddingProvider:
    if spec["kind"] == "offline":
        seed = spec["seed"] if spec["seed"] is not None else subseed(root_seed, "offline-embedder")
        return OfflineHashProvider(spec["dim"], seed)
    return RemoteProvider(spec["url"], spec["model"], spec["dim"], auth_env=spec["auth_env"],
                          max_inflight=spec["max_inflight"], timeout_s=spec["timeout_s"])


def make_evaluator(spec: dict, root_seed: int, output_dir: Path, name: str = "eval") -> Evaluator:
    if spec["kind"] == "synthetic":
        landscape = SyntheticLandscape(spec["landscape_seed"], spec["noise_std"])
        return SyntheticEvaluator(landscape, spec["fraction"], spec["metric"])
    subset_seed = spec["subset_seed"] if spec["subset_seed"] is not None else subseed(root_seed, "subset")
    manifest = make_subset(spec["total_count"], spec["fraction"], subset_seed, spec["dataset_id"])
    manifest_path = manifest.write(output_dir / f"{name}_subset_manifest.json")
    return ExternalEvaluator(spec["command"], output_dir / "requests" / name, manifest_path, spec["metric"],
                             spec["timeout_s"], spec["result_path"], spec["higher_is_better"])


def pool_texts(space: SearchSpace, template: PromptTemplate) -> list[str]:
    return [render(template, space.config(i)) for i in range(space.size)]


def pool_embeddings(space: SearchSpace, template: PromptTemplate, provider: EmbeddingProvider,
                    cache: EmbeddingCache | None) -> np.ndarray:
    """Base embedding of every grid config, computed once per pool."""
    return embed_text(provider, pool_texts(space, template), cache)


@dataclass
class Built:
    problem: loop.Problem
    config: RunConfig
    provider: EmbeddingProvider | None = None
    cache: EmbeddingCache | None = None

    @property
    def journal_path(self) -> Path:
        return self.config.output_dir / JOURNAL_NAME


def build_problem(cfg: RunConfig, provider: EmbeddingProvider | None = None,
                  evaluator: Evaluator | None = None, cache: EmbeddingCache | None = None) -> Built:
    """Problem for ``cfg``; ``provider``/``evaluator`` override the configured ones."""
    data = cfg.data
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    space = build_space(data)
    seed = data["seed"]
    evaluator = evaluator or make_evaluator(data["evaluator"], seed, out)
    warm = [HyperparamConfig.from_mapping(w) for w in data["warm_start"]]
    problem = loop.Problem(space, evaluator, strategy=data["strategy"], seed=seed, budget=data["budget"],
                           warm_start=warm, fit_steps=data["surrogate"]["max_steps"],
                           diagnostics_dir=out / "diagnostics" if data["diagnostics"] else None)
    if data["strategy"] == "raw_bo":
        problem.inputs = RawVectorCodec(space).encode_all()
    elif data["strategy"] == "deep_kernel":
        provider = provider or make_provider(data["provider"], seed)
        if cache is None:
            cache = EmbeddingCache(data["cache_path"] or out / "embeddings.sqlite")
        template = PromptTemplate.from_spec(data["template"]["style"], data["template"]["preamble_path"])
        problem.inputs = pool_embeddings(space, template, provider, cache)
        f = data["features"]
        problem.features = FeatureExtractorParams.initialize(
            problem.inputs.shape[1], f["dim_token"], f["dim_out"], f["proj_dropout"],
            seed=subseed(seed, "projection-init"))
    return Built(problem, cfg, provider, cache)


def run_config(cfg: RunConfig, on_record=None, **overrides) -> loop.Observation:
    built = build_problem(cfg, **overrides)
    return loop.run(built.problem, built.journal_path, cfg.digest, cfg.data, on_record)


def resume_config(cfg: RunConfig, journal_path=None, on_record=None, **overrides) -> loop.Observation | None:
    built = build_problem(cfg, **overrides)
    return loop.resume(built.problem, journal_path or built.journal_path, cfg.digest, on_record)


# --------------------------------------------------------------------------
# trajectory export


def trajectory_features(journal_path, kind: str = "projected", **overrides):
    """Feature vectors of every successful observation, in journal order.

    ``projected`` replays the run (including the final fit) and maps each
    observation through the learned projection. ``base`` uses the frozen
    embeddings, or the encoded vectors for raw BO.
    """
    journal = loop.Journal.read(journal_path)
    raw_cfg = journal.header.get("config")
    if raw_cfg is None:
        raise JournalCorrupt("journal header carries no config; cannot reconstruct features")
    cfg = RunConfig.from_mapping(raw_cfg)
    if cfg.digest != journal.header.get("digest"):
        raise JournalCorrupt("journal header config does not match its digest")
    built = build_problem(cfg, **overrides)
    problem = built.problem
    ok = [r for r in journal.records if r["status"] == "ok"]
    if not ok:
        raise JournalCorrupt("journal has no successful observations")
    idx = np.array([r["cand"] for r in ok])
    if problem.inputs is None:
        feats = RawVectorCodec(problem.space).encode_all()[idx]
    elif kind == "base" or problem.features is None:
        feats = problem.inputs[idx]
    else:
        state = loop.replay(problem, journal.records, final_fit=True)
        feats = extract_features(state.features, problem.inputs[idx])
    return ok, feats, problem.space


def export_trajectory(journal_path, out_path, kind: str = "projected", **overrides) -> Path:
    """CSV of the first two principal components of each observation's features."""
    records, feats, space = trajectory_features(journal_path, kind, **overrides)
    scores, _, _ = principal_components(feats, 2)
    if scores.shape[1] < 2:
        scores = np.hstack([scores, np.zeros((scores.shape[0], 2 - scores.shape[1]))])
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    names = list(space.names)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        writer.writerow(["iter", "pc1", "pc2", "metric", *names, "alpha"])
        for rec, (pc1, pc2) in zip(records, scores):
            conf = rec["config"]
            writer.writerow([rec["iter"], repr(float(pc1)), repr(float(pc2)), repr(float(rec["metric"])),
                             *[conf[n] for n in names], conf["alpha_multiplier"] * conf["rank"]])
    return out_path


# --------------------------------------------------------------------------
# correlation analysis


def analyze_correlation(cfg: RunConfig, out_path=None) -> tuple[CorrelationReport, Path]:
    spec = cfg.data["correlation"]
    if spec is None:
        raise ConfigError("correlation", "config has no correlation section")
    if spec["sample_size"] < 2:
        raise ConfigError("correlation.sample_size", "must be at least 2")
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    space = build_space(cfg.data)
    if spec["sample_size"] > space.size:
        raise ConfigError("correlation.sample_size", f"exceeds pool size {space.size}")
    rng = substream(spec["seed"], "correlation-sample")
    picks = np.sort(rng.choice(space.size, size=spec["sample_size"], replace=False))
    configs = [space.config(int(i)) for i in picks]
    eval_a = make_evaluator(spec["a"], cfg.data["seed"], out, "a")
    eval_b = make_evaluator(spec["b"], cfg.data["seed"], out, "b")
    report = correlation_study(configs, eval_a, eval_b, spec["seed"])
    path = Path(out_path) if out_path else out / "correlation_report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = report.to_json()
    payload["evaluator_a"] = eval_a.id
    payload["evaluator_b"] = eval_b.id
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return report, path
