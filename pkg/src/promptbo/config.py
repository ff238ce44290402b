"""Run configuration: JSON parsing, validation with field paths, digests."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .space import HyperparamConfig, SearchSpace, default_lora_space

STRATEGIES = ("deep_kernel", "random", "raw_bo")

_PROVIDER_DEFAULTS = {
    "offline": {"kind": "offline", "dim": 256, "seed": None},
    "remote": {"kind": "remote", "url": None, "model": None, "auth_env": None, "dim": 3584,
               "max_inflight": 4, "timeout_s": 60.0},
}
_EVALUATOR_DEFAULTS = {
    "synthetic": {"kind": "synthetic", "landscape_seed": 0, "noise_std": 0.005, "fraction": 1.0,
                  "metric": "accuracy"},
    "external": {"kind": "external", "command": None, "timeout_s": 86400.0, "fraction": 0.1,
                 "dataset_id": "train", "total_count": None, "subset_seed": None, "metric": "accuracy",
                 "result_path": None, "higher_is_better": True},
}
_TOP_DEFAULTS = {
    "seed": 0,
    "budget": 30,
    "strategy": "deep_kernel",
    "space": "default_lora",
    "template": {"style": "domain_aware", "preamble_path": None},
    "features": {"dim_token": 64, "dim_out": 128, "proj_dropout": 0.1},
    "surrogate": {"max_steps": 200},
    "warm_start": [],
    "output_dir": "runs/default",
    "cache_path": None,
    "diagnostics": False,
    "correlation": None,
}
# fields that do not change what a run computes
_NON_SEMANTIC = ("output_dir", "cache_path", "diagnostics", "correlation")


def _int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return value


def _float(value, path, lo=None, hi=None, lo_open=False, hi_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if lo is not None and (value < lo or (lo_open and value == lo)):
        raise ConfigError(path, f"must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (value > hi or (hi_open and value == hi)):
        raise ConfigError(path, f"must be {'<' if hi_open else '<='} {hi}")
    return value


def _str(value, path, optional=False):
    if value is None and optional:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(path, f"expected a non-empty string, got {value!r}")
    return value


def _merge(defaults: dict, given, path: str) -> dict:
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, Mapping):
        raise ConfigError(path, "expected an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


def normalize_provider(spec, path="provider") -> dict:
    if spec is None:
        spec = {"kind": "offline"}
    if not isinstance(spec, Mapping):
        raise ConfigError(path, "expected an object")
    kind = spec.get("kind", "offline")
    if kind not in _PROVIDER_DEFAULTS:
        raise ConfigError(f"{path}.kind", f"expected one of {sorted(_PROVIDER_DEFAULTS)}")
    p = _merge(_PROVIDER_DEFAULTS[kind], spec, path)
    p["dim"] = _int(p["dim"], f"{path}.dim", 2)
    if kind == "offline":
        if p["seed"] is not None:
            p["seed"] = _int(p["seed"], f"{path}.seed")
    else:
        p["url"] = _str(p["url"], f"{path}.url")
        p["model"] = _str(p["model"], f"{path}.model")
        p["auth_env"] = _str(p["auth_env"], f"{path}.auth_env", optional=True)
        p["max_inflight"] = _int(p["max_inflight"], f"{path}.max_inflight", 1)
        p["timeout_s"] = _float(p["timeout_s"], f"{path}.timeout_s", 0, lo_open=True)
    return p


def normalize_evaluator(spec, path="evaluator") -> dict:
    if spec is None:
        spec = {"kind": "synthetic"}
    if not isinstance(spec, Mapping):
        raise ConfigError(path, "expected an object")
    kind = spec.get("kind", "synthetic")
    if kind not in _EVALUATOR_DEFAULTS:
        raise ConfigError(f"{path}.kind", f"expected one of {sorted(_EVALUATOR_DEFAULTS)}")
    e = _merge(_EVALUATOR_DEFAULTS[kind], spec, path)
    e["fraction"] = _float(e["fraction"], f"{path}.fraction", 0, 1, lo_open=True)
    e["metric"] = _str(e["metric"], f"{path}.metric")
    if kind == "synthetic":
        e["landscape_seed"] = _int(e["landscape_seed"], f"{path}.landscape_seed")
        e["noise_std"] = _float(e["noise_std"], f"{path}.noise_std", 0)
    else:
        cmd = e["command"]
        if isinstance(cmd, str):
            cmd = [cmd]
        if not isinstance(cmd, list) or not cmd or not all(isinstance(c, str) and c for c in cmd):
            raise ConfigError(f"{path}.command", "expected a non-empty list of strings")
        e["command"] = cmd
        e["timeout_s"] = _float(e["timeout_s"], f"{path}.timeout_s", 0, lo_open=True)
        e["dataset_id"] = _str(e["dataset_id"], f"{path}.dataset_id")
        if e["total_count"] is None:
            raise ConfigError(f"{path}.total_count", "required for external evaluators")
        e["total_count"] = _int(e["total_count"], f"{path}.total_count", 1)
        if e["subset_seed"] is not None:
            e["subset_seed"] = _int(e["subset_seed"], f"{path}.subset_seed")
        e["result_path"] = _str(e["result_path"], f"{path}.result_path", optional=True)
        if not isinstance(e["higher_is_better"], bool):
            raise ConfigError(f"{path}.higher_is_better", "expected true or false")
    return e


def normalize(raw: Mapping[str, Any]) -> dict:
    """Fill defaults and validate. Raises ConfigError naming the bad field."""
    if not isinstance(raw, Mapping):
        raise ConfigError("", "config must be a JSON object")
    unknown = set(raw) - set(_TOP_DEFAULTS) - {"provider", "evaluator"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    cfg = copy.deepcopy(_TOP_DEFAULTS)
    cfg.update(copy.deepcopy(dict(raw)))
    cfg["seed"] = _int(cfg["seed"], "seed")
    cfg["budget"] = _int(cfg["budget"], "budget", 1)
    if cfg["strategy"] not in STRATEGIES:
        raise ConfigError("strategy", f"expected one of {list(STRATEGIES)}")

    space = cfg["space"]
    if space != "default_lora":
        built = SearchSpace.from_json(space)
        if not built.is_lora:
            raise ConfigError("space.axes", f"axes must be exactly {sorted(['rank', 'alpha_multiplier', 'batch_size', 'learning_rate', 'dropout'])}")
        cfg["space"] = _canonical_space(built)

    t = _merge(_TOP_DEFAULTS["template"], raw.get("template"), "template")
    if t["style"] not in ("plain", "domain_aware"):
        raise ConfigError("template.style", "expected 'plain' or 'domain_aware'")
    t["preamble_path"] = _str(t["preamble_path"], "template.preamble_path", optional=True)
    cfg["template"] = t

    cfg["provider"] = normalize_provider(raw.get("provider"))
    f = _merge(_TOP_DEFAULTS["features"], raw.get("features"), "features")
    f["dim_token"] = _int(f["dim_token"], "features.dim_token", 0)
    f["dim_out"] = _int(f["dim_out"], "features.dim_out", 1)
    f["proj_dropout"] = _float(f["proj_dropout"], "features.proj_dropout", 0, 1, hi_open=True)
    cfg["features"] = f
    s = _merge(_TOP_DEFAULTS["surrogate"], raw.get("surrogate"), "surrogate")
    s["max_steps"] = _int(s["max_steps"], "surrogate.max_steps", 1)
    cfg["surrogate"] = s
    cfg["evaluator"] = normalize_evaluator(raw.get("evaluator"))

    space_obj = build_space(cfg)
    if not isinstance(cfg["warm_start"], list):
        raise ConfigError("warm_start", "expected a list of configs")
    warm = []
    for k, item in enumerate(cfg["warm_start"]):
        try:
            hp = HyperparamConfig.from_mapping(item)
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"warm_start[{k}]", f"invalid config: {exc}") from None
        warm.append(hp.as_dict())
    cfg["warm_start"] = warm
    if cfg["budget"] > space_obj.size:
        raise ConfigError("budget", f"exceeds pool size {space_obj.size}")

    cfg["output_dir"] = _str(cfg["output_dir"], "output_dir")
    cfg["cache_path"] = _str(cfg["cache_path"], "cache_path", optional=True)
    if not isinstance(cfg["diagnostics"], bool):
        raise ConfigError("diagnostics", "expected true or false")
    if cfg["correlation"] is not None:
        cfg["correlation"] = normalize_correlation(cfg["correlation"])
    return cfg


def normalize_correlation(spec) -> dict:
    c = _merge({"sample_size": 20, "seed": 0, "a": None, "b": None}, spec, "correlation")
    c["sample_size"] = _int(c["sample_size"], "correlation.sample_size")
    c["seed"] = _int(c["seed"], "correlation.seed")
    if c["a"] is None or c["b"] is None:
        raise ConfigError("correlation", "needs evaluator specs 'a' and 'b'")
    c["a"] = normalize_evaluator(c["a"], "correlation.a")
    c["b"] = normalize_evaluator(c["b"], "correlation.b")
    return c


def _canonical_space(space: SearchSpace) -> dict:
    return {"axes": [{"name": a.name, "values": [float(v) if a.name not in ("rank", "batch_size") else int(v)
                                                   for v in a.values]} for a in space.axes]}


def build_space(cfg: Mapping) -> SearchSpace:
    if cfg["space"] == "default_lora":
        return default_lora_space()
    return SearchSpace.from_json(cfg["space"])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest(cfg: Mapping) -> str:
    """Stable hash of the parts of a normalized config that affect a run."""
    semantic = {k: v for k, v in cfg.items() if k not in _NON_SEMANTIC}
    if semantic.get("space") == "default_lora":
        semantic["space"] = _canonical_space(default_lora_space())
    return hashlib.sha256(canonical_json(semantic).encode()).hexdigest()


@dataclass
class RunConfig:
    data: dict

    @property
    def digest(self) -> str:
        return digest(self.data)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output_dir"])

    @classmethod
    def from_mapping(cls, raw: Mapping, seed: int | None = None) -> "RunConfig":
        raw = dict(raw)
        if seed is not None:
            raw["seed"] = seed
        return cls(normalize(raw))

    @classmethod
    def load(cls, path, seed: int | None = None) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc}") from None
        except ValueError as exc:
            raise ConfigError("", f"config {path} is not valid JSON: {exc}") from None
        return cls.from_mapping(raw, seed)
