"""Render hyperparameter configs into text for the embedding model."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .space import HyperparamConfig

# (config attribute, label) in rendering order
FIELDS = (
    ("rank", "rank(r)"),
    ("alpha", "Scaling factor(α)"),
    ("dropout", "Dropout Rate"),
    ("batch_size", "Batch Size"),
    ("learning_rate", "Learning Rate"),
)


class TemplateStyle(str, enum.Enum):
    PLAIN = "plain"
    DOMAIN_AWARE = "domain_aware"


@lru_cache(maxsize=None)
def default_preamble() -> str:
    path = resources.files("promptbo") / "assets" / "templates" / "domain_aware_preamble.txt"
    return path.read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptTemplate:
    style: TemplateStyle = TemplateStyle.DOMAIN_AWARE
    custom_preamble: str | None = None

    @property
    def preamble(self) -> str:
        if self.style is TemplateStyle.PLAIN:
            return ""
        return self.custom_preamble if self.custom_preamble is not None else default_preamble()

    @classmethod
    def from_spec(cls, style: str = "domain_aware", preamble_path: str | None = None) -> "PromptTemplate":
        custom = None
        if preamble_path is not None:
            custom = Path(preamble_path).read_text(encoding="utf-8").rstrip("\n")
        return cls(TemplateStyle(style), custom)


def _trim_float(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def value_format(axis_name: str, value) -> str:
    """Deterministic text form of one value.

    ``alpha`` expects the resolved absolute value (multiplier times rank).
    """
    if axis_name in ("rank", "batch_size"):
        return str(int(value))
    if axis_name == "learning_rate":
        return np.format_float_scientific(float(value), trim="-", exp_digits=2)
    if axis_name == "dropout":
        return repr(round(float(value), 2))
    if axis_name in ("alpha", "alpha_multiplier"):
        return _trim_float(value)
    if isinstance(value, float) and not math.isfinite(value):
        raise ValueError(f"non-finite value for {axis_name}")
    return _trim_float(value) if isinstance(value, float) else str(value)


def _values(config: HyperparamConfig) -> list[tuple[str, str]]:
    return [(label, value_format(attr, getattr(config, attr))) for attr, label in FIELDS]


def render(template: PromptTemplate, config: HyperparamConfig) -> str:
    """Template text for ``config``. No trailing newline."""
    pairs = _values(config)
    if template.style is TemplateStyle.PLAIN:
        return ", ".join(f"{label}={value}" for label, value in pairs)
    block = "\n".join(f"* {label}: {value}" for label, value in pairs)
    return f"{template.preamble}\n\n{block}"
