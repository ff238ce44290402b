"""Bayesian optimization of LoRA hyperparameters over LLM text embeddings.

Each grid configuration is rendered as a short prompt, embedded once, and
passed through a small learned projection into a Matérn-5/2 Gaussian process.
Expected improvement over the discrete pool picks the next configuration to
evaluate.
"""

from .acquire import expected_improvement, select_next
from .config import RunConfig
from .embed import EmbeddingCache, OfflineHashProvider, RemoteProvider
from .errors import PromptBOError
from .evaluate import ExternalEvaluator, SyntheticEvaluator, SyntheticLandscape
from .loop import Journal, Observation, Problem, resume, run
from .prompt import PromptTemplate, TemplateStyle, render
from .space import CandidatePool, HyperparamConfig, SearchSpace, default_lora_space
from .surrogate import KernelParams, fit, posterior

__version__ = "0.1.0"

__all__ = [
    "CandidatePool", "EmbeddingCache", "ExternalEvaluator", "HyperparamConfig", "Journal", "KernelParams",
    "Observation", "OfflineHashProvider", "Problem", "PromptBOError", "PromptTemplate", "RemoteProvider",
    "RunConfig", "SearchSpace", "SyntheticEvaluator", "SyntheticLandscape", "TemplateStyle",
    "default_lora_space", "expected_improvement", "fit", "posterior", "render", "resume", "run", "select_next",
]
