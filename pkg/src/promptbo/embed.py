"""Text embeddings and the trainable projection on top of them.

Two embedding providers are available: :class:`OfflineHashProvider`, an exactly
deterministic feature-hashing embedder for tests and synthetic runs, and
:class:`RemoteProvider`, a client for an HTTP JSON embedding endpoint.
Embeddings are cached by ``(provider id, sha256(text))`` in an
:class:`EmbeddingCache`.

The feature map applied on top is ``z = ELU(Dropout(W [e; psi] + b))``, where
``e`` is the pooled text embedding and ``psi`` a learnable token vector.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import sqlite3
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import httpx
import numpy as np

from .errors import DimensionMismatch, ProviderUnavailable, ShapeMismatch

logger = logging.getLogger(__name__)


class EmbeddingProvider:
    """Maps texts to fixed-length vectors. Subclasses implement :meth:`_embed`."""

    id: str
    dim: int

    def __init__(self):
        self.calls = 0  # number of texts sent to the backend

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        self.calls += len(texts)
        return self._embed(list(texts))

    def _embed(self, texts: list[str]) -> np.ndarray:
        raise NotImplementedError


# --------------------------------------------------------------------------
# offline feature-hash provider

_TOKEN_RE = re.compile(r"\d+(?:\.\d+)?(?:[eE][-+]?\d+)?|[^\W\d_]+|\S")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?(?:[eE][-+]?\d+)?$")
_HASHES_PER_SHINGLE = 8
# numbers: sin/cos of log2(value) at these periods (in octaves), scaled to
# integer weights. Periods exceed the span of typical hyperparameter grids, so
# the code is close to a smooth monotone map of log-magnitude.
_MAGNITUDE_PERIODS = (48.0, 24.0)
_MAGNITUDE_WEIGHT = 64
_LOG2_ZERO = -30.0


class OfflineHashProvider(EmbeddingProvider):
    """Deterministic count-sketch embedding of token shingles.

    Each line of the text is tokenized into words, numbers and punctuation.
    Every unigram and bigram is a shingle of weight 1. A number additionally
    emits magnitude shingles keyed by its context (the words since the
    previous number): for each period ``P`` a sine and a cosine shingle
    weighted by ``round(64 * sin(2 pi log2(v) / P))`` and likewise for cos.
    Zero gets a dedicated shingle and sits at ``log2 = -30``. Values under the
    same field are thus laid out smoothly by log-magnitude, loosely mimicking
    the log-scaled number line that learned text embeddings exhibit.

    Every shingle hashes (keyed blake2b) to 8 signed coordinates. Weights are
    accumulated in integers and the result is L2-normalized.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        super().__init__()
        if dim < 2:
            raise ValueError("offline provider needs dim >= 2")
        self.dim = int(dim)
        self.seed = int(seed)
        self.id = f"offline-hash/v2/dim={self.dim}/seed={self.seed}"
        self._key = hashlib.sha256(f"promptbo-offline:{self.seed}".encode()).digest()[:32]
        self._shingle_memo: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._line_memo: dict[str, np.ndarray] = {}

    def _shingle_coords(self, shingle: str):
        hit = self._shingle_memo.get(shingle)
        if hit is None:
            digest = hashlib.blake2b(shingle.encode("utf-8"), key=self._key, digest_size=32).digest()
            words = np.frombuffer(digest, dtype="<u4").astype(np.int64)
            hit = (words % self.dim, np.where(words & (1 << 31), -1, 1))
            self._shingle_memo[shingle] = hit
        return hit

    def shingles(self, line: str) -> list[tuple[str, int]]:
        """``(shingle, integer weight)`` pairs of one line."""
        tokens = _TOKEN_RE.findall(line.lower())
        out = [(f"u|{t}", 1) for t in tokens]
        out.extend((f"b|{a}|{b}", 1) for a, b in zip(tokens, tokens[1:]))
        context: list[str] = []
        for tok in tokens:
            if _NUMBER_RE.match(tok):
                value = float(tok)
                ctx = " ".join(context[-4:])
                if value == 0.0:
                    out.append((f"m|{ctx}|zero", _MAGNITUDE_WEIGHT))
                    x = _LOG2_ZERO
                else:
                    x = math.log2(abs(value))
                for k, period in enumerate(_MAGNITUDE_PERIODS):
                    angle = 2.0 * math.pi * x / period
                    out.append((f"m|{ctx}|sin|{k}", round(_MAGNITUDE_WEIGHT * math.sin(angle))))
                    out.append((f"m|{ctx}|cos|{k}", round(_MAGNITUDE_WEIGHT * math.cos(angle))))
                context = []
            elif tok.isalpha():
                context.append(tok)
        return out

    def _line_counts(self, line: str) -> np.ndarray:
        counts = self._line_memo.get(line)
        if counts is None:
            counts = np.zeros(self.dim, dtype=np.int64)
            for shingle, weight in self.shingles(line):
                if weight:
                    idx, sign = self._shingle_coords(shingle)
                    np.add.at(counts, idx, sign * weight)
            self._line_memo[line] = counts
        return counts

    def _embed(self, texts):
        out = np.empty((len(texts), self.dim))
        for row, text in enumerate(texts):
            counts = np.zeros(self.dim, dtype=np.int64)
            for line in text.split("\n"):
                counts += self._line_counts(line)
            vec = counts.astype(np.float64)
            norm = math.sqrt(float(np.dot(vec, vec)))
            if norm == 0.0:
                vec[0] = 1.0
                norm = 1.0
            out[row] = vec / norm
        return out


def offline_provider(dim: int = 256, seed: int = 0) -> OfflineHashProvider:
    return OfflineHashProvider(dim, seed)


# --------------------------------------------------------------------------
# remote HTTP provider


class RemoteProvider(EmbeddingProvider):
    """Client for ``POST {"model", "input"} -> {"data": [{"index", "embedding"}]}``.

    Transport errors and 5xx responses are retried with exponential backoff
    (0.5 s, doubling, at most 5 attempts). Other HTTP errors fail at once.
    """

    batch_size = 64

    def __init__(
        self,
        url: str,
        model: str,
        dim: int,
        auth_env: str | None = None,
        max_inflight: int = 4,
        timeout_s: float = 60.0,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        backoff_factor: float = 2.0,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
    ):
        super().__init__()
        self.url = url
        self.model = model
        self.dim = int(dim)
        self.id = f"remote/{model}/dim={self.dim}@{url}"
        self.auth_env = auth_env
        self.max_inflight = max(1, int(max_inflight))
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.auth_env:
            token = os.environ.get(self.auth_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, batch: list[str]) -> np.ndarray:
        payload = {"model": self.model, "input": batch}
        last_error = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_base * self.backoff_factor ** (attempt - 1))
            try:
                resp = self._client.post(self.url, json=payload, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning("embedding request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("embedding server error (attempt %d): %s", attempt + 1, last_error)
                continue
            if resp.status_code >= 400:
                raise ProviderUnavailable(f"embedding request rejected: HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp, len(batch))
        raise ProviderUnavailable(f"embedding endpoint unreachable after {self.max_attempts} attempts: {last_error}")

    def _parse(self, resp: httpx.Response, expected: int) -> np.ndarray:
        try:
            items = resp.json()["data"]
            rows = sorted(items, key=lambda item: item["index"])
            vectors = [item["embedding"] for item in rows]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProviderUnavailable(f"malformed embedding response: {exc}") from exc
        if len(vectors) != expected or [r["index"] for r in rows] != list(range(expected)):
            raise ProviderUnavailable(f"expected {expected} embeddings, got indices {[r['index'] for r in rows]}")
        for vec in vectors:
            if len(vec) != self.dim:
                raise DimensionMismatch(f"provider {self.id} returned length {len(vec)}, declared {self.dim}")
        return np.asarray(vectors, dtype=np.float64)

    def _embed(self, texts):
        batches = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        if len(batches) == 1 or self.max_inflight == 1:
            parts = [self._post(b) for b in batches]
        else:
            with ThreadPoolExecutor(self.max_inflight) as pool:
                parts = list(pool.map(self._post, batches))
        return np.concatenate(parts, axis=0)


# --------------------------------------------------------------------------
# cache


class EmbeddingCache:
    """Content-addressed store of embeddings.

    In memory when ``path`` is None, otherwise an SQLite file so interrupted
    runs reuse earlier embeddings. Writes are serialized by a lock.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = None if path is None else os.fspath(path)
        self._mem: dict[tuple[str, str], np.ndarray] = {}
        self._lock = threading.Lock()
        self._db = None
        if self.path is not None:
            self._db = sqlite3.connect(self.path, check_same_thread=False)
            self._db.execute(
                "CREATE TABLE IF NOT EXISTS embeddings ("
                " provider TEXT NOT NULL, digest TEXT NOT NULL, dim INTEGER NOT NULL,"
                " vector BLOB NOT NULL, PRIMARY KEY (provider, digest))"
            )
            self._db.commit()

    @staticmethod
    def digest(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def get_many(self, provider_id: str, digests: Sequence[str]) -> dict[str, np.ndarray]:
        found = {}
        for d in digests:
            vec = self._mem.get((provider_id, d))
            if vec is not None:
                found[d] = vec
        missing = [d for d in digests if d not in found]
        if self._db is not None and missing:
            with self._lock:
                for start in range(0, len(missing), 500):
                    chunk = missing[start : start + 500]
                    marks = ",".join("?" * len(chunk))
                    rows = self._db.execute(
                        f"SELECT digest, vector FROM embeddings WHERE provider = ? AND digest IN ({marks})",
                        [provider_id, *chunk],
                    ).fetchall()
                    for d, blob in rows:
                        vec = np.frombuffer(blob, dtype="<f8").copy()
                        self._mem[(provider_id, d)] = vec
                        found[d] = vec
        return found

    def put_many(self, provider_id: str, items: dict[str, np.ndarray]) -> None:
        with self._lock:
            for d, vec in items.items():
                self._mem[(provider_id, d)] = vec
            if self._db is not None and items:
                self._db.executemany(
                    "INSERT OR REPLACE INTO embeddings VALUES (?, ?, ?, ?)",
                    [(provider_id, d, len(v), np.asarray(v, dtype="<f8").tobytes()) for d, v in items.items()],
                )
                self._db.commit()

    def close(self):
        if self._db is not None:
            self._db.close()
            self._db = None


def embed_text(
    provider: EmbeddingProvider, texts: Sequence[str], cache: EmbeddingCache | None = None
) -> np.ndarray:
    """Embed ``texts`` in order, serving repeats and cache hits without the provider."""
    if not texts:
        raise ValueError("embed_text needs a non-empty batch")
    if any(not t for t in texts):
        raise ValueError("texts must be non-empty")
    digests = [EmbeddingCache.digest(t) for t in texts]
    known = cache.get_many(provider.id, list(dict.fromkeys(digests))) if cache is not None else {}
    todo: dict[str, str] = {}
    for d, t in zip(digests, texts):
        if d not in known and d not in todo:
            todo[d] = t
    if todo:
        vectors = np.asarray(provider.embed(list(todo.values())), dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(todo):
            raise DimensionMismatch(f"provider {provider.id} returned shape {vectors.shape} for {len(todo)} texts")
        if vectors.shape[1] != provider.dim:
            raise DimensionMismatch(f"provider {provider.id} returned length {vectors.shape[1]}, declared {provider.dim}")
        if not np.all(np.isfinite(vectors)):
            raise DimensionMismatch(f"provider {provider.id} returned non-finite entries")
        fresh = dict(zip(todo, vectors))
        if cache is not None:
            cache.put_many(provider.id, fresh)
        known = {**known, **fresh}
    return np.stack([known[d] for d in digests])


# --------------------------------------------------------------------------
# projection layer with learnable token


@dataclass
class FeatureExtractorParams:
    """Trainable map ``z = ELU(Dropout(W [e; psi] + b))``."""

    weight: np.ndarray  # (dim_out, dim_in + dim_token)
    bias: np.ndarray  # (dim_out,)
    token: np.ndarray  # (dim_token,)
    proj_dropout: float = 0.1
    dim_in: int = field(init=False)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.token = np.asarray(self.token, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch("weight must be (dim_out, dim_x) and bias (dim_out,)")
        if self.token.ndim != 1 or self.token.shape[0] > self.weight.shape[1]:
            raise ShapeMismatch("token length exceeds weight columns")
        if self.weight.shape[0] == 0:
            raise ShapeMismatch("dim_out must be positive")
        if not 0.0 <= self.proj_dropout < 1.0:
            raise ValueError("proj_dropout must lie in [0, 1)")
        self.dim_in = self.weight.shape[1] - self.token.shape[0]

    @property
    def dim_token(self) -> int:
        return self.token.shape[0]

    @property
    def dim_out(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def initialize(cls, dim_in: int, dim_token: int = 64, dim_out: int = 128, proj_dropout: float = 0.1, seed: int = 0):
        """Token ~ N(0, 0.02^2), W ~ U(+/- 1/sqrt(fan_in)), b = 0."""
        rng = np.random.default_rng(seed)
        fan_in = dim_in + dim_token
        bound = 1.0 / math.sqrt(fan_in)
        weight = rng.uniform(-bound, bound, size=(dim_out, fan_in))
        token = rng.normal(0.0, 0.02, size=dim_token)
        return cls(weight, np.zeros(dim_out), token, proj_dropout)

    def copy(self) -> "FeatureExtractorParams":
        return FeatureExtractorParams(self.weight.copy(), self.bias.copy(), self.token.copy(), self.proj_dropout)


def elu(h: np.ndarray) -> np.ndarray:
    return np.where(h > 0, h, np.expm1(np.minimum(h, 0.0)))


def elu_grad(h: np.ndarray) -> np.ndarray:
    return np.where(h > 0, 1.0, np.exp(np.minimum(h, 0.0)))


def dropout_mask(params: FeatureExtractorParams, n: int, seed) -> np.ndarray:
    """Inverted-dropout scale factors (0 or 1/(1-p)) for ``n`` rows."""
    p = params.proj_dropout
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random((n, params.dim_out)) >= p
    return keep / (1.0 - p)


def _as_rows(params: FeatureExtractorParams, base) -> tuple[np.ndarray, bool]:
    base = np.asarray(base, dtype=np.float64)
    single = base.ndim == 1
    rows = base[None, :] if single else base
    if rows.ndim != 2 or rows.shape[1] != params.dim_in:
        raise ShapeMismatch(f"base embedding has shape {base.shape}, extractor expects dim_in={params.dim_in}")
    return rows, single


def _preactivation(params: FeatureExtractorParams, rows: np.ndarray) -> np.ndarray:
    w_base = params.weight[:, : params.dim_in]
    w_tok = params.weight[:, params.dim_in :]
    return rows @ w_base.T + (w_tok @ params.token + params.bias)


def extract_features(params: FeatureExtractorParams, base, rng_seed=None, mask: np.ndarray | None = None) -> np.ndarray:
    """Feature vectors for one embedding ``(dim_in,)`` or a batch ``(n, dim_in)``.

    Inference mode (dropout off) unless ``rng_seed`` or an explicit ``mask``
    is given.
    """
    rows, single = _as_rows(params, base)
    h = _preactivation(params, rows)
    if mask is None and rng_seed is not None and params.proj_dropout > 0:
        mask = dropout_mask(params, rows.shape[0], rng_seed)
    if mask is not None:
        h = h * mask
    z = elu(h)
    return z[0] if single else z


def feature_forward(params: FeatureExtractorParams, rows: np.ndarray, mask: np.ndarray | None = None):
    """Forward pass returning ``(z, local)``; ``local`` = dz/dpre per entry."""
    h = _preactivation(params, rows)
    if mask is not None:
        h = h * mask
    local = elu_grad(h)
    if mask is not None:
        local = local * mask
    return elu(h), local


def feature_vjp(params: FeatureExtractorParams, rows: np.ndarray, local: np.ndarray, grad_z: np.ndarray):
    """Pull ``dL/dz`` back to ``(dL/dW, dL/db, dL/dpsi)``."""
    g_pre = grad_z * local
    g_weight = np.empty_like(params.weight)
    g_weight[:, : params.dim_in] = g_pre.T @ rows
    g_bias = g_pre.sum(axis=0)
    g_weight[:, params.dim_in :] = np.outer(g_bias, params.token)
    g_token = params.weight[:, params.dim_in :].T @ g_bias
    return g_weight, g_bias, g_token


@dataclass
class FeatureJacobians:
    weight: np.ndarray  # (dim_out, dim_out, dim_x): dz_i / dW_kl
    bias: np.ndarray  # (dim_out, dim_out)
    token: np.ndarray  # (dim_out, dim_token)


def feature_jacobians(params: FeatureExtractorParams, base, mask: np.ndarray | None = None) -> FeatureJacobians:
    """Dense Jacobians of ``z`` for a single embedding (inference mode or fixed mask)."""
    rows, single = _as_rows(params, base)
    if not single:
        raise ShapeMismatch("feature_jacobians takes one embedding")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64).reshape(1, -1)
    _, local = feature_forward(params, rows, mask)
    g = local[0]
    x = np.concatenate([rows[0], params.token])
    j_weight = np.zeros((params.dim_out, params.dim_out, x.shape[0]))
    j_weight[np.arange(params.dim_out), np.arange(params.dim_out), :] = g[:, None] * x[None, :]
    return FeatureJacobians(
        weight=j_weight,
        bias=np.diag(g),
        token=g[:, None] * params.weight[:, params.dim_in :],
    )
