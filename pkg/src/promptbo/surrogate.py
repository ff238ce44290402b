"""Gaussian-process surrogate with a Matérn-5/2 deep kernel.

The GP operates on features ``z = g(e)`` produced by the projection layer in
:mod:`promptbo.embed` (or directly on the inputs when no feature extractor is
given). Kernel hyperparameters, the constant mean, the projection weights and
the learnable token are trained jointly by maximizing the marginal
log-likelihood of standardized targets.

Positive kernel quantities are stored in the log domain. The observation noise
is ``1e-6 + exp(raw_noise)`` so it never drops below the floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .embed import FeatureExtractorParams, dropout_mask, extract_features, feature_forward, feature_vjp
from .errors import NotFactored, NumericalFailure, ShapeMismatch
from .rng import substream

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)
NOISE_FLOOR = 1e-6
JITTER_START = 1e-6
JITTER_MAX = 1e-2

KERNEL_LR = 1e-2
FEATURE_LR = 1e-3
CLIP_NORM = 10.0
REL_TOL = 1e-5
PATIENCE = 10
MAX_STEPS = 200
BACKTRACKS = 4


@dataclass(frozen=True)
class KernelParams:
    log_lengthscale: float = 0.0
    log_signal_variance: float = 0.0
    raw_noise: float = math.log(1e-2 - NOISE_FLOOR)
    mean: float = 0.0

    @classmethod
    def create(cls, lengthscale=1.0, signal_variance=1.0, noise_variance=1e-2, mean=0.0) -> "KernelParams":
        if lengthscale <= 0 or signal_variance <= 0 or noise_variance <= NOISE_FLOOR:
            raise ValueError("lengthscale and signal variance must be positive, noise above 1e-6")
        return cls(math.log(lengthscale), math.log(signal_variance), math.log(noise_variance - NOISE_FLOOR), mean)

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_lengthscale)

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def noise_variance(self) -> float:
        return NOISE_FLOOR + math.exp(self.raw_noise)

    def to_json(self) -> dict:
        return {
            "lengthscale": self.lengthscale,
            "signal_var": self.signal_variance,
            "noise_var": self.noise_variance,
            "mean": self.mean,
        }


# --------------------------------------------------------------------------
# kernel


def matern52(z, z_prime, kernel: KernelParams) -> float:
    z = np.asarray(z, dtype=np.float64)
    z_prime = np.asarray(z_prime, dtype=np.float64)
    if z.shape != z_prime.shape:
        raise ShapeMismatch("kernel arguments differ in length")
    s = SQRT5 * float(np.linalg.norm(z - z_prime)) / kernel.lengthscale
    return kernel.signal_variance * (1.0 + s + s * s / 3.0) * math.exp(-s)


def _matern_from_scaled(s: np.ndarray, signal_variance: float) -> np.ndarray:
    return signal_variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def pairwise_distances(z: np.ndarray) -> np.ndarray:
    """Symmetric distance matrix with an exact zero diagonal."""
    sq = (z * z).sum(1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def cross_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(sq, 0.0))


def kernel_matrix(a: np.ndarray, b: np.ndarray | None, kernel: KernelParams) -> np.ndarray:
    d = pairwise_distances(a) if b is None else cross_distances(a, b)
    return _matern_from_scaled(SQRT5 * d / kernel.lengthscale, kernel.signal_variance)


def cholesky_with_jitter(matrix: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, adding jitter 1e-6, 1e-5, ... 1e-2 on failure."""
    jitter = 0.0
    eye = np.eye(matrix.shape[0])
    while True:
        try:
            return cholesky(matrix + jitter * eye, lower=True, check_finite=True), jitter
        except (LinAlgError, ValueError):
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise NumericalFailure("covariance matrix is not positive definite at maximum jitter") from None


# --------------------------------------------------------------------------
# state


@dataclass
class SurrogateState:
    kernel: KernelParams
    features: FeatureExtractorParams | None
    train_inputs: np.ndarray
    train_targets: np.ndarray  # standardized
    target_stats: tuple[float, float]
    train_features: np.ndarray | None = None
    chol: np.ndarray | None = None
    alpha_vec: np.ndarray | None = None
    jitter: float = 0.0
    mll_trace: list = field(default_factory=list)
    steps: int = 0

    @property
    def n(self) -> int:
        return self.train_inputs.shape[0]

    def standardize(self, y) -> np.ndarray:
        mean, std = self.target_stats
        return (np.asarray(y, dtype=np.float64) - mean) / std

    def destandardize(self, y_std) -> np.ndarray:
        mean, std = self.target_stats
        return np.asarray(y_std, dtype=np.float64) * std + mean

    def diagnostics(self) -> dict:
        out = self.kernel.to_json()
        out["mll"] = self.mll_trace[-1] if self.mll_trace else None
        out["steps"] = self.steps
        return out


def target_statistics(y: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(y))
    std = float(np.std(y))
    if not std > 1e-12 * max(1.0, abs(mean)):
        std = 1.0
    return mean, std


def featurize(features: FeatureExtractorParams | None, inputs: np.ndarray, mask=None) -> np.ndarray:
    if features is None:
        return inputs
    return feature_forward(features, inputs, mask)[0]


def build_state(inputs, targets, kernel: KernelParams | None = None, features: FeatureExtractorParams | None = None,
                target_stats: tuple[float, float] | None = None) -> SurrogateState:
    """Factorize the GP for fixed parameters (no training)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if inputs.shape[0] != targets.shape[0] or targets.shape[0] < 1:
        raise ShapeMismatch("need one target per input and at least one observation")
    stats = target_statistics(targets) if target_stats is None else target_stats
    state = SurrogateState(
        kernel=kernel or KernelParams(),
        features=features,
        train_inputs=inputs,
        train_targets=(targets - stats[0]) / stats[1],
        target_stats=stats,
    )
    return refactor(state)


def refactor(state: SurrogateState) -> SurrogateState:
    z = featurize(state.features, state.train_inputs)
    k = kernel_matrix(z, None, state.kernel)
    k[np.diag_indices_from(k)] += state.kernel.noise_variance
    chol, jitter = cholesky_with_jitter(k)
    resid = state.train_targets - state.kernel.mean
    state.train_features = z
    state.chol = chol
    state.jitter = jitter
    state.alpha_vec = cho_solve((chol, True), resid)
    return state


def marginal_log_likelihood(state: SurrogateState) -> float:
    if state.chol is None or state.alpha_vec is None:
        raise NotFactored("surrogate state has no current factorization")
    resid = state.train_targets - state.kernel.mean
    return float(
        -0.5 * (resid @ state.alpha_vec + 2.0 * np.log(np.diag(state.chol)).sum() + state.n * LOG_2PI)
    )


@dataclass
class MLLGradients:
    log_lengthscale: float
    log_signal_variance: float
    raw_noise: float
    mean: float
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    token: np.ndarray | None = None

    def flat(self) -> np.ndarray:
        parts = [np.array([self.log_lengthscale, self.log_signal_variance, self.raw_noise, self.mean])]
        if self.weight is not None:
            parts += [self.weight.ravel(), self.bias, self.token]
        return np.concatenate(parts)


def _mll_and_grad(kernel: KernelParams, features, inputs, targets, mask=None, want_grad=True):
    """Marginal log-likelihood and its gradient for explicit parameters.

    Raises NumericalFailure if the covariance cannot be factorized.
    """
    local = None
    if features is None:
        z = inputs
    elif want_grad:
        z, local = feature_forward(features, inputs, mask)
    else:
        z = extract_features(features, inputs, mask=mask)
    n = z.shape[0]
    ell = math.exp(kernel.log_lengthscale)
    sig2 = math.exp(kernel.log_signal_variance)
    exp_noise = math.exp(kernel.raw_noise)
    s = SQRT5 * pairwise_distances(z) / ell
    e = np.exp(-s)
    kf = sig2 * (1.0 + s + s * s / 3.0) * e
    k = kf.copy()
    k[np.diag_indices(n)] += NOISE_FLOOR + exp_noise
    chol, jitter = cholesky_with_jitter(k)
    resid = targets - kernel.mean
    a = cho_solve((chol, True), resid)
    mll = -0.5 * (resid @ a + 2.0 * np.log(np.diag(chol)).sum() + n * LOG_2PI)
    if not want_grad:
        return float(mll), None
    k_inv = cho_solve((chol, True), np.eye(n))
    g = 0.5 * (np.outer(a, a) - k_inv)
    grads = MLLGradients(
        log_lengthscale=float(np.sum(g * (sig2 / 3.0) * s * s * (1.0 + s) * e)),
        log_signal_variance=float(np.sum(g * kf)),
        raw_noise=float(np.trace(g) * exp_noise),
        mean=float(a.sum()),
    )
    if features is not None:
        c = (-sig2 * 5.0 / (3.0 * ell * ell)) * (1.0 + s) * e
        gc = g * c
        grad_z = 2.0 * (gc.sum(axis=1)[:, None] * z - gc @ z)
        grads.weight, grads.bias, grads.token = feature_vjp(features, inputs, local, grad_z)
    return float(mll), grads


def mll_gradients(state: SurrogateState, mask: np.ndarray | None = None) -> MLLGradients:
    """Gradient of the marginal log-likelihood at the state's parameters."""
    if state.chol is None:
        raise NotFactored("surrogate state has no current factorization")
    return _mll_and_grad(state.kernel, state.features, state.train_inputs, state.train_targets, mask)[1]


# --------------------------------------------------------------------------
# flat parameter vector for the optimizer


def _pack(kernel: KernelParams, features: FeatureExtractorParams | None) -> np.ndarray:
    head = np.array([kernel.log_lengthscale, kernel.log_signal_variance, kernel.raw_noise, kernel.mean])
    if features is None:
        return head
    return np.concatenate([head, features.weight.ravel(), features.bias, features.token])


def _unpack(theta: np.ndarray, template: FeatureExtractorParams | None):
    kernel = KernelParams(float(theta[0]), float(theta[1]), float(theta[2]), float(theta[3]))
    if template is None:
        return kernel, None
    w_size = template.weight.size
    o = 4
    weight = theta[o : o + w_size].reshape(template.weight.shape)
    o += w_size
    bias = theta[o : o + template.dim_out]
    o += template.dim_out
    token = theta[o:]
    return kernel, FeatureExtractorParams(weight.copy(), bias.copy(), token.copy(), template.proj_dropout)


def fit(
    inputs,
    targets,
    kernel: KernelParams | None = None,
    features: FeatureExtractorParams | None = None,
    budget: int = MAX_STEPS,
    seed: int = 0,
    stream: tuple = (),
    rel_tol: float = REL_TOL,
    patience: int = PATIENCE,
) -> SurrogateState:
    """Train the surrogate by moment-based gradient ascent on the MLL.

    Steps are accepted only if the inference-mode MLL does not decrease
    (the step is halved up to four times before being rejected). Training
    stops after ``patience`` (default 10) consecutive accepted steps with relative
    improvement below ``rel_tol`` (1e-5), or after ``budget`` steps. Dropout masks
    during training come from the ``(seed, "dropout", *stream, step)``
    substream, so a fit is a deterministic function of its arguments.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if inputs.shape[0] != targets.shape[0] or targets.shape[0] < 1:
        raise ShapeMismatch("need one target per input and at least one observation")
    if features is not None and inputs.shape[1] != features.dim_in:
        raise ShapeMismatch(f"inputs have dim {inputs.shape[1]}, extractor expects {features.dim_in}")
    kernel = kernel or KernelParams()
    stats = target_statistics(targets)
    y = (targets - stats[0]) / stats[1]

    theta = _pack(kernel, features)
    lr = np.full(theta.shape, FEATURE_LR)
    lr[:4] = KERNEL_LR
    use_dropout = features is not None and features.proj_dropout > 0.0
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)

    def evaluate(th, want_grad, mask=None):
        kp, fp = _unpack(th, features)
        return _mll_and_grad(kp, fp, inputs, y, mask, want_grad)

    current, grad = evaluate(theta, not use_dropout)
    trace = [current]
    quiet = 0
    steps = 0
    for step in range(budget):
        steps = step + 1
        if use_dropout:
            mask = dropout_mask(features, inputs.shape[0], substream(seed, "dropout", *stream, step))
            try:
                _, grad = evaluate(theta, True, mask)
            except NumericalFailure:
                continue
        flat = grad.flat()
        norm = float(np.linalg.norm(flat))
        if not np.isfinite(norm):
            break
        if norm > CLIP_NORM:
            flat = flat * (CLIP_NORM / norm)
        m = beta1 * m + (1 - beta1) * flat
        v = beta2 * v + (1 - beta2) * flat * flat
        t = step + 1
        update = lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
        scale = 1.0
        accepted = False
        for _ in range(BACKTRACKS + 1):
            cand = theta + scale * update
            try:
                value, cand_grad = evaluate(cand, not use_dropout)
            except NumericalFailure:
                value = -math.inf
            if value >= current:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            continue
        rel = (value - current) / max(abs(current), 1e-12)
        theta, current = cand, value
        if not use_dropout:
            grad = cand_grad
        trace.append(current)
        quiet = quiet + 1 if rel < rel_tol else 0
        if quiet >= patience:
            break

    kernel_out, features_out = _unpack(theta, features)
    state = SurrogateState(
        kernel=kernel_out,
        features=features_out,
        train_inputs=inputs,
        train_targets=y,
        target_stats=stats,
        mll_trace=trace,
        steps=steps,
    )
    return refactor(state)


# --------------------------------------------------------------------------
# prediction


def posterior(state: SurrogateState, query, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and latent-function variance in raw target units."""
    if state.chol is None or state.alpha_vec is None:
        raise NotFactored("surrogate state has no current factorization")
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    means, variances = [], []
    for start in range(0, q.shape[0], chunk):
        zq = featurize(state.features, q[start : start + chunk])
        if zq.shape[1] != state.train_features.shape[1]:
            raise ShapeMismatch("query features differ in dimension from training features")
        k_star = kernel_matrix(zq, state.train_features, state.kernel)
        mean = state.kernel.mean + k_star @ state.alpha_vec
        v = solve_triangular(state.chol, k_star.T, lower=True, check_finite=False)
        var = state.kernel.signal_variance - np.einsum("ij,ij->j", v, v)
        means.append(mean)
        variances.append(np.maximum(var, 0.0))
    mean = state.destandardize(np.concatenate(means))
    var = np.concatenate(variances) * state.target_stats[1] ** 2
    return (mean[0], var[0]) if single else (mean, var)


def with_params(state: SurrogateState, kernel: KernelParams | None = None,
                features: FeatureExtractorParams | None = None) -> SurrogateState:
    """Copy of ``state`` with replaced parameters, refactorized."""
    new = replace(state, kernel=kernel or state.kernel, features=features if features is not None else state.features)
    return refactor(new)
