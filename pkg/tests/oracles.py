"""Independent reference implementations used by the tests.

Everything here is written the slow, obvious way (dense inverses, explicit
pairwise differences, scipy's general Matérn) so it shares no code path with
the library.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gamma, kv

from promptbo.embed import FeatureExtractorParams
from promptbo.surrogate import KernelParams, build_state, marginal_log_likelihood, mll_gradients


def matern_general(d, nu, lengthscale, signal_variance):
    """Matérn kernel of smoothness ``nu`` through the modified Bessel function."""
    if d == 0:
        return signal_variance
    r = math.sqrt(2.0 * nu) * d / lengthscale
    return signal_variance * 2.0 ** (1.0 - nu) / gamma(nu) * r**nu * kv(nu, r)


def dense_kernel(za, zb, kernel: KernelParams):
    # explicit differences (not the Gram expansion the library uses)
    d = np.sqrt(((za[:, None, :] - zb[None, :, :]) ** 2).sum(-1))
    s = math.sqrt(5.0) * d / kernel.lengthscale
    return kernel.signal_variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def dense_features(features: FeatureExtractorParams | None, x):
    if features is None:
        return np.asarray(x, dtype=np.float64)
    aug = np.hstack([x, np.tile(features.token, (x.shape[0], 1))])
    h = aug @ features.weight.T + features.bias
    return np.where(h > 0, h, np.exp(np.minimum(h, 0.0)) - 1.0)


def dense_mll(z, y_std, kernel: KernelParams):
    k = dense_kernel(z, z, kernel) + kernel.noise_variance * np.eye(z.shape[0])
    r = y_std - kernel.mean
    _, logdet = np.linalg.slogdet(k)
    return float(-0.5 * (r @ np.linalg.inv(k) @ r + logdet + z.shape[0] * math.log(2 * math.pi)))


def dense_posterior(z, y_raw, zq, kernel: KernelParams):
    """Predictive mean/variance in raw units, standardizing as the library does."""
    mean_y = float(np.mean(y_raw))
    std_y = float(np.std(y_raw)) or 1.0
    if std_y <= 1e-12 * max(1.0, abs(mean_y)):
        std_y = 1.0
    y = (y_raw - mean_y) / std_y
    k_inv = np.linalg.inv(dense_kernel(z, z, kernel) + kernel.noise_variance * np.eye(z.shape[0]))
    ks = dense_kernel(zq, z, kernel)
    mu = kernel.mean + ks @ k_inv @ (y - kernel.mean)
    var = kernel.signal_variance - np.einsum("ij,jk,ik->i", ks, k_inv, ks)
    return mu * std_y + mean_y, np.maximum(var, 0.0) * std_y**2


def random_gp_problem(seed: int, n: int, dim_out: int | None, dim_in: int = 6, dim_token: int = 2):
    """Random inputs, targets, kernel and (optionally) projection layer."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim_in))
    y = rng.normal(size=n)
    kernel = KernelParams.create(
        lengthscale=float(rng.uniform(0.5, 3.0)),
        signal_variance=float(rng.uniform(0.5, 2.0)),
        noise_variance=float(rng.uniform(1e-3, 1e-1)),
        mean=float(rng.normal(0.0, 0.5)),
    )
    features = None
    if dim_out is not None:
        features = FeatureExtractorParams.initialize(dim_in, dim_token, dim_out, 0.0, seed=seed + 1)
        features.bias = rng.normal(0.0, 0.3, size=dim_out)
        features.token = rng.normal(0.0, 0.5, size=dim_token)
    return x, y, kernel, features


def _params_vector(kernel: KernelParams, features):
    head = [kernel.log_lengthscale, kernel.log_signal_variance, kernel.raw_noise, kernel.mean]
    if features is None:
        return np.array(head)
    return np.concatenate([head, features.weight.ravel(), features.bias, features.token])


def _from_vector(theta, features):
    kernel = KernelParams(*map(float, theta[:4]))
    if features is None:
        return kernel, None
    w = features.weight.size
    o = 4
    weight = theta[o : o + w].reshape(features.weight.shape)
    bias = theta[o + w : o + w + features.dim_out]
    token = theta[o + w + features.dim_out :]
    return kernel, FeatureExtractorParams(weight, bias, token, features.proj_dropout)


def finite_difference_violations(x, y, kernel, features, step=1e-4, rel=1e-3, abs_floor=1e-6):
    """Coordinates whose analytic gradient disagrees with central differences.

    The objective is the library's marginal log-likelihood of a fresh
    factorization at perturbed parameters; targets are standardized once.
    """
    state = build_state(x, y, kernel, features)
    analytic = mll_gradients(state).flat()
    theta = _params_vector(kernel, features)
    stats = state.target_stats

    def objective(t):
        kp, fp = _from_vector(t, features)
        return marginal_log_likelihood(build_state(x, y, kp, fp, target_stats=stats))

    bad = []
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += step
        down[i] -= step
        fd = (objective(up) - objective(down)) / (2 * step)
        err = abs(fd - analytic[i])
        if err > abs_floor and err > rel * max(abs(fd), abs(analytic[i])):
            bad.append((i, analytic[i], fd))
    return bad
