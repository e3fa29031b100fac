"""KL divergences between diagonal Gaussians and their gradients.

Variances (not standard deviations) are stored throughout. The ``*_batch``
functions broadcast over leading axes and reduce over the last one; they do
no validation and are what the trainer calls.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from glace.errors import ValidationError


@dataclass(frozen=True)
class GaussianEmbedding:
    """``N(mu, diag(sigma))`` with ``sigma`` holding variances."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if mu.shape != sigma.shape:
            raise ValidationError(f"mu has {mu.size} components but sigma has {sigma.size}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise ValidationError("embedding components must be finite")
        if not np.all(sigma > 0):
            raise ValidationError("variances must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self):
        return self.mu.size


def _check_pair(p, q):
    if p.dim != q.dim:
        raise ValidationError(f"dimension mismatch: {p.dim} vs {q.dim}")


def kl_batch(mu_p, var_p, mu_q, var_q):
    diff = mu_q - mu_p
    return 0.5 * np.sum(np.log(var_q) - np.log(var_p) + (var_p + diff * diff) / var_q - 1.0, axis=-1)


def kl_grad_batch(mu_p, var_p, mu_q, var_q):
    """Partials of KL(p || q) w.r.t. (mu_p, var_p, mu_q, var_q)."""
    diff = mu_p - mu_q
    inv_q = 1.0 / var_q
    g_mu_p = diff * inv_q
    g_var_p = 0.5 * (inv_q - 1.0 / var_p)
    g_var_q = 0.5 * (inv_q - (var_p + diff * diff) * inv_q * inv_q)
    return g_mu_p, g_var_p, -g_mu_p, g_var_q


def dissimilarity_batch(mu_i, var_i, mu_j, var_j, symmetric):
    if symmetric:
        return 0.5 * (kl_batch(mu_i, var_i, mu_j, var_j) + kl_batch(mu_j, var_j, mu_i, var_i))
    return kl_batch(mu_j, var_j, mu_i, var_i)


def dissimilarity_grad_batch(mu_i, var_i, mu_j, var_j, symmetric):
    """Returns ``(d, g_mu_i, g_var_i, g_mu_j, g_var_j)``."""
    if not symmetric:
        gmj, gvj, gmi, gvi = kl_grad_batch(mu_j, var_j, mu_i, var_i)
        return kl_batch(mu_j, var_j, mu_i, var_i), gmi, gvi, gmj, gvj
    a = kl_grad_batch(mu_i, var_i, mu_j, var_j)
    b = kl_grad_batch(mu_j, var_j, mu_i, var_i)
    d = dissimilarity_batch(mu_i, var_i, mu_j, var_j, True)
    return (
        d,
        0.5 * (a[0] + b[2]),
        0.5 * (a[1] + b[3]),
        0.5 * (a[2] + b[0]),
        0.5 * (a[3] + b[1]),
    )


def kl(p, q):
    """KL(p || q) for diagonal Gaussians."""
    _check_pair(p, q)
    return float(kl_batch(p.mu, p.sigma, q.mu, q.sigma))


def dissimilarity(zi, zj, symmetric=True):
    """Symmetric: mean of both KL directions. Asymmetric: KL(zj || zi)."""
    _check_pair(zi, zj)
    return float(dissimilarity_batch(zi.mu, zi.sigma, zj.mu, zj.sigma, symmetric))


def dissimilarity_grad(zi, zj, symmetric=True):
    """Gradient of :func:`dissimilarity` as ``(mu_i, sigma_i, mu_j, sigma_j)``."""
    _check_pair(zi, zj)
    _, gmi, gvi, gmj, gvj = dissimilarity_grad_batch(zi.mu, zi.sigma, zj.mu, zj.sigma, symmetric)
    return gmi, gvi, gmj, gvj


def first_order_prob(d):
    """Edge probability ``1 / (1 + exp(d))``; equals 0.5 at ``d = 0``."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValidationError("dissimilarity must be nonnegative")
    out = expit(-d)
    return float(out) if out.ndim == 0 else out


log_sigmoid = log_expit
sigmoid = expit
