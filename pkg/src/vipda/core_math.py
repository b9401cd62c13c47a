"""Shared numeric primitives: simplex vectors, diagonal-Gaussian log-densities,
Jensen-Shannon divergence and Shannon entropy.

Conventions used throughout the package:

* Jensen-Shannon divergence is computed with base-2 logarithms, so its range
  is exactly [0, 1].
* Entropies and log-densities are in nats (natural log).
* ``0 * log 0`` is defined as 0.
* All arithmetic here is float64; callers may down-convert afterwards.

Every function is pure and stateless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))

SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True)
class DiagGaussianParams:
    """Mean and log-variance of a diagonal Gaussian over R^d."""

    mean: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        logvar = np.asarray(self.logvar, dtype=np.float64)
        if mean.shape != logvar.shape:
            raise ValueError(
                f"mean shape {mean.shape} != logvar shape {logvar.shape}"
            )
        if not (np.isfinite(mean).all() and np.isfinite(logvar).all()):
            raise ValueError("DiagGaussianParams entries must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "logvar", logvar)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


def softmax(v) -> np.ndarray:
    """Stabilized softmax along the last axis.

    The maximum is subtracted before exponentiation, which makes the result
    shift-invariant and safe for inputs of large magnitude.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.isfinite(v).all():
        raise ValueError("softmax input contains non-finite values")
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def check_simplex(p, name: str = "p") -> np.ndarray:
    """Validate that ``p`` is a probability vector (rows of one, if 2-d)."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(p).all():
        raise ValueError(f"{name} contains non-finite entries")
    if (p < 0).any():
        raise ValueError(f"{name} contains negative entries")
    sums = p.sum(axis=-1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=SIMPLEX_ATOL):
        raise ValueError(f"{name} does not sum to 1 (got {sums})")
    return p


def entropy(p) -> float:
    """Shannon entropy in nats, with 0*log(0) taken as 0."""
    p = check_simplex(p)
    if p.ndim != 1:
        raise ValueError("entropy expects a single probability vector")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return float(-terms.sum())


def _kl_base2(p: np.ndarray, m: np.ndarray) -> float:
    # m > 0 wherever p > 0 because m is a midpoint of nonnegative vectors
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log2(p / m), 0.0)
    return float(terms.sum())


def js_divergence(p, q) -> float:
    """Base-2 Jensen-Shannon divergence between two probability vectors.

    JS(p, q) = KL(p || m)/2 + KL(q || m)/2 with m = (p + q)/2. Symmetric,
    bounded in [0, 1], and 0 exactly when p == q.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    p = check_simplex(p, "p")
    q = check_simplex(q, "q")
    m = 0.5 * (p + q)
    return 0.5 * _kl_base2(p, m) + 0.5 * _kl_base2(q, m)


def gaussian_logpdf(z, mean, logvar) -> np.ndarray:
    """Row-wise log N(z | mean, diag(exp(logvar))) in nats.

    Broadcasts over leading axes; the last axis is the Gaussian dimension.
    """
    z = np.asarray(z, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if z.shape[-1] != mean.shape[-1] or mean.shape[-1] != logvar.shape[-1]:
        raise ValueError(
            f"dimension mismatch: z {z.shape}, mean {mean.shape}, "
            f"logvar {logvar.shape}"
        )
    sq = (z - mean) ** 2 * np.exp(-logvar)
    return -0.5 * np.sum(LOG_2PI + logvar + sq, axis=-1)


def log_gaussian_diag(z, g: DiagGaussianParams) -> float:
    """Log-density of a single point under a diagonal Gaussian."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != g.mean.shape:
        raise ValueError(f"dimension mismatch: z {z.shape}, params {g.mean.shape}")
    return float(gaussian_logpdf(z, g.mean, g.logvar))
