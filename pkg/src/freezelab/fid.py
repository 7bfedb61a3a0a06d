"""Fréchet distance between Gaussian fits of feature embeddings ("desk-FID").

Features come from a seeded, frozen, randomly initialised conv trunk instead of
Inception, so values are only comparable with each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UsageError
from .nn import ModelConfig, Network, build_feature_extractor
from .tensor import no_grad

EIG_TOL = 1e-12
SYM_TOL = 1e-8


def jacobi_eigh(a: np.ndarray, tol: float = EIG_TOL, max_sweeps: int = 64):
    """Eigen-decompose a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||A||_F)``. Returns ``(eigenvalues, Q)`` with ``A = Q diag Qᵀ``.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    limit = tol * max(1.0, float(np.linalg.norm(a)))
    for _ in range(max_sweeps):
        # summed directly: ||A||^2 - ||diag||^2 cancels catastrophically
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off < limit:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                h = a[q, q] - a[p, p]
                if abs(h) + 1e3 * abs(apq) == abs(h):
                    # |theta| would overflow; tan of the angle is apq/h to working precision
                    t = apq / h
                else:
                    theta = h / (2.0 * apq)
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix; negative eigenvalues clamp to 0."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"sqrtm_psd needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > SYM_TOL * scale:
        raise UsageError("sqrtm_psd input is not symmetric")
    w, q = jacobi_eigh((a + a.T) / 2.0)
    root = (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T
    return (root + root.T) / 2.0


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int
    _sqrt: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def sqrt_sigma(self) -> np.ndarray:
        if self._sqrt is None:
            self._sqrt = sqrtm_psd(self.sigma)
        return self._sqrt


def fit_gaussian(features) -> GaussianStats:
    """Column means and unbiased covariance.

    Rows are put in a canonical (lexicographic) order first, so the result is
    bit-for-bit independent of sample order.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be an (n, d) matrix, got {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise UsageError(f"need at least 2 samples to fit a Gaussian, got {n}")
    x = x[np.lexsort(x.T[::-1])]
    mu = x.sum(axis=0) / n
    xc = x - mu
    sigma = (xc.T @ xc) / (n - 1)
    return GaussianStats(mu, (sigma + sigma.T) / 2.0, n)


def frechet(a: GaussianStats, b: GaussianStats) -> float:
    """‖μa−μb‖² + tr(Σa + Σb − 2·sqrt(√Σa Σb √Σa))."""
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.mu - b.mu
    ra = a.sqrt_sigma()
    inner = ra @ b.sigma @ ra
    cross = sqrtm_psd((inner + inner.T) / 2.0)
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def make_extractor(cfg: ModelConfig | None = None, seed: int = 1234) -> Network:
    return build_feature_extractor(cfg or ModelConfig(), seed=seed)


def extract_features(extractor: Network, images, chunk: int = 256) -> np.ndarray:
    images = np.asarray(getattr(images, "data", images), dtype=np.float64)
    want = tuple(extractor.in_shape)
    if images.ndim != 4 or tuple(images.shape[1:]) != want:
        raise UsageError(f"extractor expects images (n, {want}), got {images.shape}")
    out = np.empty((images.shape[0], extractor.cfg.feature_dim))
    with no_grad():
        for start in range(0, images.shape[0], chunk):
            out[start:start + chunk] = extractor(images[start:start + chunk]).data
    return out


def image_stats(extractor: Network, images) -> GaussianStats:
    return fit_gaussian(extract_features(extractor, images))


def fid(real_images, generated_images, extractor: Network) -> float:
    return frechet(image_stats(extractor, real_images), image_stats(extractor, generated_images))
