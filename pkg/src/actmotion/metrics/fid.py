"""Feature statistics and the Frechet distance between two Gaussian fits.

Matrix square roots go through a cyclic Jacobi eigensolver. The feature
dimension is small (tens), so the O(F^3) sweeps are cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIDGE = 1e-6
NEGATIVE_TOLERANCE = 1e-10


class NotPSDError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureStats:
    mu: np.ndarray  # (F,)
    sigma: np.ndarray  # (F, F)
    count: int

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(), "count": self.count}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(mu=np.asarray(d["mu"], dtype=np.float64),
                   sigma=np.asarray(d["sigma"], dtype=np.float64), count=int(d["count"]))


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100
                ) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix.

    Cyclic Jacobi: every off-diagonal pair (p, q) is annihilated in turn by a
    plane rotation until the off-diagonal mass is negligible.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError(f"jacobi_eigh needs a square matrix, got {a.shape}")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError(f"jacobi_eigh did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix.

    Eigenvalues slightly below zero (relative to the largest) are treated as
    rounding noise and set to 0; anything more negative is an error.
    """
    w, v = jacobi_eigh(m)
    lam_max = max(float(np.abs(w).max()), 0.0)
    if np.any(w < -NEGATIVE_TOLERANCE * lam_max):
        raise NotPSDError(f"matrix is not positive semi-definite (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def feature_stats(features) -> FeatureStats:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] < 2:
        raise ValueError(f"feature_stats needs at least 2 vectors, got {f.shape[0]}")
    mu = f.mean(axis=0)
    centered = f - mu
    sigma = centered.T @ centered / (f.shape[0] - 1)
    sigma = 0.5 * (sigma + sigma.T)
    if f.shape[0] <= f.shape[1]:
        sigma = sigma + RIDGE * np.eye(f.shape[1])
    return FeatureStats(mu=mu, sigma=sigma, count=f.shape[0])


def trace_sqrt_product(sa: np.ndarray, sb: np.ndarray) -> float:
    """Tr((Sa Sb)^(1/2)) through the symmetric form (Sa^(1/2) Sb Sa^(1/2))^(1/2)."""
    ra = psd_sqrt(sa)
    inner = ra @ sb @ ra
    return float(np.trace(psd_sqrt(0.5 * (inner + inner.T))))


def fid(a: FeatureStats, b: FeatureStats) -> float:
    if a.mu.shape != b.mu.shape:
        raise ValueError(f"feature dimensions differ: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    tr = np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * trace_sqrt_product(a.sigma, b.sigma)
    return float(diff @ diff + tr)
