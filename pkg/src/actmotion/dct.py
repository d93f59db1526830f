"""Low-frequency DCT basis and the junction smoothness prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor


@dataclass(frozen=True)
class DctBasis:
    D: np.ndarray  # (2L, M), orthonormal columns
    L: int
    M: int

    @property
    def projector(self) -> np.ndarray:
        return self.D @ self.D.T

    @property
    def residual_operator(self) -> np.ndarray:
        """I - D D^T: maps a junction window to its high-frequency residual."""
        if self.M == 2 * self.L:
            # complete basis: D D^T is the identity, so skip the round-off
            return np.zeros((2 * self.L, 2 * self.L))
        return np.eye(2 * self.L) - self.projector


def dct_basis(L: int, M: int) -> DctBasis:
    """First M orthonormal DCT-II vectors over 2L samples, as columns."""
    n = 2 * L
    if L < 1 or not 1 <= M <= n:
        raise ValueError(f"need L >= 1 and 1 <= M <= 2L, got L={L}, M={M}")
    t = np.arange(n)[:, None]
    m = np.arange(M)[None, :]
    D = np.cos(np.pi * (2 * t + 1) * m / (2 * n))
    D[:, 0] *= np.sqrt(1.0 / n)
    D[:, 1:] *= np.sqrt(2.0 / n)
    return DctBasis(D=D, L=L, M=M)


def smoothness_loss(history_tail, prediction_head, basis: DctBasis) -> Tensor:
    """Mean squared residual of the junction window off the low-DCT subspace.

    Accepts single windows (K, L) or batches (B, K, L); for batches the result
    is averaged over the batch. ``history_tail`` is treated as data.
    """
    head = tn.as_tensor(prediction_head)
    tail = history_tail.data if isinstance(history_tail, Tensor) else np.asarray(history_tail)
    L = basis.L
    if tail.shape != head.shape or tail.shape[-1] != L:
        raise tn.ShapeError(f"smoothness_loss: history {tail.shape} and prediction "
                            f"{head.shape} must both be (..., K, {L})")
    window = tn.concat([Tensor(tail), head], axis=-1)
    resid = tn.matmul(window, Tensor(basis.residual_operator))
    total = tn.scalar_mul(tn.sq_norm(resid), 1.0 / (2 * L))
    if window.ndim == 3:
        total = tn.scalar_mul(total, 1.0 / window.shape[0])
    return total


def project(window: np.ndarray, basis: DctBasis) -> np.ndarray:
    return window @ basis.projector
