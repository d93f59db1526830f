"""Sample diversity and displacement error, raw and after time warping."""

from __future__ import annotations

import numpy as np

from .dtw import dtw_align


def _frames(m) -> np.ndarray:
    return np.asarray(getattr(m, "frames", m), dtype=np.float64)


def _mean_frame_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(a - b, axis=0)))


def diversity(samples) -> float:
    """Mean pairwise per-frame distance over S equal-length samples."""
    ys = [_frames(s) for s in samples]
    if len(ys) < 2:
        raise ValueError(f"diversity needs at least 2 samples, got {len(ys)}")
    if len({y.shape for y in ys}) != 1:
        raise ValueError("diversity needs samples of identical shape (full-length rollouts)")
    total = sum(_mean_frame_distance(ys[i], ys[j])
                for i in range(len(ys)) for j in range(i + 1, len(ys)))
    return 2.0 * total / (len(ys) * (len(ys) - 1))


def diversity_dtw(samples) -> float:
    """Like ``diversity`` but each pair is first aligned by DTW; lengths may differ."""
    ys = [_frames(s) for s in samples]
    if len(ys) < 2:
        raise ValueError(f"diversity_dtw needs at least 2 samples, got {len(ys)}")
    total = 0.0
    for i in range(len(ys)):
        for j in range(i + 1, len(ys)):
            pair = dtw_align(ys[i], ys[j])
            total += pair.cost / pair.length
    return 2.0 * total / (len(ys) * (len(ys) - 1))


def pad_to(y: np.ndarray, T: int) -> np.ndarray:
    """First T frames of ``y``, extended with its final pose if it is shorter."""
    if y.shape[1] >= T:
        return y[:, :T]
    return np.concatenate([y, np.repeat(y[:, -1:], T - y.shape[1], axis=1)], axis=1)


def ade(samples, gt) -> float:
    """Best-of-S mean per-frame distance to the ground-truth future."""
    ys = [_frames(s) for s in samples]
    if not ys:
        raise ValueError("ade needs at least one sample")
    y = _frames(gt)
    return min(_mean_frame_distance(pad_to(s, y.shape[1]), y) for s in ys)


def ade_dtw(samples, gt) -> float:
    ys = [_frames(s) for s in samples]
    if not ys:
        raise ValueError("ade_dtw needs at least one sample")
    y = _frames(gt)
    best = np.inf
    for s in ys:
        pair = dtw_align(s, y)
        best = min(best, pair.cost / pair.length)
    return float(best)
