"""Synthetic action transitions: the k coefficient, T0 and training pairs.

A training pair splices a history window from one motion onto a future taken
from another (possibly different-action) motion. The unknown bridge between
them is T0 frames long, with T0 growing linearly in the pose gap. The future
is padded with P copies of its last pose so the decoder learns to come to
rest after the motion ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, LabeledMotion

DEGENERATE_DISTANCE = 1e-8


@dataclass(frozen=True)
class TransitionSample:
    history: np.ndarray  # (K, N)
    future: np.ndarray  # (K, T)
    action: int
    T0: int
    P: int
    target: np.ndarray  # (K, T + P)
    same_source: bool = False

    @property
    def T(self) -> int:
        return self.future.shape[1]

    @property
    def rollout_length(self) -> int:
        return self.T0 + self.T + self.P


def estimate_k(train: Dataset, pair_budget: int = 20000, seed: int = 0) -> float:
    """Mean of |i - j| / ||x_i - x_j|| over random frame pairs inside motions.

    Motions are chosen with probability proportional to their number of
    distinct frame pairs, so pairs are uniform over the whole corpus.
    """
    motions = [s.motion.frames for s in train.samples if s.motion.T >= 2]
    if not motions:
        raise ValueError("k undefined: no motion has two frames")
    n_pairs = np.array([m.shape[1] * (m.shape[1] - 1) / 2 for m in motions])
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(motions), size=pair_budget, p=n_pairs / n_pairs.sum())
    ratios = []
    for mi in picks:
        m = motions[mi]
        i, j = rng.choice(m.shape[1], size=2, replace=False)
        d = float(np.linalg.norm(m[:, i] - m[:, j]))
        if d < DEGENERATE_DISTANCE:
            continue
        ratios.append(abs(int(i) - int(j)) / d)
    if not ratios:
        raise ValueError("k undefined: every sampled frame pair is degenerate")
    return float(np.mean(ratios))


def transition_length(x_last: np.ndarray, y_first: np.ndarray, k: float, T0_max: int) -> int:
    if x_last.shape != y_first.shape:
        raise ValueError(f"pose shapes differ: {x_last.shape} vs {y_first.shape}")
    d = float(np.linalg.norm(np.asarray(x_last) - np.asarray(y_first)))
    return int(min(math.floor(k * d), T0_max))


def pad_target(future: np.ndarray, P: int) -> np.ndarray:
    return np.concatenate([future, np.repeat(future[:, -1:], P, axis=1)], axis=1)


def assemble_sample(history_src: LabeledMotion, future_src: LabeledMotion, N: int, k: float,
                    P: int, T0_max: int, rng: np.random.Generator,
                    max_future: int | None = None) -> TransitionSample:
    """Build one training pair.

    With ``history_src is future_src`` the future is the rest of the same
    motion after the history window and T0 is 0. Otherwise the future is the
    whole of ``future_src`` (optionally capped at ``max_future`` frames).
    """
    hist = history_src.motion.frames
    same = history_src is future_src or history_src.sample_id == future_src.sample_id
    if same:
        if hist.shape[1] < N + 1:
            raise ValueError(f"{history_src.sample_id}: need > {N} frames for a same-source pair")
        start = int(rng.integers(0, hist.shape[1] - N))
        X = hist[:, start:start + N]
        Y = hist[:, start + N:]
        T0 = 0
    else:
        if hist.shape[1] < N:
            raise ValueError(f"{history_src.sample_id}: need >= {N} frames of history")
        start = int(rng.integers(0, hist.shape[1] - N + 1))
        X = hist[:, start:start + N]
        Y = future_src.motion.frames
        T0 = transition_length(X[:, -1], Y[:, 0], k, T0_max)
    if max_future is not None:
        Y = Y[:, :max(1, max_future - T0 - P)]
    return TransitionSample(history=X.copy(), future=Y.copy(), action=future_src.action,
                            T0=T0, P=P, target=pad_target(Y, P), same_source=same)


def epoch_pairs(train: Dataset, rng: np.random.Generator, cross_ratio: float = 0.5,
                N: int | None = None) -> list[tuple[LabeledMotion, LabeledMotion]]:
    """One epoch of (history source, future source) pairs.

    Every training motion serves once as a history source. A fixed share
    ``cross_ratio`` of them (rounded) is paired with a random motion of a
    different action, the rest with themselves. Motions too short for a
    same-source pair (T <= N) are always used cross-action.
    """
    samples = train.samples
    n = len(samples)
    n_cross = int(round(n * cross_ratio))
    flags = np.array([True] * n_cross + [False] * (n - n_cross))
    rng.shuffle(flags)
    by_action = train.by_action()
    pairs = []
    for s, cross in zip(samples, flags):
        if not cross and N is not None and s.motion.T <= N:
            cross = True
        if cross:
            others = [a for a in by_action if a != s.action and by_action[a]]
            if not others:
                pairs.append((s, s))
                continue
            a = others[int(rng.integers(len(others)))]
            pool = by_action[a]
            pairs.append((s, pool[int(rng.integers(len(pool)))]))
        else:
            pairs.append((s, s))
    order = rng.permutation(n)
    return [pairs[i] for i in order]
