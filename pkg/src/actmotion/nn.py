"""Small layer helpers shared by the generator and the action classifier."""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .optim import uniform_init
from .tensor import Tensor

Shapes = dict[str, tuple[tuple[int, ...], int]]  # name -> (shape, fan_in)


def gru_shapes(prefix: str, n_in: int, hidden: int) -> Shapes:
    return {f"{prefix}.wx": ((n_in, 3 * hidden), n_in), f"{prefix}.bx": ((3 * hidden,), n_in),
            f"{prefix}.wh": ((hidden, 3 * hidden), hidden), f"{prefix}.bh": ((3 * hidden,), hidden)}


def mlp_shapes(prefix: str, n_in: int, widths, n_out: int) -> Shapes:
    shapes = {}
    for i, w in enumerate(list(widths) + [n_out]):
        name = f"{prefix}.{i}" if i < len(widths) else f"{prefix}.out"
        shapes[f"{name}.w"] = ((n_in, w), n_in)
        shapes[f"{name}.b"] = ((w,), n_in)
        n_in = w
    return shapes


def init_from_shapes(shapes: Shapes, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {name: uniform_init(rng, shape, fan_in) for name, (shape, fan_in) in sorted(shapes.items())}


def as_tensors(params: dict[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def mlp_hidden(p, prefix: str, x: Tensor, depth: int, act=tn.tanh) -> Tensor:
    for i in range(depth):
        x = act(tn.affine(x, p[f"{prefix}.{i}.w"], p[f"{prefix}.{i}.b"]))
    return x


def mlp(p, prefix: str, x: Tensor, depth: int, act=tn.tanh) -> Tensor:
    x = mlp_hidden(p, prefix, x, depth, act)
    return tn.affine(x, p[f"{prefix}.out.w"], p[f"{prefix}.out.b"])


def run_gru(p, prefix: str, seq: np.ndarray, lengths=None, h0: Tensor | None = None) -> Tensor:
    """Final hidden state of a GRU over a (B, K, T) batch.

    ``lengths`` (B,) lets rows stop early; their state is frozen afterwards.
    """
    B, _, T = seq.shape
    H = p[f"{prefix}.wh"].shape[0]
    h = h0 if h0 is not None else Tensor(np.zeros((B, H), dtype=seq.dtype))
    lengths = None if lengths is None else np.asarray(lengths)
    steps = T if lengths is None else min(T, int(lengths.max()))
    for t in range(steps):
        mask = None if lengths is None or np.all(lengths > t) else (lengths > t)
        h = tn.gru_cell(Tensor(seq[:, :, t]), h, p[f"{prefix}.wx"], p[f"{prefix}.wh"],
                        p[f"{prefix}.bx"], p[f"{prefix}.bh"], mask=mask)
    return h


def pad_batch(motions: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack (K, T_i) arrays into a zero-padded (B, K, max T) batch plus lengths."""
    lengths = np.array([m.shape[1] for m in motions])
    out = np.zeros((len(motions), motions[0].shape[0], lengths.max()))
    for b, m in enumerate(motions):
        out[b, :, :m.shape[1]] = m
    return out, lengths
