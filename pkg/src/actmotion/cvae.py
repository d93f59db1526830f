"""Recurrent conditional VAE for action-conditioned motion continuation.

Layout conventions: a batch of sequences is (B, K, T), a batch of poses is
(B, K). Parameters live in a flat ``dict[str, np.ndarray]``; the forward
functions take the same dict wrapped as Tensors so gradients can flow.

Network wiring:

* a shared history GRU summarizes X into ``h_hist``;
* the action label goes through one linear layer (the action token);
* the posterior additionally runs a future GRU over the padded target and
  maps ``[h_hist, h_future, token]`` through an MLP to (mu, log sigma);
* the prior maps ``[h_hist, token]`` the same way;
* the decoder GRU starts from ``h_hist`` and at each step consumes the
  previous pose plus the fixed conditioning ``[z, token, h_hist]``; its
  output is a residual added to the previous pose.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .dct import DctBasis, smoothness_loss
from .nn import Shapes, as_tensors, gru_shapes, init_from_shapes, mlp, mlp_shapes, run_gru
from .tensor import Tensor
from .transition import TransitionSample

LOG_STD_CLAMP = 10.0


@dataclass
class ModelConfig:
    K: int
    A: int
    N: int
    hidden: int = 128
    mlp: tuple[int, ...] = (300, 200, 128)
    latent: int = 64
    embed: int = 32

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp"] = list(self.mlp)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["mlp"] = tuple(d["mlp"])
        return cls(**d)


@dataclass
class LossWeights:
    rec: float = 100.0
    smooth: float = 100.0

    def __post_init__(self):
        if self.rec < 0 or self.smooth < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class StoppingConfig:
    Q: int = 5
    delta: float = 0.015
    T_max: int = 200

    def __post_init__(self):
        if not 1 <= self.Q < self.T_max or self.delta <= 0:
            raise ValueError(f"need 1 <= Q < T_max and delta > 0, got {self}")


@dataclass
class GaussianParams:
    mean: Tensor
    log_std: Tensor
    std: Tensor = field(init=False)

    def __post_init__(self):
        self.std = tn.exp(self.log_std)


# --------------------------------------------------------------------------
# parameters


def param_shapes(cfg: ModelConfig) -> Shapes:
    """name -> (shape, fan_in) for every generator parameter."""
    H, E, Dz = cfg.hidden, cfg.embed, cfg.latent
    shapes = {}
    shapes.update(gru_shapes("hist", cfg.K, H))
    shapes.update(gru_shapes("fut", cfg.K, H))
    shapes["act.w"] = ((cfg.A, E), cfg.A)
    shapes["act.b"] = ((E,), cfg.A)
    shapes.update(mlp_shapes("post", 2 * H + E, cfg.mlp, 2 * Dz))
    shapes.update(mlp_shapes("prior", H + E, cfg.mlp, 2 * Dz))
    dec_in = cfg.K + Dz + E + H
    shapes.update(gru_shapes("dec", cfg.K, H))
    shapes["dec.bx"] = ((3 * H,), dec_in)
    shapes["dec.wx"] = ((cfg.K, 3 * H), dec_in)
    shapes["dec.wc"] = ((Dz + E + H, 3 * H), dec_in)
    shapes["dec.out.w"] = ((H, cfg.K), H)
    shapes["dec.out.b"] = ((cfg.K,), H)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    return init_from_shapes(param_shapes(cfg), seed)


# --------------------------------------------------------------------------
# building blocks


def action_token(p, actions, num_actions: int) -> Tensor:
    onehot = np.zeros((len(actions), num_actions))
    onehot[np.arange(len(actions)), np.asarray(actions)] = 1.0
    return tn.affine(Tensor(onehot), p["act.w"], p["act.b"])


def _gaussian_head(out: Tensor, latent: int) -> GaussianParams:
    mu = out[:, :latent]
    log_std = tn.clip(out[:, latent:], -LOG_STD_CLAMP, LOG_STD_CLAMP)
    return GaussianParams(mu, log_std)


def _batched(x: np.ndarray, ndim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == ndim - 1 else x


def _actions(a, B: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=int))
    return np.repeat(a, B) if a.size == 1 and B > 1 else a


# --------------------------------------------------------------------------
# encoders, sampling, decoder


def encode_history(p, cfg: ModelConfig, X) -> Tensor:
    return run_gru(p, "hist", _batched(X, 3))


def encode_posterior(p, cfg: ModelConfig, X, Y_target, a, lengths=None,
                     h_hist: Tensor | None = None, token: Tensor | None = None) -> GaussianParams:
    X = _batched(X, 3)
    Y = _batched(Y_target, 3)
    if Y.shape[0] != X.shape[0] or Y.shape[1] != cfg.K or X.shape[1] != cfg.K:
        raise tn.ShapeError(f"encode_posterior: X {X.shape}, Y {Y.shape}, K={cfg.K}")
    h_hist = h_hist if h_hist is not None else encode_history(p, cfg, X)
    token = token if token is not None else action_token(p, _actions(a, X.shape[0]), cfg.A)
    h_fut = run_gru(p, "fut", Y, lengths)
    out = mlp(p, "post", tn.concat([h_hist, h_fut, token], axis=1), len(cfg.mlp))
    return _gaussian_head(out, cfg.latent)


def encode_prior(p, cfg: ModelConfig, X, a, h_hist: Tensor | None = None,
                 token: Tensor | None = None) -> GaussianParams:
    X = _batched(X, 3)
    if X.shape[1] != cfg.K:
        raise tn.ShapeError(f"encode_prior: X {X.shape}, K={cfg.K}")
    h_hist = h_hist if h_hist is not None else encode_history(p, cfg, X)
    token = token if token is not None else action_token(p, _actions(a, X.shape[0]), cfg.A)
    out = mlp(p, "prior", tn.concat([h_hist, token], axis=1), len(cfg.mlp))
    return _gaussian_head(out, cfg.latent)


def reparameterize(g: GaussianParams, eps) -> Tensor:
    eps = np.asarray(eps, dtype=np.float64).reshape(g.mean.shape)
    return tn.add(tn.mul(Tensor(eps), g.std), g.mean)


def kl_divergence(post: GaussianParams, prior: GaussianParams) -> Tensor:
    """KL(post || prior) for diagonal Gaussians, summed over latent dims.

    Batched inputs (B, D) give the batch mean.
    """
    if post.mean.shape != prior.mean.shape:
        raise tn.ShapeError(f"kl_divergence: {post.mean.shape} vs {prior.mean.shape}")
    # log(s2^2 / s1^2) + (s1^2 + (m1 - m2)^2) / s2^2 - 1, written in log-std
    log_ratio = tn.scalar_mul(tn.sub(prior.log_std, post.log_std), 2.0)
    var_ratio = tn.exp(tn.scalar_mul(log_ratio, -1.0))
    diff = tn.sub(post.mean, prior.mean)
    inv_prior_var = tn.exp(tn.scalar_mul(prior.log_std, -2.0))
    maha = tn.mul(tn.mul(diff, diff), inv_prior_var)
    terms = tn.add(tn.add(log_ratio, var_ratio), tn.add(maha, -1.0))
    total = tn.scalar_mul(tn.sum_(terms), 0.5)
    if post.mean.ndim == 2:
        total = tn.scalar_mul(total, 1.0 / post.mean.shape[0])
    return total


def decode(p, cfg: ModelConfig, X, a, z, T_total: int, h_hist: Tensor | None = None,
           token: Tensor | None = None) -> Tensor:
    """Roll the decoder out for ``T_total`` frames; returns (B, K, T_total)."""
    if T_total < 1:
        raise ValueError("decode: T_total must be >= 1")
    X = _batched(X, 3)
    B = X.shape[0]
    h_hist = h_hist if h_hist is not None else encode_history(p, cfg, X)
    token = token if token is not None else action_token(p, _actions(a, B), cfg.A)
    z = tn.as_tensor(z)
    if z.ndim == 1:
        z = tn.reshape(z, (1, z.shape[0]))
    cond = tn.matmul(tn.concat([z, token, h_hist], axis=1), p["dec.wc"])
    prev = Tensor(X[:, :, -1])
    h = h_hist
    frames = []
    for _ in range(T_total):
        h = tn.gru_cell(prev, h, p["dec.wx"], p["dec.wh"], p["dec.bx"], p["dec.bh"], extra=cond)
        prev = tn.add(prev, tn.affine(h, p["dec.out.w"], p["dec.out.b"]))
        frames.append(prev)
    return tn.stack(frames, axis=2)


# --------------------------------------------------------------------------
# losses


def reconstruction_loss(Y_hat, target, T0: int) -> Tensor:
    """Mean squared frame error after skipping the T0 transition frames."""
    Y_hat = tn.as_tensor(Y_hat)
    target = np.asarray(target, dtype=np.float64)
    n = target.shape[-1]
    if Y_hat.shape[-1] != T0 + n or Y_hat.shape[:-1] != target.shape[:-1]:
        raise tn.ShapeError(f"reconstruction_loss: prediction {Y_hat.shape} needs T0 + {n} "
                            f"= {T0 + n} frames matching target {target.shape}")
    diff = tn.sub(Y_hat[..., T0:], Tensor(target))
    return tn.scalar_mul(tn.sq_norm(diff), 1.0 / n)


@dataclass
class Batch:
    X: np.ndarray  # (B, K, N)
    Y: np.ndarray  # (B, K, Lmax) padded targets, zero beyond each length
    lengths: np.ndarray  # (B,) T + P
    actions: np.ndarray  # (B,)
    T0: np.ndarray  # (B,)
    rollout: int
    target: np.ndarray  # (B, K, rollout) targets placed after T0
    weight: np.ndarray  # (B, K, rollout) 1/(T+P) on supervised frames, else 0


def make_batch(samples: list[TransitionSample], min_rollout: int = 1) -> Batch:
    B = len(samples)
    K = samples[0].history.shape[0]
    lengths = np.array([s.target.shape[1] for s in samples])
    T0 = np.array([s.T0 for s in samples])
    R = max(int((T0 + lengths).max()), min_rollout)
    Y = np.zeros((B, K, lengths.max()))
    target = np.zeros((B, K, R))
    weight = np.zeros((B, K, R))
    for b, s in enumerate(samples):
        n = lengths[b]
        Y[b, :, :n] = s.target
        target[b, :, s.T0:s.T0 + n] = s.target
        weight[b, :, s.T0:s.T0 + n] = 1.0 / n
    return Batch(X=np.stack([s.history for s in samples]), Y=Y, lengths=lengths,
                 actions=np.array([s.action for s in samples]), T0=T0, rollout=R,
                 target=target, weight=weight)


def total_loss(p, cfg: ModelConfig, batch: Batch, weights: LossWeights, basis: DctBasis,
               eps: np.ndarray) -> tuple[Tensor, dict[str, float]]:
    """lambda_rec * L_rec + lambda_smooth * L_smooth + L_KL, averaged over the batch."""
    B = batch.X.shape[0]
    h_hist = encode_history(p, cfg, batch.X)
    token = action_token(p, batch.actions, cfg.A)
    post = encode_posterior(p, cfg, batch.X, batch.Y, batch.actions, lengths=batch.lengths,
                            h_hist=h_hist, token=token)
    prior = encode_prior(p, cfg, batch.X, batch.actions, h_hist=h_hist, token=token)
    z = reparameterize(post, eps)
    L = basis.L
    Y_hat = decode(p, cfg, batch.X, batch.actions, z, max(batch.rollout, L),
                   h_hist=h_hist, token=token)
    if Y_hat.shape[2] > batch.rollout:
        Y_hat_sup = Y_hat[:, :, :batch.rollout]
    else:
        Y_hat_sup = Y_hat
    diff = tn.sub(Y_hat_sup, Tensor(batch.target))
    rec = tn.scalar_mul(tn.sum_(tn.mul(tn.mul(diff, diff), Tensor(batch.weight))), 1.0 / B)
    smooth = smoothness_loss(batch.X[:, :, -L:], Y_hat[:, :, :L], basis)
    kl = kl_divergence(post, prior)
    total = tn.add(tn.add(tn.scalar_mul(rec, weights.rec), tn.scalar_mul(smooth, weights.smooth)), kl)
    parts = {"rec": rec.item(), "smooth": smooth.item(), "kl": kl.item(), "total": total.item()}
    return total, parts


# --------------------------------------------------------------------------
# inference


def stopping_index(Y_hat: np.ndarray, Q: int, delta: float) -> int | None:
    """First (0-based) window start whose mean deviation falls below ``delta``.

    The window starting at frame i covers frames i .. i+Q-1; its score is the
    average distance of those frames to their own mean pose.
    """
    T = np.shape(Y_hat)[1]
    if T < Q + 1:
        raise ValueError(f"stopping_index needs at least Q+1={Q + 1} frames, got {T}")
    hits = np.flatnonzero(window_scores(Y_hat, Q) < delta)
    return int(hits[0]) if hits.size else None


def window_scores(Y_hat: np.ndarray, Q: int) -> np.ndarray:
    """Score of every length-Q window of a (K, T) motion, shape (T-Q+1,)."""
    windows = np.lib.stride_tricks.sliding_window_view(np.asarray(Y_hat), Q, axis=1)
    centered = windows - windows.mean(axis=2, keepdims=True)
    return np.linalg.norm(centered, axis=0).mean(axis=1)


def truncate(Y_hat: np.ndarray, stop: StoppingConfig) -> np.ndarray:
    i = stopping_index(Y_hat, stop.Q, stop.delta)
    return Y_hat if i is None else Y_hat[:, :i + stop.Q]


def rollout_prior(params: dict[str, np.ndarray], cfg: ModelConfig, X: np.ndarray,
                  actions, eps: np.ndarray, T_max: int) -> np.ndarray:
    """Full-length prior samples for a batch of histories: (B, K, T_max)."""
    X = _batched(X, 3)
    with tn.no_grad():
        p = as_tensors(params)
        acts = _actions(actions, X.shape[0])
        h_hist = encode_history(p, cfg, X)
        token = action_token(p, acts, cfg.A)
        prior = encode_prior(p, cfg, X, acts, h_hist=h_hist, token=token)
        z = reparameterize(prior, np.asarray(eps).reshape(X.shape[0], cfg.latent))
        return decode(p, cfg, X, acts, z, T_max, h_hist=h_hist, token=token).data


def predict(params, cfg: ModelConfig, X: np.ndarray, a: int, stop: StoppingConfig,
            rng: np.random.Generator, return_full: bool = False):
    """Sample one variable-length future for history X (K, N) and action a."""
    eps = rng.standard_normal((1, cfg.latent))
    full = rollout_prior(params, cfg, X, [a], eps, stop.T_max)[0]
    cut = truncate(full, stop)
    return (cut, full) if return_full else cut


def next_history(history: np.ndarray, prediction: np.ndarray, N: int) -> np.ndarray:
    return np.concatenate([history, prediction], axis=1)[:, -N:]


def predict_sequence(params, cfg: ModelConfig, X: np.ndarray, actions, stop: StoppingConfig,
                     rng: np.random.Generator, return_full: bool = False):
    """Chain predictions over a list of actions, feeding each back as history."""
    actions = list(actions)
    if not actions:
        raise ValueError("predict_sequence needs at least one action")
    history = np.asarray(X, dtype=np.float64)
    cuts, fulls = [], []
    for a in actions:
        cut, full = predict(params, cfg, history, a, stop, rng, return_full=True)
        cuts.append(cut)
        fulls.append(full)
        history = next_history(history, cut, cfg.N)
    return (cuts, fulls) if return_full else cuts
