"""Run configuration, the training loop and the evaluation pipeline."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import cvae
from . import tensor as tn
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, SyntheticSpec, default_spec, generate_synthetic, load_dataset, split_dataset
from .dct import dct_basis
from .metrics.classifier import (ClassifierConfig, ClassifierParams, extract_features,
                                 predict_labels, train_classifier)
from .metrics.diversity import ade, ade_dtw, diversity, diversity_dtw
from .metrics.fid import FeatureStats, feature_stats, fid
from .optim import AdamState, adam_step
from .transition import assemble_sample, epoch_pairs, estimate_k

# Stream tags keep the random streams of different stages independent.
_TRAIN, _EVAL, _PROTOCOL, _PROTOCOL_ACTIONS, _K = 1, 2, 3, 4, 5


class TrainingError(RuntimeError):
    pass


@dataclass
class RunConfig:
    seed: int
    data: str | None = None  # JSON-lines corpus; when absent, a synthetic one is generated
    synthetic: dict | None = None  # SyntheticSpec as a dict; None means default_spec(seed)
    test_fraction: float = 0.2  # 0 trains on the whole corpus
    N: int = 10
    L: int | None = None  # default min(10, N)
    M: int = 5
    P: int = 50
    T0_max: int | None = None  # default 2 N
    T_max: int | None = None  # default 1.5 (longest train motion + T0_max + P)
    Q: int = 5
    delta: float = 0.015
    latent: int = 64
    hidden: int = 128
    mlp: tuple[int, ...] = (300, 200, 128)
    embed: int = 32
    lambda_rec: float = 100.0
    lambda_smooth: float = 100.0
    lr: float = 0.002
    epochs: int = 500
    batch_size: int = 16
    cross_ratio: float = 0.5
    k_pairs: int = 20000
    checkpoint_every: int = 50
    S: int = 10
    steps: int = 5
    classifier: dict = field(default_factory=dict)  # ClassifierConfig overrides
    out: str = "run"

    def __post_init__(self):
        self.mlp = tuple(int(w) for w in self.mlp)
        if self.seed is None:
            raise ValueError("seed is mandatory")
        if self.N < 1 or self.P < 0 or self.M < 1 or self.Q < 1 or self.delta <= 0:
            raise ValueError("need N >= 1, P >= 0, M >= 1, Q >= 1 and delta > 0")
        if not 0 <= self.test_fraction < 1:
            raise ValueError(f"test_fraction must be in [0, 1), got {self.test_fraction}")
        if self.epochs < 0 or self.batch_size < 1 or self.S < 1 or self.steps < 0:
            raise ValueError("need epochs >= 0, batch_size >= 1, S >= 1 and steps >= 0")
        if self.L is not None and not 1 <= self.M <= 2 * self.L:
            raise ValueError(f"need 1 <= M <= 2L, got L={self.L}, M={self.M}")

    @property
    def smooth_L(self) -> int:
        return self.L if self.L is not None else min(10, self.N)

    @property
    def transition_cap(self) -> int:
        return self.T0_max if self.T0_max is not None else 2 * self.N

    def rollout_budget(self, train: Dataset) -> int:
        if self.T_max is not None:
            return self.T_max
        return int(math.ceil(1.5 * (train.max_length() + self.transition_cap + self.P)))

    def model_config(self, K: int, A: int) -> cvae.ModelConfig:
        return cvae.ModelConfig(K=K, A=A, N=self.N, hidden=self.hidden, mlp=self.mlp,
                                latent=self.latent, embed=self.embed)

    def classifier_config(self, K: int, A: int) -> ClassifierConfig:
        return ClassifierConfig(K=K, A=A, seed=self.seed, **self.classifier)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp"] = list(self.mlp)
        return d

    def echo(self) -> dict:
        """Config as stored in checkpoints and reports (the output path is left out)."""
        d = self.to_dict()
        del d["out"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_splits(cfg: RunConfig) -> tuple[Dataset, Dataset | None]:
    if cfg.data is not None:
        corpus = load_dataset(cfg.data)
    else:
        spec = SyntheticSpec.from_dict(cfg.synthetic) if cfg.synthetic else default_spec(cfg.seed)
        corpus = generate_synthetic(spec)
    if cfg.test_fraction == 0:
        return Dataset(corpus.samples, corpus.A, corpus.K, corpus.fps, "train"), None
    return split_dataset(corpus, cfg.test_fraction, cfg.seed)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)  # epoch, rec, smooth, kl, total

    def append(self, epoch: int, parts: list[dict[str, float]]) -> None:
        row = {"epoch": epoch}
        for key in ("rec", "smooth", "kl", "total"):
            row[key] = float(np.mean([p[key] for p in parts]))
        self.rows.append(row)

    def totals(self) -> list[float]:
        return [r["total"] for r in self.rows]

    def save(self, path) -> None:
        Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows),
                              encoding="utf-8")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    model: cvae.ModelConfig
    k: float
    T_max: int
    log: TrainLog
    checkpoint: Path | None


def _checkpoint_extra(cfg: RunConfig, k: float, T_max: int, epoch: int) -> dict:
    return {"run": cfg.echo(), "k": k, "T_max": T_max, "epoch": epoch}


def train(cfg: RunConfig, train_set: Dataset | None = None, write: bool = True,
          progress=None) -> TrainResult:
    """Fit the generator. Writes checkpoints and the log under ``cfg.out`` when ``write``."""
    if train_set is None:
        train_set = load_splits(cfg)[0]
    model = cfg.model_config(train_set.K, train_set.A)
    T_max = cfg.rollout_budget(train_set)
    k = estimate_k(train_set, cfg.k_pairs, seed=int(np.random.default_rng([cfg.seed, _K]).integers(2**31)))
    basis = dct_basis(cfg.smooth_L, cfg.M)
    weights = cvae.LossWeights(rec=cfg.lambda_rec, smooth=cfg.lambda_smooth)
    params = cvae.init_params(model, cfg.seed)
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, _TRAIN])
    out = Path(cfg.out)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    log = TrainLog()
    final = out / "checkpoint.json"
    for epoch in range(1, cfg.epochs + 1):
        pairs = epoch_pairs(train_set, rng, cfg.cross_ratio, cfg.N)
        samples = [assemble_sample(h, f, cfg.N, k, cfg.P, cfg.transition_cap, rng, max_future=T_max)
                   for h, f in pairs]
        parts = []
        for start in range(0, len(samples), cfg.batch_size):
            batch = cvae.make_batch(samples[start:start + cfg.batch_size], min_rollout=cfg.smooth_L)
            eps = rng.standard_normal((batch.X.shape[0], model.latent))
            p = cvae.as_tensors(params, requires_grad=True)
            loss, part = cvae.total_loss(p, model, batch, weights, basis, eps)
            if not all(np.isfinite(v) for v in part.values()):
                raise TrainingError(f"non-finite loss at epoch {epoch}: {part}")
            tn.backward(loss)
            adam_step(params, {name: p[name].grad for name in params}, state)
            parts.append(part)
        log.append(epoch, parts)
        if progress is not None:
            progress(log.rows[-1])
        if write and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch != cfg.epochs:
            save_checkpoint(out / f"checkpoint_epoch{epoch:04d}.json", model.to_dict(), params,
                            _checkpoint_extra(cfg, k, T_max, epoch))
    if write:
        save_checkpoint(final, model.to_dict(), params, _checkpoint_extra(cfg, k, T_max, cfg.epochs))
        log.save(out / "train_log.jsonl")
    return TrainResult(params=params, model=model, k=k, T_max=T_max, log=log,
                       checkpoint=final if write else None)


def load_generator(path) -> tuple[RunConfig, cvae.ModelConfig, dict[str, np.ndarray], float, int]:
    model_dict, params, extra = load_checkpoint(path)
    if "run" not in extra:
        raise ValueError(f"{path}: not a generator checkpoint")
    cfg = RunConfig.from_dict({**extra["run"], "out": str(Path(path).parent)})
    return cfg, cvae.ModelConfig.from_dict(model_dict), params, float(extra["k"]), int(extra["T_max"])


# --------------------------------------------------------------------------
# classifier checkpoints


def fit_classifier(cfg: RunConfig, train_set: Dataset) -> tuple[ClassifierParams, FeatureStats]:
    clf = train_classifier(train_set, cfg.classifier_config(train_set.K, train_set.A))
    stats = feature_stats(extract_features([s.motion for s in train_set.samples], clf))
    return clf, stats


def save_classifier(path, clf: ClassifierParams, train_stats: FeatureStats) -> None:
    save_checkpoint(path, clf.config.to_dict(), clf.params,
                    {"classifier": {"train_accuracy": clf.train_accuracy,
                                    "train_stats": train_stats.to_dict()}})


def load_classifier(path) -> tuple[ClassifierParams, FeatureStats]:
    conf, params, extra = load_checkpoint(path)
    if "classifier" not in extra:
        raise ValueError(f"{path}: not a classifier checkpoint")
    meta = extra["classifier"]
    clf = ClassifierParams(ClassifierConfig.from_dict(conf), params, meta["train_accuracy"])
    return clf, FeatureStats.from_dict(meta["train_stats"])


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Generator:
    params: dict[str, np.ndarray]
    model: cvae.ModelConfig
    stop: cvae.StoppingConfig
    window: int = 10  # frames after the junction inspected for transition jumps

    def sample(self, histories: np.ndarray, actions, eps: np.ndarray) -> tuple[list, np.ndarray]:
        """Truncated and full-length prior samples for a batch of histories."""
        full = cvae.rollout_prior(self.params, self.model, histories, actions, eps, self.stop.T_max)
        return [cvae.truncate(y, self.stop) for y in full], full


def _eps(seed: int, tag: int, cond: tuple[int, ...], S: int, latent: int) -> np.ndarray:
    return np.stack([np.random.default_rng([seed, tag, *cond, j]).standard_normal(latent)
                     for j in range(S)])


def _maybe(fn, samples):
    return fn(samples) if len(samples) >= 2 else None


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _fid_or_none(features: np.ndarray, ref: FeatureStats | None) -> float | None:
    if ref is None or len(features) < 2:
        return None
    return fid(feature_stats(features), ref)


@dataclass
class MetricReport:
    Acc: float
    FID_train: float | None
    FID_test: float | None
    Div: float | None
    Div_w: float | None
    ADE: float
    ADE_w: float
    per_action: dict[str, dict]
    counts: dict[str, int]
    transition: dict[str, float]
    steps: list[dict]
    config: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))

    def csv_rows(self) -> str:
        """Per-step rows (step, Acc, FID_train, FID_test, Div, Div_w, mean_length)."""
        cols = ["step", "Acc", "FID_train", "FID_test", "Div", "Div_w", "mean_length"]
        lines = [",".join(cols)]
        for row in self.steps:
            lines.append(",".join("" if row.get(c) is None else repr(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


def max_displacement(motion: np.ndarray) -> float:
    m = np.asarray(motion)
    if m.shape[1] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(m, axis=1), axis=0).max())


def evaluate(gen: Generator, test: Dataset, clf: ClassifierParams, train_stats: FeatureStats | None,
             S: int, seed: int, steps: int = 0, config: dict | None = None) -> MetricReport:
    """Score prior samples for every (test history, action) condition.

    Conditions use the first N frames of each test motion as history. ADE is
    measured only for the motion's own action, whose ground-truth future is
    the rest of the motion.
    """
    N, A = gen.model.N, gen.model.A
    usable = [s for s in test.samples if s.motion.T > N]
    if not usable:
        raise ValueError(f"no test motion is longer than the history length {N}")
    test_stats = feature_stats(extract_features([s.motion for s in test.samples], clf)) \
        if len(test.samples) >= 2 else None
    cut_all, label_all = [], []
    div, div_w, ade_v, ade_w = {a: [] for a in range(A)}, {a: [] for a in range(A)}, [], []
    lengths = {a: [] for a in range(A)}
    cross_lengths = {a: [] for a in range(A)}
    junction = []
    for i, s in enumerate(usable):
        X = s.motion.frames[:, :N]
        actions = np.repeat(np.arange(A), S)
        eps = np.concatenate([_eps(seed, _EVAL, (i, a), S, gen.model.latent) for a in range(A)])
        cuts, full = gen.sample(np.repeat(X[None], A * S, axis=0), actions, eps)
        for a in range(A):
            group = cuts[a * S:(a + 1) * S]
            div[a].append(_maybe(diversity, list(full[a * S:(a + 1) * S])))
            div_w[a].append(_maybe(diversity_dtw, group))
            lengths[a].extend(y.shape[1] for y in group)
            if a != s.action:
                cross_lengths[a].extend(y.shape[1] for y in group)
            if a == s.action:
                gt = s.motion.frames[:, N:]
                ade_v.append(ade(group, gt))
                ade_w.append(ade_dtw(group, gt))
        for y in full:
            junction.append(max_displacement(np.concatenate([X[:, -1:], y[:, :gen.window]], axis=1)))
        cut_all.extend(cuts)
        label_all.extend(actions.tolist())
    pred = predict_labels(cut_all, clf)
    labels = np.array(label_all)
    feats = extract_features(cut_all, clf)
    gt_disp = max(max_displacement(s.motion.frames) for s in test.samples)
    per_action = {}
    for a in range(A):
        sel = labels == a
        per_action[str(a)] = {
            "Acc": float(np.mean(pred[sel] == a)),
            "Div": _mean(div[a]), "Div_w": _mean(div_w[a]),
            "mean_length": float(np.mean(lengths[a])),
            "mean_length_cross": float(np.mean(cross_lengths[a])) if cross_lengths[a] else None,
            "gt_mean_length": test.mean_lengths()[a],
        }
    report = MetricReport(
        Acc=float(np.mean(pred == labels)),
        FID_train=_fid_or_none(feats, train_stats), FID_test=_fid_or_none(feats, test_stats),
        Div=_mean(v for a in range(A) for v in div[a]),
        Div_w=_mean(v for a in range(A) for v in div_w[a]),
        ADE=float(np.mean(ade_v)), ADE_w=float(np.mean(ade_w)),
        per_action=per_action,
        counts={"histories": len(usable), "samples_per_condition": S, "actions": A,
                "generated": len(cut_all)},
        transition={"max_junction_displacement": float(max(junction)),
                    "max_gt_displacement": gt_disp},
        steps=[], config=config or {})
    if steps:
        report.steps = recursive_protocol(gen, usable, clf, train_stats, test_stats, S, seed, steps)
    return report


def action_sequence(rng: np.random.Generator, A: int, steps: int, first: int) -> list[int]:
    """Random label sequence where consecutive labels differ (and differ from ``first``)."""
    seq, prev = [], first
    for _ in range(steps):
        choices = [a for a in range(A) if a != prev] or [prev]
        prev = choices[int(rng.integers(len(choices)))]
        seq.append(prev)
    return seq


def recursive_protocol(gen: Generator, histories, clf: ClassifierParams,
                       train_stats: FeatureStats | None, test_stats: FeatureStats | None,
                       S: int, seed: int, steps: int) -> list[dict]:
    """Chain ``steps`` predictions per history; one metric row per step.

    Each of the S samples keeps its own chain: its truncated output becomes
    its next history.
    """
    N = gen.model.N
    cuts_by_step = [[] for _ in range(steps)]
    labels_by_step = [[] for _ in range(steps)]
    div = [[] for _ in range(steps)]
    div_w = [[] for _ in range(steps)]
    for i, s in enumerate(histories):
        seq = action_sequence(np.random.default_rng([seed, _PROTOCOL_ACTIONS, i]),
                              gen.model.A, steps, s.action)
        hist = np.repeat(s.motion.frames[None, :, :N], S, axis=0)
        for t, a in enumerate(seq):
            eps = _eps(seed, _PROTOCOL, (i, t), S, gen.model.latent)
            cuts, full = gen.sample(hist, [a] * S, eps)
            hist = np.stack([cvae.next_history(h, y, N) for h, y in zip(hist, cuts)])
            cuts_by_step[t].extend(cuts)
            labels_by_step[t].extend([a] * S)
            div[t].append(_maybe(diversity, list(full)))
            div_w[t].append(_maybe(diversity_dtw, cuts))
    rows = []
    for t in range(steps):
        pred = predict_labels(cuts_by_step[t], clf)
        feats = extract_features(cuts_by_step[t], clf)
        rows.append({"step": t + 1,
                     "Acc": float(np.mean(pred == np.array(labels_by_step[t]))),
                     "FID_train": _fid_or_none(feats, train_stats),
                     "FID_test": _fid_or_none(feats, test_stats),
                     "Div": _mean(div[t]), "Div_w": _mean(div_w[t]),
                     "mean_length": float(np.mean([y.shape[1] for y in cuts_by_step[t]]))})
    return rows
