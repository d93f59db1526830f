"""Action-recognition network used for accuracy and FID features.

A GRU reads the whole motion; its final state feeds a three-layer MLP
(two ReLU hidden layers, then logits). The second hidden layer is the
feature vector.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import tensor as tn
from ..data import Dataset
from ..nn import as_tensors, gru_shapes, init_from_shapes, mlp_hidden, mlp_shapes, pad_batch, run_gru
from ..optim import AdamState, adam_step
from ..tensor import Tensor


@dataclass
class ClassifierConfig:
    K: int
    A: int
    hidden: int = 64
    mlp: tuple[int, int] = (64, 32)
    lr: float = 0.002
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.mlp = tuple(int(w) for w in self.mlp)
        if len(self.mlp) != 2:
            raise ValueError(f"classifier MLP needs two hidden widths, got {self.mlp}")

    @property
    def feature_dim(self) -> int:
        return self.mlp[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp"] = list(self.mlp)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        return cls(**d)


@dataclass
class ClassifierParams:
    config: ClassifierConfig
    params: dict[str, np.ndarray]
    train_accuracy: float = float("nan")


def init_classifier(cfg: ClassifierConfig) -> dict[str, np.ndarray]:
    shapes = {**gru_shapes("gru", cfg.K, cfg.hidden), **mlp_shapes("mlp", cfg.hidden, cfg.mlp, cfg.A)}
    return init_from_shapes(shapes, cfg.seed)


def _forward(p, motions: list[np.ndarray]) -> tuple[Tensor, Tensor]:
    seq, lengths = pad_batch(motions)
    h = run_gru(p, "gru", seq, lengths)
    feats = mlp_hidden(p, "mlp", h, 2, act=tn.relu)
    logits = tn.affine(feats, p["mlp.out.w"], p["mlp.out.b"])
    return feats, logits


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = tn.sum_(tn.mul(tn.log_softmax(logits), Tensor(onehot)))
    return tn.scalar_mul(picked, -1.0 / len(labels))


def train_classifier(train: Dataset, cfg: ClassifierConfig) -> ClassifierParams:
    present = {s.action for s in train.samples}
    if len(present) < 2:
        raise ValueError(f"classifier training needs at least 2 actions, found {sorted(present)}")
    params = init_classifier(cfg)
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    motions = [s.motion.frames for s in train.samples]
    labels = np.array([s.action for s in train.samples])
    for _ in range(cfg.epochs):
        order = rng.permutation(len(motions))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            p = as_tensors(params, requires_grad=True)
            _, logits = _forward(p, [motions[i] for i in idx])
            loss = cross_entropy(logits, labels[idx])
            if not np.isfinite(loss.item()):
                raise FloatingPointError("classifier loss became non-finite")
            tn.backward(loss)
            adam_step(params, {k: p[k].grad for k in params}, state)
    clf = ClassifierParams(config=cfg, params=params)
    clf.train_accuracy = classify(motions, labels, clf)
    return clf


def _batched(motions, clf: ClassifierParams, batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    ms = [np.asarray(getattr(m, "frames", m), dtype=np.float64) for m in motions]
    if not ms:
        raise ValueError("need at least one motion")
    p = as_tensors(clf.params)
    feats, logits = [], []
    with tn.no_grad():
        # sort by length so padding stays small; results are put back in order
        order = np.argsort([m.shape[1] for m in ms], kind="stable")
        for start in range(0, len(ms), batch):
            f, lg = _forward(p, [ms[i] for i in order[start:start + batch]])
            feats.append(f.data)
            logits.append(lg.data)
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return np.concatenate(feats)[inv], np.concatenate(logits)[inv]


def predict_labels(motions, clf: ClassifierParams) -> np.ndarray:
    return np.argmax(_batched(motions, clf)[1], axis=1)


def classify(motions, labels, clf: ClassifierParams) -> float:
    labels = np.asarray(labels)
    return float(np.mean(predict_labels(motions, clf) == labels))


def extract_features(motions, clf: ClassifierParams) -> np.ndarray:
    """Penultimate-layer activations, one row of length F per motion."""
    return _batched(motions, clf)[0]
