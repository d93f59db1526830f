"""Motion containers, the procedural toy corpus, persistence and splits.

A motion is stored pose-major: ``frames`` has shape (K, T), one column per
frame. On disk each record lists frames time-major (T rows of K numbers),
which is easier to read and to produce from other tools.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Motion:
    frames: np.ndarray  # (K, T)
    fps: float = 30.0

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] < 1:
            raise DatasetError(f"motion frames must be K x T with T >= 1, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise DatasetError("motion contains non-finite values")
        if self.fps <= 0:
            raise DatasetError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", f)

    @property
    def K(self) -> int:
        return self.frames.shape[0]

    @property
    def T(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        return (isinstance(other, Motion) and self.fps == other.fps
                and self.frames.shape == other.frames.shape
                and np.array_equal(self.frames, other.frames))


@dataclass(frozen=True)
class LabeledMotion:
    motion: Motion
    action: int
    sample_id: str


def one_hot(action: int, num_actions: int) -> np.ndarray:
    if not 0 <= action < num_actions:
        raise DatasetError(f"action {action} outside [0, {num_actions})")
    v = np.zeros(num_actions)
    v[action] = 1.0
    return v


@dataclass
class Dataset:
    samples: list[LabeledMotion]
    A: int
    K: int
    fps: float = 30.0
    split: str = "all"

    def __post_init__(self):
        for s in self.samples:
            if s.motion.K != self.K:
                raise DatasetError(f"sample {s.sample_id} has K={s.motion.K}, dataset K={self.K}")
            if s.motion.fps != self.fps:
                raise DatasetError(f"sample {s.sample_id} has fps={s.motion.fps}, dataset fps={self.fps}")
            if not 0 <= s.action < self.A:
                raise DatasetError(f"sample {s.sample_id} has action {s.action} outside [0, {self.A})")

    def __len__(self) -> int:
        return len(self.samples)

    def by_action(self) -> dict[int, list[LabeledMotion]]:
        out: dict[int, list[LabeledMotion]] = {a: [] for a in range(self.A)}
        for s in self.samples:
            out[s.action].append(s)
        return out

    def mean_lengths(self) -> dict[int, float]:
        return {a: float(np.mean([s.motion.T for s in ss])) if ss else float("nan")
                for a, ss in self.by_action().items()}

    def max_length(self) -> int:
        return max(s.motion.T for s in self.samples)

    def __eq__(self, other):
        return (isinstance(other, Dataset) and (self.A, self.K, self.fps) == (other.A, other.K, other.fps)
                and self.samples == other.samples)


# --------------------------------------------------------------------------
# synthetic corpus


@dataclass
class ActionGenerator:
    frequency: float  # Hz
    mean_length: int
    bias: list[float]  # per-channel offset, length K
    amplitude: tuple[float, float] = (0.5, 1.0)
    phase: tuple[float, float] = (0.0, 2 * np.pi)
    jitter: float = 0.1
    channel_phase: list[float] | None = None  # fixed per-channel offset added to the drawn phase


@dataclass
class SyntheticSpec:
    K: int
    actions: list[ActionGenerator]
    samples_per_action: int = 50
    fps: float = 30.0
    noise: float = 0.005
    seed: int = 0

    @property
    def A(self) -> int:
        return len(self.actions)

    def validate(self) -> None:
        if self.K < 1 or not self.actions:
            raise DatasetError("synthetic spec needs K >= 1 and at least one action")
        if self.noise < 0:
            raise DatasetError("noise must be non-negative")
        if self.samples_per_action < 1:
            raise DatasetError("samples_per_action must be positive")
        lengths = [g.mean_length for g in self.actions]
        if len(set(lengths)) != len(lengths):
            raise DatasetError(f"per-action mean lengths must be distinct, got {lengths}")
        for g in self.actions:
            if len(g.bias) != self.K:
                raise DatasetError(f"action bias has {len(g.bias)} channels, K={self.K}")
            if not 0 <= g.jitter < 1 or g.mean_length < 1:
                raise DatasetError("need 0 <= jitter < 1 and mean_length >= 1")
            if g.channel_phase is not None and len(g.channel_phase) != self.K:
                raise DatasetError(f"channel_phase has {len(g.channel_phase)} entries, K={self.K}")
            if g.amplitude[0] > g.amplitude[1] or g.phase[0] > g.phase[1]:
                raise DatasetError("amplitude/phase ranges must be ordered (lo, hi)")

    def to_dict(self) -> dict:
        return {"K": self.K, "samples_per_action": self.samples_per_action, "fps": self.fps,
                "noise": self.noise, "seed": self.seed,
                "actions": [{"frequency": g.frequency, "mean_length": g.mean_length,
                             "bias": list(g.bias), "amplitude": list(g.amplitude),
                             "phase": list(g.phase), "jitter": g.jitter,
                             "channel_phase": None if g.channel_phase is None else list(g.channel_phase)}
                            for g in self.actions]}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        acts = [ActionGenerator(frequency=a["frequency"], mean_length=a["mean_length"],
                                bias=list(a["bias"]), amplitude=tuple(a["amplitude"]),
                                phase=tuple(a["phase"]), jitter=a["jitter"],
                                channel_phase=a.get("channel_phase")) for a in d["actions"]]
        return cls(K=d["K"], actions=acts, samples_per_action=d["samples_per_action"],
                   fps=d["fps"], noise=d["noise"], seed=d["seed"])


def default_spec(seed: int = 0, samples_per_action: int = 63, K: int = 6,
                 mean_lengths=(40, 60, 80, 100), fps: float = 30.0) -> SyntheticSpec:
    """Toy corpus: one sinusoid cycle per mean length, distinct channel biases.

    Biases and per-channel phase offsets are fixed (not seed dependent) so the
    action classes stay the same across seeds; only the per-sample draws
    change. Offsets are spread evenly over the channels, which keeps the pose
    speed nearly constant over the cycle instead of dropping to zero whenever
    all channels turn at once. Per-sample amplitude and phase draws are narrow
    so each action has a recognizable shape.
    """
    bias_rng = np.random.default_rng(12345)
    biases = bias_rng.standard_normal((len(mean_lengths), K))
    biases *= 0.8 / np.linalg.norm(biases, axis=1, keepdims=True)
    stagger = (2 * np.pi * np.arange(K) / K).tolist()
    actions = [ActionGenerator(frequency=fps / n, mean_length=n, bias=biases[i].tolist(),
                               amplitude=(0.6, 0.8), phase=(0.0, 0.5), channel_phase=stagger)
               for i, n in enumerate(mean_lengths)]
    return SyntheticSpec(K=K, actions=actions, samples_per_action=samples_per_action,
                         fps=fps, seed=seed)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    samples = []
    for a, g in enumerate(spec.actions):
        bias = np.asarray(g.bias)[:, None]
        for n in range(spec.samples_per_action):
            T = max(1, int(round(g.mean_length * (1.0 + rng.uniform(-g.jitter, g.jitter)))))
            amp = rng.uniform(*g.amplitude, size=spec.K)[:, None]
            phase = rng.uniform(*g.phase, size=spec.K)[:, None]
            if g.channel_phase is not None:
                phase = phase + np.asarray(g.channel_phase)[:, None]
            t = np.arange(T)[None, :] / spec.fps
            frames = amp * np.sin(2 * np.pi * g.frequency * t + phase) + bias
            if spec.noise > 0:
                frames = frames + spec.noise * rng.standard_normal(frames.shape)
            samples.append(LabeledMotion(Motion(frames, spec.fps), a, f"a{a}_{n:04d}"))
    return Dataset(samples, A=spec.A, K=spec.K, fps=spec.fps)


# --------------------------------------------------------------------------
# persistence


def save_dataset(d: Dataset, path) -> None:
    lines = [json.dumps({"version": FORMAT_VERSION, "K": d.K, "A": d.A, "fps": d.fps})]
    for s in d.samples:
        lines.append(json.dumps({"id": s.sample_id, "action": s.action,
                                 "frames": s.motion.frames.T.tolist()}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path, split: str = "all") -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if not lines or not lines[0].strip():
        raise DatasetError(f"{path}: line 1: missing header")
    try:
        header = json.loads(lines[0])
        K, A, fps = int(header["K"]), int(header["A"]), float(header["fps"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: line 1: bad header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: line 1: unsupported version {header.get('version')!r}")
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            frames = np.asarray(rec["frames"], dtype=np.float64)
            sid, action = str(rec["id"]), int(rec["action"])
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetError(f"{path}: line {lineno}: malformed record ({exc})") from None
        if frames.ndim != 2 or frames.shape[1] != K or frames.shape[0] < 1:
            raise DatasetError(f"{path}: line {lineno}: frames have shape {frames.shape}, "
                               f"expected (T, {K})")
        if not 0 <= action < A:
            raise DatasetError(f"{path}: line {lineno}: action {action} outside [0, {A})")
        try:
            motion = Motion(frames.T.copy(), fps)
        except DatasetError as exc:
            raise DatasetError(f"{path}: line {lineno}: {exc}") from None
        samples.append(LabeledMotion(motion, action, sid))
    return Dataset(samples, A=A, K=K, fps=fps, split=split)


# --------------------------------------------------------------------------
# splits and windows


def split_dataset(d: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified, seeded split into (train, test)."""
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for a, items in d.by_action().items():
        if not items:
            continue
        if len(items) < 2:
            raise DatasetError(f"action {a} has {len(items)} sample(s); need >= 2 to split")
        order = rng.permutation(len(items))
        n_test = min(len(items) - 1, max(1, int(round(len(items) * test_fraction))))
        test.extend(items[i] for i in sorted(order[:n_test]))
        train.extend(items[i] for i in sorted(order[n_test:]))
    return (Dataset(train, d.A, d.K, d.fps, "train"), Dataset(test, d.A, d.K, d.fps, "test"))


def slice_history(m: Motion, N: int) -> Motion:
    if not 1 <= N <= m.T:
        raise DatasetError(f"cannot take {N} history frames from a motion of {m.T}")
    return Motion(m.frames[:, :N].copy(), m.fps)
