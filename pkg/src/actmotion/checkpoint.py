"""JSON checkpoints: {"version", "config", "params": {name: {"shape", "data"}}}."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


def dumps(config: dict, params: dict[str, np.ndarray], extra: dict | None = None) -> str:
    doc = {"version": CHECKPOINT_VERSION, "config": config,
           "params": {name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
                      for name, arr in sorted(params.items())}}
    if extra:
        doc.update(extra)
    # repr-based float output round-trips every float64 exactly
    return json.dumps(doc, sort_keys=True)


def save_checkpoint(path, config: dict, params: dict[str, np.ndarray],
                    extra: dict | None = None) -> None:
    Path(path).write_text(dumps(config, params, extra) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    params = {}
    for name, entry in doc["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64)
        params[name] = arr.reshape(entry["shape"])
    extra = {k: v for k, v in doc.items() if k not in ("version", "config", "params")}
    return doc["config"], params, extra
