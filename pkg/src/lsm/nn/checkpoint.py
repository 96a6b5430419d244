"""Checkpoint container and its two-file disk format.

``<name>.json`` holds the model spec, seeds, standardization stats, training
history, the declared weight count, and a content hash of the binary.
``<name>.bin`` holds magic bytes "LSMW", one format-version byte, then every
weight as little-endian float32 in declaration order. The JSON count, the
binary length, and the ModelSpec parameter count are cross-checked on load.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lsm.nn.models import Model, ModelSpec, build, param_count
from lsm.reduce import Standardizer

MAGIC = b"LSMW"
FORMAT_VERSION = 1

PREDICT_BATCH = 512


@dataclass
class Checkpoint:
    spec: ModelSpec
    weights: np.ndarray  # float32, declaration order
    standardizer: Standardizer | None = None
    pca_hash: str | None = None
    history: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    _model: Model | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32).reshape(-1)
        declared = param_count(self.spec)
        if self.weights.size != declared:
            raise ValueError(f"weight count mismatch: spec declares {declared}, "
                             f"got {self.weights.size}")

    def model(self) -> Model:
        """Build (once) and return the model with these weights loaded."""
        if self._model is None:
            m = build(self.spec)
            m.set_weights(self.weights.astype(np.float64))
            self._model = m
        return self._model


def save_checkpoint(ckpt: Checkpoint, basepath) -> tuple[Path, Path]:
    """Write ``<basepath>.json`` and ``<basepath>.bin``; returns both paths."""
    base = Path(basepath)
    json_path = base.with_name(base.name + ".json")
    bin_path = base.with_name(base.name + ".bin")
    payload = MAGIC + bytes([FORMAT_VERSION]) + ckpt.weights.astype("<f4").tobytes()
    bin_path.write_bytes(payload)
    doc = {
        "format": "LSMW",
        "format_version": FORMAT_VERSION,
        "spec": ckpt.spec.to_dict(),
        "seeds": ckpt.seeds,
        "standardizer": ckpt.standardizer.to_dict() if ckpt.standardizer else None,
        "pca_hash": ckpt.pca_hash,
        "history": ckpt.history,
        "weight_count": int(ckpt.weights.size),
        "bin_sha256": hashlib.sha256(payload).hexdigest(),
    }
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    return json_path, bin_path


def load_checkpoint(basepath) -> Checkpoint:
    """Read a checkpoint pair back; validates magic bytes, format version,
    the JSON/binary weight-count cross-check, and the binary content hash."""
    base = Path(basepath)
    json_path = base.with_name(base.name + ".json")
    bin_path = base.with_name(base.name + ".bin")
    doc = json.loads(json_path.read_text(encoding="utf-8"))
    payload = bin_path.read_bytes()
    if payload[:4] != MAGIC:
        raise ValueError(f"{bin_path}: corrupted checkpoint, bad magic bytes")
    if len(payload) < 5 or payload[4] != FORMAT_VERSION:
        raise ValueError(f"{bin_path}: unsupported checkpoint format version")
    body = payload[5:]
    if len(body) % 4 != 0:
        raise ValueError(f"{bin_path}: truncated weight data ({len(body)} bytes)")
    n_bin = len(body) // 4
    n_json = int(doc["weight_count"])
    if n_bin != n_json:
        raise ValueError(f"weight count mismatch: JSON declares {n_json}, "
                         f"binary holds {n_bin}")
    if hashlib.sha256(payload).hexdigest() != doc["bin_sha256"]:
        raise ValueError(f"{bin_path}: content hash mismatch")
    weights = np.frombuffer(body, dtype="<f4").astype(np.float32)
    std = doc.get("standardizer")
    return Checkpoint(
        spec=ModelSpec.from_dict(doc["spec"]),
        weights=weights,
        standardizer=Standardizer.from_dict(std) if std else None,
        pca_hash=doc.get("pca_hash"),
        history=doc.get("history", {}),
        seeds=doc.get("seeds", {}),
    )


def predict_batch(ckpt: Checkpoint, inputs: np.ndarray,
                  batch_size: int = PREDICT_BATCH) -> np.ndarray:
    """Probabilities for a batch of raw (unstandardized) inputs.

    Applies the checkpoint's stored standardizer, then runs the model in
    fixed-size chunks; equals per-sample forward calls to within float
    noise of zero.
    """
    x = np.asarray(inputs, dtype=np.float64)
    expected = ckpt.spec.input_shape
    if x.shape[0] == 0:
        return np.zeros(0)
    if x.shape[1:] != expected:
        raise ValueError(f"expected input shape (n, {', '.join(map(str, expected))}), "
                         f"got {x.shape}")
    if ckpt.standardizer is not None:
        x = ckpt.standardizer.transform(x)
    model = ckpt.model()
    parts = [model.predict_proba(x[s : s + batch_size])
             for s in range(0, x.shape[0], batch_size)]
    return np.concatenate(parts)
