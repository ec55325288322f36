"""Seeded hierarchical Gaussian mixture datasets and their file formats.

Centers are drawn per level with shrinking spreads, so coarse structure
dominates fine structure and a perfect ranking is realizable when the
sample noise is small; problem difficulty is controlled entirely by the
spread ratios.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import LabelPath, read_label_csv, write_label_csv

FEATURE_MAGIC = b"RLDS1"


@dataclass(frozen=True)
class SynthConfig:
    """Shape and difficulty of a synthetic hierarchical embedding set.

    branching[l] is the fan-out at level l+1 (their product is the number
    of fine-grained classes); spreads are the per-level center scales and
    must decrease with depth; noise is the per-sample scale.
    """

    depth: int = 2
    branching: tuple[int, ...] = (2, 4)
    per_class: int = 16
    dim: int = 16
    spreads: tuple[float, ...] = (1.0, 0.4)
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if len(self.branching) != self.depth or any(b < 1 for b in self.branching):
            raise ValueError("need one positive branching factor per level")
        if len(self.spreads) != self.depth or any(s <= 0 for s in self.spreads):
            raise ValueError("need one positive spread per level")
        if any(a <= b for a, b in zip(self.spreads, self.spreads[1:])):
            raise ValueError("spreads must strictly decrease with depth")
        if self.per_class < 1 or self.dim < 1:
            raise ValueError("per_class and dim must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @property
    def num_fine_classes(self) -> int:
        out = 1
        for b in self.branching:
            out *= b
        return out


def generate(cfg: SynthConfig) -> tuple[np.ndarray, list[LabelPath]]:
    """Draw a dataset; deterministic per seed, features in float32.

    Returns (features of shape (N, dim), label paths) with
    N = num_fine_classes * per_class.  Path components encode the full
    node index, so parent consistency holds by construction.
    """
    rng = np.random.default_rng(cfg.seed)
    centers: list[tuple[tuple[int, ...], np.ndarray]] = [((), np.zeros(cfg.dim))]
    for level in range(cfg.depth):
        nxt = []
        for prefix, center in centers:
            offsets = rng.normal(0.0, cfg.spreads[level],
                                 size=(cfg.branching[level], cfg.dim))
            for i in range(cfg.branching[level]):
                nxt.append((prefix + (i,), center + offsets[i]))
        centers = nxt

    feats = np.empty((len(centers) * cfg.per_class, cfg.dim), dtype=np.float64)
    labels: list[LabelPath] = []
    row = 0
    for prefix, center in centers:
        samples = center + rng.normal(0.0, cfg.noise, size=(cfg.per_class, cfg.dim))
        feats[row:row + cfg.per_class] = samples
        path = tuple(".".join(str(i) for i in prefix[:l + 1])
                     for l in range(cfg.depth))
        labels.extend([path] * cfg.per_class)
        row += cfg.per_class
    return feats.astype(np.float32), labels


def write_features(path, features: np.ndarray) -> None:
    """Binary feature file: magic, N and D as little-endian u64, then
    N*D float32 values row-major little-endian."""
    feats = np.ascontiguousarray(features, dtype="<f4")
    if feats.ndim != 2:
        raise ValueError("features must be a 2-d array")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<QQ", feats.shape[0], feats.shape[1]))
        f.write(feats.tobytes(order="C"))


def read_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    head = len(FEATURE_MAGIC) + 16
    if len(blob) < head or not blob.startswith(FEATURE_MAGIC):
        raise ValueError("malformed header: not a feature file")
    n, d = struct.unpack("<QQ", blob[len(FEATURE_MAGIC):head])
    expected = n * d * 4
    if len(blob) - head != expected:
        raise ValueError(f"truncated payload: expected {expected} data bytes, "
                         f"found {len(blob) - head}")
    return np.frombuffer(blob, dtype="<f4", offset=head).reshape(n, d).copy()


def write_dataset(features_path, labels_path, features: np.ndarray,
                  label_paths: list[LabelPath]) -> None:
    """Write the feature file and the matching label CSV."""
    if len(features) != len(label_paths):
        raise ValueError("features and labels must have equal length")
    write_features(features_path, features)
    ids = [str(i) for i in range(len(label_paths))]
    write_label_csv(labels_path, ids, label_paths)


def read_dataset(features_path, labels_path) -> tuple[np.ndarray, list[LabelPath]]:
    feats = read_features(features_path)
    _, labels = read_label_csv(labels_path)
    if len(labels) != feats.shape[0]:
        raise ValueError("label row count does not match the feature file")
    return feats, labels
