"""Seeded synthetic Gaussian-cluster datasets with deliberately overlapping class pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core_math import SeededRng
from .errors import ConfigError


@dataclass(frozen=True)
class SynthConfig:
    class_count: int = 40
    samples_per_class: int = 100
    input_dim: int = 16
    cluster_sigma: float = 0.08
    overlap_pairs: int = 8
    overlap_delta: float = 0.15
    old_fraction: float = 0.3
    query_fraction: float = 0.2
    gallery_fraction: float = 0.2
    seed: int = 17

    def validate(self) -> "SynthConfig":
        if self.class_count < 1:
            raise ConfigError("class_count must be positive", "class_count")
        if self.input_dim < 2:
            raise ConfigError("input_dim must be at least 2", "input_dim")
        if self.cluster_sigma < 0 or not math.isfinite(self.cluster_sigma):
            raise ConfigError("cluster_sigma must be finite and non-negative", "cluster_sigma")
        if self.overlap_pairs < 0 or 2 * self.overlap_pairs > self.class_count:
            raise ConfigError("overlap_pairs must satisfy 0 <= 2*overlap_pairs <= class_count",
                              "overlap_pairs")
        if not 0 <= self.overlap_delta <= 2:
            raise ConfigError("overlap_delta must lie in [0, 2]", "overlap_delta")
        if not 0 < self.old_fraction <= 1:
            raise ConfigError("old_fraction must lie in (0, 1]", "old_fraction")
        if not 0 < self.query_fraction < 1:
            raise ConfigError("query_fraction must lie in (0, 1)", "query_fraction")
        if not 0 < self.gallery_fraction < 1 or self.query_fraction + self.gallery_fraction >= 1:
            raise ConfigError("gallery_fraction must be positive and leave training samples",
                              "gallery_fraction")
        n_q, n_g, n_t = self.per_class_counts()
        if min(n_q, n_g, n_t) < 1:
            raise ConfigError("samples_per_class too small for the query/gallery split",
                              "samples_per_class")
        return self

    def per_class_counts(self):
        n_q = int(round(self.query_fraction * self.samples_per_class))
        n_g = int(round(self.gallery_fraction * self.samples_per_class))
        return n_q, n_g, self.samples_per_class - n_q - n_g


@dataclass(frozen=True)
class DatasetSplit:
    old_train_x: np.ndarray
    old_train_y: np.ndarray
    new_train_x: np.ndarray
    new_train_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    gallery_x: np.ndarray
    gallery_y: np.ndarray
    class_count: int
    old_classes: np.ndarray
    new_classes: np.ndarray
    overlap: tuple = ()

    def summary(self) -> dict:
        return {"class_count": self.class_count,
                "old_classes": int(self.old_classes.size),
                "new_classes": int(self.new_classes.size),
                "old_train": int(self.old_train_y.size),
                "new_train": int(self.new_train_y.size),
                "query": int(self.query_y.size),
                "gallery": int(self.gallery_y.size)}


@dataclass(frozen=True)
class _Pool:
    means: np.ndarray
    train_x: np.ndarray
    train_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    gallery_x: np.ndarray
    gallery_y: np.ndarray
    class_order: np.ndarray
    overlap: tuple


def _place_close(anchor: np.ndarray, delta: float, rng: SeededRng) -> np.ndarray:
    """Unit vector at chordal distance ``delta`` from ``anchor``."""
    t = rng.normal(anchor.shape)
    t -= np.dot(t, anchor) * anchor
    t /= np.linalg.norm(t)
    angle = 2.0 * math.asin(delta / 2.0)
    return math.cos(angle) * anchor + math.sin(angle) * t


def class_means(cfg: SynthConfig):
    rng = SeededRng(cfg.seed).child("means")
    means = rng.normal((cfg.class_count, cfg.input_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    pairs = []
    for k in range(cfg.overlap_pairs):
        a, b = 2 * k, 2 * k + 1
        means[b] = means[a].copy() if cfg.overlap_delta == 0 else _place_close(means[a], cfg.overlap_delta, rng)
        pairs.append((a, b))
    return means, tuple(pairs)


def _pool(cfg: SynthConfig) -> _Pool:
    cfg.validate()
    means, pairs = class_means(cfg)
    n_q, n_g, n_t = cfg.per_class_counts()
    root = SeededRng(cfg.seed)
    tx, ty, qx, qy, gx, gy = [], [], [], [], [], []
    for c in range(cfg.class_count):
        crng = root.child("class", c)
        pts = means[c] + cfg.cluster_sigma * crng.normal((cfg.samples_per_class, cfg.input_dim))
        qx.append(pts[:n_q])
        gx.append(pts[n_q:n_q + n_g])
        tx.append(pts[n_q + n_g:])
        qy.append(np.full(n_q, c))
        gy.append(np.full(n_g, c))
        ty.append(np.full(n_t, c))
    order = root.child("class-order").permutation(cfg.class_count)
    cat = np.concatenate
    return _Pool(means, cat(tx), cat(ty), cat(qx), cat(qy), cat(gx), cat(gy), order, pairs)


def _subset(pool: _Pool, n_classes: int):
    classes = np.sort(pool.class_order[:n_classes])
    mask = np.isin(pool.train_y, classes)
    return classes, pool.train_x[mask], pool.train_y[mask]


def _split(pool: _Pool, cfg: SynthConfig, n_old: int, n_new: int) -> DatasetSplit:
    old_c, old_x, old_y = _subset(pool, n_old)
    new_c, new_x, new_y = _subset(pool, n_new)
    return DatasetSplit(old_x, old_y, new_x, new_y, pool.query_x, pool.query_y,
                        pool.gallery_x, pool.gallery_y, cfg.class_count, old_c, new_c, pool.overlap)


def class_count_for(fraction: float, c: int) -> int:
    # guard against float noise such as 0.3 * 40 = 12.000000000000002
    return max(1, min(c, math.ceil(round(fraction * c, 9))))


def generate(cfg: SynthConfig) -> DatasetSplit:
    """Old split = first ceil(old_fraction * C) classes of a seeded class shuffle."""
    pool = _pool(cfg)
    n_old = class_count_for(cfg.old_fraction, cfg.class_count)
    return _split(pool, cfg, n_old, cfg.class_count)


def sequential_splits(cfg: SynthConfig, fractions) -> list:
    """Nested class subsets over one sample pool.

    Split ``i`` trains on the first ``ceil(f_i * C)`` shuffled classes and
    treats split ``i-1``'s classes as its old set.  The first split keeps the
    configured old fraction (capped at ``f_0``).
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ConfigError("fractions must be strictly increasing", "fractions")
    if fractions[0] <= 0 or abs(fractions[-1] - 1.0) > 1e-12:
        raise ConfigError("fractions must be positive and end at 1.0", "fractions")
    pool = _pool(cfg)
    c = cfg.class_count
    counts = [class_count_for(f, c) for f in fractions]
    out = []
    for i, n_new in enumerate(counts):
        n_old = counts[i - 1] if i else min(class_count_for(cfg.old_fraction, c), n_new)
        out.append(_split(pool, cfg, n_old, n_new))
    return out


def with_seed(cfg: SynthConfig, seed: int) -> SynthConfig:
    return replace(cfg, seed=seed)
