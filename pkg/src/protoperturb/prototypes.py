"""Class prototypes and K-nearest-neighbor queries among them."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core_math import EPS_NORM, l2_normalize_rows
from .errors import BadK, EmptyClass, ZeroVector


class SpaceTag(str, enum.Enum):
    OLD = "old"
    NEW = "new"
    PSEUDO_OLD = "pseudo_old"


@dataclass(frozen=True)
class EmbeddingMatrix:
    rows: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if rows.ndim != 2 or labels.shape != (rows.shape[0],):
            raise ValueError("rows must be N x D with one label per row")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        if not np.all(np.isfinite(rows)):
            raise ValueError("rows must be finite")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class PrototypeSet:
    protos: np.ndarray
    tag: SpaceTag

    def __post_init__(self):
        p = np.asarray(self.protos, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError("protos must be C x D")
        p.setflags(write=False)
        object.__setattr__(self, "protos", p)
        object.__setattr__(self, "tag", SpaceTag(self.tag))

    @property
    def class_count(self) -> int:
        return self.protos.shape[0]

    @property
    def dim(self) -> int:
        return self.protos.shape[1]

    def unit(self) -> np.ndarray:
        """Row-normalized copy (pseudo-old rows are generally not unit norm)."""
        return l2_normalize_rows(self.protos)


@dataclass(frozen=True)
class NeighborList:
    class_ids: np.ndarray
    sims: np.ndarray

    def __len__(self):
        return len(self.class_ids)


def compute_prototypes(data: EmbeddingMatrix, tag=SpaceTag.OLD) -> PrototypeSet:
    """Normalized mean of the normalized rows of every class."""
    units = l2_normalize_rows(data.rows)
    c = data.class_count
    counts = np.bincount(data.labels, minlength=c)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyClass(int(empty[0]))
    protos = np.empty((c, units.shape[1]))
    order = np.argsort(data.labels, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    for k in range(c):
        members = units[order[bounds[k]:bounds[k + 1]]]
        # sort members so the sum is independent of row order
        members = members[np.lexsort(members.T[::-1])]
        protos[k] = members.sum(axis=0) / counts[k]
    norms = np.linalg.norm(protos, axis=1)
    bad = np.flatnonzero(norms < EPS_NORM)
    if bad.size:
        raise ZeroVector(f"class {bad[0]} mean has norm below 1e-12", index=int(bad[0]))
    return PrototypeSet(protos / norms[:, None], tag)


def _select(sims: np.ndarray, exclude: int, k: int) -> NeighborList:
    ids = np.arange(sims.size)
    keep = ids != exclude
    ids, sims = ids[keep], sims[keep]
    order = np.lexsort((ids, -sims))[:k]
    ids, sims = ids[order], sims[order]
    pos = sims > 0
    return NeighborList(ids[pos], sims[pos])


def _check_k(k: int, c: int):
    if not 1 <= k <= c - 1:
        raise BadK(f"K={k} outside [1, {c - 1}]")


def knn(query_class: int, protos: PrototypeSet, k: int) -> NeighborList:
    """The ``k`` most cosine-similar other classes; non-positive similarities dropped."""
    _check_k(k, protos.class_count)
    u = protos.unit()
    return _select(u @ u[query_class], query_class, k)


def knn_cross(query, protos: PrototypeSet, exclude_class: int, k: int) -> NeighborList:
    """As :func:`knn` but for an arbitrary query vector against ``protos``."""
    _check_k(k, protos.class_count)
    q = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn < EPS_NORM:
        raise ZeroVector()
    return _select(protos.unit() @ (q / qn), exclude_class, k)
