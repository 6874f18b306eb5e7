"""Neighbor-driven prototype perturbation.

Each old prototype is pushed away from its nearest neighbours, weighted by
cosine similarity.  During training a second, per-epoch term pushes the
pseudo-old prototype away from nearby prototypes of the model being trained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .prototypes import NeighborList, PrototypeSet, SpaceTag, knn, knn_cross


@dataclass(frozen=True)
class NdppConfig:
    alpha1: float = 0.01
    alpha2: float = 0.01
    K: int = 100
    use_joint: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.alpha1) and np.isfinite(self.alpha2)):
            raise ConfigError("alpha1/alpha2 must be finite", "alpha1")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ConfigError("alpha1/alpha2 must be non-negative", "alpha1")
        if int(self.K) < 1:
            raise ConfigError("K must be positive", "K")

    def effective_k(self, class_count: int) -> int:
        """K capped at C - 1 so small class sets (sequential chains) remain usable."""
        return min(int(self.K), class_count - 1)


@dataclass(frozen=True)
class PerturbationState:
    r_old: np.ndarray
    r_epoch: np.ndarray
    pseudo_old: PrototypeSet


def _repulsion(base: np.ndarray, neighbors: NeighborList, targets: np.ndarray) -> np.ndarray:
    if len(neighbors) == 0:
        return np.zeros_like(base)
    s = neighbors.sims
    diffs = base[None, :] - targets[neighbors.class_ids]
    return (s[:, None] * diffs).sum(axis=0) / s.sum()


def perturbation_from_old(c: int, old: PrototypeSet, k: int) -> np.ndarray:
    """Similarity-weighted mean of ``p_c - p_c'`` over the old neighbours of ``c``."""
    return _repulsion(old.protos[c], knn(c, old, k), old.protos)


def perturbation_from_new(pseudo_c, c: int, new: PrototypeSet, k: int) -> np.ndarray:
    """Repulsion of a pseudo-old prototype from the other classes' new prototypes."""
    pseudo_c = np.asarray(pseudo_c, dtype=np.float64)
    return _repulsion(pseudo_c, knn_cross(pseudo_c, new, c, k), new.protos)


def _pseudo(old: PrototypeSet, cfg: NdppConfig, r_old, r_epoch) -> PrototypeSet:
    return PrototypeSet(old.protos + cfg.alpha1 * r_old + cfg.alpha2 * r_epoch, SpaceTag.PSEUDO_OLD)


def init_state(old: PrototypeSet, cfg: NdppConfig) -> PerturbationState:
    c, d = old.protos.shape
    k = cfg.effective_k(c)
    r_old = np.zeros((c, d))
    if k >= 1:
        for i in range(c):
            r_old[i] = perturbation_from_old(i, old, k)
    r_epoch = np.zeros((c, d))
    pseudo = old.protos + cfg.alpha1 * r_old
    return PerturbationState(r_old, r_epoch, PrototypeSet(pseudo, SpaceTag.PSEUDO_OLD))


def epoch_update(state: PerturbationState, old: PrototypeSet, new: PrototypeSet,
                 cfg: NdppConfig) -> PerturbationState:
    """Recompute the secondary perturbation against fresh new prototypes.

    The secondary term replaces, rather than accumulates onto, the previous
    epoch's term.  Its base is the first-order pseudo-old prototype.
    """
    if not cfg.use_joint:
        return state
    if new.protos.shape != old.protos.shape:
        raise ConfigError("old and new prototype sets must have the same shape")
    c, d = old.protos.shape
    k = cfg.effective_k(c)
    base = old.protos + cfg.alpha1 * state.r_old
    r_epoch = np.zeros((c, d))
    if k >= 1:
        for i in range(c):
            r_epoch[i] = perturbation_from_new(base[i], i, new, k)
    return PerturbationState(state.r_old, r_epoch, _pseudo(old, cfg, state.r_old, r_epoch))
