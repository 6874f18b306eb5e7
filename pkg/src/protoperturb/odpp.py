"""Optimization-driven prototype perturbation.

A learnable offset per old prototype is fitted by mini-batch SGD on hinge
penalties over prototype pairs whose inner product exceeds a threshold:
old/old pairs always, old/new pairs when the joint objective is used.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core_math import SeededRng
from .errors import ConfigError
from .prototypes import PrototypeSet, SpaceTag

EXACT_LOSS_MAX_CLASSES = 512
MC_LOSS_PAIRS = 1_000_000
MC_LOSS_SEED = 0x0DD9


@dataclass(frozen=True)
class OdppConfig:
    theta_old: float = 0.6
    theta_new: float = 0.6
    gamma: float = 1.0
    inner_epochs: int = 50
    inner_lr: float = 0.001
    batch_size: int = 1024
    pairs_per_epoch: int | None = None  # None: number of training samples
    use_joint: bool = True
    warm_start: bool = False
    full_batch: bool = False

    def __post_init__(self):
        for name in ("theta_old", "theta_new"):
            v = getattr(self, name)
            if not (np.isfinite(v) and -1.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [-1, 1]", name)
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ConfigError("gamma must be finite and non-negative", "gamma")
        if self.inner_epochs < 1:
            raise ConfigError("inner_epochs must be positive", "inner_epochs")
        if not (np.isfinite(self.inner_lr) and self.inner_lr > 0):
            raise ConfigError("inner_lr must be positive", "inner_lr")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", "batch_size")
        if self.pairs_per_epoch is not None and self.pairs_per_epoch < 1:
            raise ConfigError("pairs_per_epoch must be positive", "pairs_per_epoch")


@dataclass(frozen=True)
class LearnedPerturbations:
    r_l: np.ndarray
    final_loss: float


def hinge_old_pair(p_c, r_c, p_c2, r_c2, theta_old: float) -> float:
    return max(0.0, float(np.dot(np.add(p_c, r_c), np.add(p_c2, r_c2))) - theta_old)


def hinge_new_pair(p_c, r_c, p_n, theta_new: float) -> float:
    return max(0.0, float(np.dot(np.add(p_c, r_c), p_n)) - theta_new)


def _off_diagonal(m: np.ndarray) -> np.ndarray:
    return m[~np.eye(m.shape[0], dtype=bool)]


def objective(old: PrototypeSet, r_l, cfg: OdppConfig, new: PrototypeSet | None = None) -> float:
    """Exact hinge objective summed over all ordered pairs ``c != c'``."""
    p = old.protos + r_l
    total = float(np.maximum(0.0, _off_diagonal(p @ p.T) - cfg.theta_old).sum())
    if new is not None:
        cross = p @ new.protos.T
        total += cfg.gamma * float(np.maximum(0.0, _off_diagonal(cross) - cfg.theta_new).sum())
    return total


def objective_mc(old: PrototypeSet, r_l, cfg: OdppConfig, new: PrototypeSet | None = None,
                 pairs: int = MC_LOSS_PAIRS, seed: int = MC_LOSS_SEED) -> float:
    """Monte-Carlo estimate of :func:`objective` from a fixed pair sample."""
    rng = SeededRng(seed)
    c = old.class_count
    p = old.protos + r_l
    scale = c * (c - 1) / pairs
    a, b = sample_pairs(rng.child("old"), c, pairs)
    total = np.maximum(0.0, np.einsum("ij,ij->i", p[a], p[b]) - cfg.theta_old).sum()
    if new is not None:
        a, b = sample_pairs(rng.child("new"), c, pairs)
        dots = np.einsum("ij,ij->i", p[a], new.protos[b])
        total += cfg.gamma * np.maximum(0.0, dots - cfg.theta_new).sum()
    return float(total * scale)


def sample_pairs(rng: SeededRng, c: int, n: int):
    """``n`` ordered pairs, uniform over ``c != c'``, with replacement."""
    a = rng.integers(0, c, size=n)
    b = rng.integers(0, c - 1, size=n)
    b = b + (b >= a)
    return a, b


def all_pairs(c: int):
    a, b = np.nonzero(~np.eye(c, dtype=bool))
    return a, b


def grad_r(old_pairs, new_pairs, old: PrototypeSet, new: PrototypeSet | None, r_l,
           cfg: OdppConfig) -> np.ndarray:
    """Gradient of the sampled hinge terms w.r.t. the perturbation matrix.

    ``old_pairs``/``new_pairs`` are ``(a, b)`` index arrays; terms are summed,
    not averaged.  The hinge subgradient at the kink is zero.
    """
    p = old.protos + r_l
    g = np.zeros_like(p)
    a, b = old_pairs
    if len(a):
        active = np.einsum("ij,ij->i", p[a], p[b]) - cfg.theta_old > 0
        a, b = a[active], b[active]
        np.add.at(g, a, p[b])
        np.add.at(g, b, p[a])
    if new is not None and new_pairs is not None and cfg.gamma != 0:
        a, b = new_pairs
        if len(a):
            active = np.einsum("ij,ij->i", p[a], new.protos[b]) - cfg.theta_new > 0
            np.add.at(g, a[active], cfg.gamma * new.protos[b[active]])
    return g


def optimize(old: PrototypeSet, new: PrototypeSet | None, cfg: OdppConfig, rng: SeededRng,
             init=None) -> LearnedPerturbations:
    """Fit per-class perturbations by SGD with a fixed learning rate.

    Each step follows the batch's summed hinge gradient scaled by
    ``C(C-1)/batch``, an unbiased estimate of the full-objective gradient, so
    ``full_batch=True`` and sampled runs share the same learning-rate scale.

    Old-term and new-term pairs are drawn from separate child streams so the
    old-term sample sequence does not depend on whether the joint objective
    is active.  ``init`` warm-starts the optimization when ``cfg.warm_start``.
    """
    if cfg.use_joint and new is None:
        raise ConfigError("joint objective requires new prototypes", "use_joint")
    if not cfg.use_joint:
        new = None
    c = old.class_count
    if new is not None and new.protos.shape != old.protos.shape:
        raise ConfigError("old and new prototype sets must have the same shape")
    r = np.zeros_like(old.protos)
    if cfg.warm_start and init is not None:
        r = np.array(init, dtype=np.float64, copy=True)
    if c >= 2:
        if cfg.full_batch:
            pairs = all_pairs(c)
            for _ in range(cfg.inner_epochs):
                r = r - cfg.inner_lr * grad_r(pairs, pairs, old, new, r, cfg)
        else:
            n_pairs = cfg.pairs_per_epoch or c * (c - 1)
            rng_old, rng_new = rng.child("old-pairs"), rng.child("new-pairs")
            for _ in range(cfg.inner_epochs):
                oa, ob = sample_pairs(rng_old, c, n_pairs)
                na, nb = sample_pairs(rng_new, c, n_pairs) if new is not None else (oa, ob)
                for s in range(0, n_pairs, cfg.batch_size):
                    sl = slice(s, s + cfg.batch_size)
                    new_batch = (na[sl], nb[sl]) if new is not None else None
                    # rescale the batch sum to an unbiased estimate of the full-sum gradient
                    scale = c * (c - 1) / oa[sl].size
                    g = grad_r((oa[sl], ob[sl]), new_batch, old, new, r, cfg)
                    r = r - (cfg.inner_lr * scale) * g
    if c <= EXACT_LOSS_MAX_CLASSES:
        loss = objective(old, r, cfg, new)
    else:
        loss = objective_mc(old, r, cfg, new)
    return LearnedPerturbations(r, loss)


def old_only(cfg: OdppConfig) -> OdppConfig:
    return replace(cfg, use_joint=False)


def pseudo_old_from_learned(old: PrototypeSet, r_l) -> PrototypeSet:
    r_l = np.asarray(r_l, dtype=np.float64)
    if r_l.shape != old.protos.shape:
        raise ConfigError("perturbation shape does not match prototypes")
    return PrototypeSet(old.protos + r_l, SpaceTag.PSEUDO_OLD)
