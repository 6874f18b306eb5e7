"""Prototype contrastive loss, softmax cross-entropy and the combined objective.

Batched versions return the batch-mean loss and per-row gradients already
divided by the batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import EPS_NORM, l2_normalize_rows
from .errors import ConfigError, ZeroVector
from .prototypes import PrototypeSet


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    lam: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ConfigError("tau must be positive", "tau")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError("lambda must be non-negative", "lambda")


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))


def cross_entropy_batch(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    n = z.shape[0]
    lsm = log_softmax(z)
    rows = np.arange(n)
    loss = -lsm[rows, labels].mean()
    g = np.exp(lsm)
    g[rows, labels] -= 1.0
    return float(loss), g / n


def cross_entropy(logits, label: int):
    if not 0 <= label < np.shape(logits)[-1]:
        raise ValueError("label out of range")
    loss, g = cross_entropy_batch(logits, [label])
    return loss, g[0]


def bc_loss_batch(emb, labels, pseudo_old: PrototypeSet, old: PrototypeSet, cfg: LossConfig):
    """Contrastive loss with the pseudo-old prototype as positive and real old negatives.

    Positive similarity is ``cos(e, p_hat[y])``; the negatives are
    ``cos(e, p[c'])`` for every ``c' != y``.  Returns the batch-mean loss and
    its gradient w.r.t. the unnormalized embeddings.
    """
    e = np.atleast_2d(np.asarray(emb, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    n = e.shape[0]
    en = np.linalg.norm(e, axis=1, keepdims=True)
    bad = np.flatnonzero(en[:, 0] < EPS_NORM)
    if bad.size:
        raise ZeroVector(f"embedding row {bad[0]} is degenerate", index=int(bad[0]))
    u = e / en
    q = old.unit()
    q_hat = pseudo_old.unit()[labels]
    rows = np.arange(n)

    s = u @ q.T
    s[rows, labels] = np.einsum("ij,ij->i", u, q_hat)
    lsm = log_softmax(s / cfg.tau)
    loss = -lsm[rows, labels].mean()

    a = np.exp(lsm)
    a[rows, labels] -= 1.0
    a /= cfg.tau * n
    g_u = a @ q + a[rows, labels][:, None] * (q_hat - q[labels])
    # project through the normalization Jacobian (I - u u^T) / |e|
    g_e = (g_u - u * np.einsum("ij,ij->i", g_u, u)[:, None]) / en
    return float(loss), g_e


def bc_loss(e, pos_class: int, pseudo_old: PrototypeSet, old: PrototypeSet, cfg: LossConfig):
    loss, g = bc_loss_batch(np.asarray(e)[None, :], [pos_class], pseudo_old, old, cfg)
    return loss, g[0]


def prototype_contrastive(e, pos_class: int, old: PrototypeSet, cfg: LossConfig) -> float:
    """Unperturbed point-to-set contrastive loss over all class prototypes."""
    u = l2_normalize_rows(np.asarray(e, dtype=np.float64)[None, :])[0]
    z = old.unit() @ u / cfg.tau
    return float(-log_softmax(z)[pos_class])


def total_loss(ce: float, bc: float, cfg: LossConfig) -> float:
    return ce + cfg.lam * bc
