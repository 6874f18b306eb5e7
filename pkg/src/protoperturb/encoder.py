"""Feed-forward encoder with a classifier head, manual backprop and SGD.

Also hosts the two training loops: cross-entropy-only training of an
independent model, and backward-compatible training of a new model against a
frozen old one with optional prototype perturbation.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import ndpp, odpp
from .core_math import EPS_NORM, SeededRng
from .errors import ConfigError, NumericalError
from .losses import LossConfig, bc_loss_batch, cross_entropy_batch
from .prototypes import EmbeddingMatrix, PrototypeSet, SpaceTag, compute_prototypes

LOGIT_MODES = ("cosine", "dot")


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden: tuple = (64,)
    embed_dim: int = 32
    logit_mode: str = "cosine"
    logit_tau: float = 0.07
    relu_output: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.embed_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("layer widths must be positive", "hidden")
        if len(self.hidden) > 2:
            raise ConfigError("at most two hidden layers are supported", "hidden")
        if self.logit_mode not in LOGIT_MODES:
            raise ConfigError(f"logit_mode must be one of {LOGIT_MODES}", "logit_mode")
        if not self.logit_tau > 0:
            raise ConfigError("logit_tau must be positive", "logit_tau")

    @property
    def widths(self) -> tuple:
        return (self.input_dim,) + self.hidden + (self.embed_dim,)


@dataclass
class EncoderParams:
    """Layer weights ``(in, out)``, biases, and an ``embed_dim x C`` classifier."""

    arch: Architecture
    weights: list
    biases: list
    classifier: np.ndarray
    class_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.class_ids is None:
            self.class_ids = np.arange(self.classifier.shape[1])
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)

    @property
    def embed_dim(self) -> int:
        return self.arch.embed_dim

    @property
    def class_count(self) -> int:
        return self.classifier.shape[1]

    def arrays(self) -> list:
        return [*self.weights, *self.biases, self.classifier]

    def with_arrays(self, arrays) -> "EncoderParams":
        n = len(self.weights)
        arrays = list(arrays)
        return EncoderParams(self.arch, arrays[:n], arrays[n:2 * n], arrays[2 * n], self.class_ids)

    def copy(self) -> "EncoderParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def zeros_like(self) -> "EncoderParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])


def init_params(arch: Architecture, class_count: int, rng: SeededRng, class_ids=None) -> EncoderParams:
    """Uniform fan-in scaled initialization."""
    widths = arch.widths
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    bound = np.sqrt(3.0 / arch.embed_dim)
    classifier = rng.uniform(-bound, bound, size=(arch.embed_dim, class_count))
    return EncoderParams(arch, weights, biases, classifier, class_ids)


@dataclass
class ForwardCache:
    inputs: list
    pre: list
    emb: np.ndarray
    emb_norm: np.ndarray | None = None
    unit_emb: np.ndarray | None = None
    cls_norm: np.ndarray | None = None
    unit_cls: np.ndarray | None = None


def forward(params: EncoderParams, x):
    """Embeddings (before normalization), classifier logits, and a backward cache.

    Accepts a single input vector or an ``N x input_dim`` batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    inputs, pre = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if (i < last or params.arch.relu_output) else z
    emb = h
    cache = ForwardCache(inputs, pre, emb)
    if params.arch.logit_mode == "cosine":
        en = np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), EPS_NORM)
        wn = np.maximum(np.linalg.norm(params.classifier, axis=0, keepdims=True), EPS_NORM)
        cache.emb_norm, cache.unit_emb = en, emb / en
        cache.cls_norm, cache.unit_cls = wn, params.classifier / wn
        logits = cache.unit_emb @ cache.unit_cls / params.arch.logit_tau
    else:
        logits = emb @ params.classifier
    if single:
        return emb[0], logits[0], cache
    return emb, logits, cache


def backward(params: EncoderParams, cache: ForwardCache, grad_embedding, grad_logits) -> EncoderParams:
    """Reverse-mode gradients for every parameter, returned in parameter layout."""
    g_emb = np.atleast_2d(np.asarray(grad_embedding, dtype=np.float64)).copy()
    g_log = np.atleast_2d(np.asarray(grad_logits, dtype=np.float64))
    if params.arch.logit_mode == "cosine":
        t = params.arch.logit_tau
        u, wn = cache.unit_emb, cache.unit_cls
        g_u = g_log @ wn.T / t
        g_wn = u.T @ g_log / t
        g_cls = (g_wn - wn * np.sum(wn * g_wn, axis=0, keepdims=True)) / cache.cls_norm
        g_emb += (g_u - u * np.sum(g_u * u, axis=1, keepdims=True)) / cache.emb_norm
    else:
        g_cls = cache.emb.T @ g_log
        g_emb += g_log @ params.classifier.T
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    g = g_emb
    for i in reversed(range(n)):
        if i < n - 1 or params.arch.relu_output:
            g = g * (cache.pre[i] > 0)
        gw[i] = cache.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T
    return EncoderParams(params.arch, gw, gb, g_cls, params.class_ids)


def embed(params: EncoderParams, x, chunk: int = 4096) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = [forward(params, x[s:s + chunk])[0] for s in range(0, x.shape[0], chunk)]
    return np.vstack(out) if out else np.zeros((0, params.embed_dim))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 0.1
    lr_drop: float = 0.1
    drop_epochs: tuple = (5, 10, 20)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "drop_epochs", tuple(int(e) for e in self.drop_epochs))
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative", "epochs")
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise ConfigError("lr must be non-negative", "lr")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)", "momentum")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative", "weight_decay")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive", "batch_size")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.drop_epochs if epoch >= e)
        return self.lr * self.lr_drop ** drops


def sgd_step(params: EncoderParams, grads: EncoderParams, velocity, lr: float, momentum: float,
             weight_decay: float):
    """Momentum SGD with coupled weight decay; returns ``(params, velocity)``.

    ``v <- momentum * v + grad + weight_decay * w`` then ``w <- w - lr * v``.
    """
    ws = params.arrays()
    if velocity is None:
        velocity = [np.zeros_like(w) for w in ws]
    new_v = [momentum * v + g + weight_decay * w for v, g, w in zip(velocity, grads.arrays(), ws)]
    new_w = [w - lr * v for w, v in zip(ws, new_v)]
    return params.with_arrays(new_w), new_v


class MethodKind(str, enum.Enum):
    BASELINE = "baseline"
    NDPP_OLD = "ndpp-old"
    NDPP = "ndpp"
    ODPP_OLD = "odpp-old"
    ODPP = "odpp"


@dataclass(frozen=True)
class BclMethod:
    kind: MethodKind = MethodKind.BASELINE
    ndpp: ndpp.NdppConfig = field(default_factory=ndpp.NdppConfig)
    odpp: odpp.OdppConfig = field(default_factory=odpp.OdppConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    @classmethod
    def named(cls, name: str, **kw) -> "BclMethod":
        kind = MethodKind(name.replace("_", "-"))
        m = cls(kind, **kw)
        joint = kind in (MethodKind.NDPP, MethodKind.ODPP)
        return replace(m, ndpp=replace(m.ndpp, use_joint=joint), odpp=replace(m.odpp, use_joint=joint))

    @property
    def joint(self) -> bool:
        return self.kind in (MethodKind.NDPP, MethodKind.ODPP)


def _relabel(labels, class_ids=None):
    labels = np.asarray(labels, dtype=np.int64)
    ids = np.unique(labels) if class_ids is None else np.asarray(class_ids, dtype=np.int64)
    local = np.searchsorted(ids, labels)
    if np.any(local >= ids.size) or np.any(ids[np.minimum(local, ids.size - 1)] != labels):
        raise ConfigError("labels outside the model's class set")
    return ids, local


def _check_finite(value: float, what: str):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what}")


def train_old(x, y, arch: Architecture, cfg: TrainConfig, log: list | None = None) -> EncoderParams:
    """Cross-entropy-only training (the old model, or an independently trained new one)."""
    x = np.asarray(x, dtype=np.float64)
    ids, labels = _relabel(y)
    rng = SeededRng(cfg.seed)
    params = init_params(arch, ids.size, rng.child("init"), ids)
    shuffle = rng.child("shuffle")
    velocity = None
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = shuffle.permutation(n)
        iter_loss = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            _, logits, cache = forward(params, x[idx])
            ce, g_log = cross_entropy_batch(logits, labels[idx])
            _check_finite(ce, "cross-entropy")
            grads = backward(params, cache, np.zeros((idx.size, arch.embed_dim)), g_log)
            params, velocity = sgd_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
            iter_loss.append(ce)
        if log is not None:
            log.append({"epoch": epoch, "lr": lr, "ce": float(np.mean(iter_loss)),
                        "loss": float(np.mean(iter_loss)), "iter_loss": iter_loss})
    return params


def old_prototypes(old_model: EncoderParams, x, labels_local, class_count: int) -> PrototypeSet:
    return compute_prototypes(EmbeddingMatrix(embed(old_model, x), labels_local, class_count), SpaceTag.OLD)


def train_bcl(x, y, old_model: EncoderParams, method: BclMethod, cfg: TrainConfig,
              arch: Architecture | None = None, log: list | None = None) -> EncoderParams:
    """Backward-compatible training of a new model against a frozen old model.

    Epoch 0 trains against the old-only perturbation (or none, for the
    baseline).  Joint variants then refresh new prototypes over the full
    training set at the top of every later epoch and re-derive the
    pseudo-old prototypes before any mini-batch of that epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    arch = arch or old_model.arch
    if arch.embed_dim != old_model.embed_dim:
        raise ConfigError(f"embed_dim {arch.embed_dim} != old model's {old_model.embed_dim}", "embed_dim")
    ids, labels = _relabel(y)
    c = ids.size
    rng = SeededRng(cfg.seed)
    params = init_params(arch, c, rng.child("init"), ids)
    shuffle = rng.child("shuffle")
    ptb_rng = rng.child("perturbation")
    loss_cfg = method.loss

    old = old_prototypes(old_model, x, labels, c)
    n_img = x.shape[0]
    ocfg = method.odpp if method.odpp.pairs_per_epoch else replace(method.odpp, pairs_per_epoch=n_img)

    kind = method.kind
    nd_state, learned = None, None
    if kind in (MethodKind.NDPP, MethodKind.NDPP_OLD):
        nd_state = ndpp.init_state(old, method.ndpp)
        pseudo = nd_state.pseudo_old
    elif kind in (MethodKind.ODPP, MethodKind.ODPP_OLD):
        learned = odpp.optimize(old, None, odpp.old_only(ocfg), ptb_rng.child("init"))
        pseudo = odpp.pseudo_old_from_learned(old, learned.r_l)
    else:
        pseudo = PrototypeSet(old.protos, SpaceTag.PSEUDO_OLD)

    velocity = None
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        ptb_loss = None
        if method.joint and epoch > 0:
            new = compute_prototypes(EmbeddingMatrix(embed(params, x), labels, c), SpaceTag.NEW)
            if kind is MethodKind.NDPP:
                nd_state = ndpp.epoch_update(nd_state, old, new, method.ndpp)
                pseudo = nd_state.pseudo_old
            else:
                learned = odpp.optimize(old, new, ocfg, ptb_rng.child("epoch", epoch),
                                        init=learned.r_l)
                ptb_loss = learned.final_loss
                pseudo = odpp.pseudo_old_from_learned(old, learned.r_l)
        lr = cfg.lr_at(epoch)
        order = shuffle.permutation(n)
        iter_loss, ce_sum, bc_sum = [], 0.0, 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            emb, logits, cache = forward(params, x[idx])
            ce, g_log = cross_entropy_batch(logits, labels[idx])
            bc, g_emb = bc_loss_batch(emb, labels[idx], pseudo, old, loss_cfg)
            total = ce + loss_cfg.lam * bc
            _check_finite(total, "training loss")
            grads = backward(params, cache, loss_cfg.lam * g_emb, g_log)
            params, velocity = sgd_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
            iter_loss.append(total)
            ce_sum += ce
            bc_sum += bc
        if log is not None:
            shift = np.linalg.norm(pseudo.protos - old.protos, axis=1)
            rec = {"epoch": epoch, "lr": lr, "ce": ce_sum / len(iter_loss),
                   "bc": bc_sum / len(iter_loss), "loss": float(np.mean(iter_loss)),
                   "ptb_norm_mean": float(shift.mean()), "ptb_norm_max": float(shift.max()),
                   "iter_loss": iter_loss}
            if ptb_loss is not None:
                rec["ptb_loss"] = ptb_loss
            log.append(rec)
    return params
