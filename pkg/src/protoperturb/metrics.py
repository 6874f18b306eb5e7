"""Cosine-ranked retrieval metrics and backward-compatibility reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core_math import EPS_NORM, l2_normalize_rows
from .encoder import embed
from .errors import ConfigError, NoRelevant, ZeroVector


def rank_gallery(query, gallery) -> np.ndarray:
    """Gallery indices by descending cosine similarity, ties by ascending index."""
    q = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn < EPS_NORM:
        raise ZeroVector("query embedding is degenerate")
    rows = gallery.rows if hasattr(gallery, "rows") else np.asarray(gallery, dtype=np.float64)
    sims = l2_normalize_rows(rows) @ (q / qn)
    return np.argsort(-sims, kind="stable")


def average_precision(ranked_labels, query_label, relevant_count: int) -> float:
    if relevant_count < 1:
        raise NoRelevant("query has no relevant gallery items")
    hits = np.asarray(ranked_labels) == query_label
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, ranks.size + 1) / ranks
    return float(precision.sum() / relevant_count)


def retrieval_scores(query_emb, query_labels, gallery_emb, gallery_labels,
                     exclude_self: bool = False):
    """Mean AP and Recall@1 of every query against a gallery.

    ``exclude_self`` drops gallery row ``i`` from query ``i``'s ranking, for
    configurations where queries and gallery are the same set.
    """
    q = l2_normalize_rows(query_emb)
    g = l2_normalize_rows(gallery_emb)
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    sims = q @ g.T
    aps = np.empty(q.shape[0])
    top1 = np.empty(q.shape[0], dtype=bool)
    for i in range(q.shape[0]):
        order = np.argsort(-sims[i], kind="stable")
        if exclude_self:
            order = order[order != i]
        ranked = gallery_labels[order]
        rel = int(np.count_nonzero(gallery_labels[order] == query_labels[i]))
        aps[i] = average_precision(ranked, query_labels[i], rel)
        top1[i] = ranked[0] == query_labels[i]
    return float(aps.mean()), float(top1.mean())


def evaluate_pair(query_model, gallery_model, split):
    """``(mAP, Recall@1)`` with queries embedded by one model and gallery by another."""
    if query_model.embed_dim != gallery_model.embed_dim:
        raise ConfigError("query and gallery models have different embed_dim", "embed_dim")
    qe = embed(query_model, split.query_x)
    ge = embed(gallery_model, split.gallery_x)
    return retrieval_scores(qe, split.query_y, ge, split.gallery_y)


def p_metrics(map_self_old: float, map_self_new: float, map_cross: float):
    """Relative-gain surrogates: ``(p_up, p_comp, p_1)``.

    ``p_1`` is the harmonic mean of the clamped gains and is 0 when either
    gain is non-positive.
    """
    p_up = (map_self_new - map_self_old) / map_self_old
    p_comp = (map_cross - map_self_old) / map_self_old
    a, b = max(0.0, p_up), max(0.0, p_comp)
    p_1 = 0.0 if a == 0.0 or b == 0.0 else 2.0 * a * b / (a + b)
    return p_up, p_comp, p_1


@dataclass(frozen=True)
class MetricsReport:
    map_self_old: float
    map_self_new: float
    map_cross: float
    recall1_self_old: float
    recall1_self_new: float
    recall1_cross: float
    compatible: bool
    p_up: float
    p_comp: float
    p_1: float

    @classmethod
    def from_scores(cls, self_old, self_new, cross) -> "MetricsReport":
        p_up, p_comp, p_1 = p_metrics(self_old[0], self_new[0], cross[0])
        return cls(self_old[0], self_new[0], cross[0], self_old[1], self_new[1], cross[1],
                   bool(cross[0] > self_old[0]), p_up, p_comp, p_1)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_kv(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            lines.append(f"{k}={str(v).lower() if isinstance(v, bool) else repr(float(v))}")
        return "\n".join(lines) + "\n"

    def to_table(self, title: str = "") -> str:
        head = ("self(old,old)", "self(new,new)", "cross(new,old)", "R@1 new", "R@1 cross",
                "P_up", "P_comp", "P_1", "compatible")
        vals = (f"{100 * self.map_self_old:.2f}", f"{100 * self.map_self_new:.2f}",
                f"{100 * self.map_cross:.2f}", f"{100 * self.recall1_self_new:.2f}",
                f"{100 * self.recall1_cross:.2f}", f"{100 * self.p_up:.2f}",
                f"{100 * self.p_comp:.2f}", f"{100 * self.p_1:.2f}",
                "yes" if self.compatible else "no")
        widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
        row = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))  # noqa: E731
        out = [title] if title else []
        out += [row(head), row(["-" * w for w in widths]), row(vals)]
        return "\n".join(out) + "\n"


def evaluate_models(old_model, new_model, split) -> MetricsReport:
    return MetricsReport.from_scores(evaluate_pair(old_model, old_model, split),
                                     evaluate_pair(new_model, new_model, split),
                                     evaluate_pair(new_model, old_model, split))
