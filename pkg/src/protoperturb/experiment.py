"""End-to-end orchestration shared by the CLI and the acceptance tests."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import store
from .config import ExperimentConfig
from .core_math import l2_normalize_rows, pca_project_2d
from .encoder import BclMethod, EncoderParams, embed, train_bcl, train_old
from .errors import ConfigError
from .metrics import MetricsReport, evaluate_models
from .prototypes import EmbeddingMatrix, compute_prototypes
from .synth import DatasetSplit, generate, sequential_splits

SPLIT_FILES = ("old_train", "new_train", "query", "gallery")


def save_split(directory, split: DatasetSplit) -> list:
    directory = Path(directory)
    meta = {"class_count": split.class_count,
            "old_classes": ",".join(map(str, split.old_classes)),
            "new_classes": ",".join(map(str, split.new_classes)),
            "overlap": ";".join(f"{a},{b}" for a, b in split.overlap)}
    paths = []
    for name in SPLIT_FILES:
        path = directory / f"{name}.bclg"
        store.save_embeddings(path, getattr(split, f"{name}_x"), getattr(split, f"{name}_y"),
                              {"split": name, **meta})
        paths.append(path)
    return paths


def load_split(directory) -> DatasetSplit:
    directory = Path(directory)
    arrays, meta = {}, {}
    for name in SPLIT_FILES:
        path = directory / f"{name}.bclg"
        if not path.exists():
            raise ConfigError(f"dataset file {path} not found; run gen-data first", "data")
        x, y, meta = store.load_embeddings(path)
        arrays[f"{name}_x"], arrays[f"{name}_y"] = x, y
    ints = lambda s: np.array([int(v) for v in s.split(",") if v], dtype=np.int64)  # noqa: E731
    overlap = tuple(tuple(int(v) for v in p.split(",")) for p in meta.get("overlap", "").split(";") if p)
    return DatasetSplit(**arrays, class_count=int(meta["class_count"]),
                        old_classes=ints(meta["old_classes"]), new_classes=ints(meta["new_classes"]),
                        overlap=overlap)


def train_old_model(cfg: ExperimentConfig, split: DatasetSplit, log=None, train_cfg=None) -> EncoderParams:
    arch = cfg.old_train.arch(split.new_train_x.shape[1])
    return train_old(split.old_train_x, split.old_train_y, arch, train_cfg or cfg.old_stage(), log)


def train_independent(cfg: ExperimentConfig, split: DatasetSplit, log=None) -> EncoderParams:
    arch = cfg.new_train.arch(split.new_train_x.shape[1])
    return train_old(split.new_train_x, split.new_train_y, arch, cfg.new_stage(), log)


def train_new_model(cfg: ExperimentConfig, split: DatasetSplit, old: EncoderParams,
                    method: BclMethod | None = None, log=None, train_cfg=None) -> EncoderParams:
    arch = cfg.new_train.arch(split.new_train_x.shape[1])
    return train_bcl(split.new_train_x, split.new_train_y, old, method or cfg.method,
                     train_cfg or cfg.new_stage(), arch, log)


def pca_rows(old: EncoderParams, new: EncoderParams, split: DatasetSplit) -> list:
    """2-D PCA of new gallery embeddings with new and old gallery prototypes."""
    c = split.class_count
    ge_new = embed(new, split.gallery_x)
    ge_old = embed(old, split.gallery_x)
    p_new = compute_prototypes(EmbeddingMatrix(ge_new, split.gallery_y, c)).protos
    p_old = compute_prototypes(EmbeddingMatrix(ge_old, split.gallery_y, c)).protos
    pts = np.vstack([l2_normalize_rows(ge_new), p_new, p_old])
    xy = pca_project_2d(pts)
    kinds = (["embedding"] * len(ge_new) + ["new_prototype"] * c + ["old_prototype"] * c)
    labels = list(split.gallery_y) + list(range(c)) * 2
    return [(k, int(lab), float(x), float(y)) for k, lab, (x, y) in zip(kinds, labels, xy)]


def pca_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "class", "x", "y"])
    for k, lab, x, y in rows:
        w.writerow([k, lab, repr(x), repr(y)])
    return buf.getvalue()


@dataclass
class MethodRun:
    name: str
    model: EncoderParams
    report: MetricsReport
    log: list


def run_methods(cfg: ExperimentConfig, methods, split: DatasetSplit | None = None):
    """Generate data, train one old model and one new model per method, evaluate each."""
    split = split or generate(cfg.data)
    old = train_old_model(cfg, split)
    runs = {}
    for name in methods:
        log = []
        new = train_new_model(cfg, split, old, cfg.with_method(name).method, log)
        runs[name] = MethodRun(name, new, evaluate_models(old, new, split), log)
    return split, old, runs


def sweep(cfg: ExperimentConfig, param: str, values, split: DatasetSplit | None = None) -> list:
    """One train+eval per value with the same seeds; the old model is shared."""
    split = split or generate(cfg.data)
    old = train_old_model(cfg, split)
    rows = []
    for v in values:
        c = cfg.with_param(param, v)
        new = train_new_model(c, split, old, c.method)
        rep = evaluate_models(old, new, split)
        rows.append({"param": param, "value": v, "method": c.method.kind.value, **rep.to_dict()})
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else v)
                    for k, v in r.items()})
    return buf.getvalue()


@dataclass
class ChainLink:
    index: int
    fraction: float
    classes: int
    report: MetricsReport | None


def restrict_eval(split: DatasetSplit, classes=None) -> DatasetSplit:
    """Query/gallery limited to ``classes`` (default: the split's training classes)."""
    classes = split.new_classes if classes is None else classes
    qm = np.isin(split.query_y, classes)
    gm = np.isin(split.gallery_y, classes)
    return replace(split, query_x=split.query_x[qm], query_y=split.query_y[qm],
                   gallery_x=split.gallery_x[gm], gallery_y=split.gallery_y[gm])


def sequential(cfg: ExperimentConfig, fractions, method: BclMethod | None = None):
    """Train phi_1 independently, then each phi_{i+1} compatible with phi_i.

    phi_1 uses the old-model stage settings, later links the new-model ones;
    seeds come from the chain position.  Link ``i`` is evaluated on the
    classes phi_i was trained on.  Returns the models, one
    :class:`ChainLink` per model (``report`` is ``None`` for the first) and
    the splits.
    """
    splits = sequential_splits(cfg.data, fractions)
    method = method or cfg.method
    models, links = [], []
    for i, (f, split) in enumerate(zip(fractions, splits)):
        stage = cfg.old_train if i == 0 else cfg.new_train
        tc = replace(stage.train, seed=cfg.stage_seed("sequential", i))
        arch = stage.arch(split.new_train_x.shape[1])
        if i == 0:
            model = train_old(split.new_train_x, split.new_train_y, arch, tc)
            report = None
        else:
            model = train_bcl(split.new_train_x, split.new_train_y, models[-1], method, tc, arch)
            report = evaluate_models(models[-1], model, restrict_eval(split))
        models.append(model)
        links.append(ChainLink(i, float(f), int(split.new_classes.size), report))
    return models, links, splits


def chain_json(links) -> str:
    out = []
    for ln in links:
        out.append({"index": ln.index, "fraction": ln.fraction, "classes": ln.classes,
                    "report": ln.report.to_dict() if ln.report else None})
    return json.dumps(out, indent=2, sort_keys=True) + "\n"
