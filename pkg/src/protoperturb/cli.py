"""Command-line front end: gen-data, train, eval, sweep, sequential.

Exit status: 0 success, 2 usage/config/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import json
import sys
from pathlib import Path

from . import config as config_mod
from . import experiment, store
from .encoder import EncoderParams, MethodKind
from .errors import ConfigError, NumericalError, StoreError
from .metrics import evaluate_models
from .synth import generate

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@contextlib.contextmanager
def output_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / ".lock", "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _data_dir(cfg, override=None) -> Path:
    return Path(override) if override else cfg.output_dir / "data"


def _model_path(cfg, model: str, method: str | None) -> Path:
    name = "old" if model == "old" else f"new_{method or 'independent'}"
    return cfg.output_dir / "models" / f"{name}.bclg"


def cmd_gen_data(args) -> int:
    cfg = config_mod.load(args.config)
    split = generate(cfg.data)
    with output_lock(cfg.output_dir):
        experiment.save_split(_data_dir(cfg), split)
    for k, v in split.summary().items():
        print(f"{k}={v}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = config_mod.load(args.config)
    split = experiment.load_split(_data_dir(cfg, args.data))
    log: list = []
    method = args.method
    if args.model == "old":
        if method:
            raise UsageError("--method applies to --model new only")
        params = experiment.train_old_model(cfg, split, log)
    elif method is None:
        params = experiment.train_independent(cfg, split, log)
    else:
        old_path = Path(args.old) if args.old else _model_path(cfg, "old", None)
        if not old_path.exists():
            raise ConfigError(f"old checkpoint {old_path} not found; train --model old first", "old")
        old, _ = store.load_model(old_path)
        params = experiment.train_new_model(cfg, split, old, cfg.with_method(method).method, log)
    out = Path(args.out) if args.out else _model_path(cfg, args.model, method)
    tag = f"{args.model}_{method}" if method else args.model
    with output_lock(cfg.output_dir):
        store.save_model(out, params, {"model": args.model, "method": method or "none",
                                       "seed": cfg.seed})
        log_path = _write(cfg.output_dir / "logs" / f"train_{tag}.jsonl", _jsonl(log))
    print(f"checkpoint={out}")
    print(f"log={log_path}")
    if log:
        print(f"final_loss={log[-1]['loss']!r}")
    return EXIT_OK


def _load_ckpt(path) -> EncoderParams:
    if not Path(path).exists():
        raise ConfigError(f"checkpoint {path} not found", "checkpoint")
    return store.load_model(path)[0]


def cmd_eval(args) -> int:
    cfg = config_mod.load(args.config)
    split = experiment.load_split(_data_dir(cfg, args.data))
    old, new = _load_ckpt(args.old), _load_ckpt(args.new)
    if old.embed_dim != new.embed_dim:
        raise ConfigError(f"embed_dim mismatch: old {old.embed_dim}, new {new.embed_dim}", "embed_dim")
    report = evaluate_models(old, new, split)
    name = args.name or Path(args.new).stem
    rdir = cfg.output_dir / "reports"
    with output_lock(cfg.output_dir):
        _write(rdir / f"{name}.json", report.to_json())
        _write(rdir / f"{name}.txt", report.to_table(f"{Path(args.old).stem} -> {name}") + "\n" + report.to_kv())
        if cfg.eval.pca:
            _write(rdir / f"{name}_pca.csv", experiment.pca_csv(experiment.pca_rows(old, new, split)))
    sys.stdout.write(report.to_table())
    print(f"report={rdir / (name + '.json')}")
    return EXIT_OK


def _parse_values(param: str, text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok) if param == "K" else float(tok))
        except ValueError:
            raise UsageError(f"--values entry {tok!r} is not a number") from None
    if not out:
        raise UsageError("--values is empty")
    return out


def cmd_sweep(args) -> int:
    if args.param not in config_mod.SWEEP_PARAMS:
        raise UsageError(f"unknown --param {args.param!r}; choose from {', '.join(config_mod.SWEEP_PARAMS)}")
    cfg = config_mod.load(args.config)
    if args.method:
        cfg = cfg.with_method(args.method)
    values = _parse_values(args.param, args.values)
    split = experiment.load_split(_data_dir(cfg, args.data)) if args.data else None
    rows = experiment.sweep(cfg, args.param, values, split)
    out = Path(args.out) if args.out else cfg.output_dir / "reports" / f"sweep_{args.param}.csv"
    with output_lock(cfg.output_dir):
        _write(out, experiment.sweep_csv(rows))
    sys.stdout.write(experiment.sweep_csv(rows))
    return EXIT_OK


def cmd_sequential(args) -> int:
    cfg = config_mod.load(args.config)
    if args.method:
        cfg = cfg.with_method(args.method)
    try:
        fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    except ValueError:
        raise UsageError("--fractions must be comma-separated numbers") from None
    models, links, _ = experiment.sequential(cfg, fractions)
    tag = cfg.method.kind.value
    sdir = cfg.output_dir / "sequential" / tag
    with output_lock(cfg.output_dir):
        for i, m in enumerate(models):
            store.save_model(sdir / f"phi_{i + 1}.bclg", m, {"chain_index": i + 1, "method": tag})
        _write(sdir / "chain.json", experiment.chain_json(links))
        lines = []
        for ln in links[1:]:
            lines.append(ln.report.to_table(f"phi_{ln.index + 1} vs phi_{ln.index} "
                                            f"({ln.classes} classes)"))
        _write(sdir / "chain.txt", "\n".join(lines))
    for ln in links:
        if ln.report is None:
            print(f"phi_{ln.index + 1}: {ln.classes} classes (independent)")
        else:
            r = ln.report
            print(f"phi_{ln.index + 1}: {ln.classes} classes self_prev={r.map_self_old!r} "
                  f"cross={r.map_cross!r} compatible={str(r.compatible).lower()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    methods = [k.value for k in MethodKind]
    p = _Parser(prog="protoperturb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    g.add_argument("--config", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train an old or new model")
    t.add_argument("--config", required=True)
    t.add_argument("--model", choices=("old", "new"), required=True)
    t.add_argument("--method", choices=methods, default=None,
                   help="BCL method for --model new; omit for independent training")
    t.add_argument("--old", help="old checkpoint (default: <output_dir>/models/old.bclg)")
    t.add_argument("--data", help="dataset directory (default: <output_dir>/data)")
    t.add_argument("--out", help="checkpoint path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="self-test / cross-test evaluation")
    e.add_argument("--config", required=True)
    e.add_argument("--old", required=True)
    e.add_argument("--new", required=True)
    e.add_argument("--data")
    e.add_argument("--name", help="report basename (default: new checkpoint stem)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train+eval once per hyperparameter value")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--method", choices=methods)
    s.add_argument("--data")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    q = sub.add_parser("sequential", help="chained backward-compatible upgrades")
    q.add_argument("--config", required=True)
    q.add_argument("--fractions", default="0.09,0.30,1.0")
    q.add_argument("--method", choices=methods)
    q.set_defaults(func=cmd_sequential)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, StoreError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
