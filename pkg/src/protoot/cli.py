"""Command-line interface: ``protoot {gen-data,train,eval,ablate}``.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numerical
failure. Diagnostics go to standard error.
"""

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import formats
from .exceptions import (
    DimMismatchError,
    IoError,
    KTooLargeError,
    NoConvergenceError,
    NonFiniteKernelError,
    ParseError,
    ProtoOTError,
    ZeroRowError,
)
from .retrieval import DEFAULT_KS, RetrievalEvaluator, cross_domain_precision, mean_precision
from .synthetic import SyntheticSpec, generate_synthetic_domains
from .training import SOLVER_CHOICES, TrainConfig, run_training

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DOMAIN_FILES = ("domain_a.feat", "domain_b.feat")
SUMMARY_FILE = "summary.tsv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name):
    return "--" + name.rstrip("_").replace("_", "-")


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _config_flag_type(field):
    def convert(text):
        try:
            return formats.convert_value(field, text)
        except ParseError as exc:
            raise argparse.ArgumentTypeError(str(exc))
    convert.__name__ = field.type.__name__
    return convert


def _add_config_flags(p):
    group = p.add_argument_group("training config (override --config)")
    for field in dataclasses.fields(TrainConfig):
        kw = {"dest": field.name, "default": None, "metavar": field.type.__name__.upper(),
              "type": _config_flag_type(field)}
        if field.name in ("intra_solver", "cross_solver"):
            kw.update(choices=SOLVER_CHOICES, metavar=None, type=str)
        group.add_argument(_flag(field.name), **kw)
    p.add_argument("--config", help="key = value config file")


def _add_data_flags(p):
    p.add_argument("--data", help="directory holding domain_a.feat and domain_b.feat "
                                  "(default: generate the default synthetic benchmark)")
    p.add_argument("--domain-a", help="feature file of domain A (overrides --data)")
    p.add_argument("--domain-b", help="feature file of domain B (overrides --data)")
    p.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS),
                   help="comma-separated cutoffs for P@k (default: 1,5,10,15)")


def build_parser():
    parser = _Parser(prog="protoot",
                     description="Generate data, train, evaluate and ablate ProtoOT retrieval.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic two-domain benchmark")
    g.add_argument("--out", required=True, help="output directory")
    for field in dataclasses.fields(SyntheticSpec):
        if field.name == "class_counts":
            g.add_argument("--class-counts", type=_int_list, default=None,
                           help="explicit per-class counts, overriding --zipf")
            continue
        g.add_argument(_flag(field.name), dest=field.name, type=field.type,
                       default=field.default, help=f"default: {field.default}")

    t = sub.add_parser("train", help="train and write metrics.jsonl and model.npz")
    t.add_argument("--out", default="run", help="output directory (default: run)")
    t.add_argument("-v", "--verbose", action="store_true", help="print epoch records to stderr")
    _add_data_flags(t)
    _add_config_flags(t)

    e = sub.add_parser("eval", help="report P@k of a trained model")
    e.add_argument("--model", required=True, help="model.npz written by train")
    e.add_argument("--queries", required=True, help="labeled query feature file")
    e.add_argument("--gallery", required=True, help="labeled gallery feature file")
    e.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS))
    e.add_argument("--exclude-self", action=argparse.BooleanOptionalAction, default=True,
                   help="drop each query's own row when query and gallery sets coincide "
                        "(default: on)")
    e.add_argument("--out", help="append the JSON record to this file")

    a = sub.add_parser("ablate", help="train one model per (intra, cross) solver pair")
    a.add_argument("--grid", default="sot,protoot x none,sot,protoot",
                   help="'INTRA,... x CROSS,...' (default: 'sot,protoot x none,sot,protoot')")
    a.add_argument("--out", default="ablation", help="output directory (default: ablation)")
    a.add_argument("--rank-k", type=int, default=10, help="P@k used to rank the summary")
    a.add_argument("--parallel", type=int, default=1, metavar="N",
                   help="worker processes (default: 1, sequential)")
    _add_data_flags(a)
    _add_config_flags(a)
    return parser


def parse_grid(text):
    """``"sot,protoot x none,sot"`` -> ordered, de-duplicated (intra, cross) pairs."""
    parts = text.split("x")
    if len(parts) != 2:
        raise UsageError(f"grid must look like 'INTRA,... x CROSS,...', got {text!r}")
    axes = []
    for part in parts:
        names = [n.strip().lower() for n in part.split(",") if n.strip()]
        if not names:
            raise UsageError(f"empty grid axis in {text!r}")
        bad = [n for n in names if n not in SOLVER_CHOICES]
        if bad:
            raise UsageError(f"unknown solver(s) {bad}; choose from {SOLVER_CHOICES}")
        axes.append(names)
    cells = []
    for intra in axes[0]:
        for cross in axes[1]:
            if (intra, cross) not in cells:
                cells.append((intra, cross))
    return cells


def resolve_config(args):
    cfg = formats.load_config(args.config) if args.config else TrainConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)
                 if getattr(args, f.name) is not None}
    try:
        return dataclasses.replace(cfg, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def load_domains(args):
    """``((x_a, y_a), (x_b, y_b))``; labels may be None."""
    paths = [args.domain_a, args.domain_b]
    if args.data:
        paths = [p or os.path.join(args.data, f) for p, f in zip(paths, DOMAIN_FILES)]
    if paths == [None, None]:
        return generate_synthetic_domains(SyntheticSpec())
    if None in paths:
        raise UsageError("give both --domain-a and --domain-b, or --data")
    (xa, ya), (xb, yb) = (formats.load_features(p) for p in paths)
    if xa.shape[1] != xb.shape[1]:
        raise DimMismatchError(f"domain widths differ: {xa.shape[1]} vs {xb.shape[1]}")
    return (xa, ya), (xb, yb)


def _evaluator(labels_a, labels_b, ks):
    if labels_a is None or labels_b is None:
        return None
    return RetrievalEvaluator(labels_a, labels_b, ks)


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc.strerror or exc}") from exc


def cmd_gen_data(args):
    kw = {f.name: getattr(args, f.name) for f in dataclasses.fields(SyntheticSpec)}
    if kw["class_counts"] is not None:
        kw["class_counts"] = tuple(kw["class_counts"])
    try:
        spec = SyntheticSpec(**kw)
        spec.counts()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    (xa, ya), (xb, yb) = generate_synthetic_domains(spec)
    _ensure_dir(args.out)
    for name, x, y in zip(DOMAIN_FILES, (xa, xb), (ya, yb)):
        formats.save_features(os.path.join(args.out, name), x, y)
    return EXIT_OK


def _train_one(cfg, xa, ya, xb, yb, ks, out_metrics, verbose=False):
    def echo(record):
        if verbose:
            print(json.dumps(record), file=sys.stderr, flush=True)

    model, history = run_training(cfg, xa, xb, _evaluator(ya, yb, ks), echo)
    formats.save_metrics(out_metrics, history)
    return model, history


def cmd_train(args):
    cfg = resolve_config(args)
    (xa, ya), (xb, yb) = load_domains(args)
    _ensure_dir(args.out)
    formats.save_config(os.path.join(args.out, "config.txt"), cfg)
    model, _ = _train_one(cfg, xa, ya, xb, yb, args.ks,
                          os.path.join(args.out, "metrics.jsonl"), args.verbose)
    formats.save_model(os.path.join(args.out, "model.npz"), model.encoder, cfg)
    return EXIT_OK


def cmd_eval(args):
    encoder, _ = formats.load_model(args.model)
    xq, yq = formats.load_features(args.queries)
    xg, yg = formats.load_features(args.gallery)
    if yq is None or yg is None:
        raise ParseError("eval needs labeled feature files (has_labels = 1)")
    for x in (xq, xg):
        if x.shape[1] != encoder.d_in:
            raise DimMismatchError(f"features have width {x.shape[1]}, model expects {encoder.d_in}")
    eq = encoder.forward(xq, keep_cache=False)
    eg = encoder.forward(xg, keep_cache=False)
    same = xq.shape == xg.shape and np.array_equal(xq, xg)
    if same:
        prec = mean_precision(eq, eg, yq, yg, args.ks, exclude_self=args.exclude_self)
        record = {"self": {str(k): v for k, v in prec.items()}}
    else:
        res = cross_domain_precision(eq, eg, yq, yg, args.ks)
        record = {name: {str(k): v for k, v in res[name].items()}
                  for name in ("a_to_b", "b_to_a", "mean")}
    line = json.dumps(record)
    print(line)
    if args.out:
        try:
            with open(args.out, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise IoError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
    return EXIT_OK


def _ablate_cell(job):
    cfg, xa, ya, xb, yb, ks, path = job
    _, history = _train_one(cfg, xa, ya, xb, yb, ks, path)
    return history[-1]["p_at_k"] if history else {}


def format_summary(results, ks, rank_k):
    """Tab-separated table of final P@k per cell, best first (grid order on ties)."""
    key = str(rank_k)
    order = sorted(range(len(results)), key=lambda i: -results[i][2].get(key, float("-inf")))
    lines = ["\t".join(["rank", "intra", "cross"] + [f"p@{k}" for k in ks])]
    for rank, i in enumerate(order, start=1):
        intra, cross, prec = results[i]
        cells = [repr(prec[str(k)]) if str(k) in prec else "nan" for k in ks]
        lines.append("\t".join([str(rank), intra, cross] + cells))
    return "\n".join(lines) + "\n"


def cmd_ablate(args):
    cells = parse_grid(args.grid)
    if args.rank_k not in args.ks:
        raise UsageError(f"--rank-k {args.rank_k} is not among --ks {args.ks}")
    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    base = resolve_config(args)
    (xa, ya), (xb, yb) = load_domains(args)
    if ya is None or yb is None:
        raise ParseError("ablate needs labeled feature files to rank runs")
    _ensure_dir(args.out)
    jobs = []
    for intra, cross in cells:
        cfg = dataclasses.replace(base, intra_solver=intra, cross_solver=cross)
        path = os.path.join(args.out, f"{intra}-{cross}.jsonl")
        jobs.append((cfg, xa, ya, xb, yb, args.ks, path))
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            finals = list(pool.map(_ablate_cell, jobs))
    else:
        finals = [_ablate_cell(job) for job in jobs]
    results = [(intra, cross, prec) for (intra, cross), prec in zip(cells, finals)]
    summary = format_summary(results, args.ks, args.rank_k)
    try:
        with open(os.path.join(args.out, SUMMARY_FILE), "w", encoding="utf-8") as fh:
            fh.write(summary)
    except OSError as exc:
        raise IoError(f"cannot write summary: {exc.strerror or exc}") from exc
    sys.stdout.write(summary)
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"protoot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoConvergenceError, NonFiniteKernelError, ZeroRowError, FloatingPointError) as exc:
        print(f"protoot: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, IoError, DimMismatchError, KTooLargeError) as exc:
        print(f"protoot: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProtoOTError as exc:
        print(f"protoot: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
