"""Command-line entry point.

Data files are delimited numeric text (comma or whitespace separated,
UTF-8, '.' as decimal separator); labeled files carry the class index in
the last column, and a non-numeric first line is skipped as a header.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..data import LabeledSet, load_tabular
from ..errors import ConfigError, DataError, ModelFormatError
from .config import dump_config, load_config
from .experiment import RunReport, accuracy, grid_search_lambda, load_domains, run_experiment
from .export import export_alpha_trace, export_histograms, write_metrics
from .serialize import load_model, save_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("dalign")

DATA_FORMAT_HELP = (
    "data files: comma- or whitespace-delimited numbers, UTF-8, '.' decimal separator; "
    "labeled files end each row with an integer class index; an optional header line is skipped"
)


def _common(p):
    p.add_argument("config", nargs="?", help="YAML experiment config (defaults apply when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set optimizer.lr=0.05 (repeatable)")
    p.add_argument("--variant", help="source | entropy | autodial_fixed | autodial")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lam", type=float, help="entropy loss weight")
    p.add_argument("--output-dir")


def _config(args):
    overrides = list(args.overrides)
    for flag, key in (("variant", "variant"), ("epochs", "epochs"), ("lam", "loss.lam"),
                      ("output_dir", "output_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if getattr(args, "seeds", None):
        overrides.append(f"seeds=[{args.seeds}]")
    return load_config(args.config, overrides)


def cmd_run(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    report = run_experiment(cfg)
    write_metrics(report, out)
    export_alpha_trace(report, out / "alpha_trace.csv")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1), encoding="utf-8")
    for seed, net in report.models.items():
        save_model(net, out / f"model_seed{seed}.dal")
    print(f"{report.variant}: target accuracy {report.mean_target_accuracy:.4f} "
          f"+/- {report.std_target_accuracy:.4f} over {len(report.seeds)} seeds -> {out}")
    return EXIT_OK


def cmd_gridsearch(args):
    cfg = _config(args)
    candidates = [float(c) for c in args.candidates.split(",")] if args.candidates else None
    best, table = grid_search_lambda(cfg, candidates)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gridsearch.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "holdout_source_accuracy"])
        w.writerows(table)
    for lam, score in table:
        print(f"lambda={lam:g}\tholdout source accuracy={score:.4f}")
    print(f"chosen lambda: {best:g}")
    return EXIT_OK


def cmd_export_alpha(args):
    run_dir = Path(args.run_dir)
    try:
        report = RunReport.from_dict(json.loads((run_dir / "report.json").read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise DataError(f"{run_dir} has no report.json; run an experiment first") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"unreadable report.json: {exc}") from None
    dest = args.out or run_dir / "alpha_trace.csv"
    rows = export_alpha_trace(report, dest, seed=args.seed)
    print(f"wrote {len(rows)} alpha rows to {dest}")
    return EXIT_OK


def cmd_export_hist(args):
    net = load_model(args.model)
    if args.source and args.target:
        source = load_tabular(args.source, labeled=not args.unlabeled)
        target = load_tabular(args.target, labeled=not args.unlabeled)
        hcfg = None
    else:
        cfg = _config(args)
        source, target = load_domains(cfg, args.data_seed)
        hcfg = cfg.histograms
    bins = args.bins or (hcfg.bins if hcfg else 30)
    channels = args.channels or (hcfg.channels if hcfg else 4)
    seed = args.sample_seed if args.sample_seed is not None else (hcfg.seed if hcfg else 0)
    if not net.frozen:
        net.freeze()
    rows = export_histograms(net, source, target, args.layer, args.out, bins=bins, channels=channels, seed=seed)
    print(f"wrote {len(rows)} histogram rows to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    net = load_model(args.model)
    dataset = load_tabular(args.dataset, labeled=not args.unlabeled)
    if dataset.dim != net.input_dim:
        raise DataError(f"dataset has {dataset.dim} features, model expects {net.input_dim}")
    if not net.frozen:
        net.freeze()
    probs = net.predict(dataset.features, domain=args.domain)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "prediction"] + [f"p{k}" for k in range(probs.shape[1])])
            for i, row in enumerate(probs):
                w.writerow([i, int(np.argmax(row))] + [repr(float(v)) for v in row])
    if isinstance(dataset, LabeledSet):
        print(f"accuracy={accuracy(net, dataset, domain=args.domain):.4f} n={len(dataset)}")
    else:
        print(f"predicted {len(dataset)} rows")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="dalign", description="Domain-alignment layer experiments.",
                                     epilog=DATA_FORMAT_HELP)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate one variant over all seeds", epilog=DATA_FORMAT_HELP)
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gridsearch", help="choose lambda by held-out source accuracy")
    _common(p)
    p.add_argument("--candidates", help="comma-separated lambda values")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("export-alpha", help="write the alpha trace of a finished run")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_export_alpha)

    p = sub.add_parser("export-hist", help="feature histograms after a DA-layer", epilog=DATA_FORMAT_HELP)
    p.add_argument("model")
    _common(p)
    p.add_argument("--layer", type=int, default=0, help="DA-layer index (0-based)")
    p.add_argument("--bins", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--sample-seed", type=int)
    p.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic data draw")
    p.add_argument("--source", help="source data file (instead of the config's data section)")
    p.add_argument("--target", help="target data file")
    p.add_argument("--unlabeled", action="store_true", help="data files have no label column")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_hist)

    p = sub.add_parser("eval", help="evaluate a saved model on a data file", epilog=DATA_FORMAT_HELP)
    p.add_argument("model")
    p.add_argument("dataset")
    p.add_argument("--domain", choices=["source", "target"], default="target")
    p.add_argument("--unlabeled", action="store_true")
    p.add_argument("--out", help="write per-row predictions here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
