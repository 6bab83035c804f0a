"""Command-line entry point: ``acsl-lab {run,compare,gen-data,check-grad}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import gradcheck
from .experiment import ConfigError, ExperimentConfig, atomic_write, compare, load_config, run
from .synth_data import dumps_dataset, sample_dataset
from .trainer import TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4
EXIT_GRAD = 5


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def cmd_run(args):
    rows = run(_config(args), args.out, jobs=args.jobs)
    for r in rows:
        print(f"{r['point']}\t" + "\t".join(f"{k}={r[k]:.4f}" for k in ("m_ap", "ap_r", "ap_c", "ap_f")
                                              if r[k] is not None))
    return EXIT_OK


def cmd_compare(args):
    rows = compare(_config(args), args.out, jobs=args.jobs)
    print(Path(args.out, "table.tsv").read_text(), end="")
    return EXIT_OK if rows else EXIT_CONFIG


def cmd_gen_data(args):
    cfg = _config(args)
    ds = sample_dataset(replace(cfg.dataset, seed=cfg.seeds[0]), cfg.groups)
    out = Path(args.out)
    atomic_write(out / "dataset.tsv", dumps_dataset(ds))
    atomic_write(out / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(ds.labels)} train and {len(ds.test_labels)} test samples to {out / 'dataset.tsv'}")
    return EXIT_OK


def cmd_check_grad(args):
    worst = gradcheck.run_suite(args.cases, seed=args.seed or 0)
    for family, err in worst.items():
        print(f"{family}\tmax_rel_err={err:.3e}")
    overall = max(worst.values())
    print(f"max\t{overall:.3e}")
    return EXIT_OK if overall <= args.tol else EXIT_GRAD


def build_parser():
    parser = argparse.ArgumentParser(prog="acsl-lab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("-c", "--config", help="JSON experiment config (defaults apply when omitted)")
        if needs_out:
            p.add_argument("-o", "--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config's seed list")
        p.add_argument("-j", "--jobs", type=int, default=1, help="parallel training runs")

    p = sub.add_parser("run", help="train and evaluate every sweep point")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="train every loss in the config's compare list")
    common(p)
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("gen-data", help="export the synthetic dataset as columnar text")
    common(p)
    p.set_defaults(func=cmd_gen_data)
    p = sub.add_parser("check-grad", help="finite-difference check of every loss gradient")
    p.add_argument("--cases", type=int, default=1000, help="random cases per loss family")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
