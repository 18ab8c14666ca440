"""Command-line entry point: ``simulate``, ``fit``, ``study`` and ``report``."""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .core import DomainError, Prior
from .cox_current import IcmConvergenceError
from .cox_right import CalibrationError
from .data import read_dataset, write_dataset
from .harness import (DEFAULT_EVENT_FRAC, StudyError, cached_tn, parse_config, run_and_write,
                      summarize_file)
from .inference import FitConfig, StageError, build_report
from .models import GENERATORS, MODELS

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _prior(text):
    try:
        return Prior.parse(text)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="profile-sampler",
                     description="Profile sampler inference for semiparametric models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a dataset as CSV")
    p.add_argument("--model", required=True, choices=sorted(GENERATORS))
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--theta0", required=True, type=_float_list)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--tn", type=float, help="censoring/examination bound")
    g.add_argument("--target-frac", type=float, help="calibrate tn to this event fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="analyse one dataset and write a key=value report")
    p.add_argument("--model", required=True, choices=sorted(MODELS))
    p.add_argument("--data", required=True)
    p.add_argument("--rate-r", type=float)
    p.add_argument("--chain", type=int, default=5000, help="total chain length")
    p.add_argument("--burn-in", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior", type=_prior, default=Prior())
    p.add_argument("--out", help="report path (default: stdout)")

    p = sub.add_parser("study", help="run a replication study")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("report", help="summary table from a per-replicate study CSV")
    p.add_argument("input")
    p.add_argument("--exponents", type=_float_list,
                   help="four scaling exponents (default: the model's)")
    p.add_argument("--theta0", type=float, default=1.0)
    return parser


def _simulate(args):
    if args.model == "partly_linear":
        data = GENERATORS[args.model](args.n, np.array(args.theta0), seed=args.seed)
    else:
        if args.tn is None:
            frac = args.target_frac or DEFAULT_EVENT_FRAC[args.model]
            tn = cached_tn(args.model, tuple(args.theta0), frac)
        else:
            tn = args.tn
        data = GENERATORS[args.model](args.n, np.array(args.theta0), tn, args.seed)
    write_dataset(data, args.out)


def _fit(args):
    data = read_dataset(args.data)
    config = FitConfig(rate_r=args.rate_r, chain_total=args.chain, burn_in=args.burn_in,
                       seed=args.seed, prior=args.prior)
    text = build_report(args.model, data, config).to_keyvalue()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _study(args):
    if not os.path.isfile(args.config):
        raise FileNotFoundError(f"config file not found: {args.config}")
    with open(args.config) as fh:
        config = parse_config(fh.read())
    rows = run_and_write(config, args.out_dir, args.threads)
    for r in rows:
        print(f"n={r.n} reps={r.reps} failures={r.failures} coverage={r.coverage:.3f}")


def _report(args):
    exps = tuple(args.exponents) if args.exponents else None
    if exps is not None and len(exps) != 4:
        raise UsageError("--exponents needs four values")
    rows = summarize_file(args.input, exps, args.theta0)
    head = f"{'model':<12} {'n':>6} {'reps':>5} {'|MLE-CM|':>10} {'|SE|':>10} " \
           f"{'|L|':>10} {'|U|':>10} {'cover':>6} {'fail':>5}"
    print(head)
    for r in rows:
        print(f"{r.model:<12} {r.n:>6} {r.reps:>5} {r.scaled_mle_cm:>10.4f} {r.scaled_se:>10.4f} "
              f"{r.scaled_l:>10.4f} {r.scaled_u:>10.4f} {r.coverage:>6.3f} {r.failures:>5}")


COMMANDS = {"simulate": _simulate, "fit": _fit, "study": _study, "report": _report}


def cli_main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip("\n") + "\n")
        return EXIT_USAGE
    except (OSError, DomainError, ValueError, TypeError, StageError, StudyError,
            CalibrationError, IcmConvergenceError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(cli_main())
