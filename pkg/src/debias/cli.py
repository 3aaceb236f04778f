"""Command-line entry point ``debias``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .densities import BANDWIDTH_RULES, Domain, kde_fit, random_gmm, sample_gmm
from .estimators import KINDS, EvaluationSample, ise, ise_estimated, mce
from .experiment import (
    ExperimentConfig,
    ExperimentReport,
    run_experiment,
    sample_size_sweep,
    stream,
)
from .models import FieldPair

log = logging.getLogger("debias")

FAMILY_LABELS = {"linear": "Linear", "gmm": "GMM"}


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _sizes(text: str) -> list[int]:
    try:
        return [_positive_int(s) for s in text.split(",") if s.strip()]
    except argparse.ArgumentTypeError as exc:
        raise argparse.ArgumentTypeError(f"bad --sizes: {exc}") from None


def _domain(text: str) -> Domain:
    try:
        x0, y0, x1, y1 = (float(v) for v in text.split(","))
        return Domain(x0, y0, x1, y1)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad --domain {text!r}: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="debias", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config (bundled names are accepted)")
        p.add_argument("--seed", type=_seed, help="master seed; falls back to $DEBIAS_SEED")
        p.add_argument("--k", type=_positive_int, help="mixture components")
        p.add_argument("--n", type=_positive_int, help="evaluation sample size")

    gen = sub.add_parser("generate", help="sample points from a random mixture")
    common(gen)
    gen.add_argument("--out", default=".", help="points CSV path or output directory")

    est = sub.add_parser("estimate", help="risk estimates for a point file")
    est.add_argument("--points", required=True, help="CSV with x,y,error (or x,y plus --fields)")
    est.add_argument("--mixture", help="sampling density JSON; enables ISE")
    est.add_argument("--fields", help="FieldPair JSON used when the CSV has no error column")
    est.add_argument("--domain", type=_domain, help="x_min,y_min,x_max,y_max (default 0,0,100,100)")
    est.add_argument("--kde-rule", default="silverman", choices=BANDWIDTH_RULES)

    for name, helptext in (("experiment", "repeated trials and MAPE/RMSE table"),
                           ("sweep", "estimator bias across sample sizes")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--runs", type=_positive_int, help="number of trials")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
        if name == "sweep":
            p.add_argument("--sizes", type=_sizes, required=True, help="comma-separated sample sizes")
    return parser


def resolve_config_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("debias") / "configs" / path.name
    if bundled.is_file():
        return Path(str(bundled))
    raise UsageError(f"config file not found: {name}")


def load_config(args) -> ExperimentConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = io.load_json(resolve_config_path(args.config))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: top level must be an object")
    seed = args.seed
    if seed is None and os.environ.get("DEBIAS_SEED"):
        try:
            seed = _seed(os.environ["DEBIAS_SEED"])
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"DEBIAS_SEED: {exc}") from None
    overrides = {"master_seed": seed, "k": args.k, "n_eval": args.n,
                 "n_runs": getattr(args, "runs", None)}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.from_dict(doc)
    except KeyError as exc:
        raise UsageError(f"unknown config key: {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def _output_dir(out: str) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_generate(args) -> int:
    config = load_config(args)
    out = Path(args.out)
    if out.suffix == ".csv":
        points_path, mixture_path = out, out.with_name("mixture.json")
        out.parent.mkdir(parents=True, exist_ok=True)
    else:
        _output_dir(args.out)
        points_path, mixture_path = out / "points.csv", out / "mixture.json"
    seed = config.master_seed
    g = config.mixture or random_gmm(config.k, config.domain, config.min_eigenvalue,
                                     stream(seed, "mixture"), config.eig_max_factor, config.resolution)
    pts = sample_gmm(g, config.n_eval, stream(seed, "eval"))
    io.write_points_csv(points_path, pts)
    io.dump_json(g.to_dict(), mixture_path)
    print(f"wrote {len(pts)} points to {points_path} and mixture to {mixture_path}")
    return 0


def estimate_report(points, errors, domain: Domain, density=None, kde_rule: str = "silverman") -> dict:
    """Estimates for user data; the ``estimate`` subcommand prints this document."""
    sample = EvaluationSample(points, errors)
    kde = kde_fit(sample.points, kde_rule, domain)
    out = {
        "n": sample.n,
        "domain": domain.to_dict(),
        "kde": {"rule": kde_rule, "bandwidths": kde.bandwidths.tolist(), "mass_in_domain": kde.mass_in_domain},
        "mce": mce(sample).to_dict(),
        "ise_e": ise_estimated(sample, domain.pdf, kde).to_dict(),
    }
    if density is not None:
        out["ise"] = ise(sample, domain.pdf, density).to_dict()
    return out


def cmd_estimate(args) -> int:
    points, errors = io.read_points_csv(args.points)
    density, domain = None, args.domain or Domain()
    if args.mixture:
        density, mix_domain = io.load_density(io.load_json(args.mixture))
        domain = args.domain or mix_domain
    if errors is None:
        if not args.fields:
            raise UsageError(f"{args.points} has no 'error' column; supply --fields")
        pair = FieldPair.from_dict(io.load_json(args.fields))
        errors = pair.error(points)
    print(json.dumps(estimate_report(points, errors, domain, density, args.kde_rule), indent=2, sort_keys=True))
    return 0


def summary_table(reports: list[ExperimentReport]) -> str:
    """MAPE table, one row per function family; ``*`` marks each row's best estimator."""
    lines = [f"{'Function':<10}" + "".join(f"{k:>10}" for k in KINDS), "-" * 40]
    for rep in reports:
        mapes = {k: rep.metrics[k]["mape"] for k in KINDS}
        best = min(mapes, key=lambda k: mapes[k])
        cells = "".join(f"{mapes[k]:>9.2f}{'*' if k == best else ' '}" for k in KINDS)
        lines.append(f"{FAMILY_LABELS[rep.config.function_family]:<10}{cells}")
    lines.append("MAPE in percent relative to the true risk; * = best")
    for rep in reports:
        rm = "  ".join(f"{k}={rep.metrics[k]['rmse']:.4g}" for k in KINDS)
        lines.append(f"RMSE {FAMILY_LABELS[rep.config.function_family]}: {rm}")
    return "\n".join(lines)


def cmd_experiment(args) -> int:
    config = load_config(args)
    out = _output_dir(args.out)
    report = run_experiment(config, jobs=args.jobs)
    (out / "report.json").write_text(report.to_json())
    (out / "trials.csv").write_text(report.trials_csv())
    print(summary_table([report]))
    return 0


def cmd_sweep(args) -> int:
    config = load_config(args)
    out = _output_dir(args.out)
    report = sample_size_sweep(config, args.sizes, jobs=args.jobs)
    (out / "report.json").write_text(report.to_json())
    (out / "trials.csv").write_text(report.trials_csv())
    (out / "sweep.csv").write_text(report.sweep_csv())
    print(f"{'n':>8}{'estimator':>10}{'mean_bias':>12}{'MAPE %':>10}")
    for r in report.rows:
        print(f"{r.n:>8}{r.estimator:>10}{r.mean_bias:>12.5f}{r.mape:>10.3f}")
    return 0


COMMANDS = {"generate": cmd_generate, "estimate": cmd_estimate,
            "experiment": cmd_experiment, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"debias {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except io.CsvFormatError as exc:
        print(f"debias {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"debias {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
