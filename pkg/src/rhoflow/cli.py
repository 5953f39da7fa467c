"""Command-line interface: simulate, fit, curve, value, bounds, bayes, report.

Exit codes
    0  success
    1  unexpected failure inside the tool
    2  usage error (bad flags, out-of-domain arguments)
    3  data error (unparseable or schema-violating input)
    4  numeric error (training diverged, non-finite likelihood)
    5  storage error (cannot read or write a file)
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import bayes, causal, flow, report, simgen, training
from .data import BINARY, ObservationalDataset, VariableKind, load_dataset, save_dataset
from .errors import DataError, DomainError, NumericError, RhoFlowError, StorageError, UsageError

log = logging.getLogger("rhoflow")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_STORAGE = 5

SEED_ENV = "RHOFLOW_SEED"
GRIDS = {"default11": training.CURVE_GRID, "default41": training.BAYES_GRID}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, training.GridPointError):
        return exit_code_for(exc.cause)
    for cls, code in ((UsageError, EXIT_USAGE), (DomainError, EXIT_USAGE), (DataError, EXIT_DATA),
                      (NumericError, EXIT_NUMERIC), (StorageError, EXIT_STORAGE)):
        if isinstance(exc, cls):
            return code
    return EXIT_INTERNAL


# ---------------------------------------------------------------------------
# argument parsing helpers


def parse_grid(text: str) -> tuple:
    if text in GRIDS:
        return GRIDS[text]
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--grid expects default11, default41 or comma-separated numbers, got {text!r}") from None
    return training.check_grid(values)


def parse_kind(text: str) -> VariableKind:
    try:
        return VariableKind.parse(text)
    except (DomainError, ValueError) as exc:
        raise UsageError(f"bad variable kind {text!r}: {exc}") from None


def parse_quantity(text: str):
    """``ace`` or ``ey:LEVEL`` -> (name, level or None)."""
    if text == "ace":
        return "ace", None
    if text.startswith("ey:"):
        try:
            return "ey", float(text[3:])
        except ValueError:
            pass
    raise UsageError(f"--quantity expects 'ace' or 'ey:LEVEL', got {text!r}")


def resolve_seed(flag) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def train_config(args) -> training.TrainConfig:
    doc = {}
    if getattr(args, "config", None):
        doc = report.read_json(args.config)
        if not isinstance(doc, dict):
            raise DataError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(doc) - set(training.TrainConfig.__dataclass_fields__))
        if unknown:
            raise DataError(f"{args.config}: unknown config keys {unknown}")
    overrides = {
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "max_epochs": args.max_epochs,
        "patience": args.patience,
        "validation_fraction": args.val_fraction,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    doc["seed"] = resolve_seed(args.seed)
    try:
        return training.TrainConfig.from_dict(doc)
    except TypeError as exc:
        raise DataError(f"bad config: {exc}") from exc


def read_data(args) -> ObservationalDataset:
    return load_dataset(args.data, parse_kind(args.a_kind), parse_kind(args.y_kind))


def default_levels(args):
    return (1.0 if args.a1 is None else args.a1), (0.0 if args.a0 is None else args.a0)


def clamp_batch(config: training.TrainConfig, ds: ObservationalDataset) -> training.TrainConfig:
    from dataclasses import replace

    n_train = ds.n - max(1, int(round(config.validation_fraction * ds.n)))
    if config.batch_size > n_train > 0:
        log.info("batch size %d exceeds training split; using %d", config.batch_size, n_train)
        return replace(config, batch_size=n_train)
    return config


class Run:
    """Collects outputs and writes the manifest next to the primary output."""

    def __init__(self, command: str, argv, seeds, config: dict):
        self.manifest = report.RunManifest(command, list(argv), list(seeds), config)

    def input(self, path):
        self.manifest.inputs[str(path)] = report.sha256_file(path)

    def output(self, path):
        self.manifest.outputs.append(str(path))
        return path

    def finish(self, primary):
        mpath = report.manifest_path(primary)
        report.write_json(mpath, self.manifest.to_dict())
        return mpath


def emit(doc: dict):
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, argv):
    seed = resolve_seed(args.seed)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    kind, _, arg = args.scm.partition(":")
    if kind == "table1":
        try:
            spec = simgen.TABLE1[int(arg)]
        except (ValueError, KeyError):
            raise UsageError(f"--scm table1:K needs K in 1..6, got {arg!r}") from None
        ds = simgen.sample_linear_scm(spec, args.n, seed, name=f"table1_{arg}")
        truth = {"scm": spec.to_dict(), **vars(simgen.linear_scm_stats(spec))}
    elif kind == "binary":
        try:
            spec = simgen.random_binary_spec(int(arg))
        except ValueError:
            raise UsageError(f"--scm binary:SEED needs an integer seed, got {arg!r}") from None
        ds, ace = simgen.sample_binary_scm(spec, args.n, seed)
        truth = {"scm": spec.to_dict(), "ace_true": ace}
    else:
        raise UsageError(f"--scm expects table1:K or binary:SEED, got {args.scm!r}")
    run = Run("simulate", argv, [seed], {"scm": args.scm, "n": args.n, "truth": truth})
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {out.parent}: {exc}") from exc
    save_dataset(ds, out)
    run.output(out)
    run.finish(out)
    emit({"out": str(out), "n": ds.n, "a_kind": str(ds.a_kind), "y_kind": str(ds.y_kind), **truth})


def cmd_fit(args, argv):
    ds = read_data(args)
    config = clamp_batch(train_config(args), ds)
    model, rep = training.fit(ds, args.rho, config)
    run = Run("fit", argv, [config.seed], config.to_dict())
    run.input(args.data)
    out = Path(args.out)
    flow.save_model(model, out)
    run.output(out)
    run.finish(out)
    emit({"out": str(out), "rho": model.rho, "epochs_run": rep.epochs_run, "best_epoch": rep.best_epoch,
          "final_train_nll": rep.final_train_nll, "final_val_nll": rep.final_val_nll})


def _af_or_none(ds):
    if ds.a_kind == BINARY and ds.y_kind == BINARY:
        return causal.af_bounds(ds)
    return None


def cmd_curve(args, argv):
    ds = read_data(args)
    grid = parse_grid(args.grid)
    config = clamp_batch(train_config(args), ds)
    a1, a0 = default_levels(args)
    fits = training.fit_grid(ds, grid, config, args.jobs)
    curve = causal.curve_from_models(ds, fits, a1, a0)
    af = _af_or_none(ds)
    doc = report.curve_to_dict(curve, af, config.to_dict())
    run = Run("curve", argv, [config.seed] + list(doc["seeds"]), config.to_dict())
    run.input(args.data)
    out = Path(args.out)
    run.output(report.write_json(out, doc))
    run.output(report.write_text(out.with_suffix(".csv"), report.curve_csv(curve)))
    if args.models_dir:
        mdir = Path(args.models_dir)
        try:
            mdir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create {mdir}: {exc}") from exc
        for rho, model, _ in fits:
            run.output(flow.save_model(model, mdir / f"model_rho{rho:+.2f}.json"))
    run.finish(out)
    emit({k: doc[k] for k in ("rho_value", "crossing", "inf_ace", "sup_ace", "af_bounds")} | {"out": str(out)})


def cmd_value(args, argv):
    ds = read_data(args)
    doc = {"rho_value": causal.rho_value(ds), "n": ds.n}
    if args.out:
        run = Run("value", argv, [], {})
        run.input(args.data)
        run.output(report.write_json(args.out, doc))
        run.finish(Path(args.out))
    emit(doc)


def cmd_bounds(args, argv):
    ds = read_data(args)
    if not (ds.a_kind == BINARY and ds.y_kind == BINARY):
        raise UsageError("bounds needs --a-kind binary --y-kind binary")
    af = causal.af_bounds(ds)
    doc = {"af_bounds": af.to_dict(), "width": af.width}
    if args.curve:
        curve = report.curve_from_dict(report.read_json(args.curve))
        doc.update(inf_ace=curve.inf_ace, sup_ace=curve.sup_ace,
                   inside=bool(af.lower < curve.inf_ace and curve.sup_ace < af.upper))
    if args.out:
        run = Run("bounds", argv, [], {})
        run.input(args.data)
        if args.curve:
            run.input(args.curve)
        run.output(report.write_json(args.out, doc))
        run.finish(Path(args.out))
    emit(doc)


def cmd_bayes(args, argv):
    prior = bayes.RhoPrior.parse(args.prior)
    quantity, level = parse_quantity(args.quantity)
    run_seeds, config_doc = [], {}
    if args.curve:
        if quantity != "ace":
            raise UsageError("--curve only carries ACE values; use --data for --quantity ey:LEVEL")
        curve = report.curve_from_dict(report.read_json(args.curve))
        grid, q = curve.rhos.tolist(), curve.aces.tolist()
        inputs = [args.curve]
    elif args.data:
        ds = read_data(args)
        config = clamp_batch(train_config(args), ds)
        fits = training.fit_grid(ds, parse_grid(args.grid), config, args.jobs)
        grid = [rho for rho, _, _ in fits]
        if quantity == "ace":
            a1, a0 = default_levels(args)
            q = [causal.estimate_ace(m, ds, a1, a0) for _, m, _ in fits]
        else:
            q = [causal.expected_outcomes(m, ds, (level,))[level] for _, m, _ in fits]
        run_seeds = [config.seed] + [m.meta.get("train_seed") for _, m, _ in fits]
        config_doc = config.to_dict()
        inputs = [args.data]
    else:
        raise UsageError("bayes needs --data or --curve")
    summary = bayes.bayesian_summary(bayes.GridEvaluation(grid, q), prior, args.level, args.threshold)
    doc = report.posterior_to_dict(summary, prior, grid, q, args.quantity)
    run = Run("bayes", argv, run_seeds, config_doc)
    for path in inputs:
        run.input(path)
    out = Path(args.out)
    run.output(report.write_json(out, doc))
    run.output(report.write_text(out.with_suffix(".csv"), report.table_csv(["q", "probability"], zip(doc["support"], doc["pmf"]))))
    run.finish(out)
    emit({"prior": str(prior), "quantity": args.quantity, "mean": doc["mean"],
          "credible_interval": doc["credible_interval"], "prob_greater": doc["prob_greater"], "out": str(out)})


def cmd_report(args, argv):
    doc = report.read_json(args.input)
    stem = Path(args.out)
    paths = report.emit_plot_data(doc, stem)
    run = Run("report", argv, [], {})
    run.input(args.input)
    for p in paths:
        run.output(p)
    run.finish(paths[-1])
    emit({"outputs": [str(p) for p in paths]})


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="CSV file with header a,y")
    p.add_argument("--a-kind", default="continuous", help="continuous | binary | categorical:K")
    p.add_argument("--y-kind", default="continuous", help="continuous | binary | categorical:K")


def _add_training(p):
    p.add_argument("--seed", type=int, default=None, help=f"base seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--config", help="JSON file with training settings; flags override it")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=None)


def _add_levels(p):
    p.add_argument("--a1", type=float, default=None, help="treated level (default 1)")
    p.add_argument("--a0", type=float, default=None, help="control level (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rhoflow", description="Copula-flow sensitivity analysis for unobserved confounding.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="sample a ground-truth SCM to CSV")
    p.add_argument("--scm", required=True, help="table1:K (K=1..6) or binary:SEED")
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="train one flow at a fixed rho")
    _add_data(p)
    _add_training(p)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--out", required=True, help="model JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("curve", help="ACE as a function of rho")
    _add_data(p)
    _add_training(p)
    _add_levels(p)
    p.add_argument("--grid", default="default11", help="default11 | default41 | comma-separated values (write --grid=-0.5,0 when the first is negative)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--models-dir", help="also save each fitted model here")
    p.add_argument("--out", required=True, help="curve JSON (a CSV is written next to it)")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("value", help="rank-based rho at which the ACE vanishes")
    _add_data(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_value)

    p = sub.add_parser("bounds", help="assumption-free bounds for binary data")
    _add_data(p)
    p.add_argument("--curve", help="curve JSON to compare against")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("bayes", help="posterior of a causal quantity under a prior on rho")
    _add_data(p, required=False)
    _add_training(p)
    _add_levels(p)
    p.add_argument("--curve", help="reuse ACE values from a curve JSON instead of training")
    p.add_argument("--grid", default="default41")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--prior", default="uniform", help="uniform | beta:ALPHA,BETA | truncnorm:MU,SIGMA")
    p.add_argument("--quantity", default="ace", help="ace | ey:LEVEL")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--out", required=True, help="posterior JSON (a CSV is written next to it)")
    p.set_defaults(func=cmd_bayes)

    p = sub.add_parser("report", help="plot data (CSV + SVG) for a curve or posterior JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output stem; .csv and .svg are appended")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("rhoflow: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args, argv)
    except RhoFlowError as exc:
        print(f"rhoflow: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        print(f"rhoflow: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
