"""Command-line interface: ``permweight {weight,estimate,balance,simulate}``.

Every output file starts with ``#`` comment lines recording the package
version, the resolved configuration and the master seed.

Exit codes: 0 success, 1 usage or validation error, 2 I/O error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .baselines import PropensityKind, fit_propensity, ipsw_weights
from .classifiers import ClassifierSpec, Family, LogisticParams, Loss, ScoringRuleError
from .data import (
    DataError,
    Dataset,
    EstimandRequest,
    Normalization,
    Schema,
    TreatmentKind,
    WeightSet,
    load_dataset,
    read_weights,
    write_weights,
)
from .diagnostics import Basis, functional_discrepancy
from .estimators import (
    OutcomeKind,
    direct_method,
    dose_response_curve,
    doubly_robust,
    fit_outcome_model,
    unconditional_bootstrap_interval,
    weighted_means_binary,
)
from .pw import PwConfig, ReplicateError, StochasticConfig, estimate_pw_weights, estimate_pw_weights_stochastic
from .simulation import ESTIMATORS, METHODS, DgpKind, DgpSpec, ExperimentConfig, run_experiment

OUTPUT_DIR_ENV = "PERMWEIGHT_OUTPUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads; results do not depend on it")
    p.add_argument("--output-dir", default=None,
                   help=f"output directory (default ${OUTPUT_DIR_ENV} or the current directory)")
    p.add_argument("--prefix", default=None, help="output file name prefix")
    p.add_argument("--format", choices=("table", "json"), default="table",
                   help="primary output format; a JSON report is always written")
    p.add_argument("--config", default=None,
                   help="JSON file of option defaults; explicit flags take precedence")


def _add_dataset(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV or TSV file with a header row")
    p.add_argument("--treatment", default="a", help="treatment column (default a)")
    p.add_argument("--outcome", default=None, help="outcome column")
    p.add_argument("--covariates", type=_csv_list, required=True,
                   help="comma-separated covariate columns")
    p.add_argument("--treatment-kind", choices=("binary", "continuous"), default=None,
                   help="override value-based treatment kind inference")


def _add_weighting(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("pw", "ipsw", "unweighted"), default="pw")
    p.add_argument("--classifier", choices=("logit", "boosting"), default="logit")
    p.add_argument("--loss", default=None,
                   help="scoring rule: log, exponential or squared (default: log for "
                        "logit, exponential for boosting)")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--normalization", choices=("none", "hajek"), default="none")
    p.add_argument("--l2", type=float, default=0.0, help="ridge penalty for logit")
    p.add_argument("--num-trees", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--min-leaf-size", type=int, default=None)
    p.add_argument("--subsample", type=float, default=None)
    p.add_argument("--cv-folds", type=int, default=None,
                   help="folds for tuning boosting (default 3; 0 disables)")
    p.add_argument("--stochastic", action="store_true", help="mini-batch training (logit only)")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--step-size", type=float, default=1.0)
    p.add_argument("--gps", action="store_true",
                   help="use the normal-linear GPS for continuous IPSW")
    p.add_argument("--boosted-ps", action="store_true",
                   help="boosted instead of logistic propensity model (binary IPSW)")
    p.add_argument("--unstabilized", action="store_true", help="binary IPSW without stabilization")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="permweight", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("weight", help="estimate weights for a dataset")
    _add_common(p)
    _add_dataset(p)
    _add_weighting(p)
    p.add_argument("--traces", action="store_true", help="also write per-replicate traces")
    p.set_defaults(func=cmd_weight)

    p = sub.add_parser("estimate", help="causal estimates from weights and outcome models")
    _add_common(p)
    _add_dataset(p)
    _add_weighting(p)
    p.add_argument("--weights", default=None, help="weights file; skips weight estimation")
    p.add_argument("--estimator", choices=("weighting", "dm", "dr"), default="weighting")
    p.add_argument("--outcome-model", choices=("linear", "boosted"), default="linear")
    p.add_argument("--grid", default=None,
                   help="evaluation points: 'lo:hi:count' or a comma list (continuous)")
    p.add_argument("--bandwidth", default="auto")
    p.add_argument("--interval", action="store_true",
                   help="percentile interval from per-replicate estimates (pw only)")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("balance", help="functional discrepancy report")
    _add_common(p)
    _add_dataset(p)
    p.add_argument("--weights", default=None, help="weights file (default: uniform)")
    p.add_argument("--basis", choices=[b.value for b in Basis], default="linear")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("simulate", help="Kang-Schafer Monte Carlo experiment")
    _add_common(p)
    p.add_argument("--dgp", choices=[k.value for k in DgpKind], required=True)
    p.add_argument("--misspecified", action="store_true",
                   help="observe transformed covariates instead of the generating ones")
    p.add_argument("--n", type=int, default=2000, help="units per simulated dataset (>= 50)")
    p.add_argument("--sims", type=int, default=100, help="number of simulated datasets (>= 2)")
    p.add_argument("--methods", type=_csv_list, default=["unweighted", "ps", "pw-glm"],
                   help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--estimators", type=_csv_list, default=["weighting"],
                   help=f"comma list from {','.join(ESTIMATORS)}")
    p.add_argument("--replicates", type=int, default=100, help="PW bootstrap replicates")
    p.add_argument("--population-truth", action="store_true",
                   help="score against population rather than in-sample truth")
    p.set_defaults(func=cmd_simulate)
    return parser


# -- helpers ---------------------------------------------------------------------------


def _resolved(args: argparse.Namespace) -> dict[str, Any]:
    skip = {"func", "config", "threads", "output_dir"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _meta(args: argparse.Namespace) -> dict[str, Any]:
    return {"permweight_version": __version__, "seed": args.seed, "config": _resolved(args)}


def _out_path(args: argparse.Namespace, name: str) -> Path:
    base = args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "."
    out = Path(base)
    out.mkdir(parents=True, exist_ok=True)
    return out / (f"{args.prefix}-{name}" if args.prefix else name)


def _write_json(path: Path, obj: dict[str, Any]) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _load(args) -> Dataset:
    schema = Schema(args.treatment, tuple(args.covariates), getattr(args, "outcome", None))
    return load_dataset(args.data, schema, args.treatment_kind)


def _classifier_spec(args) -> ClassifierSpec:
    if args.classifier == "logit":
        loss = Loss.parse(args.loss or "log")
        return ClassifierSpec(Family.LOGISTIC, loss, LogisticParams(l2_penalty=args.l2))
    loss = Loss.parse(args.loss or "exponential")
    base = ClassifierSpec.boosting_default(loss)
    overrides = {
        k: v for k, v in {
            "num_trees": args.num_trees, "max_depth": args.max_depth,
            "learning_rate": args.learning_rate, "min_leaf_size": args.min_leaf_size,
            "subsample_fraction": args.subsample,
        }.items() if v is not None
    }
    spec = base.with_hyperparameters(overrides) if overrides else base
    folds = 3 if args.cv_folds is None else args.cv_folds
    if overrides or folds == 0:
        # explicit hyperparameters replace the tuning grid
        return ClassifierSpec(Family.BOOSTING, loss, boosting=spec.boosting)
    return ClassifierSpec(Family.BOOSTING, loss, boosting=spec.boosting, cv_folds=folds,
                          cv_grid=base.cv_grid)


def _pw_config(args) -> PwConfig:
    stochastic = None
    if args.stochastic:
        stochastic = StochasticConfig(args.batch_size, args.iterations, args.step_size)
    return PwConfig(_classifier_spec(args), args.replicates, Normalization(args.normalization),
                    stochastic)


def _weights(args, ds: Dataset):
    """Returns (WeightSet, PwResult or None)."""
    if args.method == "unweighted":
        return WeightSet(np.ones(ds.n), 1, Normalization.NONE, 0, "unweighted"), None
    if args.method == "ipsw":
        if ds.treatment_kind is TreatmentKind.CONTINUOUS:
            if not args.gps:
                raise UsageError("--method ipsw on continuous treatment requires --gps")
            model = fit_propensity(ds, PropensityKind.NORMAL_LINEAR, seed=args.seed)
        else:
            kind = PropensityKind.BOOSTED if args.boosted_ps else PropensityKind.LOGISTIC
            spec = _classifier_spec(args) if args.boosted_ps else None
            model = fit_propensity(ds, kind, spec, seed=args.seed)
        ws = ipsw_weights(model, ds, stabilized=not args.unstabilized)
        if args.normalization == "hajek":
            ws = ws.hajek()
        return ws, None
    config = _pw_config(args)
    if config.stochastic is not None:
        res = estimate_pw_weights_stochastic(ds, config, args.seed)
    else:
        res = estimate_pw_weights(ds, config, args.seed, threads=max(1, args.threads),
                                  keep_traces=getattr(args, "traces", False))
    return res.weight_set, res


def _parse_grid(text: str | None, ds: Dataset) -> np.ndarray:
    if text is None:
        lo, hi = np.quantile(ds.treatment, [0.05, 0.95])
        return np.linspace(lo, hi, 25)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError("--grid range must be 'lo:hi:count'")
        return np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))
    return np.array([float(v) for v in _csv_list(text)])


def _bandwidth(text: str):
    return "auto" if str(text).lower() == "auto" else float(text)


# -- subcommands -----------------------------------------------------------------------


def cmd_weight(args) -> int:
    ds = _load(args)
    ws, res = _weights(args, ds)
    meta = _meta(args)
    write_weights(ws, _out_path(args, "weights.csv"), meta)
    report = {**meta, "weight_set": ws.report()}
    if res is not None:
        report["classifier"] = res.classifier.to_dict()
        if res.cv_table:
            report["cv"] = [{"hyperparameters": p, "risk": r} for p, r in res.cv_table]
    _write_json(_out_path(args, "weights.json"), report)
    if res is not None and res.traces:
        traces = [{"replicate_index": t.replicate_index, "risk": t.risk,
                   "clamp_count": t.clamp_count, "attempts": t.attempts,
                   "weights": t.weights} for t in res.traces]
        _write_json(_out_path(args, "traces.json"), {**meta, "traces": traces})
    return EXIT_OK


def cmd_estimate(args) -> int:
    ds = _load(args)
    ds.require_outcome()
    if args.weights:
        w = read_weights(args.weights)
        if w.shape[0] != ds.n:
            raise DataError(f"weights file has {w.shape[0]} rows but dataset has {ds.n}")
        ws = WeightSet(w, 1, Normalization.NONE, 0, "file")
    else:
        ws, _ = _weights(args, ds)
    meta = _meta(args)
    grid = None if ds.is_binary else _parse_grid(args.grid, ds)
    bw = _bandwidth(args.bandwidth)
    if args.estimator == "weighting":
        if ds.is_binary:
            est = weighted_means_binary(ds, ws)
            grid, values, header = np.array([0.0, 1.0]), est.as_array(), {"ate": est.ate}
        else:
            curve = dose_response_curve(ds, ws, grid, bw)
            grid, values, header = curve.grid, curve.values, curve.header()
    else:
        kind = OutcomeKind.LINEAR if args.outcome_model == "linear" else OutcomeKind.BOOSTED
        mu = fit_outcome_model(ds, kind, ws, args.seed)
        if args.estimator == "dm":
            curve = direct_method(ds, mu, grid)
        else:
            curve = doubly_robust(ds, mu, ws, grid, bw)
        grid, values, header = curve.grid, curve.values, curve.header()
        if ds.is_binary:
            header["ate"] = float(values[1] - values[0])
    header["weights"] = ws.report()
    if args.interval:
        if args.method != "pw" or args.weights:
            raise UsageError("--interval needs --method pw without --weights")
        estimand = EstimandRequest("binary-means") if ds.is_binary else \
            EstimandRequest("dose-response", tuple(grid))
        iv = unconditional_bootstrap_interval(ds, _pw_config(args), estimand, args.seed,
                                              args.level, max(1, args.threads), bw)
        header["interval"] = {"level": iv.level, "lower": iv.lower, "upper": iv.upper}
    full = {**meta, **header, "grid": grid, "estimate": values}
    _write_json(_out_path(args, "estimate.json"), full)
    with open(_out_path(args, "estimate.csv"), "w") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
        fh.write("a,estimate\n")
        for a0, v in zip(grid, values):
            fh.write(f"{float(a0)!r},{float(v)!r}\n")
    return EXIT_OK


def cmd_balance(args) -> int:
    ds = _load(args)
    if args.weights:
        w = read_weights(args.weights)
        if w.shape[0] != ds.n:
            raise DataError(f"weights file has {w.shape[0]} rows but dataset has {ds.n}")
    else:
        w = np.ones(ds.n)
    report = functional_discrepancy(ds, w, Basis(args.basis))
    meta = _meta(args)
    report.write_table(_out_path(args, "balance.csv"), meta)
    report.write_json(_out_path(args, "balance.json"), meta)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.sims < 2:
        raise UsageError("--sims must be at least 2")
    for m in args.methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    for e in args.estimators:
        if e not in ESTIMATORS:
            raise UsageError(f"unknown estimator {e!r}; choose from {', '.join(ESTIMATORS)}")
    dgp = DgpSpec(DgpKind(args.dgp), args.misspecified, args.n, args.seed)
    report = run_experiment(dgp, args.methods, args.estimators, args.sims, args.seed,
                            ExperimentConfig(replicates=args.replicates),
                            threads=max(1, args.threads),
                            in_sample_truth=not args.population_truth)
    meta = _meta(args)
    report.write_table(_out_path(args, "report.csv"), meta)
    report.write_json(_out_path(args, "report.json"), meta)
    report.write_curves(_out_path(args, "curves.csv"), meta)
    if args.format == "table":
        for r in report.rows:
            print(f"{r.method:12s} {r.estimator:10s} bias {r.bias:8.3f} ± {r.bias_se:.3f}  "
                  f"IRMSE {r.irmse:8.3f} ± {r.irmse_se:.3f}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    command = next((tok for tok in argv if tok in subparsers), None)
    if known.config and command is not None:
        with open(known.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise UsageError("--config must hold a JSON object")
        sub = subparsers[command]
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
        unknown = sorted(set(cfg) - set(actions) - {"command"})
        if unknown:
            raise UsageError(f"unknown keys in --config: {unknown}")
        cfg.pop("command", None)
        for dest, value in cfg.items():
            actions[dest].required = False
            if isinstance(value, list) and actions[dest].type is _csv_list:
                cfg[dest] = ",".join(map(str, value))
        sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, DataError, ScoringRuleError, ValueError) as exc:
        print(f"permweight: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"permweight: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, np.linalg.LinAlgError, ReplicateError, ArithmeticError) as exc:
        print(f"permweight: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
