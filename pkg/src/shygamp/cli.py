"""Command-line entry points: train, predict, eval, synth, moments-bench.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
import uuid

import numpy as np

from . import bench, dataio, model, synth
from .engine import GampConfig, run
from .errors import ShygampError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_train_flags(p):
    p.add_argument("--mode", choices=("spa", "msa"), default="spa")
    p.add_argument("--moments", choices=("gm", "is", "ni", "ts"), default="gm")
    p.add_argument("--tuner", choices=("em", "sure", "fixed"), default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="Laplacian rate for min-sum (required with --tuner fixed)")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--damping", type=float, default=1.0)
    p.add_argument("--no-adaptive-damping", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def _add_data_flags(p):
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("svmlight", "csv"), default="svmlight")
    p.add_argument("--label-column", default="label",
                   help="label column name for --format csv")
    p.add_argument("--preprocess", default="",
                   help="comma-separated subset of log2,zscore")
    p.add_argument("--whole-data-scaling", action="store_true",
                   help="fit z-score statistics on the full dataset instead "
                        "of the training split")


def build_parser() -> _Parser:
    parser = _Parser(prog="shygamp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit weights on one dataset")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--weights-out", default=None, help="save weights (.npz)")

    p = sub.add_parser("predict", help="classify samples with saved weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("svmlight", "csv"), default="svmlight")
    p.add_argument("--label-column", default="label")
    p.add_argument("--out", default=None, help="write one label per line")

    p = sub.add_parser("eval", help="train/test or cross-fold evaluation")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--test-input", default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--report", default=None)

    p = sub.add_parser("synth", help="synthetic sweeps with analytic error")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--ber", type=float, default=0.10)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--sweep", choices=("M", "N", "K", "lambda"), default=None)
    p.add_argument("--sweep-values", default=None,
                   help="comma-separated values for --sweep")
    p.add_argument("--mc-samples", type=int, default=10**6,
                   help="draws for the analytic error estimate")
    p.add_argument("--csv", default=None, help="write the sweep table here")
    p.add_argument("--report", default=None)
    _add_train_flags(p)

    p = sub.add_parser("moments-bench",
                       help="accuracy/runtime tables for the moment methods")
    p.add_argument("--D", type=int, default=4)
    p.add_argument("--qp", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--methods", default="gm,is,ni,ts")
    p.add_argument("--samples", type=int, default=500,
                   help="moment computations per runtime measurement")
    p.add_argument("--is-samples", type=int, default=1500)
    p.add_argument("--ni-grid", type=int, default=7)
    p.add_argument("--gm-grid", type=int, default=7)
    p.add_argument("--max-ni-samples", type=int, default=3)
    p.add_argument("--runtime", action="store_true",
                   help="measure runtime instead of accuracy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None)
    return parser


def _config_from_args(args) -> GampConfig:
    try:
        return GampConfig(
            mode=args.mode,
            max_iters=args.max_iters,
            tol=args.tol,
            damping=args.damping,
            adaptive_damping=not args.no_adaptive_damping,
            seed=args.seed,
            moment_method=args.moments,
            tuner=args.tuner,
            lam=args.lam,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_dataset(args) -> dataio.Dataset:
    if args.format == "svmlight":
        return dataio.read_svmlight(args.input)
    return dataio.read_csv(args.input, args.label_column)


def _steps(args):
    return tuple(s for s in args.preprocess.split(",") if s)


def _final_hyper(result) -> dict:
    return result.trace[-1].hyper if result.trace else {}


def _report(args, config, result, dataset_info, error=None, se=None,
            train_seconds=0.0, eval_seconds=0.0, weights=None):
    sparsity = model.sparsity_report(weights) if weights is not None and \
        model.l0(weights) > 0 else None
    rec = dataio.ReportRecord(
        run_id=uuid.uuid4().hex,
        mode=config.mode,
        moment_method=config.moment_method,
        tuner=config.tuner,
        iterations=result.iterations_run if result else 0,
        converged=bool(result.converged) if result else False,
        tuning_seconds=result.tuning_time if result else 0.0,
        training_seconds=max(train_seconds - (result.tuning_time if result else 0.0), 0.0),
        evaluation_seconds=eval_seconds,
        error_rate=error,
        error_rate_se=se,
        k99=sparsity.k99 if sparsity else None,
        l0=sparsity.l0 if sparsity else (0 if weights is not None else None),
        hyperparameters=_final_hyper(result) if result else {},
        seed=args.seed,
        dataset=dataset_info,
    )
    text = rec.to_json()
    if getattr(args, "report", None):
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return rec


def _cmd_train(args) -> int:
    config = _config_from_args(args)
    dataset = _load_dataset(args)
    steps = _steps(args)
    if steps:
        dataset = dataio.preprocess(dataset, steps)
    tic = time.perf_counter()
    result = run(dataset, config)
    train_seconds = time.perf_counter() - tic
    if args.weights_out:
        np.savez(
            args.weights_out,
            weights=result.weights.weights,
            label_values=np.array(dataset.label_values or [], dtype=float),
        )
    info = {
        "path": args.input,
        "format": args.format,
        "num_samples": dataset.num_samples,
        "num_features": dataset.num_features,
        "num_classes": dataset.num_classes,
        "preprocess": list(steps),
        "label_values": list(dataset.label_values or []),
    }
    _report(args, config, result, info, train_seconds=train_seconds,
            weights=result.weights)
    return 0


def _cmd_predict(args) -> int:
    blob = np.load(args.weights)
    weights = model.WeightMatrix(blob["weights"])
    if args.format == "svmlight":
        dataset = dataio.read_svmlight(args.input, n_features=weights.num_features)
    else:
        dataset = dataio.read_csv(args.input, args.label_column)
    labels = model.predict_labels(weights, dataset.features)
    values = blob.get("label_values")
    if values is not None and values.size:
        out_labels = [values[i - 1] for i in labels]
        lines = [f"{v:g}" for v in out_labels]
    else:
        lines = [str(i) for i in labels]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_eval(args) -> int:
    config = _config_from_args(args)
    dataset = _load_dataset(args)
    steps = _steps(args)
    if args.test_input is None and args.folds is None:
        raise UsageError("eval needs --test-input or --folds")

    def run_one(train_set, test_set, seed):
        cfg = _config_from_args(args)
        cfg.seed = seed
        if steps:
            if args.whole_data_scaling:
                pre = dataio.Preprocessor(steps).fit(dataset)
            else:
                pre = dataio.Preprocessor(steps).fit(train_set)
            train_set = pre.transform(train_set)
            test_set = pre.transform(test_set)
        tic = time.perf_counter()
        result = run(train_set, cfg)
        t_train = time.perf_counter() - tic
        tic = time.perf_counter()
        predicted = model.predict_labels(result.weights, test_set.features)
        errors = int(np.sum(predicted != test_set.labels))
        t_eval = time.perf_counter() - tic
        return result, errors, test_set.num_samples, t_train, t_eval

    total_err = total_test = 0
    train_seconds = eval_seconds = 0.0
    result = None
    if args.folds is not None:
        for fold in range(args.folds):
            train_set, test_set = dataio.split_folds(
                dataset, fold, args.folds, seed=args.seed
            )
            result, errors, n_test, t_train, t_eval = run_one(
                train_set, test_set, args.seed + fold
            )
            total_err += errors
            total_test += n_test
            train_seconds += t_train
            eval_seconds += t_eval
    else:
        if args.format == "svmlight":
            test_set = dataio.read_svmlight(
                args.test_input, n_features=dataset.num_features
            )
        else:
            test_set = dataio.read_csv(args.test_input, args.label_column)
        result, errors, n_test, train_seconds, eval_seconds = run_one(
            dataset, test_set, args.seed
        )
        total_err, total_test = errors, n_test

    mu, sd = dataio.error_rate_estimate(total_err, total_test)
    info = {
        "path": args.input,
        "format": args.format,
        "num_samples": dataset.num_samples,
        "num_features": dataset.num_features,
        "num_classes": dataset.num_classes,
        "preprocess": list(steps),
        "label_values": list(dataset.label_values or []),
        "folds": args.folds,
        "total_test_samples": total_test,
    }
    _report(args, config, result, info, error=mu, se=sd,
            train_seconds=train_seconds, eval_seconds=eval_seconds,
            weights=result.weights if result else None)
    return 0


def _synth_point(args, m, n, k, lam) -> tuple[float, float, float]:
    """Mean analytic error, its SE, and mean train time over the trials."""
    errs, times = [], []
    for t in range(args.trials):
        base = args.seed + 1000 * t
        mdl = synth.make_class_model(
            n, k, args.D, args.ber, seed=base,
            mc_samples=max(10_000, args.mc_samples // 10),
        )
        ds = synth.gen_dataset(mdl, m, seed=base + 1)
        cfg = _config_from_args(args)
        cfg.seed = base
        if lam is not None:
            cfg.lam = lam
        tic = time.perf_counter()
        result = run(ds, cfg)
        times.append(time.perf_counter() - tic)
        err, se = synth.expected_error(
            result.weights, mdl, mc_samples=args.mc_samples, seed=base + 2
        )
        errs.append(err)
        last_se = se
    mean = float(np.mean(errs))
    se = (
        float(np.std(errs, ddof=1) / np.sqrt(len(errs)))
        if len(errs) > 1
        else last_se
    )
    return mean, se, float(np.mean(times))


def _cmd_synth(args) -> int:
    config = _config_from_args(args)  # validate combination up front
    if args.sweep and not args.sweep_values:
        raise UsageError("--sweep needs --sweep-values")
    if args.sweep == "lambda" and (config.mode, config.tuner) != ("msa", "fixed"):
        raise UsageError("a lambda sweep needs --mode msa --tuner fixed")

    rows = []
    if args.sweep:
        values = [float(v) for v in args.sweep_values.split(",")]
        for value in values:
            m, n, k, lam = args.M, args.N, args.K, args.lam
            if args.sweep == "M":
                m = int(value)
            elif args.sweep == "N":
                n = int(value)
            elif args.sweep == "K":
                k = int(value)
            else:
                lam = value
            err, se, seconds = _synth_point(args, m, n, k, lam)
            rows.append((value, err, se, seconds))
            print(f"sweep {args.sweep}={value:g}: error={err:.4f} "
                  f"se={se:.4f} runtime={seconds:.2f}s")
        if args.csv:
            with open(args.csv, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([args.sweep, "error", "se", "runtime_seconds"])
                writer.writerows(rows)
    else:
        err, se, seconds = _synth_point(args, args.M, args.N, args.K, args.lam)
        info = {
            "generator": "synthetic",
            "M": args.M, "N": args.N, "K": args.K, "D": args.D,
            "ber": args.ber, "trials": args.trials,
        }

        class _Shim:  # reuse the report path with synthetic metadata
            iterations_run = 0
            converged = True
            tuning_time = 0.0
            trace = []

        shim = _Shim()
        _report(args, config, shim, info, error=err, se=se,
                train_seconds=seconds)
    return 0


def _cmd_moments_bench(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    for m in methods:
        if m not in bench.METHODS:
            raise UsageError(f"unknown method {m!r}")
    rows = []
    if args.runtime:
        table = bench.runtime_table(
            num_classes=args.D, q_p=args.qp, samples=args.samples,
            seed=args.seed, methods=methods, is_samples=args.is_samples,
            ni_grid=args.ni_grid, gm_grid=args.gm_grid,
            max_ni_samples=args.max_ni_samples,
        )
        header = ["method", f"seconds_per_{args.samples}", "measured_samples"]
        for r in table:
            rows.append([r.method, f"{r.seconds:.6f}", r.measured_samples])
            print(f"{r.method}: {r.seconds:.4f}s per {args.samples} samples "
                  f"(measured on {r.measured_samples})")
    else:
        table = bench.accuracy_table(
            num_classes=args.D, q_p=args.qp, trials=args.trials,
            seed=args.seed, methods=methods, is_samples=args.is_samples,
            ni_grid=args.ni_grid, gm_grid=args.gm_grid,
        )
        header = ["method", "mse_vs_true", "mse_vs_oracle"]
        for r in table:
            oracle = "" if r.mse_vs_oracle is None else f"{r.mse_vs_oracle:.6e}"
            rows.append([r.method, f"{r.mse_vs_true:.6e}", oracle])
            print(f"{r.method}: mse_vs_true={r.mse_vs_true:.4e} "
                  f"mse_vs_oracle={oracle or 'n/a'}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
    "moments-bench": _cmd_moments_bench,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ShygampError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())
