"""Command-line interface: gen-data, value, train, run, bench, report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .data_io import (SYNTH_PRESETS, SynthConfig, gen_synthetic, load_csv,
                      save_csv)
from .errors import InvalidArgumentError, UnlearnError
from .harness import (BENCH_METHODS, load_experiment_config, read_rounds_csv,
                      run_continuous_deletion, run_efficiency_bench,
                      emit_report, write_aggregate_csv, write_bench_csv,
                      aggregate_rounds)
from .losses import LossKind
from .models import evaluate, train
from .valuation import (KNN_SHAPLEY, LEAVE_ONE_OUT, ValuationMethod,
                        ValueProfile, compute_values, save_values_csv)

log = logging.getLogger(__name__)

USAGE_ERROR = 2


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UnlearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvwu",
        description="Value-weighted certified unlearning experiments.")
    parser.add_argument("--version", action="version", version=f"dvwu {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    p.add_argument("--preset", choices=sorted(SYNTH_PRESETS),
                   help="named generator preset (overridable by flags)")
    p.add_argument("--n", type=int)
    p.add_argument("--d-informative", type=int)
    p.add_argument("--d-redundant", type=int)
    p.add_argument("--positive-ratio", type=float)
    p.add_argument("--noise-ratio", type=float)
    p.add_argument("--cube-side", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("value", help="compute data values and deletion weights")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--utility-data", help="reference CSV (defaults to --data)")
    p.add_argument("--label-column", default="label")
    p.add_argument("--positive-token", default="1")
    p.add_argument("--method", choices=["knn-sv", "loo"], default="knn-sv")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--loss", default="logistic")
    p.add_argument("--lam", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--zero-tol", type=float, default=1e-9)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_value)

    p = sub.add_parser("train", help="train a regularized linear model")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--positive-token", default="1")
    p.add_argument("--loss", default="logistic")
    p.add_argument("--lam", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out", help="write parameters as JSON")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("run", help="run a continuous-deletion experiment")
    p.add_argument("--config", required=True,
                   help="key=value config file or an emitted manifest.json")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("bench", help="time one deletion for each method")
    p.add_argument("--config", required=True)
    p.add_argument("--deletion-size", type=int)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--methods", default=",".join(BENCH_METHODS))
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(handler=_cmd_bench)

    p = sub.add_parser("report", help="recompute aggregates from a rounds.csv")
    p.add_argument("--rounds", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(handler=_cmd_report)
    return parser


def _require_file(path: str) -> None:
    if not os.path.exists(path):
        raise InvalidArgumentError(f"no such file: {path}")


def _cmd_gen_data(args) -> int:
    base = SYNTH_PRESETS[args.preset] if args.preset else None
    fields = {"n": args.n, "d_informative": args.d_informative,
              "d_redundant": args.d_redundant, "positive_ratio": args.positive_ratio,
              "noise_ratio": args.noise_ratio, "cube_side": args.cube_side}
    fields = {k: v for k, v in fields.items() if v is not None}
    if base is not None:
        raw = {**dataclasses.asdict(base), **fields, "seed": args.seed}
    else:
        missing = {"n", "d_informative"} - set(fields)
        if missing:
            print(f"error: gen-data needs --preset or at least {sorted(missing)}",
                  file=sys.stderr)
            return USAGE_ERROR
        raw = {**fields, "seed": args.seed}
    data = gen_synthetic(SynthConfig(**raw))
    save_csv(data, args.out)
    print(f"wrote {data.n} rows x {data.d} features to {args.out}")
    return 0


def _cmd_value(args) -> int:
    _require_file(args.data)
    data = load_csv(args.data, label_column=args.label_column,
                    positive_token=args.positive_token)
    if args.utility_data:
        _require_file(args.utility_data)
        utility = load_csv(args.utility_data, label_column=args.label_column,
                           positive_token=args.positive_token)
    else:
        utility = data
    kind = KNN_SHAPLEY if args.method == "knn-sv" else LEAVE_ONE_OUT
    method = ValuationMethod(kind=kind, k=args.k)
    loss = LossKind.from_name(args.loss)
    q = compute_values(method, data, utility, args.lam, loss)
    profile = ValueProfile.from_initial_values(q, alpha=args.alpha,
                                               zero_tol=args.zero_tol)
    save_values_csv(args.out, profile)
    print(f"wrote {len(q)} values to {args.out}")
    return 0


def _cmd_train(args) -> int:
    _require_file(args.data)
    data = load_csv(args.data, label_column=args.label_column,
                    positive_token=args.positive_token)
    model = train(data, args.lam, LossKind.from_name(args.loss), tol=args.tol)
    metrics = evaluate(model, data)
    print(f"trained on {data.n} rows; training accuracy {metrics.accuracy:.4f}, "
          f"parameter norm {float(np.linalg.norm(model.w)):.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"w": model.w.tolist(), "lam": args.lam, "loss": args.loss},
                      fh, indent=2)
            fh.write("\n")
        print(f"wrote parameters to {args.out}")
    return 0


def _cmd_run(args) -> int:
    _require_file(args.config)
    cfg = load_experiment_config(args.config)
    report = run_continuous_deletion(cfg)
    paths = emit_report(report, args.out)
    failures = [rep.repetition for rep in report.repetitions if rep.error]
    done = len(report.repetitions) - len(failures)
    print(f"completed {done}/{len(report.repetitions)} repetitions; "
          f"report in {os.path.abspath(args.out)}")
    if failures:
        print(f"failed repetitions: {failures}", file=sys.stderr)
    return 0 if done else 1


def _cmd_bench(args) -> int:
    _require_file(args.config)
    cfg = load_experiment_config(args.config)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    results = run_efficiency_bench(cfg, deletion_size=args.deletion_size,
                                   methods=methods, trials=args.trials)
    write_bench_csv(results, args.out)
    for r in results:
        print(f"{r.method:>16}: {r.total_s * 1000:9.3f} ms median of {r.trials}")
    print(f"wrote {args.out}")
    return 0


def _cmd_report(args) -> int:
    _require_file(args.rounds)
    records = read_rounds_csv(args.rounds)
    write_aggregate_csv(aggregate_rounds(records), args.out)
    print(f"aggregated {len(records)} round records into {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
