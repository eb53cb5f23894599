"""Command-line entry point.

Subcommands:
  synth       write a synthetic calibration dataset as CSV
  calibrate   build per-client digest messages from a dataset CSV
  predict     print the prediction set for a single test covariate
  experiment  Monte Carlo coverage study, report written as CSV
  bench       per-prediction speedup of the coreset path

Exit codes: 0 success, 2 configuration error, 3 degenerate group,
4 ingestion parse error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import datagen
from .conformal import CALIBRATOR_KINDS, ConditionalCalibrator, CalibrationData, predict_regression
from .datagen import IngestError, SynthConfig, substream
from .federation import ClientDataset, ProtocolError, message_to_json, run_round
from .groups import CoveringError, GroupFamily, family_from_json, membership_vector
from .harness import (
    DEFAULT_FAMILY,
    DegenerateGroupError,
    ExperimentConfig,
    bench_speedup,
    format_report_table,
    run_experiment,
    write_report_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_INGEST = 4


class ConfigError(ValueError):
    pass


def _parse_family(arg: str | None) -> GroupFamily:
    if arg is None:
        return DEFAULT_FAMILY
    try:
        return family_from_json(arg)
    except Exception as exc:
        raise ConfigError(f"bad --groups value: {exc}") from exc


def _parse_mixture(arg: str, n_clients: int) -> tuple[float, ...]:
    if arg == "uniform":
        return tuple(1.0 / n_clients for _ in range(n_clients))
    try:
        pi = tuple(float(v) for v in json.loads(arg))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad --mixture value: {exc}") from exc
    if len(pi) != n_clients:
        raise ConfigError(f"--mixture has {len(pi)} weights for {n_clients} clients")
    if abs(sum(pi) - 1.0) > 1e-9:
        raise ConfigError("--mixture weights must sum to 1")
    return pi


def _synth_config(args) -> SynthConfig:
    if args.clients < 2:
        raise ConfigError("--clients must be at least 2")
    if args.clients == 4:
        sizes = (1000, 333, 333, 333)
    else:
        sizes = tuple(500 for _ in range(args.clients))
    return SynthConfig(
        seed=args.seed,
        n_clients=args.clients,
        n_per_client=sizes,
        pi=_parse_mixture(args.mixture, args.clients),
    )


def _write_dataset_csv(path, config: SynthConfig) -> None:
    model = datagen.fit_linear(datagen.make_training_set(config))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "x", "y", "score"])
        for k in range(1, config.n_clients + 1):
            x = datagen.sample_covariates(config, k, config.n_per_client[k - 1])
            rng = substream(config.seed, "response", 0, k)
            y = datagen.generate_response(x, k, rng)
            s = datagen.score_absolute(model, x, y)
            for xi, yi, si in zip(x, y, s):
                writer.writerow([k, repr(float(xi)), repr(float(yi)), repr(float(si))])


def _read_dataset_csv(path, mixture_arg: str) -> list[ClientDataset]:
    by_client: dict[int, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["client_id", "x", "y", "score"]:
            raise IngestError(f"bad dataset header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            try:
                by_client.setdefault(int(row[0]), []).append(
                    (float(row[1]), float(row[3]))
                )
            except (IndexError, ValueError) as exc:
                raise IngestError(f"row {lineno}: {exc}") from exc
    if not by_client:
        raise IngestError("dataset has no rows")
    ids = sorted(by_client)
    pi = _parse_mixture(mixture_arg, len(ids))
    return [
        ClientDataset(
            cid,
            np.array([x for x, _ in by_client[cid]]),
            np.array([s for _, s in by_client[cid]]),
            pi[i],
        )
        for i, cid in enumerate(ids)
    ]


def cmd_synth(args) -> int:
    if not args.out:
        raise ConfigError("synth requires --out")
    _write_dataset_csv(args.out, _synth_config(args))
    print(f"wrote dataset to {args.out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    datasets = _read_dataset_csv(args.dataset, args.mixture)
    family = _parse_family(args.groups)
    round_ = run_round(datasets, family, args.delta)
    out = sys.stdout if args.out is None else open(args.out, "w")
    try:
        for message in round_.messages:
            print(message_to_json(message), file=out)
    finally:
        if out is not sys.stdout:
            out.close()
    print(
        f"{len(round_.messages)} messages, {len(round_.coreset)} coreset rows, "
        f"{round_.wire_bytes} wire bytes",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    datasets = _read_dataset_csv(args.dataset, args.mixture)
    family = _parse_family(args.groups)
    round_ = run_round(datasets, family, args.delta)
    data = CalibrationData.from_coreset(round_.coreset, round_.test_weight)
    calibrator = ConditionalCalibrator(data, args.alpha)
    feature = membership_vector(args.x, family)
    s_star = calibrator.threshold(feature)
    center = args.prediction if args.prediction is not None else 0.0
    ps = predict_regression(center, s_star)
    print(
        f"x={args.x} pattern={''.join(map(str, feature))} threshold={s_star:.6f} "
        f"interval=[{ps.center - ps.radius:.6f}, {ps.center + ps.radius:.6f}]"
    )
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    kinds = tuple(k.strip() for k in args.calibrators.split(",") if k.strip())
    bad = [k for k in kinds if k not in CALIBRATOR_KINDS]
    if bad:
        raise ConfigError(f"unknown calibrators {bad}; choose from {CALIBRATOR_KINDS}")
    return ExperimentConfig(
        calibrators=kinds,
        alpha=args.alpha,
        delta=args.delta,
        trials=args.trials,
        test_points=args.test_points,
        family=_parse_family(args.groups),
        synth=_synth_config(args),
        ingest_path=getattr(args, "ingest", None),
        serial=args.serial,
    )


def cmd_experiment(args) -> int:
    report = run_experiment(_experiment_config(args))
    print(format_report_table(report))
    if args.out:
        write_report_csv(report, args.out)
        print(f"wrote report to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    result = bench_speedup(_experiment_config(args), n_test=max(args.test_points, 20))
    print(
        f"speedup over {result.ratios.size} predictions: "
        f"min {result.min:.2f}x, median {result.median:.2f}x, max {result.max:.2f}x"
    )
    print(
        f"mean per-prediction time: centralized "
        f"{1e3 * result.centralized_times.mean():.2f} ms, "
        f"coreset {1e3 * result.coreset_times.mean():.2f} ms"
    )
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=250.0)
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--test-points", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--groups", help="group family JSON")
    p.add_argument("--mixture", default="uniform", help='JSON weights or "uniform"')
    p.add_argument(
        "--calibrators",
        default="centralized_cp,fcp_marginal,gcfcp_coreset",
        help=f"comma-separated subset of {', '.join(CALIBRATOR_KINDS)}",
    )
    p.add_argument("--out", help="output path")
    p.add_argument("--serial", action="store_true", help="disable trial parallelism")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcfcp",
        description="Group-conditional federated conformal prediction toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic calibration dataset CSV")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="emit digest messages for a dataset CSV")
    p.add_argument("dataset", help="dataset CSV from the synth subcommand")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="prediction set for one test covariate")
    p.add_argument("dataset", help="dataset CSV from the synth subcommand")
    p.add_argument("--x", type=float, required=True, help="test covariate")
    p.add_argument(
        "--prediction", type=float, help="model prediction at x (interval center)"
    )
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", help="Monte Carlo coverage study")
    _add_common(p)
    p.add_argument("--ingest", help="classification score CSV instead of synth data")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bench", help="coreset vs centralized speedup")
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DegenerateGroupError as exc:
        print(f"error: degenerate group: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except IngestError as exc:
        print(f"error: ingestion: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (ConfigError, ProtocolError, CoveringError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
