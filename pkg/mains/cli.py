"""
Command-line entry point of the pipeline.

    python cli.py simulate --config configs/scenario_default.yaml --seed 0 --out data/default
    python cli.py run      --dataset data/default --config configs/run_default.yaml --out runs/default.csv
    python cli.py eval     --trajectory runs/default.csv --dataset data/default --out runs/default_metrics.csv
    python cli.py table    --scenarios configs/scenarios/*.yaml --seeds 0 1 2 --out results
    python cli.py plotdata --trajectory runs/default.csv --dataset data/default --out plots/default

Exit status: 0 on success, 1 on any pipeline error, 2 on bad arguments.
"""

import argparse
import sys

# custom fxs
from scripts.utils.errors import MainsError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mains", description="Magnetic-field aided inertial navigation pipeline")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="scenario file -> dataset directory")
    simulate.add_argument("--config", help="scenario YAML file (defaults when omitted)")
    simulate.add_argument("--geometry", help="array geometry name or geometry table path")
    simulate.add_argument("--seed", type=int, help="overrides the scenario seed")
    simulate.add_argument("--out", required=True, help="dataset directory to write")

    run = commands.add_parser("run", help="dataset + run configuration -> trajectory file")
    run.add_argument("--dataset", required=True, help="dataset directory")
    run.add_argument("--config", help="run configuration YAML file")
    run.add_argument("--geometry", help="array geometry overriding the dataset's geometry.txt")
    run.add_argument("--order", type=int, help="polynomial field model order")
    run.add_argument("--no-mag", action="store_true", help="disable magnetometer updates (stand-alone INS)")
    run.add_argument("--aiding-seconds", type=float, help="position-aiding window length, s (default 60)")
    run.add_argument("--out", required=True, help="trajectory CSV to write")

    evaluate = commands.add_parser("eval", help="trajectory + ground truth -> metrics")
    evaluate.add_argument("--trajectory", required=True, help="trajectory CSV written by 'run'")
    evaluate.add_argument("--dataset", required=True, help="dataset directory holding groundtruth.csv")
    evaluate.add_argument("--aiding-seconds", type=float, default=60.0,
                          help="initial segment excluded from the metrics, s (default 60)")
    evaluate.add_argument("--speed-error", choices=("scalar", "vector"), default="scalar")
    evaluate.add_argument("--system", default="MAINS", help="label of the system column")
    evaluate.add_argument("--verbose", action="store_true", help="report both speed-error variants")
    evaluate.add_argument("--out", help="CSV file for the machine-readable metrics")

    table = commands.add_parser("table", help="batch over scenarios/datasets -> results grid")
    table.add_argument("--scenarios", nargs="*", default=[], help="scenario YAML files")
    table.add_argument("--dataset", nargs="*", default=[], dest="datasets", help="dataset directories")
    table.add_argument("--config", help="run configuration YAML file")
    table.add_argument("--order", type=int)
    table.add_argument("--aiding-seconds", type=float)
    table.add_argument("--seed", type=int, nargs="*", dest="seeds", help="seeds per scenario")
    table.add_argument("--speed-error", choices=("scalar", "vector"), default="scalar")
    table.add_argument("--out", default="results", help="output directory")

    plotdata = commands.add_parser("plotdata", help="trajectory + truth + field -> plot data")
    plotdata.add_argument("--trajectory", required=True)
    plotdata.add_argument("--dataset", required=True)
    plotdata.add_argument("--baseline", help="stand-alone INS trajectory CSV to overlay")
    plotdata.add_argument("--config", help="scenario YAML used to rebuild the field map")
    plotdata.add_argument("--aiding-seconds", type=float, default=60.0)
    plotdata.add_argument("--out", required=True, help="output directory")
    return parser


def dispatch(args):
    # flows are imported lazily so '--help' stays fast
    from flows import eval_flow, plotdata_flow, run_flow, run_overrides, simulate_flow

    if args.command == "simulate":
        path = simulate_flow(args.config, args.out, args.seed, {"geometry": args.geometry})
        print(f"dataset written to {path}")
    elif args.command == "run":
        overrides = run_overrides(args.order, args.no_mag, args.aiding_seconds)
        path = run_flow(args.dataset, args.out, args.config, args.geometry, overrides)
        print(f"trajectory written to {path}")
    elif args.command == "eval":
        report = eval_flow(args.trajectory, args.dataset, args.out, args.aiding_seconds,
                           args.speed_error, args.verbose, args.system)
        from scripts.evaluation import format_table, metrics_table
        print(format_table(metrics_table([(args.dataset, args.system, report)])))
    elif args.command == "table":
        from orchestration import table_orchestration_flow
        overrides = run_overrides(args.order, False, args.aiding_seconds)
        grid = table_orchestration_flow(args.scenarios + args.datasets, args.out, args.config,
                                        args.seeds, overrides, args.speed_error)
        from scripts.evaluation import format_table
        print(format_table(grid))
    elif args.command == "plotdata":
        path = plotdata_flow(args.trajectory, args.dataset, args.out, args.baseline,
                             args.config, args.aiding_seconds)
        print(f"plot data written to {path}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except MainsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
