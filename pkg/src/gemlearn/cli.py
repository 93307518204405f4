"""Command-line entry point: ``gemlearn --dataset rotations --learner gem ...``."""

import argparse
import json
import logging
import sys

from .continuum import DATASETS, ContinuumSpec
from .exceptions import ConfigError, DataNotFoundError, FormatError
from .experiment import (
    ExperimentConfig,
    LearnerConfig,
    expand_grid,
    format_timing,
    grid_search,
    report_timing,
    run,
)
from .learners import KINDS

EXIT_CONFIG = 2
EXIT_DATA = 3

# (tasks, examples per task) when the flags are omitted
DATASET_DEFAULTS = {"synthetic": (5, 500)}
MNIST_DEFAULTS = (20, 1000)


def build_parser():
    p = argparse.ArgumentParser(prog="gemlearn", description=__doc__)
    p.add_argument("--dataset", choices=DATASETS, default="synthetic")
    p.add_argument("--learner", choices=KINDS, default="gem")
    p.add_argument("--tasks", type=int, help="number of tasks (20 for MNIST variants, 5 synthetic)")
    p.add_argument("--examples-per-task", type=int, help="training examples per task (1000 MNIST, 500 synthetic)")
    p.add_argument("--test-per-task", type=int, help="cap on test examples per task (default: full test split)")
    p.add_argument("--epochs", type=int, default=1, help="passes over each task before moving on")
    p.add_argument("--lr", type=float, help="learning rate (default: best published value for the learner)")
    p.add_argument("--memory", type=int, default=5120, help="total episodic memory budget")
    p.add_argument("--gamma", type=float, default=0.5, help="GEM dual bias")
    p.add_argument("--ewc-lambda", type=float, default=1000.0)
    p.add_argument("--no-clone-init", action="store_true", help="independent: fresh init per task")
    p.add_argument("--hidden", type=int, nargs="+", default=[100, 100])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", help="directory holding the MNIST IDX files")
    p.add_argument("--out", help="output directory for JSON / text / CSV reports")
    p.add_argument("--grid", help="JSON file mapping hyper-parameter names to value lists")
    p.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    p.add_argument("--fine-grained", type=int, default=0, metavar="K", help="evaluate every K minibatches")
    p.add_argument("--iid-shuffle", action="store_true", help="single learner on a globally shuffled stream")
    p.add_argument("--timing", nargs="+", metavar="REPORT", help="print a timing table from JSON reports and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args):
    tasks, per_task = DATASET_DEFAULTS.get(args.dataset, MNIST_DEFAULTS)
    spec = ContinuumSpec(
        dataset=args.dataset,
        num_tasks=tasks if args.tasks is None else args.tasks,
        examples_per_task=per_task if args.examples_per_task is None else args.examples_per_task,
        epochs=args.epochs,
        seed=args.seed,
        test_per_task=args.test_per_task,
    )
    learner = LearnerConfig(
        kind=args.learner,
        lr=args.lr,
        memory=args.memory,
        gamma=args.gamma,
        ewc_lambda=args.ewc_lambda,
        clone_init=not args.no_clone_init,
        hidden=tuple(args.hidden),
        seed=args.seed,
    )
    return ExperimentConfig(
        continuum=spec,
        learner=learner,
        fine_grained=args.fine_grained,
        iid_shuffle=args.iid_shuffle,
        data_dir=args.data_dir,
        out=args.out,
    )


def _summary(report):
    fmt = lambda v: "n/a" if v is None else f"{v:+.4f}"
    return f"ACC {report['acc']:.4f}  BWT {fmt(report['bwt'])}  FWT {fmt(report['fwt'])}  ({report['seconds']:.1f}s)"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.timing:
            reports = [json.loads(open(path).read()) for path in args.timing]
            print(format_timing(report_timing(reports)))
            return 0
        config = config_from_args(args)
        if args.grid:
            with open(args.grid) as fh:
                grid = json.load(fh)
            print(f"grid search over {len(expand_grid(grid))} cells", file=sys.stderr)
            best, table = grid_search(grid, config, n_jobs=args.jobs)
            for row in table:
                print(json.dumps(row))
            print("best:", _summary(best))
        else:
            print(_summary(run(config)))
    except DataNotFoundError as exc:
        print(f"error: {exc}\nhint: run with --dataset synthetic when MNIST files are unavailable", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
