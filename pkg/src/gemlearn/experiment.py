"""Run continual-learning experiments, grid searches and timing tables."""

import csv
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .continuum import ContinuumSpec, build_stream, load_mnist
from .exceptions import ConfigError, DataNotFoundError
from .learners import KINDS, make_learner
from .metrics import RMatrix, evaluate_all

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Best learning rates on MNIST rotations from the published grids.
DEFAULT_LR = {"single": 0.003, "independent": 0.1, "multimodal": 0.1, "ewc": 0.01, "gem": 0.1}

PAPER_GRIDS = {
    "single": {"lr": [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0]},
    "independent": {"lr": [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0], "clone_init": [False, True]},
    "multimodal": {"lr": [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0]},
    "ewc": {
        "lr": [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0],
        "ewc_lambda": [1, 3, 10, 30, 100, 300, 1000, 3000, 10000, 30000],
    },
    "gem": {
        "lr": [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0],
        "memory": [5120],
        "gamma": [round(0.1 * i, 1) for i in range(11)],
    },
}

GRID_KEYS = ("lr", "ewc_lambda", "memory", "gamma", "clone_init")


@dataclass
class LearnerConfig:
    kind: str = "gem"
    lr: float = None
    memory: int = 5120
    gamma: float = 0.5
    ewc_lambda: float = 1000.0
    clone_init: bool = True
    hidden: tuple = (100, 100)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"learner must be one of {KINDS}, got {self.kind!r}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.kind]
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.memory < 0 or self.gamma < 0 or self.ewc_lambda < 0:
            raise ConfigError("memory, gamma and ewc_lambda must be nonnegative")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden sizes must be positive")


@dataclass
class ExperimentConfig:
    continuum: ContinuumSpec = field(default_factory=ContinuumSpec)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    fine_grained: int = 0
    iid_shuffle: bool = False
    data_dir: str = None
    out: str = None

    def __post_init__(self):
        if self.fine_grained < 0:
            raise ConfigError("fine_grained cadence must be >= 0")
        if self.iid_shuffle and self.learner.kind != "single":
            raise ConfigError("--iid-shuffle is only defined for the single learner")
        if self.continuum.dataset == "split-classes" and self.learner.kind == "multimodal":
            raise ConfigError("multimodal needs a shared label space; not available on split-classes")

    def to_dict(self):
        d = asdict(self)
        d["learner"]["hidden"] = list(self.learner.hidden)
        return d


def _build_learner(lcfg, stream):
    head = "per-task-output" if stream.task_classes is not None else "shared"
    return make_learner(
        lcfg.kind,
        n_tasks=stream.num_tasks,
        hidden_sizes=lcfg.hidden,
        lr=lcfg.lr,
        memory_size=lcfg.memory,
        gamma=lcfg.gamma,
        ewc_lambda=lcfg.ewc_lambda,
        clone_init=lcfg.clone_init,
        head_mode=head,
        task_classes=stream.task_classes,
        seed=lcfg.seed,
    )


def load_stream(config, base=None):
    spec = config.continuum
    if spec.dataset != "synthetic" and base is None:
        if config.data_dir is None:
            raise DataNotFoundError(f"dataset {spec.dataset!r} needs --data-dir with MNIST IDX files")
        base = load_mnist(config.data_dir)
    return build_stream(spec, base)


def train(learner, stream, fine_grained=0, iid_shuffle=False):
    """Stream ``stream`` through ``learner`` and record its accuracy matrix.

    Returns an :class:`RMatrix` whose baseline row is measured on the
    untrained learner. With ``fine_grained = k > 0`` every ``k``-th minibatch
    also appends a row to ``curve``.
    """
    T = stream.num_tasks
    learner.initialize(stream.input_dim, np.arange(stream.num_classes))
    record = RMatrix(evaluate_all(learner, stream.test_sets))
    seen = 0

    def tick(step, n):
        nonlocal seen
        seen += n
        if fine_grained and step % fine_grained == 0:
            record.curve.append((seen, evaluate_all(learner, stream.test_sets)))

    if iid_shuffle:
        batches = list(stream.iid_batches())
        bounds = [round(len(batches) * (i + 1) / T) for i in range(T)]
        step = 0
        for bound in bounds:
            for _, x, y in batches[step:bound]:
                learner.partial_fit(x, y, task=None)
                step += 1
                tick(step, len(y))
            record.rows.append(evaluate_all(learner, stream.test_sets))
        return record

    batches = stream.batches()
    pending = next(batches, None)
    step = 0
    for t in range(T):
        while pending is not None and pending[0] == t:
            _, x, y = pending
            learner.partial_fit(x, y, task=t)
            step += 1
            tick(step, len(y))
            pending = next(batches, None)
        learner.end_task(t)
        record.rows.append(evaluate_all(learner, stream.test_sets))
        logger.info("task %d done: %s", t, np.round(record.rows[-1], 3))
    return record


def run(config, base=None):
    """Run one experiment; write outputs when ``config.out`` is set.

    Returns
    -------
    dict
        JSON-ready report with the config, baseline, ``R``, ACC/BWT/FWT and
        wall-clock seconds.
    """
    stream = load_stream(config, base)
    learner = _build_learner(config.learner, stream)
    start = time.perf_counter()
    record = train(learner, stream, config.fine_grained, config.iid_shuffle)
    seconds = time.perf_counter() - start
    report = {
        "schema": SCHEMA_VERSION,
        "config": config.to_dict(),
        "baseline": record.baseline.tolist(),
        "R": record.R.tolist(),
        **record.summary(),
        "seconds": seconds,
    }
    if hasattr(learner, "n_projections_"):
        report["n_projections"] = learner.n_projections_
    if config.out:
        write_outputs(report, record, config.out)
    return report


def _stem(report):
    cfg = report["config"]
    return f"{cfg['learner']['kind']}_{cfg['continuum']['dataset']}_seed{cfg['learner']['seed']}"


def write_outputs(report, record, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stem = _stem(report)
    (out / f"{stem}.json").write_text(json.dumps(report, indent=2) + "\n")
    (out / f"{stem}.txt").write_text(record.to_text())
    if record.curve:
        with open(out / f"{stem}_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["examples_seen"] + [f"task{k}" for k in range(record.num_tasks)])
            for seen, accs in record.curve:
                w.writerow([seen] + [f"{a:.6f}" for a in accs])


def expand_grid(grid):
    """Cartesian product of a ``{name: [values]}`` grid as a list of dicts."""
    if not grid:
        raise ConfigError("grid is empty")
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}; allowed: {GRID_KEYS}")
    keys = sorted(grid)
    values = [list(grid[k]) for k in keys]
    if any(not v for v in values):
        raise ConfigError("every grid entry needs at least one value")
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _run_cell(args):
    config, base = args
    return run(config, base)


def grid_search(grid, config, base=None, n_jobs=1):
    """Run every grid cell with the config's fixed seed and rank cells by ACC.

    Returns
    -------
    best : dict
        Report of the best cell.
    table : list of dict
        One row per cell, sorted by decreasing ACC.
    """
    cells = expand_grid(grid)
    logger.info("grid search over %d cells", len(cells))
    if config.continuum.dataset != "synthetic" and base is None:
        if config.data_dir is None:
            raise DataNotFoundError(f"dataset {config.continuum.dataset!r} needs --data-dir")
        base = load_mnist(config.data_dir)
    configs = [replace(config, learner=replace(config.learner, **cell), out=None) for cell in cells]
    jobs = [(c, base) for c in configs]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            reports = list(pool.map(_run_cell, jobs))
    else:
        reports = [_run_cell(j) for j in jobs]
    order = sorted(range(len(cells)), key=lambda i: -reports[i]["acc"])
    table = [
        {**cells[i], "acc": reports[i]["acc"], "bwt": reports[i]["bwt"], "fwt": reports[i]["fwt"],
         "seconds": reports[i]["seconds"]}
        for i in order
    ]
    best = reports[order[0]]
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{_stem(best)}_grid.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(table[0]))
            w.writeheader()
            w.writerows(table)
        (out / f"{_stem(best)}_best.json").write_text(json.dumps(best, indent=2) + "\n")
    return best, table


def report_timing(reports):
    """One row per report: learner, dataset and training wall-clock seconds."""
    rows = []
    for rep in reports:
        cfg = rep["config"]
        rows.append({
            "learner": cfg["learner"]["kind"],
            "dataset": cfg["continuum"]["dataset"],
            "seconds": rep["seconds"],
        })
    return rows


def format_timing(rows):
    lines = [f"{'learner':<12} {'dataset':<14} {'seconds':>10}"]
    lines += [f"{r['learner']:<12} {r['dataset']:<14} {r['seconds']:>10.2f}" for r in rows]
    return "\n".join(lines)
