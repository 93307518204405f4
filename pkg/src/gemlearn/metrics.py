"""Accuracy matrices and transfer metrics for continual learning.

``R[i, j]`` is the test accuracy on task ``j`` right after the last training
example of task ``i``; ``baseline[j]`` is the accuracy of the randomly
initialised model on task ``j``.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, FormatError, ShapeError


def evaluate_all(model, test_sets):
    """Per-task mean 0/1 accuracy.

    ``model`` is anything with ``predict(X, task)``: a fitted learner or a
    bare :class:`~gemlearn.predictor.MLP`.
    """
    out = np.empty(len(test_sets))
    for k, (x, y) in enumerate(test_sets):
        if len(y) == 0:
            raise DomainError(f"test set of task {k} is empty")
        out[k] = np.mean(model.predict(x, k) == y)
    return out


def _square(R):
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ShapeError(f"R must be square, got shape {R.shape}")
    return R


def acc(R):
    """Mean accuracy over all tasks after training on the last one."""
    return float(np.mean(_square(R)[-1]))


def bwt(R):
    """Mean change in accuracy on each earlier task between learning it and the end."""
    R = _square(R)
    T = R.shape[0]
    if T < 2:
        raise DomainError("backward transfer needs at least two tasks")
    return float(np.mean(R[-1, :-1] - np.diag(R)[:-1]))


def fwt(R, baseline):
    """Mean accuracy on each not-yet-trained task over its random-init baseline."""
    R = _square(R)
    baseline = np.asarray(baseline, dtype=np.float64)
    T = R.shape[0]
    if T < 2:
        raise DomainError("forward transfer needs at least two tasks")
    if baseline.shape != (T,):
        raise ShapeError(f"baseline must have {T} entries")
    return float(np.mean(np.diag(R, k=1) - baseline[1:]))


@dataclass
class RMatrix:
    """Baseline accuracies, the coarse ``T x T`` matrix, and optional fine-grained rows.

    ``curve`` holds ``(examples_seen, accuracies)`` pairs recorded at a finer
    cadence than task boundaries.
    """

    baseline: np.ndarray
    rows: list = field(default_factory=list)
    curve: list = field(default_factory=list)

    @property
    def num_tasks(self):
        return len(self.baseline)

    @property
    def R(self):
        return np.array(self.rows, dtype=np.float64).reshape(-1, self.num_tasks)

    def summary(self):
        R = self.R
        out = {"acc": acc(R), "bwt": None, "fwt": None}
        if self.num_tasks >= 2:
            out["bwt"] = bwt(R)
            out["fwt"] = fwt(R, self.baseline)
        return out

    def to_text(self):
        """Plain-text matrix: baseline row, a rule, then one row per task."""
        fmt = lambda row: " ".join(f"{a:.4f}" for a in row)
        lines = [fmt(self.baseline), "-" * max(6, 7 * self.num_tasks - 1)]
        lines.extend(fmt(row) for row in self.R)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if len(lines) < 2 or set(lines[1].strip()) != {"-"}:
            raise FormatError("expected a baseline row followed by a rule line")
        parse = lambda ln: [float(v) for v in ln.split()]
        baseline = np.array(parse(lines[0]))
        rows = [parse(ln) for ln in lines[2:]]
        if any(len(r) != len(baseline) for r in rows):
            raise FormatError("row widths differ from the baseline row")
        return cls(baseline, rows)
