"""Continual learners with a scikit-learn estimator interface.

Every learner consumes an ordered stream through ``partial_fit(X, y, task)``
one minibatch at a time and is told about task boundaries with
``end_task(task)``. ``fit`` runs a whole stream given per-example task ids.
Predictions are task-conditioned: ``predict(X, task)``.

>>> from gemlearn import GEMClassifier
>>> clf = GEMClassifier(n_tasks=2, memory_size=20, hidden_sizes=(8,))
>>> clf.partial_fit(X0, y0, task=0, classes=range(3))      # doctest: +SKIP
>>> clf.end_task(0)                                           # doctest: +SKIP
"""

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, ProtocolError
from .memory import EpisodicMemory
from .predictor import MLP, MlpConfig
from .projection import DEFAULT_RIDGE, project, sgd_step

KINDS = ("single", "independent", "multimodal", "ewc", "gem")


class ContinualLearner(ClassifierMixin, BaseEstimator):
    """Shared machinery: validation, label encoding, task-order bookkeeping.

    Subclasses implement ``_build`` (create fitted state) and ``_observe``
    (one update on an encoded, single-task minibatch).
    """

    _head_mode = None  # subclasses may force a head layout

    def _head(self):
        return self._head_mode or self.head_mode

    def _mlp_config(self, hidden=None):
        task_classes = None
        if self._head() == "per-task-output" and self.task_classes is not None:
            task_classes = tuple(tuple(int(i) for i in self._encode(np.asarray(cs))) for cs in self.task_classes)
        return MlpConfig(
            input_dim=self.n_features_in_,
            num_classes=len(self.classes_),
            hidden_dims=tuple(hidden or self.hidden_sizes),
            num_tasks=self.n_tasks,
            head_mode=self._head(),
            task_classes=task_classes,
        )

    def _validate_params(self):
        if self.n_tasks is None or self.n_tasks < 1:
            raise ConfigError("n_tasks must be a positive integer")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")

    def _encode(self, y):
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.array_equal(self.classes_[idx], y):
            raise ValueError(f"labels {np.setdiff1d(y, self.classes_)} were not declared in `classes`")
        return idx

    def _first_call(self, X, classes):
        if classes is None:
            raise ValueError("classes must be passed on the first call to partial_fit")
        self._validate_params()
        self.classes_ = np.unique(np.asarray(classes))
        self.n_features_in_ = X.shape[1]
        self.current_task_ = 0
        self.n_updates_ = 0
        self._build()

    def initialize(self, n_features, classes):
        """Build the randomly initialised model without training it.

        Lets callers evaluate the untrained predictor (the baseline row of an
        accuracy matrix). A later ``partial_fit`` continues from this state.
        """
        self._first_call(np.empty((0, int(n_features))), classes)
        return self

    def _check_task(self, task):
        if task is None:
            if self._head() != "shared" or isinstance(self, IndependentClassifier):
                raise ProtocolError(f"{type(self).__name__} needs a task id")
            return None
        t = int(task)
        if not 0 <= t < self.n_tasks:
            raise ValueError(f"task id {t} outside [0, {self.n_tasks})")
        return t

    def partial_fit(self, X, y, task, classes=None):
        """One update on a minibatch drawn from a single task.

        Parameters
        ----------
        X : array-like of shape (n, d)
        y : array-like of shape (n,)
        task : int
            Task id of every example in the batch. Task ids may not decrease
            across calls. ``None`` is accepted by shared-head learners that
            ignore the task (used for globally shuffled streams).
        classes : array-like, optional
            All labels that will ever appear; required on the first call.
        """
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if len(y) != len(X) or len(y) == 0:
            raise ValueError("X and y must be nonempty and of equal length")
        if not hasattr(self, "model_") and not hasattr(self, "models_"):
            self._first_call(X, classes)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        t = self._check_task(task)
        if t is not None:
            if t < self.current_task_:
                raise ProtocolError(f"task {t} arrived after task {self.current_task_}")
            self.current_task_ = t
        self._observe(X, self._encode(y), t)
        self.n_updates_ += 1
        return self

    def end_task(self, task):
        """Notify the learner that the last example of ``task`` has been seen."""
        check_is_fitted(self, "classes_")
        self._on_task_end(int(task))
        return self

    def _on_task_end(self, t):
        pass

    def fit(self, X, y, task, classes=None):
        """Reset, then stream ``(X, y, task)`` in the given order in minibatches.

        ``task`` holds one id per row and must be nondecreasing; ``end_task``
        fires whenever the id changes and after the last row.
        """
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        task = np.asarray(task, dtype=np.int64).ravel()
        if task.shape != y.shape or len(y) != len(X):
            raise ValueError("X, y and task must have matching lengths")
        if np.any(np.diff(task) < 0):
            raise ProtocolError("task ids must be nondecreasing along the stream")
        for attr in ("model_", "models_", "classes_"):
            self.__dict__.pop(attr, None)
        classes = np.unique(y) if classes is None else classes
        for t in np.unique(task):
            rows = np.flatnonzero(task == t)
            for start in range(0, len(rows), self.batch_size):
                idx = rows[start : start + self.batch_size]
                self.partial_fit(X[idx], y[idx], task=t, classes=classes)
            self.end_task(t)
        return self

    def _predict_model(self, t):
        return self.model_

    def decision_function(self, X, task):
        """Logits of shape (n, n_classes); ``task`` is an int or one id per row."""
        check_is_fitted(self, "classes_")
        X = check_array(X, dtype=np.float64)
        tasks = np.broadcast_to(np.asarray(0 if task is None else task, dtype=np.int64), (len(X),))
        out = np.empty((len(X), len(self.classes_)))
        for t in np.unique(tasks):
            rows = tasks == t
            out[rows] = self._predict_model(int(t)).forward(X[rows], int(t))
        return out

    def predict(self, X, task):
        return self.classes_[self.decision_function(X, task).argmax(axis=1)]

    def score(self, X, y, task):
        """Mean 0/1 accuracy on ``(X, y)`` under ``task``."""
        return float(np.mean(self.predict(X, task) == np.asarray(y)))

    def _sgd(self, model, X, y, t):
        _, g = model.loss_and_grad(X, 0 if t is None else t, y)
        sgd_step(model, g, self.lr)


class SingleClassifier(ContinualLearner):
    """One network trained by plain SGD across all tasks."""

    def __init__(self, n_tasks=None, hidden_sizes=(100, 100), lr=0.003, head_mode="shared", task_classes=None,
                 batch_size=10, seed=0):
        self.n_tasks = n_tasks
        self.hidden_sizes = hidden_sizes
        self.lr = lr
        self.head_mode = head_mode
        self.task_classes = task_classes
        self.batch_size = batch_size
        self.seed = seed

    def _build(self):
        self.model_ = MLP(self._mlp_config(), seed=self.seed)

    def _observe(self, X, y, t):
        self._sgd(self.model_, X, y, t)


class MultimodalClassifier(SingleClassifier):
    """Like :class:`SingleClassifier` but with a dedicated input layer per task."""

    _head_mode = "per-task-input"
    head_mode = "per-task-input"
    task_classes = None

    def __init__(self, n_tasks=None, hidden_sizes=(100, 100), lr=0.1, batch_size=10, seed=0):
        self.n_tasks = n_tasks
        self.hidden_sizes = hidden_sizes
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed


class IndependentClassifier(ContinualLearner):
    """One small network per task, each ``n_tasks`` times narrower than ``hidden_sizes``.

    Parameters
    ----------
    clone_init : bool
        Start each new task's network from a copy of the previous task's
        trained network instead of its own random initialisation.
    """

    def __init__(self, n_tasks=None, hidden_sizes=(100, 100), lr=0.1, clone_init=True, head_mode="shared",
                 task_classes=None, batch_size=10, seed=0):
        self.n_tasks = n_tasks
        self.hidden_sizes = hidden_sizes
        self.lr = lr
        self.clone_init = clone_init
        self.head_mode = head_mode
        self.task_classes = task_classes
        self.batch_size = batch_size
        self.seed = seed

    @property
    def small_hidden_sizes(self):
        return tuple(max(1, math.ceil(h / self.n_tasks)) for h in self.hidden_sizes)

    def _build(self):
        cfg = self._mlp_config(hidden=self.small_hidden_sizes)
        self.models_ = [MLP(cfg, seed=self.seed + k) for k in range(self.n_tasks)]
        self._started = set()
        self._last_trained = None

    @property
    def n_params(self):
        check_is_fitted(self, "models_")
        return sum(m.n_params for m in self.models_)

    def _observe(self, X, y, t):
        if t not in self._started:
            if self.clone_init and self._last_trained is not None:
                self.models_[t].set_flat_params(self.models_[self._last_trained].get_flat_params())
            self._started.add(t)
        self._sgd(self.models_[t], X, y, t)
        self._last_trained = t

    def _predict_model(self, t):
        return self.models_[t]


class EWCClassifier(SingleClassifier):
    """SGD on the task loss plus a quadratic pull towards earlier solutions.

    After each task a diagonal empirical Fisher ``F`` (mean squared
    per-example gradient over the task's last ``n_fisher`` examples) and the
    current parameters ``theta*`` are frozen. Training then minimises
    ``loss + ewc_lambda * sum_k sum_i F_ki (theta_i - theta*_ki)^2``.
    """

    def __init__(self, n_tasks=None, hidden_sizes=(100, 100), lr=0.01, ewc_lambda=1000.0, memory_size=5120,
                 head_mode="shared", task_classes=None, batch_size=10, seed=0):
        self.n_tasks = n_tasks
        self.hidden_sizes = hidden_sizes
        self.lr = lr
        self.ewc_lambda = ewc_lambda
        self.memory_size = memory_size
        self.head_mode = head_mode
        self.task_classes = task_classes
        self.batch_size = batch_size
        self.seed = seed

    def _validate_params(self):
        super()._validate_params()
        if self.ewc_lambda < 0:
            raise ConfigError("ewc_lambda must be >= 0")

    @property
    def n_fisher(self):
        return min(self.memory_size // self.n_tasks, 256)

    def _build(self):
        super()._build()
        self.fisher_ = []
        self._recent = EpisodicMemory(self.n_fisher * self.n_tasks, self.n_tasks, self.n_features_in_)

    def penalty_grad(self, theta):
        out = np.zeros_like(theta)
        for fisher, anchor in self.fisher_:
            out += 2.0 * self.ewc_lambda * fisher * (theta - anchor)
        return out

    def _observe(self, X, y, t):
        t0 = 0 if t is None else t
        self._recent.store(t0, X, y)
        _, g = self.model_.loss_and_grad(X, t0, y)
        if self.fisher_ and self.ewc_lambda > 0:
            g = g + self.penalty_grad(self.model_.get_flat_params())
        sgd_step(self.model_, g, self.lr)

    def _on_task_end(self, t):
        if self._recent.size(t) == 0:
            return
        x, y = self._recent.get(t)
        fisher = self.model_.mean_squared_example_grad(x, t, y)
        self.fisher_.append((fisher, self.model_.get_flat_params()))


class GEMClassifier(SingleClassifier):
    """Gradient Episodic Memory.

    Each task keeps its last ``memory_size // n_tasks`` examples. Before every
    step the minibatch gradient is projected so that it does not increase,
    to first order, the loss on the memory of any earlier task; ``gamma``
    biases the projection towards steps that decrease those losses.
    """

    def __init__(self, n_tasks=None, hidden_sizes=(100, 100), lr=0.1, memory_size=5120, gamma=0.5,
                 ridge=DEFAULT_RIDGE, head_mode="shared", task_classes=None, batch_size=10, seed=0):
        self.n_tasks = n_tasks
        self.hidden_sizes = hidden_sizes
        self.lr = lr
        self.memory_size = memory_size
        self.gamma = gamma
        self.ridge = ridge
        self.head_mode = head_mode
        self.task_classes = task_classes
        self.batch_size = batch_size
        self.seed = seed

    def _validate_params(self):
        super()._validate_params()
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.memory_size < 0:
            raise ConfigError("memory_size must be >= 0")

    def _build(self):
        super()._build()
        self.memory_ = EpisodicMemory(self.memory_size, self.n_tasks, self.n_features_in_)
        self.n_projections_ = 0

    def _check_task(self, task):
        if task is None:
            raise ProtocolError("GEMClassifier needs a task id")
        return super()._check_task(task)

    def _observe(self, X, y, t):
        self.memory_.store(t, X, y)
        _, g = self.model_.loss_and_grad(X, t, y)
        past = [self.memory_.loss_grad(k, self.model_)[1] for k in range(t) if self.memory_.size(k) > 0]
        if past:
            step = project(g, past, gamma=self.gamma, ridge=self.ridge)
            if step is not g:
                self.n_projections_ += 1
        else:
            step = g
        sgd_step(self.model_, step, self.lr)


def make_learner(kind, **params):
    """Build a learner by name, dropping parameters it does not accept."""
    classes = {
        "single": SingleClassifier,
        "independent": IndependentClassifier,
        "multimodal": MultimodalClassifier,
        "ewc": EWCClassifier,
        "gem": GEMClassifier,
    }
    if kind not in classes:
        raise ConfigError(f"learner must be one of {KINDS}, got {kind!r}")
    cls = classes[kind]
    accepted = cls().get_params()
    return cls(**{k: v for k, v in params.items() if k in accepted and v is not None})
