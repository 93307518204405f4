"""Task-conditioned ReLU multilayer perceptrons with a flat parameter vector.

Three head layouts are supported:

``shared``
    one network, the task id is ignored.
``per-task-output``
    one network whose logits are restricted to the classes of the queried
    task (a multi-head classifier expressed as a logit mask).
``per-task-input``
    a dedicated first layer per task feeding shared upper layers.

Every parameter lives in one contiguous float64 vector so that gradients can
be compared with inner products and projected as a whole.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DomainError, FormatError, ShapeError
from .linalg import affine, affine_backward, relu, relu_backward, softmax_xent

HEAD_MODES = ("shared", "per-task-output", "per-task-input")

# Finite stand-in for -inf on logits of classes outside the queried task.
MASKED_LOGIT = -1e30

_CHECKPOINT_MAGIC = b"GEMMLP01"


def contiguous_class_split(num_classes, num_tasks):
    """Split ``range(num_classes)`` into ``num_tasks`` equal contiguous blocks."""
    if num_tasks < 1 or num_classes % num_tasks:
        raise DomainError(f"{num_tasks} tasks do not divide {num_classes} classes")
    width = num_classes // num_tasks
    return tuple(tuple(range(k * width, (k + 1) * width)) for k in range(num_tasks))


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    num_classes: int
    hidden_dims: tuple = (100, 100)
    num_tasks: int = 1
    head_mode: str = "shared"
    task_classes: tuple = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims:
            raise DomainError("hidden_dims must be nonempty")
        dims = (self.input_dim, self.num_classes, self.num_tasks, *self.hidden_dims)
        if any(int(d) < 1 for d in dims):
            raise DomainError(f"all dimensions must be >= 1, got {self}")
        if self.head_mode not in HEAD_MODES:
            raise DomainError(f"head_mode must be one of {HEAD_MODES}, got {self.head_mode!r}")
        if self.head_mode == "per-task-output":
            classes = self.task_classes
            if classes is None:
                classes = contiguous_class_split(self.num_classes, self.num_tasks)
            classes = tuple(tuple(int(c) for c in cs) for cs in classes)
            if len(classes) != self.num_tasks:
                raise DomainError("task_classes needs one class subset per task")
            for cs in classes:
                if not cs or min(cs) < 0 or max(cs) >= self.num_classes:
                    raise DomainError(f"invalid class subset {cs}")
            object.__setattr__(self, "task_classes", classes)
        elif self.task_classes is not None:
            raise DomainError("task_classes only applies to head_mode='per-task-output'")

    @property
    def dims(self):
        return (self.input_dim, *self.hidden_dims, self.num_classes)

    def layout(self):
        """Ordered ``(name, shape)`` pairs describing the flat parameter vector."""
        dims = self.dims
        entries = []
        n_first = self.num_tasks if self.head_mode == "per-task-input" else 1
        for t in range(n_first):
            entries.append((f"W0.{t}", (dims[0], dims[1])))
            entries.append((f"b0.{t}", (dims[1],)))
        for i in range(1, len(dims) - 1):
            entries.append((f"W{i}", (dims[i], dims[i + 1])))
            entries.append((f"b{i}", (dims[i + 1],)))
        return entries

    @property
    def n_params(self):
        return sum(math.prod(shape) for _, shape in self.layout())

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        if self.task_classes is not None:
            d["task_classes"] = [list(cs) for cs in self.task_classes]
        return d


class MLP:
    """ReLU multilayer perceptron ``f(x, t)`` over a flat parameter vector.

    Parameters
    ----------
    config : MlpConfig
    seed : int
        Seed for the uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
        Two models built from the same config and seed are bit-identical.
    """

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        self._slots = []
        offset = 0
        for name, shape in config.layout():
            size = math.prod(shape)
            self._slots.append((name, slice(offset, offset + size), shape))
            offset += size
        self.n_params = offset
        self._theta = np.empty(offset, dtype=np.float64)
        self._params = self._views(self._theta)
        rng = np.random.default_rng(seed)
        for name, sl, shape in self._slots:
            fan_in = config.dims[0] if name.startswith(("W0", "b0")) else None
            if fan_in is None:
                layer = int(name[1:])
                fan_in = config.dims[layer]
            bound = 1.0 / math.sqrt(fan_in)
            self._theta[sl] = rng.uniform(-bound, bound, size=sl.stop - sl.start)
        if config.head_mode == "per-task-output":
            self._class_mask = np.zeros((config.num_tasks, config.num_classes), dtype=bool)
            for t, cs in enumerate(config.task_classes):
                self._class_mask[t, list(cs)] = True

    def _views(self, vec):
        return {name: vec[sl].reshape(shape) for name, sl, shape in self._slots}

    def get_flat_params(self):
        return self._theta.copy()

    def set_flat_params(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got shape {v.shape}")
        self._theta[:] = v

    def copy(self):
        clone = MLP(self.config, self.seed)
        clone.set_flat_params(self._theta)
        return clone

    def _check_task(self, t):
        if not 0 <= int(t) < self.config.num_tasks:
            raise DomainError(f"unknown task id {t} (num_tasks={self.config.num_tasks})")
        return int(t)

    def _layer(self, i, t, params):
        if i == 0:
            k = t if self.config.head_mode == "per-task-input" else 0
            return params[f"W0.{k}"], params[f"b0.{k}"]
        return params[f"W{i}"], params[f"b{i}"]

    def _check_x(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeError(f"x must have shape (n, {self.config.input_dim}), got {x.shape}")
        return x

    def _run(self, x, t):
        inputs, pre = [], []
        h = x
        n_layers = len(self.config.dims) - 1
        for i in range(n_layers):
            w, b = self._layer(i, t, self._params)
            inputs.append(h)
            z = affine(h, w, b)
            if i < n_layers - 1:
                pre.append(z)
                h = relu(z)
            else:
                h = z
        if self.config.head_mode == "per-task-output":
            h = np.where(self._class_mask[t], h, MASKED_LOGIT)
        return h, inputs, pre

    def forward(self, x, t):
        """Logits of shape (n, num_classes) for inputs ``x`` under task ``t``."""
        t = self._check_task(t)
        return self._run(self._check_x(x), t)[0]

    def predict(self, x, t):
        return self.forward(x, t).argmax(axis=1)

    def _backward(self, t, inputs, pre, dlogits, out):
        params = self._params
        grads = self._views(out)
        upstream = dlogits
        for i in reversed(range(len(inputs))):
            w, _ = self._layer(i, t, params)
            dx, dw, db = affine_backward(inputs[i], w, upstream)
            gw, gb = self._layer(i, t, grads)
            gw += dw
            gb += db
            if i > 0:
                upstream = relu_backward(pre[i - 1], dx)
        return out

    def _check_labels(self, y, t, n):
        y = np.asarray(y)
        if y.shape != (n,):
            raise ShapeError(f"need {n} labels, got shape {y.shape}")
        if self.config.head_mode == "per-task-output" and not self._class_mask[t][y].all():
            raise DomainError(f"labels {np.unique(y)} fall outside task {t}'s classes")
        return y

    def loss_and_grad(self, x, t, y):
        """Mean cross-entropy over the batch and its gradient as a flat vector."""
        t = self._check_task(t)
        x = self._check_x(x)
        if x.shape[0] == 0:
            raise DomainError("loss_and_grad on an empty batch")
        y = self._check_labels(y, t, x.shape[0])
        logits, inputs, pre = self._run(x, t)
        loss, dlogits = softmax_xent(logits, y)
        if self.config.head_mode == "per-task-output":
            dlogits = np.where(self._class_mask[t], dlogits, 0.0)
        g = self._backward(t, inputs, pre, dlogits, np.zeros(self.n_params))
        return loss, g

    def loss(self, x, t, y):
        t = self._check_task(t)
        x = self._check_x(x)
        y = self._check_labels(y, t, x.shape[0])
        return softmax_xent(self._run(x, t)[0], y)[0]

    def mean_squared_example_grad(self, x, t, y):
        """Mean over examples of the elementwise-squared per-example gradient.

        For an affine layer the per-example weight gradient is the outer
        product ``a_n delta_n^T``, so its elementwise square averaged over
        ``n`` equals ``(a^2)^T (delta^2) / n``; no per-example loop is needed.
        """
        t = self._check_task(t)
        x = self._check_x(x)
        n = x.shape[0]
        if n == 0:
            raise DomainError("empty batch")
        y = self._check_labels(y, t, n)
        logits, inputs, pre = self._run(x, t)
        _, dlogits = softmax_xent(logits, y)
        # per-example gradients: undo the 1/n batch mean
        delta = dlogits * n
        if self.config.head_mode == "per-task-output":
            delta = np.where(self._class_mask[t], delta, 0.0)
        out = np.zeros(self.n_params)
        grads = self._views(out)
        for i in reversed(range(len(inputs))):
            w, _ = self._layer(i, t, self._params)
            gw, gb = self._layer(i, t, grads)
            gw += (inputs[i] ** 2).T @ (delta**2) / n
            gb += (delta**2).mean(axis=0)
            if i > 0:
                delta = relu_backward(pre[i - 1], delta @ w.T)
        return out

    def save(self, path):
        """Write a checkpoint: magic, u32 header length, JSON header, f64 LE payload."""
        header = json.dumps(
            {"config": self.config.to_dict(), "seed": self.seed, "n_params": self.n_params}
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(self._theta.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:8] != _CHECKPOINT_MAGIC or len(blob) < 12:
            raise FormatError(f"{path} is not an MLP checkpoint")
        (hlen,) = struct.unpack("<I", blob[8:12])
        try:
            header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupt checkpoint header in {path}") from exc
        cfg = header["config"]
        if cfg.get("task_classes") is not None:
            cfg["task_classes"] = tuple(tuple(cs) for cs in cfg["task_classes"])
        model = cls(MlpConfig(**cfg), seed=header["seed"])
        payload = blob[12 + hlen :]
        if len(payload) != 8 * model.n_params:
            raise FormatError(f"checkpoint payload holds {len(payload)} bytes, expected {8 * model.n_params}")
        model.set_flat_params(np.frombuffer(payload, dtype="<f8"))
        return model
