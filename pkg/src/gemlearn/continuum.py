"""Task streams: ordered sequences of locally-iid tasks with per-task test sets.

A stream is built from a base labelled dataset (MNIST-style digits read from
IDX files) or generated synthetically, then consumed minibatch by minibatch
in strict task order.
"""

import gzip
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataNotFoundError, FormatError, ShapeError
from .predictor import contiguous_class_split

DATASETS = ("permutations", "rotations", "split-classes", "synthetic")

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


# --------------------------------------------------------------------------
# IDX files


def _read_bytes(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _write_bytes(path, blob):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(blob)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair.

    Returns
    -------
    images : ndarray of shape (n, rows * cols)
        Pixels scaled to [0, 1].
    labels : ndarray of shape (n,)
    image_shape : tuple (rows, cols)
    """
    raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise FormatError(f"{images_path}: truncated header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    if len(raw) - 16 != n * rows * cols:
        raise FormatError(f"{images_path}: payload has {len(raw) - 16} bytes, header implies {n * rows * cols}")
    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows * cols)

    raw = _read_bytes(labels_path)
    if len(raw) < 8:
        raise FormatError(f"{labels_path}: truncated header")
    magic, n_labels = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    if len(raw) - 8 != n_labels:
        raise FormatError(f"{labels_path}: payload has {len(raw) - 8} bytes, header implies {n_labels}")
    if n_labels != n:
        raise FormatError(f"{n} images but {n_labels} labels")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    return images.astype(np.float64) / 255.0, labels, (rows, cols)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images of shape (n, rows, cols) and labels as an IDX pair."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise ShapeError("images must be (n, rows, cols) with one label per image")
    n, rows, cols = images.shape
    _write_bytes(images_path, struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.astype(np.uint8).tobytes())
    _write_bytes(labels_path, struct.pack(">II", LABELS_MAGIC, n) + labels.astype(np.uint8).tobytes())


@dataclass
class LabeledImages:
    """A base dataset with its official train/test split."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    image_shape: tuple

    @property
    def num_classes(self):
        return int(max(self.train_y.max(), self.test_y.max())) + 1


def _find(data_dir, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        path = Path(data_dir) / name
        if path.exists():
            return path
    raise DataNotFoundError(f"{stem}[.gz] not found in {data_dir}")


def load_mnist(data_dir):
    """Load the four standard MNIST IDX files (optionally gzipped) from ``data_dir``."""
    parts = {}
    for split, (img, lab) in MNIST_FILES.items():
        parts[split] = load_idx(_find(data_dir, img), _find(data_dir, lab))
    (trx, try_, shape), (tex, tey, shape_te) = parts["train"], parts["test"]
    if shape != shape_te:
        raise FormatError(f"train images are {shape}, test images {shape_te}")
    return LabeledImages(trx, try_, tex, tey, shape)


# --------------------------------------------------------------------------
# Streams


@dataclass
class ContinuumSpec:
    dataset: str = "synthetic"
    num_tasks: int = 5
    examples_per_task: int = 500
    epochs: int = 1
    seed: int = 0
    batch_size: int = 10
    test_per_task: int = None
    # synthetic generator only
    input_dim: int = 50
    num_classes: int = 10
    noise: float = 1.0

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.num_tasks < 1:
            raise ConfigError("num_tasks must be >= 1")
        if self.batch_size < 1 or self.examples_per_task < self.batch_size:
            raise ConfigError("need examples_per_task >= batch_size >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.test_per_task is not None and self.test_per_task < 1:
            raise ConfigError("test_per_task must be positive")
        if self.noise < 0 or self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError("invalid synthetic generator settings")

    def to_dict(self):
        return asdict(self)


class TaskStream:
    """An ordered continuum of tasks.

    Attributes
    ----------
    tasks : list of (x, y)
        Training examples per task, in stream order.
    test_sets : list of (x, y)
        Held-out examples per task.
    task_classes : tuple or None
        Class subset of every task when tasks split the label space.
    """

    def __init__(self, tasks, test_sets, num_classes, batch_size=10, epochs=1, seed=0, task_classes=None, name=""):
        if len(tasks) != len(test_sets):
            raise ShapeError("need one test set per task")
        self.tasks = tasks
        self.test_sets = test_sets
        self.num_classes = int(num_classes)
        self.batch_size = int(batch_size)
        self.epochs = int(epochs)
        self.seed = seed
        self.task_classes = task_classes
        self.name = name

    @property
    def num_tasks(self):
        return len(self.tasks)

    @property
    def input_dim(self):
        return self.tasks[0][0].shape[1]

    def __len__(self):
        return sum(len(y) for _, y in self.tasks) * self.epochs

    def batches(self):
        """Yield ``(t, x, y)`` minibatches task by task.

        Each epoch over a task visits every example once, in a fresh seeded
        order; task ``t + 1`` starts only after all epochs of task ``t``.
        """
        rng = np.random.default_rng([self.seed, 0x5EED])
        for t, (x, y) in enumerate(self.tasks):
            for _ in range(self.epochs):
                order = rng.permutation(len(y))
                for start in range(0, len(y), self.batch_size):
                    idx = order[start : start + self.batch_size]
                    yield t, x[idx], y[idx]

    def iid_batches(self):
        """Yield ``(t, x, y)`` minibatches drawn from all tasks in one global shuffle.

        ``t`` is an array of per-example task ids. Each epoch emits the same
        multiset of examples as :meth:`batches`.
        """
        x = np.concatenate([tx for tx, _ in self.tasks])
        y = np.concatenate([ty for _, ty in self.tasks])
        t = np.concatenate([np.full(len(ty), k) for k, (_, ty) in enumerate(self.tasks)])
        rng = np.random.default_rng([self.seed, 0x11D])
        for _ in range(self.epochs):
            order = rng.permutation(len(y))
            for start in range(0, len(y), self.batch_size):
                idx = order[start : start + self.batch_size]
                yield t[idx], x[idx], y[idx]


def _task_rngs(seed, num_tasks):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(num_tasks)]


def _subsample(rng, n, k):
    if k is None or k >= n:
        return rng.permutation(n)
    return rng.permutation(n)[:k]


def _check_spec(spec, dataset):
    if spec.dataset != dataset:
        raise ConfigError(f"spec is for {spec.dataset!r}, not {dataset!r}")


def build_permutations(base, spec):
    """One fixed pixel permutation per task; task 0 keeps the identity."""
    _check_spec(spec, "permutations")
    d = base.train_x.shape[1]
    tasks, tests, perms = [], [], []
    for t, rng in enumerate(_task_rngs(spec.seed, spec.num_tasks)):
        perm = np.arange(d) if t == 0 else rng.permutation(d)
        tr = _subsample(rng, len(base.train_y), spec.examples_per_task)
        te = _subsample(rng, len(base.test_y), spec.test_per_task)
        tasks.append((base.train_x[tr][:, perm], base.train_y[tr]))
        tests.append((base.test_x[te][:, perm], base.test_y[te]))
        perms.append(perm)
    stream = TaskStream(tasks, tests, base.num_classes, spec.batch_size, spec.epochs, spec.seed, name="permutations")
    stream.permutations = perms
    return stream


def rotate_images(images, angle, image_shape):
    """Rotate flattened square images by ``angle`` degrees about their centre.

    Bilinear interpolation; samples falling outside the source image read as 0.
    """
    rows, cols = image_shape
    if rows != cols:
        raise ShapeError(f"rotation needs square images, got {image_shape}")
    images = np.asarray(images, dtype=np.float64).reshape(-1, rows, cols)
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)
    centre = (rows - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    di, dj = ii - centre, jj - centre
    # inverse map: output pixel -> source coordinate
    src_i = c * di + s * dj + centre
    src_j = -s * di + c * dj + centre
    i0 = np.floor(src_i).astype(int)
    j0 = np.floor(src_j).astype(int)
    fi = src_i - i0
    fj = src_j - j0
    out = np.zeros_like(images)
    for oi, oj, w in (
        (0, 0, (1 - fi) * (1 - fj)),
        (0, 1, (1 - fi) * fj),
        (1, 0, fi * (1 - fj)),
        (1, 1, fi * fj),
    ):
        si, sj = i0 + oi, j0 + oj
        inside = (si >= 0) & (si < rows) & (sj >= 0) & (sj < cols)
        vals = images[:, np.clip(si, 0, rows - 1), np.clip(sj, 0, cols - 1)]
        out += np.where(inside, w, 0.0) * vals
    return out.reshape(len(images), rows * cols)


def rotation_angles(num_tasks):
    """Evenly spaced angles over [0, 180] degrees, starting at 0."""
    if num_tasks == 1:
        return [0.0]
    return [k * 180.0 / (num_tasks - 1) for k in range(num_tasks)]


def build_rotations(base, spec):
    """One fixed rotation angle per task, evenly spaced between 0 and 180 degrees."""
    _check_spec(spec, "rotations")
    rows, cols = base.image_shape
    if rows != cols:
        raise ShapeError(f"rotation needs square images, got {base.image_shape}")
    angles = rotation_angles(spec.num_tasks)
    tasks, tests = [], []
    for angle, rng in zip(angles, _task_rngs(spec.seed, spec.num_tasks)):
        tr = _subsample(rng, len(base.train_y), spec.examples_per_task)
        te = _subsample(rng, len(base.test_y), spec.test_per_task)
        tasks.append((rotate_images(base.train_x[tr], angle, base.image_shape), base.train_y[tr]))
        tests.append((rotate_images(base.test_x[te], angle, base.image_shape), base.test_y[te]))
    stream = TaskStream(tasks, tests, base.num_classes, spec.batch_size, spec.epochs, spec.seed, name="rotations")
    stream.angles = angles
    return stream


def build_split_classes(base, spec):
    """Class-incremental stream: task ``k`` sees the ``k``-th contiguous block of classes."""
    _check_spec(spec, "split-classes")
    num_classes = base.num_classes
    try:
        blocks = contiguous_class_split(num_classes, spec.num_tasks)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tasks, tests = [], []
    for block, rng in zip(blocks, _task_rngs(spec.seed, spec.num_tasks)):
        tr_pool = np.flatnonzero(np.isin(base.train_y, block))
        te_pool = np.flatnonzero(np.isin(base.test_y, block))
        tr = tr_pool[_subsample(rng, len(tr_pool), spec.examples_per_task)]
        te = te_pool[_subsample(rng, len(te_pool), spec.test_per_task)]
        tasks.append((base.train_x[tr], base.train_y[tr]))
        tests.append((base.test_x[te], base.test_y[te]))
    return TaskStream(
        tasks, tests, num_classes, spec.batch_size, spec.epochs, spec.seed, task_classes=blocks, name="split-classes"
    )


def random_rotation(rng, d):
    """Haar-distributed orthogonal matrix."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def build_synthetic(spec):
    """Gaussian class prototypes plus isotropic noise, seen through a per-task rotation.

    All tasks share the prototypes; task ``t`` presents inputs ``Q_t (mu_y +
    noise * eps)`` with ``Q_0 = I`` and a random orthogonal ``Q_t`` otherwise,
    so tasks are as unrelated as pixel permutations. A fifth of the generated
    examples of each task is held out for testing.
    """
    _check_spec(spec, "synthetic")
    d, C = spec.input_dim, spec.num_classes
    root = np.random.default_rng([spec.seed, 0xC1A55])
    prototypes = root.standard_normal((C, d))
    n_train = spec.examples_per_task
    n_test = spec.test_per_task or max(1, n_train // 4)
    tasks, tests, rotations = [], [], []
    for t, rng in enumerate(_task_rngs(spec.seed, spec.num_tasks)):
        rot = np.eye(d) if t == 0 else random_rotation(rng, d)
        y = rng.integers(0, C, size=n_train + n_test)
        x = (prototypes[y] + spec.noise * rng.standard_normal((len(y), d))) @ rot.T
        tasks.append((x[:n_train], y[:n_train]))
        tests.append((x[n_train:], y[n_train:]))
        rotations.append(rot)
    stream = TaskStream(tasks, tests, C, spec.batch_size, spec.epochs, spec.seed, name="synthetic")
    stream.prototypes = prototypes
    stream.rotations = rotations
    return stream


def build_stream(spec, base=None):
    """Dispatch on ``spec.dataset``; non-synthetic datasets need ``base``."""
    if spec.dataset == "synthetic":
        return build_synthetic(spec)
    if base is None:
        raise DataNotFoundError(f"dataset {spec.dataset!r} needs MNIST IDX files")
    builders = {
        "permutations": build_permutations,
        "rotations": build_rotations,
        "split-classes": build_split_classes,
    }
    return builders[spec.dataset](base, spec)
