"""Per-task episodic memory: ring buffers holding the last ``m`` examples of each task."""

import numpy as np

from .exceptions import DomainError


class EpisodicMemory:
    """Fixed-budget store of recent examples, split evenly across tasks.

    Parameters
    ----------
    total_budget : int
        Total number of slots ``M`` shared by all tasks.
    num_tasks : int
        Number of tasks ``T``; each task owns ``m = M // T`` slots.
    input_dim : int
    """

    def __init__(self, total_budget, num_tasks, input_dim):
        if num_tasks < 1:
            raise DomainError("num_tasks must be >= 1")
        if total_budget < 0:
            raise DomainError("total_budget must be >= 0")
        self.total_budget = int(total_budget)
        self.num_tasks = int(num_tasks)
        self.per_task = self.total_budget // self.num_tasks
        self._x = np.zeros((self.num_tasks, self.per_task, input_dim))
        self._y = np.zeros((self.num_tasks, self.per_task), dtype=np.int64)
        self._seen = np.zeros(self.num_tasks, dtype=np.int64)

    def _check_task(self, t):
        if not 0 <= int(t) < self.num_tasks:
            raise DomainError(f"unknown task id {t}")
        return int(t)

    def store(self, t, x, y):
        """Append a batch to task ``t``'s buffer, evicting the oldest entries first."""
        t = self._check_task(t)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y))
        m = self.per_task
        if m == 0:
            self._seen[t] += len(y)
            return
        for xi, yi in zip(x, y):
            pos = self._seen[t] % m
            self._x[t, pos] = xi
            self._y[t, pos] = yi
            self._seen[t] += 1

    def size(self, t):
        t = self._check_task(t)
        return int(min(self._seen[t], self.per_task))

    def __len__(self):
        return sum(self.size(t) for t in range(self.num_tasks))

    def get(self, t):
        """Stored ``(x, y)`` for task ``t`` in arrival order (oldest first)."""
        t = self._check_task(t)
        n = self.size(t)
        if n < self.per_task or n == 0:
            return self._x[t, :n].copy(), self._y[t, :n].copy()
        start = self._seen[t] % self.per_task
        order = (np.arange(n) + start) % self.per_task
        return self._x[t, order], self._y[t, order]

    def loss_grad(self, t, model):
        """Mean loss of ``model`` on task ``t``'s memory and its gradient."""
        t = self._check_task(t)
        if self.size(t) == 0:
            raise DomainError(f"memory of task {t} is empty")
        x, y = self.get(t)
        return model.loss_and_grad(x, t, y)
