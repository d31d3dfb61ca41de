"""Prioritized and uniform replay buffers backed by an array sum-tree."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BufferUnderflow(RuntimeError):
    pass


class SumTree:
    """Binary sum-tree over ``capacity`` leaves (rounded up to a power of two).

    ``nodes[1]`` is the root; leaf ``i`` lives at ``nodes[capacity + i]``.
    """

    def __init__(self, capacity: int):
        cap = 1
        while cap < capacity:
            cap *= 2
        self.capacity = cap
        self.nodes = np.zeros(2 * cap)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def leaf(self, i: int) -> float:
        return float(self.nodes[self.capacity + i])

    def leaves(self, n: int | None = None) -> np.ndarray:
        return self.nodes[self.capacity:self.capacity + (self.capacity if n is None else n)]

    def set(self, i: int, value: float):
        pos = self.capacity + i
        self.nodes[pos] = value
        pos //= 2
        while pos >= 1:
            # recompute from children rather than adding deltas: no drift
            self.nodes[pos] = self.nodes[2 * pos] + self.nodes[2 * pos + 1]
            pos //= 2

    def set_many(self, indices, values):
        pos = self.capacity + np.asarray(indices, dtype=np.int64)
        self.nodes[pos] = values
        pos = np.unique(pos // 2)
        while pos[0] >= 1:
            self.nodes[pos] = self.nodes[2 * pos] + self.nodes[2 * pos + 1]
            if pos[0] == 1:
                break
            pos = np.unique(pos // 2)

    def find(self, mass) -> np.ndarray:
        """Leaf indices whose cumulative intervals contain each ``mass``."""
        mass = np.array(mass, dtype=np.float64, ndmin=1)
        pos = np.ones(mass.shape, dtype=np.int64)
        nodes = self.nodes
        while pos[0] < self.capacity:
            left = 2 * pos
            lv = nodes[left]
            right = (mass >= lv) & (nodes[left + 1] > 0.0)
            mass = np.where(right, mass - lv, mass)
            pos = left + right
        return pos - self.capacity


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    indices: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    weights: np.ndarray


class _Storage:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def _write(self, tr: Transition) -> int:
        i = self.cursor
        self.s[i] = tr.s
        self.a[i] = tr.a
        self.r[i] = tr.r
        self.s_next[i] = tr.s_next
        self.done[i] = float(tr.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def __len__(self):
        return self.size

    def _gather(self, idx: np.ndarray, weights: np.ndarray) -> Batch:
        return Batch(idx, self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx], weights)

    def get(self, i: int) -> Transition:
        return Transition(self.s[i].copy(), self.a[i].copy(), float(self.r[i]), self.s_next[i].copy(), bool(self.done[i]))


class PrioritizedReplay(_Storage):
    """Proportional prioritized replay with importance-sampling weights."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, eps_prior: float = 1e-6):
        super().__init__(capacity, obs_dim, act_dim)
        self.tree = SumTree(capacity)
        self.eps_prior = eps_prior
        # priorities are stored raw; the tree holds p**alpha for the alpha in use
        self.priorities = np.zeros(capacity)
        self._alpha = None

    @property
    def max_priority(self) -> float:
        return float(self.priorities[:self.size].max()) if self.size else 1.0

    def push(self, tr: Transition, alpha_per: float = 0.6) -> int:
        p = self.max_priority
        i = self._write(tr)
        self.priorities[i] = p
        self._set_alpha(alpha_per)
        self.tree.set(i, p ** alpha_per)
        return i

    def _set_alpha(self, alpha_per: float):
        if self._alpha != alpha_per:
            self._alpha = alpha_per
            n = self.size
            self.tree.nodes[:] = 0.0
            cap = self.tree.capacity
            self.tree.nodes[cap:cap + n] = self.priorities[:n] ** alpha_per
            lo = cap
            while lo > 1:
                level = self.tree.nodes[lo:2 * lo]
                self.tree.nodes[lo // 2:lo] = level[0::2] + level[1::2]
                lo //= 2

    def probabilities(self, alpha_per: float) -> np.ndarray:
        self._set_alpha(alpha_per)
        return self.tree.leaves(self.size) / self.tree.total

    def sample(self, batch: int, alpha_per: float, beta_per: float, rng: np.random.Generator) -> Batch:
        if self.size < batch:
            raise BufferUnderflow(f"buffer holds {self.size} transitions, batch needs {batch}")
        self._set_alpha(alpha_per)
        total = self.tree.total
        seg = total / batch
        draws = (np.arange(batch) + rng.random(batch)) * seg
        idx = self.tree.find(np.minimum(draws, np.nextafter(total, 0.0)))
        probs = self.tree.nodes[self.tree.capacity + idx] / total
        w = (1.0 / (self.size * probs)) ** beta_per
        w /= w.max()
        return self._gather(idx, w)

    def update_priorities(self, indices, td_errors, alpha_per: float = 0.6):
        self._set_alpha(alpha_per)
        idx = np.asarray(indices, dtype=np.int64)
        p = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.eps_prior
        # with duplicate indices the last write wins, matching sequential updates
        self.priorities[idx] = p
        self.tree.set_many(idx, self.priorities[idx] ** alpha_per)


class UniformReplay(_Storage):
    """Plain ring buffer; same interface as the prioritized one, unit weights."""

    def push(self, tr: Transition, alpha_per: float = 0.6) -> int:
        return self._write(tr)

    def sample(self, batch: int, alpha_per: float, beta_per: float, rng: np.random.Generator) -> Batch:
        if self.size < batch:
            raise BufferUnderflow(f"buffer holds {self.size} transitions, batch needs {batch}")
        idx = rng.integers(0, self.size, batch)
        return self._gather(idx, np.ones(batch))

    def update_priorities(self, indices, td_errors, alpha_per: float = 0.6):
        pass
