"""Binary indexed tree over non-negative integer weights.

Backs the mass-weighted particle draws: prefix sums, point updates and
weighted search are all O(log n).  Weights are kept as Python integers so
cumulative totals stay exact no matter how many updates are applied.
"""

from __future__ import annotations


class FenwickTree:
    """Dynamic cumulative-sum tree with append / set / pop-last support."""

    def __init__(self, capacity: int = 16):
        cap = 1
        while cap < capacity:
            cap <<= 1
        self._cap = cap
        self._tree = [0] * (cap + 1)
        self._weights: list[int] = []
        self._total = 0

    def __len__(self) -> int:
        return len(self._weights)

    @property
    def total(self) -> int:
        return self._total

    def weight(self, index: int) -> int:
        return self._weights[index]

    def append(self, w: int) -> None:
        if len(self._weights) == self._cap:
            self._grow()
        self._weights.append(0)
        self.set_weight(len(self._weights) - 1, w)

    def set_weight(self, index: int, w: int) -> None:
        if not 0 <= index < len(self._weights):
            raise IndexError(index)
        delta = w - self._weights[index]
        self._weights[index] = w
        self._total += delta
        j = index + 1
        tree = self._tree
        while j <= self._cap:
            tree[j] += delta
            j += j & (-j)

    def pop_last(self) -> int:
        last = len(self._weights) - 1
        w = self._weights[last]
        self.set_weight(last, 0)
        self._weights.pop()
        return w

    def prefix_sum(self, index: int) -> int:
        """Sum of weights[0..index] inclusive."""
        s = 0
        j = index + 1
        tree = self._tree
        while j > 0:
            s += tree[j]
            j -= j & (-j)
        return s

    def find(self, r) -> int:
        """Smallest index with prefix_sum(index) > r, for 0 <= r < total."""
        if not 0 <= r < self._total:
            raise ValueError(f"search key {r} outside [0, {self._total})")
        pos = 0
        rem = r
        half = self._cap
        tree = self._tree
        while half > 0:
            nxt = pos + half
            if nxt <= self._cap and tree[nxt] <= rem:
                rem -= tree[nxt]
                pos = nxt
            half >>= 1
        return pos  # 0-based index of the selected weight

    def _grow(self) -> None:
        weights = self._weights
        self._cap <<= 1
        self._tree = [0] * (self._cap + 1)
        self._weights = []
        self._total = 0
        for w in weights:
            self._weights.append(0)
        for i, w in enumerate(weights):
            self.set_weight(i, w)
