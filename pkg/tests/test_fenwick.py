"""Fenwick tree against a naive cumulative-sum reference."""

import numpy as np

from pbsim.fenwick import FenwickTree
from pbsim.rng import RandomStream


class NaiveTree:
    def __init__(self):
        self.w = []

    def append(self, v):
        self.w.append(v)

    def set_weight(self, i, v):
        self.w[i] = v

    def pop_last(self):
        return self.w.pop()

    @property
    def total(self):
        return sum(self.w)

    def prefix_sum(self, i):
        return sum(self.w[:i + 1])

    def find(self, r):
        acc = 0
        for i, v in enumerate(self.w):
            acc += v
            if acc > r:
                return i
        raise ValueError(r)


def test_basic_append_and_find():
    t = FenwickTree()
    for w in (3, 0, 2, 5):
        t.append(w)
    assert t.total == 10
    assert t.prefix_sum(0) == 3
    assert t.prefix_sum(3) == 10
    assert t.find(0) == 0
    assert t.find(2.999) == 0
    assert t.find(3) == 2  # zero-weight slot 1 is never selected
    assert t.find(9.5) == 3


def test_random_operation_sequences_match_naive():
    rng = RandomStream(123)
    fast, slow = FenwickTree(), NaiveTree()
    for step in range(4000):
        op = rng.uniform()
        n = len(slow.w)
        if n == 0 or op < 0.4:
            w = int(rng.integers(10))
            fast.append(w)
            slow.append(w)
        elif op < 0.7:
            i = int(rng.integers(n))
            w = int(rng.integers(10))
            fast.set_weight(i, w)
            slow.set_weight(i, w)
        elif op < 0.85 and n:
            assert fast.pop_last() == slow.pop_last()
        else:
            assert fast.total == slow.total
            if n:
                i = int(rng.integers(n))
                assert fast.prefix_sum(i) == slow.prefix_sum(i)
            if slow.total > 0:
                r = rng.uniform() * slow.total
                assert fast.find(r) == slow.find(r)
    assert fast.total == slow.total


def test_growth_preserves_weights():
    t = FenwickTree(capacity=2)
    values = list(range(40))
    for v in values:
        t.append(v)
    for i, v in enumerate(values):
        assert t.weight(i) == v
    assert t.total == sum(values)


def test_find_rejects_out_of_range():
    t = FenwickTree()
    t.append(4)
    for bad in (-1, 4, 5):
        try:
            t.find(bad)
            assert False, "expected ValueError"
        except ValueError:
            pass
