"""Particle selection: tuple-counting measures and the majorant sampler.

The measure weighting ordered tuples of *distinct* particles equals the
number of injections of tuple slots into the particle list.  Two
independent routes compute it at desk scale: literal enumeration of
injections, and the inclusion-exclusion recursion over box intersections.
Production sampling avoids both: interaction tuples are drawn mass-weighted
with replacement from the cumulative tree, repeats are rejected, and a
kernel thinning step accepts with rate / majorant, so accepted tuples
follow the kernel-weighted selection law exactly while rejected draws burn
the event slot as fictitious jumps.
"""

from __future__ import annotations

import math
from itertools import product
from typing import NamedTuple

from .fenwick import FenwickTree

ORACLE_MAX_PARTICLES = 8
ORACLE_MAX_TUPLE = 4
MAJORANT_SLACK = 1e-9  # relative tolerance before declaring a violation


class OracleTooLarge(Exception):
    """Inputs beyond the exhaustive oracle's size cap."""


class MajorantViolated(Exception):
    """A kernel rate exceeded its declared majorant."""


class SelectionWeights:
    """Cumulative mass tree over the particle array.

    Wraps the Fenwick tree with the ensemble-facing operations and an exact
    integer audit; ``draw_index`` realises one mass-weighted draw.
    """

    def __init__(self, scale: int):
        self.scale = int(scale)
        self._tree = FenwickTree()

    def __len__(self) -> int:
        return len(self._tree)

    @property
    def total_mass(self) -> int:
        return self._tree.total

    def append(self, mass: int) -> None:
        self._tree.append(int(mass))

    def set_mass(self, index: int, mass: int) -> None:
        self._tree.set_weight(index, int(mass))

    def pop_last(self) -> int:
        return self._tree.pop_last()

    def draw_index(self, rng) -> int:
        total = self._tree.total
        if total <= 0:
            raise ValueError("cannot draw from an empty mass tree")
        return self._tree.find(rng.uniform() * total)

    def audit(self, masses) -> None:
        masses = list(masses)
        if len(masses) != len(self._tree):
            raise AssertionError("tree size disagrees with particle count")
        if sum(masses) != self._tree.total:
            raise AssertionError("tree total disagrees with mass recount")
        for i, m in enumerate(masses):
            if self._tree.weight(i) != m:
                raise AssertionError(f"tree weight mismatch at index {i}")


def count_injections_oracle(particles, targets) -> int:
    """Number of injections alpha with particles[alpha[r]] in targets[r].

    Exhaustive enumeration over ordered index tuples with distinct entries;
    ``targets`` are membership predicates (callables) or containers.
    """
    if len(particles) > ORACLE_MAX_PARTICLES:
        raise OracleTooLarge(f"{len(particles)} particles > {ORACLE_MAX_PARTICLES}")
    if len(targets) > ORACLE_MAX_TUPLE:
        raise OracleTooLarge(f"tuple size {len(targets)} > {ORACLE_MAX_TUPLE}")
    tests = [t if callable(t) else (lambda p, box=t: p in box) for t in targets]
    slots = [[i for i, p in enumerate(particles) if test(p)] for test in tests]
    if any(not s for s in slots):
        return 0  # an unmatchable slot admits no injection
    count = 0
    for combo in product(*slots):
        if len(set(combo)) == len(combo):
            count += 1
    return count


def nu_recursion(weighted_atoms: dict, boxes) -> int:
    """Tuple-selection count via the inclusion-exclusion recursion.

    ``weighted_atoms`` maps atoms to non-negative integer multiplicities;
    ``boxes`` is a sequence of atom collections.  Equals the injection count
    of the multiset expansion (checked exhaustively in the tests).
    """
    boxes = [frozenset(b) for b in boxes]
    if len(boxes) > ORACLE_MAX_TUPLE:
        raise OracleTooLarge(f"tuple size {len(boxes)} > {ORACLE_MAX_TUPLE}")

    def measure(box):
        return sum(w for a, w in weighted_atoms.items() if a in box)

    def nu(prefix):
        if len(prefix) == 1:
            return measure(prefix[0])
        head, last = prefix[:-1], prefix[-1]
        value = nu(head) * measure(last)
        for j in range(len(head)):
            overlap = head[:j] + (head[j] & last,) + head[j + 1:]
            value -= nu(overlap)
        return value

    return nu(tuple(boxes))


class SampledTuple(NamedTuple):
    indices: tuple
    particles: tuple
    accept_ratio: float


def sample_tuple(ensemble, kernel, u: float, rng):
    """One majorant draw of an interaction input tuple, or None if fictitious.

    Draws ``arity_in`` indices mass-weighted with replacement, rejects
    repeats (selection requires distinct particles) and thins by
    rate / (i! j! k_inf prod masses).  ``kernel.k_inf`` must majorise the
    kernel or MajorantViolated is raised.
    """
    i = kernel.arity_in
    if len(ensemble) < i:
        return None
    indices = tuple(ensemble.sample_mass_weighted_index(rng) for _ in range(i))
    if len(set(indices)) < i:
        return None  # repeated particle: fictitious jump
    zs = tuple(ensemble.particles[j] for j in indices)
    rate = kernel.total_rate(u, *zs)
    prod_mass = 1
    for z in zs:
        prod_mass *= z.mass
    bound = (math.factorial(i) * math.factorial(kernel.arity_out)
             * kernel.k_inf * prod_mass)
    ratio = rate / bound
    if ratio > 1.0 + MAJORANT_SLACK:
        raise MajorantViolated(
            f"kernel rate {rate} exceeds majorant {bound} for masses "
            f"{[z.mass for z in zs]}")
    if rng.uniform() >= ratio:
        return None
    return SampledTuple(indices, zs, min(ratio, 1.0))


def exact_tuple_rate(particles, kernel, u: float) -> float:
    """Exact selection-integrated kernel rate sum over ordered distinct tuples.

    Debug-mode alternative to the majorant: O(n^i), intended for n <= 200.
    """
    i = kernel.arity_in
    n = len(particles)
    if i == 1:
        return sum(kernel.total_rate(u, z) for z in particles)
    if i == 2:
        total = 0.0
        for a in range(n):
            za = particles[a]
            for b in range(n):
                if a != b:
                    total += kernel.total_rate(u, za, particles[b])
        return total
    raise NotImplementedError("exact selection rates implemented for i <= 2")


def exact_tuple_draw(particles, kernel, u: float, total: float, rng):
    """Draw an ordered distinct tuple from the exact kernel-weighted law."""
    i = kernel.arity_in
    n = len(particles)
    r = rng.uniform() * total
    acc = 0.0
    if i == 1:
        for a in range(n):
            acc += kernel.total_rate(u, particles[a])
            if acc > r:
                return (a,), (particles[a],)
        return (n - 1,), (particles[n - 1],)
    if i == 2:
        last = None
        for a in range(n):
            za = particles[a]
            for b in range(n):
                if a == b:
                    continue
                acc += kernel.total_rate(u, za, particles[b])
                last = (a, b)
                if acc > r:
                    return (a, b), (za, particles[b])
        return last, (particles[last[0]], particles[last[1]])
    raise NotImplementedError("exact selection draws implemented for i <= 2")
