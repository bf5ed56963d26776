"""Empirical particle measure and its observables.

The simulator's state is the rescaled counting measure ``P = N^-1 sum
delta_{z_i}``.  Particles live in a dense array with swap-remove so uniform
draws are O(1); a cumulative mass tree (selection weights) is kept in step
for O(log n) mass-weighted draws.  Total mass is accumulated in exact
integer arithmetic so the cached value never drifts from a cold recount.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .selection import SelectionWeights


class IndexOutOfRange(IndexError):
    """Particle index outside the current ensemble."""


@dataclass(frozen=True, slots=True)
class Particle:
    """One configuration-space point: integer mass, position, internals."""

    mass: int
    position: np.ndarray
    internal: np.ndarray

    def copy(self) -> "Particle":
        return Particle(self.mass, self.position.copy(), self.internal.copy())


@dataclass(frozen=True)
class InternalBoxSpec:
    """Mass-indexed product boxes for the internal coordinates."""

    d2: int
    bounds: callable = None  # mass -> sequence of (lo, hi), len d2

    def arrays(self, mass: int):
        """(lo, hi) arrays for a given mass."""
        if self.d2 == 0:
            empty = np.empty(0)
            return empty, empty
        pairs = self.bounds(mass)
        lo = np.array([p[0] for p in pairs], dtype=float)
        hi = np.array([p[1] for p in pairs], dtype=float)
        if (lo > hi).any():
            raise ValueError(f"internal box for mass {mass} has lo > hi")
        return lo, hi

    def clip(self, mass: int, values) -> np.ndarray:
        if self.d2 == 0:
            return np.empty(0)
        lo, hi = self.arrays(mass)
        return np.minimum(np.maximum(values, lo), hi)

    def contains(self, mass: int, values, tol: float = 1e-12) -> bool:
        if self.d2 == 0:
            return True
        lo, hi = self.arrays(mass)
        return bool((values >= lo - tol).all() and (values <= hi + tol).all())


NO_INTERNALS = InternalBoxSpec(d2=0)


class EnsembleMeasure:
    """Discrete measure N^-1 sum of Dirac masses with cached totals."""

    def __init__(self, scale: int, mass_cap: float, particles=(),
                 track_moments=(2,)):
        if scale < 1:
            raise ValueError("scale N must be a positive integer")
        self.scale = int(scale)
        self.mass_cap = float(mass_cap)
        self.particles: list[Particle] = []
        self.weights = SelectionWeights(self.scale)
        self._mass_units = 0  # exact integer sum of particle masses
        self._tracked = tuple(int(q) for q in track_moments)
        self._moment_units = {q: 0 for q in self._tracked}
        for z in particles:
            self.add(z)

    # -- observables ---------------------------------------------------

    def __len__(self) -> int:
        return len(self.particles)

    @property
    def count(self) -> int:
        return len(self.particles)

    @property
    def mass_units(self) -> int:
        return self._mass_units

    @property
    def cached_mass(self) -> float:
        """P(pi_m) = total integer mass / N."""
        return self._mass_units / self.scale

    def integrate(self, f) -> float:
        """P(f) = N^-1 sum f(z_i)."""
        return sum(f(z) for z in self.particles) / self.scale

    def moment(self, q: int) -> float:
        """P(pi_m^q), accumulated in exact integer arithmetic."""
        if q == 0:
            return len(self.particles) / self.scale
        if q == 1:
            return self._mass_units / self.scale
        if q in self._moment_units:
            return self._moment_units[q] / self.scale
        return sum(z.mass ** q for z in self.particles) / self.scale

    def histogram(self, axis, bins) -> np.ndarray:
        """Counts per bin; out-of-range values land in the edge bins."""
        bins = np.asarray(bins, dtype=float)
        if (np.diff(bins) <= 0).any():
            raise ValueError("bins must be strictly increasing")
        if not self.particles:
            return np.zeros(len(bins) - 1, dtype=int)
        values = np.array([axis(z) for z in self.particles], dtype=float)
        values = np.clip(values, bins[0], bins[-1])
        counts, _ = np.histogram(values, bins)
        return counts

    # -- mutation ------------------------------------------------------

    def add(self, z: Particle) -> "EnsembleMeasure":
        if z.mass < 1 or z.mass != int(z.mass):
            raise ValueError(f"particle mass must be a positive integer, got {z.mass}")
        m = int(z.mass)
        self.particles.append(z)
        self.weights.append(m)
        self._mass_units += m
        for q in self._tracked:
            self._moment_units[q] += m ** q
        return self

    def remove(self, index: int) -> Particle:
        n = len(self.particles)
        if not 0 <= index < n:
            raise IndexOutOfRange(index)
        removed = self.particles[index]
        last = self.particles[n - 1]
        if index != n - 1:
            self.particles[index] = last
            self.weights.set_mass(index, int(last.mass))
        self.particles.pop()
        self.weights.pop_last()
        m = int(removed.mass)
        self._mass_units -= m
        for q in self._tracked:
            self._moment_units[q] -= m ** q
        return removed

    def replace(self, index: int, z: Particle) -> Particle:
        """Swap the particle at index; keeps the mass tree in step."""
        n = len(self.particles)
        if not 0 <= index < n:
            raise IndexOutOfRange(index)
        old = self.particles[index]
        self.particles[index] = z
        if z.mass != old.mass:
            self.weights.set_mass(index, int(z.mass))
            self._mass_units += int(z.mass) - int(old.mass)
            for q in self._tracked:
                self._moment_units[q] += int(z.mass) ** q - int(old.mass) ** q
        return old

    # -- draws and audits ------------------------------------------------

    def sample_uniform_index(self, rng) -> int:
        return int(rng.integers(len(self.particles)))

    def sample_mass_weighted_index(self, rng) -> int:
        return self.weights.draw_index(rng)

    def snapshot(self):
        """Value copy of the particle list, safe to hand across workers."""
        return [z.copy() for z in self.particles]

    def recount(self) -> int:
        return sum(z.mass for z in self.particles)

    def audit(self) -> None:
        """Assert cache and tree agree exactly with a cold recount."""
        total = self.recount()
        if total != self._mass_units:
            raise AssertionError(
                f"cached mass {self._mass_units} != recount {total}")
        for q, units in self._moment_units.items():
            cold = sum(z.mass ** q for z in self.particles)
            if cold != units:
                raise AssertionError(f"moment {q} cache {units} != recount {cold}")
        self.weights.audit([z.mass for z in self.particles])
