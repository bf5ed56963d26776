"""Model ingredients: rates, kernels, sources and their validators.

Kernels are supplied as (total rate, product sampler) pairs, which is all
the event rules ever query.  Every callback takes the fictitious time u as
its first argument and must be pure; the reproducibility tests rely on
that.  Validators sample the stated boundary and growth conditions and
report the worst offender rather than trusting the scenario author.
Joint uniform continuity of kernel rates in (u, z) is a caller obligation:
it cannot be machine-checked for black-box callbacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import geometry
from .ensemble import InternalBoxSpec, Particle
from .rng import RandomStream


class ValidationFailed(Exception):
    """A model hypothesis check failed; carries the worst offending sample."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


@dataclass(frozen=True)
class SourceSpec:
    """Particle source: total rate, sampling law and mass-moment bounds."""

    lam: Callable[[float], float]                 # u -> total rate
    sampler: Callable[[float, RandomStream], Particle]
    moment_bounds: Callable[[int], float]         # q -> sup_u I_u(pi_m^q)
    f_integral: Optional[Callable] = None         # (u, test fn) -> I_u(f), exact


@dataclass(frozen=True)
class InteractionKernel:
    """Rate and product law turning arity_in particles into arity_out.

    ``k_inf`` majorises total_rate / (i! j!) over products of input masses;
    the sampler must conserve the integer mass sum exactly.
    """

    arity_in: int
    arity_out: int
    total_rate: Callable
    product_sampler: Callable
    k_inf: float
    expected_products_f: Optional[Callable] = None  # (u, zs, f) -> E sum f(w)


@dataclass(frozen=True)
class SelfKernel:
    """Single-particle transformation kernel (mass preserved exactly)."""

    total_rate: Callable
    product_sampler: Callable
    bound_per_mass: float  # sup_m K^inf_m: rate <= bound_per_mass * mass
    expected_products_f: Optional[Callable] = None


@dataclass(frozen=True)
class ModelSpec:
    """All model ingredients with their growth constants."""

    sigma: Callable              # (u, z) -> float in (0, sigma_inf]
    sigma_inf: float
    drift: Callable              # (u, z) -> R^d1, tangential on the boundary
    b_inf: float
    internal_drift: Callable     # (u, z) -> R^d2
    h_inf: Callable = None       # m -> H^inf_m bound (None when d2 == 0)
    source: Optional[SourceSpec] = None
    kernels: tuple = ()
    self_kernel: Optional[SelfKernel] = None
    clock_rate: float = 1.0

    @property
    def k_inf(self) -> float:
        return max((k.k_inf for k in self.kernels), default=0.0)

    @property
    def max_arity_in(self) -> int:
        return max((k.arity_in for k in self.kernels), default=1)


def j_id_step(spec: ModelSpec, box: InternalBoxSpec, u: float, z: Particle,
              cN: float) -> np.ndarray:
    """Clamped internal-drift step: X + H/cN^2 clipped to the mass box."""
    if box.d2 == 0 or spec.internal_drift is None:
        return z.internal
    H = np.asarray(spec.internal_drift(u, z), dtype=float)
    return box.clip(z.mass, z.internal + H / (cN * cN))


@dataclass
class ValidationReport:
    name: str
    passed: bool
    worst_value: float
    worst_sample: object = None
    detail: str = ""

    def check(self):
        if not self.passed:
            raise ValidationFailed(
                f"{self.name}: worst {self.worst_value:.3e} ({self.detail})",
                worst=self.worst_sample)
        return self


def validate_drift_tangency(spec: ModelSpec, dom, n_samples=200,
                            tol=1e-8, rng=None, times=(0.0, 0.5, 1.0),
                            masses=(1,), box=None) -> ValidationReport:
    """Sample boundary points and times; report max |b . n|."""
    rng = rng or RandomStream(0xD41F7)
    pts = geometry.boundary_samples(dom, n_samples, rng)
    box = box or InternalBoxSpec(d2=0)
    worst, worst_at = 0.0, None
    for x in pts:
        n = geometry.normal(dom, x)
        for m in masses:
            lo, hi = box.arrays(m)
            internal = 0.5 * (lo + hi)
            z = Particle(m, x, internal)
            for u in times:
                b = np.asarray(spec.drift(u, z), dtype=float)
                val = abs(float(b @ n))
                if val > worst:
                    worst, worst_at = val, (u, z)
    return ValidationReport("drift tangency", worst <= tol, worst, worst_at,
                            detail=f"|b.n| over {n_samples} boundary samples")


def validate_internal_drift_signs(spec: ModelSpec, box: InternalBoxSpec,
                                  dom, n_samples=200, rng=None,
                                  times=(0.0, 0.5, 1.0),
                                  masses=(1, 2, 5)) -> ValidationReport:
    """Check H points inward on every face of the internal boxes."""
    if box.d2 == 0 or spec.internal_drift is None:
        return ValidationReport("internal drift signs", True, 0.0)
    rng = rng or RandomStream(0x1D5)
    pts = geometry.uniform_interior_points(dom, max(4, n_samples // 8), rng)
    worst, worst_at = 0.0, None
    for m in masses:
        lo, hi = box.arrays(m)
        for x in pts:
            base = lo + rng.uniform(box.d2) * (hi - lo)
            for mu in range(box.d2):
                for face_val, sign in ((lo[mu], +1.0), (hi[mu], -1.0)):
                    X = base.copy()
                    X[mu] = face_val
                    z = Particle(m, x, X)
                    for u in times:
                        H = np.asarray(spec.internal_drift(u, z), dtype=float)
                        # inward components are fine; outward ones offend
                        val = -sign * float(H[mu])
                        if val > worst:
                            worst, worst_at = val, (u, z, mu)
    return ValidationReport("internal drift signs", worst <= 1e-12, worst,
                            worst_at, detail="outward drift on a face")


def validate_kernel_products(spec: ModelSpec, dom, box, n_samples=1000,
                             rng=None, masses=(1, 2, 3, 7)) -> ValidationReport:
    """Sample kernel products: exact mass conservation and majorant bound."""
    rng = rng or RandomStream(0xCAFE)
    if not spec.kernels and spec.self_kernel is None:
        return ValidationReport("kernel products", True, 0.0)
    pts = geometry.uniform_interior_points(dom, 16, rng)

    def random_particle():
        m = int(masses[int(rng.integers(len(masses)))])
        x = pts[int(rng.integers(len(pts)))]
        lo, hi = box.arrays(m)
        X = lo + rng.uniform(box.d2) * (hi - lo) if box.d2 else np.empty(0)
        return Particle(m, x, X)

    worst, worst_at = 0.0, None
    for kernel in spec.kernels:
        i, j = kernel.arity_in, kernel.arity_out
        fact = float(math.factorial(i) * math.factorial(j))
        for _ in range(n_samples):
            zs = tuple(random_particle() for _ in range(i))
            u = float(rng.uniform())
            rate = kernel.total_rate(u, *zs)
            prod_mass = 1
            for z in zs:
                prod_mass *= z.mass
            excess = rate / fact - kernel.k_inf * prod_mass
            if excess > worst:
                worst, worst_at = excess, (u, zs)
            if rate < 0:
                return ValidationReport("kernel products", False, rate,
                                        (u, zs), detail="negative rate")
            ws = kernel.product_sampler(u, zs, rng)
            if len(ws) != j:
                return ValidationReport("kernel products", False, float(len(ws)),
                                        (u, zs), detail="wrong product arity")
            if sum(w.mass for w in ws) != sum(z.mass for z in zs):
                return ValidationReport("kernel products", False, 1.0, (u, zs),
                                        detail="mass not conserved")
            rate_swapped = kernel.total_rate(u, *reversed(zs))
            if abs(rate_swapped - rate) > 1e-9 * (1.0 + abs(rate)):
                return ValidationReport("kernel products", False,
                                        abs(rate_swapped - rate), (u, zs),
                                        detail="rate not symmetric")
    if spec.self_kernel is not None:
        sk = spec.self_kernel
        for _ in range(n_samples):
            z = random_particle()
            u = float(rng.uniform())
            rate = sk.total_rate(u, z)
            excess = rate - sk.bound_per_mass * z.mass
            if excess > worst:
                worst, worst_at = excess, (u, z)
            (w,) = sk.product_sampler(u, z, rng)
            if w.mass != z.mass:
                return ValidationReport("kernel products", False, 1.0, (u, z),
                                        detail="self kernel changed the mass")
    tol = 1e-9
    return ValidationReport("kernel products", worst <= tol, worst, worst_at,
                            detail="majorant excess")


def validate_rate_bounds(spec: ModelSpec, dom, box, n_samples=500,
                         rng=None, masses=(1, 2, 5)) -> ValidationReport:
    """Sampled sigma in (0, sigma_inf] and ||b|| <= b_inf checks."""
    rng = rng or RandomStream(0x51B)
    pts = geometry.uniform_interior_points(dom, max(8, n_samples // 4), rng)
    worst, worst_at = 0.0, None
    for _ in range(n_samples):
        m = int(masses[int(rng.integers(len(masses)))])
        x = pts[int(rng.integers(len(pts)))]
        lo, hi = box.arrays(m)
        X = lo + rng.uniform(box.d2) * (hi - lo) if box.d2 else np.empty(0)
        z = Particle(m, x, X)
        u = float(rng.uniform()) * 2.0
        s = spec.sigma(u, z)
        if s <= 0.0:
            return ValidationReport("rate bounds", False, s, (u, z),
                                    detail="sigma not positive")
        excess = max(s - spec.sigma_inf,
                     float(np.linalg.norm(spec.drift(u, z))) - spec.b_inf)
        if excess > worst:
            worst, worst_at = excess, (u, z)
    return ValidationReport("rate bounds", worst <= 1e-9, worst, worst_at,
                            detail="sigma/drift bound excess")
