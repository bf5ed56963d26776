"""Numerical verification of the construction's checkable claims.

Four families: Monte Carlo estimates of the move generator against the
analytic drift-diffusion form, martingale residuals replayed from debug
traces, mass-moment growth bounds across replicas, and distributional
oracles (mean-field coagulation counts, uniform reflecting-diffusion
equilibrium).  Everything here is pure post-processing over immutable run
outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats as sstats

from . import geometry
from .ensemble import Particle
from .model import ModelSpec, j_id_step
from .simulator import EventKind, Trajectory


class RequiresDebugTrace(Exception):
    """The diagnostic needs full event payloads (debug mode runs)."""


class TooFewSamples(Exception):
    """Not enough pooled samples for a meaningful histogram test."""


@dataclass(frozen=True)
class TestFunction:
    """Observable with the derivatives the generator diagnostics need.

    Callbacks take (mass, x, X) with x shaped (..., d1) and X (..., d2),
    vectorised over leading axes.  ``support_mass_cap`` > 0 means f
    vanishes for masses above the cap; 0 means unbounded support.
    """

    f: Callable
    grad_x: Callable
    laplacian_x: Callable
    grad_internal: Optional[Callable] = None
    support_mass_cap: int = 0
    label: str = ""

    def at(self, z: Particle) -> float:
        if 0 < self.support_mass_cap < z.mass:
            return 0.0
        return float(self.f(z.mass, z.position, z.internal))


def constant_one(label="1") -> TestFunction:
    return TestFunction(
        f=lambda m, x, X: np.ones(np.shape(x)[:-1]),
        grad_x=lambda m, x, X: np.zeros(np.shape(x)),
        laplacian_x=lambda m, x, X: np.zeros(np.shape(x)[:-1]),
        grad_internal=lambda m, x, X: np.zeros(np.shape(X)),
        label=label)


def mass_observable(cap: int = 0) -> TestFunction:
    """pi_m (optionally truncated above ``cap``); derivatives vanish."""

    def f(m, x, X):
        val = float(m) if cap == 0 or m <= cap else 0.0
        return np.full(np.shape(x)[:-1], val)

    return TestFunction(
        f=f,
        grad_x=lambda m, x, X: np.zeros(np.shape(x)),
        laplacian_x=lambda m, x, X: np.zeros(np.shape(x)[:-1]),
        grad_internal=lambda m, x, X: np.zeros(np.shape(X)),
        support_mass_cap=cap, label=f"mass<= {cap}" if cap else "mass")


def quartic_levelset_bump(radius: float = 1.0) -> TestFunction:
    """f(x) = (||x||^2 - R^2)^2: Neumann-compatible on the ball of radius R.

    grad f = 4 (||x||^2 - R^2) x is parallel to the outward normal and
    vanishes on the boundary, so grad omega . grad f = 0 there.
    """
    R2 = radius * radius

    def f(m, x, X):
        r2 = np.sum(np.asarray(x) ** 2, axis=-1)
        return (r2 - R2) ** 2

    def grad_x(m, x, X):
        x = np.asarray(x)
        r2 = np.sum(x ** 2, axis=-1)
        return 4.0 * (r2 - R2)[..., None] * x

    def laplacian_x(m, x, X):
        x = np.asarray(x)
        d = x.shape[-1]
        r2 = np.sum(x ** 2, axis=-1)
        return 4.0 * d * (r2 - R2) + 8.0 * r2

    return TestFunction(f=f, grad_x=grad_x, laplacian_x=laplacian_x,
                        grad_internal=lambda m, x, X: np.zeros(np.shape(X)),
                        label="(|x|^2-R^2)^2")


def linear_coordinate(axis: int = 0) -> TestFunction:
    """f(x) = x_axis; violates the Neumann condition on generic domains."""

    def f(m, x, X):
        return np.asarray(x)[..., axis]

    def grad_x(m, x, X):
        x = np.asarray(x)
        g = np.zeros(np.shape(x))
        g[..., axis] = 1.0
        return g

    return TestFunction(f=f, grad_x=grad_x,
                        laplacian_x=lambda m, x, X: np.zeros(np.shape(x)[:-1]),
                        grad_internal=lambda m, x, X: np.zeros(np.shape(X)),
                        label=f"x[{axis}]")


def validate_neumann(dom, tf: TestFunction, n_samples=200, tol=1e-7,
                     rng=None, mass=1, internal=None) -> float:
    """Max |grad omega . grad f| over sampled boundary points; <= tol passes.

    The default tolerance allows for boundary samples sitting within the
    domain's numerical shell rather than exactly on the level set.
    """
    from .rng import RandomStream
    rng = rng or RandomStream(0xF00)
    pts = geometry.boundary_samples(dom, n_samples, rng)
    X = np.empty(0) if internal is None else np.asarray(internal, dtype=float)
    worst = 0.0
    for x in pts:
        g_omega = np.asarray(dom.grad_omega(x), dtype=float)
        g_f = np.asarray(tf.grad_x(mass, x, X), dtype=float)
        worst = max(worst, abs(float(g_omega @ g_f)))
    if worst > tol:
        raise ValueError(
            f"test function {tf.label!r} violates the Neumann condition: "
            f"max |grad omega . grad f| = {worst:.3e}")
    return worst


def analytic_generator(spec: ModelSpec, tf: TestFunction, z: Particle,
                       u: float) -> float:
    """(1/2) sigma^2 laplacian f + b . grad f + H . grad_internal f at z."""
    if 0 < tf.support_mass_cap < z.mass:
        return 0.0
    s = spec.sigma(u, z)
    val = 0.5 * s * s * float(tf.laplacian_x(z.mass, z.position, z.internal))
    b = np.asarray(spec.drift(u, z), dtype=float)
    val += float(b @ np.asarray(tf.grad_x(z.mass, z.position, z.internal),
                                dtype=float))
    if spec.internal_drift is not None and z.internal.size:
        H = np.asarray(spec.internal_drift(u, z), dtype=float)
        gi = np.asarray(tf.grad_internal(z.mass, z.position, z.internal),
                        dtype=float)
        val += float(H @ gi)
    return val


def generator_estimate(dom, spec: ModelSpec, tf: TestFunction, z: Particle,
                       u: float, cN: float, n_samples: int, rng,
                       box=None) -> tuple:
    """Monte Carlo (mean, stderr) of cN^2 (f(moved z) - f(z)).

    Batches the Gaussian displacement, folds all samples through the
    reflection map, applies the internal-drift clamp (deterministic given
    u) and averages the observable increment.
    """
    Z = rng.normal((n_samples, dom.dim))
    s = spec.sigma(u, z)
    b = np.asarray(spec.drift(u, z), dtype=float)
    K = (s / cN) * Z + b / (cN * cN)
    X0 = np.tile(z.position, (n_samples, 1))
    moved = geometry.gamma_batch(dom, X0, K)
    if box is not None and box.d2:
        new_internal = j_id_step(spec, box, u, z, cN)
    else:
        new_internal = z.internal
    f_moved = np.asarray(tf.f(z.mass, moved, new_internal), dtype=float)
    f_base = float(tf.f(z.mass, z.position, z.internal))
    vals = (cN * cN) * (f_moved - f_base)
    mean = float(np.mean(vals))
    stderr = float(np.std(vals) / math.sqrt(n_samples))
    return mean, stderr


def martingale_residual(traj: Trajectory, spec: ModelSpec, tf: TestFunction,
                        exact_kernels: bool = False, incremental: bool = True,
                        audit_every: int = 512):
    """Residual series M_t = P_t(f) - P_0(f) - integral of the compensator.

    Replays the debug event trace.  The move term substitutes the analytic
    generator for the per-event conditional expectation (bias O(1/cN),
    below the replicate noise band at default parameters); the source term
    uses the source's exact f-integral with the cap indicator; kernel terms
    integrate the exact selection sums when ``exact_kernels`` (O(n^i) per
    event) and the kernel's expected product integral.

    ``incremental`` updates the drift sum per event, which requires the
    coefficient callbacks to be independent of u (all presets are); a
    periodic cold-sum audit raises if that assumption is violated.
    """
    if traj.events is None or traj.initial_particles is None:
        raise RequiresDebugTrace("run with debug_trace=True")
    params = traj.params
    N = params.N
    particles = [p.copy() for p in traj.initial_particles]
    pf = sum(tf.at(z) for z in particles) / N
    pf0 = pf
    mass_now = sum(z.mass for z in particles)

    def gen(z, u):
        return analytic_generator(spec, tf, z, u)

    gens = [gen(z, 0.0) for z in particles]
    drift_sum = float(sum(gens))
    comp = 0.0
    times, residuals = [0.0], [0.0]
    u_prev = 0.0
    for n_ev, ev in enumerate(traj.events):
        tau = ev.tau
        if not incremental:
            drift_sum = float(sum(gen(z, u_prev) for z in particles))
        elif audit_every and n_ev % audit_every == audit_every - 1:
            cold = float(sum(gen(z, u_prev) for z in particles))
            if abs(cold - drift_sum) > 1e-9 * (1.0 + abs(cold)):
                raise ValueError(
                    "incremental drift sum diverged from the cold sum; "
                    "coefficients depend on u, rerun with incremental=False")
            drift_sum = cold
        rate_term = 0.0
        if spec.source is not None:
            lam = spec.source.lam(u_prev)
            if lam > 0.0:
                if spec.source.f_integral is None:
                    raise RequiresDebugTrace(
                        "source compensator needs source.f_integral")
                # cap indicator: unit-mass insertion must stay under mN
                if (mass_now + 1) / N <= params.mN:
                    rate_term += spec.source.f_integral(u_prev, tf)
        if exact_kernels:
            rate_term += _exact_kernel_compensator(particles, spec, tf,
                                                   u_prev, N)
        comp += tau * (drift_sum / N + rate_term)
        # apply the jump, mirroring the simulator's swap-remove bookkeeping
        kind = ev.kind
        u_prev = ev.u
        if kind in (EventKind.MOVE, EventKind.SELF_INTERACT) \
                and ev.payload is not None:
            idx, old, new = ev.payload
            particles[idx] = new
            pf += (tf.at(new) - tf.at(old)) / N
            g_new = gen(new, u_prev)
            drift_sum += g_new - gens[idx]
            gens[idx] = g_new
        elif kind == EventKind.SOURCE and ev.payload is not None:
            (z,) = ev.payload
            if z is not None:
                particles.append(z)
                pf += tf.at(z) / N
                mass_now += z.mass
                g_new = gen(z, u_prev)
                gens.append(g_new)
                drift_sum += g_new
        elif kind == EventKind.INTERACT and ev.payload is not None:
            indices, olds, news = ev.payload
            for idx in sorted(indices, reverse=True):
                last = len(particles) - 1
                drift_sum -= gens[idx]
                particles[idx] = particles[last]
                gens[idx] = gens[last]
                particles.pop()
                gens.pop()
            for w in news:
                particles.append(w)
                g_new = gen(w, u_prev)
                gens.append(g_new)
                drift_sum += g_new
            pf += (sum(tf.at(w) for w in news)
                   - sum(tf.at(z) for z in olds)) / N
        times.append(ev.t)
        residuals.append(pf - pf0 - comp)
    return np.array(times), np.array(residuals)


def _exact_kernel_compensator(particles, spec, tf, u, N):
    total = 0.0
    for kernel in spec.kernels:
        if kernel.expected_products_f is None:
            raise RequiresDebugTrace(
                "kernel compensator needs expected_products_f")
        i, j = kernel.arity_in, kernel.arity_out
        fact = math.factorial(i) * math.factorial(j)
        n = len(particles)
        if i == 2:
            for a in range(n):
                za = particles[a]
                for b_ in range(n):
                    if a == b_:
                        continue
                    zb = particles[b_]
                    rate = kernel.total_rate(u, za, zb)
                    if rate == 0.0:
                        continue
                    gain = kernel.expected_products_f(u, (za, zb), tf)
                    loss = tf.at(za) + tf.at(zb)
                    total += rate * (gain - loss) / fact / N ** i
        else:
            raise NotImplementedError("exact kernel compensator for i != 2")
    if spec.self_kernel is not None:
        sk = spec.self_kernel
        if sk.expected_products_f is not None:
            for z in particles:
                rate = sk.total_rate(u, z)
                if rate:
                    gain = sk.expected_products_f(u, (z,), tf)
                    total += rate * (gain - tf.at(z)) / N
    return total


@dataclass
class MomentReport:
    passed: bool
    worst_excess: float
    worst_time: float
    bound_at_worst: float
    detail: str = ""


def moment_bound_check(trajectories, spec: ModelSpec, N: int,
                       min_replicas: int = 16) -> MomentReport:
    """Replicate-mean mass against Xi + t Lambda^(1) + martingale slack.

    With the source off the mean must equal Xi exactly (integer masses);
    otherwise the bound gets the N-scaled quadratic-moment slack plus four
    replicate standard errors.
    """
    if len(trajectories) < min_replicas:
        raise ValueError(f"need >= {min_replicas} replicas")
    rows0 = trajectories[0].rows if isinstance(trajectories[0], Trajectory) \
        else trajectories[0]
    times = [r.t for r in rows0]
    lam1 = spec.source.moment_bounds(1) if spec.source else 0.0
    lam2 = spec.source.moment_bounds(2) if spec.source else 0.0
    mass = np.array([[r.mass_units / N for r in
                      (tr.rows if isinstance(tr, Trajectory) else tr)]
                     for tr in trajectories])
    xi = float(mass[:, 0].max())
    if not np.allclose(mass[:, 0], xi):
        raise ValueError("replicas disagree on the initial mass")
    worst, worst_t, worst_bound = -np.inf, 0.0, 0.0
    R = mass.shape[0]
    for jcol, t in enumerate(times):
        mean = float(np.mean(mass[:, jcol]))
        if lam1 == 0.0:
            bound = xi
            excess = abs(mean - xi)
        else:
            slack = 2.0 * math.sqrt(t * lam2 / N) if lam2 else 0.0
            se = float(np.std(mass[:, jcol], ddof=1) / math.sqrt(R)) if R > 1 else 0.0
            bound = xi + t * lam1 + slack + 4.0 * se
            excess = mean - bound
        if excess > worst:
            worst, worst_t, worst_bound = excess, t, bound
    tol = 0.0 if lam1 else 1e-12
    return MomentReport(passed=worst <= tol, worst_excess=worst,
                        worst_time=worst_t, bound_at_worst=worst_bound,
                        detail="source off: exact equality" if lam1 == 0.0
                        else "sourced growth bound")


def coagulation_oracle(kappa: float, n0: float, t):
    """Mean-field count density for the constant pair-merge kernel."""
    t = np.asarray(t, dtype=float)
    return n0 / (1.0 + 0.5 * kappa * n0 * t)


def equilibrium_uniformity_check(positions, dom, bins: int = 20):
    """Chi-square of pooled positions against the uniform law on the domain.

    1-D domains bin the coordinate directly (equal widths, equal volumes);
    the 2-D disk bins the first coordinate with chord-area weights.  Bins
    with expected count below 5 are merged with their neighbour.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    n = positions.shape[0]
    if n < 1000:
        raise TooFewSamples(f"{n} pooled samples < 1000")
    lo, hi = dom.bounding_box[0][0], dom.bounding_box[1][0]
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(positions[:, 0], lo, hi), edges)
    if dom.dim == 1:
        expected = np.full(bins, n / bins)
    elif dom.name == "ball" and dom.dim == 2:
        R = hi

        def slab(a, b):
            # area of the vertical slab of the disk between x = a and x = b
            def F(x):
                x = min(max(x, -R), R)
                return x * math.sqrt(max(R * R - x * x, 0.0)) + \
                    R * R * math.asin(x / R)
            return F(b) - F(a)

        areas = np.array([slab(edges[i], edges[i + 1]) for i in range(bins)])
        expected = n * areas / areas.sum()
    else:
        raise ValueError("uniformity check supports 1-D domains and the 2-D ball")
    counts, expected = _merge_small_bins(counts, expected)
    chi2, p = sstats.chisquare(counts, expected)
    return float(chi2), float(p)


def _merge_small_bins(counts, expected, floor=5.0):
    out_c, out_e = [], []
    acc_c, acc_e = 0, 0.0
    for c, e in zip(counts, expected):
        acc_c += int(c)
        acc_e += float(e)
        if acc_e >= floor:
            out_c.append(acc_c)
            out_e.append(acc_e)
            acc_c, acc_e = 0, 0.0
    if acc_e > 0 and out_e:
        out_c[-1] += acc_c
        out_e[-1] += acc_e
    return np.array(out_c), np.array(out_e)
