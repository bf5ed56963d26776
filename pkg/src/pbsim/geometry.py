"""Level-set domains and the perfectly reflecting displacement map.

The physical domain is the sublevel set ``omega < 0`` of a C^2 scalar field
whose gradient norm exceeds 1 on the boundary.  Displacements are folded
back into the domain by specular reflection: a ray is walked leg by leg,
each boundary hit is located by bracketing and bisection, and the direction
is mirrored about the outward normal.  A tangential-projection fallback
absorbs residual displacement when the bounce series degenerates (grazing
incidence or too many reflections), so the map is total and always returns
a point of the closed domain.

Scalar ``gamma`` is the reference path used by the event loop; the batched
variant runs the same leg/bisection scheme on arrays for Monte Carlo
diagnostics and is cross-checked against the scalar path in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import RandomStream

REFLECTION_CAP = 64
GRAZING_TOL = 1e-10
_BISECT_MAX = 200


class DegenerateGradient(Exception):
    """The level-set gradient vanishes where a normal is required."""


class ProjectionFailed(Exception):
    """No in-domain point found while absorbing a residual displacement."""


@dataclass(frozen=True)
class LevelSetDomain:
    """Bounded domain ``{omega <= 0}`` with its derived reflection constants.

    ``omega`` and ``grad_omega`` must accept arrays shaped ``(..., dim)`` and
    evaluate over the leading axes.  ``hess_bound`` is an upper bound for the
    Frobenius norm of the Hessian of omega over the convex hull of the
    closure; ``b0 = hess_bound / 2`` and ``a0 = 2 * hess_bound`` follow the
    normal-variation estimates, and ``delta`` is the boundary-shell
    half-width inside which the gradient norm stays above 1.
    """

    name: str
    omega: Callable
    grad_omega: Callable
    hess_bound: float
    dim: int
    bounding_box: np.ndarray  # shape (2, dim): [lo, hi]
    b0: float
    a0: float
    delta: float
    convex: bool
    diameter: float
    tol_boundary: float
    tol_hit: float
    tol_grad: float = 1e-12

    def omega1(self, x) -> float:
        return float(self.omega(x))


def build_domain(name, omega, grad_omega, hess_bound, dim, bounding_box,
                 convex=False) -> LevelSetDomain:
    """Assemble a domain record, estimating the shell half-width delta."""
    box = np.asarray(bounding_box, dtype=float).reshape(2, dim)
    diameter = float(np.linalg.norm(box[1] - box[0]))
    b0 = 0.5 * hess_bound
    a0 = 2.0 * hess_bound
    tol_boundary = 1e-9 * diameter
    tol_hit = 1e-12 * diameter
    dom = LevelSetDomain(
        name=name, omega=omega, grad_omega=grad_omega,
        hess_bound=float(hess_bound), dim=int(dim), bounding_box=box,
        b0=b0, a0=a0, delta=0.0, convex=bool(convex), diameter=diameter,
        tol_boundary=tol_boundary, tol_hit=tol_hit)
    delta = _estimate_delta(dom)
    object.__setattr__(dom, "delta", delta)
    _check_normalisation(dom)
    return dom


def _estimate_delta(dom: LevelSetDomain, n_boundary: int = 128) -> float:
    """Largest sampled shell half-width keeping ||grad omega|| > 1.

    Walks inward from sampled boundary points; the candidate width is
    halved until every probe in the 2*delta shell has gradient norm > 1,
    then shrunk by a safety factor.  Capped strictly below b0^-1 / 2.
    """
    rng = RandomStream(0x5EED)
    pts = boundary_samples(dom, n_boundary, rng)
    cap = 0.5 / dom.b0
    width = cap
    for _ in range(40):
        ok = True
        for x in pts:
            g = np.asarray(dom.grad_omega(x), dtype=float)
            n = g / np.linalg.norm(g)
            for s in np.linspace(0.0, 2.0 * width, 9):
                y = x - s * n
                if dom.omega1(y) > dom.tol_boundary:
                    continue  # probe left the closure, ignore
                gy = np.linalg.norm(np.asarray(dom.grad_omega(y), dtype=float))
                if gy <= 1.0:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            break
        width *= 0.5
    delta = min(cap, width) * (1.0 - 1e-6)
    if not 0.0 < delta < 0.5 / dom.b0:
        raise ValueError(f"domain {dom.name}: no admissible boundary shell found")
    return delta


def _check_normalisation(dom: LevelSetDomain, n: int = 64) -> None:
    rng = RandomStream(0xB0D)
    for x in boundary_samples(dom, n, rng):
        g = np.linalg.norm(np.asarray(dom.grad_omega(x), dtype=float))
        if g <= 1.0:
            raise ValueError(
                f"domain {dom.name}: ||grad omega|| = {g:.3f} <= 1 at boundary "
                f"point {x}; renormalise omega")


def boundary_samples(dom: LevelSetDomain, n: int, rng: RandomStream,
                     newton_steps: int = 60) -> np.ndarray:
    """Sample approximate boundary points by Newton walks from the box."""
    lo, hi = dom.bounding_box
    out = []
    attempts = 0
    while len(out) < n and attempts < 50 * n:
        attempts += 1
        x = lo + rng.uniform(dom.dim) * (hi - lo)
        for _ in range(newton_steps):
            w = dom.omega1(x)
            if abs(w) <= dom.tol_boundary:
                out.append(x.copy())
                break
            g = np.asarray(dom.grad_omega(x), dtype=float)
            g2 = float(g @ g)
            if g2 < dom.tol_grad:
                break
            x = x - (w / g2) * g
    if len(out) < n:
        raise ValueError(f"domain {dom.name}: boundary sampling failed")
    return np.array(out)


def uniform_interior_points(dom: LevelSetDomain, n: int, rng: RandomStream) -> np.ndarray:
    """Rejection-sample n points uniformly from the open domain."""
    lo, hi = dom.bounding_box
    out = []
    while len(out) < n:
        x = lo + rng.uniform(dom.dim) * (hi - lo)
        if dom.omega1(x) < -dom.tol_boundary:
            out.append(x)
    return np.array(out)


def contains(dom: LevelSetDomain, x) -> bool:
    """Closure membership with the numerical boundary shell."""
    return dom.omega1(x) <= dom.tol_boundary


def normal(dom: LevelSetDomain, x) -> np.ndarray:
    """Outward unit normal grad omega / ||grad omega||."""
    g = np.asarray(dom.grad_omega(x), dtype=float)
    ng = float(np.linalg.norm(g))
    if ng < dom.tol_grad:
        raise DegenerateGradient(f"||grad omega|| = {ng} at {x}")
    return g / ng


def reflect_direction(khat: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Specular mirror of a unit direction about a unit normal."""
    out = khat - 2.0 * float(khat @ n) * n
    return out / float(np.linalg.norm(out))


def _bisect_exit(dom, x, khat, lo, hi, w_lo=None, w_hi=None):
    """Root of omega along x + t*khat on a bracket with omega(lo)<=0<omega(hi).

    Illinois-damped regula falsi with a bisection safeguard; returns the
    inside end of the final bracket, so the walker's landing point stays in
    the closure while satisfying |omega| <= tol_hit.
    """
    theta, _ = _root_on_ray(dom, x, khat, lo, hi, w_lo, w_hi)
    return theta


def _root_on_ray(dom, x, khat, lo, hi, w_lo=None, w_hi=None):
    """(theta, omega(theta)) for the zero crossing; theta is the inside end."""
    omega = dom.omega
    tol = dom.tol_hit
    if w_lo is None:
        w_lo = float(omega(x + lo * khat))
    if w_hi is None:
        w_hi = float(omega(x + hi * khat))
    # f_lo/f_hi may be Illinois-damped for the secant step; w_lo stays the
    # true inside residual so termination is honest.
    f_lo, f_hi = w_lo, w_hi
    side = 0
    for _ in range(_BISECT_MAX):
        if -w_lo <= tol:
            break
        if hi - lo <= 1e-17 * (1.0 + abs(hi)):
            break  # bracket at float resolution
        denom = f_hi - f_lo
        t = (lo * f_hi - hi * f_lo) / denom if denom != 0.0 else 0.5 * (lo + hi)
        if not lo < t < hi:
            t = 0.5 * (lo + hi)
        w = float(omega(x + t * khat))
        if w > 0.0:
            hi, f_hi = t, w
            if side == 1:
                f_lo *= 0.5
            side = 1
        else:
            lo, w_lo, f_lo = t, w, w
            if side == -1:
                f_hi *= 0.5
            side = -1
    return lo, w_lo


def _inward_skip(dom, gdir, remaining):
    # omega(t) <= omega(0) + t*gdir + hess*t^2/2 stays negative up to
    # 2|gdir|/hess when gdir < 0; half of that is a safe strictly-inside leg.
    return min(remaining, abs(gdir) / dom.hess_bound)


def first_hit(dom: LevelSetDomain, x, khat, length: float):
    """First exit parameter along a ray, or None if the segment stays inside.

    Finds the smallest theta in [0, length] where omega crosses 0 upward,
    located to |omega| <= tol_hit.  Convex domains use a single endpoint
    test plus bracketed root finding; otherwise the ray is scanned in
    curvature-limited substeps first, which can miss features thinner than
    the substep (documented limitation).
    """
    x = np.asarray(x, dtype=float)
    khat = np.asarray(khat, dtype=float)
    if length <= 0.0:
        return None
    omega = dom.omega
    w0 = float(omega(x))
    t_lo = 0.0
    w_lo = w0
    if w0 > -dom.tol_boundary:
        # starting on (or numerically inside) the boundary shell
        g = np.asarray(dom.grad_omega(x), dtype=float)
        gdir = float(g @ khat)
        if gdir >= 0.0 and w0 >= 0.0:
            return 0.0  # heading outward from the boundary: immediate exit
        t_lo = _inward_skip(dom, gdir, length)
        w_lo = float(omega(x + t_lo * khat))
        if w_lo > 0.0:
            t_lo, w_lo = 0.0, w0  # safety estimate failed; scan from 0
        elif t_lo >= length:
            return None
    if dom.convex:
        w_end = float(omega(x + length * khat))
        if w_end <= 0.0:
            return None
        return _bisect_exit(dom, x, khat, t_lo, length,
                            w_lo=min(w_lo, 0.0), w_hi=w_end)
    h = min(0.1 / dom.hess_bound, (length - t_lo) / 16.0)
    if h <= 0.0:
        return None
    t = t_lo
    w_t = min(w_lo, 0.0)
    while t < length:
        t_next = min(t + h, length)
        w_next = float(omega(x + t_next * khat))
        if w_next > 0.0:
            return _bisect_exit(dom, x, khat, t, t_next, w_lo=w_t, w_hi=w_next)
        t, w_t = t_next, w_next
    return None


def project_xi(dom: LevelSetDomain, x, k) -> np.ndarray:
    """Constructive near-point of x + k inside the closure.

    Uses the curvature-corrected candidate x + k - 2*b0*||k||^2 n(x) /
    ||grad omega(x)|| and, if that still lies outside, pulls it back toward
    x by scanning and bisecting along the chord (x is in the closure, so an
    inside point always exists on that segment).  Returns *a* nearby point
    of the closure, not a claimed global nearest point: nearest-point
    non-uniqueness makes that ill-posed for non-convex domains.
    """
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    if dom.omega1(x) > dom.tol_boundary:
        raise ProjectionFailed(f"base point {x} outside the closure")
    nk2 = float(k @ k)
    if nk2 == 0.0:
        return x.copy()
    target = x + k
    if dom.omega1(target) <= 0.0:
        return target
    g = np.asarray(dom.grad_omega(x), dtype=float)
    ng = float(np.linalg.norm(g))
    if ng >= dom.tol_grad:
        y = target - (2.0 * dom.b0 * nk2 / ng) * (g / ng)
        if dom.omega1(y) <= 0.0:
            return y
    else:
        y = target
    # pull back toward x: scan for an inside point, then bisect the bracket
    lo_t, hi_t = None, 0.0
    for t in np.linspace(0.0, 1.0, 33)[1:]:
        if dom.omega1(y + t * (x - y)) <= 0.0:
            lo_t, hi_t = float(t), float(t) - 1.0 / 32.0
            break
    if lo_t is None:
        # chord grazes the shell without a strictly-inside sample; the base
        # point itself is in the closure and absorbs the whole residual
        return x.copy()
    for _ in range(80):
        mid = 0.5 * (lo_t + hi_t)
        if dom.omega1(y + mid * (x - y)) <= 0.0:
            lo_t = mid
        else:
            hi_t = mid
        if abs(lo_t - hi_t) * math.sqrt(nk2) <= dom.tol_hit:
            break
    return y + lo_t * (x - y)


def gamma(dom: LevelSetDomain, x, k, bounces: list | None = None,
          stats: dict | None = None) -> np.ndarray:
    """Reflected endpoint of the displacement k applied at x.

    Walks the polyline of specular reflections conserving path length.  The
    bounce series is cut off at REFLECTION_CAP (or on grazing incidence /
    stalled progress) and the residual displacement is absorbed by
    ``project_xi``; ``stats`` counters record how often each fallback fires.
    ``bounces`` (if given) collects (point, incoming, outgoing) triples.
    """
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    norm_k = math.sqrt(float(k @ k))
    if norm_k == 0.0:
        return x.copy()
    pos = x
    khat = k / norm_k
    remaining = norm_k
    n_ref = 0
    stalls = 0
    omega = dom.omega
    grad_omega = dom.grad_omega
    tol_hit = dom.tol_hit
    hess = dom.hess_bound
    convex = dom.convex
    skip_hint = 0.0  # inward bracket start, valid right after a reflection
    while remaining > tol_hit:
        if convex:
            end = pos + remaining * khat
            w_end = float(omega(end))
            if w_end <= 0.0:
                return end
            lo, w_lo = 0.0, None
            if 0.0 < skip_hint < remaining:
                w_skip = float(omega(pos + skip_hint * khat))
                if w_skip <= 0.0:
                    lo, w_lo = skip_hint, w_skip
            theta, _ = _root_on_ray(dom, pos, khat, lo, remaining,
                                    w_lo=w_lo, w_hi=w_end)
        else:
            theta = first_hit(dom, pos, khat, remaining)
            if theta is None:
                return pos + remaining * khat
        pos = pos + theta * khat
        remaining -= theta
        if remaining <= tol_hit:
            return pos
        g = np.asarray(grad_omega(pos), dtype=float)
        gn = math.sqrt(float(g @ g))
        if gn < dom.tol_grad:
            raise DegenerateGradient(f"||grad omega|| = {gn} at {pos}")
        nvec = g / gn
        cosang = float(khat @ nvec)
        if abs(cosang) < GRAZING_TOL:
            # tangential residual: absorb through the projection map
            if stats is not None:
                stats["grazing"] = stats.get("grazing", 0) + 1
            return project_xi(dom, pos, remaining * khat)
        out = khat - (2.0 * cosang) * nvec
        out /= math.sqrt(float(out @ out))
        if bounces is not None:
            bounces.append((pos.copy(), khat.copy(), out.copy()))
        khat = out
        # quadratic bound keeps omega < 0 out to 2|cos|*gn/hess; use half
        skip_hint = abs(cosang) * gn / hess
        n_ref += 1
        stalls = stalls + 1 if theta <= tol_hit else 0
        if n_ref >= REFLECTION_CAP or stalls >= 3:
            if stats is not None:
                key = "cap_hits" if n_ref >= REFLECTION_CAP else "stalls"
                stats[key] = stats.get(key, 0) + 1
            return project_xi(dom, pos, remaining * khat)
    return pos


def gamma_batch(dom: LevelSetDomain, X, K, stats: dict | None = None) -> np.ndarray:
    """Vectorised gamma over rows of X, K (convex domains only).

    Runs the same leg walk as the scalar path with all active rays bisected
    in lockstep; rows that exhaust the reflection cap or hit grazing
    incidence fall back to the scalar routine.
    """
    if not dom.convex:
        return np.array([gamma(dom, x, k, stats=stats) for x, k in zip(X, K)])
    pos = np.array(X, dtype=float, copy=True)
    K = np.asarray(K, dtype=float)
    remaining = np.linalg.norm(K, axis=1)
    active = remaining > 0.0
    khat = np.zeros_like(pos)
    khat[active] = K[active] / remaining[active, None]
    on_boundary = np.zeros(len(pos), dtype=bool)
    fallback = np.zeros(len(pos), dtype=bool)
    for _ in range(REFLECTION_CAP):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        p = pos[idx]
        kh = khat[idx]
        rem = remaining[idx]
        lo = np.zeros(len(idx))
        if on_boundary[idx].any():
            g = np.asarray(dom.grad_omega(p), dtype=float)
            gdir = np.einsum("ij,ij->i", g, kh)
            skip = np.minimum(rem, np.abs(gdir) / dom.hess_bound)
            started = on_boundary[idx]
            lo = np.where(started, skip, 0.0)
            bad = dom.omega(p + lo[:, None] * kh) > 0.0
            lo[bad] = 0.0
        w_end = np.asarray(dom.omega(p + rem[:, None] * kh), dtype=float)
        exits = w_end > 0.0
        settle = idx[~exits]
        pos[settle] = p[~exits] + rem[~exits, None] * kh[~exits]
        remaining[settle] = 0.0
        active[settle] = False
        if not exits.any():
            break
        idx = idx[exits]
        p = p[exits]
        kh = kh[exits]
        rem = rem[exits]
        lo = lo[exits]
        hi = rem.copy()
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            wm = np.asarray(dom.omega(p + mid[:, None] * kh), dtype=float)
            outside = wm > 0.0
            hi = np.where(outside, mid, hi)
            lo = np.where(outside, lo, mid)
            if np.max(hi - lo) <= dom.tol_hit:
                break
        pos[idx] = p + lo[:, None] * kh
        remaining[idx] = rem - lo
        done = remaining[idx] <= dom.tol_hit
        active[idx[done]] = False
        idx = idx[~done]
        if len(idx) == 0:
            continue
        g = np.asarray(dom.grad_omega(pos[idx]), dtype=float)
        gn = np.linalg.norm(g, axis=1)
        nvec = g / gn[:, None]
        cosang = np.einsum("ij,ij->i", khat[idx], nvec)
        graze = np.abs(cosang) < GRAZING_TOL
        fallback[idx[graze]] = True
        active[idx[graze]] = False
        keep = ~graze
        ki = idx[keep]
        out = khat[ki] - 2.0 * cosang[keep, None] * nvec[keep]
        out /= np.linalg.norm(out, axis=1)[:, None]
        khat[ki] = out
        on_boundary[ki] = True
    fallback |= active  # rows that exhausted the cap
    for i in np.nonzero(fallback)[0]:
        if stats is not None:
            stats["cap_hits"] = stats.get("cap_hits", 0) + 1
        pos[i] = project_xi(dom, pos[i], remaining[i] * khat[i])
    return pos


def audit_hess_bound(dom: LevelSetDomain, n_samples: int, rng: RandomStream,
                     h: float = 1e-5) -> float:
    """Max finite-difference Hessian Frobenius norm over random points.

    Verifies the scenario-supplied hess_bound on interior samples; returns
    the worst observed norm (callers assert it is <= hess_bound).
    """
    worst = 0.0
    pts = uniform_interior_points(dom, n_samples, rng)
    eye = np.eye(dom.dim)
    for x in pts:
        H = np.empty((dom.dim, dom.dim))
        for i in range(dom.dim):
            gp = np.asarray(dom.grad_omega(x + h * eye[i]), dtype=float)
            gm = np.asarray(dom.grad_omega(x - h * eye[i]), dtype=float)
            H[i] = (gp - gm) / (2.0 * h)
        worst = max(worst, float(np.linalg.norm(0.5 * (H + H.T))))
    return worst


# ---------------------------------------------------------------------------
# Built-in domain registry.  All omegas are normalised so the boundary
# gradient norm is comfortably above 1.

def interval_domain(half_width: float = 1.0) -> LevelSetDomain:
    L = float(half_width)

    def omega(x):
        x = np.asarray(x, dtype=float)
        return (x[..., 0] ** 2 - L * L) / L

    def grad_omega(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x / L

    return build_domain("interval", omega, grad_omega, hess_bound=2.0 / L,
                        dim=1, bounding_box=[[-L], [L]], convex=True)


def ball_domain(radius: float = 1.0, dim: int = 2) -> LevelSetDomain:
    R = float(radius)

    def omega(x):
        x = np.asarray(x, dtype=float)
        return (np.sum(x * x, axis=-1) - R * R) / R

    def grad_omega(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x / R

    hess = 2.0 * math.sqrt(dim) / R
    box = [[-R] * dim, [R] * dim]
    return build_domain("ball", omega, grad_omega, hess_bound=hess,
                        dim=dim, bounding_box=box, convex=True)


def box_smooth_domain(half_axes=(1.0, 1.0), power: int = 4) -> LevelSetDomain:
    """Superellipse sublevel set: sum (x_i/a_i)^p - 1 with even p >= 4."""
    a = np.asarray(half_axes, dtype=float)
    p = int(power)
    if p < 4 or p % 2:
        raise ValueError("power must be an even integer >= 4")
    dim = len(a)

    def omega(x):
        x = np.asarray(x, dtype=float)
        return np.sum((x / a) ** p, axis=-1) - 1.0

    def grad_omega(x):
        x = np.asarray(x, dtype=float)
        return p * (x / a) ** (p - 1) / a

    hess = p * (p - 1) * math.sqrt(float(np.sum(a ** -4.0)))
    box = [list(-a), list(a)]
    return build_domain("box_smooth", omega, grad_omega, hess_bound=hess,
                        dim=dim, bounding_box=box, convex=True)


def polynomial_domain(coefficients: dict, dim: int, bounding_box,
                      hess_bound: float | None = None) -> LevelSetDomain:
    """Custom omega from a table of monomial coefficients.

    ``coefficients`` maps exponent tuples (one entry per spatial axis) to
    floats.  hess_bound, when not supplied, is bounded by maximising each
    second partial of every monomial at the corners of the bounding box.
    Not assumed convex, so the generic substep scan path is used.
    """
    terms = [(np.array(e, dtype=int), float(c)) for e, c in coefficients.items()]
    if any(len(e) != dim for e, _ in terms):
        raise ValueError("exponent tuples must have one entry per axis")
    box = np.asarray(bounding_box, dtype=float).reshape(2, dim)

    def omega(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for e, c in terms:
            out = out + c * np.prod(x ** e, axis=-1)
        return out

    def grad_omega(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        for e, c in terms:
            for i in range(dim):
                if e[i] == 0:
                    continue
                e2 = e.copy()
                e2[i] -= 1
                g[..., i] += c * e[i] * np.prod(x ** e2, axis=-1)
        return g

    if hess_bound is None:
        corner_abs = np.maximum(np.abs(box[0]), np.abs(box[1]))
        total = 0.0
        for e, c in terms:
            for i in range(dim):
                for j in range(dim):
                    e2 = e.copy()
                    e2[i] -= 1
                    e2[j] -= 1
                    if (e2 < 0).any():
                        continue
                    coef = abs(c) * e[i] * (e[j] - (i == j))
                    if coef == 0:
                        continue
                    total += (coef * np.prod(corner_abs ** e2)) ** 2
        hess_bound = math.sqrt(total)
    return build_domain("polynomial", omega, grad_omega, hess_bound=hess_bound,
                        dim=dim, bounding_box=box, convex=False)


DOMAIN_BUILDERS = {
    "interval": interval_domain,
    "ball": ball_domain,
    "box_smooth": box_smooth_domain,
}


def make_domain(name: str, **params) -> LevelSetDomain:
    try:
        builder = DOMAIN_BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown domain {name!r}; have {sorted(DOMAIN_BUILDERS)}")
    return builder(**params)
