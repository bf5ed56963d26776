"""Scenario presets wiring domains, kernels, drifts and initial states.

Each preset returns a fully validated bundle; the registry drives both the
CLI and the test suite.  Parameters are declared with types and defaults so
the config layer can reject unknown or ill-typed keys by name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import geometry
from .ensemble import InternalBoxSpec, Particle, NO_INTERNALS
from .model import (InteractionKernel, ModelSpec, SelfKernel, SourceSpec,
                    validate_drift_tangency, validate_internal_drift_signs,
                    validate_kernel_products, validate_rate_bounds)
from .rng import RandomStream


class UnknownScenario(KeyError):
    """Requested scenario name is not registered."""


@dataclass(frozen=True)
class Scenario:
    name: str
    model: ModelSpec
    box: InternalBoxSpec
    domain: geometry.LevelSetDomain
    params: dict
    defaults: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    initial: Callable = None  # (N, rng) -> list[Particle]

    def validate(self, n_samples=200):
        validate_drift_tangency(self.model, self.domain, n_samples=64,
                                box=self.box).check()
        validate_internal_drift_signs(self.model, self.box, self.domain,
                                      n_samples=n_samples).check()
        validate_kernel_products(self.model, self.domain, self.box,
                                 n_samples=n_samples).check()
        validate_rate_bounds(self.model, self.domain, self.box,
                             n_samples=n_samples).check()
        return self


def _uniform_positions(dom, count, rng):
    return geometry.uniform_interior_points(dom, count, rng)


def _monodisperse_initial(dom, mass, internal_of_mass=None):
    def build(count, rng):
        pts = _uniform_positions(dom, count, rng)
        out = []
        for x in pts:
            X = internal_of_mass(mass) if internal_of_mass else np.empty(0)
            out.append(Particle(mass, x, np.asarray(X, dtype=float)))
        return out
    return build


def _unit_source(dom, rate, mass=1):
    """Constant-rate source of fixed-mass particles, uniform in the domain."""
    if rate <= 0.0:
        return None

    def sampler(u, rng):
        x = _uniform_positions(dom, 1, rng)[0]
        return Particle(mass, x, np.empty(0))

    return SourceSpec(lam=lambda u: rate, sampler=sampler,
                      moment_bounds=lambda q: rate * (mass ** q))


def _midpoint_merge(box=None):
    """Pair product: summed mass at the mass-weighted midpoint."""

    def sample(u, zs, rng):
        z1, z2 = zs
        m = z1.mass + z2.mass
        x = (z1.mass * z1.position + z2.mass * z2.position) / m
        if box is not None and box.d2:
            X = box.clip(m, z1.internal + z2.internal)
        else:
            X = np.empty(0)
        return (Particle(m, x, X),)

    return sample


# --- presets ---------------------------------------------------------------

def _pure_diffusion(domain, params):
    sigma0 = params["sigma"]
    model = ModelSpec(
        sigma=lambda u, z: sigma0,
        sigma_inf=sigma0,
        drift=lambda u, z: _ZERO[domain.dim],
        b_inf=0.0,
        internal_drift=None,
        source=_unit_source(domain, params["source_rate"]),
        kernels=(),
        clock_rate=1.0,
    )
    return model, NO_INTERNALS


_ZERO = {d: np.zeros(d) for d in (1, 2, 3)}


def build_pure_diffusion_interval(params):
    dom = geometry.interval_domain(params["half_width"])
    model, box = _pure_diffusion(dom, params)
    return Scenario(
        name="pure_diffusion_interval", model=model, box=box, domain=dom,
        params=params,
        defaults={"t_end": 1.0, "output_cadence": 0.25},
        oracle={"kind": "uniform_equilibrium", "half_width": params["half_width"]},
        initial=_monodisperse_initial(dom, 1))


def build_pure_diffusion_ball(params):
    dom = geometry.ball_domain(params["radius"], int(params["dim"]))
    model, box = _pure_diffusion(dom, params)
    return Scenario(
        name="pure_diffusion_ball", model=model, box=box, domain=dom,
        params=params,
        defaults={"t_end": 1.0, "output_cadence": 0.25},
        oracle={"kind": "uniform_equilibrium", "radius": params["radius"]},
        initial=_monodisperse_initial(dom, 1))


def _space_blind_pair_rate(kappa, mollifier_range):
    if mollifier_range <= 0.0:
        return lambda u, z1, z2: kappa
    inv2 = 1.0 / (2.0 * mollifier_range * mollifier_range)

    def rate(u, z1, z2):
        d = z1.position - z2.position
        return kappa * math.exp(-float(d @ d) * inv2)

    return rate


def build_constant_coag(params):
    dom = geometry.ball_domain(params["radius"], int(params["dim"]))
    kappa = params["kappa"]
    merge = _midpoint_merge()

    def expected_f(u, zs, tf):
        (w,) = merge(u, zs, None)  # the merge product is deterministic
        return tf.at(w)

    kernel = InteractionKernel(
        arity_in=2, arity_out=1,
        total_rate=_space_blind_pair_rate(kappa, params["mollifier_range"]),
        product_sampler=merge,
        k_inf=kappa / 2.0,
        expected_products_f=expected_f,
    )
    sigma0 = params["sigma"]
    model = ModelSpec(
        sigma=lambda u, z: sigma0, sigma_inf=sigma0,
        drift=lambda u, z: _ZERO[dom.dim], b_inf=0.0,
        internal_drift=None, kernels=(kernel,), clock_rate=1.0)
    return Scenario(
        name="constant_coag", model=model, box=NO_INTERNALS, domain=dom,
        params=params,
        defaults={"t_end": 2.0, "output_cadence": 0.1},
        oracle={"kind": "constant_coag", "kappa": kappa},
        initial=_monodisperse_initial(dom, int(params["init_mass"])))


def build_additive_coag(params):
    dom = geometry.ball_domain(params["radius"], int(params["dim"]))
    kappa = params["kappa"]

    def rate(u, z1, z2):
        return kappa * (z1.mass + z2.mass)

    kernel = InteractionKernel(
        arity_in=2, arity_out=1, total_rate=rate,
        product_sampler=_midpoint_merge(), k_inf=kappa)
    sigma0 = params["sigma"]
    model = ModelSpec(
        sigma=lambda u, z: sigma0, sigma_inf=sigma0,
        drift=lambda u, z: _ZERO[dom.dim], b_inf=0.0,
        internal_drift=None, kernels=(kernel,), clock_rate=1.0)
    return Scenario(
        name="additive_coag", model=model, box=NO_INTERNALS, domain=dom,
        params=params,
        defaults={"t_end": 1.0, "output_cadence": 0.1},
        oracle={"kind": "additive_coag", "kappa": kappa},
        initial=_monodisperse_initial(dom, int(params["init_mass"])))


def build_sintering_ball(params):
    """Surface-area internal coordinate relaxing toward the fused sphere.

    Gamma_m = [s1 m^(2/3), s1 m]; the drift -(X - a(m))/tau vanishes on the
    lower face and points inward on the upper, so a particle's excess area
    decays exponentially with rate 1/tau.
    """
    dom = geometry.ball_domain(params["radius"], int(params["dim"]))
    s1 = params["s1"]
    tau = params["tau_s"]

    def bounds(m):
        return ((s1 * m ** (2.0 / 3.0), s1 * m),)

    box = InternalBoxSpec(d2=1, bounds=bounds)

    def H(u, z):
        a = s1 * z.mass ** (2.0 / 3.0)
        return np.array([-(z.internal[0] - a) / tau])

    kernels = ()
    if params["kappa"] > 0.0:
        kernels = (InteractionKernel(
            arity_in=2, arity_out=1,
            total_rate=_space_blind_pair_rate(params["kappa"], 0.0),
            product_sampler=_midpoint_merge(box),
            k_inf=params["kappa"] / 2.0),)
    sigma0 = params["sigma"]
    model = ModelSpec(
        sigma=lambda u, z: sigma0, sigma_inf=sigma0,
        drift=lambda u, z: _ZERO[dom.dim], b_inf=0.0,
        internal_drift=H, h_inf=lambda m: max(1.0, s1 / tau),
        kernels=kernels, clock_rate=1.0)
    m0 = int(params["init_mass"])

    def initial(count, rng):
        pts = _uniform_positions(dom, count, rng)
        X0 = np.array([s1 * m0])  # fully unfused: area at the upper face
        return [Particle(m0, x, X0.copy()) for x in pts]

    return Scenario(
        name="sintering_ball", model=model, box=box, domain=dom,
        params=params,
        defaults={"t_end": 2.0, "output_cadence": 0.1},
        oracle={"kind": "sintering_relaxation", "tau_s": tau, "s1": s1,
                "init_mass": m0},
        initial=initial)


def build_active_sites_ball(params):
    """Active-site internal coordinate decaying through a self-kernel.

    Sites live in [0, m]; each decays at rate lambda_s, realised as a
    self-interaction that decrements the site count by one (mass is
    untouched).  The pair kernel weights coagulation by site fractions.
    """
    dom = geometry.ball_domain(params["radius"], int(params["dim"]))
    lam_s = params["site_decay_rate"]

    def bounds(m):
        return ((0.0, float(m)),)

    box = InternalBoxSpec(d2=1, bounds=bounds)

    def self_rate(u, z):
        return lam_s * float(z.internal[0])

    def self_product(u, z, rng):
        X = np.array([max(0.0, float(z.internal[0]) - 1.0)])
        return (Particle(z.mass, z.position, X),)

    self_kernel = SelfKernel(total_rate=self_rate,
                             product_sampler=self_product,
                             bound_per_mass=lam_s)
    kernels = ()
    if params["kappa"] > 0.0:
        kappa = params["kappa"]

        def rate(u, z1, z2):
            f1 = float(z1.internal[0]) / z1.mass
            f2 = float(z2.internal[0]) / z2.mass
            return kappa * f1 * f2

        kernels = (InteractionKernel(
            arity_in=2, arity_out=1, total_rate=rate,
            product_sampler=_midpoint_merge(box), k_inf=kappa / 2.0),)
    sigma0 = params["sigma"]
    model = ModelSpec(
        sigma=lambda u, z: sigma0, sigma_inf=sigma0,
        drift=lambda u, z: _ZERO[dom.dim], b_inf=0.0,
        internal_drift=None, kernels=kernels, self_kernel=self_kernel,
        clock_rate=1.0)
    m0 = int(params["init_mass"])

    def initial(count, rng):
        pts = _uniform_positions(dom, count, rng)
        return [Particle(m0, x, np.array([float(m0)])) for x in pts]

    return Scenario(
        name="active_sites_ball", model=model, box=box, domain=dom,
        params=params,
        defaults={"t_end": 2.0, "output_cadence": 0.1},
        oracle={"kind": "site_decay", "site_decay_rate": lam_s,
                "init_mass": m0},
        initial=initial)


def build_pure_diffusion_poly(params):
    """Diffusion in a custom level-set domain given as a coefficient table.

    The config file supplies monomials as ``poly_<e1>_..._<ed> = coef``
    keys; the Hessian bound is derived from the table over the bounding
    box, and the generic (non-convex) first-hit scan is used.
    """
    poly = params["poly"] or {(2,): 1.0, (0,): -1.0}
    dim = len(next(iter(poly)))
    bound = params["bound"]
    box = [[-bound] * dim, [bound] * dim]
    dom = geometry.polynomial_domain(poly, dim=dim, bounding_box=box)
    model, ibox = _pure_diffusion(dom, params)
    return Scenario(
        name="pure_diffusion_poly", model=model, box=ibox, domain=dom,
        params=params,
        defaults={"t_end": 1.0, "output_cadence": 0.25},
        oracle={"kind": "uniform_equilibrium"},
        initial=_monodisperse_initial(dom, 1))


def build_thermo_drift_disk(params):
    """Mass-dependent swirl drift in the disk (tangential on the boundary)."""
    dom = geometry.ball_domain(params["radius"], 2)
    v0 = params["drift_speed"]
    sigma0 = params["sigma"]

    def drift(u, z):
        x = z.position
        return (v0 / (1.0 + z.mass)) * np.array([-x[1], x[0]])

    def sigma(u, z):
        return sigma0 * (1.0 + 0.25 * math.exp(-float(z.position @ z.position)))

    model = ModelSpec(
        sigma=sigma, sigma_inf=1.25 * sigma0,
        drift=drift, b_inf=v0 * params["radius"] / 2.0,
        internal_drift=None, kernels=(), clock_rate=1.0)
    return Scenario(
        name="thermo_drift_disk", model=model, box=NO_INTERNALS, domain=dom,
        params=params,
        defaults={"t_end": 1.0, "output_cadence": 0.25},
        oracle={"kind": "none"},
        initial=_monodisperse_initial(dom, 1))


_REGISTRY = {
    "pure_diffusion_interval": (build_pure_diffusion_interval, {
        "half_width": (float, 1.0), "sigma": (float, 1.0),
        "source_rate": (float, 0.0)}),
    "pure_diffusion_ball": (build_pure_diffusion_ball, {
        "radius": (float, 1.0), "dim": (int, 2), "sigma": (float, 1.0),
        "source_rate": (float, 0.0)}),
    "pure_diffusion_poly": (build_pure_diffusion_poly, {
        "bound": (float, 1.0), "sigma": (float, 1.0),
        "source_rate": (float, 0.0), "poly": (dict, None)}),
    "constant_coag": (build_constant_coag, {
        "radius": (float, 1.0), "dim": (int, 2), "sigma": (float, 1.0),
        "kappa": (float, 2.0), "mollifier_range": (float, 0.0),
        "init_mass": (int, 1)}),
    "additive_coag": (build_additive_coag, {
        "radius": (float, 1.0), "dim": (int, 2), "sigma": (float, 1.0),
        "kappa": (float, 0.5), "init_mass": (int, 1)}),
    "sintering_ball": (build_sintering_ball, {
        "radius": (float, 1.0), "dim": (int, 2), "sigma": (float, 1.0),
        "s1": (float, 1.0), "tau_s": (float, 0.5), "kappa": (float, 0.0),
        "init_mass": (int, 8)}),
    "active_sites_ball": (build_active_sites_ball, {
        "radius": (float, 1.0), "dim": (int, 2), "sigma": (float, 1.0),
        "site_decay_rate": (float, 1.0), "kappa": (float, 0.0),
        "init_mass": (int, 4)}),
    "thermo_drift_disk": (build_thermo_drift_disk, {
        "radius": (float, 1.0), "sigma": (float, 1.0),
        "drift_speed": (float, 0.5)}),
}


def scenario_names():
    return sorted(_REGISTRY)


def scenario_param_spec(name: str) -> dict:
    try:
        return dict(_REGISTRY[name][1])
    except KeyError:
        raise UnknownScenario(name)


def scenario(name: str, params: dict | None = None, validate: bool = True) -> Scenario:
    """Build (and by default validate) a preset by name."""
    try:
        builder, spec = _REGISTRY[name]
    except KeyError:
        raise UnknownScenario(name)
    resolved = {key: default for key, (typ, default) in spec.items()}
    for key, value in (params or {}).items():
        if key not in spec:
            raise UnknownScenario(f"scenario {name!r} has no parameter {key!r}")
        resolved[key] = spec[key][0](value)
    built = builder(resolved)
    if validate:
        built.validate()
    return built
