"""Event loop of the jump process: rates, selection, jumps and retiming.

Every event advances the fictitious time u by 1/rho, where rho is the total
rate N(r + Lambda_u + cN^2 P(F) + interaction majorants).  Real time
advances by 1/rho in deterministic holding mode (the default) or by an
Exp(rho) draw in exponential mode, in which case u - t is a martingale.
Event kinds are drawn in a fixed order (clock, source, move, self, kernels)
from a single uniform, then event-specific draws follow, so replaying a
seed reproduces a run bit for bit.

Interaction draws use the mass-product majorant over the cumulative tree;
rejections (repeated index or kernel thinning) consume the event slot as
fictitious jumps, which keeps the holding-time semantics of the majorant
rate exact.  Interaction and self-interaction events assert exact integer
mass conservation and the source rule enforces the mass cap, so a completed
run certifies zero conservation violations.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import geometry, selection
from .ensemble import EnsembleMeasure, Particle
from .model import ModelSpec, j_id_step
from .rng import RandomStream
from .scenarios import Scenario

TRACE_RING = 1 << 20
AUDIT_EVERY = 1 << 16


class MassConservationError(AssertionError):
    """An interaction event changed the total integer mass."""


class EventKind(IntEnum):
    CLOCK = 0
    SOURCE = 1
    MOVE = 2
    SELF_INTERACT = 3
    INTERACT = 4
    FICTITIOUS = 5


EVENT_NAMES = ("clock", "source", "move", "self", "interact", "fictitious")


@dataclass(frozen=True)
class SimParams:
    """Per-run constants of the discrete scheme."""

    N: int
    cN: float
    mN: float
    clock_rate: float = 1.0
    t_end: float = 1.0
    seed: int = 0
    holding_mode: str = "deterministic"  # or "exponential"
    output_cadence: float = 0.1
    debug_trace: bool = False
    exact_rates: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be a positive integer")
        for name in ("cN", "mN", "clock_rate"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite")
        if self.t_end < 0.0 or self.output_cadence <= 0.0:
            raise ValueError("t_end must be >= 0 and output_cadence > 0")
        if self.holding_mode not in ("deterministic", "exponential"):
            raise ValueError(f"unknown holding mode {self.holding_mode!r}")


@dataclass(slots=True)
class EventRecord:
    """Full event payload kept in debug mode for replay."""

    kind: int
    ij: tuple | None
    t: float          # time after the event
    u: float
    tau: float
    rho: float
    payload: tuple | None


@dataclass(slots=True)
class SummaryRow:
    t: float
    u: float
    count: int
    mass_units: int
    moments: tuple       # P(pi_m^q) for q = 2..max(2, I)
    events: tuple        # cumulative counters in EVENT_NAMES order
    max_u_dev: float     # running sup |u_s - s|


@dataclass
class SimulationState:
    """Mutable single-owner state of one replica."""

    ensemble: EnsembleMeasure
    rng: RandomStream
    t: float = 0.0
    u: float = 0.0
    trace: deque = field(default_factory=lambda: deque(maxlen=TRACE_RING))
    counters: list = field(default_factory=lambda: [0] * len(EVENT_NAMES))
    max_u_dev: float = 0.0
    geometry_stats: dict = field(default_factory=dict)
    events: list | None = None       # populated in debug mode
    steps: int = 0

    def counters_by_name(self) -> dict:
        return dict(zip(EVENT_NAMES, self.counters))


@dataclass
class Trajectory:
    rows: list
    state: SimulationState
    params: SimParams
    initial_particles: list | None = None
    events: list | None = None


def initial_state(scn: Scenario, params: SimParams, count: int | None = None,
                  rng: RandomStream | None = None) -> SimulationState:
    rng = rng or RandomStream(params.seed)
    count = params.N if count is None else int(count)
    particles = scn.initial(count, rng)
    orders = tuple(range(2, max(2, scn.model.max_arity_in) + 1))
    ens = EnsembleMeasure(params.N, params.mN, particles, track_moments=orders)
    if ens.cached_mass > params.mN:
        raise ValueError(
            f"initial mass {ens.cached_mass} exceeds the cap mN={params.mN}")
    state = SimulationState(ensemble=ens, rng=rng)
    if params.debug_trace:
        state.events = []
    return state


def _rate_terms(state: SimulationState, spec: ModelSpec, params: SimParams):
    """Per-rule rates divided by N, in the fixed selection order."""
    ens = state.ensemble
    n = len(ens)
    terms = [("clock", None, params.clock_rate)]
    if spec.source is not None:
        terms.append(("source", None, float(spec.source.lam(state.u))))
    if n:
        terms.append(("move", None, params.cN * params.cN * n / params.N))
        if spec.self_kernel is not None:
            terms.append(("self", None,
                          spec.self_kernel.bound_per_mass * ens.cached_mass))
        mass_density = ens.cached_mass
        for kernel in spec.kernels:
            if params.exact_rates:
                if n > 200:
                    raise ValueError("exact_rates mode is capped at 200 particles")
                exact = selection.exact_tuple_rate(ens.particles, kernel, state.u)
                fact = math.factorial(kernel.arity_in) * math.factorial(kernel.arity_out)
                terms.append(("interact", kernel,
                              exact / fact / params.N ** kernel.arity_in))
            else:
                terms.append(("interact", kernel,
                              kernel.k_inf * mass_density ** kernel.arity_in))
    return terms


def total_rate(state: SimulationState, spec: ModelSpec, params: SimParams) -> float:
    """rho = N (r + Lambda_u + cN^2 P(F) + interaction majorants)."""
    return params.N * sum(rate for _, _, rate in _rate_terms(state, spec, params))


def step(state: SimulationState, spec: ModelSpec, params: SimParams,
         scn: Scenario) -> SimulationState:
    """Advance by one event; exactly one rule fires."""
    ens = state.ensemble
    terms = _rate_terms(state, spec, params)
    rho_over_N = sum(rate for _, _, rate in terms)
    rho = params.N * rho_over_N
    # fixed draw order: kind, event payload, then the holding time
    pick = state.rng.uniform() * rho_over_N
    chosen, kernel = terms[0][0], terms[0][1]  # roundoff falls to the clock
    for name, k, rate in terms:
        if pick < rate:
            chosen, kernel = name, k
            break
        pick -= rate

    kind = EventKind.CLOCK
    ij = None
    payload = None
    dmass = 0

    if chosen == "clock":
        kind = EventKind.CLOCK
    elif chosen == "source":
        kind = EventKind.SOURCE
        z = spec.source.sampler(state.u, state.rng)
        if (ens.mass_units + z.mass) / params.N <= params.mN:
            ens.add(z)
            dmass = z.mass
            payload = (z,)
        else:
            payload = (None,)  # cap reached: the jump is a no-op
    elif chosen == "move":
        kind = EventKind.MOVE
        idx = ens.sample_uniform_index(state.rng)
        z = ens.particles[idx]
        Z = state.rng.normal(z.position.shape[0])
        s = spec.sigma(state.u, z)
        b = spec.drift(state.u, z)
        k_disp = (s / params.cN) * Z + np.asarray(b, dtype=float) / (params.cN * params.cN)
        new_x = geometry.gamma(scn.domain, z.position, k_disp,
                               stats=state.geometry_stats)
        new_X = j_id_step(spec, scn.box, state.u, z, params.cN)
        z_new = Particle(z.mass, new_x, np.asarray(new_X, dtype=float))
        ens.replace(idx, z_new)
        payload = (idx, z, z_new)
    elif chosen == "self":
        picked = _self_event(state, spec, params)
        kind, payload = picked
    elif chosen == "interact":
        kind, ij, payload, dmass = _interact_event(state, spec, params, kernel)

    tau = 1.0 / rho if params.holding_mode == "deterministic" else \
        float(state.rng.exponential(rho))
    t_new = state.t + tau
    u_new = state.u + 1.0 / rho
    # u - t is piecewise linear in t between jumps: extremes at the ends
    dev = max(abs(state.u - t_new), abs(u_new - t_new))
    if dev > state.max_u_dev:
        state.max_u_dev = dev
    state.t = t_new
    state.u = u_new
    state.counters[int(kind)] += 1
    state.trace.append((int(kind), t_new, u_new, dmass))
    if state.events is not None:
        state.events.append(EventRecord(int(kind), ij, t_new, u_new, tau, rho,
                                        payload))
        _debug_validate(scn, kind, payload)
    state.steps += 1
    if ens.cached_mass > params.mN + 1e-12:
        raise MassConservationError(
            f"mass cap violated: {ens.cached_mass} > {params.mN}")
    if state.steps % AUDIT_EVERY == 0:
        ens.audit()
    return state


def _debug_validate(scn: Scenario, kind, payload):
    """Debug-mode check: every touched particle satisfies its invariants."""
    if payload is None:
        return
    if kind in (EventKind.MOVE, EventKind.SELF_INTERACT):
        touched = (payload[2],)
    elif kind == EventKind.SOURCE:
        touched = payload if payload[0] is not None else ()
    elif kind == EventKind.INTERACT:
        touched = payload[2]
    else:
        return
    for z in touched:
        if scn.domain.omega1(z.position) > scn.domain.tol_boundary:
            raise AssertionError(f"particle left the domain closure: {z}")
        if not scn.box.contains(z.mass, z.internal):
            raise AssertionError(f"internal coordinates left the box: {z}")


def _self_event(state, spec, params):
    ens = state.ensemble
    sk = spec.self_kernel
    idx = ens.sample_mass_weighted_index(state.rng)
    z = ens.particles[idx]
    rate = sk.total_rate(state.u, z)
    bound = sk.bound_per_mass * z.mass
    ratio = rate / bound
    if ratio > 1.0 + selection.MAJORANT_SLACK:
        raise selection.MajorantViolated(
            f"self-kernel rate {rate} exceeds majorant {bound}")
    if state.rng.uniform() >= ratio:
        return EventKind.FICTITIOUS, None
    (w,) = sk.product_sampler(state.u, z, state.rng)
    if w.mass != z.mass:
        raise MassConservationError(
            f"self-interaction changed mass {z.mass} -> {w.mass}")
    ens.replace(idx, w)
    return EventKind.SELF_INTERACT, (idx, z, w)


def _interact_event(state, spec, params, kernel):
    ens = state.ensemble
    ij = (kernel.arity_in, kernel.arity_out)
    if params.exact_rates:
        total = selection.exact_tuple_rate(ens.particles, kernel, state.u)
        if total <= 0.0:
            return EventKind.FICTITIOUS, ij, None, 0
        indices, zs = selection.exact_tuple_draw(
            ens.particles, kernel, state.u, total, state.rng)
    else:
        drawn = selection.sample_tuple(ens, kernel, state.u, state.rng)
        if drawn is None:
            return EventKind.FICTITIOUS, ij, None, 0
        indices, zs = drawn.indices, drawn.particles
    ws = kernel.product_sampler(state.u, zs, state.rng)
    mass_in = sum(z.mass for z in zs)
    mass_out = sum(w.mass for w in ws)
    if mass_in != mass_out:
        raise MassConservationError(
            f"interaction changed mass {mass_in} -> {mass_out}")
    # remove inputs from highest index down so the swap-remove stays valid
    for idx in sorted(indices, reverse=True):
        ens.remove(idx)
    for w in ws:
        ens.add(w)
    return EventKind.INTERACT, ij, (tuple(indices), tuple(zs), tuple(ws)), 0


def _summary_row(state: SimulationState, t_out: float, moment_orders) -> SummaryRow:
    ens = state.ensemble
    moments = tuple(ens.moment(q) for q in moment_orders)
    return SummaryRow(t_out, state.u, len(ens.particles), ens.mass_units,
                      moments, tuple(state.counters), state.max_u_dev)


def output_grid(t_end: float, cadence: float):
    times = [round(i * cadence, 12) for i in range(int(t_end / cadence) + 1)]
    if not times or times[-1] < t_end:
        times.append(t_end)
    return times


def run(state: SimulationState, spec: ModelSpec, params: SimParams,
        scn: Scenario, observers=()) -> Trajectory:
    """Step until t_end, emitting summary rows on the output grid.

    The jump process is constant on holding intervals, so the row at a grid
    time strictly between two events carries the values of the most recent
    event at or before it.  Observers are invoked at the same instants with
    the live state (whose particles are those of the first event past the
    grid time, one event apart at most).
    """
    moment_orders = tuple(range(2, max(2, spec.max_arity_in) + 1))
    grid = output_grid(params.t_end, params.output_cadence)
    rows = []
    initial = state.ensemble.snapshot() if params.debug_trace else None
    next_i = 0
    pending = _summary_row(state, 0.0, moment_orders)
    while next_i < len(grid) and grid[next_i] <= state.t:
        rows.append(_restamp(pending, grid[next_i]))
        for obs in observers:
            obs(grid[next_i], state)
        next_i += 1
    while state.t < params.t_end:
        step(state, spec, params, scn)
        while next_i < len(grid) and grid[next_i] < state.t:
            rows.append(_restamp(pending, grid[next_i]))
            for obs in observers:
                obs(grid[next_i], state)
            next_i += 1
        pending = _summary_row(state, state.t, moment_orders)
    while next_i < len(grid):
        rows.append(_restamp(pending, grid[next_i]))
        for obs in observers:
            obs(grid[next_i], state)
        next_i += 1
    state.ensemble.audit()
    return Trajectory(rows=rows, state=state, params=params,
                      initial_particles=initial, events=state.events)


def _restamp(row: SummaryRow, t_out: float) -> SummaryRow:
    return SummaryRow(t_out, row.u, row.count, row.mass_units, row.moments,
                      row.events, row.max_u_dev)


def retime(traj: Trajectory, grid=None) -> list:
    """Re-index summary rows by fictitious time: Q_t = P at sup u^-1 [0, t].

    For each grid time the row of the last event with u <= t is taken; rows
    are returned with t replaced by the fictitious-time grid.
    """
    rows = traj.rows if isinstance(traj, Trajectory) else list(traj)
    if not rows:
        return []
    us = np.array([r.u for r in rows])
    if grid is None:
        grid = [r.t for r in rows]
    out = []
    for tau in grid:
        j = int(np.searchsorted(us, tau, side="right")) - 1
        j = max(j, 0)
        src = rows[j]
        out.append(SummaryRow(tau, src.u, src.count, src.mass_units,
                              src.moments, src.events, src.max_u_dev))
    return out
