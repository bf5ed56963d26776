"""Replica orchestration and file outputs.

Replica i runs with seed base_seed + i.  Workers (one process per replica
up to the jobs cap) return summary rows and snapshots to the parent, which
writes every file itself in replica order, so outputs are byte-identical
for a given config regardless of parallelism.  Floats are formatted with
``repr`` (shortest round trip) for stable text.

Output layout under the run directory:
    manifest.json        config echo, derived constants, oracle parameters
    summary_000.csv ...  per-replica series (schema below)
    snapshots_000.ndjson per-replica particle dumps (format = ndjson only)
    pooled.csv           cross-replica count/mass statistics (+ oracle)

Summary CSV columns: t, u, count, mass, moment2..momentQ (Q = max kernel
arity, at least 2), ev_clock, ev_source, ev_move, ev_self, ev_interact,
ev_fictitious, max_u_dev.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from . import simulator
from .config import RunConfig, emit_config
from .diagnostics import coagulation_oracle
from .rng import RandomStream
from .scenarios import scenario

SCHEMA_VERSION = 1


def _fmt(x) -> str:
    if isinstance(x, (int,)):
        return str(x)
    return repr(float(x))


@dataclass
class ReplicaResult:
    index: int
    rows: list
    counters: list
    geometry_stats: dict
    snapshots: list  # list of (t, u, particle snapshot) or empty
    error: str | None = None


def build_params(cfg: RunConfig, replica: int, mN: float) -> simulator.SimParams:
    return simulator.SimParams(
        N=cfg.N, cN=cfg.resolved_cN(), mN=mN,
        clock_rate=cfg.clock_rate, t_end=cfg.t_end,
        seed=cfg.seed + replica, holding_mode=cfg.holding_mode,
        output_cadence=cfg.output_cadence, debug_trace=cfg.debug_trace,
        exact_rates=cfg.exact_rates)


def resolve_mass_cap(cfg: RunConfig) -> float:
    """Default mass cap: 10 x the initial mass density (at least 10/N)."""
    if cfg.mN is not None:
        return float(cfg.mN)
    scn = scenario(cfg.scenario, cfg.scenario_params, validate=False)
    rng = RandomStream(cfg.seed)
    particles = scn.initial(cfg.resolved_initial_count(), rng)
    mass0 = sum(z.mass for z in particles) / cfg.N
    return 10.0 * max(mass0, 1.0)


def run_replica(cfg: RunConfig, index: int, mN: float) -> ReplicaResult:
    scn = scenario(cfg.scenario, cfg.scenario_params)
    params = build_params(cfg, index, mN)
    state = simulator.initial_state(scn, params,
                                    count=cfg.resolved_initial_count())
    snapshots = []
    observers = ()
    if cfg.fmt == "ndjson":
        def grab(t_out, st):
            snapshots.append((t_out, st.u, st.ensemble.snapshot()))
        observers = (grab,)
    traj = simulator.run(state, scn.model, params, scn, observers=observers)
    return ReplicaResult(index=index, rows=traj.rows,
                         counters=list(state.counters),
                         geometry_stats=dict(state.geometry_stats),
                         snapshots=snapshots)


def _replica_job(args):
    cfg, index, mN = args
    try:
        return run_replica(cfg, index, mN)
    except Exception as exc:  # report per-replica, keep the batch alive
        return ReplicaResult(index=index, rows=[], counters=[],
                             geometry_stats={}, snapshots=[],
                             error=f"{type(exc).__name__}: {exc}")


def summary_header(moment_count: int) -> list:
    cols = ["t", "u", "count", "mass"]
    cols += [f"moment{q}" for q in range(2, 2 + moment_count)]
    cols += [f"ev_{n}" for n in simulator.EVENT_NAMES]
    cols.append("max_u_dev")
    return cols


def write_summary_csv(path, rows, N: int) -> None:
    moment_count = len(rows[0].moments) if rows else 1
    lines = [",".join(summary_header(moment_count))]
    for r in rows:
        cells = [_fmt(r.t), _fmt(r.u), str(r.count), _fmt(r.mass_units / N)]
        cells += [_fmt(m) for m in r.moments]
        cells += [str(c) for c in r.events]
        cells.append(_fmt(r.max_u_dev))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_snapshots_ndjson(path, snapshots) -> None:
    with open(path, "w") as fh:
        for t_out, u, particles in snapshots:
            for z in particles:
                rec = {"t": float(t_out), "u": float(u), "mass": int(z.mass),
                       "position": [float(v) for v in z.position],
                       "internal": [float(v) for v in z.internal]}
                fh.write(json.dumps(rec) + "\n")


def _json_safe_params(params: dict) -> dict:
    """Scenario params with the monomial table's tuple keys flattened."""
    out = {}
    for key, value in params.items():
        if key == "poly" and isinstance(value, dict):
            out[key] = {"_".join(str(e) for e in exps): coef
                        for exps, coef in value.items()}
        else:
            out[key] = value
    return out


def _oracle_column(cfg: RunConfig, oracle: dict, times):
    kind = oracle.get("kind")
    count0 = cfg.resolved_initial_count()
    if kind == "constant_coag":
        n0 = count0 / cfg.N
        dens = coagulation_oracle(oracle["kappa"], n0, times)
        return [cfg.N * float(v) for v in dens]
    if kind == "additive_coag":
        mu = count0 * oracle.get("init_mass", 1) / cfg.N
        return [count0 * math.exp(-oracle["kappa"] * mu * t) for t in times]
    return None


def write_pooled_csv(path, cfg: RunConfig, results, oracle: dict) -> None:
    rows0 = results[0].rows
    times = [r.t for r in rows0]
    R = len(results)
    counts = [[res.rows[j].count for res in results] for j in range(len(times))]
    masses = [[res.rows[j].mass_units / cfg.N for res in results]
              for j in range(len(times))]

    def mean(vals):
        return sum(vals) / len(vals)

    def std(vals):
        if len(vals) < 2:
            return 0.0
        m = mean(vals)
        return math.sqrt(sum((v - m) ** 2 for v in vals) / (len(vals) - 1))

    oracle_col = _oracle_column(cfg, oracle, times)
    header = ["t", "count_mean", "count_std", "mass_mean", "mass_std",
              "replicas"]
    if oracle_col is not None:
        header.append("oracle_count")
    lines = [",".join(header)]
    for j, t in enumerate(times):
        cells = [_fmt(t), _fmt(mean(counts[j])), _fmt(std(counts[j])),
                 _fmt(mean(masses[j])), _fmt(std(masses[j])), str(R)]
        if oracle_col is not None:
            cells.append(_fmt(oracle_col[j]))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_replicas(cfg: RunConfig, out_dir: str | None = None) -> dict:
    """Execute all replicas and write the run directory; returns a report.

    Worker failures are reported per replica; completed replicas still
    produce their files.  Deterministic for a fixed config: identical bytes
    across repeat runs and across jobs settings.
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    mN = resolve_mass_cap(cfg)
    scn = scenario(cfg.scenario, cfg.scenario_params, validate=False)
    jobs = [(cfg, i, mN) for i in range(cfg.replicas)]
    if cfg.jobs > 1 and cfg.replicas > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, cfg.replicas)) as ex:
            results = list(ex.map(_replica_job, jobs))
    else:
        results = [_replica_job(j) for j in jobs]
    results.sort(key=lambda r: r.index)

    failures = {r.index: r.error for r in results if r.error}
    completed = [r for r in results if not r.error]
    paths = {"dir": out_dir}
    for res in completed:
        p = os.path.join(out_dir, f"summary_{res.index:03d}.csv")
        write_summary_csv(p, res.rows, cfg.N)
        paths.setdefault("summaries", []).append(p)
        if cfg.fmt == "ndjson":
            sp = os.path.join(out_dir, f"snapshots_{res.index:03d}.ndjson")
            write_snapshots_ndjson(sp, res.snapshots)
            paths.setdefault("snapshots", []).append(sp)
    if completed:
        pooled = os.path.join(out_dir, "pooled.csv")
        write_pooled_csv(pooled, cfg, completed, scn.oracle)
        paths["pooled"] = pooled

    lam = scn.model.source
    manifest = {
        "schema": SCHEMA_VERSION,
        "scenario": cfg.scenario,
        "scenario_params": _json_safe_params(scn.params),
        "N": cfg.N,
        "replicas": cfg.replicas,
        "completed": len(completed),
        "failures": failures,
        "seed": cfg.seed,
        "t_end": cfg.t_end,
        "holding": cfg.holding_mode,
        "derived": {
            "cN": cfg.resolved_cN(),
            "mN": mN,
            "initial_count": cfg.resolved_initial_count(),
            "clock_rate": cfg.clock_rate,
            "lambda1": lam.moment_bounds(1) if lam else 0.0,
            "lambda2": lam.moment_bounds(2) if lam else 0.0,
        },
        "oracle": scn.oracle,
        "domain": {"name": scn.domain.name, "dim": scn.domain.dim,
                   "bounding_box": [list(map(float, b))
                                    for b in scn.domain.bounding_box]},
        "config_echo": emit_config(cfg),
        "event_totals": {
            name: sum(r.counters[i] for r in completed)
            for i, name in enumerate(simulator.EVENT_NAMES)} if completed else {},
        "geometry_fallbacks": {
            key: sum(r.geometry_stats.get(key, 0) for r in completed)
            for key in ("cap_hits", "grazing", "stalls")},
    }
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    paths["manifest"] = mpath
    return {"paths": paths, "failures": failures, "manifest": manifest,
            "results": completed}
