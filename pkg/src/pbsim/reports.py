"""Post-run diagnostic reports over a run directory.

Each report reads the files a run produced (manifest, summary CSVs,
snapshot NDJSON, pooled CSV), evaluates one verifiable claim, writes a
small CSV record of what it measured, and returns pass/fail for the CLI
exit code.
"""

from __future__ import annotations

import csv
import glob
import json
import math
import os

import numpy as np

from .diagnostics import TooFewSamples, equilibrium_uniformity_check
from . import geometry


class ReportError(Exception):
    """The run directory is missing data the report needs."""


def _load_manifest(run_dir):
    path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(path):
        raise ReportError(f"no manifest.json under {run_dir}")
    with open(path) as fh:
        return json.load(fh)


def _load_csv(path):
    with open(path) as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ReportError(f"{path} is empty")
    return rows


def _summary_paths(run_dir):
    paths = sorted(glob.glob(os.path.join(run_dir, "summary_*.csv")))
    if not paths:
        raise ReportError(f"no summary CSVs under {run_dir}")
    return paths


def _rebuild_domain(manifest):
    dom_info = manifest["domain"]
    params = manifest.get("scenario_params", {})
    if dom_info["name"] == "interval":
        return geometry.interval_domain(params.get("half_width", 1.0))
    if dom_info["name"] == "ball":
        return geometry.ball_domain(params.get("radius", 1.0),
                                    dom_info["dim"])
    raise ReportError(f"cannot rebuild domain {dom_info['name']!r}")


def _write_report(run_dir, name, fields: dict):
    path = os.path.join(run_dir, f"diag_{name}.csv")
    with open(path, "w") as fh:
        fh.write(",".join(fields) + "\n")
        fh.write(",".join(str(v) for v in fields.values()) + "\n")
    return path


def report_equilibrium(run_dir, bins=20, alpha=0.01):
    """Chi-square of pooled snapshot positions against the uniform law."""
    manifest = _load_manifest(run_dir)
    dom = _rebuild_domain(manifest)
    files = sorted(glob.glob(os.path.join(run_dir, "snapshots_*.ndjson")))
    if not files:
        raise ReportError("equilibrium report needs snapshot NDJSON "
                          "(run with format = ndjson)")
    positions = []
    for path in files:
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["t"] > 0.0:  # skip the initial-condition dump
                    positions.append(rec["position"])
    try:
        chi2, p = equilibrium_uniformity_check(np.array(positions), dom, bins)
    except TooFewSamples as exc:
        raise ReportError(str(exc))
    passed = p > alpha
    _write_report(run_dir, "equilibrium", {
        "samples": len(positions), "bins": bins, "chi2": chi2, "p": p,
        "alpha": alpha, "passed": passed})
    return passed, {"chi2": chi2, "p": p, "samples": len(positions)}


def report_coagulation(run_dir, tol=0.03):
    """Pooled mean count against the mean-field oracle column."""
    rows = _load_csv(os.path.join(run_dir, "pooled.csv"))
    if "oracle_count" not in rows[0]:
        raise ReportError("pooled.csv has no oracle column for this scenario")
    worst = 0.0
    for row in rows:
        oracle = float(row["oracle_count"])
        meas = float(row["count_mean"])
        if oracle > 0:
            worst = max(worst, abs(meas - oracle) / oracle)
    passed = worst <= tol
    _write_report(run_dir, "coagulation", {
        "max_rel_dev": worst, "tol": tol, "passed": passed})
    return passed, {"max_rel_dev": worst}


def report_moments(run_dir, min_replicas=16):
    """Replicate-mean mass against Xi + t Lambda1 + the N-scaled slack."""
    manifest = _load_manifest(run_dir)
    N = manifest["N"]
    lam1 = manifest["derived"]["lambda1"]
    lam2 = manifest["derived"]["lambda2"]
    tables = [_load_csv(p) for p in _summary_paths(run_dir)]
    if len(tables) < min_replicas:
        raise ReportError(f"moments report needs >= {min_replicas} replicas")
    times = [float(r["t"]) for r in tables[0]]
    mass = np.array([[float(r["mass"]) for r in tab] for tab in tables])
    xi = float(mass[0, 0])
    worst, worst_t = -np.inf, 0.0
    R = mass.shape[0]
    for j, t in enumerate(times):
        mean = float(mass[:, j].mean())
        if lam1 == 0.0:
            excess = abs(mean - xi) - 1e-12
        else:
            slack = 2.0 * math.sqrt(t * lam2 / N) if lam2 else 0.0
            se = float(mass[:, j].std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
            excess = mean - (xi + t * lam1 + slack + 4.0 * se)
        if excess > worst:
            worst, worst_t = excess, t
    passed = worst <= 0.0
    _write_report(run_dir, "moments", {
        "worst_excess": worst, "worst_time": worst_t, "xi": xi,
        "lambda1": lam1, "passed": passed})
    return passed, {"worst_excess": worst, "worst_time": worst_t}


def report_fictitious(run_dir):
    """Fictitious-time bands: mean u_T - T and the sup-deviation fraction.

    Meaningful for exponential-holding runs, where u - t is a martingale
    with bracket t/(rN); deterministic runs have u identically equal to t.
    """
    manifest = _load_manifest(run_dir)
    N = manifest["N"]
    r = manifest["derived"]["clock_rate"]
    T = manifest["t_end"]
    finals, sups = [], []
    for path in _summary_paths(run_dir):
        rows = _load_csv(path)
        last = rows[-1]
        finals.append(float(last["u"]) - float(last["t"]))
        sups.append(float(last["max_u_dev"]))
    R = len(finals)
    mean_dev = float(np.mean(finals))
    mean_band = 4.0 * math.sqrt(T / (r * N))
    thresh = N ** -0.25
    frac = sum(1 for s in sups if s >= thresh) / R
    frac_bound = 2.0 * math.sqrt(T + 1.0) / math.sqrt(r) * N ** -0.25
    frac_slack = 2.0 * math.sqrt(max(frac_bound * (1 - frac_bound), 0.0) / R) \
        + 1.0 / R
    passed = abs(mean_dev) <= mean_band and frac <= frac_bound + frac_slack
    _write_report(run_dir, "fictitious", {
        "mean_u_minus_t": mean_dev, "mean_band": mean_band,
        "sup_threshold": thresh, "frac_exceeding": frac,
        "frac_bound": frac_bound + frac_slack, "replicas": R,
        "passed": passed})
    return passed, {"mean_u_minus_t": mean_dev, "mean_band": mean_band,
                    "frac_exceeding": frac,
                    "frac_bound": frac_bound + frac_slack}


REPORTS = {
    "equilibrium": report_equilibrium,
    "coagulation": report_coagulation,
    "moments": report_moments,
    "fictitious": report_fictitious,
}
