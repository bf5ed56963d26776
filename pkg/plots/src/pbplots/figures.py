"""Figure builders: count curves with oracle overlays, position histograms.

Rendering is pinned to the packaged style file and the Agg backend, with
PNG metadata stripped, so identical inputs produce identical bytes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import (SchemaMismatch, load_manifest, load_pooled,
                 load_snapshot_positions, snapshot_paths)

_STYLE = os.path.join(os.path.dirname(__file__), "style.mplstyle")


@dataclass(frozen=True)
class FigureSpec:
    """One figure to render: inputs, kind, labels, overlay parameters."""

    kind: str             # "counts" or "histogram"
    inputs: tuple         # file paths consumed
    out_name: str
    xlabel: str = "t"
    ylabel: str = ""
    oracle: dict = field(default_factory=dict)

    def validate(self) -> "FigureSpec":
        if self.kind not in ("counts", "histogram"):
            raise SchemaMismatch(f"unknown figure kind {self.kind!r}")
        for path in self.inputs:
            if not os.path.exists(path):
                raise SchemaMismatch(f"missing input file {path}")
        return self


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_counts(pooled_csv: str, out_path: str, oracle: dict | None = None):
    """Count-vs-time figure with replicate band and oracle overlay.

    Writes the image plus a ``<stem>_deviation.txt`` sidecar holding the
    max relative deviation of the pooled mean from the oracle column (only
    when the run emitted one). Returns (image path, sidecar path or None).
    """
    data = load_pooled(pooled_csv)
    t = data["t"]
    mean = data["count_mean"]
    std = data["count_std"]
    replicas = int(data["replicas"][0])
    with plt.style.context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(t, mean, label=f"pooled mean ({replicas} replicas)",
                color="tab:blue")
        if replicas > 1:
            ax.fill_between(t, mean - 2.0 * std, mean + 2.0 * std,
                            color="tab:blue", alpha=0.25,
                            label="replicate band (2 sd)")
        sidecar = None
        if "oracle_count" in data:
            oracle_vals = data["oracle_count"]
            ax.plot(t, oracle_vals, "--", color="tab:red", label="analytic")
            mask = oracle_vals > 0
            dev = float(np.max(np.abs(mean[mask] - oracle_vals[mask])
                               / oracle_vals[mask]))
            sidecar = os.path.splitext(out_path)[0] + "_deviation.txt"
            with open(sidecar, "w") as fh:
                fh.write(f"max_relative_deviation = {dev!r}\n")
                fh.write(f"points = {int(mask.sum())}\n")
        ax.set_xlabel("t")
        ax.set_ylabel("particle count")
        if oracle:
            label = oracle.get("kind", "")
            if label:
                ax.set_title(label)
        ax.legend()
        _save(fig, out_path)
    return out_path, sidecar


def _disk_slab_weights(edges, radius):
    def F(x):
        x = min(max(x, -radius), radius)
        return x * math.sqrt(max(radius * radius - x * x, 0.0)) + \
            radius * radius * math.asin(x / radius)
    areas = np.array([F(b) - F(a) for a, b in zip(edges[:-1], edges[1:])])
    return areas / areas.sum()


def plot_histogram(run_dir_or_paths, out_path: str, dom_params: dict,
                   bins: int = 20):
    """Position histogram with the uniform-law overlay.

    ``dom_params`` comes from the run manifest: needs ``name``, ``dim`` and
    ``bounding_box``. 1-D domains overlay a flat density; the 2-D ball
    overlays chord-area weights.
    """
    if isinstance(run_dir_or_paths, str):
        paths = snapshot_paths(run_dir_or_paths)
        if not paths:
            raise SchemaMismatch(f"no snapshot files in {run_dir_or_paths}")
    else:
        paths = list(run_dir_or_paths)
    values = load_snapshot_positions(paths)
    lo = dom_params["bounding_box"][0][0]
    hi = dom_params["bounding_box"][1][0]
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(values, lo, hi), edges)
    n = counts.sum()
    if dom_params["name"] == "ball" and dom_params["dim"] == 2:
        expected = n * _disk_slab_weights(edges, hi)
    else:
        expected = np.full(bins, n / bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    with plt.style.context(_STYLE):
        fig, ax = plt.subplots()
        ax.bar(centers, counts, width=edges[1] - edges[0], align="center",
               color="tab:blue", alpha=0.6, label=f"{n} samples")
        ax.step(edges, np.append(expected, expected[-1]), where="post",
                color="tab:red", label="uniform law")
        ax.set_xlabel("position")
        ax.set_ylabel("count")
        ax.legend()
        _save(fig, out_path)
    return out_path


def figure_specs(run_dir: str, manifest: dict) -> list:
    """FigureSpec list for everything this run directory supports."""
    specs = [FigureSpec(kind="counts",
                        inputs=(os.path.join(run_dir, "pooled.csv"),),
                        out_name="counts.png", ylabel="particle count",
                        oracle=manifest.get("oracle") or {})]
    snaps = snapshot_paths(run_dir)
    if snaps:
        specs.append(FigureSpec(kind="histogram", inputs=tuple(snaps),
                                out_name="histogram.png", xlabel="position",
                                ylabel="count"))
    return specs


def make_figures(run_dir: str, out_dir: str, bins: int = 20) -> dict:
    """All applicable figures for a run directory; returns written paths."""
    manifest = load_manifest(run_dir)
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    for fs in figure_specs(run_dir, manifest):
        fs.validate()
        out_path = os.path.join(out_dir, fs.out_name)
        if fs.kind == "counts":
            img, sidecar = plot_counts(fs.inputs[0], out_path,
                                       oracle=fs.oracle)
            written["counts"] = img
            if sidecar:
                written["counts_deviation"] = sidecar
        else:
            written["histogram"] = plot_histogram(list(fs.inputs), out_path,
                                                  manifest["domain"],
                                                  bins=bins)
    return written
