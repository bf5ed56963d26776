"""Readers for the simulator's documented output files."""

from __future__ import annotations

import csv
import glob
import json
import os

import numpy as np


class SchemaMismatch(Exception):
    """An input file does not match the documented schema."""


POOLED_REQUIRED = ("t", "count_mean", "count_std", "mass_mean", "mass_std",
                   "replicas")
SNAPSHOT_KEYS = {"t", "u", "mass", "position", "internal"}


def load_manifest(run_dir: str) -> dict:
    path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(path):
        raise SchemaMismatch(f"missing manifest.json in {run_dir}")
    with open(path) as fh:
        return json.load(fh)


def load_pooled(path: str) -> dict:
    """Pooled CSV as a dict of float column arrays."""
    if not os.path.exists(path):
        raise SchemaMismatch(f"missing pooled CSV {path}")
    with open(path) as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in POOLED_REQUIRED if c not in fields]
        if missing:
            raise SchemaMismatch(f"{path} lacks columns {missing}")
        rows = list(reader)
    if not rows:
        raise SchemaMismatch(f"{path} has no data rows")
    out = {}
    for col in fields:
        try:
            out[col] = np.array([float(r[col]) for r in rows])
        except ValueError as exc:
            raise SchemaMismatch(f"{path} column {col}: {exc}")
    if out["replicas"].min() < 1:
        raise SchemaMismatch(f"{path} reports an empty replicate set")
    return out


def load_snapshot_positions(paths, axis: int = 0, skip_initial=True):
    """Pooled positions (one coordinate) from snapshot NDJSON files."""
    values = []
    for path in paths:
        with open(path) as fh:
            for line_no, line in enumerate(fh, 1):
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaMismatch(f"{path}:{line_no}: {exc}")
                if not SNAPSHOT_KEYS.issubset(rec):
                    raise SchemaMismatch(
                        f"{path}:{line_no}: keys {sorted(rec)} != schema")
                if skip_initial and rec["t"] == 0.0:
                    continue
                values.append(rec["position"][axis])
    if not values:
        raise SchemaMismatch("no snapshot records found")
    return np.array(values)


def snapshot_paths(run_dir: str):
    return sorted(glob.glob(os.path.join(run_dir, "snapshots_*.ndjson")))
