"""Publication-style figures from simulator run directories.

Consumes only the documented file outputs (pooled.csv, summary CSVs,
snapshot NDJSON, manifest.json); never recomputes physics. Analytic
overlays come from the oracle columns and manifest parameters the run
itself emitted.
"""

__version__ = "0.1.0"
