"""Run configuration: sectioned key/value files, validation, defaults.

Grammar: INI-style sections parsed by ``configparser``.  ``[run]`` holds
the simulation parameters, ``[scenario]`` the preset name and its
parameters, ``[output]`` destinations and mode flags.  Unset keys fall to
documented defaults: cN = ceil(N^(1/4)), mN = 10 x initial mass density,
clock rate r = 1.  Command-line flags override file keys.  Validation
collects every violation before reporting, so a bad file fails with the
full list rather than one error at a time.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

from .scenarios import UnknownScenario, scenario_names, scenario_param_spec


class ParseError(Exception):
    """Malformed config text (carries the parser's line diagnostics)."""


class ValidationError(Exception):
    """One or more invalid config values; ``problems`` lists them all."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    N: int
    t_end: float
    scenario_params: dict = field(default_factory=dict)
    seed: int = 0
    replicas: int = 1
    cN: float | None = None          # None -> ceil(N^(1/4))
    mN: float | None = None          # None -> 10 x initial mass density
    clock_rate: float = 1.0
    holding_mode: str = "deterministic"
    output_cadence: float = 0.1
    initial_count: int | None = None  # None -> N
    out_dir: str = "out"
    fmt: str = "csv"                  # csv: summaries; ndjson: + snapshots
    debug_trace: bool = False
    exact_rates: bool = False
    jobs: int = 1

    def resolved_cN(self) -> float:
        return float(self.cN) if self.cN is not None else \
            float(math.ceil(self.N ** 0.25))

    def resolved_initial_count(self) -> int:
        return self.N if self.initial_count is None else int(self.initial_count)


_RUN_KEYS = {
    "particles": ("N", int),
    "t_end": ("t_end", float),
    "seed": ("seed", int),
    "replicas": ("replicas", int),
    "cn": ("cN", float),
    "mn": ("mN", float),
    "clock_rate": ("clock_rate", float),
    "holding": ("holding_mode", str),
    "output_cadence": ("output_cadence", float),
    "initial_count": ("initial_count", int),
}

_OUTPUT_KEYS = {
    "dir": ("out_dir", str),
    "format": ("fmt", str),
    "debug_trace": ("debug_trace", None),
    "exact_rates": ("exact_rates", None),
    "jobs": ("jobs", int),
}

_BOOL = {"true": True, "yes": True, "1": True,
         "false": False, "no": False, "0": False}


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; raises ParseError / ValidationError."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParseError(str(exc)) from exc
    problems = []
    values = {}
    scenario_params = {}

    for section in parser.sections():
        if section not in ("run", "scenario", "output"):
            problems.append(f"unknown section [{section}]")

    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in _RUN_KEYS:
                problems.append(f"unknown key {key!r} in [run]")
                continue
            name, typ = _RUN_KEYS[key]
            try:
                values[name] = typ(raw)
            except ValueError:
                problems.append(f"[run] {key} = {raw!r}: not a valid {typ.__name__}")

    scn_name = None
    if parser.has_section("scenario"):
        items = dict(parser.items("scenario"))
        scn_name = items.pop("name", None)
        if scn_name is None:
            problems.append("[scenario] is missing the 'name' key")
        elif scn_name not in scenario_names():
            problems.append(f"unknown scenario {scn_name!r}; "
                            f"known: {', '.join(scenario_names())}")
        else:
            spec = scenario_param_spec(scn_name)
            for key, raw in items.items():
                if key.startswith("poly_") and "poly" in spec:
                    # monomial table rows: poly_<e1>_..._<ed> = coefficient
                    try:
                        exps = tuple(int(p) for p in key[5:].split("_"))
                        scenario_params.setdefault("poly", {})[exps] = float(raw)
                    except ValueError:
                        problems.append(
                            f"[scenario] {key} = {raw!r}: bad monomial row")
                    continue
                if key not in spec:
                    problems.append(
                        f"unknown scenario key {key!r} for {scn_name!r}")
                    continue
                typ = spec[key][0]
                try:
                    scenario_params[key] = typ(raw)
                except (TypeError, ValueError):
                    problems.append(
                        f"[scenario] {key} = {raw!r}: not a valid {typ.__name__}")
    else:
        problems.append("missing [scenario] section")

    if parser.has_section("output"):
        for key, raw in parser.items("output"):
            if key not in _OUTPUT_KEYS:
                problems.append(f"unknown key {key!r} in [output]")
                continue
            name, typ = _OUTPUT_KEYS[key]
            if typ is None:
                low = raw.strip().lower()
                if low not in _BOOL:
                    problems.append(f"[output] {key} = {raw!r}: not a boolean")
                else:
                    values[name] = _BOOL[low]
            else:
                try:
                    values[name] = typ(raw)
                except ValueError:
                    problems.append(f"[output] {key} = {raw!r}: bad value")

    if "N" not in values:
        problems.append("[run] must set 'particles' (the scale N)")
    if "t_end" not in values:
        problems.append("[run] must set 't_end'")
    if problems:
        raise ValidationError(problems)

    cfg = RunConfig(scenario=scn_name, scenario_params=scenario_params,
                    **values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> RunConfig:
    problems = []
    if cfg.N < 1:
        problems.append(f"particles must be >= 1, got {cfg.N}")
    if cfg.t_end < 0:
        problems.append(f"t_end must be >= 0, got {cfg.t_end}")
    if cfg.replicas < 1:
        problems.append(f"replicas must be >= 1, got {cfg.replicas}")
    if cfg.cN is not None and not cfg.cN > 0:
        problems.append(f"cn must be > 0, got {cfg.cN}")
    if cfg.mN is not None and not cfg.mN > 0:
        problems.append(f"mn must be > 0, got {cfg.mN}")
    if not cfg.clock_rate > 0:
        problems.append(f"clock_rate must be > 0, got {cfg.clock_rate}")
    if cfg.holding_mode not in ("deterministic", "exponential"):
        problems.append(f"holding must be deterministic|exponential, "
                        f"got {cfg.holding_mode!r}")
    if cfg.output_cadence <= 0:
        problems.append(f"output_cadence must be > 0, got {cfg.output_cadence}")
    if cfg.fmt not in ("csv", "ndjson"):
        problems.append(f"format must be csv|ndjson, got {cfg.fmt!r}")
    if cfg.initial_count is not None and cfg.initial_count < 0:
        problems.append(f"initial_count must be >= 0, got {cfg.initial_count}")
    if cfg.jobs < 1:
        problems.append(f"jobs must be >= 1, got {cfg.jobs}")
    if cfg.scenario not in scenario_names():
        problems.append(f"unknown scenario {cfg.scenario!r}")
    if problems:
        raise ValidationError(problems)
    return cfg


def emit_config(cfg: RunConfig) -> str:
    """Config text that parses back to an equal RunConfig (round trip)."""
    lines = ["[run]"]
    lines.append(f"particles = {cfg.N}")
    lines.append(f"t_end = {cfg.t_end!r}")
    lines.append(f"seed = {cfg.seed}")
    lines.append(f"replicas = {cfg.replicas}")
    if cfg.cN is not None:
        lines.append(f"cn = {cfg.cN!r}")
    if cfg.mN is not None:
        lines.append(f"mn = {cfg.mN!r}")
    lines.append(f"clock_rate = {cfg.clock_rate!r}")
    lines.append(f"holding = {cfg.holding_mode}")
    lines.append(f"output_cadence = {cfg.output_cadence!r}")
    if cfg.initial_count is not None:
        lines.append(f"initial_count = {cfg.initial_count}")
    lines.append("")
    lines.append("[scenario]")
    lines.append(f"name = {cfg.scenario}")
    for key, value in sorted(cfg.scenario_params.items()):
        if key == "poly" and isinstance(value, dict):
            for exps, coef in sorted(value.items()):
                lines.append(
                    f"poly_{'_'.join(str(e) for e in exps)} = {coef!r}")
        else:
            lines.append(f"{key} = {value!r}")
    lines.append("")
    lines.append("[output]")
    lines.append(f"dir = {cfg.out_dir}")
    lines.append(f"format = {cfg.fmt}")
    lines.append(f"debug_trace = {str(cfg.debug_trace).lower()}")
    lines.append(f"exact_rates = {str(cfg.exact_rates).lower()}")
    lines.append(f"jobs = {cfg.jobs}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply CLI flag overrides (None values are ignored)."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return cfg
    return validate_config(replace(cfg, **updates))
