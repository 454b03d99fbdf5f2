"""Experiment configuration files (TOML).

Grammar::

    scenario = "convex_demo"        # built-in name, or an inline [scenario] table
    horizon = 10000                 # integer >= 1
    runs = 500                      # integer >= 1
    base_seed = 0                   # integer >= 0
    output_dir = "out"              # optional
    trace_stride = 1                # optional, integer >= 1
    grid_resolution = 400           # integer >= 2
    parallel = 1                    # optional, worker processes

    [overrides]                     # optional: alpha, alpha_prime, initial_duration
    alpha = 0.25

    [strategy]                      # optional, name defaults to the scenario's own
    name = "sigma_star"             # sigma_star | blackwell | waypoint | block | stationary
    kappa = 3.0                     # sigma_star threshold coefficient
    safe_action = "T"               # sigma_star safe row (name or index)
    initial_duration = 1000         # waypoint T
    mix = [0.5, 0.5, 0.0]           # stationary
    audit = false                   # record invariant audits

    [adversary]
    name = "uniform"                # uniform | skewed | push | script_<cols> | stationary | scripted
    mix = [0.5, 0.5]                # stationary
    actions = ["L", "R"]            # scripted

An inline scenario table holds ``payoff`` (nested ``|I| x |J| x n`` list),
optional ``row_names``/``col_names``, and ``target``/``region`` tables with a
``kind`` key (targets: point, ball, hull, polytope; regions: halfspaces, boxes).
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

STRATEGY_KEYS = {"name", "kappa", "safe_action", "initial_duration", "mix", "audit"}
ADVERSARY_KEYS = {"name", "mix", "actions", "guess"}
OVERRIDE_KEYS = {"alpha", "alpha_prime", "initial_duration"}
TOP_KEYS = {"scenario", "horizon", "runs", "base_seed", "output_dir", "trace_stride", "grid_resolution",
            "parallel", "overrides", "strategy", "adversary"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: object = "convex_demo"
    horizon: int = 1000
    runs: int = 1
    base_seed: int = 0
    output_dir: str | None = None
    trace_stride: int | None = None
    grid_resolution: int = 400
    parallel: int | None = None
    overrides: dict = field(default_factory=dict)
    strategy: dict = field(default_factory=dict)
    adversary: dict = field(default_factory=lambda: {"name": "uniform"})

    def __post_init__(self):
        validate(self)

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None and v != {}}

    def dumps(self):
        return tomli_w.dumps(self.to_dict())


def _int_field(name, value, minimum):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"field {name!r}: expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"field {name!r}: must be >= {minimum}, got {value}")


def validate(cfg: ExperimentConfig):
    if not isinstance(cfg.scenario, (str, dict)):
        raise ConfigError("field 'scenario': expected a name or an inline table")
    _int_field("horizon", cfg.horizon, 1)
    _int_field("runs", cfg.runs, 1)
    _int_field("base_seed", cfg.base_seed, 0)
    _int_field("grid_resolution", cfg.grid_resolution, 2)
    if cfg.trace_stride is not None:
        _int_field("trace_stride", cfg.trace_stride, 1)
    if cfg.parallel is not None:
        _int_field("parallel", cfg.parallel, 1)
    if cfg.output_dir is not None and not isinstance(cfg.output_dir, str):
        raise ConfigError("field 'output_dir': expected a string path")
    for section, allowed in (("overrides", OVERRIDE_KEYS), ("strategy", STRATEGY_KEYS),
                             ("adversary", ADVERSARY_KEYS)):
        table = getattr(cfg, section)
        if not isinstance(table, dict):
            raise ConfigError(f"section [{section}]: expected a table")
        unknown = set(table) - allowed
        if unknown:
            raise ConfigError(f"section [{section}]: unknown key(s) {', '.join(sorted(unknown))}")
    for key in ("kappa",):
        if key in cfg.strategy and not isinstance(cfg.strategy[key], (int, float)):
            raise ConfigError(f"field 'strategy.{key}': expected a number")
    if "initial_duration" in cfg.strategy:
        _int_field("strategy.initial_duration", cfg.strategy["initial_duration"], 1)


def from_dict(data) -> ExperimentConfig:
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(sorted(unknown))}")
    return ExperimentConfig(**data)


def loads(text) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    return from_dict(data)


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
