"""Experiment configuration: validated parameters and the flat key=value file format.

Every numeric field is validated on load and errors name the offending field.
Grid files use the same keys with comma-separated value lists; expand_grid()
produces the cross product in deterministic order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

STRATEGIES = ("null", "private", "nsplit-notiebreak", "nsplit-tiebreak", "cb-targeted")
MITIGATIONS = ("none", "consistent-broadcast", "longest-chain")
MODES = ("statistical", "identity")
TIEBREAKS = ("adversary", "min-proof")


class ConfigError(ValueError):
    """Invalid configuration; message names the field."""


@dataclass(frozen=True)
class ExperimentConfig:
    m: float = 5.0
    beta: float = 0.0
    mode: str = "statistical"
    participants: int = 1000           # identity mode only
    epochs: int = 1000
    trials: int = 1
    strategy: str = "null"
    mitigation: str = "none"
    tau: int = 20
    liveness_u: int = 50
    lead_bootstrap: int = 4            # L0: private lead required before splitting
    seed: int = 0
    output: str = "out"
    views: int = 12                    # honest observer nodes (statistical mode)
    tiebreak: str = "adversary"
    held_split: bool = False           # force the per-epoch proof budget needed to hold a split
    headroom: int = 1                  # rail lead the n-split may bank against proof droughts
    stop_on_violation: bool = True     # end a trial at its first persistence violation
    emit_traces: bool = False

    def validate(self) -> "ExperimentConfig":
        if not (self.m > 0):
            raise ConfigError("m: must be positive")
        if not (0 <= self.beta < 1):
            raise ConfigError("beta: must lie in [0, 1)")
        if self.mode not in MODES:
            raise ConfigError(f"mode: unknown mode {self.mode!r}, expected one of {MODES}")
        if self.mode == "identity" and self.participants < math.ceil(self.m):
            raise ConfigError("participants: identity mode requires n >= ceil(m)")
        if self.epochs < 1:
            raise ConfigError("epochs: must be at least 1")
        if self.trials < 0:
            raise ConfigError("trials: must be non-negative")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy: unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.mitigation not in MITIGATIONS:
            raise ConfigError(f"mitigation: unknown mitigation {self.mitigation!r}, expected one of {MITIGATIONS}")
        if self.tau < 0:
            raise ConfigError("tau: must be non-negative")
        if self.liveness_u < 1:
            raise ConfigError("liveness_u: must be at least 1")
        if self.lead_bootstrap < 0:
            raise ConfigError("lead_bootstrap: must be non-negative")
        if self.views < 1:
            raise ConfigError("views: must be at least 1")
        if self.tiebreak not in TIEBREAKS:
            raise ConfigError(f"tiebreak: unknown policy {self.tiebreak!r}, expected one of {TIEBREAKS}")
        if self.headroom < 0:
            raise ConfigError("headroom: must be non-negative")
        return self


_BOOL_FIELDS = {"held_split", "stop_on_violation", "emit_traces"}
_INT_FIELDS = {"participants", "epochs", "trials", "tau", "liveness_u",
               "lead_bootstrap", "seed", "views", "headroom"}
_FLOAT_FIELDS = {"m", "beta"}
_STR_FIELDS = {"mode", "strategy", "mitigation", "output", "tiebreak"}
_ALL_FIELDS = _BOOL_FIELDS | _INT_FIELDS | _FLOAT_FIELDS | _STR_FIELDS


def _coerce(key: str, raw: str) -> Any:
    raw = raw.strip()
    try:
        if key in _BOOL_FIELDS:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse value {raw!r}") from exc


def parse_config_text(text: str) -> dict[str, list[Any]]:
    """Parse flat `key = value[,value...]` lines into per-key value lists."""
    values: dict[str, list[Any]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _ALL_FIELDS:
            raise ConfigError(f"{key}: unknown configuration key")
        values[key] = [_coerce(key, part) for part in raw.split(",")]
    return values


def load_config(path: str, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Single-point config; list-valued keys are rejected here (use sweeps)."""
    with open(path, "r", encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    flat: dict[str, Any] = {}
    for key, vals in values.items():
        if len(vals) != 1:
            raise ConfigError(f"{key}: single-run config cannot take a value list")
        flat[key] = vals[0]
    if overrides:
        flat.update(overrides)
    return ExperimentConfig(**flat).validate()


def expand_grid(values: dict[str, list[Any]],
                overrides: dict[str, Any] | None = None) -> list[ExperimentConfig]:
    """Cross product of all list-valued keys, deterministic order."""
    configs = [dict()]
    for key in sorted(values):
        configs = [dict(c, **{key: v}) for c in configs for v in values[key]]
    if overrides:
        configs = [dict(c, **overrides) for c in configs]
    expanded = [ExperimentConfig(**c).validate() for c in configs]
    expanded.sort(key=lambda c: (c.m, c.beta, c.strategy, c.mitigation))
    return expanded


def load_grid(path: str, overrides: dict[str, Any] | None = None) -> list[ExperimentConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        return expand_grid(parse_config_text(fh.read()), overrides)


def with_updates(config: ExperimentConfig, **updates) -> ExperimentConfig:
    return replace(config, **updates).validate()
