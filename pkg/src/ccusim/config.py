"""Simulator configuration.

Defaults model one GPU with 10 SMs of 4 sub-cores, 32 warps per SM, two
single-ported register banks and two collector units per sub-core, an 8-entry
cache table and 6 collector slots per unit. Memory instructions take a flat
configurable latency instead of a modeled hierarchy.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

MODES = (
    "baseline_ocu",
    "malekeh",
    "malekeh_private",
    "naive_gto_lru",
    "bow",
    "two_level",
)

# Modes whose policies consume per-operand reuse bits.
ANNOTATED_MODES = ("malekeh", "malekeh_private")

STHLD_MODES = ("static", "dynamic")


class ConfigError(ValueError):
    """Inconsistent or unknown simulator configuration."""


@dataclass
class SimConfig:
    num_sms: int = 10
    subcores_per_sm: int = 4
    warps_per_sm: int = 32
    banks_per_subcore: int = 2
    ccus_per_subcore: int = 2
    ct_entries: int = 8
    oct_slots: int = 6
    mode: str = "baseline_ocu"
    rthld: int = 12
    sthld: int = 0
    sthld_mode: str = "static"
    interval: int = 10000
    adaptive_delta: int = 1
    adaptive_small_threshold: float = 0.02
    adaptive_cap: int = 64
    adaptive_cap_patience: int = 3
    mem_latency: int = 200
    window_size: int = 3
    active_set_size: int = 2
    seed: int = 0

    def validated(self) -> "SimConfig":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.sthld_mode not in STHLD_MODES:
            raise ConfigError(f"unknown sthld_mode {self.sthld_mode!r}")
        for name in ("num_sms", "subcores_per_sm", "warps_per_sm",
                     "banks_per_subcore", "ccus_per_subcore", "ct_entries",
                     "oct_slots", "rthld", "interval", "mem_latency",
                     "window_size", "active_set_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.sthld < 0 or self.adaptive_cap < 0:
            raise ConfigError("sthld and adaptive_cap must be >= 0")
        if self.ct_entries - self.oct_slots < 2:
            # Two unlockable entries guarantee replacement always finds a
            # victim while every source slot holds a lock.
            raise ConfigError("ct_entries must exceed oct_slots by at least 2")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(data: dict) -> SimConfig:
    known = {f.name for f in fields(SimConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return SimConfig(**data).validated()


def load_config(path) -> SimConfig:
    with open(path, "r", encoding="ascii") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad config file {path}: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(data)


def merge_config(base: SimConfig, overrides: dict) -> SimConfig:
    """CLI flag > config file > default."""
    data = base.to_dict()
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)
