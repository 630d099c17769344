"""Run counters, derived statistics, and the parametric event-energy model.

Energy is abstract per-event units, not calibrated joules: the default
coefficients put a bank read at four times a collector-cache read and a
crossbar transfer at one unit. Comparisons between modes reuse one
coefficient set, so normalized ratios do not depend on the absolute scale.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field


class EngineBugError(AssertionError):
    """A counter identity or port-discipline invariant failed."""


STALL_KEYS = ("OCCUPIED", "ALL_BUSY", "WAITING", "NO_READY_WARP")


@dataclass
class Counters:
    """Raw event counts owned by the engine during a run."""
    cycles: int = 0
    instructions: int = 0
    total_fetches: int = 0
    ccu_hits: int = 0
    bank_reads: int = 0
    bank_writes: int = 0
    crossbar_transfers: int = 0
    writes_cached: int = 0
    writes_filtered: int = 0
    stalls: dict = field(default_factory=lambda: {k: 0 for k in STALL_KEYS})
    bank_queue_peak: int = 0
    intervals: list = field(default_factory=list)  # (index, ipc, state, sthld)
    issue_states: dict | None = None               # two-level mode only


@dataclass(frozen=True)
class MetricsReport:
    mode: str
    trace_id: str
    seed: int
    cycles: int
    instructions: int
    ipc: float
    total_fetches: int
    ccu_hits: int
    ccu_misses: int
    hit_ratio: float
    hit_ratio_defined: bool
    bank_reads: int
    bank_writes: int
    crossbar_transfers: int
    writes_cached: int
    writes_filtered: int
    read_reduction: float
    stalls: dict
    bank_queue_peak: int
    intervals: tuple
    issue_states: dict | None
    config: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


SUMMARY_FIELDS = [
    "mode", "trace_id", "seed", "cycles", "instructions", "ipc",
    "hit_ratio", "bank_reads", "bank_writes", "crossbar_transfers",
    "writes_cached", "writes_filtered", "energy", "energy_norm",
]


def finalize(counters: Counters, mode: str, trace_id: str, seed: int,
             config: dict) -> MetricsReport:
    """Derive statistics and enforce the counter identities."""
    c = counters
    misses = c.total_fetches - c.ccu_hits
    if c.ccu_hits + c.bank_reads != c.total_fetches:
        raise EngineBugError(
            f"fetch identity broken: hits {c.ccu_hits} + bank reads "
            f"{c.bank_reads} != fetches {c.total_fetches}")
    if c.writes_cached + c.writes_filtered != c.bank_writes:
        raise EngineBugError(
            f"write identity broken: cached {c.writes_cached} + filtered "
            f"{c.writes_filtered} != bank writes {c.bank_writes}")
    denom = c.ccu_hits + misses
    hit_ratio = c.ccu_hits / denom if denom else 0.0
    ipc = c.instructions / c.cycles if c.cycles else 0.0
    read_reduction = 1.0 - c.bank_reads / c.total_fetches if c.total_fetches else 0.0
    return MetricsReport(
        mode=mode, trace_id=trace_id, seed=seed,
        cycles=c.cycles, instructions=c.instructions, ipc=ipc,
        total_fetches=c.total_fetches, ccu_hits=c.ccu_hits, ccu_misses=misses,
        hit_ratio=hit_ratio, hit_ratio_defined=denom > 0,
        bank_reads=c.bank_reads, bank_writes=c.bank_writes,
        crossbar_transfers=c.crossbar_transfers,
        writes_cached=c.writes_cached, writes_filtered=c.writes_filtered,
        read_reduction=read_reduction,
        stalls=dict(c.stalls), bank_queue_peak=c.bank_queue_peak,
        intervals=tuple(c.intervals), issue_states=c.issue_states,
        config=dict(config),
    )


# ---------------------------------------------------------------------------
# Energy

@dataclass(frozen=True)
class EnergyModel:
    e_bank_read: float = 4.0
    e_bank_write: float = 4.0
    e_crossbar_transfer: float = 1.0
    e_ccu_read: float = 1.0
    e_ccu_write: float = 1.0

    def validated(self) -> "EnergyModel":
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0")
        return self


def energy(report: MetricsReport, model: EnergyModel | None = None):
    """Total per-event energy and its breakdown for one run."""
    model = (model or EnergyModel()).validated()
    breakdown = {
        "bank_read": report.bank_reads * model.e_bank_read,
        "bank_write": report.bank_writes * model.e_bank_write,
        "crossbar": report.crossbar_transfers * model.e_crossbar_transfer,
        "ccu_read": report.ccu_hits * model.e_ccu_read,
        "ccu_write": report.writes_cached * model.e_ccu_write,
    }
    return sum(breakdown.values()), breakdown


# ---------------------------------------------------------------------------
# Comparison tables

COMPARE_METRICS = [
    "ipc", "hit_ratio", "bank_reads", "bank_writes",
    "crossbar_transfers", "writes_cached", "energy",
]


def _ratio(value: float, base: float):
    if base == 0:
        return 1.0 if value == 0 else None
    return value / base


def compare(reports: list[MetricsReport], baseline: MetricsReport,
            model: EnergyModel | None = None) -> list[dict]:
    """Per-run metrics normalized to the baseline run of the same trace."""
    rows = []
    base_energy, _ = energy(baseline, model)
    for rep in reports:
        if rep.trace_id != baseline.trace_id:
            raise ValueError(
                f"mismatched trace ids: {rep.trace_id!r} vs {baseline.trace_id!r}")
        total, _ = energy(rep, model)
        absolute = {m: getattr(rep, m) for m in COMPARE_METRICS if m != "energy"}
        absolute["energy"] = total
        base_values = {m: getattr(baseline, m) for m in COMPARE_METRICS if m != "energy"}
        base_values["energy"] = base_energy
        row = {"mode": rep.mode}
        for m in COMPARE_METRICS:
            row[m] = absolute[m]
            row[f"{m}_norm"] = _ratio(absolute[m], base_values[m])
        rows.append(row)
    return rows


def write_compare_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def summary_row(report: MetricsReport, model: EnergyModel | None = None,
                baseline: MetricsReport | None = None) -> dict:
    total, _ = energy(report, model)
    norm = ""
    if baseline is not None:
        base_total, _ = energy(baseline, model)
        ratio = _ratio(total, base_total)
        norm = "" if ratio is None else ratio
    return {
        "mode": report.mode, "trace_id": report.trace_id, "seed": report.seed,
        "cycles": report.cycles, "instructions": report.instructions,
        "ipc": report.ipc, "hit_ratio": report.hit_ratio,
        "bank_reads": report.bank_reads, "bank_writes": report.bank_writes,
        "crossbar_transfers": report.crossbar_transfers,
        "writes_cached": report.writes_cached,
        "writes_filtered": report.writes_filtered,
        "energy": total, "energy_norm": norm,
    }


def write_summary_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def write_intervals_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", "ipc", "state", "sthld"])
        for row in report.intervals:
            w.writerow(row)
