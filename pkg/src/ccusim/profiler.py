"""Reuse-distance profiling and static near/far annotation.

The reuse distance of an operand occurrence is the number of dynamic
instructions of the same warp between the occurrence and the next instruction
(strictly later) that names the same register as a source or destination, so
an immediately following use has distance 1. Registers never used again have
distance INFINITE. Distances binarize against a threshold: NEAR strictly below
it, FAR at or above it (and INFINITE). Static annotations come from a majority
vote over the occurrences observed in a profiled warp prefix; ties and
never-profiled operands default to FAR, the safe choice for a tiny cache.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

from .trace import KernelTrace, Reuse, TraceInstruction, make_trace

INFINITE = math.inf

SRC = "S"
DST = "D"


@dataclass(frozen=True)
class ReuseRecord:
    warp_id: int
    dynamic_index: int
    role: str               # SRC or DST
    slot: int
    register: int
    distance: float         # integer >= 1, or INFINITE
    verdict: Reuse | None = None


@dataclass(frozen=True)
class StaticAnnotation:
    static_id: int
    role: str
    slot: int
    near_count: int
    far_count: int

    @property
    def verdict(self) -> Reuse:
        return Reuse.NEAR if self.near_count > self.far_count else Reuse.FAR


def exact_reuse_distances(trace: KernelTrace) -> list[ReuseRecord]:
    """One record per dynamic operand occurrence, in per-warp stream order.

    Computed with a single backward pass per warp: a register's next-use index
    is whatever occurrence was seen most recently while scanning from the end.
    """
    records: list[ReuseRecord] = []
    for wid in sorted(trace.warps):
        stream = trace.warps[wid]
        next_use: dict[int, int] = {}
        per_instr: list[list[ReuseRecord]] = [None] * len(stream)  # type: ignore
        for idx in range(len(stream) - 1, -1, -1):
            instr = stream[idx]
            here = []
            for role, regs in ((SRC, instr.src_regs), (DST, instr.dst_regs)):
                for slot, reg in enumerate(regs):
                    nxt = next_use.get(reg)
                    dist = INFINITE if nxt is None else float(nxt - idx)
                    here.append(ReuseRecord(wid, idx, role, slot, reg, dist))
            # Same-instruction co-occurrences are simultaneous, not reuses, so
            # the next-use map updates only after the whole instruction.
            for reg in set(instr.src_regs) | set(instr.dst_regs):
                next_use[reg] = idx
            per_instr[idx] = here
        for here in per_instr:
            records.extend(here)
    return records


def binarize(records: list[ReuseRecord], rthld: int) -> list[ReuseRecord]:
    """NEAR iff distance < rthld; FAR at or above it, and always for INFINITE."""
    if rthld < 1:
        raise ValueError("rthld must be >= 1")
    return [
        replace(r, verdict=Reuse.NEAR if r.distance < rthld else Reuse.FAR)
        for r in records
    ]


def profiled_warp_ids(trace: KernelTrace, fraction: float) -> list[int]:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("profiled warp fraction must be in (0, 1]")
    count = max(1, math.ceil(fraction * trace.num_warps))
    return sorted(trace.warps)[:count]


def majority_annotate(
    trace: KernelTrace, profiled_warp_fraction: float, rthld: int
) -> list[StaticAnnotation]:
    """Profile the first warps of the kernel and vote per static operand."""
    selected = set(profiled_warp_ids(trace, profiled_warp_fraction))
    sub = make_trace(
        i for wid in sorted(selected) for i in trace.warps[wid]
    )
    verdicts = binarize(exact_reuse_distances(sub), rthld)
    static_of: dict[tuple[int, int], int] = {}
    for wid in selected:
        for idx, instr in enumerate(trace.warps[wid]):
            static_of[(wid, idx)] = instr.static_id
    counts: dict[tuple[int, str, int], list[int]] = {}
    for rec in verdicts:
        key = (static_of[(rec.warp_id, rec.dynamic_index)], rec.role, rec.slot)
        near_far = counts.setdefault(key, [0, 0])
        near_far[0 if rec.verdict is Reuse.NEAR else 1] += 1
    return [
        StaticAnnotation(static_id=k[0], role=k[1], slot=k[2],
                         near_count=v[0], far_count=v[1])
        for k, v in sorted(counts.items())
    ]


def annotate_trace(
    trace: KernelTrace, annotations: list[StaticAnnotation]
) -> KernelTrace:
    """Fill every operand's reuse bit from the annotation table (missing -> FAR)."""
    table = {(a.static_id, a.role, a.slot): a.verdict for a in annotations}

    def bits(instr: TraceInstruction, role: str, regs) -> tuple[Reuse, ...]:
        return tuple(
            table.get((instr.static_id, role, slot), Reuse.FAR)
            for slot in range(len(regs))
        )

    annotated = [
        replace(i, src_reuse=bits(i, SRC, i.src_regs),
                dst_reuse=bits(i, DST, i.dst_regs))
        for i in trace.instructions()
    ]
    return make_trace(annotated)


def annotate(trace: KernelTrace, fraction: float = 0.05, rthld: int = 12) -> KernelTrace:
    """Convenience pipeline: profile, vote, and annotate in one call."""
    return annotate_trace(trace, majority_annotate(trace, fraction, rthld))


# ---------------------------------------------------------------------------
# Reporting

HISTOGRAM_BUCKETS = [str(d) for d in range(1, 11)] + [">10", "inf"]


def distance_histogram(records: list[ReuseRecord]) -> dict[str, int]:
    """Distances bucketed 1..10 individually, then >10, then never-reused."""
    hist = {b: 0 for b in HISTOGRAM_BUCKETS}
    for rec in records:
        if rec.distance == INFINITE:
            hist["inf"] += 1
        elif rec.distance > 10:
            hist[">10"] += 1
        else:
            hist[str(int(rec.distance))] += 1
    return hist


def write_annotation_csv(annotations: list[StaticAnnotation], path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["static_id", "role", "slot", "near", "far", "verdict"])
        for a in annotations:
            w.writerow([a.static_id, a.role, a.slot,
                        a.near_count, a.far_count, a.verdict.value])


def write_histogram_csv(hist: dict[str, int], path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket", "count"])
        for bucket in HISTOGRAM_BUCKETS:
            w.writerow([bucket, hist[bucket]])
