"""Issue scheduling, collector-unit allocation, and cache replacement policies.

These are pure decision functions over engine state snapshots; the cycle loop
applies their outcomes. The only state they mutate themselves is the per
sub-core waiting counter, which belongs to the allocation decision.

Allocation semantics shared by all cached modes: a warp may hold data in at
most one collector unit, so a warp that owns one either reuses it (when free)
or cannot issue this cycle. Warps owning nothing take a free unit; the
reuse-aware policy prefers units holding only far-reuse values and, when only
near-holding units are free, postpones allocation up to `sthld` consecutive
attempts before flushing one anyway.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .trace import Reuse


@dataclass
class SchedulerState:
    """Per sub-core scheduler bookkeeping plus the GPU-wide issue-delay bound."""
    last_issued_warp: int | None = None
    warp_ages: dict[int, int] = field(default_factory=dict)
    waiting_counter: int = 0
    sthld: int = 0


class DecisionKind(Enum):
    ALLOCATE = "ALLOCATE"
    STALL_OCCUPIED = "STALL_OCCUPIED"
    STALL_ALL_BUSY = "STALL_ALL_BUSY"
    STALL_WAITING = "STALL_WAITING"


@dataclass(frozen=True)
class AllocationDecision:
    kind: DecisionKind
    ccu_id: int | None = None


ALLOCATE = DecisionKind.ALLOCATE
STALL_OCCUPIED = DecisionKind.STALL_OCCUPIED
STALL_ALL_BUSY = DecisionKind.STALL_ALL_BUSY
STALL_WAITING = DecisionKind.STALL_WAITING


# ---------------------------------------------------------------------------
# Warp priorities

def gto_priority(ready_warps, state: SchedulerState) -> list[int]:
    """Greedy-then-oldest: the last issued warp first if ready, then by age."""
    ready = set(ready_warps)
    order = []
    last = state.last_issued_warp
    if last in ready:
        order.append(last)
        ready.discard(last)
    order.extend(sorted(ready, key=lambda w: state.warp_ages[w]))
    return order


def malekeh_priority(ready_warps, ccus, state: SchedulerState) -> list[int]:
    """Greedy first, then warps with live data in a collector unit, then the
    rest; both categories oldest-first."""
    ready = set(ready_warps)
    order = []
    last = state.last_issued_warp
    if last in ready:
        order.append(last)
        ready.discard(last)
    holders = {
        c.owner_warp for c in ccus
        if c.owner_warp is not None and c.ct.has_valid()
    }
    age = lambda w: state.warp_ages[w]
    order.extend(sorted((w for w in ready if w in holders), key=age))
    order.extend(sorted((w for w in ready if w not in holders), key=age))
    return order


# ---------------------------------------------------------------------------
# Collector-unit allocation

def _collecting(warp: int, ccus) -> bool:
    # While occupied, owner_warp is the warp whose instruction is collecting;
    # one in-flight collection per warp in every mode.
    return any(c.occupied and c.owner_warp == warp for c in ccus)


def _owned(warp: int, ccus):
    for ccu in ccus:
        if ccu.owner_warp == warp and not ccu.occupied and ccu.ct.has_valid():
            return ccu
    return None


def ccu_allocation(warp, ccus, state: SchedulerState,
                   rng: random.Random) -> AllocationDecision:
    """Reuse-aware allocation with the waiting mechanism.

    Ownership binds a warp to the unit holding its data: reuse it when free,
    otherwise no unit at all. Warps owning nothing prefer a random free unit
    whose table holds no near-reuse value; when every free unit holds near
    values, allocation is postponed until the waiting counter reaches sthld.
    The counter resets whenever an ownerless allocation succeeds.
    """
    if _collecting(warp, ccus):
        return AllocationDecision(STALL_OCCUPIED)
    owned = _owned(warp, ccus)
    if owned is not None:
        return AllocationDecision(ALLOCATE, owned.ccu_id)
    free = [c for c in ccus if not c.occupied]
    if not free:
        return AllocationDecision(STALL_ALL_BUSY)
    far_free = [c for c in free if not c.ct.has_near()]
    if far_free:
        state.waiting_counter = 0
        return AllocationDecision(ALLOCATE, rng.choice(far_free).ccu_id)
    if state.waiting_counter < state.sthld:
        state.waiting_counter += 1
        return AllocationDecision(STALL_WAITING)
    state.waiting_counter = 0
    return AllocationDecision(ALLOCATE, rng.choice(free).ccu_id)


def simple_allocation(warp, ccus, rng: random.Random,
                      respect_ownership: bool) -> AllocationDecision:
    """Traditional allocation: any free unit, chosen at random.

    With `respect_ownership` (the naive comparator, which shares the caching
    hardware and its one-unit-per-warp constraint) a warp holding data reuses
    its own unit; without it (plain collector baseline) occupancy is the only
    constraint, but a warp still collects at most one instruction at a time.
    """
    if _collecting(warp, ccus):
        return AllocationDecision(STALL_OCCUPIED)
    if respect_ownership:
        owned = _owned(warp, ccus)
        if owned is not None:
            return AllocationDecision(ALLOCATE, owned.ccu_id)
    free = [c for c in ccus if not c.occupied]
    if not free:
        return AllocationDecision(STALL_ALL_BUSY)
    return AllocationDecision(ALLOCATE, rng.choice(free).ccu_id)


def private_allocation(warp, ccus) -> AllocationDecision:
    """One unit pinned per warp: reuse it or wait for it."""
    for ccu in ccus:
        if ccu.owner_warp == warp:
            if not ccu.occupied:
                return AllocationDecision(ALLOCATE, ccu.ccu_id)
            return AllocationDecision(STALL_OCCUPIED)
    raise AssertionError(f"warp {warp} has no private collector unit")


# ---------------------------------------------------------------------------
# Replacement

def replacement_select(ct, rng: random.Random) -> int:
    """Victim choice: an invalid entry first; else a random unlocked far-reuse
    entry; else the least recently used unlocked entry."""
    invalid = ct.first_invalid()
    if invalid is not None:
        return invalid
    unlocked = [e for e in ct.entries if not e.lock]
    assert unlocked, "replacement with every entry locked is an engine bug"
    far = [e for e in unlocked if e.reuse is Reuse.FAR]
    if far:
        victim = rng.choice(far)
    else:
        victim = min(unlocked, key=lambda e: e.lru_rank)
    assert not victim.lock
    return victim.index


def lru_replacement_select(ct, rng: random.Random) -> int:
    """Pure LRU over unlocked entries (invalid entries first)."""
    invalid = ct.first_invalid()
    if invalid is not None:
        return invalid
    unlocked = [e for e in ct.entries if not e.lock]
    assert unlocked, "replacement with every entry locked is an engine bug"
    victim = min(unlocked, key=lambda e: e.lru_rank)
    return victim.index


# ---------------------------------------------------------------------------
# Comparator entry points (thin wrappers over the engine)

def bow_comparator(trace, config):
    """Sliding-window operand-buffer comparator run."""
    from .core import simulate
    from dataclasses import replace as _replace
    return simulate(trace, _replace(config, mode="bow").validated())


def two_level_scheduler(trace, config):
    """Active/pending two-level scheduler comparator run."""
    from .core import simulate
    from dataclasses import replace as _replace
    return simulate(trace, _replace(config, mode="two_level").validated())
