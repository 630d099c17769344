"""Cycle-level engine: sub-cores, single-ported banks, collector units, EU pipes.

Each cycle runs four stages in a fixed order over all sub-cores: write-back
(EU completions commit to the banks, one write per bank port, then compete for
each unit's single cache write port), bank service (the oldest read of each
queue is granted when the bank port and the target unit's delivery port are
both free), dispatch (one ready instruction per EU class enters its pipe and
frees its unit, retaining the cache table), and issue (warp priority plus the
mode's allocation policy; requests enqueue the same cycle and deliver the
next). A GPU-level hook updates the dynamic issue-delay threshold at fixed
cycle intervals.

Values are version tokens: each destination write carries the count of writes
its warp has made to that register in program order, which lets the engine
assert write-through consistency and cache freshness on every run without
storing data payloads.
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from . import policies
from .adaptive import AdaptiveState, interval_step
from .config import ANNOTATED_MODES, ConfigError, SimConfig
from .metrics import Counters, EngineBugError, MetricsReport, finalize
from .trace import KernelTrace, OpClass, Reuse, TraceInstruction


class SimulationDeadlock(RuntimeError):
    """No engine state change within the deadlock horizon."""


# ---------------------------------------------------------------------------
# Cache table

@dataclass
class CacheTableEntry:
    index: int
    tag: int | None = None
    valid: bool = False
    lock: bool = False
    reuse: Reuse = Reuse.FAR
    lru_rank: int = 0
    version: int | None = None


class CacheTable:
    """Fully associative table with distinct LRU ranks over valid entries
    (rank 0 is least recent)."""

    def __init__(self, n_entries: int):
        self.entries = [CacheTableEntry(index=i) for i in range(n_entries)]
        self.n_valid = 0

    def flush(self) -> None:
        for e in self.entries:
            e.tag = None
            e.valid = False
            e.lock = False
            e.reuse = Reuse.FAR
            e.lru_rank = 0
            e.version = None
        self.n_valid = 0

    def lookup(self, tag: int) -> int | None:
        for e in self.entries:
            if e.valid and e.tag == tag:
                return e.index
        return None

    def first_invalid(self) -> int | None:
        for e in self.entries:
            if not e.valid:
                return e.index
        return None

    def has_valid(self) -> bool:
        return self.n_valid > 0

    def has_near(self) -> bool:
        return any(e.valid and e.reuse is Reuse.NEAR for e in self.entries)

    def touch(self, index: int) -> None:
        entry = self.entries[index]
        assert entry.valid
        old = entry.lru_rank
        for e in self.entries:
            if e.valid and e.lru_rank > old:
                e.lru_rank -= 1
        entry.lru_rank = self.n_valid - 1

    def invalidate(self, index: int) -> None:
        entry = self.entries[index]
        assert entry.valid and not entry.lock
        old = entry.lru_rank
        for e in self.entries:
            if e.valid and e.lru_rank > old:
                e.lru_rank -= 1
        entry.valid = False
        entry.tag = None
        entry.version = None
        entry.reuse = Reuse.FAR
        self.n_valid -= 1

    def fill(self, index: int, tag: int, reuse: Reuse, lock: bool,
             version: int | None) -> None:
        """Overwrite a victim (valid or not) and make it most recent."""
        entry = self.entries[index]
        assert not entry.lock
        if entry.valid:
            self.invalidate(index)
        entry.tag = tag
        entry.valid = True
        entry.lock = lock
        entry.reuse = reuse
        entry.version = version
        self.n_valid += 1
        entry.lru_rank = self.n_valid - 1

    def valid_tags(self) -> set[int]:
        return {e.tag for e in self.entries if e.valid}


@dataclass
class OctSlot:
    slot: int
    register: int
    index: int | None  # cache-table entry, None for window-buffer mode
    valid: bool = True
    ready: bool = False


@dataclass
class CcuState:
    ccu_id: int
    ct: CacheTable
    occupied: bool = False
    owner_warp: int | None = None
    oct: list[OctSlot] = field(default_factory=list)
    instr: TraceInstruction | None = None
    dst_versions: tuple[int, ...] = ()
    latency: int = 1
    issue_seq: int = -1
    alloc_seq: int = -1

    def collection_ready(self) -> bool:
        return all(s.ready for s in self.oct if s.valid)


@dataclass
class _ReadRequest:
    warp: int
    register: int
    ccu_id: int
    slots: tuple[int, ...]


@dataclass
class _WriteRequest:
    warp: int
    register: int
    version: int
    reuse: Reuse
    pipe_entry: "_PipeEntry"


@dataclass
class _PipeEntry:
    completion: int
    issue_seq: int
    warp: int
    dsts: tuple[tuple[int, int, Reuse], ...]  # (register, version, reuse)
    pending_writes: int


class BankState:
    """Single-ported bank: one read or write per cycle, writes first."""

    def __init__(self, bank_id: int):
        self.bank_id = bank_id
        self.read_q: list[_ReadRequest] = []
        self.write_q: list[_WriteRequest] = []
        self.versions: dict[tuple[int, int], int] = {}


class _WarpContext:
    def __init__(self, wid: int, stream: tuple[TraceInstruction, ...],
                 mem_latency: int, window_size: int | None):
        self.wid = wid
        self.stream = stream
        self.pc = 0
        self.busy_write: dict[int, int] = {}
        self.pending_read: dict[int, int] = {}
        self.latency = [
            mem_latency if i.opcode_class is OpClass.MEM else i.exec_latency
            for i in stream
        ]
        self.dst_versions: list[tuple[int, ...]] = []
        counts: dict[int, int] = {}
        for instr in stream:
            vs = []
            for reg in instr.dst_regs:
                counts[reg] = counts.get(reg, 0) + 1
                vs.append(counts[reg])
            self.dst_versions.append(tuple(vs))
        self.final_versions = dict(counts)
        self.window_hits: list[tuple[bool, ...]] | None = None
        if window_size is not None:
            self.window_hits = []
            window: list[set[int]] = []
            for instr in stream:
                in_window = set().union(*window) if window else set()
                self.window_hits.append(
                    tuple(r in in_window for r in instr.src_regs))
                window.append(set(instr.src_regs) | set(instr.dst_regs))
                if len(window) > window_size:
                    window.pop(0)

    def done_issuing(self) -> bool:
        return self.pc >= len(self.stream)

    def next_instr(self) -> TraceInstruction:
        return self.stream[self.pc]

    def ready(self) -> bool:
        if self.pc >= len(self.stream):
            return False
        instr = self.stream[self.pc]
        busy = self.busy_write
        for r in instr.src_regs:
            if busy.get(r, 0):
                return False
        pending = self.pending_read
        for r in instr.dst_regs:
            if busy.get(r, 0) or pending.get(r, 0):
                return False
        return True


class SubCore:
    def __init__(self, sc_id: int, engine: "Engine", warp_ids: list[int]):
        cfg = engine.config
        self.sc_id = sc_id
        self.engine = engine
        self.warp_ids = warp_ids
        self.banks = [BankState(b) for b in range(cfg.banks_per_subcore)]
        n_ccus = len(warp_ids) if cfg.mode in ("malekeh_private", "bow") \
            else cfg.ccus_per_subcore
        self.ccus = [CcuState(i, CacheTable(cfg.ct_entries))
                     for i in range(max(n_ccus, 1))]
        if cfg.mode in ("malekeh_private", "bow"):
            for ccu, wid in zip(self.ccus, warp_ids):
                ccu.owner_warp = wid
        self.sched = policies.SchedulerState(
            warp_ages={w: i for i, w in enumerate(warp_ids)},
            sthld=engine.sthld)
        self.pipes: list = []  # heap of (completion, issue_seq, _PipeEntry)
        self.remaining_issues = sum(
            len(engine.warp_ctx[w].stream) for w in warp_ids)
        # two-level scheduler sets
        self.active: list[int] = []
        self.pending: list[int] = []
        if cfg.mode == "two_level":
            by_age = sorted(warp_ids, key=lambda w: self.sched.warp_ages[w])
            self.active = by_age[:cfg.active_set_size]
            self.pending = by_age[cfg.active_set_size:]
        self.state_counts = {"issue": 0, "stall_ready_pending": 0,
                             "stall_no_ready": 0}

    # -- helpers ----------------------------------------------------------

    def bank_of(self, warp: int, register: int) -> BankState:
        return self.banks[(warp + register) % len(self.banks)]

    def owned_ccu(self, warp: int) -> CcuState | None:
        found = [c for c in self.ccus if c.owner_warp == warp
                 and c.ct.has_valid()]
        if len(found) > 1:
            raise EngineBugError(
                f"warp {warp} holds data in {len(found)} collector units")
        return found[0] if found else None

    def idle(self) -> bool:
        return (not any(c.occupied for c in self.ccus)
                and all(not b.read_q and not b.write_q for b in self.banks)
                and not any(self.engine.warp_ctx[w].ready()
                            for w in self.warp_ids))

    # -- write-back stage --------------------------------------------------

    def writeback_stage(self, now: int) -> None:
        engine = self.engine
        while self.pipes and self.pipes[0][0] <= now:
            _, _, entry = heapq.heappop(self.pipes)
            if not entry.dsts:
                engine.retire()
                continue
            for reg, version, reuse in entry.dsts:
                self.bank_of(entry.warp, reg).write_q.append(
                    _WriteRequest(entry.warp, reg, version, reuse, entry))
        committed: list[_WriteRequest] = []
        for bank in self.banks:
            if not bank.write_q:
                continue
            wr = bank.write_q.pop(0)
            key = (wr.warp, wr.register)
            prev = bank.versions.get(key, 0)
            if wr.version != prev + 1:
                raise EngineBugError(
                    f"out-of-order write to warp {wr.warp} R{wr.register}: "
                    f"{prev} -> {wr.version}")
            bank.versions[key] = wr.version
            engine.ports.write_port(self.sc_id, bank.bank_id)
            engine.counters.bank_writes += 1
            ctx = engine.warp_ctx[wr.warp]
            ctx.busy_write[wr.register] -= 1
            wr.pipe_entry.pending_writes -= 1
            if wr.pipe_entry.pending_writes == 0:
                engine.retire()
            committed.append(wr)
        if committed:
            self._cache_writes(committed)

    def _cache_writes(self, committed: list[_WriteRequest]) -> None:
        """Single cache write port per unit per cycle; banks hold the truth,
        so any cached copy that does not get the port is invalidated."""
        engine = self.engine
        mode = engine.config.mode
        counters = engine.counters
        if mode == "bow":
            # Window buffers keep every destination; hits are positional.
            counters.writes_cached += len(committed)
            return
        if mode in ("baseline_ocu", "two_level"):
            counters.writes_filtered += len(committed)
            return
        near_only = mode in ("malekeh", "malekeh_private")
        by_ccu: dict[int, list[_WriteRequest]] = {}
        for wr in committed:
            ccu = self.owned_ccu(wr.warp)
            if ccu is None or (ccu.occupied and ccu.owner_warp != wr.warp):
                counters.writes_filtered += 1
                continue
            by_ccu.setdefault(ccu.ccu_id, []).append(wr)
        for ccu_id, writes in by_ccu.items():
            ccu = self.ccus[ccu_id]
            eligible = [w for w in writes
                        if not near_only or w.reuse is Reuse.NEAR]
            winner = min(
                eligible,
                key=lambda w: (w.pipe_entry.issue_seq, w.register),
                default=None)
            for wr in writes:
                idx = ccu.ct.lookup(wr.register)
                if wr is winner:
                    engine.ports.ccu_write_port(self.sc_id, ccu_id)
                    if idx is not None:
                        entry = ccu.ct.entries[idx]
                        assert not entry.lock, \
                            "write-back hit a locked source entry"
                        entry.version = wr.version
                        entry.reuse = wr.reuse
                        ccu.ct.touch(idx)
                    else:
                        victim = engine.replacement(ccu.ct)
                        ccu.ct.fill(victim, wr.register, wr.reuse,
                                    lock=False, version=wr.version)
                    counters.writes_cached += 1
                else:
                    counters.writes_filtered += 1
                    if idx is not None:
                        ccu.ct.invalidate(idx)

    # -- bank service stage -------------------------------------------------

    def bank_cycle(self, now: int) -> None:
        engine = self.engine
        counters = engine.counters
        for bank in self.banks:
            if len(bank.read_q) > counters.bank_queue_peak:
                counters.bank_queue_peak = len(bank.read_q)
            if not bank.read_q:
                continue
            if engine.ports.bank_busy(self.sc_id, bank.bank_id):
                continue  # a write took the port this cycle
            req = bank.read_q[0]
            if engine.ports.ccu_delivered(self.sc_id, req.ccu_id):
                continue  # head-of-line block: one delivery per unit per cycle
            bank.read_q.pop(0)
            engine.ports.read_port(self.sc_id, bank.bank_id)
            engine.ports.deliver(self.sc_id, req.ccu_id)
            counters.bank_reads += 1
            counters.crossbar_transfers += 1
            version = bank.versions.get((req.warp, req.register), 0)
            self.ccu_receive_source(self.ccus[req.ccu_id], req, version)

    def ccu_receive_source(self, ccu: CcuState, req: _ReadRequest,
                           version: int) -> None:
        assert ccu.occupied and ccu.owner_warp == req.warp, \
            "delivery to a unit not collecting for this warp"
        filled = False
        for slot_id in req.slots:
            slot = ccu.oct[slot_id]
            assert slot.valid and not slot.ready and slot.register == req.register
            slot.ready = True
            if slot.index is not None and not filled:
                entry = ccu.ct.entries[slot.index]
                assert entry.valid and entry.tag == req.register
                entry.version = version
                filled = True
        self.engine.progress = True

    # -- dispatch stage ------------------------------------------------------

    def dispatch_stage(self, now: int) -> None:
        engine = self.engine
        ready = [c for c in self.ccus if c.occupied and c.collection_ready()]
        if not ready:
            return
        by_class: dict[OpClass, list[CcuState]] = {}
        for ccu in ready:
            by_class.setdefault(ccu.instr.opcode_class, []).append(ccu)
        for cls in OpClass:
            group = by_class.get(cls)
            if not group:
                continue
            ccu = min(group, key=lambda c: c.alloc_seq)
            self._dispatch(ccu, now)

    def _dispatch(self, ccu: CcuState, now: int) -> None:
        engine = self.engine
        instr = ccu.instr
        ctx = engine.warp_ctx[instr.warp_id]
        for slot in ccu.oct:
            if slot.index is not None:
                entry = ccu.ct.entries[slot.index]
                entry.lock = False
                bank_version = self.bank_of(instr.warp_id, slot.register) \
                    .versions.get((instr.warp_id, slot.register), 0)
                if entry.version != bank_version:
                    raise EngineBugError(
                        f"stale operand: warp {instr.warp_id} R{slot.register} "
                        f"cached v{entry.version}, bank v{bank_version}")
            ctx.pending_read[slot.register] -= 1
        dsts = tuple(
            (reg, version, _dst_reuse(instr, i))
            for i, (reg, version) in enumerate(
                zip(instr.dst_regs, ccu.dst_versions)))
        entry = _PipeEntry(
            completion=now + ccu.latency, issue_seq=ccu.issue_seq,
            warp=instr.warp_id, dsts=dsts, pending_writes=len(dsts))
        heapq.heappush(self.pipes, (entry.completion, entry.issue_seq, entry))
        ccu.occupied = False
        ccu.oct = []
        ccu.instr = None
        if engine.config.mode in ("baseline_ocu", "two_level"):
            ccu.ct.flush()  # caching disabled: nothing survives dispatch
        engine.progress = True

    # -- issue stage ---------------------------------------------------------

    def issue_stage(self, now: int) -> None:
        engine = self.engine
        cfg = engine.config
        mode = cfg.mode
        if mode == "two_level":
            self._promote()
        ready = [w for w in self.warp_ids if engine.warp_ctx[w].ready()]
        considered = ready
        if mode == "two_level":
            active = set(self.active)
            considered = [w for w in ready if w in active]
        issued = False
        occupied_seen = False
        stall_key = None
        if considered:
            if mode in ("malekeh", "malekeh_private"):
                order = policies.malekeh_priority(considered, self.ccus, self.sched)
            else:
                order = policies.gto_priority(considered, self.sched)
            for warp in order:
                decision = self._allocation_decision(warp)
                kind = decision.kind
                if kind is policies.ALLOCATE:
                    self.ccu_allocate(self.ccus[decision.ccu_id],
                                      engine.warp_ctx[warp], now)
                    issued = True
                    break
                if kind is policies.STALL_OCCUPIED:
                    occupied_seen = True
                    continue
                if kind is policies.STALL_ALL_BUSY:
                    stall_key = "ALL_BUSY"
                    break
                stall_key = "WAITING"
                break
        if issued:
            if mode == "two_level":
                self.state_counts["issue"] += 1
            return
        if self.remaining_issues == 0:
            return
        if stall_key is None:
            stall_key = "OCCUPIED" if occupied_seen else "NO_READY_WARP"
        engine.counters.stalls[stall_key] += 1
        if mode == "two_level":
            pending = set(self.pending)
            if any(w in pending for w in ready):
                self.state_counts["stall_ready_pending"] += 1
            else:
                self.state_counts["stall_no_ready"] += 1

    def _allocation_decision(self, warp: int) -> policies.AllocationDecision:
        mode = self.engine.config.mode
        rng = self.engine.rng
        if mode == "malekeh":
            return policies.ccu_allocation(warp, self.ccus, self.sched, rng)
        if mode in ("malekeh_private", "bow"):
            return policies.private_allocation(warp, self.ccus)
        if mode == "naive_gto_lru":
            return policies.simple_allocation(warp, self.ccus, rng,
                                              respect_ownership=True)
        return policies.simple_allocation(warp, self.ccus, rng,
                                          respect_ownership=False)

    def ccu_allocate(self, ccu: CcuState, ctx: _WarpContext, now: int):
        """Bind the warp's next instruction to the unit: flush on owner
        change, tag-check sources, lock and refresh hits, request misses."""
        engine = self.engine
        cfg = engine.config
        instr = ctx.next_instr()
        warp = ctx.wid
        bow = cfg.mode == "bow"
        if not bow:
            if ccu.owner_warp != warp:
                ccu.ct.flush()
            for other in self.ccus:
                # One unit per warp: taking a new unit abandons data left in
                # any previously owned one.
                if other is not ccu and other.owner_warp == warp:
                    assert not other.occupied
                    other.ct.flush()
                    other.owner_warp = None
        ccu.owner_warp = warp
        ccu.occupied = True
        ccu.instr = instr
        ccu.issue_seq = engine.next_issue_seq()
        ccu.alloc_seq = ccu.issue_seq
        ccu.dst_versions = ctx.dst_versions[ctx.pc]
        ccu.latency = ctx.latency[ctx.pc]
        ccu.oct = []
        hits = 0
        requests: dict[int, _ReadRequest] = {}
        for slot_id, reg in enumerate(instr.src_regs):
            if bow:
                hit = ctx.window_hits[ctx.pc][slot_id] or reg in requests
                slot = OctSlot(slot_id, reg, index=None, ready=hit)
                if hit:
                    hits += 1
                else:
                    requests[reg] = _ReadRequest(warp, reg, ccu.ccu_id, (slot_id,))
                ccu.oct.append(slot)
                continue
            annot = instr.src_reuse[slot_id] if instr.src_reuse else Reuse.FAR
            idx = ccu.ct.lookup(reg)
            if idx is not None:
                entry = ccu.ct.entries[idx]
                if entry.version is not None:
                    self._audit_hit(warp, reg, entry)
                    ready = True
                else:
                    # Pending fill from an earlier duplicate slot of this
                    # same instruction; share the entry and the request.
                    req = requests[reg]
                    requests[reg] = _ReadRequest(
                        warp, reg, ccu.ccu_id, req.slots + (slot_id,))
                    ready = False
                hits += 1
                entry.lock = True
                entry.reuse = annot
                ccu.ct.touch(idx)
            else:
                idx = engine.replacement(ccu.ct)
                ccu.ct.fill(idx, reg, annot, lock=True, version=None)
                requests[reg] = _ReadRequest(warp, reg, ccu.ccu_id, (slot_id,))
                ready = False
            ccu.oct.append(OctSlot(slot_id, reg, index=idx, ready=ready))
        for reg, req in requests.items():
            self.bank_of(warp, reg).read_q.append(req)
        engine.counters.total_fetches += len(instr.src_regs)
        engine.counters.ccu_hits += hits
        for reg in instr.dst_regs:
            ctx.busy_write[reg] = ctx.busy_write.get(reg, 0) + 1
        for reg in instr.src_regs:
            ctx.pending_read[reg] = ctx.pending_read.get(reg, 0) + 1
        ctx.pc += 1
        self.remaining_issues -= 1
        self.sched.last_issued_warp = warp
        if cfg.mode == "two_level" and instr.opcode_class is OpClass.MEM:
            # Long-latency issue demotes the warp out of the active set.
            self.active.remove(warp)
            self.pending.append(warp)
        engine.progress = True
        return requests, hits

    def _audit_hit(self, warp: int, reg: int, entry: CacheTableEntry) -> None:
        bank_version = self.bank_of(warp, reg).versions.get((warp, reg), 0)
        if entry.version != bank_version:
            raise EngineBugError(
                f"stale cache hit: warp {warp} R{reg} cached "
                f"v{entry.version}, bank v{bank_version}")

    def _promote(self) -> None:
        engine = self.engine
        self.active = [w for w in self.active
                       if not engine.warp_ctx[w].done_issuing()]
        self.pending = [w for w in self.pending
                        if not engine.warp_ctx[w].done_issuing()]
        size = engine.config.active_set_size
        while len(self.active) < size:
            ready_pending = [w for w in self.pending
                             if engine.warp_ctx[w].ready()]
            if not ready_pending:
                break
            oldest = min(ready_pending, key=lambda w: self.sched.warp_ages[w])
            self.pending.remove(oldest)
            self.active.append(oldest)


def _stream_index(ctx: _WarpContext, ccu: CcuState) -> int:
    # The occupant is always the most recently issued instruction of its warp.
    return ctx.pc - 1


def _dst_reuse(instr: TraceInstruction, slot: int) -> Reuse:
    return instr.dst_reuse[slot] if instr.dst_reuse else Reuse.FAR


class _PortLedger:
    """Per-cycle port-use audit: at most one access per bank and at most one
    delivery and one cache write per collector unit."""

    def __init__(self):
        self.bank_used: set = set()
        self.delivered: set = set()
        self.ct_written: set = set()

    def reset(self):
        self.bank_used.clear()
        self.delivered.clear()
        self.ct_written.clear()

    def write_port(self, sc: int, bank: int) -> None:
        key = (sc, bank)
        if key in self.bank_used:
            raise EngineBugError(f"bank port used twice in one cycle: {key}")
        self.bank_used.add(key)

    read_port = write_port

    def bank_busy(self, sc: int, bank: int) -> bool:
        return (sc, bank) in self.bank_used

    def deliver(self, sc: int, ccu: int) -> None:
        key = (sc, ccu)
        if key in self.delivered:
            raise EngineBugError(f"two deliveries to one unit in one cycle: {key}")
        self.delivered.add(key)

    def ccu_delivered(self, sc: int, ccu: int) -> bool:
        return (sc, ccu) in self.delivered

    def ccu_write_port(self, sc: int, ccu: int) -> None:
        key = (sc, ccu)
        if key in self.ct_written:
            raise EngineBugError(f"two cache writes to one unit in one cycle: {key}")
        self.ct_written.add(key)


class Engine:
    def __init__(self, trace: KernelTrace, config: SimConfig, trace_id: str):
        config = config.validated()
        if config.mode in ANNOTATED_MODES and trace.warps and not trace.annotated:
            raise ConfigError(
                f"mode {config.mode!r} requires an annotated trace")
        self.trace = trace
        self.config = config
        self.trace_id = trace_id
        self.rng = random.Random(config.seed)
        self.counters = Counters()
        self.sthld = config.sthld
        self.adaptive = AdaptiveState(
            sthld=config.sthld, interval_len=config.interval,
            delta=config.adaptive_delta,
            small_threshold=config.adaptive_small_threshold,
            cap=config.adaptive_cap,
            cap_patience=config.adaptive_cap_patience)
        window = config.window_size if config.mode == "bow" else None
        self.warp_ctx = {
            wid: _WarpContext(wid, stream, config.mem_latency, window)
            for wid, stream in trace.warps.items()
        }
        total_subcores = config.num_sms * config.subcores_per_sm
        assignment: dict[int, list[int]] = {}
        for wid in sorted(trace.warps):
            assignment.setdefault(wid % total_subcores, []).append(wid)
        per_sm: dict[int, int] = {}
        for sc, wids in assignment.items():
            per_sm[sc // config.subcores_per_sm] = \
                per_sm.get(sc // config.subcores_per_sm, 0) + len(wids)
        for sm, count in per_sm.items():
            if count > config.warps_per_sm:
                raise ConfigError(
                    f"SM {sm} would hold {count} warps, above warps_per_sm="
                    f"{config.warps_per_sm}")
        self.subcores = [
            SubCore(sc, self, assignment.get(sc, []))
            for sc in range(total_subcores) if sc in assignment
        ]
        if config.mode == "malekeh":
            for sub in self.subcores:
                sub.sched.sthld = self.sthld
        name = config.mode
        if name == "naive_gto_lru":
            self._replacement = policies.lru_replacement_select
        else:
            self._replacement = policies.replacement_select
        self._issue_seq = 0
        self.retired = 0
        self.total = trace.num_instructions
        self.progress = False
        self.ports = _PortLedger()
        max_latency = max(
            (lat for ctx in self.warp_ctx.values() for lat in ctx.latency),
            default=1)
        self.deadlock_horizon = 10 * max(max_latency, config.interval // 100)

    def replacement(self, ct: CacheTable) -> int:
        return self._replacement(ct, self.rng)

    def next_issue_seq(self) -> int:
        self._issue_seq += 1
        return self._issue_seq

    def retire(self) -> None:
        self.retired += 1
        self.counters.instructions += 1
        self.progress = True

    # -- main loop ----------------------------------------------------------

    def run(self) -> MetricsReport:
        cfg = self.config
        now = 0
        last_progress = 0
        interval_retired = 0
        interval_idx = 0
        while self.retired < self.total:
            skipped = self._fast_forward(now)
            if skipped:
                now += skipped
            self.progress = False
            self.ports.reset()
            for sub in self.subcores:
                sub.writeback_stage(now)
            for sub in self.subcores:
                sub.bank_cycle(now)
            for sub in self.subcores:
                sub.dispatch_stage(now)
            for sub in self.subcores:
                sub.issue_stage(now)
            if self.progress:
                last_progress = now
            elif now - last_progress > self.deadlock_horizon:
                raise SimulationDeadlock(self._deadlock_dump(now))
            now += 1
            if now % cfg.interval == 0:
                ipc = (self.retired - interval_retired) / cfg.interval
                interval_retired = self.retired
                self._interval_hook(interval_idx, ipc)
                interval_idx += 1
        self.counters.cycles = now
        if cfg.mode == "two_level":
            total = sum(s for sub in self.subcores
                        for s in sub.state_counts.values())
            merged = {k: 0 for k in ("issue", "stall_ready_pending",
                                     "stall_no_ready")}
            for sub in self.subcores:
                for k, v in sub.state_counts.items():
                    merged[k] += v
            self.counters.issue_states = {
                k: (v / total if total else 0.0) for k, v in merged.items()}
        self._final_consistency_check()
        return finalize(self.counters, cfg.mode, self.trace_id, cfg.seed,
                        cfg.to_dict())

    def _fast_forward(self, now: int) -> int:
        """Skip cycles where provably nothing can happen: warp readiness only
        changes at write-back, so with empty queues, no occupied units, and no
        ready warps the engine sleeps until the next pipe completion (bounded
        by the next interval boundary so the hook still fires)."""
        if not all(sub.idle() for sub in self.subcores):
            return 0
        completions = [sub.pipes[0][0] for sub in self.subcores if sub.pipes]
        if not completions:
            raise SimulationDeadlock(self._deadlock_dump(now))
        target = min(completions)
        boundary = (now // self.config.interval + 1) * self.config.interval - 1
        target = min(target, boundary)
        skipped = max(target - now, 0)
        if skipped:
            for sub in self.subcores:
                if sub.remaining_issues > 0:
                    self.counters.stalls["NO_READY_WARP"] += skipped
                    if self.config.mode == "two_level":
                        sub.state_counts["stall_no_ready"] += skipped
        return skipped

    def _interval_hook(self, index: int, ipc: float) -> None:
        cfg = self.config
        if cfg.sthld_mode == "dynamic":
            self.adaptive = interval_step(self.adaptive, ipc)
            self.sthld = self.adaptive.sthld
            for sub in self.subcores:
                sub.sched.sthld = self.sthld
                # Keep the waiting bound honest when the threshold shrinks.
                sub.sched.waiting_counter = min(
                    sub.sched.waiting_counter, self.sthld)
            state = self.adaptive.fsm_state
        else:
            state = 0
        self.counters.intervals.append((index, ipc, state, self.sthld))

    def _final_consistency_check(self) -> None:
        for sub in self.subcores:
            for wid in sub.warp_ids:
                ctx = self.warp_ctx[wid]
                for reg, version in ctx.final_versions.items():
                    bank = sub.bank_of(wid, reg)
                    got = bank.versions.get((wid, reg), 0)
                    if got != version:
                        raise EngineBugError(
                            f"write-through mismatch: warp {wid} R{reg} bank "
                            f"v{got}, program wrote v{version}")
                if any(ctx.busy_write.values()) or any(ctx.pending_read.values()):
                    raise EngineBugError(f"warp {wid} scoreboard not drained")

    def _deadlock_dump(self, now: int) -> str:
        lines = [f"deadlock at cycle {now}: no state change within "
                 f"{self.deadlock_horizon} cycles"]
        for sub in self.subcores:
            occupied = [(c.ccu_id, c.owner_warp,
                         [(s.register, s.ready) for s in c.oct])
                        for c in sub.ccus if c.occupied]
            queues = [(b.bank_id, len(b.read_q), len(b.write_q))
                      for b in sub.banks]
            lines.append(f"  subcore {sub.sc_id}: occupied={occupied} "
                         f"queues={queues} pipes={len(sub.pipes)} "
                         f"remaining={sub.remaining_issues}")
        return "\n".join(lines)


def simulate(trace: KernelTrace, config: SimConfig,
             trace_id: str | None = None) -> MetricsReport:
    """Run one deterministic simulation and return its metrics report."""
    if trace_id is None:
        trace_id = f"trace:{trace.num_warps}w:{trace.num_instructions}i"
    engine = Engine(trace, config, trace_id)
    return engine.run()
