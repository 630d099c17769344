"""Instruction-trace data model, text format, validation, and synthetic workloads.

A trace is a set of per-warp dynamic instruction streams. Registers are
warp-level (one logical register per architectural id per warp); data payloads
are not stored, only version tokens tracked by the engine. The text format is
one instruction per line:

    W<warp> <OPCODE> <latency> D:<Rn[,Rn]> S:<Rn[,...]> [RD:S=<N|F>,..;D=<N|F>,..]

Empty operand lists are written as `D:-` / `S:-` (and `S=-` / `D=-` inside the
reuse clause). Lines starting with `#` and blank lines are ignored.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum

MAX_REGISTER = 255  # one-byte register tag
MAX_SRC = 6
MAX_DST = 2
RTHLD_DEFAULT = 12


class OpClass(Enum):
    ALU = "ALU"
    SFU = "SFU"
    MEM = "MEM"
    TENSOR = "TENSOR"
    CTRL = "CTRL"


class Reuse(Enum):
    NEAR = "N"
    FAR = "F"


class TraceError(ValueError):
    """Malformed trace file or invalid generator parameters."""


@dataclass(frozen=True)
class TraceInstruction:
    warp_id: int
    static_id: int
    opcode_class: OpClass
    exec_latency: int
    src_regs: tuple[int, ...] = ()
    dst_regs: tuple[int, ...] = ()
    src_reuse: tuple[Reuse, ...] | None = None
    dst_reuse: tuple[Reuse, ...] | None = None

    @property
    def annotated(self) -> bool:
        return self.src_reuse is not None and self.dst_reuse is not None


@dataclass(frozen=True)
class KernelTrace:
    warps: dict[int, tuple[TraceInstruction, ...]]
    annotated: bool = field(default=False)

    @property
    def num_warps(self) -> int:
        return len(self.warps)

    @property
    def num_instructions(self) -> int:
        return sum(len(s) for s in self.warps.values())

    def instructions(self):
        for wid in sorted(self.warps):
            yield from self.warps[wid]


def make_trace(instructions) -> KernelTrace:
    """Group instructions by warp, preserving per-warp order."""
    warps: dict[int, list[TraceInstruction]] = {}
    for instr in instructions:
        warps.setdefault(instr.warp_id, []).append(instr)
    streams = {wid: tuple(stream) for wid, stream in sorted(warps.items())}
    annotated = bool(streams) and all(
        i.annotated for s in streams.values() for i in s
    )
    return KernelTrace(warps=streams, annotated=annotated)


# ---------------------------------------------------------------------------
# Text format

_LINE_RE = re.compile(
    r"^W(?P<warp>\d+)\s+(?P<op>[A-Z]+)\s+(?P<lat>\d+)\s+"
    r"D:(?P<dst>[R0-9,]+|-)\s+S:(?P<src>[R0-9,]+|-)"
    r"(?:\s+RD:S=(?P<srd>[NF,]*|-);D=(?P<drd>[NF,]*|-))?\s*$"
)


def _parse_regs(text: str, lineno: int) -> tuple[int, ...]:
    if text == "-":
        return ()
    regs = []
    for tok in text.split(","):
        if not tok.startswith("R") or not tok[1:].isdigit():
            raise TraceError(f"line {lineno}: bad register token {tok!r}")
        rid = int(tok[1:])
        if rid > MAX_REGISTER:
            raise TraceError(f"line {lineno}: register id out of range: R{rid}")
        regs.append(rid)
    return tuple(regs)


def _parse_reuse(text: str | None) -> tuple[Reuse, ...] | None:
    if text is None:
        return None
    if text in ("-", ""):
        return ()
    return tuple(Reuse(tok) for tok in text.split(","))


def parse_line(line: str, lineno: int, static_id: int) -> TraceInstruction:
    m = _LINE_RE.match(line)
    if m is None:
        raise TraceError(f"line {lineno}: does not match trace grammar: {line!r}")
    try:
        op = OpClass(m.group("op"))
    except ValueError:
        raise TraceError(f"line {lineno}: unknown opcode class {m.group('op')!r}")
    lat = int(m.group("lat"))
    if lat < 1:
        raise TraceError(f"line {lineno}: latency must be >= 1")
    dst = _parse_regs(m.group("dst"), lineno)
    src = _parse_regs(m.group("src"), lineno)
    if len(src) > MAX_SRC:
        raise TraceError(f"line {lineno}: more than {MAX_SRC} source operands")
    if len(dst) > MAX_DST:
        raise TraceError(f"line {lineno}: more than {MAX_DST} destination operands")
    srd = _parse_reuse(m.group("srd"))
    drd = _parse_reuse(m.group("drd"))
    if (srd is None) != (drd is None):
        raise TraceError(f"line {lineno}: partial reuse annotation")
    if srd is not None and (len(srd) != len(src) or len(drd) != len(dst)):
        raise TraceError(f"line {lineno}: reuse annotation length mismatch")
    return TraceInstruction(
        warp_id=int(m.group("warp")),
        static_id=static_id,
        opcode_class=op,
        exec_latency=lat,
        src_regs=src,
        dst_regs=dst,
        src_reuse=srd,
        dst_reuse=drd,
    )


def format_instruction(instr: TraceInstruction) -> str:
    def regs(rs):
        return ",".join(f"R{r}" for r in rs) if rs else "-"

    text = (
        f"W{instr.warp_id} {instr.opcode_class.value} {instr.exec_latency} "
        f"D:{regs(instr.dst_regs)} S:{regs(instr.src_regs)}"
    )
    if instr.annotated and (instr.src_regs or instr.dst_regs):
        def bits(bs):
            return ",".join(b.value for b in bs) if bs else "-"

        text += f" RD:S={bits(instr.src_reuse)};D={bits(instr.dst_reuse)}"
    return text


def load_trace(path) -> KernelTrace:
    """Parse a trace file. Per-warp instruction order is file order; static ids
    are assigned per warp by stream position."""
    instrs: list[TraceInstruction] = []
    next_static: dict[int, int] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            instr = parse_line(line, lineno, static_id=0)
            static_id = next_static.get(instr.warp_id, 0)
            next_static[instr.warp_id] = static_id + 1
            instrs.append(replace(instr, static_id=static_id))
    trace = make_trace(instrs)
    problems = validate(trace)
    if problems:
        raise TraceError("; ".join(problems))
    return trace


def save_trace(trace: KernelTrace, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for wid in sorted(trace.warps):
            for instr in trace.warps[wid]:
                fh.write(format_instruction(instr) + "\n")


# ---------------------------------------------------------------------------
# Validation

def validate(trace: KernelTrace) -> list[str]:
    """Return a list of invariant violations (empty when the trace is valid).

    Violations are data, not errors: each entry names the warp, the stream
    index, and the rule broken.
    """
    problems: list[str] = []
    wids = sorted(trace.warps)
    if wids and wids != list(range(len(wids))):
        problems.append(f"warp ids not dense in [0, {len(wids)}): {wids}")
    all_annotated = True
    for wid in wids:
        for idx, instr in enumerate(trace.warps[wid]):
            where = f"warp {wid} instr {idx}"
            if instr.warp_id != wid:
                problems.append(f"{where}: warp_id mismatch")
            if instr.exec_latency < 1:
                problems.append(f"{where}: latency below 1")
            if len(instr.src_regs) > MAX_SRC:
                problems.append(f"{where}: more than {MAX_SRC} source operands")
            if len(instr.dst_regs) > MAX_DST:
                problems.append(f"{where}: more than {MAX_DST} destination operands")
            for r in instr.src_regs + instr.dst_regs:
                if not 0 <= r <= MAX_REGISTER:
                    problems.append(f"{where}: register id out of range: R{r}")
            if instr.src_reuse is not None and len(instr.src_reuse) != len(instr.src_regs):
                problems.append(f"{where}: source reuse annotation length mismatch")
            if instr.dst_reuse is not None and len(instr.dst_reuse) != len(instr.dst_regs):
                problems.append(f"{where}: destination reuse annotation length mismatch")
            if not instr.annotated:
                all_annotated = False
    if trace.annotated and not all_annotated:
        problems.append("trace flagged annotated but has bare operands")
    return problems


# ---------------------------------------------------------------------------
# Synthetic workloads

class SyntheticKind(Enum):
    NEAR_REUSE = "NEAR_REUSE"
    FAR_REUSE = "FAR_REUSE"
    GEMM_LIKE = "GEMM_LIKE"
    RANDOM = "RANDOM"


def gen_synthetic(kind, num_warps: int, instrs_per_warp: int, seed: int) -> KernelTrace:
    """Deterministic workload generator.

    All warps execute the same static program, so static ids repeat across
    warps and partial profiling is representative. NEAR_REUSE chains keep every
    reuse distance under the default near/far threshold; FAR_REUSE keeps every
    distance at or above it; GEMM_LIKE mixes short-distance accumulators with
    long-distance matrix fragments in 6-source/2-destination tensor
    instructions; RANDOM draws a random static program.
    """
    kind = SyntheticKind(kind)
    if num_warps < 1 or instrs_per_warp < 1:
        raise TraceError("num_warps and instrs_per_warp must be >= 1")
    rng = random.Random(seed)
    program = _build_program(kind, instrs_per_warp, rng)
    instrs = [
        replace(p, warp_id=wid) for wid in range(num_warps) for p in program
    ]
    return make_trace(instrs)


def _build_program(kind: SyntheticKind, n: int, rng: random.Random):
    if kind is SyntheticKind.NEAR_REUSE:
        return [_near_reuse_instr(i) for i in range(n)]
    if kind is SyntheticKind.FAR_REUSE:
        return [_far_reuse_instr(i) for i in range(n)]
    if kind is SyntheticKind.GEMM_LIKE:
        return [_gemm_instr(i) for i in range(n)]
    return _random_program(n, rng)


def _near_reuse_instr(i: int) -> TraceInstruction:
    # Pool of 4 registers; each instruction consumes the previous two results,
    # so every reuse distance is 1 or 2 (well under RTHLD_DEFAULT). Every 8th
    # instruction is a load to create long-latency warp stalls.
    pool = 4
    dst = i % pool
    srcs = ((i - 1) % pool, (i - 2) % pool)
    op = OpClass.MEM if i % 8 == 7 else OpClass.ALU
    return TraceInstruction(
        warp_id=0, static_id=i % (2 * pool), opcode_class=op,
        exec_latency=4, src_regs=srcs, dst_regs=(dst,),
    )


def _far_reuse_instr(i: int) -> TraceInstruction:
    # Round-robin over 24 registers with the source trailing the destination
    # by 12 slots: consecutive occurrences of any register are exactly 12
    # dynamic instructions apart, i.e. at RTHLD_DEFAULT (far).
    pool = 2 * RTHLD_DEFAULT
    dst = i % pool
    src = (i - RTHLD_DEFAULT) % pool
    return TraceInstruction(
        warp_id=0, static_id=i % pool, opcode_class=OpClass.ALU,
        exec_latency=4, src_regs=(src,), dst_regs=(dst,),
    )


def _gemm_instr(i: int) -> TraceInstruction:
    # One tensor op per loop iteration: 4 fresh matrix-fragment registers plus
    # 2 accumulators read, 2 accumulators written. Fragments rotate over 48
    # registers (reused every 12 instructions, far); accumulators recur every
    # instruction (near). Accumulators R0/R2 share a bank under the default
    # two-bank interleave so their write-backs commit on distinct cycles.
    period = 12
    k = i % period
    frags = tuple(4 + (4 * k + j) % 48 for j in range(4))
    accs = (0, 2)
    return TraceInstruction(
        warp_id=0, static_id=k, opcode_class=OpClass.TENSOR,
        exec_latency=16, src_regs=frags + accs, dst_regs=accs,
    )


def _random_program(n: int, rng: random.Random):
    program = []
    for i in range(n):
        op = rng.choices(
            [OpClass.ALU, OpClass.SFU, OpClass.MEM, OpClass.TENSOR, OpClass.CTRL],
            weights=[50, 10, 15, 10, 5],
        )[0]
        if op is OpClass.CTRL:
            nsrc, ndst, lat = 0, 0, 1
        elif op is OpClass.TENSOR:
            nsrc, ndst, lat = 6, 2, rng.choice([8, 16])
        elif op is OpClass.MEM:
            nsrc, ndst, lat = rng.randint(1, 2), rng.randint(0, 1), 4
        else:
            nsrc, ndst, lat = rng.randint(1, 3), 1, rng.choice([2, 4, 8])
        # Distinct registers per instruction keep fetch accounting exact even
        # in modes that collapse duplicate source slots.
        regs = rng.sample(range(40), nsrc + ndst)
        program.append(TraceInstruction(
            warp_id=0, static_id=i, opcode_class=op, exec_latency=lat,
            src_regs=tuple(regs[:nsrc]), dst_regs=tuple(regs[nsrc:]),
        ))
    return program
