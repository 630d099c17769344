"""Dynamic tuning of the issue-delay threshold from interval IPC feedback.

Execution is cut into fixed-length intervals; at each boundary the controller
compares the interval's IPC with the previous one and walks a six-state
machine that climbs the threshold while IPC is insensitive, probes upward on
any large change, retreats when the probe lost performance, and then holds.
The relative IPC difference classifies as S (small, below the threshold
fraction) or L (large); retreat decisions additionally consult the sign of
the change.

States:
  1 ascend     S: +delta, stay.  L: +delta, go 3.
               (at the cap, a run of S steps moves to 2 instead)
  2 cool-down  S: stay.  L: go 1.
  3 probe      S: go 1.  L rise: +delta, stay.  L drop: -2*delta, go 4.
  4 descend    L (either sign): -delta, stay.  S: go 5.
  5 settle     unconditionally go 6.
  6 hold       S: stay.  L: +delta, go 3.

Descending on any large change, not only on drops, is what lets the
controller walk back down a steep region where every downward step *raises*
IPC; it stops as soon as IPC flattens, which is the knee.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

EPSILON = 1e-9

SMALL = "S"
LARGE = "L"


@dataclass(frozen=True)
class AdaptiveState:
    fsm_state: int = 1
    sthld: int = 0
    prev_ipc: float | None = None
    interval_len: int = 10000
    delta: int = 1
    small_threshold: float = 0.02
    cap: int = 64
    cap_patience: int = 3
    s_run_at_cap: int = 0


def classify(ipc_now: float, ipc_prev: float, small_threshold: float) -> str:
    """S below the relative-difference threshold, L at or above it."""
    rel = abs(ipc_now - ipc_prev) / max(ipc_prev, EPSILON)
    return LARGE if rel >= small_threshold else SMALL


def interval_step(state: AdaptiveState, ipc_now: float) -> AdaptiveState:
    """One boundary update: classify, transition, clamp, store the IPC."""
    if state.prev_ipc is None:
        return replace(state, prev_ipc=ipc_now)
    label = classify(ipc_now, state.prev_ipc, state.small_threshold)
    rose = ipc_now > state.prev_ipc
    s, d = state.fsm_state, state.delta
    sthld, nxt, s_run = state.sthld, s, state.s_run_at_cap

    if s == 1:
        if label == SMALL:
            if sthld >= state.cap:
                s_run += 1
                if s_run >= state.cap_patience:
                    nxt = 2
            else:
                sthld += d
                s_run = 0
        else:
            sthld += d
            nxt, s_run = 3, 0
    elif s == 2:
        if label == LARGE:
            nxt = 1
    elif s == 3:
        if label == SMALL:
            nxt = 1
        elif rose:
            sthld += d
        else:
            sthld -= 2 * d
            nxt = 4
    elif s == 4:
        if label == LARGE:
            sthld -= d
        else:
            nxt = 5
    elif s == 5:
        nxt = 6
    elif s == 6:
        if label == LARGE:
            sthld += d
            nxt = 3
    else:
        raise AssertionError(f"unknown FSM state {s}")

    sthld = min(max(sthld, 0), state.cap)
    return replace(state, fsm_state=nxt, sthld=sthld,
                   prev_ipc=ipc_now, s_run_at_cap=s_run)


# ---------------------------------------------------------------------------
# Synthetic IPC curves for closed-loop testing

BASE_IPC = 1.0
STEEP_SLOPE = 0.15
IPC_FLOOR = 0.05


def knee_ipc(sthld: int, knee: int, base: float = BASE_IPC) -> float:
    """Flat at `base` up to the knee, then steeply decreasing."""
    if sthld <= knee:
        return base
    return max(base * (1.0 - STEEP_SLOPE * (sthld - knee)), base * IPC_FLOOR)


@dataclass(frozen=True)
class KneeCurve:
    knee: int
    base: float = BASE_IPC

    def ipc(self, sthld: int, interval_index: int) -> float:
        return knee_ipc(sthld, self.knee, self.base)


@dataclass(frozen=True)
class PhaseShiftCurve:
    """Knee moves from k1 to k2 at interval `shift_at`; the new phase also
    runs at a different flat level so the change registers as a large
    difference wherever the threshold currently sits."""
    k1: int
    k2: int
    shift_at: int
    base1: float = BASE_IPC
    base2: float = 1.3 * BASE_IPC

    def ipc(self, sthld: int, interval_index: int) -> float:
        if interval_index < self.shift_at:
            return knee_ipc(sthld, self.k1, self.base1)
        return knee_ipc(sthld, self.k2, self.base2)


def synthetic_curve_oracle(curve, sthld: int, interval_index: int) -> float:
    return curve.ipc(sthld, interval_index)


def run_closed_loop(curve, intervals: int,
                    state: AdaptiveState | None = None) -> list[AdaptiveState]:
    """Drive the FSM against a curve oracle; returns the state after each
    boundary (the IPC fed at boundary i was measured at the sthld in force
    during interval i)."""
    state = state or AdaptiveState()
    history = []
    for i in range(intervals):
        ipc = synthetic_curve_oracle(curve, state.sthld, i)
        state = interval_step(state, ipc)
        history.append(state)
    return history
