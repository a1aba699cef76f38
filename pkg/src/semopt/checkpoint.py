"""Trajectory storage schedules for backward sweeps.

A schedule covers the whole forward+backward process over m steps:

* ``Store(slot, step)``   - copy the current state (must sit at `step`) into a slot;
* ``Restore(slot, step)`` - make the slot content the current state;
* ``Advance(start, stop)``- step the current state forward (costs stop-start);
* ``AdjointStep(step)``   - one backward update, requires the state at `step`;
* ``Done``                - terminator.

AdjointStep(m-1) ... AdjointStep(0) appear exactly once each, in decreasing
order, and at most `slots` snapshots are live at any time.  The prefix up to
and including the Advance that reaches step m is the forward phase; its
Store positions are handed to the forward integrator, so a sweep only pays
for the re-advances of the backward phase.

``plan_store_all`` keeps every step (no recomputation).  ``plan_binomial``
produces the recomputation-minimal schedule for a snapshot budget of `s`
slots (the slot pinning the initial state included), via the memoized
recurrence over the position of the first checkpoint; the same table drives
both the cost and the emitted actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from .errors import ScheduleError, ValidationError


@dataclass(frozen=True)
class Store:
    slot: int
    step: int


@dataclass(frozen=True)
class Restore:
    slot: int
    step: int


@dataclass(frozen=True)
class Advance:
    start: int
    stop: int


@dataclass(frozen=True)
class AdjointStep:
    step: int


@dataclass(frozen=True)
class Done:
    pass


@dataclass
class Schedule:
    n_steps: int
    slots: int
    actions: list
    recomputed: int
    forward_stores: dict = field(default_factory=dict)  # step -> slot
    backward_start: int = 0


def plan_store_all(m):
    """Store every state 0..m-1 during the forward pass; zero recomputation."""
    if m < 1:
        raise ValidationError("need at least one step")
    actions = []
    for n in range(m):
        actions.append(Store(n, n))
        actions.append(Advance(n, n + 1))
    backward_start = len(actions)
    for n in range(m - 1, -1, -1):
        actions.append(Restore(n, n))
        actions.append(AdjointStep(n))
    actions.append(Done())
    return Schedule(
        n_steps=m,
        slots=m,
        actions=actions,
        recomputed=0,
        forward_stores={n: n for n in range(m)},
        backward_start=backward_start,
    )


# -- optimal recomputation counts -------------------------------------------
#
# B(l, f): advances needed to adjoint a chain of l steps whose left state is
# checkpointed, with f free slots and the terminal adjoint seed already in
# hand.  T(l, f): same, except the chain end must first be reached once (the
# forward pass that produces the terminal state).


@lru_cache(maxsize=None)
def _cost_backward(l, f):
    if l <= 1:
        return 0
    best = l * (l - 1) // 2  # re-advance from the left for every target
    if f >= 1:
        for k in range(1, l):
            c = k + _cost_backward(l - k, f - 1) + _cost_backward(k, f)
            if c < best:
                best = c
    return best


@lru_cache(maxsize=None)
def _cost_total(l, f):
    if l == 0:
        return 0
    if l == 1:
        return 1
    best = l + _cost_backward(l, f)
    if f >= 1:
        for k in range(1, l):
            c = k + _cost_total(l - k, f - 1) + _cost_backward(k, f)
            if c < best:
                best = c
    return best


def binomial_cost(m, s):
    """Minimal forward evaluations (including the forward pass) for (m, s)."""
    if m < 1:
        raise ValidationError("need at least one step")
    if s < 1:
        raise ValidationError("snapshot budget must be >= 1 (s = 0 is unsupported)")
    return _cost_total(m, s - 1)


def _split_backward(l, f):
    """Optimal first-checkpoint offset for the backward problem, or None."""
    best, arg = l * (l - 1) // 2, None
    if f >= 1:
        for k in range(1, l):
            c = k + _cost_backward(l - k, f - 1) + _cost_backward(k, f)
            if c < best:
                best, arg = c, k
    return arg


def _split_total(l, f):
    best, arg = l + _cost_backward(l, f), None
    if f >= 1:
        for k in range(1, l):
            c = k + _cost_total(l - k, f - 1) + _cost_backward(k, f)
            if c < best:
                best, arg = c, k
    return arg


def _emit_backward(a, b, slot_a, free, actions):
    """Backward phase over [a, b): left state in slot_a, adjoint seed for b in hand."""
    l = b - a
    if l == 0:
        return
    if l == 1:
        actions.append(Restore(slot_a, a))
        actions.append(AdjointStep(a))
        return
    k = _split_backward(l, len(free))
    if k is None:
        for n in range(b - 1, a, -1):
            actions.append(Restore(slot_a, a))
            actions.append(Advance(a, n))
            actions.append(AdjointStep(n))
        actions.append(Restore(slot_a, a))
        actions.append(AdjointStep(a))
        return
    mid = a + k
    slot = free.pop()
    actions.append(Restore(slot_a, a))
    actions.append(Advance(a, mid))
    actions.append(Store(slot, mid))
    _emit_backward(mid, b, slot, free, actions)
    free.append(slot)
    _emit_backward(a, mid, slot_a, free, actions)


def _emit_total(a, b, slot_a, free, actions, stores):
    """Forward-then-backward over [a, b): reach b once, then adjoint down to a."""
    l = b - a
    if l == 1:
        actions.append(Advance(a, b))
        actions.append(Restore(slot_a, a))
        actions.append(AdjointStep(a))
        return
    k = _split_total(l, len(free))
    if k is None:
        actions.append(Advance(a, b))
        _emit_backward(a, b, slot_a, free, actions)
        return
    mid = a + k
    slot = free.pop()
    actions.append(Advance(a, mid))
    actions.append(Store(slot, mid))
    stores[mid] = slot
    _emit_total(mid, b, slot, free, actions, stores)
    free.append(slot)
    _emit_backward(a, mid, slot_a, free, actions)


def plan_binomial(m, s):
    """Optimal schedule for m steps under a budget of s snapshot slots."""
    if m < 1:
        raise ValidationError("need at least one step")
    if s < 1:
        raise ValidationError("snapshot budget must be >= 1 (s = 0 is unsupported)")
    if m <= s:
        return plan_store_all(m)
    actions = [Store(0, 0)]
    stores = {0: 0}
    free = list(range(s - 1, 0, -1))  # low slot ids first
    _emit_total(0, m, 0, free, actions, stores)
    actions.append(Done())
    backward_start = 0
    for i, act in enumerate(actions):
        if isinstance(act, Advance) and act.stop == m:
            backward_start = i + 1
            break
    return Schedule(
        n_steps=m,
        slots=s,
        actions=actions,
        recomputed=binomial_cost(m, s) - m,
        forward_stores=stores,
        backward_start=backward_start,
    )


@dataclass
class SimReport:
    forward_evals: int
    max_live: int
    adjoint_steps: int


def simulate_schedule(schedule, step_oracle=None):
    """Replay a schedule against a counting oracle, enforcing its invariants.

    `step_oracle(start, stop)` is called for every Advance (defaults to pure
    counting).  Raises ScheduleError, naming the offending action index, if
    availability, ordering, or the slot budget is violated.
    """
    m = schedule.n_steps
    current = 0  # schedules begin with the initial state in hand
    slots = {}
    max_live = 0
    evals = 0
    next_adj = m - 1
    done = False
    for idx, act in enumerate(schedule.actions):
        if done:
            raise ScheduleError(f"action {idx}: actions after Done")
        if isinstance(act, Store):
            if current != act.step:
                raise ScheduleError(
                    f"action {idx}: Store at step {act.step} but state is at {current}"
                )
            slots[act.slot] = act.step
            if len(slots) > schedule.slots:
                raise ScheduleError(f"action {idx}: more than {schedule.slots} snapshots live")
            max_live = max(max_live, len(slots))
        elif isinstance(act, Restore):
            if act.slot not in slots:
                raise ScheduleError(f"action {idx}: Restore from empty slot {act.slot}")
            if slots[act.slot] != act.step:
                raise ScheduleError(
                    f"action {idx}: slot {act.slot} holds step {slots[act.slot]}, "
                    f"not {act.step}"
                )
            current = act.step
        elif isinstance(act, Advance):
            if current != act.start:
                raise ScheduleError(
                    f"action {idx}: Advance from {act.start} but state is at {current}"
                )
            if not (act.start < act.stop <= m):
                raise ScheduleError(f"action {idx}: bad Advance range {act}")
            if step_oracle is not None:
                step_oracle(act.start, act.stop)
            evals += act.stop - act.start
            current = act.stop
        elif isinstance(act, AdjointStep):
            if act.step != next_adj:
                raise ScheduleError(
                    f"action {idx}: AdjointStep({act.step}) out of order, "
                    f"expected {next_adj}"
                )
            if current != act.step:
                raise ScheduleError(
                    f"action {idx}: AdjointStep({act.step}) but state is at {current}"
                )
            next_adj -= 1
        elif isinstance(act, Done):
            done = True
        else:
            raise ScheduleError(f"action {idx}: unknown action {act!r}")
    if next_adj != -1:
        raise ScheduleError(f"incomplete schedule: next adjoint step {next_adj}")
    return SimReport(forward_evals=evals, max_live=max_live, adjoint_steps=m)
