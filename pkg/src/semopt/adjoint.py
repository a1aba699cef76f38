"""Discrete-adjoint backward sweeps and the terminal-misfit gradient.

The adjoint variable carries Euclidean derivatives throughout: the terminal
seed is lambda_N = 2 M (u_N - u_d), each backward step applies the exact
transpose of the forward step map in the ODE form f = M^{-1} P, and the
returned lambda_0 is directly dJ/du_0 for

    J(u_0) = (u_N - u_d)^T M (u_N - u_d).

Backward steps per scheme:

* Euler:  lambda_n = lambda_{n+1} + dt J^T(u_n) lambda_{n+1}
* Kutta-3: stage adjoints l_i = dt J^T(U_i)(b_i lambda + sum_{j>i} a_ji l_j)
  with the stage states recomputed from the checkpointed u_n;
* Crank-Nicolson: solve (I - dt/2 J(u_{n+1}))^T mu = lambda_{n+1} (GMRES,
  transpose applications only - no Newton iterations), then
  lambda_n = mu + dt/2 J^T(u_n) mu.

`sweep` executes a checkpoint schedule: restores and re-advances recorded
states as directed, and replays the recorded dt sequence verbatim.
"""

from __future__ import annotations

import numpy as np

from . import timeloop
from .checkpoint import Advance, AdjointStep, Done, Restore, Store
from .errors import CheckpointError, ValidationError
from .timeloop import RK3_A, RK3_B, _gmres_solve


def terminal_condition(grid, u_final, u_ref):
    """Objective value and adjoint seed of the terminal misfit.

    Returns (J, lambda_N) with J = d^T M d and lambda_N = 2 M d for
    d = u_final - u_ref.
    """
    d = np.asarray(u_final, dtype=float) - np.asarray(u_ref, dtype=float)
    if d.shape != (grid.nglobal,):
        raise ValidationError(
            f"misfit fields have shape {d.shape}, expected ({grid.nglobal},)"
        )
    md = grid.mass() * d
    j = float(np.dot(d, md))
    lam = 2.0 * md
    return j, grid.mask(lam) if grid.has_mask else lam


def adjoint_step_euler(op, u_n, lam, t, dt):
    return lam + dt * op.apply_jacobian_transpose(u_n, lam)


def adjoint_step_rk3(op, u_n, lam, t, dt):
    """Transpose of one Kutta-3 step; stage states recomputed from u_n."""
    u1, u2, u3 = timeloop.rk3_stages(op, u_n, t, dt)
    a21, (a31, a32) = RK3_A[1][0], RK3_A[2]
    l3 = dt * op.apply_jacobian_transpose(u3, RK3_B[2] * lam)
    l2 = dt * op.apply_jacobian_transpose(u2, RK3_B[1] * lam + a32 * l3)
    l1 = dt * op.apply_jacobian_transpose(u1, RK3_B[0] * lam + a21 * l2 + a31 * l3)
    return lam + l1 + l2 + l3


def adjoint_step_cn(op, u_n, u_np1, lam, t, dt, cfg, stats=None):
    def matvec(v):
        return v - 0.5 * dt * op.apply_jacobian_transpose(u_np1, v)

    mu = _gmres_solve(matvec, lam, cfg, stats)
    return mu + 0.5 * dt * op.apply_jacobian_transpose(u_n, mu)


def sweep(op, cfg, fwd, schedule, lam_terminal):
    """Run the backward sweep over a recorded forward trajectory.

    `schedule` must cover fwd.n_steps steps.  If the forward run stored all
    of the schedule's forward-phase checkpoints, only the backward phase is
    executed; otherwise the whole schedule is replayed from the initial
    state (the adaptive-dt path).  Identical gradients are produced by any
    valid schedule, since re-advanced states repeat the recorded arithmetic.
    """
    m = fwd.n_steps
    if schedule.n_steps != m:
        raise ValidationError(
            f"schedule covers {schedule.n_steps} steps, trajectory has {m}"
        )
    lam = np.array(lam_terminal, dtype=float, copy=True)
    if m == 0:
        return lam
    ts, dts = fwd.ts, fwd.dts
    stats = {"newton_iters": 0, "gmres_iters": 0, "recomputed": 0}

    if cfg.scheme == "euler":
        def adj_step(u_n, u_np1, lam, n):
            return adjoint_step_euler(op, u_n, lam, ts[n], dts[n])
    elif cfg.scheme == "rk3":
        def adj_step(u_n, u_np1, lam, n):
            return adjoint_step_rk3(op, u_n, lam, ts[n], dts[n])
    else:
        def adj_step(u_n, u_np1, lam, n):
            return adjoint_step_cn(op, u_n, u_np1, lam, ts[n], dts[n], cfg, stats)

    slots = {}
    preloaded = True
    for step, slot in schedule.forward_stores.items():
        if step in fwd.snapshots:
            slots[slot] = (step, fwd.snapshots[step])
        else:
            preloaded = False
    if preloaded:
        actions = schedule.actions[schedule.backward_start:]
        current = None
    else:
        if 0 not in fwd.snapshots:
            raise CheckpointError("trajectory does not retain the initial state")
        slots = {}
        actions = schedule.actions
        current = (0, fwd.snapshots[0])

    succ = (m, fwd.u_final)
    next_adj = m - 1
    for act in actions:
        if isinstance(act, Restore):
            if act.slot not in slots or slots[act.slot][0] != act.step:
                raise CheckpointError(f"restore of step {act.step}: slot not populated")
            current = slots[act.slot]
        elif isinstance(act, Store):
            if current is None or current[0] != act.step:
                raise CheckpointError(f"store at step {act.step}: state not in hand")
            slots[act.slot] = current
        elif isinstance(act, Advance):
            if current is None or current[0] != act.start:
                raise CheckpointError(f"advance from step {act.start}: state not in hand")
            u = current[1]
            for n in range(act.start, act.stop):
                u = timeloop.step_forward(op, u, ts[n], dts[n], cfg, stats)
            stats["recomputed"] += act.stop - act.start
            current = (act.stop, u)
        elif isinstance(act, AdjointStep):
            n = act.step
            if n != next_adj:
                raise CheckpointError(f"adjoint step {n} out of order")
            if current is None or current[0] != n:
                raise CheckpointError(f"adjoint step {n}: forward state missing")
            if succ[0] == n + 1:
                u_np1 = succ[1]
            elif n + 1 == m:
                u_np1 = fwd.u_final
            else:
                raise CheckpointError(f"adjoint step {n}: successor state missing")
            lam = adj_step(current[1], u_np1, lam, n)
            succ = current
            next_adj -= 1
        elif isinstance(act, Done):
            break
    if next_adj != -1:
        raise CheckpointError(f"sweep incomplete: stopped before adjoint step {next_adj}")
    op.last_sweep_stats = stats
    return lam


def gradient(op, cfg, fwd, schedule, u_ref):
    """Convenience wrapper: terminal condition plus backward sweep."""
    j, lam = terminal_condition(op.grid, fwd.u_final, u_ref)
    return j, sweep(op, cfg, fwd, schedule, lam)
