"""Forward time integration with trajectory recording.

Schemes: explicit Euler, the classic three-stage Kutta method (third order,
tableau c = (0, 1/2, 1), a21 = 1/2, a31 = -1, a32 = 2, b = (1/6, 2/3, 1/6))
with the embedded second-order midpoint weights bh = (0, 1, 0) for step-size
control, and Crank-Nicolson solved by full Newton with matrix-free GMRES on
(I - dt/2 J).

`integrate` records every accepted step; the final step is clipped so the
terminal time is hit exactly.  Storage is routed through a `store_steps`
selector so checkpoint schedules can decide which states survive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import IntegrationError, NumericFailure, StepFailure, ValidationError

RK3_A = ((), (0.5,), (-1.0, 2.0))
RK3_B = (1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0)
RK3_BHAT = (0.0, 1.0, 0.0)
RK3_EMBEDDED_ORDER = 2

_RETRY_HALVINGS = 3


@dataclass
class TsConfig:
    """Time-stepper configuration.

    `tol_a`/`tol_r` and the alpha/beta bounds drive the embedded-pair
    controller (adaptive runs only); the Newton/GMRES settings apply to
    Crank-Nicolson steps.
    """

    scheme: str = "rk3"
    t0: float = 0.0
    t_end: float = 1.0
    dt: float = 0.01
    adaptive: bool = False
    tol_a: float = 1e-8
    tol_r: float = 1e-8
    alpha_min: float = 0.1
    alpha_max: float = 5.0
    beta: float = 0.9
    max_steps: int = 1_000_000
    newton_tol: float = 1e-10
    newton_max: int = 25
    gmres_tol: float = 1e-10
    gmres_max: int = 200
    gmres_restart: int = 30
    wlte_form: str = "rms"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scheme not in ("euler", "rk3", "cn"):
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        if not self.t_end > self.t0:
            raise ValidationError("t_end must exceed t0")
        if not self.dt > 0.0:
            raise ValidationError("dt must be positive")
        if not (0.0 < self.alpha_min < 1.0 < self.alpha_max):
            raise ValidationError("need 0 < alpha_min < 1 < alpha_max")
        if not (0.0 < self.beta < 1.0):
            raise ValidationError("need 0 < beta < 1")
        if self.adaptive and self.scheme != "rk3":
            raise ValidationError("adaptive stepping requires the embedded rk3 pair")
        if self.wlte_form not in ("rms", "max"):
            raise ValidationError(f"unknown wlte form {self.wlte_form!r}")


@dataclass
class ForwardResult:
    """Recorded trajectory of one forward integration.

    `ts[n]` is the time of state n (ts[0] = t0, ts[-1] = t_end exactly);
    `dts[n]` is the accepted step from n to n+1.  `snapshots` maps step
    indices to stored states, as requested through `store_steps`.
    """

    ts: np.ndarray
    dts: np.ndarray
    snapshots: dict
    u_final: np.ndarray
    stats: dict = field(default_factory=dict)
    step_log: list = field(default_factory=list)

    @property
    def n_steps(self):
        return len(self.dts)


def _check_state(u, what="state"):
    if not np.isfinite(u).all():
        raise StepFailure(f"{what} contains NaN/Inf")
    return u


def step_euler(op, u, t, dt):
    """One forward-Euler step u + dt f(u)."""
    return _check_state(u + dt * op.apply_rhs(u))


def rk3_stages(op, u, t, dt):
    """Stage states (U1, U2, U3) of the Kutta-3 step from (u, t)."""
    k1 = op.apply_rhs(u)
    u2 = u + (dt * RK3_A[1][0]) * k1
    k2 = op.apply_rhs(u2)
    u3 = u + dt * (RK3_A[2][0] * k1 + RK3_A[2][1] * k2)
    return u, u2, u3


def step_rk3(op, u, t, dt):
    """One Kutta-3 step; returns (u_new, u_embedded, error_estimate)."""
    k1 = op.apply_rhs(u)
    u2 = u + (dt * RK3_A[1][0]) * k1
    k2 = op.apply_rhs(u2)
    u3 = u + dt * (RK3_A[2][0] * k1 + RK3_A[2][1] * k2)
    k3 = op.apply_rhs(u3)
    u_new = u + dt * (RK3_B[0] * k1 + RK3_B[1] * k2 + RK3_B[2] * k3)
    u_hat = u + dt * k2  # embedded midpoint (order 2)
    _check_state(u_new)
    return u_new, u_hat, u_new - u_hat


def _gmres_solve(matvec, b, cfg, stats=None):
    n = b.size
    restart = max(1, min(cfg.gmres_restart, n))
    maxiter = max(1, math.ceil(cfg.gmres_max / restart))
    iters = [0]

    def counted(v):
        iters[0] += 1
        return matvec(v)

    a = LinearOperator((n, n), matvec=counted, dtype=float)
    x, info = gmres(a, b, rtol=cfg.gmres_tol, atol=0.0, restart=restart,
                    maxiter=maxiter)
    if stats is not None:
        stats["gmres_iters"] = stats.get("gmres_iters", 0) + iters[0]
    if info != 0:
        raise StepFailure(
            f"GMRES did not converge (info={info})",
            diagnostics={"gmres_info": info, "gmres_iters": iters[0]},
        )
    return x


def step_cn(op, u, t, dt, cfg, stats=None):
    """One Crank-Nicolson step: solve v - u - dt/2 (f(u) + f(v)) = 0.

    Full Newton with the Jacobian re-evaluated each iteration;
    unpreconditioned GMRES on (I - dt/2 J(v)).
    """
    fu = op.apply_rhs(u)
    v = u.copy()
    tol = cfg.newton_tol * (1.0 + float(np.linalg.norm(u)))
    iters = 0
    while True:
        r = v - u - 0.5 * dt * (fu + op.apply_rhs(v))
        _check_state(r, "residual")
        if np.linalg.norm(r) <= tol:
            break
        if iters >= cfg.newton_max:
            raise StepFailure(
                f"Newton stalled after {iters} iterations (|r|={np.linalg.norm(r):.3e})",
                diagnostics={"newton_iters": iters},
            )
        vk = v

        def matvec(w, vk=vk):
            return w - 0.5 * dt * op.apply_jacobian(vk, w)

        delta = _gmres_solve(matvec, -r, cfg, stats)
        v = v + delta
        iters += 1
    if stats is not None:
        stats["newton_iters"] = stats.get("newton_iters", 0) + iters
    return v


def step_forward(op, u, t, dt, cfg, stats=None):
    """Dispatch one step of the configured scheme, returning the new state."""
    if cfg.scheme == "euler":
        return step_euler(op, u, t, dt)
    if cfg.scheme == "rk3":
        return step_rk3(op, u, t, dt)[0]
    return step_cn(op, u, t, dt, cfg, stats)


def controller(err, u_new, u_hat, dt_old, cfg):
    """Embedded-pair step-size controller.

    Builds per-component tolerances Tol_i = tol_a + max(|u_i|, |uh_i|) tol_r,
    reduces them to the weighted local truncation error (RMS or max form),
    accepts iff wlte <= 1, and proposes
    dt_new = dt_old * min(alpha_max, max(alpha_min, beta (1/wlte)^{1/(p+1)}))
    with embedded order p = 2.
    """
    tol = cfg.tol_a + np.maximum(np.abs(u_new), np.abs(u_hat)) * cfg.tol_r
    ratios = np.abs(err) / tol
    if cfg.wlte_form == "rms":
        wlte = float(np.mean(np.sqrt(ratios)))
    else:
        wlte = float(np.max(ratios))
    if wlte == 0.0:
        return True, cfg.alpha_max * dt_old, wlte
    factor = min(cfg.alpha_max,
                 max(cfg.alpha_min,
                     cfg.beta * (1.0 / wlte) ** (1.0 / (RK3_EMBEDDED_ORDER + 1))))
    return wlte <= 1.0, factor * dt_old, wlte


def count_steps(cfg):
    """Number of steps a fixed-dt run will take (mirrors the clipping rule)."""
    if cfg.adaptive:
        raise ValidationError("step count of an adaptive run is not known a priori")
    tiny = 1e-9 * cfg.dt
    t, n = cfg.t0, 0
    while t < cfg.t_end - tiny:
        remaining = cfg.t_end - t
        clipped = remaining - cfg.dt <= tiny
        t = cfg.t_end if clipped else t + cfg.dt
        n += 1
        if n > cfg.max_steps:
            raise ValidationError(f"fixed-dt run exceeds max_steps={cfg.max_steps}")
    return n


def integrate(op, u0, cfg, store_steps="all", keep_log=False):
    """Integrate from t0 to t_end, recording the accepted trajectory.

    `store_steps` selects which states enter `snapshots`: "all", an iterable
    of step indices, or None (store only step 0).  Rejected adaptive steps
    are not recorded.  Step failures retry with a halved dt up to three
    times, then abort.
    """
    u = np.asarray(u0, dtype=float)
    if not np.isfinite(u).all():
        raise NumericFailure("initial state contains NaN/Inf")
    if store_steps == "all":
        want = None
        store_all = True
    else:
        store_all = False
        want = {0} if store_steps is None else set(int(s) for s in store_steps)

    stats = {"steps": 0, "rejects": 0, "retries": 0,
             "newton_iters": 0, "gmres_iters": 0}
    snapshots = {}
    if store_all or 0 in want:
        snapshots[0] = u.copy()
    ts = [cfg.t0]
    dts = []
    log = [] if keep_log else None

    t = cfg.t0
    dt_next = cfg.dt
    tiny = 1e-9 * cfg.dt
    n = 0
    attempts = 0
    while t < cfg.t_end - tiny:
        attempts += 1
        if attempts > cfg.max_steps:
            raise IntegrationError(
                f"max_steps={cfg.max_steps} exceeded at t={t:.6g}",
                diagnostics={"t": t, "steps": n, "stats": stats},
            )
        remaining = cfg.t_end - t
        clipped = remaining - dt_next <= tiny
        dt = remaining if clipped else dt_next

        result = None
        for retry in range(_RETRY_HALVINGS + 1):
            try:
                if cfg.scheme == "rk3":
                    result = step_rk3(op, u, t, dt)
                elif cfg.scheme == "euler":
                    result = step_euler(op, u, t, dt), None, None
                else:
                    result = step_cn(op, u, t, dt, cfg, stats), None, None
                break
            except StepFailure:
                stats["retries"] += 1
                if retry == _RETRY_HALVINGS:
                    raise
                dt *= 0.5
                clipped = False

        u_new, u_hat, err = result
        wlte = 0.0
        if cfg.adaptive:
            accept, dt_prop, wlte = controller(err, u_new, u_hat, dt, cfg)
            if not accept:
                stats["rejects"] += 1
                if keep_log:
                    log.append((n, t, dt, wlte, 0))
                dt_next = dt_prop
                continue
            dt_next = dt_prop
        elif dt != dt_next and not clipped:
            dt_next = dt  # keep the halved step after a retry

        n += 1
        t = cfg.t_end if clipped else t + dt
        dts.append(dt)
        ts.append(t)
        u = u_new
        stats["steps"] = n
        if store_all or n in want:
            snapshots[n] = u.copy()
        if keep_log:
            log.append((n, t, dt, wlte, 1))

    return ForwardResult(
        ts=np.asarray(ts),
        dts=np.asarray(dts),
        snapshots=snapshots,
        u_final=u,
        stats=stats,
        step_log=log if keep_log else [],
    )
