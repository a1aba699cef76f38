"""Concrete experiment definitions and analytic references.

Four problem kinds are wired up:

* ``burgers1d``  - viscous Burgers on [-2, 2] with homogeneous Dirichlet
  ends, the Cole-Hopf analytic solution, and the Gaussian-perturbed guess;
* ``advdiff1d``  - linear advection-diffusion on the periodic unit interval,
  a five-mode random-amplitude reference (convection dominated);
* ``burgers3d``  - periodic 3D Burgers on [-2, 2]^3 with the product-of-waves
  initial condition and the diffusion-decay target;
* ``diffusion1d``- pure diffusion on the periodic unit interval (two-mode
  analytic solution), mostly exercised by solver tests.

An :class:`AssimilationProblem` bundles grid, operator, time stepper, target,
and checkpoint policy; ``evaluate`` performs one forward integration plus one
adjoint sweep and returns (J, dJ/du0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adjoint, checkpoint, timeloop
from .basis import legendre
from .errors import ValidationError
from .grid import DIRICHLET0, PERIODIC, Axis, Grid, grid_1d, grid_3d
from .ops import BURGERS, LINEAR, NONE, PdeCoefficients, SemOperator


# -- analytic references -----------------------------------------------------


def burgers1d_exact(x, t, nu):
    """Cole-Hopf solution u = 2 nu pi sin(pi x) e^{-nu t pi^2} / (2 + e^{-nu t pi^2} cos(pi x))."""
    x = np.asarray(x, dtype=float)
    decay = np.exp(-nu * t * np.pi**2)
    return 2.0 * nu * np.pi * np.sin(np.pi * x) * decay / (2.0 + decay * np.cos(np.pi * x))


def burgers1d_guess(x, nu, center=2.0):
    """Exact initial condition perturbed by the Gaussian e^{-4 (x - center)^2}."""
    x = np.asarray(x, dtype=float)
    return burgers1d_exact(x, 0.0, nu) + np.exp(-4.0 * (x - center) ** 2)


def advdiff_coefficients(seed, n_modes=5):
    """Mode amplitudes drawn once per seed from U[0.9, 1]."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.9, 1.0, n_modes)


def advdiff_reference(x, t, coeffs, nu=1e-5, speed=0.1):
    """Sum of decaying travelling waves sum_j a_j sin(2 pi j (x - a t)) e^{-4 nu pi^2 j^2 t}."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for j, aj in enumerate(np.atleast_1d(coeffs), start=1):
        out += aj * np.sin(2.0 * np.pi * j * (x - speed * t)) * np.exp(
            -nu * 4.0 * np.pi**2 * j**2 * t
        )
    return out


def burgers3d_initial(x1, x2, x3):
    """Product-of-waves initial velocity; cyclic in the three components."""
    s, c = np.sin, np.cos
    h = 0.5 * np.pi
    u1 = s(h * x1) * c(h * x2) * c(h * x3)
    u2 = s(h * x2) * c(h * x3) * c(h * x1)
    u3 = s(h * x3) * c(h * x1) * c(h * x2)
    return u1, u2, u3


def burgers3d_reference(grid, t, nu):
    """Assimilation target: the initial condition pre-multiplied by e^{-nu t}."""
    ic = grid.evaluate(burgers3d_initial)
    return np.exp(-nu * t) * ic


def diffusion1d_exact(x, t, nu):
    """Two-mode heat solution sin(2 pi x) e^{-4 pi^2 nu t} + cos(4 pi x) e^{-16 pi^2 nu t}."""
    x = np.asarray(x, dtype=float)
    return np.sin(2 * np.pi * x) * np.exp(-nu * 4 * np.pi**2 * t) + np.cos(
        4 * np.pi * x
    ) * np.exp(-nu * 16 * np.pi**2 * t)


# -- a-posteriori spectral error estimate -------------------------------------


@dataclass
class SpectralErrorReport:
    """Per-element truncation-error estimates from the Legendre coefficient decay."""

    eps: np.ndarray            # estimated error per element
    sigma: np.ndarray          # fitted decay rate per element
    scale: np.ndarray          # fitted scaling factor c per element
    a_top: np.ndarray          # fitted leading coefficient per element
    resolved: np.ndarray       # True where the spectrum sits at round-off
    under_resolved: np.ndarray  # True where the fitted decay is non-positive

    RESOLVED_FLOOR = 1e-30


def spectral_error_estimate(values, grid):
    """Estimate the per-element truncation error eps_e = a_N^2 / ((2N+2)/2).

    Nodal values are projected onto Legendre modes element by element (the
    GLL discrete transform); a least-squares fit a_k ~ c e^{-sigma k} over
    the top half of the spectrum extrapolates the leading coefficient a_N.
    Elements whose fitted decay is non-positive are flagged under-resolved.
    """
    if grid.dim != 1:
        raise ValidationError("spectral error estimate expects a 1D grid")
    ax = grid.axes[0]
    n = ax.degree
    if n < 5:
        raise ValidationError("need degree >= 5 to fit the coefficient decay")
    b = grid.bases[0]
    vand = np.empty((n + 1, n + 1))
    for k in range(n + 1):
        vand[:, k] = legendre(k, b.nodes)[0]
    # Discrete norms: 2/(2k+1) except the top mode, where GLL quadrature
    # yields 2/N (makes the transform exactly invertible).
    norms = 2.0 / (2.0 * np.arange(n + 1) + 1.0)
    norms[n] = 2.0 / n
    local = grid.scatter(grid.mask(values) if grid.has_mask else values)[0]
    coeffs = (local * b.weights) @ vand / norms

    lo = min(int(np.ceil(n / 2)), n - 3)
    ks = np.arange(lo, n + 1)
    nelem = coeffs.shape[0]
    eps = np.zeros(nelem)
    sigma = np.zeros(nelem)
    scale = np.zeros(nelem)
    a_top = np.zeros(nelem)
    resolved = np.zeros(nelem, dtype=bool)
    under = np.zeros(nelem, dtype=bool)
    field_scale = max(float(np.max(np.abs(coeffs))), 1.0)
    for e in range(nelem):
        tail = np.abs(coeffs[e, lo:])
        if np.max(tail) <= SpectralErrorReport.RESOLVED_FLOOR * field_scale:
            resolved[e] = True
            continue
        logs = np.log(np.maximum(tail, 1e-300))
        slope, intercept = np.polyfit(ks, logs, 1)
        sigma[e] = -slope
        scale[e] = np.exp(intercept)
        a_top[e] = scale[e] * np.exp(-sigma[e] * n)
        eps[e] = a_top[e] ** 2 / ((2.0 * n + 2.0) / 2.0)
        if sigma[e] <= 0.0:
            under[e] = True
    return SpectralErrorReport(eps=eps, sigma=sigma, scale=scale, a_top=a_top,
                               resolved=resolved, under_resolved=under)


# -- assimilation problems -----------------------------------------------------


@dataclass
class AssimilationProblem:
    """Terminal-misfit data assimilation over initial conditions."""

    name: str
    grid: Grid
    op: SemOperator
    ts: timeloop.TsConfig
    u_target: np.ndarray
    u_guess: np.ndarray
    u_exact_ic: np.ndarray | None = None
    exact_solution: object = None  # callable (x..., t) on the lattice, or None
    checkpoint_slots: int | None = None  # None -> store-all

    def schedule_for(self, m):
        if self.checkpoint_slots is None:
            return checkpoint.plan_store_all(m)
        return checkpoint.plan_binomial(m, self.checkpoint_slots)

    def forward(self, u0, store="all", keep_log=False):
        return timeloop.integrate(self.op, u0, self.ts, store_steps=store,
                                  keep_log=keep_log)

    def evaluate(self, u0):
        """One objective+gradient evaluation: forward run plus adjoint sweep."""
        if self.ts.adaptive:
            fwd = timeloop.integrate(self.op, u0, self.ts, store_steps=None)
            sched = self.schedule_for(fwd.n_steps)
        else:
            m = timeloop.count_steps(self.ts)
            sched = self.schedule_for(m)
            fwd = timeloop.integrate(self.op, u0, self.ts,
                                     store_steps=sched.forward_stores.keys())
            if fwd.n_steps != m:  # a step-failure retry changed the grid in time
                sched = self.schedule_for(fwd.n_steps)
        j, lam = adjoint.terminal_condition(self.grid, fwd.u_final, self.u_target)
        g = adjoint.sweep(self.op, self.ts, fwd, sched, lam)
        self.last_forward = fwd
        return j, g

    def ic_error(self, u0):
        """Quadrature L2 distance to the exact initial condition."""
        if self.u_exact_ic is None:
            raise ValidationError(f"problem {self.name} has no exact initial condition")
        return self.grid.l2_norm(u0 - self.u_exact_ic)


def _ts(scheme, horizon, steps, dt, adaptive, **kw):
    if dt is None:
        dt = horizon / steps
    return timeloop.TsConfig(scheme=scheme, t0=0.0, t_end=horizon, dt=dt,
                             adaptive=adaptive, **kw)


def burgers1d_problem(elements=5, degree=8, nu=0.001, horizon=4.0, steps=400,
                      dt=None, scheme="rk3", adaptive=False, guess_center=2.0,
                      checkpoint_slots=None, **ts_kw):
    grid = grid_1d(-2.0, 2.0, elements, degree, DIRICHLET0)
    op = SemOperator(grid, PdeCoefficients(nu, BURGERS))
    x = grid.node_coordinates()[0]
    prob = AssimilationProblem(
        name="burgers1d",
        grid=grid,
        op=op,
        ts=_ts(scheme, horizon, steps, dt, adaptive, **ts_kw),
        u_target=grid.mask(burgers1d_exact(x, horizon, nu)),
        u_guess=grid.mask(burgers1d_guess(x, nu, guess_center)),
        u_exact_ic=grid.mask(burgers1d_exact(x, 0.0, nu)),
        exact_solution=lambda x, t, nu=nu: burgers1d_exact(x, t, nu),
        checkpoint_slots=checkpoint_slots,
    )
    return prob


def advdiff1d_problem(elements=8, degree=8, nu=1e-5, speed=0.1, horizon=0.01,
                      steps=100, dt=None, scheme="rk3", adaptive=False,
                      seed=0, guess_seed=1, n_modes=5, checkpoint_slots=None,
                      **ts_kw):
    grid = grid_1d(0.0, 1.0, elements, degree, PERIODIC)
    op = SemOperator(grid, PdeCoefficients(nu, LINEAR, speed=[speed]))
    x = grid.node_coordinates()[0]
    coeffs = advdiff_coefficients(seed, n_modes)
    guess_coeffs = advdiff_coefficients(guess_seed, n_modes)
    return AssimilationProblem(
        name="advdiff1d",
        grid=grid,
        op=op,
        ts=_ts(scheme, horizon, steps, dt, adaptive, **ts_kw),
        u_target=advdiff_reference(x, horizon, coeffs, nu, speed),
        u_guess=advdiff_reference(x, 0.0, guess_coeffs, nu, speed),
        u_exact_ic=advdiff_reference(x, 0.0, coeffs, nu, speed),
        exact_solution=lambda x, t, c=coeffs, nu=nu, a=speed: advdiff_reference(x, t, c, nu, a),
        checkpoint_slots=checkpoint_slots,
    )


def burgers3d_problem(elements=4, degree=8, nu=0.001, horizon=0.1, steps=50,
                      dt=None, scheme="rk3", adaptive=False,
                      checkpoint_slots=None, **ts_kw):
    grid = grid_3d((-2.0, 2.0), elements, degree)
    op = SemOperator(grid, PdeCoefficients(nu, BURGERS))
    ic = grid.evaluate(burgers3d_initial)
    return AssimilationProblem(
        name="burgers3d",
        grid=grid,
        op=op,
        ts=_ts(scheme, horizon, steps, dt, adaptive, **ts_kw),
        u_target=np.exp(-nu * horizon) * ic,
        u_guess=ic,
        u_exact_ic=None,
        exact_solution=None,
        checkpoint_slots=checkpoint_slots,
    )


def diffusion1d_problem(elements=5, degree=8, nu=0.001, horizon=1.0, steps=100,
                        dt=None, scheme="rk3", adaptive=False,
                        checkpoint_slots=None, **ts_kw):
    grid = grid_1d(0.0, 1.0, elements, degree, PERIODIC)
    op = SemOperator(grid, PdeCoefficients(nu, NONE))
    x = grid.node_coordinates()[0]
    return AssimilationProblem(
        name="diffusion1d",
        grid=grid,
        op=op,
        ts=_ts(scheme, horizon, steps, dt, adaptive, **ts_kw),
        u_target=diffusion1d_exact(x, horizon, nu),
        u_guess=diffusion1d_exact(x, 0.0, nu),
        u_exact_ic=diffusion1d_exact(x, 0.0, nu),
        exact_solution=lambda x, t, nu=nu: diffusion1d_exact(x, t, nu),
        checkpoint_slots=checkpoint_slots,
    )


PROBLEM_BUILDERS = {
    "burgers1d": burgers1d_problem,
    "advdiff1d": advdiff1d_problem,
    "burgers3d": burgers3d_problem,
    "diffusion1d": diffusion1d_problem,
}


def make_problem(kind, **params):
    try:
        builder = PROBLEM_BUILDERS[kind]
    except KeyError:
        raise ValidationError(
            f"unknown problem {kind!r}; choose from {sorted(PROBLEM_BUILDERS)}"
        ) from None
    return builder(**params)
