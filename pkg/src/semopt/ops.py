"""Matrix-free right-hand side, Jacobian, and Jacobian transpose.

The semi-discrete system is the ODE form

    du/dt = f(u) = M^{-1} Q^T P_e(Q u),

where Q is the scatter map and P_e the element-local weak operator

    P_e(u)_i = -nu * sum_j K_j[u_i]  -  sum_j adv_j o Dw_j[u_i],

with K_j the stiffness contraction along direction j (mass-weighted on the
other directions), Dw_j the quadrature-weighted derivative diag(rho) D along
direction j (likewise mass-weighted transversally), and adv_j the advection
speed: u_j for Burgers, the constant a_j for linear advection, absent for
pure diffusion.  The corresponding linearization and its exact algebraic
transpose are

    J(u) w|_i   = -nu sum_j K_j[w_i] - sum_j (w_j o Dw_j[u_i] + u_j o Dw_j[w_i])
    J(u)^T z|_i = -nu sum_j K_j[z_i] - sum_j (z_j o Dw_i[u_j] + Dw_j^T[u_j o z_i])

and the global transpose of the ODE form is Q^T J_e^T Q M^{-1}.

Every directional operator is applied by one small dense matrix-matrix
product along its axis (batched over elements), so nothing larger than
(N+1) x (N+1) per direction is ever materialized and the 3D apply cost is
O(N^{d+1}) per element instead of O(N^{2d}).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericFailure, ValidationError

BURGERS = "burgers"
LINEAR = "linear"
NONE = "none"

_DENSIFY_LIMIT = 5000


class PdeCoefficients:
    """Viscosity plus advection kind ('burgers' | 'linear' | 'none')."""

    def __init__(self, nu, advection=BURGERS, speed=None):
        if not np.isfinite(nu) or nu < 0.0:
            raise ValidationError(f"viscosity must be >= 0, got {nu!r}")
        if advection not in (BURGERS, LINEAR, NONE):
            raise ValidationError(f"unknown advection kind {advection!r}")
        self.nu = float(nu)
        self.advection = advection
        if advection == LINEAR:
            if speed is None:
                raise ValidationError("linear advection needs a speed")
            self.speed = np.atleast_1d(np.asarray(speed, dtype=float))
        else:
            self.speed = None

    def __repr__(self):
        return f"PdeCoefficients(nu={self.nu}, advection={self.advection!r}, speed={self.speed})"


def _apply_axis(a, x, axis, ndim):
    """Apply matrix `a` along spatial axis `axis` (1-based) of block `x`.

    `x` has shape (..., n1) in 1D or (..., n1, n2, n3) in 3D; leading axes
    are batch dimensions.  Only dense (N+1)^2 matrices ever appear here.
    """
    if ndim == 1:
        return x @ a.T
    if axis == 3:
        return x @ a.T
    shape = x.shape
    if axis == 1:
        xr = x.reshape(-1, shape[-3], shape[-2] * shape[-1])
        out = np.matmul(a, xr)
        return out.reshape(shape[:-3] + (a.shape[0], shape[-2], shape[-1]))
    # axis == 2
    xr = x.reshape(-1, shape[-2], shape[-1])
    out = np.matmul(a, xr)
    return out.reshape(shape)


class SemOperator:
    """Matrix-free SEM operator bundle for one (grid, coefficients) pair.

    Apply methods are pure in (u, w, z) and may be called concurrently;
    `counters` tracks the number of rhs / Jacobian / transpose applications.
    """

    def __init__(self, grid, coef):
        self.grid = grid
        self.coef = coef
        if coef.advection == LINEAR and coef.speed.size != grid.ncomp:
            raise ValidationError(
                f"linear advection speed has {coef.speed.size} components, "
                f"grid has {grid.ncomp}"
            )
        self._dw = []      # quadrature-weighted derivative, affine-invariant
        self._kmat = []    # (2/L) D^T diag(rho) D
        self._mvec = []    # (L/2) rho
        for ax, b in zip(grid.axes, grid.bases):
            w = b.weights
            self._dw.append(b.diff * w[:, None])
            k = (2.0 / ax.element_length) * (b.diff.T * w) @ b.diff
            self._kmat.append(0.5 * (k + k.T))
            self._mvec.append((ax.element_length / 2.0) * w)
        # Transverse mass weights per direction (3D): product of the other axes.
        if grid.dim == 3:
            m1, m2, m3 = self._mvec
            self._transverse = [
                m2[:, None] * m3[None, :],          # for direction 1, axes (2,3)
                m1[:, None] * m3[None, :],          # for direction 2, axes (1,3)
                m1[:, None] * m2[None, :],          # for direction 3, axes (1,2)
            ]
        self._minv = 1.0 / grid.mass_scalar
        self._minv_full = np.tile(self._minv, grid.ncomp)
        self.counters = {"rhs": 0, "jac": 0, "jact": 0}
        # Structural guarantee: nothing beyond (N+1)^2 per direction is stored.
        self.max_matrix_dim = max(ax.degree + 1 for ax in grid.axes)
        for mats in (self._dw, self._kmat):
            for m in mats:
                assert m.shape[0] <= self.max_matrix_dim
                assert m.shape == (m.shape[0], m.shape[0])

    # -- directional contractions -------------------------------------------

    def _kop(self, x, j):
        """Stiffness contraction along direction j with transverse mass weights."""
        out = _apply_axis(self._kmat[j], x, j + 1, self.grid.dim)
        return self._scale_transverse(out, j)

    def _dop(self, x, j):
        out = _apply_axis(self._dw[j], x, j + 1, self.grid.dim)
        return self._scale_transverse(out, j)

    def _dop_t(self, x, j):
        out = _apply_axis(self._dw[j].T, x, j + 1, self.grid.dim)
        return self._scale_transverse(out, j)

    def _scale_transverse(self, x, j):
        # Broadcast against the three trailing spatial axes of the block.
        if self.grid.dim == 1:
            return x
        t = self._transverse[j]
        if j == 0:
            return x * t
        if j == 1:
            return x * t[:, None, :]
        return x * t[:, :, None]

    # -- element kernels -----------------------------------------------------

    def _advection_speeds(self, u_loc):
        if self.coef.advection == BURGERS:
            return list(u_loc)
        if self.coef.advection == LINEAR:
            return [float(a) for a in self.coef.speed]
        return None

    def _element_rhs(self, u_loc):
        nd = self.grid.dim
        out = np.empty_like(u_loc)
        speeds = self._advection_speeds(u_loc)
        for i in range(self.grid.ncomp):
            acc = self._kop(u_loc[i], 0)
            for j in range(1, nd):
                acc += self._kop(u_loc[i], j)
            acc *= -self.coef.nu
            if speeds is not None:
                for j in range(nd):
                    acc -= speeds[j] * self._dop(u_loc[i], j)
            out[i] = acc
        return out

    def _element_jac(self, u_loc, w_loc):
        nd = self.grid.dim
        out = np.empty_like(w_loc)
        kind = self.coef.advection
        for i in range(self.grid.ncomp):
            acc = self._kop(w_loc[i], 0)
            for j in range(1, nd):
                acc += self._kop(w_loc[i], j)
            acc *= -self.coef.nu
            if kind == BURGERS:
                for j in range(nd):
                    acc -= w_loc[j] * self._dop(u_loc[i], j)
                    acc -= u_loc[j] * self._dop(w_loc[i], j)
            elif kind == LINEAR:
                for j in range(nd):
                    acc -= float(self.coef.speed[j]) * self._dop(w_loc[i], j)
            out[i] = acc
        return out

    def _element_jact(self, u_loc, z_loc):
        nd = self.grid.dim
        out = np.empty_like(z_loc)
        kind = self.coef.advection
        for i in range(self.grid.ncomp):
            acc = self._kop(z_loc[i], 0)
            for j in range(1, nd):
                acc += self._kop(z_loc[i], j)
            acc *= -self.coef.nu
            if kind == BURGERS:
                for j in range(nd):
                    acc -= z_loc[j] * self._dop(u_loc[j], i)
                    acc -= self._dop_t(u_loc[j] * z_loc[i], j)
            elif kind == LINEAR:
                for j in range(nd):
                    acc -= float(self.coef.speed[j]) * self._dop_t(z_loc[i], j)
            out[i] = acc
        return out

    # -- global applications ---------------------------------------------------

    def _check(self, u, name):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.grid.nglobal,):
            raise ValidationError(
                f"{name} has shape {u.shape}, expected ({self.grid.nglobal},)"
            )
        if not np.isfinite(u).all():
            raise NumericFailure(f"{name} contains NaN/Inf")
        return u

    def _finish(self, local):
        g = self.grid
        out = g.gather(local)
        out *= self._minv_full
        return g.mask(out) if g.has_mask else out

    def apply_rhs(self, u):
        """f(u) = M^{-1} gather(P_e(scatter(u)))."""
        u = self._check(u, "state")
        self.counters["rhs"] += 1
        return self._finish(self._element_rhs(self.grid.scatter(u)))

    def apply_jacobian(self, u, w):
        """Directional derivative J(u) w of the ODE-form right-hand side."""
        u = self._check(u, "state")
        w = self._check(w, "tangent")
        self.counters["jac"] += 1
        u_loc = self.grid.scatter(u) if self.coef.advection == BURGERS else None
        return self._finish(self._element_jac(u_loc, self.grid.scatter(w)))

    def apply_jacobian_transpose(self, u, z):
        """(M^{-1} J)^T z = gather(J_e^T scatter(M^{-1} z))."""
        u = self._check(u, "state")
        z = self._check(z, "cotangent")
        self.counters["jact"] += 1
        g = self.grid
        zm = z * self._minv_full
        if g.has_mask:
            zm = g.mask(zm)
        u_loc = g.scatter(u) if self.coef.advection == BURGERS else None
        out = g.gather(self._element_jact(u_loc, g.scatter(zm)))
        return g.mask(out) if g.has_mask else out

    def densify(self, u):
        """Column-by-column dense Jacobian; test/verification use only."""
        n = self.grid.nglobal
        if n > _DENSIFY_LIMIT:
            raise ValidationError(
                f"densify refused: {n} unknowns exceeds limit {_DENSIFY_LIMIT}"
            )
        u = self._check(u, "state")
        cols = np.empty((n, n))
        e = np.zeros(n)
        for k in range(n):
            e[k] = 1.0
            cols[:, k] = self.apply_jacobian(u, e)
            e[k] = 0.0
        return cols
