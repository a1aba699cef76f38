"""Gauss-Legendre-Lobatto quadrature and reference-element operators.

Everything here lives on the reference element [-1, 1].  The GLL rule of
degree N has N+1 nodes (both endpoints included), integrates polynomials of
degree <= 2N-1 exactly, and renders the collocation mass matrix diagonal.
Physical elements of length L pick up affine scalings: M_e = (L/2) diag(rho)
and K_e = (2/L) D^T diag(rho) D, while the nodal differentiation matrix D is
unchanged by affine maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericFailure, ValidationError

_NEWTON_TOL = 1e-14
_NEWTON_MAXIT = 100


@dataclass(frozen=True)
class SpectralBasis1D:
    """GLL nodes, weights, and nodal differentiation matrix for one degree."""

    degree: int
    nodes: np.ndarray
    weights: np.ndarray
    diff: np.ndarray


@dataclass(frozen=True)
class ElementOperators1D:
    """Reference operators scaled to a physical element of length `length`.

    mass is the diagonal of the collocation mass matrix, (L/2) rho;
    stiffness is (2/L) D^T diag(rho) D; diff is the unscaled nodal
    differentiation matrix.
    """

    length: float
    mass: np.ndarray
    stiffness: np.ndarray
    diff: np.ndarray


def legendre(degree, x):
    """Evaluate P_N and P_N' at `x` by the three-term recurrence.

    The derivative recurrence P'_{k+1} = ((2k+1)(P_k + x P'_k) - k P'_{k-1})/(k+1)
    is carried alongside, so the result is well defined at the endpoints too.
    """
    x = np.asarray(x, dtype=float)
    p_nm1 = np.ones_like(x)
    d_nm1 = np.zeros_like(x)
    if degree == 0:
        return p_nm1, d_nm1
    p_n = x.copy()
    d_n = np.ones_like(x)
    for k in range(1, degree):
        p_np1 = ((2 * k + 1) * x * p_n - k * p_nm1) / (k + 1)
        d_np1 = ((2 * k + 1) * (p_n + x * d_n) - k * d_nm1) / (k + 1)
        p_nm1, p_n = p_n, p_np1
        d_nm1, d_n = d_n, d_np1
    return p_n, d_n


def gll_rule(degree):
    """Construct the Gauss-Legendre-Lobatto rule of the given degree.

    Interior nodes are the roots of P'_N, located by a damped Newton
    iteration started from the Chebyshev-Gauss-Lobatto points; weights use
    the closed form 2 / (N (N+1) P_N(x)^2).  Nodes and weights are
    symmetrized exactly about 0.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 1:
        raise ValidationError(f"degree must be an integer >= 1, got {degree!r}")
    n = int(degree)
    nodes = np.empty(n + 1)
    nodes[0], nodes[n] = -1.0, 1.0
    if n >= 2:
        # Chebyshev-Gauss-Lobatto initial guesses for the interior roots.
        x = -np.cos(np.pi * np.arange(1, n) / n)
        spacing = np.pi / n
        converged = False
        for _ in range(_NEWTON_MAXIT):
            p, dp = legendre(n, x)
            # P''_N from the Legendre ODE (1-x^2) P'' = 2x P' - N(N+1) P.
            ddp = (2.0 * x * dp - n * (n + 1) * p) / (1.0 - x * x)
            dx = dp / ddp
            # Damping: never move more than half the initial spacing.
            dx = np.clip(dx, -0.5 * spacing, 0.5 * spacing)
            x = x - dx
            if np.max(np.abs(dx)) <= _NEWTON_TOL:
                converged = True
                break
        if not converged:
            raise NumericFailure(
                f"GLL node iteration did not converge for degree {n}"
            )
        nodes[1:n] = x
    # Exact symmetry under index reversal.
    nodes = 0.5 * (nodes - nodes[::-1])
    nodes[0], nodes[n] = -1.0, 1.0
    pn, _ = legendre(n, nodes)
    weights = 2.0 / (n * (n + 1) * pn * pn)
    weights = 0.5 * (weights + weights[::-1])
    basis = SpectralBasis1D(
        degree=n,
        nodes=nodes,
        weights=weights,
        diff=diff_matrix_from_nodes(nodes),
    )
    for arr in (basis.nodes, basis.weights, basis.diff):
        arr.setflags(write=False)
    return basis


def diff_matrix_from_nodes(nodes):
    """Nodal differentiation matrix D[i, j] = l_j'(x_i) for the given nodes.

    Built from barycentric weights with the negative-sum trick for the
    diagonal, which makes every row sum exactly zero.
    """
    x = np.asarray(nodes, dtype=float)
    m = x.size
    diff_table = x[:, None] - x[None, :]
    np.fill_diagonal(diff_table, 1.0)
    bary = 1.0 / np.prod(diff_table, axis=1)
    d = (bary[None, :] / bary[:, None]) / diff_table
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -np.sum(d, axis=1))
    return d


def diff_matrix(basis):
    """Differentiation matrix of a basis (recomputed from its nodes)."""
    return diff_matrix_from_nodes(basis.nodes)


def element_operators(basis, length):
    """Mass diagonal, stiffness matrix, and D for an element of given length."""
    if not np.isfinite(length) or length <= 0.0:
        raise ValidationError(f"element length must be positive, got {length!r}")
    length = float(length)
    mass = (length / 2.0) * basis.weights
    d = basis.diff
    stiffness = (2.0 / length) * (d.T * basis.weights) @ d
    stiffness = 0.5 * (stiffness + stiffness.T)
    ops = ElementOperators1D(length=length, mass=mass, stiffness=stiffness, diff=d)
    ops.mass.setflags(write=False)
    ops.stiffness.setflags(write=False)
    return ops
