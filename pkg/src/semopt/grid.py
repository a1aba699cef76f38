"""Multi-element tensor-product meshes and continuous-Galerkin assembly maps.

A grid is a uniform partition per axis, each element carrying a GLL basis.
Inter-element continuity is enforced through local<->global index tables:
`scatter` copies global coefficients into per-element blocks, `gather` is its
exact adjoint (direct stiffness summation).  Periodic axes wrap the last node
of the last element onto global index 0; homogeneous Dirichlet axes keep
boundary unknowns in place and mask them to zero.

Scalar fields are stored as flattened C-order lattices (axis 0 slowest).
Vector fields are component-major: all u1 coefficients, then u2, then u3.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .basis import gll_rule
from .errors import ValidationError

PERIODIC = "periodic"
DIRICHLET0 = "dirichlet0"

_SNAPSHOT_MAGIC = "semopt-field v1"


@dataclass(frozen=True)
class Axis:
    """One coordinate direction: extent, uniform elements, degree, boundary kind."""

    xa: float
    xb: float
    elements: int
    degree: int
    bc: str = PERIODIC

    def __post_init__(self):
        if self.xb <= self.xa:
            raise ValidationError(f"axis extent is empty: [{self.xa}, {self.xb}]")
        if self.elements < 1:
            raise ValidationError("need at least one element per axis")
        if self.degree < 1:
            raise ValidationError("polynomial degree must be >= 1")
        if self.bc not in (PERIODIC, DIRICHLET0):
            raise ValidationError(f"unknown boundary kind {self.bc!r}")
        if self.bc == PERIODIC and self.elements * self.degree < 2:
            raise ValidationError("periodic axis needs E*N >= 2 (degenerate wrap)")

    @property
    def length(self):
        return self.xb - self.xa

    @property
    def element_length(self):
        return (self.xb - self.xa) / self.elements

    @property
    def npts(self):
        n = self.elements * self.degree
        return n if self.bc == PERIODIC else n + 1

    def local_to_global(self):
        """Index table (elements, degree+1) mapping local nodes to axis nodes."""
        e = np.arange(self.elements)[:, None]
        i = np.arange(self.degree + 1)[None, :]
        idx = e * self.degree + i
        if self.bc == PERIODIC:
            idx = idx % self.npts
        return idx

    def coordinates(self):
        """Physical coordinates of the axis nodes (affine map of GLL nodes)."""
        xi = gll_rule(self.degree).nodes
        coords = np.empty(self.npts)
        table = self.local_to_global()
        for e in range(self.elements):
            a = self.xa + e * self.element_length
            coords[table[e]] = a + self.element_length * (xi + 1.0) / 2.0
        if self.bc == PERIODIC:
            coords[0] = self.xa
        return coords


class Grid:
    """Tensor-product mesh with assembly maps and the assembled mass diagonal.

    Construct through :func:`build_grid`.  Instances are immutable after
    construction and safe to share between workers.
    """

    def __init__(self, axes):
        axes = tuple(axes)
        if len(axes) not in (1, 3):
            raise ValidationError("only 1D and 3D grids are supported")
        if len(axes) == 3 and any(ax.bc != PERIODIC for ax in axes):
            raise ValidationError(
                "unsupported configuration: 3D grids require periodic axes"
            )
        self.axes = axes
        self.dim = len(axes)
        self.ncomp = 1 if self.dim == 1 else 3
        self.bases = tuple(gll_rule(ax.degree) for ax in axes)
        self.shape = tuple(ax.npts for ax in axes)
        self.nscalar = int(np.prod(self.shape))
        self.nglobal = self.ncomp * self.nscalar
        self.nelem = int(np.prod([ax.elements for ax in axes]))
        self.local_shape = tuple(ax.degree + 1 for ax in axes)

        axis_tables = [ax.local_to_global() for ax in axes]
        if self.dim == 1:
            table = axis_tables[0]
        else:
            t1, t2, t3 = axis_tables
            n2, n3 = self.shape[1], self.shape[2]
            # Element (e1,e2,e3), local node (i,j,k) -> flat scalar index.
            g1 = t1[:, None, None, :, None, None]
            g2 = t2[None, :, None, None, :, None]
            g3 = t3[None, None, :, None, None, :]
            table = ((g1 * n2 + g2) * n3 + g3).reshape(self.nelem, *self.local_shape)
        self.table = np.ascontiguousarray(table)
        self.table.setflags(write=False)

        ones = np.ones((self.nelem,) + self.local_shape)
        self.multiplicity = self._gather_scalar(ones)
        elem_mass = self._element_mass_block()
        self.mass_scalar = self._gather_scalar(
            np.broadcast_to(elem_mass, (self.nelem,) + self.local_shape)
        )
        if np.any(self.mass_scalar <= 0.0):
            raise ValidationError("assembled mass diagonal is not positive")

        mask = np.ones(self.shape)
        for k, ax in enumerate(axes):
            if ax.bc == DIRICHLET0:
                sl = [slice(None)] * self.dim
                sl[k] = 0
                mask[tuple(sl)] = 0.0
                sl[k] = -1
                mask[tuple(sl)] = 0.0
        self.mask_scalar = mask.ravel()
        self.has_mask = bool(np.any(self.mask_scalar == 0.0))
        for arr in (self.multiplicity, self.mass_scalar, self.mask_scalar):
            arr.setflags(write=False)

    def _element_mass_block(self):
        parts = [
            (ax.element_length / 2.0) * b.weights
            for ax, b in zip(self.axes, self.bases)
        ]
        if self.dim == 1:
            return parts[0]
        return parts[0][:, None, None] * parts[1][None, :, None] * parts[2][None, None, :]

    def _gather_scalar(self, local):
        return np.bincount(
            self.table.ravel(), weights=np.ascontiguousarray(local).ravel(),
            minlength=self.nscalar,
        )

    # -- assembly maps -----------------------------------------------------

    def scatter(self, u):
        """Global coefficients -> per-element blocks, shape (ncomp, nelem, *local)."""
        u = self._check_field(u)
        comps = u.reshape(self.ncomp, self.nscalar)
        return comps[:, self.table]

    def gather(self, local):
        """Adjoint of scatter: accumulate element blocks into a global vector."""
        local = np.asarray(local, dtype=float)
        want = (self.ncomp, self.nelem) + self.local_shape
        if local.shape != want:
            raise ValidationError(
                f"local block shape {local.shape} does not match grid {want}"
            )
        out = np.empty(self.nglobal)
        for c in range(self.ncomp):
            out[c * self.nscalar:(c + 1) * self.nscalar] = self._gather_scalar(local[c])
        return out

    def mask(self, u):
        """Project out homogeneous-Dirichlet boundary entries (no-op if periodic)."""
        u = self._check_field(u)
        if not self.has_mask:
            return u
        return (u.reshape(self.ncomp, self.nscalar) * self.mask_scalar).ravel()

    def mass(self):
        """Assembled global mass diagonal, replicated per component."""
        return np.tile(self.mass_scalar, self.ncomp)

    def _check_field(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.nglobal,):
            raise ValidationError(
                f"field has shape {u.shape}, expected ({self.nglobal},)"
            )
        return u

    # -- geometry ----------------------------------------------------------

    def node_coordinates(self):
        """Per-axis coordinate arrays of the global lattice."""
        return tuple(ax.coordinates() for ax in self.axes)

    def evaluate(self, fn):
        """Sample callables on the lattice into a global field.

        For 1D grids `fn` maps x -> value; for 3D grids `fn` maps
        (x1, x2, x3) meshes -> tuple of 3 component arrays.
        """
        coords = self.node_coordinates()
        if self.dim == 1:
            vals = np.asarray(fn(coords[0]), dtype=float)
            return self.mask(vals.ravel())
        mesh = np.meshgrid(*coords, indexing="ij")
        comps = fn(*mesh)
        out = np.concatenate([np.asarray(c, dtype=float).ravel() for c in comps])
        return self.mask(out)

    def l2_norm(self, u):
        """Quadrature L2 norm sqrt(u^T M u)."""
        u = self._check_field(u)
        return float(np.sqrt(np.dot(u, self.mass() * u)))


def build_grid(axes):
    """Build a Grid (with its gather/scatter maps) from a list of Axis specs."""
    return Grid(axes)


def grid_1d(xa, xb, elements, degree, bc=PERIODIC):
    return Grid([Axis(xa, xb, elements, degree, bc)])


def grid_3d(extents, elements, degree):
    """Periodic 3D box; extents is ((xa,xb),)*3 or a single (xa, xb) pair."""
    if len(extents) == 2 and np.isscalar(extents[0]):
        extents = (extents,) * 3
    axes = [Axis(e[0], e[1], elements, degree, PERIODIC) for e in extents]
    return Grid(axes)


# -- field snapshots -------------------------------------------------------


def save_field(path, grid, values):
    """Write a field snapshot: text header, then little-endian float64 payload."""
    values = grid._check_field(values)
    with open(path, "wb") as fh:
        head = io.StringIO()
        head.write(f"{_SNAPSHOT_MAGIC}\n")
        head.write(f"dim {grid.dim}\n")
        head.write(f"ncomp {grid.ncomp}\n")
        for k, ax in enumerate(grid.axes):
            head.write(
                f"axis {k} elements {ax.elements} degree {ax.degree} "
                f"extent {ax.xa!r} {ax.xb!r} bc {ax.bc}\n"
            )
        head.write(f"count {grid.nglobal}\n")
        head.write("end-header\n")
        fh.write(head.getvalue().encode("ascii"))
        fh.write(values.astype("<f8", copy=False).tobytes())


def load_field(path):
    """Read a snapshot written by :func:`save_field`; returns (grid, values)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"end-header\n"
    split = blob.find(marker)
    if split < 0 or not blob.startswith(_SNAPSHOT_MAGIC.encode("ascii")):
        raise ValidationError(f"{path}: not a semopt field snapshot")
    header = blob[:split].decode("ascii").splitlines()
    meta = {}
    axes_raw = {}
    for line in header[1:]:
        parts = line.split()
        if parts[0] == "axis":
            axes_raw[int(parts[1])] = parts[2:]
        else:
            meta[parts[0]] = parts[1:]
    dim = int(meta["dim"][0])
    count = int(meta["count"][0])
    axes = []
    for k in range(dim):
        p = axes_raw[k]
        axes.append(
            Axis(
                xa=float(p[p.index("extent") + 1]),
                xb=float(p[p.index("extent") + 2]),
                elements=int(p[p.index("elements") + 1]),
                degree=int(p[p.index("degree") + 1]),
                bc=p[p.index("bc") + 1],
            )
        )
    grid = Grid(axes)
    if grid.nglobal != count:
        raise ValidationError(f"{path}: header count {count} != grid {grid.nglobal}")
    payload = blob[split + len(marker):]
    values = np.frombuffer(payload, dtype="<f8", count=count).astype(float)
    return grid, values
