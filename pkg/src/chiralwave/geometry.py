"""Supercell dielectric function of a glide-plane photonic-crystal waveguide.

The waveguide is a missing row in a hexagonal lattice of air holes in a
dielectric background.  One side of the lattice can be shifted by half a
lattice constant along the propagation direction (glide), and the first
row on each side can be pulled toward the core.  The slab is reduced to a
2D problem through a single effective index, so the dielectric function is
a 2D map eps(x, y) that is periodic in x with period a and treated as
periodic in y with period Wy (supercell).

Lengths in the public interface are in nanometres; internal rasterization
works in units of the lattice constant a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, ResolutionError

SQRT3 = math.sqrt(3.0)

# Paper-style mesh rule: grid spacing at most 0.4*a/n.
MESH_RULE_FACTOR = 0.4


@dataclass
class SupercellGeometry:
    """Parametric description of the waveguide supercell.

    All lengths in nm.  Fields left as None take their standard defaults:
    hole_radius_r = 0.3*a, first_row_shift_l1 = a*sqrt(3)/20,
    supercell_width_Wy = 8.5*a*sqrt(3) - 2*l1, smoothing_width = one grid
    cell.
    """

    lattice_constant_a: float
    hole_radius_r: float | None = None
    first_row_shift_l1: float | None = None
    glide: bool = True
    effective_index: float = 2.9
    supercell_width_Wy: float | None = None
    grid_nx: int = 48
    grid_ny: int = 700
    smoothing_width: float | None = None

    def __post_init__(self):
        a = float(self.lattice_constant_a)
        if a <= 0:
            raise GeometryError("lattice_constant_a must be positive")
        if self.hole_radius_r is None:
            self.hole_radius_r = 0.3 * a
        if self.first_row_shift_l1 is None:
            self.first_row_shift_l1 = a * SQRT3 / 20.0
        if self.supercell_width_Wy is None:
            self.supercell_width_Wy = 8.5 * a * SQRT3 - 2.0 * self.first_row_shift_l1
        if self.effective_index < 1.0:
            raise GeometryError("effective_index must be >= 1")
        if self.hole_radius_r < 0:
            raise GeometryError("hole_radius_r must be non-negative")
        if self.hole_radius_r >= a / 2.0:
            raise GeometryError(
                f"hole_radius_r = {self.hole_radius_r} nm >= a/2 = {a / 2.0} nm; "
                "holes would overlap along a row"
            )
        if self.grid_nx < 2 or self.grid_ny < 2:
            raise GeometryError("grid_nx and grid_ny must be >= 2")
        if self.supercell_width_Wy <= 0:
            raise GeometryError("supercell_width_Wy must be positive")
        self.validate_resolution()

    @property
    def dx(self) -> float:
        return self.lattice_constant_a / self.grid_nx

    @property
    def dy(self) -> float:
        return self.supercell_width_Wy / self.grid_ny

    def validate_resolution(self):
        """Enforce the mesh rule: spacings at most 0.4*a/n."""
        limit = MESH_RULE_FACTOR * self.lattice_constant_a / self.effective_index
        if self.dx > limit or self.dy > limit:
            raise ResolutionError(
                f"grid spacing ({self.dx:.3g}, {self.dy:.3g}) nm exceeds "
                f"mesh rule limit {limit:.3g} nm; refine grid_nx/grid_ny"
            )


@dataclass
class DielectricGrid:
    """Relative permittivity sampled on a uniform grid.

    eps has shape (nx, ny) with eps[i, j] at x = origin[0] + i*dx,
    y = origin[1] + j*dy.  Periodic in x with period nx*dx and treated as
    periodic in y with period ny*dy.
    """

    eps: np.ndarray
    dx: float  # nm
    dy: float  # nm
    origin: tuple[float, float] = (0.0, 0.0)  # nm

    @property
    def nx(self) -> int:
        return self.eps.shape[0]

    @property
    def ny(self) -> int:
        return self.eps.shape[1]

    @property
    def period_x(self) -> float:
        """Lattice constant a in nm."""
        return self.nx * self.dx

    @property
    def period_y(self) -> float:
        return self.ny * self.dy

    @property
    def x(self) -> np.ndarray:
        """Grid x coordinates (nm), shape (nx,)."""
        return self.origin[0] + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        """Grid y coordinates (nm), shape (ny,)."""
        return self.origin[1] + self.dy * np.arange(self.ny)

    def dielectric_mask(self) -> np.ndarray:
        """Boolean grid, True where the point is dielectric (not air hole).

        The split is at the midpoint between air (eps = 1) and the
        background permittivity, which with anti-aliased boundaries
        tracks the geometric hole outline.  Homogeneous grids are
        dielectric everywhere.
        """
        return self.eps > 0.5 * (1.0 + self.eps.max())


def hole_centers(geom: SupercellGeometry) -> np.ndarray:
    """Hole centers (x0, y0) in units of a, one entry per row.

    Each row holds one hole per period; x0 is the offset of that hole
    within [0, 1).  Rows are stacked at y = +-j*sqrt(3)/2 with the usual
    hexagonal half-period stagger.  Row j = 0 (the waveguide core) is
    missing.  The first row on each side moves toward the core by l1; with
    glide=True the whole lower half-lattice is offset by half a period.

    Only complete first rows are shifted by l1; the supercell keeps the
    conventional width 8.5*a*sqrt(3) - 2*l1, which leaves the outermost
    row gap slightly compressed at the periodic boundary.  That region is
    many rows away from the core and does not affect the guided mode.
    """
    a = geom.lattice_constant_a
    wy = geom.supercell_width_Wy / a
    l1 = geom.first_row_shift_l1 / a
    n_rows = int(math.floor((wy / 2.0) / (SQRT3 / 2.0) + 1e-9))
    if n_rows < 1:
        return np.zeros((0, 2))
    centers = []
    for j in range(1, n_rows + 1):
        y = j * SQRT3 / 2.0
        if j == 1:
            y -= l1
        x_off = 0.5 if (j % 2 == 1) else 0.0
        centers.append((x_off, y))
        x_low = x_off + (0.5 if geom.glide else 0.0)
        centers.append((x_low % 1.0, -y))
    return np.asarray(centers)


def _check_hole_overlap(centers: np.ndarray, r: float, wy: float):
    """Raise GeometryError if any two holes (incl. periodic images) overlap."""
    if len(centers) < 2 and r <= 0.5:
        return
    for i in range(len(centers)):
        dxs = centers[:, 0] - centers[i, 0]
        dxs -= np.round(dxs)
        dys = centers[:, 1] - centers[i, 1]
        dys -= np.round(dys / wy) * wy
        d = np.hypot(dxs, dys)
        d[i] = np.inf
        if d.min() < 2.0 * r - 1e-12:
            raise GeometryError(
                f"holes overlap: min center distance {d.min():.4f} a < 2r = {2 * r:.4f} a"
            )


def _signed_distance(X: np.ndarray, Y: np.ndarray, centers: np.ndarray,
                     r: float, wy: float) -> np.ndarray:
    """Signed distance (units of a) to the nearest hole boundary.

    Negative inside a hole.  Periodic in x (period 1) and y (period wy).
    """
    dmin = np.full(X.shape, np.inf)
    for x0, y0 in centers:
        u = X - x0
        u -= np.round(u)
        v = Y - y0
        v -= np.round(v / wy) * wy
        np.minimum(dmin, np.hypot(u, v), out=dmin)
    return dmin - r


def _rasterize(nx: int, ny: int, wy: float, centers: np.ndarray, r: float,
               smooth: float, n_bg: float, y_centered: bool = True) -> np.ndarray:
    """Anti-aliased permittivity grid in units of a.

    Each cell gets the air/dielectric mix from the linear coverage ramp of
    the signed distance over the smoothing width.
    """
    x = np.arange(nx) / nx
    if y_centered:
        y = (np.arange(ny) - ny // 2) * (wy / ny)
    else:
        y = np.arange(ny) * (wy / ny)
    X, Y = np.meshgrid(x, y, indexing="ij")
    eps_bg = n_bg * n_bg
    if r <= 0.0 or len(centers) == 0:
        return np.full((nx, ny), eps_bg)
    sd = _signed_distance(X, Y, centers, r, wy)
    if smooth > 0:
        cover = np.clip(0.5 - sd / smooth, 0.0, 1.0)
    else:
        cover = (sd < 0).astype(float)
    return cover * 1.0 + (1.0 - cover) * eps_bg


def build_dielectric(geom: SupercellGeometry) -> DielectricGrid:
    """Rasterize the waveguide supercell permittivity.

    Returns a DielectricGrid periodic in x with period a, covering
    y in [-Wy/2, Wy/2).  Raises GeometryError for overlapping holes and
    ResolutionError when the mesh rule is violated.
    """
    geom.validate_resolution()
    a = geom.lattice_constant_a
    wy = geom.supercell_width_Wy / a
    r = geom.hole_radius_r / a
    centers = hole_centers(geom)
    if r > 0:
        _check_hole_overlap(centers, r, wy)
    smooth = geom.smoothing_width
    if smooth is None:
        smooth = max(geom.dx, geom.dy)
    eps = _rasterize(geom.grid_nx, geom.grid_ny, wy, centers, r,
                     smooth / a, geom.effective_index)
    return DielectricGrid(
        eps=eps,
        dx=geom.dx,
        dy=geom.dy,
        origin=(0.0, -(geom.grid_ny // 2) * geom.dy),
    )


def build_bulk_dielectric(geom: SupercellGeometry, grid_nx: int | None = None) -> DielectricGrid:
    """Rectangular unit cell of the bulk hole lattice (no waveguide row).

    The cell is a x sqrt(3)*a with two holes, at (0, 0) and (a/2,
    sqrt(3)*a/2).  Used for fill-fraction checks and for projecting the
    bulk band continuum.
    """
    nx = grid_nx if grid_nx is not None else geom.grid_nx
    wy = SQRT3
    ny = 2 * int(round(nx * wy / 2.0))
    r = geom.hole_radius_r / geom.lattice_constant_a
    centers = np.array([[0.0, 0.0], [0.5, SQRT3 / 2.0]])
    dx = geom.lattice_constant_a / nx
    dy = wy * geom.lattice_constant_a / ny
    smooth = geom.smoothing_width
    if smooth is None:
        smooth = max(dx, dy)
    eps = _rasterize(nx, ny, wy, centers, r, smooth / geom.lattice_constant_a,
                     geom.effective_index, y_centered=False)
    return DielectricGrid(eps=eps, dx=dx, dy=dy, origin=(0.0, 0.0))


def hole_boundary_distance(geom: SupercellGeometry, grid: DielectricGrid) -> np.ndarray:
    """Distance (nm) from each grid point to the nearest air-dielectric interface.

    Computed from the exact hole layout rather than the rasterized grid,
    so it is sub-pixel accurate.  Shape matches grid.eps.
    """
    a = geom.lattice_constant_a
    wy = geom.supercell_width_Wy / a
    centers = hole_centers(geom)
    r = geom.hole_radius_r / a
    X = (grid.x[:, None] - 0.0) / a + np.zeros((1, grid.ny))
    Y = (grid.y[None, :] - 0.0) / a + np.zeros((grid.nx, 1))
    if r <= 0 or len(centers) == 0:
        return np.full((grid.nx, grid.ny), np.inf)
    sd = _signed_distance(X, Y, centers, r, wy)
    return np.abs(sd) * a
