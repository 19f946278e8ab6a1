"""Directional emission rates, averaged directionality, and Purcell maps.

The emission rate of a dipole d into the guided mode at a point is
gamma+ = |d*.e|^2; the rate into the counter-propagating mode follows
from time reversal, e(-k) = conj(e(k)), so gamma- = |d*.e*|^2.  The
directionality is D = (gamma+ - gamma-)/(gamma+ + gamma-).

The Purcell factor uses supercell-normalized fields,

    F = 3 pi c^2 a n_g / (omega^2 sqrt(eps)) |d*.e|^2 / e_norm^2,

with e_norm^2 the eps-weighted field integral over one supercell; in the
2D reduction the volume integral is the grid area times an effective
height h_eff (default 0.64 a).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import MaskError
from .geometry import SQRT3, DielectricGrid
from .modesolver import BlochMode
from .polarization import DipoleState

UNDEFINED_RATE_FRACTION = 1e-14


@dataclass
class AveragingMask:
    """Boolean emitter-placement region on the mode grid.

    Built over the waveguide core (|y| <= y_core), dielectric points
    only, optionally keeping a clearance radius from the hole interfaces.
    side is "upper" (y >= 0), "lower" (y <= 0), or "full".
    """

    mask: np.ndarray
    y_core: float  # nm
    exclusion_radius: float  # nm
    side: str

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def core_mask(eps: DielectricGrid, side: str = "upper",
              y_core: float | None = None,
              exclusion_radius: float = 0.0) -> AveragingMask:
    """Averaging mask over (half of) the waveguide core.

    y_core defaults to a*sqrt(3)/2, one transverse lattice row.  With a
    nonzero exclusion radius, points closer than that distance (nm) to an
    air hole are dropped (Euclidean distance transform of the dielectric
    indicator).
    """
    if side not in ("upper", "lower", "full"):
        raise MaskError(f"unknown mask side {side!r}")
    if y_core is None:
        y_core = SQRT3 / 2.0 * eps.period_x
    diel = eps.dielectric_mask()
    y = eps.y[None, :]
    if side == "upper":
        band = (y >= 0.0) & (y <= y_core)
    elif side == "lower":
        band = (y <= 0.0) & (y >= -y_core)
    else:
        band = np.abs(y) <= y_core
    mask = diel & np.broadcast_to(band, diel.shape)
    if exclusion_radius > 0.0:
        dist = ndimage.distance_transform_edt(diel, sampling=(eps.dx, eps.dy))
        mask = mask & (dist >= exclusion_radius)
    if not mask.any():
        raise MaskError("averaging mask is empty")
    return AveragingMask(mask=mask, y_core=float(y_core),
                         exclusion_radius=float(exclusion_radius), side=side)


def _dipole_jones(dipole) -> np.ndarray:
    if isinstance(dipole, DipoleState):
        return dipole.jones
    d = np.asarray(dipole, dtype=complex)
    if d.shape[-1] != 2:
        raise ValueError("dipole must be a DipoleState or a complex 2-vector")
    return d


def emission_rates(dipole, e):
    """(gamma+, gamma-) of a dipole against field vectors of shape (..., 2).

    gamma+ = |d*.e|^2 and gamma- = |d*.e*|^2; both vanish where the field
    is zero (no rate is defined there).  Independent of the global phases
    of either factor.
    """
    d = _dipole_jones(dipole)
    e = np.asarray(e, dtype=complex)
    proj = np.conj(d[..., 0]) * e[..., 0] + np.conj(d[..., 1]) * e[..., 1]
    proj_rev = np.conj(d[..., 0]) * np.conj(e[..., 0]) + np.conj(d[..., 1]) * np.conj(e[..., 1])
    return np.abs(proj) ** 2, np.abs(proj_rev) ** 2


def directionality_map(dipole, mode: BlochMode) -> np.ndarray:
    """Pointwise D = (gamma+ - gamma-)/(gamma+ + gamma-) on the mode grid.

    Points whose total rate falls below 1e-14 of the grid maximum are
    undefined and returned as NaN (they are excluded from averages).
    """
    gp, gm = emission_rates(dipole, mode.jones_field())
    total = gp + gm
    defined = total > UNDEFINED_RATE_FRACTION * total.max()
    d = np.where(defined, (gp - gm) / np.where(defined, total, 1.0), np.nan)
    return d


def average_directionality(dipole, mode: BlochMode, mask: AveragingMask,
                           weight: str = "uniform") -> float:
    """Mean of D over the defined masked points.

    weight "uniform" is the plain arithmetic mean (a randomly placed
    emitter); "intensity" weights positions by the local |E|^2, exposed
    for sensitivity studies.
    """
    d = directionality_map(dipole, mode)
    sel = mask.mask & np.isfinite(d)
    if not sel.any():
        raise MaskError("no defined points under the averaging mask")
    if weight == "uniform":
        return float(d[sel].mean())
    if weight == "intensity":
        w = (np.abs(mode.Ex) ** 2 + np.abs(mode.Ey) ** 2)[sel]
        return float(np.sum(d[sel] * w) / np.sum(w))
    raise ValueError(f"unknown weight {weight!r}")


def purcell_map(dipole, mode: BlochMode, eps, h_eff: float = 0.64) -> np.ndarray:
    """Purcell factor map for the dipole coupled to the mode.

    eps is the permittivity on the mode grid (DielectricGrid or array).
    h_eff is the effective height of the 2D normalization integral in
    units of a.  The result does not depend on the field normalization.
    """
    if isinstance(eps, DielectricGrid):
        eps = eps.eps
    eps = np.asarray(eps, dtype=float)
    a_nm = mode.period_x
    dxa = mode.dx / a_nm
    dya = mode.dy / a_nm
    e2 = np.abs(mode.Ex) ** 2 + np.abs(mode.Ey) ** 2
    norm2 = float(np.sum(eps * e2)) * dxa * dya * h_eff
    if norm2 <= 0.0:
        raise ValueError("mode field is identically zero")
    ng = mode.n_g
    if not np.isfinite(ng):
        raise ValueError("mode has no valid group index")
    w = 2.0 * np.pi * mode.omega
    d = _dipole_jones(dipole)
    proj = np.abs(np.conj(d[0]) * mode.Ex + np.conj(d[1]) * mode.Ey) ** 2
    return 3.0 * np.pi * ng / (w**2 * np.sqrt(eps)) * proj / norm2


@dataclass
class DirectionalityResult:
    """Area bookkeeping of a directionality/Purcell map pair.

    Areas are in units of a^2 over the counting region.  threshold_area
    is the total |D| >= d_threshold area (area_pos/area_neg per sign);
    overlap_area additionally requires F >= f_threshold.
    placement_ratio compares threshold_area against the pi*xi^2 placement
    disk; hole_proximity_fraction is the part of the high-D area lying
    within proximity_nm of a hole interface (NaN without a distance map).
    """

    D_map: np.ndarray
    purcell_map: np.ndarray | None
    D_avg: float
    d_threshold: float
    f_threshold: float | None
    threshold_area: float
    area_pos: float
    area_neg: float
    overlap_area: float
    placement_ratio: float
    hole_proximity_fraction: float
    purcell_max: float


def area_metrics(D_map: np.ndarray, purcell_map: np.ndarray | None, *,
                 dx: float, dy: float, a_nm: float,
                 d_threshold: float = 0.9, f_threshold: float | None = None,
                 region: np.ndarray | None = None,
                 avg_mask: np.ndarray | None = None,
                 hole_distance_nm: np.ndarray | None = None,
                 proximity_nm: float = 40.0,
                 xi_nm: float = 40.0) -> DirectionalityResult:
    """High-directionality area metrics of a D map (and optional F map).

    region restricts the counting (defaults to all defined points);
    avg_mask sets where D_avg is taken (defaults to region).  dx, dy and
    a_nm are in nanometres; areas come out in units of a^2.
    """
    defined = np.isfinite(D_map)
    if region is None:
        region = defined
    else:
        region = region & defined
    cell = (dx / a_nm) * (dy / a_nm)
    hi = region & (np.abs(D_map) >= d_threshold)
    area_pos = float((hi & (D_map > 0)).sum()) * cell
    area_neg = float((hi & (D_map < 0)).sum()) * cell
    total = area_pos + area_neg
    if avg_mask is None:
        avg_mask = region
    sel = avg_mask & defined
    d_avg = float(D_map[sel].mean()) if sel.any() else float("nan")
    overlap = 0.0
    f_max = float("nan")
    if purcell_map is not None:
        f_max = float(purcell_map[region].max()) if region.any() else float("nan")
        if f_threshold is not None:
            overlap = float((hi & (purcell_map >= f_threshold)).sum()) * cell
    disk = np.pi * (xi_nm / a_nm) ** 2
    prox = float("nan")
    if hole_distance_nm is not None and hi.any():
        prox = float((hi & (hole_distance_nm <= proximity_nm)).sum() / hi.sum())
    return DirectionalityResult(
        D_map=D_map, purcell_map=purcell_map, D_avg=d_avg,
        d_threshold=d_threshold, f_threshold=f_threshold,
        threshold_area=total, area_pos=area_pos, area_neg=area_neg,
        overlap_area=overlap, placement_ratio=total / disk,
        hole_proximity_fraction=prox, purcell_max=f_max,
    )
