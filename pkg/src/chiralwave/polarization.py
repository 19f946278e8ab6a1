"""Polarization algebra: Jones vectors, Stokes parameters, ellipse angles.

The in-plane field (or dipole) with ellipticity angle chi and orientation
angle psi corresponds to the unit Jones vector

    (cos(chi) cos(psi) - i sin(chi) sin(psi),
     cos(chi) sin(psi) + i sin(chi) cos(psi)).

chi in [-pi/4, pi/4] sets the minor/major semiaxis ratio tan(chi), its
sign the handedness (positive = right-handed, S3 > 0); psi in
[-pi/2, pi/2] tilts the major axis against the propagation (x) axis.
The alternative (alpha, delta) pair describes the same state as
(cos(alpha), sin(alpha) e^(i delta)); delta has no direct geometrical
meaning and its branch here is fixed by requiring that rebuilding the
Jones vector reproduces the input state up to a global phase.

All functions broadcast over leading array dimensions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import PolarizationError

CIRCULAR_S3_MIN = 0.999  # |S3|/S0 acceptance for a C point


@dataclass
class EllipseAngles:
    """Polarization-ellipse angles in radians (scalars or arrays)."""

    chi: np.ndarray
    psi: np.ndarray

    def is_circular(self, tol: float = 1e-9) -> np.ndarray:
        return np.abs(np.abs(self.chi) - np.pi / 4) < tol


@dataclass
class StokesVector:
    """Stokes parameters, same squared-field units (scalars or arrays)."""

    S0: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray

    def degree_residual(self) -> np.ndarray:
        """Relative defect of S1^2+S2^2+S3^2 = S0^2 (0 for coherent fields)."""
        return np.abs(self.S1**2 + self.S2**2 + self.S3**2 - self.S0**2) / np.maximum(self.S0**2, 1e-300)


@dataclass
class DipoleState:
    """Transition dipole given by orientation/ellipticity angles.

    Only the direction of the unit Jones vector enters directionality and
    Purcell maps; d0 is kept for bookkeeping.
    """

    psi_d: float
    chi_d: float
    d0: float = 1.0

    @property
    def jones(self) -> np.ndarray:
        return angles_to_jones(self.chi_d, self.psi_d)

    @property
    def alpha_delta(self) -> tuple[float, float]:
        return alpha_delta_from_angles(self.chi_d, self.psi_d)

    def conjugated(self) -> "DipoleState":
        """Same ellipse with reversed handedness."""
        return DipoleState(psi_d=self.psi_d, chi_d=-self.chi_d, d0=self.d0)


def angles_to_jones(chi, psi) -> np.ndarray:
    """Unit Jones vector for ellipse angles; shape (..., 2).

    Total in its arguments (the expression is pi-periodic up to global
    sign); values outside the canonical ranges only raise a warning.
    """
    chi = np.asarray(chi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if np.any(np.abs(chi) > np.pi / 4 + 1e-12) or np.any(np.abs(psi) > np.pi / 2 + 1e-12):
        warnings.warn("ellipse angles outside canonical ranges; result is the "
                      "periodic continuation of the same state family")
    return np.stack([
        np.cos(chi) * np.cos(psi) - 1j * np.sin(chi) * np.sin(psi),
        np.cos(chi) * np.sin(psi) + 1j * np.sin(chi) * np.cos(psi),
    ], axis=-1)


def jones_to_stokes(v) -> StokesVector:
    """Stokes parameters of Jones vectors with shape (..., 2).

    S2 and S3 are 2 e0x e0y cos(delta) and 2 e0x e0y sin(delta) with
    delta = arg(vy) - arg(vx).  Raises PolarizationError for an all-zero
    vector.
    """
    v = np.asarray(v, dtype=complex)
    ax2 = np.abs(v[..., 0]) ** 2
    ay2 = np.abs(v[..., 1]) ** 2
    s0 = ax2 + ay2
    if np.any(s0 == 0.0):
        raise PolarizationError("zero field vector has undefined polarization")
    cross = np.conj(v[..., 0]) * v[..., 1]
    return StokesVector(S0=s0, S1=ax2 - ay2, S2=2.0 * np.real(cross), S3=2.0 * np.imag(cross))


def stokes_to_angles(s: StokesVector) -> EllipseAngles:
    """Ellipse angles chi = arcsin(S3/S0)/2 and psi = atan2(S2, S1)/2.

    The two-argument arctangent resolves the psi branch by the quadrant of
    (S1, S2); for circular states (S1 = S2 = 0) psi is set to 0.
    """
    s0 = np.asarray(s.S0, dtype=float)
    if np.any(s0 <= 0.0):
        raise PolarizationError("S0 must be positive")
    chi = 0.5 * np.arcsin(np.clip(s.S3 / s0, -1.0, 1.0))
    psi = np.where((s.S1 == 0.0) & (s.S2 == 0.0), 0.0,
                   0.5 * np.arctan2(s.S2, s.S1))
    return EllipseAngles(chi=chi, psi=psi)


def alpha_delta_from_angles(chi, psi):
    """Convert (chi, psi) to the (alpha, delta) parameterization.

    alpha in [0, pi/2], delta in [0, 2 pi); satisfies
    cos(2 alpha) = cos(2 chi) cos(2 psi) and
    tan(delta) = tan(2 chi)/sin(2 psi), with the branch chosen so that
    (cos(alpha), sin(alpha) e^(i delta)) equals the Jones vector of
    (chi, psi) up to a global phase.  Limit cases: psi = 0 gives
    delta = +-pi/2 by the sign of chi; chi = psi = 0 gives delta = 0.
    """
    v = angles_to_jones(chi, psi)
    ax = np.abs(v[..., 0])
    ay = np.abs(v[..., 1])
    alpha = np.arctan2(ay, ax)
    cross = np.conj(v[..., 0]) * v[..., 1]
    delta = np.where(ay == 0.0, 0.0, np.mod(np.angle(cross), 2 * np.pi))
    return alpha, delta


def angles_from_alpha_delta(alpha, delta) -> EllipseAngles:
    """Ellipse angles of the state (cos(alpha), sin(alpha) e^(i delta))."""
    alpha = np.asarray(alpha, dtype=float)
    delta = np.asarray(delta, dtype=float)
    v = np.stack([np.cos(alpha) + 0j, np.sin(alpha) * np.exp(1j * delta)], axis=-1)
    return stokes_to_angles(jones_to_stokes(v))


def jones_fidelity(u, v) -> np.ndarray:
    """|<u, v>|^2 / (|u|^2 |v|^2): 1 for equal states up to global phase."""
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    inner = np.sum(np.conj(u) * v, axis=-1)
    nu = np.sum(np.abs(u) ** 2, axis=-1)
    nv = np.sum(np.abs(v) ** 2, axis=-1)
    return np.abs(inner) ** 2 / (nu * nv)


@dataclass
class PolarizationField:
    """Per-grid-point Stokes parameters and ellipse angles of a mode.

    Arrays have the mode's (nx, ny) shape; valid is False inside air
    holes when the permittivity was supplied.  Grid metadata mirrors the
    mode (spacings in nm).
    """

    S0: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    chi: np.ndarray
    psi: np.ndarray
    valid: np.ndarray
    dx: float
    dy: float
    origin: tuple[float, float]

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.S0.shape[0])

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.dy * np.arange(self.S0.shape[1])

    @property
    def handedness(self) -> np.ndarray:
        """+1 right-handed (S3 > 0), -1 left-handed, 0 linear."""
        return np.sign(self.S3).astype(int)


@dataclass
class CPoint:
    """Point of locally circular polarization (sub-grid refined)."""

    x: float  # nm
    y: float  # nm
    handedness: int
    s3_fraction: float  # interpolated S3/S0, sign included


def polarization_field(mode, eps: np.ndarray | None = None) -> PolarizationField:
    """Stokes parameters and ellipse angles of the in-plane mode field.

    eps (array on the mode grid) masks points inside air holes; without
    it every point is treated as valid.  Points with zero in-plane field
    are marked invalid.
    """
    ex, ey = mode.Ex, mode.Ey
    ax2 = np.abs(ex) ** 2
    ay2 = np.abs(ey) ** 2
    s0 = ax2 + ay2
    cross = np.conj(ex) * ey
    s1 = ax2 - ay2
    s2 = 2.0 * np.real(cross)
    s3 = 2.0 * np.imag(cross)
    valid = s0 > 0
    if eps is None and mode.eps is not None:
        eps = mode.eps
    if eps is not None:
        valid &= eps > 0.5 * (1.0 + eps.max())
    s0_safe = np.where(valid, s0, 1.0)
    chi = 0.5 * np.arcsin(np.clip(s3 / s0_safe, -1.0, 1.0))
    psi = np.where((s1 == 0.0) & (s2 == 0.0), 0.0, 0.5 * np.arctan2(s2, s1))
    return PolarizationField(S0=s0, S1=s1, S2=s2, S3=s3, chi=chi, psi=psi,
                             valid=valid, dx=mode.dx, dy=mode.dy, origin=mode.origin)


def _quadratic_minimum(patch: np.ndarray):
    """Stationary point of a least-squares quadratic fit over a 3x3 patch.

    Returns (u, v, value) in cell units relative to the patch center, or
    None when the fit has no interior minimum.
    """
    u = np.array([-1.0, 0.0, 1.0])
    U, V = np.meshgrid(u, u, indexing="ij")
    A = np.stack([np.ones(9), U.ravel(), V.ravel(), U.ravel() ** 2,
                  U.ravel() * V.ravel(), V.ravel() ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(A, patch.ravel(), rcond=None)
    c0, c1, c2, c3, c4, c5 = coef
    H = np.array([[2 * c3, c4], [c4, 2 * c5]])
    det = np.linalg.det(H)
    if det <= 0:
        return None
    uv = np.linalg.solve(H, -np.array([c1, c2]))
    if np.max(np.abs(uv)) > 1.5:
        return None
    value = c0 + c1 * uv[0] + c2 * uv[1] + c3 * uv[0] ** 2 + c4 * uv[0] * uv[1] + c5 * uv[1] ** 2
    return uv[0], uv[1], value


def _quadratic_value(patch: np.ndarray, u: float, v: float) -> float:
    """Least-squares quadratic interpolation of a 3x3 patch at (u, v)."""
    uu = np.array([-1.0, 0.0, 1.0])
    U, V = np.meshgrid(uu, uu, indexing="ij")
    A = np.stack([np.ones(9), U.ravel(), V.ravel(), U.ravel() ** 2,
                  U.ravel() * V.ravel(), V.ravel() ** 2], axis=1)
    coef, *_ = np.linalg.lstsq(A, patch.ravel(), rcond=None)
    return float(coef @ np.array([1.0, u, v, u * u, u * v, v * v]))


def find_c_points(pol: PolarizationField, region: np.ndarray | None = None,
                  s3_min: float = CIRCULAR_S3_MIN,
                  degenerate_fraction: float = 0.5) -> list[CPoint]:
    """Locate C points as sub-grid minima of S1^2 + S2^2.

    Grid-local minima of the normalized linear-polarization residual are
    refined with a quadratic fit on the 3x3 stencil and kept when the
    interpolated |S3|/S0 exceeds s3_min.  The grid is treated as periodic
    in x.  A field circular nearly everywhere (residual below 1e-9 on
    more than degenerate_fraction of the region) yields a warning and no
    discrete points.
    """
    nx, ny = pol.S0.shape
    ok = pol.valid.copy()
    if region is not None:
        ok &= region
    s0 = np.where(pol.S0 > 0, pol.S0, 1.0)
    g = (pol.S1**2 + pol.S2**2) / s0**2
    s3n = pol.S3 / s0

    sel = ok & (pol.S0 > 0)
    if sel.any() and np.mean(g[sel] < 1e-9) > degenerate_fraction:
        warnings.warn("polarization is circular almost everywhere; "
                      "no discrete C points reported")
        return []

    points = []
    for i in range(nx):
        im, ip = (i - 1) % nx, (i + 1) % nx
        for j in range(1, ny - 1):
            if not ok[i, j]:
                continue
            block = np.ix_([im, i, ip], [j - 1, j, j + 1])
            if not ok[block].all():
                continue
            patch = g[block]
            if g[i, j] > patch.min():
                continue
            if g[i, j] > 0.05:  # residual nowhere near circular
                continue
            fit = _quadratic_minimum(patch)
            if fit is None:
                u = v = 0.0
            else:
                u, v, _ = fit
                u = float(np.clip(u, -1.0, 1.0))
                v = float(np.clip(v, -1.0, 1.0))
            s3_here = _quadratic_value(s3n[block], u, v)
            if abs(s3_here) <= s3_min:
                continue
            points.append(CPoint(
                x=float(pol.origin[0] + (i + u) * pol.dx),
                y=float(pol.origin[1] + (j + v) * pol.dy),
                handedness=int(np.sign(s3_here)),
                s3_fraction=float(np.clip(s3_here, -1.0, 1.0)),
            ))
    points.sort(key=lambda p: (p.y, p.x))
    merged: list[CPoint] = []
    min_sep = 0.75 * max(pol.dx, pol.dy)
    for p in points:
        if any(abs(p.x - q.x) < min_sep and abs(p.y - q.y) < min_sep for q in merged):
            continue
        merged.append(p)
    return merged
