"""Plane-wave Bloch eigensolver for 2D TE modes of the waveguide supercell.

Solves div(eps^-1 grad Hz) + (w/c)^2 Hz = 0 under the Bloch condition
Hz(x + a, y) = exp(i k a) Hz(x, y), with the supercell periodic in y.
The in-plane electric field follows from the frequency-domain curl,
Ex = (i / (w eps)) dHz/dy, Ey = -(i / (w eps)) dHz/dx.

Conventions: k is expressed as k a / (2 pi) in [0, 0.5], frequencies as
w a / (2 pi c).  Fields are returned on the real-space grid of the input
DielectricGrid, Bloch phase included, with the global phase fixed so that
the grid point with the largest |Ey| is real and positive.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateFluxError, SolverError
from .geometry import SQRT3, DielectricGrid

DEFAULT_CUTOFF = 4.0  # plane-wave cutoff |G| <= cutoff * 2*pi/a
GUIDED_CONFINEMENT = 0.5
TRACK_OVERLAP_MIN = 0.5


@dataclass
class BlochMode:
    """One Bloch eigenmode on the supercell grid.

    k in units of 2*pi/a, omega in units of 2*pi*c/a.  Ex, Ey, Hz have
    shape (nx, ny) on the same grid as the dielectric (spacings dx, dy in
    nm, grid origin in nm); they carry an arbitrary common amplitude.
    """

    k: float
    omega: float
    band_index: int
    Ex: np.ndarray
    Ey: np.ndarray
    Hz: np.ndarray
    n_g: float
    guided_flag: bool
    confinement: float
    dx: float
    dy: float
    origin: tuple[float, float]
    eps: np.ndarray | None = None

    @property
    def nx(self) -> int:
        return self.Hz.shape[0]

    @property
    def ny(self) -> int:
        return self.Hz.shape[1]

    @property
    def period_x(self) -> float:
        """Lattice constant a in nm."""
        return self.nx * self.dx

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.dy * np.arange(self.ny)

    def jones_field(self) -> np.ndarray:
        """In-plane field as a (nx, ny, 2) complex array."""
        return np.stack([self.Ex, self.Ey], axis=-1)


@dataclass
class BandStructure:
    """Band samples over a k list, tracked by modal overlap.

    omega, n_g, confinement, guided have shape (nk, n_bands).  The light
    line is omega = k for n_clad = 1 in the units used here.
    bulk_intervals[i] lists (lo, hi) frequency intervals of the bulk-band
    continuum at k[i], when a bulk cell was supplied.
    """

    k: np.ndarray
    omega: np.ndarray
    n_g: np.ndarray
    confinement: np.ndarray
    guided: np.ndarray
    bulk_intervals: list | None = None

    @property
    def light_line(self) -> np.ndarray:
        return self.k.copy()


class _PlaneWaveBasis:
    """Truncated reciprocal-lattice basis for the supercell.

    Keeps integer indices (mx, my) with mx^2 + (my/wy)^2 <= cutoff^2 and
    the corresponding G components in units of 2*pi/a.
    """

    def __init__(self, nx: int, ny: int, wy: float, cutoff: float):
        mx_max = int(np.floor(cutoff))
        my_max = int(np.floor(cutoff * wy))
        if 4 * mx_max + 2 > nx or 4 * my_max + 2 > ny:
            raise SolverError(
                f"grid {nx}x{ny} too coarse for plane-wave cutoff {cutoff}; "
                "refine the grid or lower the cutoff"
            )
        mx = np.arange(-mx_max, mx_max + 1)
        my = np.arange(-my_max, my_max + 1)
        MX, MY = np.meshgrid(mx, my, indexing="ij")
        keep = (MX.astype(float) ** 2 + (MY / wy) ** 2) <= cutoff**2 + 1e-12
        self.mx = MX[keep].astype(int)
        self.my = MY[keep].astype(int)
        self.gx = self.mx.astype(float)          # units of 2*pi/a
        self.gy = self.my.astype(float) / wy     # units of 2*pi/a
        self.n = len(self.mx)
        self.nx = nx
        self.ny = ny
        self.wy = wy


class _Discretization:
    """Plane-wave basis plus the inverse-permittivity coupling block.

    The block is the matrix inverse of the permittivity Fourier matrix
    eps_hat(G - G') (inverse rule), which converges an order of magnitude
    faster in the cutoff than transforming 1/eps directly.  It is
    k-independent, so band scans assemble it once.
    """

    def __init__(self, eps: np.ndarray, wy: float, cutoff: float):
        nx, ny = eps.shape
        self.basis = _PlaneWaveBasis(nx, ny, wy, cutoff)
        b = self.basis
        ehat = np.fft.fft2(eps) / eps.size
        dix = (b.mx[:, None] - b.mx[None, :]) % nx
        diy = (b.my[:, None] - b.my[None, :]) % ny
        block = ehat[dix, diy]
        inv = np.linalg.inv(block)
        self.inv_eps = 0.5 * (inv + inv.conj().T)


def _assemble(disc: _Discretization, kx: float, ky: float) -> np.ndarray:
    """Dense TE operator in the plane-wave basis; eigenvalues are (wa/2pic)^2.

    Works in units where all wavenumbers carry a factor 2*pi/a, which
    cancels against the same factor in the frequency, so the matrix is
    assembled directly from (k+G) components expressed in 2*pi/a.
    """
    b = disc.basis
    kgx = kx + b.gx
    kgy = ky + b.gy
    dot = np.multiply.outer(kgx, kgx) + np.multiply.outer(kgy, kgy)
    A = dot * disc.inv_eps
    return 0.5 * (A + A.conj().T)


def _lowest_eigs(A: np.ndarray, n_bands: int):
    n_bands = min(n_bands, A.shape[0])
    try:
        vals, vecs = scipy.linalg.eigh(A, subset_by_index=[0, n_bands - 1])
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise SolverError(f"eigensolver failed to converge: {exc}") from exc
    resid = np.linalg.norm(A @ vecs - vecs * vals[None, :], axis=0)
    scale = max(np.abs(vals).max(), 1e-30)
    if resid.max() > 1e-8 * max(scale, np.linalg.norm(A, ord=1)):
        raise SolverError(
            f"eigenpair residuals too large: max {resid.max():.3e} at scale {scale:.3e}"
        )
    return np.clip(vals, 0.0, None), vecs


def _mode_grids(disc: _Discretization, coeffs: np.ndarray, kx: float, ky: float,
                omega: float):
    """Hz, Ex, Ey on the grid from plane-wave coefficients (Bloch phase in).

    E is reconstructed spectrally through the same inverse-permittivity
    block used in the operator, E = (i / (omega eps)) (dHz/dy, -dHz/dx),
    which keeps the eps-weighted mode orthogonality exact on the grid.
    """
    b = disc.basis
    nx, ny = b.nx, b.ny
    ix = b.mx % nx
    iy = b.my % ny

    def togrid(c):
        spec = np.zeros((nx, ny), dtype=complex)
        spec[ix, iy] = c
        return np.fft.ifft2(spec) * (nx * ny)

    Hz = togrid(coeffs)
    if omega > 1e-12:
        ex_c = -(disc.inv_eps @ ((ky + b.gy) * coeffs)) / omega
        ey_c = (disc.inv_eps @ ((kx + b.gx) * coeffs)) / omega
        Ex = togrid(ex_c)
        Ey = togrid(ey_c)
    else:
        Ex = np.zeros_like(Hz)
        Ey = np.zeros_like(Hz)

    x = np.arange(nx) / nx
    bloch = np.exp(1j * 2 * np.pi * kx * x)[:, None]
    if ky != 0.0:
        y = np.arange(ny) / ny * b.wy
        bloch = bloch * np.exp(1j * 2 * np.pi * ky * y)[None, :]
    return Hz * bloch, Ex * bloch, Ey * bloch


def _fix_phase(Ex: np.ndarray, Ey: np.ndarray, Hz: np.ndarray):
    """Rotate the global phase so the largest-|Ey| point is real positive.

    Falls back to Ex, then Hz, when the preferred component vanishes.
    """
    for comp in (Ey, Ex, Hz):
        mags = np.abs(comp)
        idx = np.unravel_index(np.argmax(mags), mags.shape)
        if mags[idx] > 0:
            phase = np.exp(-1j * np.angle(comp[idx]))
            return Ex * phase, Ey * phase, Hz * phase
    return Ex, Ey, Hz


def _confinement(Ex, Ey, y_nm, half_width_nm) -> float:
    e2 = np.abs(Ex) ** 2 + np.abs(Ey) ** 2
    total = e2.sum()
    if total == 0:
        return 0.0
    core = np.abs(y_nm) <= half_width_nm
    return float(e2[:, core].sum() / total)


def group_index(mode: BlochMode, eps: np.ndarray | None = None) -> float:
    """Energy-velocity group index 2c(U_e + U_h) / |x-directed Poynting flux|.

    Uses the permittivity the mode was solved on (or the one supplied) for
    the electric energy; without one, relies on U_e = U_h, exact for
    lossless eigenmodes.  Independent of field normalization.  Raises
    DegenerateFluxError when the flux is below 1e-12 of the energy scale.
    """
    if eps is None:
        eps = mode.eps
    e2 = np.abs(mode.Ex) ** 2 + np.abs(mode.Ey) ** 2
    u_h = 0.25 * float(np.sum(np.abs(mode.Hz) ** 2))
    if eps is not None:
        u_e = 0.25 * float(np.sum(eps * e2))
    else:
        u_e = u_h
    flux = 0.5 * float(np.sum(np.real(mode.Ey * np.conj(mode.Hz))))
    energy = u_e + u_h
    if abs(flux) < 1e-12 * energy:
        raise DegenerateFluxError(
            f"Poynting flux {flux:.3e} below 1e-12 of energy scale {energy:.3e}"
        )
    return energy / abs(flux)


def solve_modes(eps: DielectricGrid, k: float, n_bands: int,
                cutoff: float = DEFAULT_CUTOFF, _ky: float = 0.0,
                core_half_width_nm: float | None = None) -> list[BlochMode]:
    """Lowest TE Bloch modes of the supercell at wavenumber k (units 2*pi/a).

    Modes come back sorted by frequency with fields on the input grid.
    guided_flag marks modes below the light line with in-core |E|^2
    fraction above 0.5 (confinement stands in for the 3D leakage
    classification).  Negative k (the time-reversed half of the zone) is
    accepted; band_scan works on the reduced zone [0, 0.5].
    """
    if not -0.5 - 1e-12 <= k <= 0.5 + 1e-12:
        raise ValueError(f"k = {k} outside the Brillouin zone [-0.5, 0.5] (units 2*pi/a)")
    arr = eps.eps
    wy = eps.period_y / eps.period_x
    disc = _Discretization(arr, wy, cutoff)
    A = _assemble(disc, k, _ky)
    vals, vecs = _lowest_eigs(A, n_bands)

    if core_half_width_nm is None:
        core_half_width_nm = SQRT3 / 2.0 * eps.period_x
    y_nm = eps.y
    modes = []
    for b in range(len(vals)):
        omega = float(np.sqrt(vals[b]))  # units 2*pi*c/a after the 2*pi cancellation
        Hz, Ex, Ey = _mode_grids(disc, vecs[:, b], k, _ky, omega)
        Ex, Ey, Hz = _fix_phase(Ex, Ey, Hz)
        conf = _confinement(Ex, Ey, y_nm, core_half_width_nm)
        try:
            ng = group_index_from_fields(arr, Ex, Ey, Hz)
        except DegenerateFluxError:
            ng = np.inf
        mode = BlochMode(
            k=k, omega=omega, band_index=b, Ex=Ex, Ey=Ey, Hz=Hz,
            n_g=ng, guided_flag=bool(omega < abs(k) and conf > GUIDED_CONFINEMENT),
            confinement=conf, dx=eps.dx, dy=eps.dy, origin=eps.origin, eps=arr,
        )
        modes.append(mode)
    return modes


def group_index_from_fields(eps: np.ndarray, Ex, Ey, Hz) -> float:
    """group_index for raw field arrays (helper shared with solve_modes)."""
    u_e = 0.25 * float(np.sum(eps * (np.abs(Ex) ** 2 + np.abs(Ey) ** 2)))
    u_h = 0.25 * float(np.sum(np.abs(Hz) ** 2))
    flux = 0.5 * float(np.sum(np.real(Ey * np.conj(Hz))))
    energy = u_e + u_h
    if energy == 0 or abs(flux) < 1e-12 * energy:
        raise DegenerateFluxError("flux below 1e-12 of energy scale")
    return energy / abs(flux)


def _solve_coeffs(disc, k, n_bands):
    A = _assemble(disc, k, 0.0)
    return _lowest_eigs(A, n_bands)


def band_scan(eps: DielectricGrid, k_samples, n_bands: int,
              cutoff: float = DEFAULT_CUTOFF,
              bulk_eps: DielectricGrid | None = None,
              n_ky: int = 16, threads: int = 1) -> BandStructure:
    """Band structure over a k list, bands tracked by eigenvector overlap.

    Tracking pairs eigenvectors of neighbouring k points through their
    coefficient overlaps (linear assignment); when every pairing overlap
    falls below 0.5 the scan warns and keeps plain energy ordering for
    that step.  With a bulk cell supplied, the projected bulk-band
    continuum is attached per k.
    """
    k_samples = np.asarray(list(k_samples), dtype=float)
    if len(k_samples) == 0:
        raise ValueError("k_samples is empty")
    if np.any(np.diff(k_samples) <= 0):
        raise ValueError("k_samples must be strictly increasing")
    if k_samples[0] < 0 or k_samples[-1] > 0.5 + 1e-12:
        raise ValueError("k_samples must lie in [0, 0.5] (units 2*pi/a)")

    arr = eps.eps
    wy = eps.period_y / eps.period_x
    basis = _PlaneWaveBasis(eps.nx, eps.ny, wy, cutoff)
    eta = _inv_eps_fourier(arr)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sols = list(pool.map(
                lambda kk: _solve_coeffs(arr, basis, eta, kk, n_bands), k_samples))
    else:
        sols = [_solve_coeffs(arr, basis, eta, kk, n_bands) for kk in k_samples]

    nk = len(k_samples)
    nb = min(n_bands, basis.n)
    omega = np.zeros((nk, nb))
    ngs = np.zeros((nk, nb))
    confs = np.zeros((nk, nb))
    guided = np.zeros((nk, nb), dtype=bool)

    core_half = SQRT3 / 2.0 * eps.period_x
    y_nm = eps.y
    prev_vecs = None
    order = np.arange(nb)
    for i, (vals, vecs) in enumerate(sols):
        if prev_vecs is not None:
            ov = np.abs(prev_vecs.conj().T @ vecs)
            if ov.max() < TRACK_OVERLAP_MIN:
                warnings.warn(
                    f"band tracking ambiguous at k = {k_samples[i]:.4f}; "
                    "falling back to energy ordering")
                perm = np.arange(nb)
            else:
                _, perm = linear_sum_assignment(-ov)
            vals = vals[perm]
            vecs = vecs[:, perm]
        for b in range(nb):
            w = float(np.sqrt(vals[b]))
            omega[i, b] = w
            Hz, dHx, dHy = _spectral_grids(basis, vecs[:, b], k_samples[i], 0.0)
            w_actual = 2 * np.pi * w
            if w_actual > 1e-12:
                Ex = 1j / (w_actual * arr) * dHy
                Ey = -1j / (w_actual * arr) * dHx
            else:
                Ex = np.zeros_like(Hz)
                Ey = np.zeros_like(Hz)
            confs[i, b] = _confinement(Ex, Ey, y_nm, core_half)
            try:
                ngs[i, b] = group_index_from_fields(arr, Ex, Ey, Hz)
            except DegenerateFluxError:
                ngs[i, b] = np.inf
            guided[i, b] = (w < k_samples[i]) and (confs[i, b] > GUIDED_CONFINEMENT)
        prev_vecs = vecs

    bulk = None
    if bulk_eps is not None:
        bulk = [projected_bulk_intervals(bulk_eps, kk, n_bands=max(8, nb // 3),
                                         cutoff=cutoff, n_ky=n_ky)
                for kk in k_samples]
    return BandStructure(k=k_samples, omega=omega, n_g=ngs,
                         confinement=confs, guided=guided, bulk_intervals=bulk)


def projected_bulk_intervals(bulk_eps: DielectricGrid, kx: float,
                             n_bands: int = 8, cutoff: float = DEFAULT_CUTOFF,
                             n_ky: int = 16) -> list[tuple[float, float]]:
    """Frequency intervals of the bulk continuum at fixed kx.

    Sweeps ky over half the rectangular-cell Brillouin zone and merges the
    per-band frequency ranges; interval ends are sampled, so boundaries
    are accurate only to the ky sampling.
    """
    arr = bulk_eps.eps
    wy = bulk_eps.period_y / bulk_eps.period_x
    basis = _PlaneWaveBasis(bulk_eps.nx, bulk_eps.ny, wy, cutoff)
    eta = _inv_eps_fourier(arr)
    ky_max = 0.5 / wy
    kys = np.linspace(0.0, ky_max, n_ky)
    bands = np.zeros((n_ky, n_bands))
    for j, ky in enumerate(kys):
        A = _assemble(basis, eta, kx, ky)
        vals, _ = _lowest_eigs(A, n_bands)
        bands[j] = np.sqrt(vals[:n_bands])
    intervals = [(float(bands[:, b].min()), float(bands[:, b].max()))
                 for b in range(n_bands)]
    intervals.sort()
    merged = [intervals[0]]
    for lo, hi in intervals[1:]:
        if lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def in_bulk_gap(intervals: list[tuple[float, float]], omega: float) -> bool:
    """True when omega falls outside every bulk continuum interval."""
    return all(not (lo <= omega <= hi) for lo, hi in intervals)
