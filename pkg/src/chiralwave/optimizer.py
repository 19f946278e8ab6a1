"""Dipole-polarization scans against the position-averaged directionality.

The objective <D>(psi_d, chi_d) is evaluated on a dense angle grid (the
surface is cheap, 2D and can be multi-modal), followed by deterministic
local refinement around the best grid point.  Ties break toward the
smallest |chi|, then smallest |psi|, then signed values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .coupling import (AveragingMask, DirectionalityResult, area_metrics,
                       core_mask, directionality_map, purcell_map)
from .geometry import DielectricGrid
from .modesolver import (DEFAULT_CUTOFF, BlochMode, in_bulk_gap,
                         projected_bulk_intervals, solve_modes)
from .polarization import DipoleState, angles_to_jones

DEFAULT_N_PSI = 181
DEFAULT_N_CHI = 91


@dataclass
class OptimizationResult:
    """Objective map over (psi_d, chi_d) with refined extrema."""

    psi_grid: np.ndarray
    chi_grid: np.ndarray
    objective: np.ndarray  # (n_psi, n_chi)
    best_psi: float
    best_chi: float
    best_value: float
    worst_psi: float
    worst_chi: float
    worst_value: float
    trace: list  # (level, best_value) per refinement level

    @property
    def best_dipole(self) -> DipoleState:
        return DipoleState(psi_d=self.best_psi, chi_d=self.best_chi)


def _objective_rows(E: np.ndarray, psis: np.ndarray, chis: np.ndarray,
                    chunk: int = 2048) -> np.ndarray:
    """<D> for the outer product of angle lists; E has shape (2, npts)."""
    PP, CC = np.meshgrid(psis, chis, indexing="ij")
    d = angles_to_jones(CC.ravel(), PP.ravel())  # (nd, 2)
    nd = d.shape[0]
    out = np.empty(nd)
    Ec = E.conj()
    for start in range(0, nd, chunk):
        dd = d[start:start + chunk].conj()
        gp = np.abs(dd @ E) ** 2
        gm = np.abs(dd @ Ec) ** 2
        tot = gp + gm
        defined = tot > 1e-14 * tot.max(axis=1, keepdims=True)
        ratio = np.where(defined, (gp - gm) / np.where(defined, tot, 1.0), np.nan)
        out[start:start + chunk] = np.nanmean(ratio, axis=1)
    return out.reshape(len(psis), len(chis))


def _pick_extremum(psis, chis, obj, sign: int):
    """(psi, chi, value) of the max (sign=+1) or min (sign=-1) with
    deterministic tie-breaking."""
    target = (sign * obj).max()
    ii, jj = np.nonzero(sign * obj == target)
    order = np.lexsort((psis[ii], chis[jj], np.abs(psis[ii]), np.abs(chis[jj])))
    i, j = ii[order[0]], jj[order[0]]
    return float(psis[i]), float(chis[j]), float(obj[i, j])


def scan_objective(mode: BlochMode, mask: AveragingMask,
                   n_psi: int = DEFAULT_N_PSI, n_chi: int = DEFAULT_N_CHI,
                   refine: bool = True, refine_levels: int = 2,
                   refine_factor: int = 10, refine_points: int = 21) -> OptimizationResult:
    """Dense <D> scan over dipole angles with optional local refinement.

    psi runs over [-pi/2, pi/2] and chi over [-pi/4, pi/4] (symmetric
    about zero, so the map is antisymmetric under chi -> -chi).  Each
    refinement level re-scans a window of one coarse step around the
    current best point with a refine_factor finer spacing; the best value
    can only improve because the seed stays inside the window.
    """
    if n_psi < 8 or n_chi < 8:
        raise ValueError("n_psi and n_chi must be at least 8")
    psis = np.linspace(-np.pi / 2, np.pi / 2, n_psi)
    chis = np.linspace(-np.pi / 4, np.pi / 4, n_chi)
    E = np.stack([mode.Ex[mask.mask], mode.Ey[mask.mask]])
    obj = _objective_rows(E, psis, chis)

    best_psi, best_chi, best_value = _pick_extremum(psis, chis, obj, +1)
    worst_psi, worst_chi, worst_value = _pick_extremum(psis, chis, obj, -1)
    trace = [(0, best_value)]

    if refine:
        dpsi = psis[1] - psis[0]
        dchi = chis[1] - chis[0]
        for level in range(1, refine_levels + 1):
            p = np.unique(np.clip(
                np.linspace(best_psi - dpsi, best_psi + dpsi, refine_points),
                -np.pi / 2, np.pi / 2))
            c = np.unique(np.clip(
                np.linspace(best_chi - dchi, best_chi + dchi, refine_points),
                -np.pi / 4, np.pi / 4))
            local = _objective_rows(E, p, c)
            lp, lc, lv = _pick_extremum(p, c, local, +1)
            if lv >= best_value:
                best_psi, best_chi, best_value = lp, lc, lv
            trace.append((level, best_value))
            dpsi /= refine_factor
            dchi /= refine_factor

    return OptimizationResult(
        psi_grid=psis, chi_grid=chis, objective=obj,
        best_psi=best_psi, best_chi=best_chi, best_value=best_value,
        worst_psi=worst_psi, worst_chi=worst_chi, worst_value=worst_value,
        trace=trace,
    )


@dataclass
class DipoleComparison:
    """Side-by-side area metrics of two dipole candidates on one mode."""

    dipole_a: DipoleState
    dipole_b: DipoleState
    result_a: DirectionalityResult
    result_b: DirectionalityResult
    area_ratio: float       # high-D area, a vs b
    purcell_max_ratio: float
    overlap_ratio: float    # high-D AND high-F area, a vs b
    f_threshold: float


def compare_dipoles(mode: BlochMode, eps: DielectricGrid,
                    dipole_a: DipoleState, dipole_b: DipoleState,
                    mask: AveragingMask | None = None,
                    d_threshold: float = 0.9, f_threshold_rel: float = 0.5,
                    xi_nm: float = 40.0, proximity_nm: float = 40.0,
                    h_eff: float = 0.64,
                    hole_distance_nm: np.ndarray | None = None) -> DipoleComparison:
    """Compare two dipoles: high-D areas, Purcell overlap, placement disk.

    The common Purcell threshold is f_threshold_rel times the maximum of
    the reference (second) dipole's map over the counting region, so the
    overlap areas of both candidates are measured against the same bar.
    Counting runs over the dielectric core band (both halves); D_avg uses
    the supplied averaging mask (default upper half core).
    """
    if mask is None:
        mask = core_mask(eps, side="upper")
    region_mask = core_mask(eps, side="full", y_core=mask.y_core).mask

    da = directionality_map(dipole_a, mode)
    db = directionality_map(dipole_b, mode)
    fa = purcell_map(dipole_a, mode, eps, h_eff=h_eff)
    fb = purcell_map(dipole_b, mode, eps, h_eff=h_eff)
    f_thr = f_threshold_rel * float(fb[region_mask].max())

    kw = dict(dx=mode.dx, dy=mode.dy, a_nm=mode.period_x,
              d_threshold=d_threshold, f_threshold=f_thr,
              region=region_mask, avg_mask=mask.mask,
              hole_distance_nm=hole_distance_nm,
              proximity_nm=proximity_nm, xi_nm=xi_nm)
    ra = area_metrics(da, fa, **kw)
    rb = area_metrics(db, fb, **kw)

    def _ratio(x, y):
        return x / y if y > 0 else float("inf") if x > 0 else 1.0

    return DipoleComparison(
        dipole_a=dipole_a, dipole_b=dipole_b, result_a=ra, result_b=rb,
        area_ratio=_ratio(ra.threshold_area, rb.threshold_area),
        purcell_max_ratio=_ratio(ra.purcell_max, rb.purcell_max),
        overlap_ratio=_ratio(ra.overlap_area, rb.overlap_area),
        f_threshold=f_thr,
    )


@dataclass
class KSweepRow:
    k: float
    band_index: int
    omega: float
    n_g: float
    best_psi: float
    best_chi: float
    best_value: float


def select_guided_mode(modes: list[BlochMode],
                       bulk_intervals: list | None = None,
                       min_confinement: float = 0.75) -> BlochMode | None:
    """Best guided-mode candidate: flagged guided, inside the bulk gap
    when intervals are known, highest confinement."""
    cands = [m for m in modes if m.guided_flag and m.confinement >= min_confinement]
    if bulk_intervals is not None:
        cands = [m for m in cands if in_bulk_gap(bulk_intervals, m.omega)]
    if not cands:
        return None
    return max(cands, key=lambda m: (m.confinement, -m.omega))


def k_sweep(eps: DielectricGrid, k_list, mask_side: str = "upper",
            n_bands: int = 20, cutoff: float | None = None,
            bulk_eps: DielectricGrid | None = None,
            n_psi: int = DEFAULT_N_PSI, n_chi: int = DEFAULT_N_CHI,
            refine: bool = True) -> tuple[list[KSweepRow], list[OptimizationResult]]:
    """Optimal dipole per wavenumber along the guided band.

    Unguided k points are skipped with a warning.  Returns the per-k
    optimum table and the full scan results.
    """
    if cutoff is None:
        cutoff = DEFAULT_CUTOFF
    rows = []
    results = []
    mask = core_mask(eps, side=mask_side)
    for k in k_list:
        modes = solve_modes(eps, k, n_bands, cutoff=cutoff)
        intervals = None
        if bulk_eps is not None:
            intervals = projected_bulk_intervals(bulk_eps, k, cutoff=cutoff)
        mode = select_guided_mode(modes, intervals)
        if mode is None:
            warnings.warn(f"no guided mode at k = {k:.4f}; skipped")
            continue
        res = scan_objective(mode, mask, n_psi=n_psi, n_chi=n_chi, refine=refine)
        rows.append(KSweepRow(k=float(k), band_index=mode.band_index,
                              omega=mode.omega, n_g=mode.n_g,
                              best_psi=res.best_psi, best_chi=res.best_chi,
                              best_value=res.best_value))
        results.append(res)
    return rows, results
