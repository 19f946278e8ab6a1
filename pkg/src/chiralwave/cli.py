"""Command-line front end and reproducible pipeline.

Subcommands: geometry, bands, mode, polarization, directionality,
purcell, optimize, report, run.  All numeric output is written with
full-precision repr formatting, so re-running with an identical
configuration reproduces every CSV and pixmap byte for byte, independent
of the thread count.  CSVs, reports and pixmaps carry a provenance
header (tool version + configuration hash); field grid files carry only
the format header so that write -> read -> write stays byte-identical.

Configuration files are flat key-value text (``key value`` or
``key = value``, ``#`` comments).  Lengths are in nm; angle keys take
radians, or degrees with a ``_deg`` suffix on the key.  Unknown keys are
rejected.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys

import numpy as np

from . import __version__
from .coupling import (AveragingMask, average_directionality, core_mask,
                       directionality_map, purcell_map)
from .errors import ChiralwaveError, ConfigError
from .fieldio import parse_field_file, write_eps_grid, write_field_file
from .geometry import (SupercellGeometry, build_bulk_dielectric,
                       build_dielectric, hole_boundary_distance)
from .modesolver import band_scan, group_index, projected_bulk_intervals, solve_modes
from .optimizer import (DipoleComparison, compare_dipoles, scan_objective,
                        select_guided_mode)
from .polarization import DipoleState, find_c_points, polarization_field

# configuration schema: key -> (type tag, default)
_CONFIG_SCHEMA = {
    # geometry (lengths in nm)
    "lattice_constant_a": ("float", 433.0),
    "hole_radius_r": ("optfloat", None),
    "first_row_shift_l1": ("optfloat", None),
    "glide": ("bool", True),
    "effective_index": ("float", 2.9),
    "supercell_width_Wy": ("optfloat", None),
    "grid_nx": ("int", 48),
    "grid_ny": ("int", 700),
    "smoothing_width": ("optfloat", None),
    # solver
    "k": ("float", 0.31),
    "n_bands": ("int", 20),
    "pw_cutoff": ("float", 4.0),
    "band": ("band", "auto"),
    "kmin": ("float", 0.30),
    "kmax": ("float", 0.46),
    "nk": ("int", 9),
    # analysis
    "mask": ("choice:half,full", "half"),
    "y_core": ("optfloat", None),
    "exclusion_radius": ("float", 0.0),
    "d_threshold": ("float", 0.9),
    "f_threshold_rel": ("float", 0.5),
    "xi": ("float", 40.0),
    "proximity": ("float", 40.0),
    "h_eff": ("float", 0.64),
    "scan_n_psi": ("int", 181),
    "scan_n_chi": ("int", 91),
    "refine": ("bool", True),
    "weight": ("choice:uniform,intensity", "uniform"),
    "dipole_psi": ("angle", None),
    "dipole_chi": ("angle", None),
}

_ANGLE_KEYS = {k for k, (t, _) in _CONFIG_SCHEMA.items() if t == "angle"}


def _parse_value(key: str, tag: str, raw: str):
    if tag == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if tag == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
    if tag in ("float", "optfloat", "angle"):
        if tag != "float" and raw.lower() in ("none", "auto", "default"):
            return None
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}")
    if tag == "band":
        if raw.lower() == "auto":
            return "auto"
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected 'auto' or an integer, got {raw!r}")
    if tag.startswith("choice:"):
        options = tag.split(":", 1)[1].split(",")
        if raw not in options:
            raise ConfigError(f"{key}: expected one of {options}, got {raw!r}")
        return raw
    raise ConfigError(f"{key}: unhandled type {tag}")  # pragma: no cover


def default_config() -> dict:
    return {k: d for k, (_, d) in _CONFIG_SCHEMA.items()}


def read_config(path: str | None) -> dict:
    """Parse a flat key-value config file onto the defaults."""
    cfg = default_config()
    if path is None:
        return cfg
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" in text:
                key, _, raw = text.partition("=")
                key, raw = key.strip(), raw.strip()
            else:
                parts = text.split(None, 1)
                if len(parts) != 2:
                    raise ConfigError(f"{path}:{lineno}: malformed line {line.rstrip()!r}")
                key, raw = parts
            degrees = False
            if key.endswith("_deg") and key[:-4] in _ANGLE_KEYS:
                key = key[:-4]
                degrees = True
            if key not in _CONFIG_SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            value = _parse_value(key, _CONFIG_SCHEMA[key][0], raw)
            if degrees and value is not None:
                value = math.radians(value)
            cfg[key] = value
    return cfg


def config_hash(cfg: dict) -> str:
    """sha256 over the canonical key=repr(value) dump (sorted keys)."""
    canon = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()


def geometry_from_config(cfg: dict) -> SupercellGeometry:
    return SupercellGeometry(
        lattice_constant_a=cfg["lattice_constant_a"],
        hole_radius_r=cfg["hole_radius_r"],
        first_row_shift_l1=cfg["first_row_shift_l1"],
        glide=cfg["glide"],
        effective_index=cfg["effective_index"],
        supercell_width_Wy=cfg["supercell_width_Wy"],
        grid_nx=cfg["grid_nx"],
        grid_ny=cfg["grid_ny"],
        smoothing_width=cfg["smoothing_width"],
    )


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------

def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _provenance(tag: str, chash: str) -> list[str]:
    return [f"# chiralwave {tag}", f"# version {__version__}", f"# config {chash}"]


def write_csv(path, tag: str, chash: str, columns: list[str], rows,
              extra_comments: list[str] | None = None):
    lines = _provenance(tag, chash)
    for c in extra_comments or []:
        lines.append(f"# {c}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_num(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _colormap_diverging(t: np.ndarray) -> np.ndarray:
    """Linear blue -> white -> red over t in [0, 1]."""
    lo = np.clip(2.0 * t, 0.0, 1.0)
    hi = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    return np.stack([lo, np.minimum(lo, 1.0 - hi), 1.0 - hi], axis=-1)


def _colormap_sequential(t: np.ndarray) -> np.ndarray:
    """Linear black -> red -> yellow over t in [0, 1]."""
    r = np.clip(2.0 * t, 0.0, 1.0)
    g = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    b = np.zeros_like(t)
    return np.stack([r, g, b], axis=-1)


def write_pixmap(path, values: np.ndarray, tag: str, chash: str,
                 vmin: float | None = None, vmax: float | None = None,
                 diverging: bool = False):
    """Binary P6 heatmap with a linear color map.

    Diverging maps run blue -> white -> red with white at the midpoint of
    [vmin, vmax]; sequential maps run black -> red -> yellow.  NaNs are
    painted gray (128, 128, 128).  Pixel (row, col) = (iy from the top,
    ix), i.e. +y is up.
    """
    vals = np.asarray(values, dtype=float)
    finite = np.isfinite(vals)
    if vmin is None:
        vmin = float(vals[finite].min()) if finite.any() else 0.0
    if vmax is None:
        vmax = float(vals[finite].max()) if finite.any() else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    t = np.clip((vals - vmin) / span, 0.0, 1.0)
    rgb = _colormap_diverging(t) if diverging else _colormap_sequential(t)
    img = np.where(finite[..., None], np.round(rgb * 255.0), 128.0).astype(np.uint8)
    img = np.transpose(img, (1, 0, 2))[::-1]  # rows = y (top = +y), cols = x
    header = (f"P6\n" + "".join(c + "\n" for c in _provenance(tag, chash))
              + f"# range {_num(vmin)} {_num(vmax)}\n"
              + f"{values.shape[0]} {values.shape[1]}\n255\n")
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(img.tobytes())


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _parse_dipole(text: str) -> DipoleState:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"dipole must be 'psi,chi' in radians, got {text!r}")
    try:
        psi, chi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConfigError(f"dipole must be numeric 'psi,chi', got {text!r}")
    return DipoleState(psi_d=psi, chi_d=chi)


def _mask_for(cfg: dict, eps_grid, side_override: str | None = None) -> AveragingMask:
    side = side_override or ("full" if cfg["mask"] == "full" else "upper")
    if side == "half":
        side = "upper"
    return core_mask(eps_grid, side=side, y_core=cfg["y_core"],
                     exclusion_radius=cfg["exclusion_radius"])


def _solve_selected(cfg: dict, eps_grid, bulk_grid, k: float):
    modes = solve_modes(eps_grid, k, cfg["n_bands"], cutoff=cfg["pw_cutoff"])
    if cfg["band"] == "auto":
        intervals = projected_bulk_intervals(bulk_grid, k, cutoff=cfg["pw_cutoff"]) \
            if bulk_grid is not None else None
        mode = select_guided_mode(modes, intervals)
        if mode is None:
            raise ChiralwaveError(f"no guided mode found at k = {k}")
        return mode
    idx = int(cfg["band"])
    if not 0 <= idx < len(modes):
        raise ChiralwaveError(f"band index {idx} out of range (n_bands = {len(modes)})")
    return modes[idx]


def _pi_angle(x: float) -> str:
    return f"{x:.6f} rad ({x / math.pi:+.4f} pi)"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_geometry(args) -> int:
    cfg = read_config(args.config)
    grid = build_dielectric(geometry_from_config(cfg))
    write_eps_grid(args.out, grid)
    print(f"wrote {args.out} ({grid.nx} x {grid.ny})")
    return 0


def cmd_bands(args) -> int:
    cfg = read_config(args.config)
    if args.kmin is not None:
        cfg["kmin"] = args.kmin
    if args.kmax is not None:
        cfg["kmax"] = args.kmax
    if args.nk is not None:
        cfg["nk"] = args.nk
    if args.bands is not None:
        cfg["n_bands"] = args.bands
    chash = config_hash(cfg)
    geom = geometry_from_config(cfg)
    eps_grid = build_dielectric(geom)
    bulk = build_bulk_dielectric(geom) if geom.hole_radius_r > 0 else None
    ks = np.linspace(cfg["kmin"], cfg["kmax"], cfg["nk"])
    bs = band_scan(eps_grid, ks, cfg["n_bands"], cutoff=cfg["pw_cutoff"],
                   bulk_eps=bulk, threads=args.threads)
    rows = []
    for i in range(len(bs.k)):
        for b in range(bs.omega.shape[1]):
            rows.append((bs.k[i], b, bs.omega[i, b], bs.n_g[i, b],
                         bs.confinement[i, b], bs.guided[i, b]))
    write_csv(args.out, "bands", chash,
              ["k", "band", "omega", "n_g", "confinement", "guided"], rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def cmd_mode(args) -> int:
    cfg = read_config(args.config)
    if args.k is not None:
        cfg["k"] = args.k
    if args.band is not None:
        cfg["band"] = args.band if args.band == "auto" else int(args.band)
    geom = geometry_from_config(cfg)
    eps_grid = build_dielectric(geom)
    bulk = build_bulk_dielectric(geom) if geom.hole_radius_r > 0 else None
    mode = _solve_selected(cfg, eps_grid, bulk, cfg["k"])
    write_field_file(args.out, mode)
    print(f"wrote {args.out} (band {mode.band_index}, omega = {mode.omega:.6f}, "
          f"n_g = {mode.n_g:.4f})")
    return 0


def _load_mode_and_eps(args, cfg):
    mode = parse_field_file(args.mode)
    eps_grid = None
    if args.config is not None:
        eps_grid = build_dielectric(geometry_from_config(cfg))
        if eps_grid.eps.shape != mode.Hz.shape:
            raise ChiralwaveError(
                f"mode grid {mode.Hz.shape} does not match geometry grid "
                f"{eps_grid.eps.shape}")
        mode.eps = eps_grid.eps
    return mode, eps_grid


def cmd_polarization(args) -> int:
    cfg = read_config(args.config)
    chash = config_hash(cfg)
    mode, eps_grid = _load_mode_and_eps(args, cfg)
    pol = polarization_field(mode, eps_grid.eps if eps_grid is not None else None)
    x, y = pol.x, pol.y
    rows = []
    hand = pol.handedness
    for i in range(pol.S0.shape[0]):
        for j in range(pol.S0.shape[1]):
            if pol.valid[i, j]:
                rows.append((x[i], y[j], pol.S0[i, j], pol.S1[i, j], pol.S2[i, j],
                             pol.S3[i, j], pol.chi[i, j], pol.psi[i, j], hand[i, j]))
            else:
                rows.append((x[i], y[j], pol.S0[i, j], pol.S1[i, j], pol.S2[i, j],
                             pol.S3[i, j], float("nan"), float("nan"), 0))
    write_csv(args.out, "polarization", chash,
              ["x", "y", "S0", "S1", "S2", "S3", "chi", "psi", "handedness"], rows)
    outputs = [args.out]
    if args.cpoints is not None:
        y_core = cfg["y_core"] if cfg["y_core"] is not None else \
            math.sqrt(3) / 2 * mode.period_x
        region = np.abs(pol.y[None, :]) <= y_core
        pts = find_c_points(pol, region=np.broadcast_to(region, pol.S0.shape))
        write_csv(args.cpoints, "cpoints", chash,
                  ["x", "y", "handedness", "s3_over_s0"],
                  [(p.x, p.y, p.handedness, p.s3_fraction) for p in pts])
        outputs.append(args.cpoints)
    print("wrote " + ", ".join(outputs))
    return 0


def cmd_directionality(args) -> int:
    cfg = read_config(args.config)
    if args.mask is not None:
        cfg["mask"] = args.mask
    if args.weight is not None:
        cfg["weight"] = args.weight
    chash = config_hash(cfg)
    mode, eps_grid = _load_mode_and_eps(args, cfg)
    dipole = _parse_dipole(args.dipole)
    dmap = directionality_map(dipole, mode)
    comments = [f"dipole psi {_num(dipole.psi_d)} chi {_num(dipole.chi_d)}"]
    if eps_grid is not None:
        mask = _mask_for(cfg, eps_grid)
        avg = average_directionality(dipole, mode, mask, weight=cfg["weight"])
        comments.append(f"D_avg {_num(avg)} mask {mask.side} weight {cfg['weight']}")
    x, y = mode.x, mode.y
    rows = [(x[i], y[j], dmap[i, j])
            for i in range(mode.nx) for j in range(mode.ny)]
    write_csv(args.out, "directionality", chash, ["x", "y", "D"], rows,
              extra_comments=comments)
    if args.ppm is not None:
        write_pixmap(args.ppm, dmap, "directionality", chash,
                     vmin=-1.0, vmax=1.0, diverging=True)
    print(f"wrote {args.out}")
    return 0


def cmd_purcell(args) -> int:
    cfg = read_config(args.config)
    chash = config_hash(cfg)
    mode, eps_grid = _load_mode_and_eps(args, cfg)
    if eps_grid is None:
        raise ConfigError("purcell requires --config for the permittivity")
    if not math.isfinite(mode.n_g):
        mode.n_g = group_index(mode, eps_grid.eps)
    dipole = _parse_dipole(args.dipole)
    fmap = purcell_map(dipole, mode, eps_grid, h_eff=cfg["h_eff"])
    x, y = mode.x, mode.y
    rows = [(x[i], y[j], fmap[i, j])
            for i in range(mode.nx) for j in range(mode.ny)]
    write_csv(args.out, "purcell", chash, ["x", "y", "F"], rows,
              extra_comments=[f"dipole psi {_num(dipole.psi_d)} chi {_num(dipole.chi_d)}",
                              f"h_eff {_num(cfg['h_eff'])}"])
    if args.ppm is not None:
        write_pixmap(args.ppm, fmap, "purcell", chash)
    print(f"wrote {args.out}")
    return 0


def cmd_optimize(args) -> int:
    cfg = read_config(args.config)
    if args.mask is not None:
        cfg["mask"] = args.mask
    chash = config_hash(cfg)
    mode, eps_grid = _load_mode_and_eps(args, cfg)
    if eps_grid is None:
        raise ConfigError("optimize requires --config for the averaging mask")
    mask = _mask_for(cfg, eps_grid)
    res = scan_objective(mode, mask, n_psi=cfg["scan_n_psi"],
                         n_chi=cfg["scan_n_chi"], refine=cfg["refine"])
    rows = [(res.psi_grid[i], res.chi_grid[j], res.objective[i, j])
            for i in range(len(res.psi_grid)) for j in range(len(res.chi_grid))]
    write_csv(args.out, "objective", chash, ["psi", "chi", "avg_D"], rows)
    if args.report is not None:
        _write_optimize_report(args.report, chash, mode, res)
    print(f"wrote {args.out}; optimum <D> = {res.best_value:.6f} at "
          f"psi = {_pi_angle(res.best_psi)}, chi = {_pi_angle(res.best_chi)}")
    return 0


def _write_optimize_report(path, chash, mode, res):
    lines = _provenance("optimize-report", chash)
    lines += [
        "",
        f"mode: k = {_num(mode.k)}, omega = {_num(mode.omega)}, n_g = {_num(mode.n_g)}",
        f"argmax <D> = {_num(res.best_value)}",
        f"  psi* = {_pi_angle(res.best_psi)}",
        f"  chi* = {_pi_angle(res.best_chi)}",
        f"argmin <D> = {_num(res.worst_value)}",
        f"  psi  = {_pi_angle(res.worst_psi)}",
        f"  chi  = {_pi_angle(res.worst_chi)}",
        f"psi* offset from 0: {_num(abs(res.best_psi))} rad "
        "(unconstrained argmax; exact 0 is not enforced)",
        "refinement trace (level, best value):",
    ]
    for level, val in res.trace:
        lines.append(f"  {level} {_num(val)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _resolve_dipole_tokens(tokens: str, mode, mask, cfg) -> list[tuple[str, DipoleState]]:
    """Expand --dipoles tokens: 'opt', 'circ', or 'psi:chi' numeric pairs."""
    out = []
    opt_res = None
    for tok in tokens.split(","):
        tok = tok.strip()
        if tok == "opt":
            if opt_res is None:
                opt_res = scan_objective(mode, mask, n_psi=cfg["scan_n_psi"],
                                         n_chi=cfg["scan_n_chi"], refine=cfg["refine"])
            out.append(("opt", opt_res.best_dipole))
        elif tok == "circ":
            sign = -1.0
            if any(name == "opt" for name, _ in out):
                sign = math.copysign(1.0, [d for n, d in out if n == "opt"][0].chi_d)
            out.append(("circ", DipoleState(psi_d=0.0, chi_d=sign * math.pi / 4)))
        else:
            pair = tok.split(":")
            if len(pair) != 2:
                raise ConfigError(f"dipole token {tok!r}: use 'opt', 'circ' or 'psi:chi'")
            out.append((tok, DipoleState(psi_d=float(pair[0]), chi_d=float(pair[1]))))
    if len(out) < 2:
        raise ConfigError("--dipoles needs at least two entries")
    return out


def cmd_report(args) -> int:
    cfg = read_config(args.config)
    chash = config_hash(cfg)
    mode, eps_grid = _load_mode_and_eps(args, cfg)
    if eps_grid is None:
        raise ConfigError("report requires --config")
    if not math.isfinite(mode.n_g):
        mode.n_g = group_index(mode, eps_grid.eps)
    os.makedirs(args.out_dir, exist_ok=True)
    mask = _mask_for(cfg, eps_grid)
    named = _resolve_dipole_tokens(args.dipoles, mode, mask, cfg)
    (name_a, dip_a), (name_b, dip_b) = named[0], named[1]
    geom = geometry_from_config(cfg)
    dist = hole_boundary_distance(geom, eps_grid)
    cmp = compare_dipoles(mode, eps_grid, dip_a, dip_b, mask=mask,
                          d_threshold=cfg["d_threshold"],
                          f_threshold_rel=cfg["f_threshold_rel"],
                          xi_nm=cfg["xi"], proximity_nm=cfg["proximity"],
                          h_eff=cfg["h_eff"], hole_distance_nm=dist)
    x, y = mode.x, mode.y
    for name, result in ((name_a, cmp.result_a), (name_b, cmp.result_b)):
        rows = [(x[i], y[j], result.D_map[i, j])
                for i in range(mode.nx) for j in range(mode.ny)]
        write_csv(os.path.join(args.out_dir, f"D_{name}.csv"), "directionality",
                  chash, ["x", "y", "D"], rows)
        rows = [(x[i], y[j], result.purcell_map[i, j])
                for i in range(mode.nx) for j in range(mode.ny)]
        write_csv(os.path.join(args.out_dir, f"F_{name}.csv"), "purcell",
                  chash, ["x", "y", "F"], rows)
        write_pixmap(os.path.join(args.out_dir, f"D_{name}.ppm"), result.D_map,
                     "directionality", chash, vmin=-1.0, vmax=1.0, diverging=True)
        write_pixmap(os.path.join(args.out_dir, f"F_{name}.ppm"),
                     result.purcell_map, "purcell", chash)
    report_path = os.path.join(args.out_dir, "report.txt")
    _write_comparison_report(report_path, chash, mode, cfg,
                             (name_a, dip_a), (name_b, dip_b), cmp)
    print(f"wrote comparison report to {args.out_dir}")
    return 0


def _write_comparison_report(path, chash, mode, cfg, a, b, cmp: DipoleComparison):
    name_a, dip_a = a
    name_b, dip_b = b
    xi = cfg["xi"]

    def block(name, dip, res):
        return [
            f"[{name}]",
            f"  psi_d = {_pi_angle(dip.psi_d)}",
            f"  chi_d = {_pi_angle(dip.chi_d)}",
            f"  <D> over {cfg['mask']} core mask = {_num(res.D_avg)}",
            f"  |D| >= {_num(res.d_threshold)} area = {_num(res.threshold_area)} a^2 "
            f"(+{_num(res.area_pos)} / -{_num(res.area_neg)})",
            f"  area / (pi xi^2), xi = {_num(xi)} nm: {_num(res.placement_ratio)}",
            f"  max Purcell factor = {_num(res.purcell_max)}",
            f"  high-D area with F >= {_num(cmp.f_threshold)}: {_num(res.overlap_area)} a^2",
            f"  high-D area within {_num(cfg['proximity'])} nm of a hole: "
            f"{_num(res.hole_proximity_fraction)}",
        ]

    lines = _provenance("report", chash)
    lines += ["",
              f"mode: k = {_num(mode.k)}, omega = {_num(mode.omega)}, "
              f"n_g = {_num(mode.n_g)}", ""]
    lines += block(name_a, dip_a, cmp.result_a)
    lines.append("")
    lines += block(name_b, dip_b, cmp.result_b)
    lines += [
        "",
        f"high-D area ratio {name_a}/{name_b} = {_num(cmp.area_ratio)}",
        f"Purcell max ratio {name_a}/{name_b} = {_num(cmp.purcell_max_ratio)}",
        f"high-D & high-F overlap ratio {name_a}/{name_b} = {_num(cmp.overlap_ratio)}",
    ]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _self_checks(mode, eps_grid, mask_full, mask_half, best_dipole, cfg, seed):
    """Invariant self-checks; returns list of (name, ok, detail)."""
    rng = np.random.default_rng(seed)
    checks = []
    pol = polarization_field(mode, eps_grid.eps)
    s0 = pol.S0[pol.valid]
    closure = np.abs(pol.S1[pol.valid] ** 2 + pol.S2[pol.valid] ** 2
                     + pol.S3[pol.valid] ** 2 - s0**2) / np.maximum(s0**2, 1e-300)
    checks.append(("stokes_closure", float(closure.max()) < 1e-9,
                   f"max residual {closure.max():.3e}"))

    dmap = directionality_map(best_dipole, mode)
    finite = np.isfinite(dmap)
    checks.append(("directionality_range", bool(np.abs(dmap[finite]).max() <= 1 + 1e-12),
                   f"max |D| = {np.abs(dmap[finite]).max():.6f}"))

    worst = 0.0
    for psi in rng.uniform(-np.pi / 2, np.pi / 2, 5):
        dlin = directionality_map(DipoleState(psi_d=float(psi), chi_d=0.0), mode)
        worst = max(worst, float(np.nanmax(np.abs(dlin))))
    checks.append(("linear_dipole_zero", worst < 1e-12, f"max |D| = {worst:.3e}"))

    psi = float(rng.uniform(-np.pi / 2, np.pi / 2))
    chi = float(rng.uniform(-np.pi / 4, np.pi / 4))
    dp = directionality_map(DipoleState(psi_d=psi, chi_d=chi), mode)
    dm = directionality_map(DipoleState(psi_d=psi, chi_d=-chi), mode)
    anti = float(np.nanmax(np.abs(dp + dm)))
    checks.append(("chi_antisymmetry", anti < 1e-12, f"max |D+ + D-| = {anti:.3e}"))

    full_avg = average_directionality(best_dipole, mode, mask_full)
    checks.append(("full_core_cancellation", abs(full_avg) < 0.02,
                   f"<D>_full = {full_avg:.3e}"))
    half_avg = average_directionality(best_dipole, mode, mask_half)
    checks.append(("half_core_positive", half_avg > 0.0, f"<D>_half = {half_avg:.6f}"))

    f1 = purcell_map(best_dipole, mode, eps_grid, h_eff=cfg["h_eff"])
    scaled = type(mode)(
        k=mode.k, omega=mode.omega, band_index=mode.band_index,
        Ex=mode.Ex * 3.7, Ey=mode.Ey * 3.7, Hz=mode.Hz * 3.7,
        n_g=mode.n_g, guided_flag=mode.guided_flag, confinement=mode.confinement,
        dx=mode.dx, dy=mode.dy, origin=mode.origin, eps=mode.eps)
    f2 = purcell_map(best_dipole, scaled, eps_grid, h_eff=cfg["h_eff"])
    rel = float(np.max(np.abs(f1 - f2) / np.maximum(f1.max(), 1e-300)))
    checks.append(("purcell_rescale_invariance", rel < 1e-10, f"max rel dev {rel:.3e}"))
    return checks


def run_pipeline(cfg: dict, out_dir: str, threads: int = 1, seed: int = 0,
                 field_path: str | None = None):
    """geometry -> solve -> polarization -> optimize -> report.

    With field_path the solver stage is skipped and the mode is ingested
    from the file.  Returns (artifact paths, self-check list); artifacts
    are byte-deterministic for a fixed configuration.
    """
    chash = config_hash(cfg)
    os.makedirs(out_dir, exist_ok=True)
    artifacts = {}

    stage = "geometry"
    try:
        geom = geometry_from_config(cfg)
        eps_grid = build_dielectric(geom)
        bulk = build_bulk_dielectric(geom) if geom.hole_radius_r > 0 else None
        path = os.path.join(out_dir, "eps.grid")
        write_eps_grid(path, eps_grid)
        artifacts["eps"] = path

        if field_path is None:
            stage = "bands"
            ks = np.linspace(cfg["kmin"], cfg["kmax"], cfg["nk"])
            bs = band_scan(eps_grid, ks, cfg["n_bands"], cutoff=cfg["pw_cutoff"],
                           bulk_eps=bulk, threads=threads)
            rows = []
            for i in range(len(bs.k)):
                for b in range(bs.omega.shape[1]):
                    rows.append((bs.k[i], b, bs.omega[i, b], bs.n_g[i, b],
                                 bs.confinement[i, b], bs.guided[i, b]))
            path = os.path.join(out_dir, "bands.csv")
            write_csv(path, "bands", chash,
                      ["k", "band", "omega", "n_g", "confinement", "guided"], rows)
            artifacts["bands"] = path

            stage = "solve"
            mode = _solve_selected(cfg, eps_grid, bulk, cfg["k"])
            path = os.path.join(out_dir, "mode.field")
            write_field_file(path, mode)
            mode = parse_field_file(path)  # downstream sees file-precision data
            artifacts["mode"] = path
        else:
            stage = "ingest"
            mode = parse_field_file(field_path)
            if mode.Hz.shape != eps_grid.eps.shape:
                raise ChiralwaveError(
                    f"ingested grid {mode.Hz.shape} does not match geometry "
                    f"grid {eps_grid.eps.shape}")
        mode.eps = eps_grid.eps
        if not math.isfinite(mode.n_g):
            mode.n_g = group_index(mode, eps_grid.eps)

        stage = "polarization"
        pol = polarization_field(mode, eps_grid.eps)
        x, y = pol.x, pol.y
        rows = []
        hand = pol.handedness
        for i in range(pol.S0.shape[0]):
            for j in range(pol.S0.shape[1]):
                chi = pol.chi[i, j] if pol.valid[i, j] else float("nan")
                psi = pol.psi[i, j] if pol.valid[i, j] else float("nan")
                h = hand[i, j] if pol.valid[i, j] else 0
                rows.append((x[i], y[j], pol.S0[i, j], pol.S1[i, j],
                             pol.S2[i, j], pol.S3[i, j], chi, psi, h))
        path = os.path.join(out_dir, "pol.csv")
        write_csv(path, "polarization", chash,
                  ["x", "y", "S0", "S1", "S2", "S3", "chi", "psi", "handedness"],
                  rows)
        artifacts["pol"] = path
        y_core = cfg["y_core"] if cfg["y_core"] is not None else \
            math.sqrt(3) / 2 * mode.period_x
        region = np.broadcast_to(np.abs(pol.y[None, :]) <= y_core, pol.S0.shape)
        pts = find_c_points(pol, region=region)
        path = os.path.join(out_dir, "cpoints.csv")
        write_csv(path, "cpoints", chash, ["x", "y", "handedness", "s3_over_s0"],
                  [(p.x, p.y, p.handedness, p.s3_fraction) for p in pts])
        artifacts["cpoints"] = path

        stage = "optimize"
        mask_half = _mask_for(cfg, eps_grid, side_override="upper")
        mask_full = core_mask(eps_grid, side="full", y_core=cfg["y_core"],
                              exclusion_radius=cfg["exclusion_radius"])
        res = scan_objective(mode, mask_half, n_psi=cfg["scan_n_psi"],
                             n_chi=cfg["scan_n_chi"], refine=cfg["refine"])
        rows = [(res.psi_grid[i], res.chi_grid[j], res.objective[i, j])
                for i in range(len(res.psi_grid)) for j in range(len(res.chi_grid))]
        path = os.path.join(out_dir, "objective.csv")
        write_csv(path, "objective", chash, ["psi", "chi", "avg_D"], rows)
        artifacts["objective"] = path

        stage = "report"
        best = res.best_dipole
        circ = DipoleState(psi_d=0.0, chi_d=math.copysign(math.pi / 4, best.chi_d))
        dist = hole_boundary_distance(geom, eps_grid)
        cmp = compare_dipoles(mode, eps_grid, best, circ, mask=mask_half,
                              d_threshold=cfg["d_threshold"],
                              f_threshold_rel=cfg["f_threshold_rel"],
                              xi_nm=cfg["xi"], proximity_nm=cfg["proximity"],
                              h_eff=cfg["h_eff"], hole_distance_nm=dist)
        x, y = mode.x, mode.y
        for name, result in (("opt", cmp.result_a), ("circ", cmp.result_b)):
            path = os.path.join(out_dir, f"D_{name}.csv")
            write_csv(path, "directionality", chash, ["x", "y", "D"],
                      [(x[i], y[j], result.D_map[i, j])
                       for i in range(mode.nx) for j in range(mode.ny)])
            artifacts[f"D_{name}"] = path
            path = os.path.join(out_dir, f"F_{name}.csv")
            write_csv(path, "purcell", chash, ["x", "y", "F"],
                      [(x[i], y[j], result.purcell_map[i, j])
                       for i in range(mode.nx) for j in range(mode.ny)])
            artifacts[f"F_{name}"] = path
            write_pixmap(os.path.join(out_dir, f"D_{name}.ppm"), result.D_map,
                         "directionality", chash, vmin=-1.0, vmax=1.0, diverging=True)
            write_pixmap(os.path.join(out_dir, f"F_{name}.ppm"), result.purcell_map,
                         "purcell", chash)
        path = os.path.join(out_dir, "report.txt")
        _write_comparison_report(path, chash, mode, cfg, ("opt", best),
                                 ("circ", circ), cmp)
        artifacts["report"] = path

        stage = "self-check"
        checks = _self_checks(mode, eps_grid, mask_full, mask_half, best, cfg, seed)
    except ChiralwaveError as exc:
        raise ChiralwaveError(f"stage {stage}: {exc}") from exc
    return artifacts, checks


def cmd_run(args) -> int:
    cfg = read_config(args.config)
    artifacts, checks = run_pipeline(cfg, args.out_dir, threads=args.threads,
                                     seed=args.seed, field_path=args.field)
    for name, path in sorted(artifacts.items()):
        print(f"artifact {name}: {path}")
    ok_all = True
    for name, ok, detail in checks:
        print(f"check {name}: {'PASS' if ok else 'FAIL'} ({detail})")
        ok_all &= ok
    return 0 if ok_all else 3


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chiralwave",
        description="Bloch modes, polarization maps, and chiral emitter "
                    "optimization for glide-plane photonic-crystal waveguides.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, default=None,
                       help="flat key-value config file")
        p.add_argument("--threads", type=int,
                       default=int(os.environ.get("CHIRALWAVE_THREADS", "1")),
                       help="worker threads for independent k-point solves")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for randomized self-checks")

    p = sub.add_parser("geometry", help="rasterize the supercell permittivity")
    common(p, config_required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("bands", help="band structure over a k range")
    common(p, config_required=True)
    p.add_argument("--kmin", type=float, default=None)
    p.add_argument("--kmax", type=float, default=None)
    p.add_argument("--nk", type=int, default=None)
    p.add_argument("--bands", type=int, default=None, help="number of bands")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("mode", help="solve and store one Bloch mode")
    common(p, config_required=True)
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--band", default=None, help="band index or 'auto'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mode)

    p = sub.add_parser("polarization", help="Stokes/ellipse maps and C points")
    common(p)
    p.add_argument("--mode", required=True, help="mode field file")
    p.add_argument("--out", required=True)
    p.add_argument("--cpoints", default=None)
    p.set_defaults(func=cmd_polarization)

    p = sub.add_parser("directionality", help="pointwise D map for a dipole")
    common(p)
    p.add_argument("--mode", required=True)
    p.add_argument("--dipole", required=True, help="'psi,chi' in radians")
    p.add_argument("--mask", choices=["half", "full"], default=None)
    p.add_argument("--weight", choices=["uniform", "intensity"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--ppm", default=None, help="optional P6 heatmap path")
    p.set_defaults(func=cmd_directionality)

    p = sub.add_parser("purcell", help="Purcell factor map for a dipole")
    common(p, config_required=True)
    p.add_argument("--mode", required=True)
    p.add_argument("--dipole", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ppm", default=None)
    p.set_defaults(func=cmd_purcell)

    p = sub.add_parser("optimize", help="scan dipole angles against <D>")
    common(p, config_required=True)
    p.add_argument("--mode", required=True)
    p.add_argument("--mask", choices=["half", "full"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", help="side-by-side dipole comparison")
    common(p, config_required=True)
    p.add_argument("--mode", required=True)
    p.add_argument("--dipoles", default="opt,circ",
                   help="comma list of 'opt', 'circ', or 'psi:chi'")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline with self-checks")
    common(p, config_required=True)
    p.add_argument("--field", default=None,
                   help="ingest an externally computed mode field file "
                        "(skips the solver stage)")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ChiralwaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
