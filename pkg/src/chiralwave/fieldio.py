"""Field grid file format: text, line-based, byte-deterministic.

Layout (version 1):

    chiralwave-field 1
    nx <int>
    ny <int>
    dx_nm <float>
    dy_nm <float>
    k <float>            # k a / (2 pi)
    omega <float>        # omega a / (2 pi c)
    n_g <float>          # optional, written only when known
    components Ex Ey Hz
    data
    <ix> <iy> <Re c1> <Im c1> <Re c2> <Im c2> ...

One data line per grid point, ix-major, exactly nx*ny lines.  Floats are
written with Python's shortest round-trip repr and the '.' radix, so a
write -> read -> write cycle is byte-identical.  The y origin is fixed by
convention at -(ny//2)*dy (the waveguide core center line is y = 0); x
starts at 0.  The same container stores permittivity grids under the
single component name Eps (imaginary parts zero, k = omega = 0).

Externally computed mode fields (e.g. from a vendor FEM solver sampled on
the z = 0 plane) can be ingested by writing this format; the lattice
constant is nx*dx by construction.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import FieldFileError
from .geometry import DielectricGrid
from .modesolver import BlochMode

FORMAT_MAGIC = "chiralwave-field"
FORMAT_VERSION = 1

MODE_COMPONENTS = ("Ex", "Ey", "Hz")


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_grid(path, components: dict[str, np.ndarray], dx: float, dy: float,
                k: float, omega: float, n_g: float | None = None):
    names = list(components)
    arrays = [np.asarray(components[n], dtype=complex) for n in names]
    nx, ny = arrays[0].shape
    for name, a in zip(names, arrays):
        if a.shape != (nx, ny):
            raise ValueError(f"component {name} has shape {a.shape}, expected {(nx, ny)}")
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        f"nx {nx}",
        f"ny {ny}",
        f"dx_nm {_fmt(dx)}",
        f"dy_nm {_fmt(dy)}",
        f"k {_fmt(k)}",
        f"omega {_fmt(omega)}",
    ]
    if n_g is not None and math.isfinite(n_g):
        lines.append(f"n_g {_fmt(n_g)}")
    lines.append("components " + " ".join(names))
    lines.append("data")
    for ix in range(nx):
        for iy in range(ny):
            vals = []
            for a in arrays:
                z = a[ix, iy]
                vals.append(_fmt(z.real))
                vals.append(_fmt(z.imag))
            lines.append(f"{ix} {iy} " + " ".join(vals))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_grid(path):
    """Parse the container; returns (header dict, components dict)."""
    with open(path, "r") as fh:
        raw = fh.read().split("\n")
    if raw and raw[-1] == "":
        raw.pop()
    if not raw:
        raise FieldFileError("empty file", line=1)
    first = raw[0].split()
    if len(first) != 2 or first[0] != FORMAT_MAGIC:
        raise FieldFileError(f"not a {FORMAT_MAGIC} file", line=1)
    if first[1] != str(FORMAT_VERSION):
        raise FieldFileError(f"unsupported format version {first[1]}", line=1)

    header: dict = {}
    names: list[str] = []
    lineno = 1
    for lineno, line in enumerate(raw[1:], start=2):
        if line == "data":
            break
        parts = line.split()
        if len(parts) < 2:
            raise FieldFileError(f"malformed header line {line!r}", line=lineno)
        key = parts[0]
        if key == "components":
            names = parts[1:]
        elif key in ("nx", "ny"):
            try:
                header[key] = int(parts[1])
            except ValueError:
                raise FieldFileError(f"invalid integer for {key}", line=lineno)
        elif key in ("dx_nm", "dy_nm", "k", "omega", "n_g"):
            try:
                header[key] = float(parts[1])
            except ValueError:
                raise FieldFileError(f"invalid float for {key}", line=lineno)
            if not math.isfinite(header[key]):
                raise FieldFileError(f"non-finite value for {key}", line=lineno)
        else:
            raise FieldFileError(f"unknown header key {key!r}", line=lineno)
    else:
        raise FieldFileError("missing 'data' marker", line=lineno)

    for key in ("nx", "ny", "dx_nm", "dy_nm", "k", "omega"):
        if key not in header:
            raise FieldFileError(f"header missing {key}", line=lineno)
    if not names:
        raise FieldFileError("header missing component list", line=lineno)

    nx, ny = header["nx"], header["ny"]
    if nx <= 0 or ny <= 0:
        raise FieldFileError("nx and ny must be positive", line=lineno)
    ncols = 2 + 2 * len(names)
    arrays = {n: np.zeros((nx, ny), dtype=complex) for n in names}

    data_start = lineno + 1
    expected = nx * ny
    rows = raw[lineno:]
    if len(rows) < expected:
        bad = data_start + len(rows)
        raise FieldFileError(
            f"short file: expected {expected} data lines, found {len(rows)}", line=bad)
    if len(rows) > expected:
        raise FieldFileError("trailing content after last grid point",
                             line=data_start + expected)
    for offset, line in enumerate(rows):
        lineno = data_start + offset
        parts = line.split()
        if len(parts) != ncols:
            raise FieldFileError(
                f"expected {ncols} columns, found {len(parts)}", line=lineno)
        try:
            ix = int(parts[0])
            iy = int(parts[1])
            vals = [float(p) for p in parts[2:]]
        except ValueError:
            raise FieldFileError("unparsable number", line=lineno)
        want_ix, want_iy = divmod(offset, ny)
        if ix != want_ix or iy != want_iy:
            raise FieldFileError(
                f"grid index ({ix}, {iy}) out of order; expected ({want_ix}, {want_iy})",
                line=lineno)
        if not all(math.isfinite(v) for v in vals):
            raise FieldFileError("non-finite field value", line=lineno)
        for c, name in enumerate(names):
            arrays[name][ix, iy] = complex(vals[2 * c], vals[2 * c + 1])
    return header, arrays


def write_field_file(path, mode: BlochMode):
    """Write a Bloch mode; exact round trip through parse_field_file."""
    _write_grid(path, {"Ex": mode.Ex, "Ey": mode.Ey, "Hz": mode.Hz},
                dx=mode.dx, dy=mode.dy, k=mode.k, omega=mode.omega,
                n_g=mode.n_g)


def parse_field_file(path) -> BlochMode:
    """Read a mode field file.

    Raises FieldFileError (with the offending line number) for a bad
    header, wrong line count, out-of-order indices, non-finite values, or
    a missing field component.  Solver-side classification (band index,
    guidedness, confinement) is not stored in the file; the returned mode
    carries placeholders for those.
    """
    header, arrays = _read_grid(path)
    for name in MODE_COMPONENTS:
        if name not in arrays:
            raise FieldFileError(f"missing component {name}")
    ny = header["ny"]
    dy = header["dy_nm"]
    return BlochMode(
        k=header["k"], omega=header["omega"], band_index=0,
        Ex=arrays["Ex"], Ey=arrays["Ey"], Hz=arrays["Hz"],
        n_g=header.get("n_g", float("nan")),
        guided_flag=False, confinement=float("nan"),
        dx=header["dx_nm"], dy=dy, origin=(0.0, -(ny // 2) * dy),
    )


def write_eps_grid(path, grid: DielectricGrid):
    """Store a permittivity grid in the same container (component Eps)."""
    _write_grid(path, {"Eps": grid.eps.astype(complex)},
                dx=grid.dx, dy=grid.dy, k=0.0, omega=0.0)


def parse_eps_grid(path) -> DielectricGrid:
    header, arrays = _read_grid(path)
    if "Eps" not in arrays:
        raise FieldFileError("missing component Eps")
    ny = header["ny"]
    dy = header["dy_nm"]
    return DielectricGrid(eps=arrays["Eps"].real.copy(), dx=header["dx_nm"],
                          dy=dy, origin=(0.0, -(ny // 2) * dy))
