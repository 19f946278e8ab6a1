"""Regenerate the bundled synthetic rotation-field fixture.

The in-plane field has the Jones structure e(x, y) = (cos t(y), i sin t(y))
with t(y) = 0.1 + 0.3*pi*sin(2*pi*y/Wy); Hz is set to 1.  Run from the
repository root: python3 tests/data/gen_synthetic.py
"""

import numpy as np

from chiralwave.fieldio import write_field_file
from chiralwave.modesolver import BlochMode

NX, NY = 12, 24
DX = DY = 10.0  # nm


def build_mode() -> BlochMode:
    y = (np.arange(NY) - NY // 2) * DY
    wy = NY * DY
    theta = 0.1 + 0.3 * np.pi * np.sin(2 * np.pi * y / wy)
    ex = np.broadcast_to(np.cos(theta)[None, :], (NX, NY)).astype(complex)
    ey = np.broadcast_to(1j * np.sin(theta)[None, :], (NX, NY)).astype(complex)
    hz = np.ones((NX, NY), dtype=complex)
    return BlochMode(k=0.25, omega=0.3, band_index=0, Ex=ex.copy(), Ey=ey.copy(),
                     Hz=hz, n_g=5.0, guided_flag=True, confinement=1.0,
                     dx=DX, dy=DY, origin=(0.0, -(NY // 2) * DY))


if __name__ == "__main__":
    write_field_file("tests/data/synthetic_rotation.field", build_mode())
    print("wrote tests/data/synthetic_rotation.field")
