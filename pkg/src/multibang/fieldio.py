"""Scalar field serialization: CSV with exact round-trip, and 8-bit PGM
previews with the linear scaling recorded in a sidecar text file."""

import numpy as np

from .grid import Grid2D, ScalarField


def field_to_csv(f, path):
    """Write a field as `n,xmin,xmax` header plus one value per line,
    17 significant digits (bitwise round-trip)."""
    lines = ["%d,%g,%g" % (f.grid.n, -1.0, 1.0)]
    lines.extend("%.17g" % v for v in f.data)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def field_from_csv(path):
    """Read a field written by field_to_csv."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        n = int(header[0])
        data = np.array([float(fh.readline()) for _ in range(n * n)])
    return ScalarField(Grid2D(n), data)


def field_to_pgm(f, path):
    """Write an 8-bit binary PGM preview (min-max scaled) plus a sidecar
    `<path>.txt` recording the scaling and orientation."""
    n = f.grid.n
    vmin = float(np.min(f.data))
    vmax = float(np.max(f.data))
    if vmax > vmin:
        pix = np.round(255.0 * (f.data - vmin) / (vmax - vmin))
    else:
        pix = np.zeros_like(f.data)
    pix = pix.astype(np.uint8).reshape(n, n)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (n, n))
        fh.write(pix.tobytes())
    with open(str(path) + ".txt", "w") as fh:
        fh.write("pgm scaling: value = vmin + (pixel/255) * (vmax - vmin)\n")
        fh.write("vmin = %.17g\n" % vmin)
        fh.write("vmax = %.17g\n" % vmax)
        fh.write("rows top to bottom follow x2 from -1 to 1; "
                 "columns left to right follow x1 from -1 to 1\n")
