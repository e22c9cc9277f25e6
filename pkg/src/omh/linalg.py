"""Dense matrix helpers and cosine-similarity kernels.

Matrices are plain 2-D ``float64`` numpy arrays in C (row-major) order.
Everything here is a pure function of its arguments; inputs are never
modified in place.
"""

from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, ZeroNormRow

NORM_FLOOR = 1e-12


def as_matrix(x, name="matrix"):
    """Return ``x`` as a finite, C-contiguous float64 2-D array."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def _row_norms(x, which):
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    bad = np.flatnonzero(norms < NORM_FLOOR)
    if bad.size:
        raise ZeroNormRow(int(bad[0]), which)
    return norms


def normalize_rows(x, which="a"):
    x = as_matrix(x, which)
    return x / _row_norms(x, which)[:, None]


def cosine_sim(a, b):
    """Pairwise cosine similarity between the rows of ``a`` (K x D) and ``b`` (L x D)."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"row dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    s = normalize_rows(a, "a") @ normalize_rows(b, "b").T
    return np.clip(s, -1.0, 1.0)


def cosine_sim_plus(a, b):
    """Cosine similarity with negative entries clipped to zero."""
    return np.maximum(cosine_sim(a, b), 0.0)


def _normalize_backward(x, grad_unit):
    # d/dx of f(x/|x|) given g = df/d(x/|x|), row-wise
    norms = _row_norms(x, "x")
    unit = x / norms[:, None]
    radial = np.einsum("ij,ij->i", grad_unit, unit)
    return (grad_unit - radial[:, None] * unit) / norms[:, None]


def cosine_sim_backward(a, b, grad, clip=False):
    """Vector-Jacobian product of :func:`cosine_sim` (or the clipped variant).

    ``grad`` is dL/dS for S = cosine_sim(a, b). Returns ``(dL/da, dL/db)``.
    With ``clip=True`` the gradient is masked where the similarity is not
    strictly positive, matching :func:`cosine_sim_plus` (subgradient 0 at 0).
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    grad = np.asarray(grad, dtype=np.float64)
    ua = normalize_rows(a, "a")
    ub = normalize_rows(b, "b")
    if clip:
        grad = grad * (ua @ ub.T > 0.0)
    ga = _normalize_backward(a, grad @ ub)
    gb = _normalize_backward(b, grad.T @ ua)
    return ga, gb


def row_argmax(m):
    """Index of the largest entry in each row; ties go to the lowest column."""
    m = as_matrix(m)
    if m.size == 0:
        raise DimensionMismatch("empty matrix")
    return np.argmax(m, axis=1)


def col_argmax(m):
    m = as_matrix(m)
    if m.size == 0:
        raise DimensionMismatch("empty matrix")
    return np.argmax(m, axis=0)


def col_onehot_argmax(m):
    """One-hot hard assignment per column (K x P); ties go to the lowest row."""
    m = as_matrix(m)
    idx = col_argmax(m)
    out = np.zeros_like(m)
    out[idx, np.arange(m.shape[1])] = 1.0
    return out


# --------------------------------------------------------------------------
# Serialization

def format_real(x):
    # shortest string that round-trips the float64 exactly
    return repr(float(x))


def format_fixed(x):
    # always 17 significant digits, so matrix files never drop precision
    return format(float(x), ".16e")


def write_csv(path, m):
    """Write ``m`` as ``rows,cols`` followed by one comma-separated line per row."""
    m = as_matrix(m)
    rows, cols = m.shape
    lines = [f"{rows},{cols}"]
    lines.extend(",".join(format_fixed(v) for v in row) for row in m)
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    rows, cols = (int(t) for t in lines[0].split(","))
    body = lines[1:]
    if len(body) != rows:
        raise DimensionMismatch(f"{path}: header says {rows} rows, found {len(body)}")
    data = np.zeros((rows, cols))
    for i, line in enumerate(body):
        vals = line.split(",")
        if len(vals) != cols:
            raise DimensionMismatch(f"{path}: row {i} has {len(vals)} values, expected {cols}")
        data[i] = [float(v) for v in vals]
    return as_matrix(data, str(path))


def to_gray8(m):
    """Scale a non-negative matrix so its maximum maps to 255."""
    m = as_matrix(m)
    top = float(m.max()) if m.size else 0.0
    if top <= 0.0:
        return np.zeros(m.shape, dtype=np.int64)
    return np.clip(np.rint(np.maximum(m, 0.0) / top * 255.0), 0, 255).astype(np.int64)


def write_pgm(path, m):
    """Plain-text (P2) 8-bit grayscale image of ``m``; one pixel per entry."""
    g = to_gray8(m)
    rows, cols = g.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines.extend(" ".join(str(int(v)) for v in row) for row in g)
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path):
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM (P2) file")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pix = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if pix.size != rows * cols:
        raise DimensionMismatch(f"{path}: expected {rows * cols} pixels, got {pix.size}")
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    return pix.reshape(rows, cols)
