"""Orthogonal projection of feature vectors onto a 2-D plane.

A point X is mapped to the coefficients (u, v) of its closest point in
span{a, b}, solving the 2x2 Gram system. Both bordered entries of the
determinant formula are scalar products, so the result is the classical
Gram projection written in the (a, b) frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import DegenerateBasis, DimensionMismatch

GRAM_DET_MIN = 1e-12


@dataclass(frozen=True)
class ProjectionBasis:
    a: np.ndarray
    b: np.ndarray
    gram: np.ndarray
    gram_det: float
    a_raw: Tuple[float, ...] = ()
    b_raw: Tuple[float, ...] = ()

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def coefficients(self) -> np.ndarray:
        """Rows are the linear functionals giving u and v from X."""
        g = self.gram
        det = self.gram_det
        cu = (g[1, 1] * self.a - g[0, 1] * self.b) / det
        cv = (g[0, 0] * self.b - g[0, 1] * self.a) / det
        return np.stack([cu, cv])


def make_basis(a_raw: Sequence[float], b_raw: Sequence[float]) -> ProjectionBasis:
    a = np.asarray(a_raw, dtype=np.float64)
    b = np.asarray(b_raw, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionMismatch(f"basis vectors have shapes {a.shape} and {b.shape}")
    if a.shape[0] < 2:
        raise DimensionMismatch("basis vectors need at least 2 components")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0 or not (np.isfinite(na) and np.isfinite(nb)):
        raise DegenerateBasis("zero or non-finite basis vector")
    a = a / na
    b = b / nb
    ab = float(a @ b)
    gram = np.array([[float(a @ a), ab], [ab, float(b @ b)]])
    det = gram[0, 0] * gram[1, 1] - ab * ab
    if det <= GRAM_DET_MIN:
        raise DegenerateBasis(f"basis vectors are collinear (gram det {det:.3g})")
    a.flags.writeable = False
    b.flags.writeable = False
    gram.flags.writeable = False
    return ProjectionBasis(a, b, gram, float(det), tuple(map(float, a_raw)), tuple(map(float, b_raw)))


def default_basis(n: int) -> ProjectionBasis:
    """Even-index indicator against odd-index indicator."""
    if n < 2:
        raise DimensionMismatch("default basis needs n >= 2")
    idx = np.arange(n)
    return make_basis((idx % 2 == 0).astype(float), (idx % 2 == 1).astype(float))


def gram_project(x, a, b) -> Tuple[float, float]:
    """Coefficients of the projection of ``x`` onto span{a, b}; a, b as given."""
    x, a, b = (np.asarray(t, dtype=np.float64) for t in (x, a, b))
    if not x.shape == a.shape == b.shape:
        raise DimensionMismatch(f"shapes {x.shape}, {a.shape}, {b.shape} differ")
    aa, ab, bb = float(a @ a), float(a @ b), float(b @ b)
    det = aa * bb - ab * ab
    if det <= GRAM_DET_MIN:
        raise DegenerateBasis(f"basis vectors are collinear (gram det {det:.3g})")
    xa, xb = float(x @ a), float(x @ b)
    return (bb * xa - ab * xb) / det, (aa * xb - ab * xa) / det


def project_point(x, basis: ProjectionBasis) -> Tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (basis.n,):
        raise DimensionMismatch(f"vector of length {x.shape} against basis of {basis.n}")
    xa = float(x @ basis.a)
    xb = float(x @ basis.b)
    g = basis.gram
    u = (g[1, 1] * xa - g[0, 1] * xb) / basis.gram_det
    v = (g[0, 0] * xb - g[0, 1] * xa) / basis.gram_det
    return u, v


def project_points(xs: np.ndarray, basis: ProjectionBasis) -> np.ndarray:
    """Project rows of ``xs``; returns an ``(m, 2)`` array of (u, v)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != basis.n:
        raise DimensionMismatch(f"array of shape {xs.shape} against basis of {basis.n}")
    xa = xs @ basis.a
    xb = xs @ basis.b
    g = basis.gram
    u = (g[1, 1] * xa - g[0, 1] * xb) / basis.gram_det
    v = (g[0, 0] * xb - g[0, 1] * xa) / basis.gram_det
    return np.column_stack([u, v])


def coordinate_bounds(basis: ProjectionBasis, n: int = None) -> Tuple[float, float, float, float]:
    """Exact extrema of (u, v) over the unit hypercube.

    u and v are linear in X, so each is minimized by switching on exactly the
    coordinates with negative coefficients, and maximized by the positive ones.
    """
    if n is not None and n != basis.n:
        raise DimensionMismatch(f"n={n} does not match basis dimension {basis.n}")
    cu, cv = basis.coefficients
    return (
        float(cu[cu < 0].sum()),
        float(cu[cu > 0].sum()),
        float(cv[cv < 0].sum()),
        float(cv[cv > 0].sum()),
    )
