"""Per-channel interpolation of sparse segments onto a fixed regular grid.

This is the conventional route to a fixed-size representation: each
channel is reconstructed independently at round(rate * window_len)
evenly spaced grid points. Outside the observed knot range every kind
holds the first/last observed value; splines use natural end conditions
(zero second derivative). Segments with too few knots for the requested
kind fall back down the chain cubic -> quadratic -> linear -> previous.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError, EmptyInputError

log = logging.getLogger(__name__)


class InterpKind(Enum):
    LINEAR = "linear"
    PREVIOUS = "previous"
    QUADRATIC_SPLINE = "quadratic"
    CUBIC_SPLINE = "cubic"


# minimum number of distinct knots each kind needs
_MIN_KNOTS = {
    InterpKind.CUBIC_SPLINE: 4,
    InterpKind.QUADRATIC_SPLINE: 3,
    InterpKind.LINEAR: 2,
    InterpKind.PREVIOUS: 1,
}
_FALLBACK = [InterpKind.CUBIC_SPLINE, InterpKind.QUADRATIC_SPLINE,
             InterpKind.LINEAR, InterpKind.PREVIOUS]


@dataclass
class DenseSegment:
    grid: np.ndarray     # (m,) regular timestamps, spacing window_len / m
    values: np.ndarray   # (m, d)
    label: int


def _effective_kind(kind, n_knots):
    if n_knots >= _MIN_KNOTS[kind]:
        return kind
    for candidate in _FALLBACK[_FALLBACK.index(kind):]:
        if n_knots >= _MIN_KNOTS[candidate]:
            return candidate
    return InterpKind.PREVIOUS


def natural_cubic_coeffs(t, y):
    """Second derivatives of the natural cubic spline through (t, y).

    Solves the standard tridiagonal system with the Thomas algorithm;
    y may be (n,) or (n, d), solved for all columns at once. End second
    derivatives are zero.
    """
    t = np.asarray(t, dtype=np.float64)
    y2d = np.atleast_2d(np.asarray(y, dtype=np.float64).T).T
    n = len(t)
    h = np.diff(t)
    m = np.zeros_like(y2d)
    if n < 3:
        return m if np.asarray(y).ndim > 1 else m[:, 0]
    # interior rows: h[i-1] M[i-1] + 2(h[i-1]+h[i]) M[i] + h[i] M[i+1] = rhs
    slopes = np.diff(y2d, axis=0) / h[:, None]
    rhs = 6.0 * np.diff(slopes, axis=0)
    diag = 2.0 * (h[:-1] + h[1:]).copy()
    lower = h[1:-1].copy()
    upper = h[1:-1].copy()
    # forward elimination
    for i in range(1, n - 2):
        w = lower[i - 1] / diag[i - 1]
        diag[i] -= w * upper[i - 1]
        rhs[i] -= w * rhs[i - 1]
    # back substitution into the interior block
    m[n - 2] = rhs[n - 3] / diag[n - 3]
    for i in range(n - 4, -1, -1):
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i]
    return m if np.asarray(y).ndim > 1 else m[:, 0]


def _eval_cubic(t, y, m, q):
    """Evaluate the spline given knots (t, y) and second derivatives m
    at query points q (already clipped into [t[0], t[-1]])."""
    i = np.clip(np.searchsorted(t, q, side="right") - 1, 0, len(t) - 2)
    h = (t[i + 1] - t[i])[:, None]
    a = ((t[i + 1] - q) / (t[i + 1] - t[i]))[:, None]
    b = 1.0 - a
    return (a * y[i] + b * y[i + 1]
            + ((a ** 3 - a) * m[i] + (b ** 3 - b) * m[i + 1]) * h ** 2 / 6.0)


def _eval_quadratic(t, y, q):
    """C1 quadratic spline: segment slopes chained so consecutive pieces
    share first derivatives; the first piece is linear."""
    h = np.diff(t)[:, None]
    sec = np.diff(y, axis=0) / h
    z = np.empty_like(y)
    z[0] = sec[0]
    for i in range(len(t) - 1):
        z[i + 1] = 2.0 * sec[i] - z[i]
    raw = np.searchsorted(t, q, side="right") - 1
    i = np.clip(raw, 0, len(t) - 2)
    dt = (q - t[i])[:, None]
    hi = (t[i + 1] - t[i])[:, None]
    out = y[i] + z[i] * dt + (z[i + 1] - z[i]) / (2.0 * hi) * dt ** 2
    # queries landing exactly on the last knot must reproduce it bitwise
    out[raw == len(t) - 1] = y[-1]
    return out


def _eval_previous(t, y, q):
    i = np.searchsorted(t, q, side="right") - 1
    return y[np.clip(i, 0, len(t) - 1)]


def _dedupe_knots(ts, vs):
    """Sort by time (stable) and keep the first reading at duplicate
    timestamps, which splines cannot accommodate."""
    order = np.argsort(ts, kind="stable")
    ts, vs = ts[order], vs[order]
    keep = np.concatenate([[True], np.diff(ts) > 0])
    return ts[keep], vs[keep]


def resample(seg, kind, target_rate):
    """Interpolate a sparse segment onto its window's regular grid.

    The grid has m = round(target_rate * window_len) points starting at
    window_start with spacing window_len / m (left-closed). At observed
    timestamps the interpolant reproduces the observation; before the
    first and after the last knot the first/last value is held.
    """
    if seg.cardinality == 0:
        raise EmptyInputError("cannot resample an empty segment")
    m = int(round(target_rate * seg.window_len))
    if m < 1:
        raise ValueError("target_rate * window_len must round to >= 1")
    grid = seg.window_start + np.arange(m) * (seg.window_len / m)
    t, y = _dedupe_knots(seg.timestamps, seg.values)
    eff = _effective_kind(kind, len(t))
    if eff is not kind:
        log.debug("segment at %.3f: %s needs >=%d knots, have %d, using %s",
                  seg.window_start, kind.value, _MIN_KNOTS[kind], len(t),
                  eff.value)
    q = np.clip(grid, t[0], t[-1])
    if eff is InterpKind.PREVIOUS:
        vals = _eval_previous(t, y, q)
    elif eff is InterpKind.LINEAR:
        vals = np.column_stack([np.interp(q, t, y[:, j])
                                for j in range(y.shape[1])])
    elif eff is InterpKind.QUADRATIC_SPLINE:
        vals = _eval_quadratic(t, y, q)
    else:
        vals = _eval_cubic(t, y, natural_cubic_coeffs(t, y), q)
    return DenseSegment(grid=grid, values=vals, label=seg.label)


def interpolation_error(dense, truth):
    """RMSE between two dense segments over all grid points and channels."""
    if dense.values.shape != truth.values.shape or not np.array_equal(
            dense.grid, truth.grid):
        raise DimensionError("dense segments must share one grid")
    diff = dense.values - truth.values
    return float(np.sqrt(np.mean(diff * diff)))
