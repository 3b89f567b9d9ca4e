"""Division-algebra rotations for multidimensional reconciliation.

Gaussian value blocks of dimension d in {1, 2, 4, 8} are treated as
elements of the reals, complexes, quaternions or octonions. Bob maps his
normalized block y_hat and sign word u to the unit rotation

    m = u * conj(y_hat)          (so that m * y_hat = u exactly),

and Alice applies m to her block. Alternativity of the octonions makes the
inversion exact; left multiplication by a unit element is an isometry, so
the rotation leaks nothing about u beyond the public norm.

The octonion structure constants come from the Fano-plane triads
(123)(145)(176)(246)(257)(347)(365); the quaternions and complexes are the
closed subalgebras on the first 4 and 2 coordinates.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import njit, resolve_backend
from .core import ParameterError

DIMS = (1, 2, 4, 8)

_FANO_TRIADS = ((1, 2, 3), (1, 4, 5), (1, 7, 6), (2, 4, 6), (2, 5, 7), (3, 4, 7), (3, 6, 5))

_tables: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def mult_table(d: int) -> tuple[np.ndarray, np.ndarray]:
    """(index, sign) tables with e_i e_j = sign[i,j] * e_index[i,j]."""
    if d not in DIMS:
        raise ParameterError(f"dimension must be one of {DIMS}, got {d}")
    if d in _tables:
        return _tables[d]
    idx = np.zeros((d, d), dtype=np.int64)
    sgn = np.zeros((d, d), dtype=np.float64)
    for i in range(d):
        idx[0, i] = i
        sgn[0, i] = 1.0
        idx[i, 0] = i
        sgn[i, 0] = 1.0
    for i in range(1, d):
        idx[i, i] = 0
        sgn[i, i] = -1.0
    for a, b, c in _FANO_TRIADS:
        if max(a, b, c) >= d:
            continue
        for i, j, k in ((a, b, c), (b, c, a), (c, a, b)):
            idx[i, j] = k
            sgn[i, j] = 1.0
            idx[j, i] = k
            sgn[j, i] = -1.0
    idx.setflags(write=False)
    sgn.setflags(write=False)
    _tables[d] = (idx, sgn)
    return idx, sgn


def conj(x: np.ndarray) -> np.ndarray:
    """Algebra conjugate: negate all imaginary coordinates."""
    y = -np.asarray(x, dtype=np.float64)
    y[..., 0] = -y[..., 0]
    return y


def _mul_numpy(x, y, idx, sgn):
    z = np.zeros(np.broadcast_shapes(x.shape, y.shape), dtype=np.float64)
    d = x.shape[-1]
    for i in range(d):
        for j in range(d):
            z[..., idx[i, j]] += sgn[i, j] * x[..., i] * y[..., j]
    return z


@njit(cache=True, nogil=True)
def _mul_numba(x, y, idx, sgn):  # pragma: no cover - numba-compiled
    n, d = x.shape
    z = np.zeros((n, d), dtype=np.float64)
    for r in range(n):
        for i in range(d):
            xi = x[r, i]
            if xi == 0.0:
                continue
            for j in range(d):
                z[r, idx[i, j]] += sgn[i, j] * xi * y[r, j]
    return z


def multiply(x: np.ndarray, y: np.ndarray, backend: str = "auto") -> np.ndarray:
    """Batched algebra product of (..., d) arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = x.shape[-1]
    idx, sgn = mult_table(d)
    if resolve_backend(backend) == "numba" and x.ndim == 2 and y.shape == x.shape:
        return _mul_numba(np.ascontiguousarray(x), np.ascontiguousarray(y), idx, sgn)
    return _mul_numpy(x, y, idx, sgn)


def _check_block(v, name):
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if v.shape[-1] not in DIMS:
        raise ParameterError(f"{name} dimension must be one of {DIMS}, got {v.shape[-1]}")
    norms = np.linalg.norm(v, axis=-1)
    if np.any(norms == 0.0):
        raise ParameterError(f"zero vector in {name}")
    return v, norms


def multidim_map(y, u, backend: str = "auto") -> np.ndarray:
    """Rotation message m with m * (y/|y|) = u, |m| = 1.

    y: (d,) or (N, d) real blocks; u: matching sign words with components
    in {+1, -1}/sqrt(d).
    """
    y2, ny = _check_block(y, "y")
    u2 = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if u2.shape != y2.shape:
        raise ParameterError("u shape must match y shape")
    d = y2.shape[-1]
    if not np.allclose(np.abs(u2) * math.sqrt(d), 1.0, atol=1e-9):
        raise ParameterError("u components must be +-1/sqrt(d)")
    yhat = y2 / ny[:, None]
    m = multiply(u2, conj(yhat), backend=backend)
    return m.reshape(np.shape(y))


def multidim_unmap(x, m, backend: str = "auto") -> np.ndarray:
    """Virtual-channel observation v = m * (x/|x|)."""
    x2, nx = _check_block(x, "x")
    m2 = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m2.shape != x2.shape:
        raise ParameterError("m shape must match x shape")
    xhat = x2 / nx[:, None]
    v = multiply(m2, xhat, backend=backend)
    return v.reshape(np.shape(x))
