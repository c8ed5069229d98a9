"""Nonuniform DFT kernels with a compiled core and a NumPy fallback.

The compiled extension ``conewave._nudft`` is used when it imports; set
``CONEWAVE_PURE_PYTHON=1`` to force the fallback.  Both paths compute

* ``type2``: ``out[k, p] = sum_m C[k, m] exp(+2 pi i P[p] . N[m])``
* ``type1``: ``out[k, m] = sum_p V[k, p] exp(-2 pi i P[p] . N[m])``
"""
from __future__ import annotations

import os

import numpy as np

_CHUNK = 1 << 21  # complex entries per phase block in the fallback

try:
    if os.environ.get("CONEWAVE_PURE_PYTHON"):
        raise ImportError("pure python requested")
    from . import _nudft as _core
except ImportError:  # pragma: no cover - exercised when the extension is absent
    _core = None

BACKEND = "cython" if _core is not None else "numpy"
_threads = 1
# with many coefficient rows the phase matrix is best reused through BLAS
_ROWS_BLAS = 4


def set_threads(n: int) -> None:
    """Number of OpenMP threads used by the compiled core."""
    global _threads
    _threads = max(1, int(n))


def _prep(P, N, C):
    P = np.ascontiguousarray(np.atleast_2d(np.asarray(P, dtype=float)))
    N = np.ascontiguousarray(np.atleast_2d(np.asarray(N, dtype=float)))
    C = np.asarray(C, dtype=complex)
    squeeze = C.ndim == 1
    C = np.ascontiguousarray(np.atleast_2d(C))
    return P, N, C, squeeze


def type2_numpy(P, N, C):
    P, N, C, squeeze = _prep(P, N, C)
    out = np.empty((C.shape[0], P.shape[0]), dtype=complex)
    step = max(1, _CHUNK // max(1, N.shape[0]))
    for lo in range(0, P.shape[0], step):
        E = np.exp(2j * np.pi * (P[lo:lo + step] @ N.T))
        out[:, lo:lo + step] = C @ E.T
    return out[0] if squeeze else out


def type1_numpy(P, N, V):
    P, N, V, squeeze = _prep(P, N, V)
    out = np.zeros((V.shape[0], N.shape[0]), dtype=complex)
    step = max(1, _CHUNK // max(1, N.shape[0]))
    for lo in range(0, P.shape[0], step):
        E = np.exp(-2j * np.pi * (P[lo:lo + step] @ N.T))
        out += V[:, lo:lo + step] @ E
    return out[0] if squeeze else out


def type2(P, N, C, backend="auto"):
    backend = backend or "auto"
    if backend == "numpy" or _core is None or (backend == "auto" and np.ndim(C) > 1 and len(C) > _ROWS_BLAS):
        return type2_numpy(P, N, C)
    P, N, C, squeeze = _prep(P, N, C)
    out = _core.type2(P, N, C, _threads)
    return out[0] if squeeze else out


def type1(P, N, V, backend="auto"):
    backend = backend or "auto"
    if backend == "numpy" or _core is None or (backend == "auto" and np.ndim(V) > 1 and len(V) > _ROWS_BLAS):
        return type1_numpy(P, N, V)
    P, N, V, squeeze = _prep(P, N, V)
    out = _core.type1(P, N, V, _threads)
    return out[0] if squeeze else out


def separable_type2(axes, freqs, C):
    """type2 on a tensor grid of points.

    Parameters
    ----------
    axes : list of 1-D arrays
        Point coordinates per axis.
    freqs : (M, d) array
        Frequency nodes.
    C : (M,) or (K, M) complex

    Returns
    -------
    ndarray of shape ``(K,) + tuple(len(a) for a in axes)`` (K dropped for 1-D C).
    """
    freqs = np.atleast_2d(np.asarray(freqs, dtype=float))
    C = np.asarray(C, dtype=complex)
    squeeze = C.ndim == 1
    C = np.atleast_2d(C)
    factors = [np.exp(2j * np.pi * np.outer(a, freqs[:, d])) for d, a in enumerate(axes)]
    shape = tuple(len(a) for a in axes)
    K, M = C.shape
    lead = int(np.prod(shape[:-1]))
    out = np.empty((K, lead, shape[-1]), dtype=complex)
    # fold all but the last axis into the coefficients, then one zgemm
    kc = max(1, _CHUNK // max(1, lead * M))
    for lo in range(0, K, kc):
        acc = C[lo:lo + kc, None, :]
        for fac in factors[:-1]:
            acc = (acc[:, :, None, :] * fac[None, None, :, :]).reshape(len(acc), -1, M)
        out[lo:lo + kc] = acc @ factors[-1].T
    out = out.reshape((K,) + shape)
    return out[0] if squeeze else out


def separable_type1(axes, freqs, V):
    """Adjoint of :func:`separable_type2`.

    ``out[m] = sum_k V[k] exp(-2 pi i x_k . N[m])`` for ``x_k`` on the tensor
    grid ``axes``; ``V`` has shape ``tuple(len(a) for a in axes)``.
    """
    freqs = np.atleast_2d(np.asarray(freqs, dtype=float))
    acc = np.asarray(V, dtype=complex)
    M = len(freqs)
    factors = [np.exp(-2j * np.pi * np.outer(a, freqs[:, d])) for d, a in enumerate(axes)]
    # contract the last axis by zgemm, the rest by elementwise products
    acc = acc.reshape(-1, len(axes[-1])) @ factors[-1]
    acc = acc.reshape(tuple(len(a) for a in axes[:-1]) + (M,))
    for fac in reversed(factors[:-1]):
        acc = np.sum(acc * fac, axis=-2) if acc.ndim > 2 else np.sum(acc * fac, axis=0)
    return acc.reshape(M)
