# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Direct nonuniform DFT sums (compiled core)."""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange, parallel
from libc.math cimport cos, sin, M_PI
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef void _accumulate(double[:, ::1] P, double[:, ::1] N, double[:, ::1] Cr, double[:, ::1] Ci,
                      double[:, ::1] Or, double[:, ::1] Oi, double sign, int threads) noexcept nogil:
    # O[k, p] = sum_m C[k, m] exp(sign 2 pi i P[p] . N[m])
    cdef Py_ssize_t np_ = P.shape[0], nm = N.shape[0], dim = P.shape[1], nk = Cr.shape[0]
    cdef Py_ssize_t p, m, k, d
    cdef double ph, sr, si
    cdef double *er
    cdef double *ei
    with parallel(num_threads=threads):
        er = <double *> malloc(nm * sizeof(double))
        ei = <double *> malloc(nm * sizeof(double))
        for p in prange(np_, schedule="static"):
            # phase row for this point, reused by every coefficient row
            for m in range(nm):
                ph = 0.0
                for d in range(dim):
                    ph = ph + P[p, d] * N[m, d]
                ph = sign * 2.0 * M_PI * ph
                er[m] = cos(ph)
                ei[m] = sin(ph)
            for k in range(nk):
                sr = 0.0
                si = 0.0
                for m in range(nm):
                    sr = sr + Cr[k, m] * er[m] - Ci[k, m] * ei[m]
                    si = si + Cr[k, m] * ei[m] + Ci[k, m] * er[m]
                Or[k, p] = sr
                Oi[k, p] = si
        free(er)
        free(ei)


def type2(double[:, ::1] P, double[:, ::1] N, C, int threads=1):
    """out[k, p] = sum_m C[k, m] exp(+2 pi i P[p] . N[m])."""
    cdef double[:, ::1] Cr = np.ascontiguousarray(C.real)
    cdef double[:, ::1] Ci = np.ascontiguousarray(C.imag)
    Or_ = np.zeros((C.shape[0], P.shape[0]))
    Oi_ = np.zeros((C.shape[0], P.shape[0]))
    _accumulate(P, N, Cr, Ci, Or_, Oi_, 1.0, threads)
    return Or_ + 1j * Oi_


def type1(double[:, ::1] P, double[:, ::1] N, V, int threads=1):
    """out[k, m] = sum_p V[k, p] exp(-2 pi i P[p] . N[m])."""
    # same loop with the roles of points and nodes swapped
    cdef double[:, ::1] Vr = np.ascontiguousarray(V.real)
    cdef double[:, ::1] Vi = np.ascontiguousarray(V.imag)
    Or_ = np.zeros((V.shape[0], N.shape[0]))
    Oi_ = np.zeros((V.shape[0], N.shape[0]))
    _accumulate(N, P, Vr, Vi, Or_, Oi_, -1.0, threads)
    return Or_ + 1j * Oi_
