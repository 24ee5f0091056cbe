# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled frequency-sweep kernel.

F(i w) = Cm diag(1 / (i w - poles)) Bm is evaluated per grid point and its
largest singular value taken from the smaller Gram matrix.
"""
import numpy as np

from libc.math cimport sqrt, acos, cos, M_PI
from scipy.linalg.cython_blas cimport zgemm, zherk
from scipy.linalg.cython_lapack cimport zheev

cdef extern from "complex.h" nogil:
    double creal(double complex)
    double cimag(double complex)
    double complex conj(double complex)


cdef inline double _abs2(double complex z) noexcept nogil:
    return creal(z) * creal(z) + cimag(z) * cimag(z)


cdef double _eig3(double complex[:, ::1] G) noexcept nogil:
    # largest eigenvalue of a 3x3 Hermitian matrix, trigonometric form
    cdef double a0 = creal(G[0, 0]), a1 = creal(G[1, 1]), a2 = creal(G[2, 2])
    cdef double complex b01 = G[0, 1], b02 = G[0, 2], b12 = G[1, 2]
    cdef double p1 = _abs2(b01) + _abs2(b02) + _abs2(b12)
    cdef double q = (a0 + a1 + a2) / 3.0
    cdef double d0 = a0 - q, d1 = a1 - q, d2 = a2 - q
    cdef double p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1
    if p2 <= 0.0:
        return q
    cdef double p = sqrt(p2 / 6.0)
    cdef double det = (d0 * d1 * d2 + 2.0 * creal(b01 * b12 * conj(b02))
                       - d0 * _abs2(b12) - d1 * _abs2(b02) - d2 * _abs2(b01))
    cdef double r = det / (2.0 * p * p * p)
    if r <= -1.0:
        return q + 2.0 * p * cos(M_PI / 3.0)
    if r >= 1.0:
        return q + 2.0 * p
    return q + 2.0 * p * cos(acos(r) / 3.0)


cdef double _eig_lapack(double complex[:, ::1] G, int d, double complex* work, int lwork,
                        double* rwork, double* wv) noexcept nogil:
    # largest eigenvalue of Hermitian G (upper triangle, column-major); G is overwritten
    cdef char jobz = b'N', uplo = b'U'
    cdef int n = d, lda = d, info = 0
    zheev(&jobz, &uplo, &n, &G[0, 0], &lda, wv, work, &lwork, rwork, &info)
    if info != 0:
        return -1.0
    return wv[d - 1]


def sigma_max_modal(double[::1] omegas, double complex[::1] poles,
                    double complex[:, ::1] Cm, double complex[:, ::1] Bm):
    """sigma_max(Cm diag(1/(i w - poles)) Bm) for every w in ``omegas``."""
    cdef Py_ssize_t nw = omegas.shape[0], k = poles.shape[0]
    cdef Py_ssize_t nl = Cm.shape[0], nm = Bm.shape[1]
    cdef Py_ssize_t d = nm if nm <= nl else nl
    cdef Py_ssize_t w, i, a, b
    cdef double cr, ci
    cdef char tn = b'N', tc = b'C', up = b'U'
    cdef int inl = <int>Cm.shape[0], inm = <int>Bm.shape[1], ik = <int>poles.shape[0]
    cdef int id_ = <int>(Bm.shape[1] if Bm.shape[1] <= Cm.shape[0] else Cm.shape[0])
    cdef double complex one = 1.0, zero = 0.0
    cdef double rone = 1.0, rzero = 0.0
    cdef double lam, zr, zi, den
    out = np.empty(nw, dtype=np.float64)
    cdef double[::1] res = out
    cdef double complex[::1] r = np.empty(k, dtype=np.complex128)
    cdef double complex[:, ::1] F = np.empty((nl, nm), dtype=np.complex128)
    cdef double complex[:, ::1] CR = np.empty((nl, k), dtype=np.complex128)
    cdef double complex[:, ::1] G = np.empty((d, d), dtype=np.complex128)
    cdef int lwork = 66 * d + 1
    cdef double complex[::1] work = np.empty(lwork, dtype=np.complex128)
    cdef double[::1] rwork = np.empty(3 * d + 1, dtype=np.float64)
    cdef double[::1] wv = np.empty(d + 1, dtype=np.float64)
    if d == 0:
        out[:] = 0.0
        return out
    with nogil:
        for w in range(nw):
            for i in range(k):
                zr = -creal(poles[i])
                zi = omegas[w] - cimag(poles[i])
                den = zr * zr + zi * zi
                r[i] = zr / den - 1j * (zi / den)
            for a in range(nl):
                for i in range(k):
                    cr = creal(Cm[a, i])
                    ci = cimag(Cm[a, i])
                    CR[a, i] = (cr * creal(r[i]) - ci * cimag(r[i])) + 1j * (cr * cimag(r[i]) + ci * creal(r[i]))
            # row-major buffers are the column-major transposes: F^T = Bm^T CR^T
            zgemm(&tn, &tn, &inm, &inl, &ik, &one, &Bm[0, 0], &inm, &CR[0, 0], &ik, &zero, &F[0, 0], &inm)
            # herk on X = F^T yields conj(F^H F) or conj(F F^H); conjugation keeps the spectrum
            if nm <= nl:
                zherk(&up, &tn, &id_, &inl, &rone, &F[0, 0], &inm, &rzero, &G[0, 0], &id_)
            else:
                zherk(&up, &tc, &id_, &inm, &rone, &F[0, 0], &inm, &rzero, &G[0, 0], &id_)
            if d <= 3:
                # column-major upper triangle is the row-major lower one
                for a in range(d):
                    for b in range(a + 1, d):
                        G[a, b] = conj(G[b, a])
            if d == 1:
                lam = creal(G[0, 0])
            elif d == 2:
                lam = 0.5 * (creal(G[0, 0]) + creal(G[1, 1])) + sqrt(
                    0.25 * (creal(G[0, 0]) - creal(G[1, 1])) ** 2 + _abs2(G[0, 1]))
            elif d == 3:
                lam = _eig3(G)
            else:
                lam = _eig_lapack(G, d, &work[0], lwork, &rwork[0], &wv[0])
            res[w] = sqrt(lam) if lam > 0.0 else 0.0
    return out
