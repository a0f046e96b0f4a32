# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled GRU sequence kernels.

Semantics and weight packing are identical to ``_numpy.py``; matrix
products go through BLAS dgemm and all gate math runs in fused C loops,
which removes the per-step Python dispatch that dominates the fallback.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh as ctanh
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void rm_gemm(char ta, char tb, int m, int k, int n,
                         double alpha, const double* a, int lda,
                         const double* b, int ldb, double beta,
                         double* c, int ldc) noexcept nogil:
    """Row-major C(m,n) = alpha * op_a(A)(m,k) @ op_b(B)(k,n) + beta * C.

    lda/ldb/ldc are the row strides of the (possibly sliced) buffers.
    Mapped onto column-major BLAS via the transpose identity, so the
    operand order is swapped.
    """
    dgemm(&tb, &ta, &n, &m, &k, &alpha, <double*> b, &ldb, <double*> a,
          &lda, &beta, c, &ldc)


cdef inline double sigm(double v) noexcept nogil:
    cdef double e
    if v >= 0.0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


def _c3(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def gru_forward(x, wp, up, b):
    """See kernels._numpy.gru_forward."""
    x = _c3(x); wp = _c3(wp); up = _c3(up); b = _c3(b)
    cdef int n = x.shape[0], t = x.shape[1], di = x.shape[2]
    cdef int d = up.shape[0], d3 = 3 * d, d2 = 2 * d
    cdef int nt = n * t

    pre_arr = np.empty((n, t, d3))
    h_arr = np.empty((n, t, d))
    gates_arr = np.empty((n, t, d3))
    hr_arr = np.empty((n, t, d))
    hprev_arr = np.zeros((n, d))
    tmp_arr = np.empty((n, d2))
    tmph_arr = np.empty((n, d))

    cdef const double[:, :, ::1] xv = x
    cdef const double[:, ::1] wpv = wp, upv = up
    cdef const double[::1] bv = b
    cdef double[:, :, ::1] pre = pre_arr, h = h_arr, gates = gates_arr, hr = hr_arr
    cdef double[:, ::1] hprev = hprev_arr, tmp = tmp_arr, tmph = tmph_arr

    cdef Py_ssize_t i, row, j
    cdef double r, z, g
    with nogil:
        # pre-activations from the input path, all steps at once
        rm_gemm(b'N', b'N', nt, di, d3, 1.0, &xv[0, 0, 0], di,
                &wpv[0, 0], d3, 0.0, &pre[0, 0, 0], d3)
        for row in range(n):
            for i in range(t):
                for j in range(d3):
                    pre[row, i, j] += bv[j]
        for i in range(t):
            # reset/update pre-activations from the hidden path
            rm_gemm(b'N', b'N', n, d, d2, 1.0, &hprev[0, 0], d,
                    &upv[0, 0], d3, 0.0, &tmp[0, 0], d2)
            for row in range(n):
                for j in range(d):
                    r = sigm(pre[row, i, j] + tmp[row, j])
                    z = sigm(pre[row, i, d + j] + tmp[row, d + j])
                    gates[row, i, j] = r
                    gates[row, i, d + j] = z
                    hr[row, i, j] = hprev[row, j] * r
            rm_gemm(b'N', b'N', n, d, d, 1.0, &hr[0, i, 0], t * d,
                    &upv[0, d2], d3, 0.0, &tmph[0, 0], d)
            for row in range(n):
                for j in range(d):
                    g = ctanh(pre[row, i, d2 + j] + tmph[row, j])
                    gates[row, i, d2 + j] = g
                    z = gates[row, i, d + j]
                    hprev[row, j] = (1.0 - z) * hprev[row, j] + z * g
                    h[row, i, j] = hprev[row, j]
    return h_arr, gates_arr, hr_arr


def gru_backward(gh, x, wp, up, h, gates, hr):
    """See kernels._numpy.gru_backward."""
    gh = _c3(gh); x = _c3(x); wp = _c3(wp); up = _c3(up)
    h = _c3(h); gates = _c3(gates); hr = _c3(hr)
    cdef int n = x.shape[0], t = x.shape[1], di = x.shape[2]
    cdef int d = up.shape[0], d3 = 3 * d, d2 = 2 * d
    cdef int nt = n * t

    da_arr = np.empty((n, t, d3))
    dh_arr = np.zeros((n, d))
    dhnew_arr = np.empty((n, d))
    dhr_arr = np.empty((n, d))
    hprev_flat_arr = np.empty((n, t, d))
    dx_arr = np.empty((n, t, di))
    dwp_arr = np.empty((di, d3))
    dup_arr = np.empty((d, d3))
    db_arr = np.zeros(d3)

    cdef const double[:, :, ::1] ghv = gh, xv = x, hv = h, gatesv = gates, hrv = hr
    cdef const double[:, ::1] wpv = wp, upv = up
    cdef double[:, :, ::1] da = da_arr, hprevf = hprev_flat_arr, dx = dx_arr
    cdef double[:, ::1] dh = dh_arr, dhnew = dhnew_arr, dhr = dhr_arr
    cdef double[:, ::1] dwp = dwp_arr, dup = dup_arr
    cdef double[::1] db = db_arr

    cdef Py_ssize_t i, row, j
    cdef double r, z, g, hp, dhi, da_g
    with nogil:
        for i in range(t - 1, -1, -1):
            for row in range(n):
                for j in range(d):
                    dhi = dh[row, j] + ghv[row, i, j]
                    dh[row, j] = dhi
                    hp = hv[row, i - 1, j] if i > 0 else 0.0
                    r = gatesv[row, i, j]
                    z = gatesv[row, i, d + j]
                    g = gatesv[row, i, d2 + j]
                    da[row, i, d + j] = dhi * (g - hp) * z * (1.0 - z)
                    da[row, i, d2 + j] = dhi * z * (1.0 - g * g)
                    dhnew[row, j] = dhi * (1.0 - z)
            # dhr = da_g @ U_h^T
            rm_gemm(b'N', b'T', n, d, d, 1.0, &da[0, i, d2], t * d3,
                    &upv[0, d2], d3, 0.0, &dhr[0, 0], d)
            for row in range(n):
                for j in range(d):
                    hp = hv[row, i - 1, j] if i > 0 else 0.0
                    r = gatesv[row, i, j]
                    dhnew[row, j] += dhr[row, j] * r
                    da[row, i, j] = dhr[row, j] * hp * r * (1.0 - r)
            # dh_prev += [da_r | da_z] @ U_rz^T
            rm_gemm(b'N', b'T', n, d2, d, 1.0, &da[0, i, 0], t * d3,
                    &upv[0, 0], d3, 1.0, &dhnew[0, 0], d)
            for row in range(n):
                for j in range(d):
                    dh[row, j] = dhnew[row, j]
        # input-path gradients, all steps at once
        rm_gemm(b'T', b'N', di, nt, d3, 1.0, &xv[0, 0, 0], di,
                &da[0, 0, 0], d3, 0.0, &dwp[0, 0], d3)
        rm_gemm(b'N', b'T', nt, d3, di, 1.0, &da[0, 0, 0], d3,
                &wpv[0, 0], d3, 0.0, &dx[0, 0, 0], di)
        for row in range(n):
            for i in range(t):
                for j in range(d3):
                    db[j] += da[row, i, j]
        # hidden-path weight gradients
        for row in range(n):
            memset(&hprevf[row, 0, 0], 0, d * sizeof(double))
            if t > 1:
                memcpy(&hprevf[row, 1, 0], &hv[row, 0, 0],
                       (t - 1) * d * sizeof(double))
        rm_gemm(b'T', b'N', d, nt, d2, 1.0, &hprevf[0, 0, 0], d,
                &da[0, 0, 0], d3, 0.0, &dup[0, 0], d3)
        rm_gemm(b'T', b'N', d, nt, d, 1.0, &hrv[0, 0, 0], d,
                &da[0, 0, d2], d3, 0.0, &dup[0, d2], d3)
    return dx_arr, dwp_arr, dup_arr, db_arr
