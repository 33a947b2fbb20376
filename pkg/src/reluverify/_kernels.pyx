# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``; same signatures and results."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow, INFINITY, isinf

cnp.import_array()


cdef inline double _sign(double v) noexcept nogil:
    if v > 0:
        return 1.0
    if v < 0:
        return -1.0
    return 0.0


cdef void _relax_row(double[:, ::1] A, const double[::1] lo, const double[::1] up,
                     const signed char[::1] st, const double[::1] al,
                     double[:, ::1] d, double[:, ::1] bc,
                     unsigned char[:, ::1] ua) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef double l, u, w
    for r in range(A.shape[0]):
        for j in range(A.shape[1]):
            bc[r, j] = 0.0
            ua[r, j] = 0
            if st[j] == 1:
                d[r, j] = 1.0
                continue
            if st[j] == -1:
                d[r, j] = 0.0
                continue
            l = lo[j]
            u = up[j]
            if u <= 0:
                d[r, j] = 0.0
            elif l >= 0:
                d[r, j] = 1.0
            elif A[r, j] >= 0:
                d[r, j] = al[j]
                ua[r, j] = 1
            else:
                w = u - l
                d[r, j] = u / w
                bc[r, j] = -u * l / w


def relax_layer(A, lower, upper, status, alpha):
    Aa = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] Av = Aa
    d = np.empty_like(Aa)
    bc = np.empty_like(Aa)
    ua = np.empty(Aa.shape, dtype=np.uint8)
    _relax_row(Av, np.ascontiguousarray(lower, dtype=np.float64),
               np.ascontiguousarray(upper, dtype=np.float64),
               np.ascontiguousarray(status, dtype=np.int8),
               np.ascontiguousarray(alpha, dtype=np.float64), d, bc, ua)
    return d, bc, ua.astype(bool)


cdef void _matmul(double[:, ::1] X, const double[:, ::1] W, double[:, ::1] out) noexcept nogil:
    # out = X @ W
    cdef Py_ssize_t r, i, j
    cdef double x
    for r in range(X.shape[0]):
        for j in range(W.shape[1]):
            out[r, j] = 0.0
        for i in range(X.shape[1]):
            x = X[r, i]
            if x == 0.0:
                continue
            for j in range(W.shape[1]):
                out[r, j] += x * W[i, j]


cdef void _matmul_t(double[:, ::1] X, const double[:, ::1] W, double[:, ::1] out) noexcept nogil:
    # out = X @ W.T
    cdef Py_ssize_t r, i, j
    cdef double acc
    for r in range(X.shape[0]):
        for i in range(W.shape[0]):
            acc = 0.0
            for j in range(W.shape[1]):
                acc += X[r, j] * W[i, j]
            out[r, i] = acc


def backward_pass(weights, biases, lower, upper, status, alpha, beta,
                  C, x0, eps, q, row_weights=None, need_grad=True):
    cdef Py_ssize_t k = len(weights)
    cdef double[:, ::1] lam = np.array(C, dtype=np.float64, order="C")
    cdef Py_ssize_t m = lam.shape[0]
    cdef double[::1] cst = np.zeros(m)
    cdef const double[:, ::1] Wv
    cdef const double[::1] bv, betav
    cdef double[::1] sv
    cdef double[:, ::1] A, d, bc
    cdef unsigned char[:, ::1] ua
    cdef Py_ssize_t i, j, r, c, n
    cdef double acc, e = eps, qq = q, nrm, v
    tape = []
    A = None
    for i in range(k, 0, -1):
        Wv = weights[i - 1]
        bv = biases[i - 1]
        for r in range(m):
            acc = 0.0
            for c in range(bv.shape[0]):
                acc += lam[r, c] * bv[c]
            cst[r] += acc
        A = np.empty((m, Wv.shape[1]))
        _matmul(lam, Wv, A)
        if i == 1:
            break
        j = i - 2
        n = A.shape[1]
        d = np.empty((m, n))
        bc = np.empty((m, n))
        ua = np.empty((m, n), dtype=np.uint8)
        st = np.asarray(status[j], dtype=np.int8)
        _relax_row(A, lower[j], upper[j], st, alpha[j], d, bc, ua)
        betav = beta[j]
        sv = -st.astype(np.float64)
        lam = np.empty((m, n))
        for r in range(m):
            acc = 0.0
            for c in range(n):
                acc += A[r, c] * bc[r, c]
                lam[r, c] = A[r, c] * d[r, c] + betav[c] * sv[c]
            cst[r] += acc
        tape.append((A, d, bc, ua, sv))

    cdef const double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef Py_ssize_t d0 = A.shape[1]
    bound = np.empty(m)
    cdef double[::1] bnd = bound
    cdef double[:, ::1] gn = np.zeros((m, d0))
    cdef Py_ssize_t best
    for r in range(m):
        acc = 0.0
        for c in range(d0):
            acc += A[r, c] * x0v[c]
        if qq == 1.0:
            nrm = 0.0
            for c in range(d0):
                nrm += fabs(A[r, c])
                gn[r, c] = _sign(A[r, c])
        elif isinf(qq):
            nrm = -1.0
            best = 0
            for c in range(d0):
                if fabs(A[r, c]) > nrm:
                    nrm = fabs(A[r, c])
                    best = c
            gn[r, best] = _sign(A[r, best])
        else:
            nrm = 0.0
            for c in range(d0):
                nrm += pow(fabs(A[r, c]), qq)
            nrm = pow(nrm, 1.0 / qq)
            if nrm > 0:
                for c in range(d0):
                    gn[r, c] = _sign(A[r, c]) * pow(fabs(A[r, c]) / nrm, qq - 1.0)
        bnd[r] = acc - e * nrm + cst[r]
    a_out = np.asarray(A).copy()
    c_out = np.asarray(cst).copy()
    if not need_grad:
        return bound, a_out, c_out, None, None

    cdef const double[::1] rw
    if row_weights is None:
        rw = np.ones(m)
    else:
        rw = np.ascontiguousarray(row_weights, dtype=np.float64)
    cdef double[:, ::1] bar_A = np.empty((m, d0))
    cdef double[:, ::1] bar_lam
    for r in range(m):
        for c in range(d0):
            bar_A[r, c] = rw[r] * (x0v[c] - e * gn[r, c])
    grad_alpha = [None] * (k - 1)
    grad_beta = [None] * (k - 1)
    cdef double[::1] ga, gb
    for j, (A, d, bc, ua, sv) in enumerate(reversed(tape)):
        Wv = weights[j]
        bv = biases[j]
        n = Wv.shape[0]
        bar_lam = np.empty((m, n))
        _matmul_t(bar_A, Wv, bar_lam)
        ga = np.zeros(n)
        gb = np.zeros(n)
        bar_A = np.empty((m, n))
        for r in range(m):
            for c in range(n):
                v = bar_lam[r, c] + rw[r] * bv[c]
                gb[c] += v * sv[c]
                if ua[r, c]:
                    ga[c] += v * A[r, c]
                bar_A[r, c] = v * d[r, c] + rw[r] * bc[r, c]
        grad_alpha[j] = np.asarray(ga)
        grad_beta[j] = np.asarray(gb)
    return bound, a_out, c_out, grad_alpha, grad_beta


def pivot(double[:, ::1] T, Py_ssize_t r, Py_ssize_t c):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t nr = T.shape[0], nc = T.shape[1]
    cdef double p = T[r, c], f
    with nogil:
        for j in range(nc):
            T[r, j] /= p
        for i in range(nr):
            if i == r:
                continue
            f = T[i, c]
            if f == 0.0:
                continue
            for j in range(nc):
                T[i, j] -= f * T[r, j]
            T[i, c] = 0.0
        T[r, c] = 1.0
