# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_reference``.

Same signatures and semantics; results agree with the numpy versions to
rounding, not bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, tanh, INFINITY

cnp.import_array()


cdef inline double _sig(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def gates_forward(z, c_prev, bint standard_cell_output):
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[:, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef Py_ssize_t B = cp.shape[0], H = cp.shape[1], b, k
    acts = np.empty((B, 4 * H))
    c = np.empty((B, H))
    h = np.empty((B, H))
    cdef double[:, ::1] av = acts
    cdef double[:, ::1] cv = c
    cdef double[:, ::1] hv = h
    cdef double gi, go, gf, gg, cc
    with nogil:
        for b in range(B):
            for k in range(H):
                gi = _sig(zv[b, k])
                go = _sig(zv[b, H + k])
                gf = _sig(zv[b, 2 * H + k])
                gg = tanh(zv[b, 3 * H + k])
                av[b, k] = gi
                av[b, H + k] = go
                av[b, 2 * H + k] = gf
                av[b, 3 * H + k] = gg
                cc = gf * cp[b, k] + gi * gg
                cv[b, k] = cc
                hv[b, k] = go * tanh(cc) if standard_cell_output else go * cc
    return acts, c, h


def gates_backward(acts, c_prev, c, dh, dc_next, bint standard_cell_output):
    cdef const double[:, ::1] av = np.ascontiguousarray(acts, dtype=np.float64)
    cdef const double[:, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64)
    cdef const double[:, ::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef const double[:, ::1] dhv = np.ascontiguousarray(dh, dtype=np.float64)
    cdef const double[:, ::1] dcn = np.ascontiguousarray(dc_next, dtype=np.float64)
    cdef Py_ssize_t B = cp.shape[0], H = cp.shape[1], b, k
    dz = np.empty((B, 4 * H))
    dcp = np.empty((B, H))
    cdef double[:, ::1] dzv = dz
    cdef double[:, ::1] dcpv = dcp
    cdef double gi, go, gf, gg, tc, do, dc
    with nogil:
        for b in range(B):
            for k in range(H):
                gi = av[b, k]
                go = av[b, H + k]
                gf = av[b, 2 * H + k]
                gg = av[b, 3 * H + k]
                if standard_cell_output:
                    tc = tanh(cv[b, k])
                    do = dhv[b, k] * tc
                    dc = dcn[b, k] + dhv[b, k] * go * (1.0 - tc * tc)
                else:
                    do = dhv[b, k] * cv[b, k]
                    dc = dcn[b, k] + dhv[b, k] * go
                dzv[b, k] = dc * gg * gi * (1.0 - gi)
                dzv[b, H + k] = do * go * (1.0 - go)
                dzv[b, 2 * H + k] = dc * cp[b, k] * gf * (1.0 - gf)
                dzv[b, 3 * H + k] = dc * gi * (1.0 - gg * gg)
                dcpv[b, k] = dc * gf
    return dz, dcp


def masked_xent(logits, support, targets, weights):
    cdef const double[:, ::1] lv = np.ascontiguousarray(logits, dtype=np.float64)
    cdef Py_ssize_t N = lv.shape[0], V = lv.shape[1], n, v
    sup = np.ascontiguousarray(support, dtype=np.uint8)
    cdef bint per_row = sup.ndim == 2
    cdef const cnp.uint8_t[:, ::1] s2 = sup if per_row else sup.reshape(1, V)
    cdef const cnp.int64_t[::1] tv = np.ascontiguousarray(targets, dtype=np.int64)
    cdef const double[::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    losses = np.empty(N)
    dlogits = np.zeros((N, V))
    cdef double[::1] lossv = losses
    cdef double[:, ::1] dv = dlogits
    cdef double m, s, e, w
    cdef Py_ssize_t r
    with nogil:
        for n in range(N):
            r = n if per_row else 0
            m = -INFINITY
            for v in range(V):
                if s2[r, v] and lv[n, v] > m:
                    m = lv[n, v]
            s = 0.0
            for v in range(V):
                if s2[r, v]:
                    e = exp(lv[n, v] - m)
                    dv[n, v] = e
                    s += e
            w = wv[n]
            # inactive target gives +inf loss, as in the numpy version
            if s2[r, tv[n]]:
                lossv[n] = log(s) - (lv[n, tv[n]] - m)
            else:
                lossv[n] = INFINITY
            for v in range(V):
                dv[n, v] = dv[n, v] / s * w
            dv[n, tv[n]] -= w
    return losses, dlogits
