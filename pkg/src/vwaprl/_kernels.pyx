# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rollout kernels; same contract as ``_kernels_py``.

Episodes are simulated one after another, step by step, with the dense-net
forward pass written out as plain loops so no Python objects are touched
inside the hot path.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log, tanh, NAN

cnp.import_array()

cdef double HALF_LOG_2PI = 0.91893853320467274178


cdef inline void _advance(Py_ssize_t e, Py_ssize_t i, double v,
                          double[:, ::1] S, double[:, ::1] X, double[:, ::1] Q, double[:, ::1] MU,
                          double[:, ::1] REW, double[:, ::1] EXEC,
                          double b, double k, double sigma, double kappa, double phi, double rho,
                          double h, double sqh, double z, double jump) nogil:
    cdef double s = S[e, i]
    cdef double mu = MU[e, i]
    cdef double d = v - rho * mu
    REW[e, i] = -phi * d * d * h
    cdef double s1 = s - b * v * h + sigma * sqh * z
    cdef double s_hat = s1 - k * v
    EXEC[e, i] = s_hat
    S[e, i + 1] = s1
    X[e, i + 1] = X[e, i] + s_hat * v * h
    Q[e, i + 1] = Q[e, i] - v * h
    MU[e, i + 1] = (1.0 - kappa * h) * mu + jump


def _outputs(Py_ssize_t n, Py_ssize_t G):
    return ([np.empty((n, G + 1)) for _ in range(4)], [np.empty((n, G)) for _ in range(4)])


def simulate_affine(init, env, coef, z, jumps, eps):
    cdef double[:, ::1] ini = np.array(np.broadcast_to(init, (np.shape(z)[0], 4)), dtype=np.float64, order="C")
    cdef double[::1] en = np.ascontiguousarray(env, dtype=np.float64)
    cdef double[:, ::1] cf = np.ascontiguousarray(coef, dtype=np.float64)
    cdef double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] jj = np.ascontiguousarray(jumps, dtype=np.float64)
    cdef double[:, ::1] ee = np.ascontiguousarray(eps, dtype=np.float64)
    cdef Py_ssize_t n = zz.shape[0], G = zz.shape[1]
    nodes, steps = _outputs(n, G)
    cdef double[:, ::1] S = nodes[0], X = nodes[1], Q = nodes[2], MU = nodes[3]
    cdef double[:, ::1] V = steps[0], LOGD = steps[1], REW = steps[2], EXEC = steps[3]
    cdef double b = en[0], k = en[1], sigma = en[2], kappa = en[3], phi = en[4], rho = en[5], h = en[6]
    cdef double sqh = sqrt(h), v, sd
    cdef Py_ssize_t e, i
    with nogil:
        for e in range(n):
            S[e, 0] = ini[e, 0]; X[e, 0] = ini[e, 1]; Q[e, 0] = ini[e, 2]; MU[e, 0] = ini[e, 3]
            for i in range(G):
                sd = cf[i, 3]
                v = cf[i, 0] + cf[i, 1] * Q[e, i] + cf[i, 2] * MU[e, i]
                if sd > 0:
                    v = v + sd * ee[e, i]
                    LOGD[e, i] = -HALF_LOG_2PI - log(sd) - 0.5 * ee[e, i] * ee[e, i]
                else:
                    LOGD[e, i] = NAN
                V[e, i] = v
                _advance(e, i, v, S, X, Q, MU, REW, EXEC, b, k, sigma, kappa, phi, rho, h, sqh, zz[e, i], jj[e, i])
    return nodes[0], nodes[1], nodes[2], nodes[3], steps[0], steps[1], steps[2], steps[3]


def simulate_mlp(init, env, params, widths, in_shift, in_scale, double action_scale,
                 bint gaussian, double log_std_lo, double log_std_hi, z, jumps, eps):
    cdef double[:, ::1] ini = np.array(np.broadcast_to(init, (np.shape(z)[0], 4)), dtype=np.float64, order="C")
    cdef double[::1] en = np.ascontiguousarray(env, dtype=np.float64)
    cdef double[::1] P = np.ascontiguousarray(params, dtype=np.float64)
    cdef cnp.int64_t[::1] W = np.ascontiguousarray(widths, dtype=np.int64)
    cdef double[::1] shift = np.ascontiguousarray(in_shift, dtype=np.float64)
    cdef double[::1] scale = np.ascontiguousarray(in_scale, dtype=np.float64)
    cdef double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] jj = np.ascontiguousarray(jumps, dtype=np.float64)
    cdef double[:, ::1] ee = np.ascontiguousarray(eps, dtype=np.float64)
    cdef Py_ssize_t n = zz.shape[0], G = zz.shape[1]
    cdef Py_ssize_t L = W.shape[0] - 1
    if W[0] != 5:
        raise ValueError("policy net must take the 5 inputs (t, S, X, Q, mu)")
    if W[L] < (2 if gaussian else 1):
        raise ValueError("policy net has too few outputs")
    cdef Py_ssize_t widest = 0, l
    for l in range(L + 1):
        if W[l] > widest:
            widest = W[l]
    cdef double[::1] buf_a = np.empty(widest)
    cdef double[::1] buf_b = np.empty(widest)
    nodes, steps = _outputs(n, G)
    cdef double[:, ::1] S = nodes[0], X = nodes[1], Q = nodes[2], MU = nodes[3]
    cdef double[:, ::1] V = steps[0], LOGD = steps[1], REW = steps[2], EXEC = steps[3]
    cdef double b = en[0], k = en[1], sigma = en[2], kappa = en[3], phi = en[4], rho = en[5], h = en[6]
    cdef double sqh = sqrt(h), v, raw, acc, log_scale = log(action_scale)
    cdef Py_ssize_t e, i, off, fi, fo, r, c
    cdef double* src
    cdef double* dst
    cdef double* tmp
    cdef double* pa = &buf_a[0]
    cdef double* pb = &buf_b[0]
    with nogil:
        for e in range(n):
            S[e, 0] = ini[e, 0]; X[e, 0] = ini[e, 1]; Q[e, 0] = ini[e, 2]; MU[e, 0] = ini[e, 3]
            for i in range(G):
                src = pa
                dst = pb
                src[0] = (i * h - shift[0]) / scale[0]
                src[1] = (S[e, i] - shift[1]) / scale[1]
                src[2] = (X[e, i] - shift[2]) / scale[2]
                src[3] = (Q[e, i] - shift[3]) / scale[3]
                src[4] = (MU[e, i] - shift[4]) / scale[4]
                off = 0
                for l in range(L):
                    fi = W[l]
                    fo = W[l + 1]
                    for c in range(fo):
                        dst[c] = P[off + fi * fo + c]
                    for r in range(fi):
                        acc = src[r]
                        for c in range(fo):
                            dst[c] += acc * P[off + r * fo + c]
                    off += fi * fo + fo
                    if l < L - 1:
                        for c in range(fo):
                            dst[c] = tanh(dst[c])
                    tmp = src
                    src = dst
                    dst = tmp
                v = action_scale * src[0]
                if gaussian:
                    raw = src[1]
                    if raw < log_std_lo:
                        raw = log_std_lo
                    elif raw > log_std_hi:
                        raw = log_std_hi
                    v = v + action_scale * exp(raw) * ee[e, i]
                    LOGD[e, i] = -HALF_LOG_2PI - (log_scale + raw) - 0.5 * ee[e, i] * ee[e, i]
                else:
                    LOGD[e, i] = NAN
                V[e, i] = v
                _advance(e, i, v, S, X, Q, MU, REW, EXEC, b, k, sigma, kappa, phi, rho, h, sqh, zz[e, i], jj[e, i])
    return nodes[0], nodes[1], nodes[2], nodes[3], steps[0], steps[1], steps[2], steps[3]
