"""Pure-numpy rollout kernels, vectorised over episodes.

Reference implementation and fallback for the compiled ``_kernels`` module;
both share the signatures and output layout documented in :mod:`vwaprl.kernels`.
"""
from __future__ import annotations

import math

import numpy as np

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _alloc(n, G):
    node = [np.empty((n, G + 1)) for _ in range(4)]
    step = [np.empty((n, G)) for _ in range(4)]
    return node, step


def _advance(i, v, S, X, Q, MU, REW, EXEC, env, z, jumps):
    b, k, sigma, kappa, phi, rho, h = env
    s, mu = S[:, i], MU[:, i]
    REW[:, i] = -phi * (v - rho * mu) ** 2 * h
    s1 = s - b * v * h + sigma * math.sqrt(h) * z[:, i]
    s_hat = s1 - k * v
    EXEC[:, i] = s_hat
    S[:, i + 1] = s1
    X[:, i + 1] = X[:, i] + s_hat * v * h
    Q[:, i + 1] = Q[:, i] - v * h
    MU[:, i + 1] = (1.0 - kappa * h) * mu + jumps[:, i]


def simulate_affine(init, env, coef, z, jumps, eps):
    """Policies whose mean is affine in ``(q, mu)``: ``v = c0 + cq q + cmu mu + std eps``.

    ``coef`` is ``(G, 4)`` with columns ``(c0, cq, cmu, std)``.
    """
    n, G = z.shape
    (S, X, Q, MU), (V, LOGD, REW, EXEC) = _alloc(n, G)
    S[:, 0], X[:, 0], Q[:, 0], MU[:, 0] = np.broadcast_to(init, (n, 4)).T
    for i in range(G):
        c0, cq, cmu, sd = coef[i]
        v = c0 + cq * Q[:, i] + cmu * MU[:, i]
        if sd > 0:
            v = v + sd * eps[:, i]
            LOGD[:, i] = -_HALF_LOG_2PI - math.log(sd) - 0.5 * eps[:, i] ** 2
        else:
            LOGD[:, i] = np.nan
        V[:, i] = v
        _advance(i, v, S, X, Q, MU, REW, EXEC, env, z, jumps)
    return S, X, Q, MU, V, LOGD, REW, EXEC


def _mlp(params, widths, a):
    off = 0
    L = len(widths) - 1
    for l in range(L):
        fi, fo = int(widths[l]), int(widths[l + 1])
        W = params[off: off + fi * fo].reshape(fi, fo)
        off += fi * fo
        a = a @ W + params[off: off + fo]
        off += fo
        if l < L - 1:
            a = np.tanh(a)
    return a


def simulate_mlp(init, env, params, widths, in_shift, in_scale, action_scale,
                 gaussian, log_std_lo, log_std_hi, z, jumps, eps):
    """Roll out a dense-net policy on inputs ``(t, S, X, Q, mu)``.

    With ``gaussian`` the net has two outputs and actions are sampled as
    ``mean + std * eps``; otherwise only the first output (times
    ``action_scale``) is used and ``LOGD`` is NaN.
    """
    n, G = z.shape
    h = env[6]
    (S, X, Q, MU), (V, LOGD, REW, EXEC) = _alloc(n, G)
    S[:, 0], X[:, 0], Q[:, 0], MU[:, 0] = np.broadcast_to(init, (n, 4)).T
    inp = np.empty((n, 5))
    for i in range(G):
        inp[:, 0] = i * h
        inp[:, 1], inp[:, 2], inp[:, 3], inp[:, 4] = S[:, i], X[:, i], Q[:, i], MU[:, i]
        out = _mlp(params, widths, (inp - in_shift) / in_scale)
        mean = action_scale * out[:, 0]
        if gaussian:
            raw = np.minimum(np.maximum(out[:, 1], log_std_lo), log_std_hi)
            v = mean + action_scale * np.exp(raw) * eps[:, i]
            LOGD[:, i] = -_HALF_LOG_2PI - (math.log(action_scale) + raw) - 0.5 * eps[:, i] ** 2
        else:
            v = mean
            LOGD[:, i] = np.nan
        V[:, i] = v
        _advance(i, v, S, X, Q, MU, REW, EXEC, env, z, jumps)
    return S, X, Q, MU, V, LOGD, REW, EXEC
