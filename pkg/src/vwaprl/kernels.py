"""Backend selection for the batched rollout kernels.

``vwaprl._kernels`` (Cython) is used when it was built; otherwise, or when the
environment variable ``VWAPRL_PURE_PYTHON`` is set, the numpy implementation in
``vwaprl._kernels_py`` is used.  Both expose

    simulate_affine(init, env, coef, z, jumps, eps)
    simulate_mlp(init, env, params, widths, in_shift, in_scale, action_scale,
                 gaussian, log_std_lo, log_std_hi, z, jumps, eps)

returning ``(S, X, Q, MU, V, LOGD, REW, EXEC)``: node arrays ``(n, G+1)`` and
step arrays ``(n, G)``.  ``init`` is ``(s0, x0, q0, mu0)``, or one such row per
episode, and ``env`` is
``(b, k, sigma, kappa, phi, rho, h)`` as packed by ``Environment.kernel_args``.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py
from .model_core import EpisodeAborted

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

if os.environ.get("VWAPRL_PURE_PYTHON") or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

# above this many episodes the default MLP rollout uses the numpy backend
# (see benchmarks/bench_kernels.py)
MLP_COMPILED_MAX_BATCH = 4

__all__ = ["MLP_COMPILED_MAX_BATCH", "BACKEND", "BACKENDS", "simulate_affine", "simulate_mlp", "get_backend"]


def get_backend(name: str | None = None):
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available (have {sorted(BACKENDS)})") from None


def _check(paths):
    V = paths[4]
    bad = ~np.isfinite(V)
    if bad.any():
        e, i = np.argwhere(bad)[0]
        raise EpisodeAborted(int(i), float(V[e, i]))
    return paths


def simulate_affine(init, env, coef, z, jumps, eps, backend: str | None = None):
    return _check(get_backend(backend).simulate_affine(init, env, coef, z, jumps, eps))


def simulate_mlp(init, env, params, widths, in_shift, in_scale, action_scale, gaussian,
                 log_std_lo, log_std_hi, z, jumps, eps, backend: str | None = None):
    widths = np.asarray(widths, dtype=np.int64)
    if backend is None and BACKEND == "cython" and np.shape(z)[0] > MLP_COMPILED_MAX_BATCH:
        # batched matrix products in numpy beat per-episode compiled loops here
        backend = "python"
    return _check(get_backend(backend).simulate_mlp(
        init, env, params, widths, in_shift, in_scale, float(action_scale), bool(gaussian),
        float(log_std_lo), float(log_std_hi), z, jumps, eps))
