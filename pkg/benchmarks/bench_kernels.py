"""Compare the compiled and pure-numpy rollout kernels.

Run:  python benchmarks/bench_kernels.py [--episodes N] [--repeat R]

Times a training-sized rollout (one episode, the default actor network), an
evaluation batch, and the affine closed-form kernel on both backends, and checks
the two produce the same paths.  The default dispatch sends MLP batches larger
than ``MLP_COMPILED_MAX_BATCH`` to numpy.
"""
import argparse
import timeit

import numpy as np

from vwaprl import ClosedForm, Environment, RngStreams, draw_market_noise
from vwaprl.gaussian_policy import ActorNet
from vwaprl.func_approx import state_standardization
from vwaprl.kernels import BACKENDS, simulate_affine, simulate_mlp


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    env = Environment()
    m = env.market
    init, en = env.kernel_args()
    shift, scale = state_standardization(m.s0, m.x0, m.q0, m.mu0, env.grid.t_end)
    actor = ActorNet.build((128, 64, 32), rng=np.random.default_rng(0), in_shift=shift, in_scale=scale,
                           action_scale=m.q0, output_gain=0.1)
    coef = ClosedForm(m, env.penalty, env.grid).affine_coefficients()
    streams = RngStreams(0)

    print(f"backends available: {sorted(BACKENDS)}")
    print(f"{'case':<28} {'backend':<8} {'ms/call':>10} {'speedup':>8}")
    for label, n in (("mlp, 1 episode", 1), (f"mlp, {args.episodes} episodes", args.episodes),
                     (f"affine, {args.episodes} episodes", args.episodes)):
        noise = draw_market_noise(streams, m, env.grid, n)
        eps = streams.policy.standard_normal((n, env.grid.n_steps))
        if label.startswith("mlp"):
            call = lambda b: simulate_mlp(init, en, actor.params, actor.net.widths, shift, scale, actor.action_scale,
                                          True, -10.0, 3.0, noise.z, noise.jumps, eps, backend=b)
        else:
            call = lambda b: simulate_affine(init, en, coef, noise.z, noise.jumps, eps, backend=b)
        times, outs = {}, {}
        for b in ("python", "cython"):
            if b not in BACKENDS:
                continue
            outs[b] = call(b)
            times[b] = min(timeit.repeat(lambda: call(b), number=1, repeat=args.repeat)) * 1e3
        for b, t in times.items():
            speed = times["python"] / t
            print(f"{label:<28} {b:<8} {t:>10.3f} {speed:>7.1f}x")
        if len(outs) == 2:
            gap = max(float(np.nanmax(np.abs(a - c))) for a, c in zip(outs["python"], outs["cython"]))
            print(f"{'':<28} max |python - cython| = {gap:.2e}")


if __name__ == "__main__":
    main()
