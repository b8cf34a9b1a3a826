import os
import subprocess
import sys

import numpy as np
import pytest

from vwaprl import ClosedForm, EpisodeAborted, RngStreams, draw_market_noise, kernels
from vwaprl.func_approx import state_standardization
from vwaprl.gaussian_policy import ActorNet
from conftest import closed_form

BACKENDS = sorted(kernels.BACKENDS)


def actor_for(env, seed=0):
    m = env.market
    shift, scale = state_standardization(m.s0, m.x0, m.q0, m.mu0, env.grid.t_end)
    return ActorNet.build((16, 8), rng=np.random.default_rng(seed), in_shift=shift, in_scale=scale,
                          action_scale=1.25, init_log_std=-1.0)


def run_mlp(env, actor, noise, eps, gaussian, backend):
    init, en = env.kernel_args()
    net = actor.net
    return kernels.simulate_mlp(init, en, net.params, net.widths, net.in_shift, net.in_scale,
                                actor.action_scale, gaussian, actor.log_std_lo, actor.log_std_hi,
                                noise.z, noise.jumps, eps, backend=backend)


def generic(env, actor, seed, gaussian):
    tr = env.rollout(actor.callable(env.grid, stochastic=gaussian), RngStreams(seed))
    return tr


class TestBackends:
    def test_compiled_available(self):
        # the build ships the extension; the fallback is still exercised below
        assert "python" in kernels.BACKENDS
        if os.environ.get("VWAPRL_REQUIRE_EXT"):
            assert "cython" in kernels.BACKENDS

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            kernels.get_backend("fortran")

    def test_forced_fallback(self):
        code = "import vwaprl.kernels as k; print(k.BACKEND)"
        out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "VWAPRL_PURE_PYTHON": "1"},
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"


@pytest.mark.parametrize("backend", BACKENDS)
class TestAgreement:
    @pytest.mark.parametrize("gaussian", [True, False])
    def test_mlp_matches_generic_rollout(self, any_env, backend, gaussian):
        actor = actor_for(any_env, 1)
        streams = RngStreams(7)
        noise = draw_market_noise(streams, any_env.market, any_env.grid, 1)
        eps = streams.policy.standard_normal((1, any_env.grid.n_steps))
        paths = run_mlp(any_env, actor, noise, eps, gaussian, backend)
        tr = generic(any_env, actor, 7, gaussian)
        ref = (tr.s, tr.x, tr.q, tr.mu, tr.v, tr.log_density, tr.reward, tr.exec_price)
        for got, want in zip(paths, ref):
            if want is None:
                assert np.all(np.isnan(got))
            else:
                assert np.allclose(got[0], want, rtol=1e-10, atol=1e-10)
        assert any_env.path_returns(paths)[0] == pytest.approx(tr.total_return, rel=1e-10)

    def test_affine_matches_generic_rollout(self, any_env, backend):
        cf = closed_form(any_env)
        coef = cf.affine_coefficients()
        streams = RngStreams(3)
        noise = draw_market_noise(streams, any_env.market, any_env.grid, 1)
        eps = streams.policy.standard_normal((1, any_env.grid.n_steps))
        init, en = any_env.kernel_args()
        paths = kernels.simulate_affine(init, en, coef, noise.z, noise.jumps, eps, backend=backend)

        def policy(i, state, rng):
            spec = cf.optimal_exploratory_policy(i * any_env.h, state)
            z = rng.standard_normal()
            return spec.mean + spec.std * z, spec.log_density(spec.mean + spec.std * z)

        tr = any_env.rollout(policy, RngStreams(3))
        assert np.allclose(paths[4][0], tr.v, rtol=1e-10, atol=1e-12)
        assert np.allclose(paths[5][0], tr.log_density, rtol=1e-10)
        assert any_env.path_returns(paths)[0] == pytest.approx(tr.total_return, rel=1e-10)

    def test_nonfinite_action_aborts(self, env1, backend):
        actor = actor_for(env1)
        actor.params = np.full_like(actor.params, np.nan)
        noise = draw_market_noise(RngStreams(0), env1.market, env1.grid, 2)
        with pytest.raises(EpisodeAborted):
            run_mlp(env1, actor, noise, np.zeros((2, 100)), False, backend)


def test_backends_agree_on_batches(env2):
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    actor = actor_for(env2, 4)
    streams = RngStreams(11)
    noise = draw_market_noise(streams, env2.market, env2.grid, 50)
    eps = streams.policy.standard_normal((50, 100))
    a = run_mlp(env2, actor, noise, eps, True, "python")
    b = run_mlp(env2, actor, noise, eps, True, "cython")
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-10, atol=1e-10)
