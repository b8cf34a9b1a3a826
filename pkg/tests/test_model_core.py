import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vwaprl import (
    Environment,
    EpisodeAborted,
    MarketParams,
    MarketState,
    PenaltyParams,
    RngStreams,
    TimeGrid,
    Trajectory,
    draw_market_noise,
)
from conftest import ENV1_MARKET, ENV2_MARKET, ENV2_PENALTY, const_policy


def frictionless(**kw):
    base = dict(b=0.0, k=0.0, sigma=0.0)
    base.update(kw)
    return MarketParams(**base)


class TestParams:
    def test_env1_defaults(self):
        m = MarketParams()
        assert (m.kappa, m.lam, m.eta_mean, m.b, m.k, m.alpha, m.sigma) == (20, 50, 10, 0.1, 0.1, 100, 0.5)
        assert (m.s0, m.x0, m.q0, m.mu0) == (20, 0, 1.25, 25)

    @pytest.mark.parametrize("kw,name", [
        (dict(kappa=0), "kappa"), (dict(lam=-1), "lambda"), (dict(eta_mean=0), "eta_mean"),
        (dict(b=-0.1), "b"), (dict(k=-1), "k"), (dict(sigma=-1), "sigma"),
        (dict(alpha=0.05, b=0.1), "alpha"), (dict(s0=float("nan")), "s0"),
    ])
    def test_invariants_named(self, kw, name):
        with pytest.raises(ValueError, match=f"^{name}:"):
            MarketParams(**kw)

    @pytest.mark.parametrize("kw", [dict(phi=0), dict(rho=-0.1), dict(gamma=-1)])
    def test_penalty_invariants(self, kw):
        with pytest.raises(ValueError):
            PenaltyParams(**kw)

    def test_grid(self):
        g = TimeGrid(2.0, 50)
        assert g.step == 0.04
        assert g.times()[-1] == pytest.approx(2.0, abs=1e-15)
        assert g.times()[7] == 7 * g.step
        with pytest.raises(ValueError):
            TimeGrid(1.0, 0)

    def test_unstable_decay_rejected(self):
        with pytest.raises(ValueError, match="kappa"):
            Environment(MarketParams(kappa=100.0), PenaltyParams(), TimeGrid(1.0, 100))


class TestJumpProcess:
    def test_sample_eta_mean(self, env1):
        rng = np.random.default_rng(0)
        draws = rng.exponential(env1.market.eta_mean, 10**6)
        assert abs(draws.mean() - 10.0) < 0.05
        assert draws.min() >= 0
        assert env1.sample_eta(np.random.default_rng(5)) == env1.sample_eta(np.random.default_rng(5))
        assert env1.sample_eta(np.random.default_rng(5)) >= 0

    def test_pure_decay(self):
        env = Environment(MarketParams(lam=0.0), PenaltyParams(), TimeGrid())
        streams = RngStreams(0)
        assert env.step_mu(25.0, streams) == pytest.approx(20.0, abs=1e-14)
        assert env.step_mu(0.0, streams) == 0.0

    def test_jump_sum_nonnegative(self, env1):
        streams = RngStreams(3)
        mus = [env1.step_mu(0.0, streams) for _ in range(2000)]
        assert min(mus) >= 0
        # about lam*h*eta_mean = 5 on average
        assert abs(np.mean(mus) - 5.0) < 3 * 10 * math.sqrt(2 * 0.5) / math.sqrt(2000)

    @pytest.mark.parametrize("t_index", [25, 50, 100])
    def test_mean_law(self, env1, t_index):
        noise = draw_market_noise(RngStreams(11), env1.market, env1.grid, 20000)
        mu = np.full(noise.n_episodes, env1.market.mu0)
        decay = 1 - env1.market.kappa * env1.h
        for i in range(t_index):
            mu = decay * mu + noise.jumps[:, i]
        m = env1.market
        t = t_index * env1.h
        expected = m.mu0 * math.exp(-m.kappa * t) + m.lam * m.eta_mean / m.kappa * (1 - math.exp(-m.kappa * t))
        assert expected == pytest.approx(25.0)
        se = mu.std(ddof=1) / math.sqrt(len(mu))
        assert abs(mu.mean() - expected) < 3 * se


class TestStep:
    def test_frictionless_bookkeeping(self):
        env = Environment(frictionless(), PenaltyParams(), TimeGrid())
        nxt, reward, s_hat = env.transition(env.initial_state(), 1.25, 0.7, 0.0)
        assert nxt.s == 20.0 and s_hat == 20.0
        assert nxt.x == pytest.approx(0.25, abs=1e-15)
        assert nxt.q == pytest.approx(1.2375, abs=1e-15)
        assert nxt.t_index == 1

    def test_perfect_tracking_zero_reward(self, env1):
        state = env1.initial_state()
        _, reward = env1.env_step(state, env1.penalty.rho * state.mu, RngStreams(0))
        assert reward == 0.0

    def test_permanent_impact_env2(self):
        env = Environment(MarketParams(b=0.5, k=0.5, alpha=10.0, sigma=0.0), ENV2_PENALTY, TimeGrid())
        nxt, _ = env.env_step(env.initial_state(), 1.0, RngStreams(0))
        assert nxt.s == pytest.approx(20 - 0.5 * env.h, abs=1e-14)

    @pytest.mark.parametrize("x,q,s,alpha,expected", [
        (0.0, 1.25, 20.0, 100.0, -131.25),
        (25.0, 0.0, 20.0, 100.0, 25.0),
        (0.0, 1.25, 20.0, 10.0, 9.375),
    ])
    def test_terminal_reward(self, x, q, s, alpha, expected):
        env = Environment(MarketParams(alpha=alpha), PenaltyParams(), TimeGrid())
        assert env.terminal_reward(MarketState(s, x, q, 25.0, 100)) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(v=st.floats(-50, 50), mu=st.floats(0, 200))
    def test_running_reward_sign(self, v, mu):
        env = Environment()
        r = env.running_reward(v, mu)
        assert r <= 0
        if v == env.penalty.rho * mu:
            assert r == 0


class TestRollout:
    def test_twap_frictionless_oracle(self):
        env = Environment(frictionless(lam=0.0), PenaltyParams(), TimeGrid())
        v = env.market.q0 / env.grid.t_end
        tr = env.rollout(const_policy(v), RngStreams(0))
        assert tr.q[-1] == pytest.approx(0.0, abs=1e-12)
        h, p = env.h, env.penalty
        mu = env.market.mu0 * (1 - env.market.kappa * h) ** np.arange(env.grid.n_steps)
        expected = 20.0 * v * h * env.grid.n_steps - p.phi * np.sum((v - p.rho * mu) ** 2) * h
        assert tr.total_return == pytest.approx(expected, rel=1e-12)

    def test_inaction(self, env1):
        tr = env1.rollout(const_policy(0.0), RngStreams(2))
        assert np.all(tr.reward < 0)
        assert tr.q[-1] == env1.market.q0

    def test_reproducible(self, env1):
        a = env1.rollout(const_policy(1.0), RngStreams(9))
        b = env1.rollout(const_policy(1.0), RngStreams(9))
        for name in ("s", "x", "q", "mu", "v", "reward"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_deterministic_without_noise(self):
        env = Environment(MarketParams(lam=0.0, sigma=0.0), PenaltyParams(), TimeGrid())
        a = env.rollout(const_policy(0.8), RngStreams(1))
        b = env.rollout(const_policy(0.8), RngStreams(2))
        assert np.array_equal(a.x, b.x) and a.terminal_reward == b.terminal_reward

    def test_policy_draws_do_not_move_market(self, env1):
        def noisy(i, state, rng):
            return 1.0 + rng.standard_normal(), 0.0

        a = env1.rollout(const_policy(1.0), RngStreams(4))
        b = env1.rollout(noisy, RngStreams(4))
        assert np.array_equal(a.mu, b.mu)
        assert not np.array_equal(a.v, b.v)

    def test_nonfinite_action_aborts(self, env1):
        policy = lambda i, state, rng: float("nan") if i == 7 else 1.0
        with pytest.raises(EpisodeAborted) as err:
            env1.rollout(policy, RngStreams(0))
        assert err.value.node == 7

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), v=st.floats(-3, 3))
    def test_inventory_and_cash_identities(self, seed, v):
        env = Environment(ENV2_MARKET, ENV2_PENALTY, TimeGrid())
        rng = np.random.default_rng(seed)
        speeds = v + rng.standard_normal(env.grid.n_steps)
        tr = env.rollout(lambda i, state, r: float(speeds[i]), RngStreams(seed))
        h = env.h
        assert tr.q[-1] == pytest.approx(env.market.q0 - h * speeds.sum(), rel=1e-9, abs=1e-12)
        assert tr.x[-1] == pytest.approx(env.market.x0 + h * np.sum(tr.exec_price * speeds), rel=1e-9, abs=1e-12)
        assert np.allclose(tr.exec_price, tr.s[1:] - env.market.k * speeds, rtol=0, atol=1e-12)
        assert np.all(tr.mu >= 0)
        assert [s.state.t_index for s in tr.steps] == list(range(env.grid.n_steps))
        term = tr.terminal_state
        assert tr.terminal_reward == pytest.approx(term.x + term.q * (term.s - env.market.alpha * term.q))


class TestCsv:
    def test_roundtrip(self, env2, tmp_path):
        def policy(i, state, rng):
            return 1.0 + 0.1 * rng.standard_normal(), -1.5
        tr = env2.rollout(policy, RngStreams(5))
        path = tmp_path / "ep.csv"
        tr.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t_index,t,S,X,Q,mu,v,reward,log_density"
        assert len(lines) == 1 + env2.grid.n_steps + 1
        back = Trajectory.from_csv(path, env2.market, env2.grid)
        for name in ("s", "x", "q", "mu", "v", "reward", "log_density"):
            assert np.array_equal(getattr(back, name), getattr(tr, name))
        assert back.terminal_reward == pytest.approx(tr.terminal_reward, rel=1e-14)
        assert np.allclose(back.exec_price, tr.exec_price, rtol=1e-10)

    def test_deterministic_leaves_log_density_empty(self, env1, tmp_path):
        tr = env1.rollout(const_policy(1.25), RngStreams(5))
        tr.to_csv(tmp_path / "d.csv")
        assert (tmp_path / "d.csv").read_text().splitlines()[1].endswith(",")
        assert Trajectory.from_csv(tmp_path / "d.csv", env1.market, env1.grid).log_density is None
