"""Per-trajectory update directions for the three learning schemes.

Rewards in a :class:`Trajectory` already include the step length (``r_i`` is
``-phi (v - rho mu)^2 h``), so entropy terms are added as ``gamma log pi h``.
Every function returns a direction; the caller applies it with ``sgd_step``.
"""
from __future__ import annotations

import math

import numpy as np

from ..closed_form import GaussianPolicySpec
from ..model_core import MarketState, PenaltyParams, TimeGrid, Trajectory

__all__ = [
    "TargetUndefined",
    "regularized_rewards",
    "adp_critic_grad",
    "adp_targets",
    "adp_actor_grad",
    "adp_exploratory_policy",
    "ml_critic_delta",
    "mo_critic_delta",
    "draw_test_function",
    "policy_delta",
]

DENOM_GUARD = 1e-8


class TargetUndefined(ArithmeticError):
    """The first-order-condition denominator vanished at some node."""

    def __init__(self, node: int, dv_dx: float):
        super().__init__(f"speed target undefined at node {node}: k_hat*dV/dx + phi ~ 0 (dV/dx = {dv_dx!r})")
        self.node = node
        self.dv_dx = dv_dx


def _need_log_density(traj: Trajectory):
    if traj.log_density is None:
        raise ValueError("trajectory has no log-densities; a sampled policy is required")
    return traj.log_density


def regularized_rewards(traj: Trajectory, gamma: float) -> np.ndarray:
    """``r_i - gamma log pi_i h``."""
    return traj.reward - gamma * _need_log_density(traj) * traj.grid.step


# -- ADP -------------------------------------------------------------------
def adp_critic_grad(critic, traj: Trajectory):
    """Loss ``sum_i (g_i - V_i)^2 + (f - V_T)^2`` and its parameter gradient.

    ``g_i`` is the realised reward-to-go from node ``i``; ``g_G = f``.
    """
    inp = traj.inputs()
    target = np.empty(traj.n_steps + 1)
    target[-1] = traj.terminal_reward
    target[:-1] = traj.terminal_reward + np.cumsum(traj.reward[::-1])[::-1]
    resid = target - critic.value(inp)
    loss = float(resid @ resid)
    return loss, critic.grad_params(inp, -2.0 * resid)


def adp_targets(critic, inputs, b_hat: float, k_hat: float, penalty: PenaltyParams) -> np.ndarray:
    """First-order-condition speeds built from critic input gradients."""
    g = critic.grad_input(inputs)
    dS, dx, dq = g[:, 1], g[:, 2], g[:, 3]
    s, mu = inputs[:, 1], inputs[:, 4]
    den = 2.0 * (k_hat * dx + penalty.phi)
    small = np.flatnonzero(~(np.abs(den) > 2.0 * DENOM_GUARD))
    if small.size:
        i = int(small[0])
        raise TargetUndefined(i, float(dx[i]))
    return (s * dx - dq - b_hat * dS + 2.0 * penalty.phi * penalty.rho * mu) / den


def adp_actor_grad(actor, critic, traj: Trajectory, b_hat: float, k_hat: float, penalty: PenaltyParams):
    """Loss ``sum_i (mean_i - target_i)^2`` (targets held fixed) and its gradient."""
    inp = traj.inputs()[:-1]
    target = adp_targets(critic, inp, b_hat, k_hat, penalty)
    a = actor.action_scale

    def cotangent(out):
        up = np.zeros_like(out)
        up[:, 0] = 2.0 * (a * out[:, 0] - target) * a
        return up

    out, grad = actor.net.forward_and_grad(inp, cotangent)
    resid = a * out[:, 0] - target
    return float(resid @ resid), grad


def adp_exploratory_policy(critic, t_index: int, state: MarketState, b_hat: float, k_hat: float,
                           penalty: PenaltyParams, grid: TimeGrid) -> GaussianPolicySpec:
    inp = state.as_input(grid)[None, :]
    mean = float(adp_targets(critic, inp, b_hat, k_hat, penalty)[0])
    dx = float(critic.grad_input(inp)[0, 2])
    var = penalty.gamma / (2.0 * (penalty.phi + k_hat * dx))
    if not var >= 0:
        raise TargetUndefined(t_index, dx)
    return GaussianPolicySpec(mean, math.sqrt(var))


# -- martingale critics ----------------------------------------------------
def ml_critic_delta(critic, traj: Trajectory, gamma: float):
    """Martingale-loss direction (apply as ascent).  Returns ``(delta, loss)``.

    ``loss`` is ``sum_i (G_i - V_i)^2 h`` with ``G_i`` the regularised reward-to-go.
    """
    h = traj.grid.step
    inp = traj.inputs()[:-1]
    r = regularized_rewards(traj, gamma)
    to_go = traj.terminal_reward + np.cumsum(r[::-1])[::-1]
    resid = to_go - critic.value(inp)
    return critic.grad_params(inp, resid * h), float(resid @ resid * h)


def draw_test_function(rng: np.random.Generator, G: int) -> np.ndarray:
    if G < 1:
        raise ValueError("G must be >= 1")
    xi = rng.uniform(0.0, 1.0, G)
    xi[-1] = 1.0
    return xi


def mo_critic_delta(critic, traj: Trajectory, xi, gamma: float):
    """Orthogonality-residual direction (apply as descent).  Returns ``(delta, A)``.

    The critic's terminal value is replaced by the realised payoff, so it has no
    gradient at node ``G``.
    """
    G = traj.n_steps
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (G,):
        raise ValueError(f"test function needs {G} values")
    inp = traj.inputs()
    V = critic.value(inp)
    V[-1] = traj.terminal_reward
    A = float(xi @ (np.diff(V) + regularized_rewards(traj, gamma)))
    up = np.zeros(G + 1)
    up[1:G] = xi[:-1]
    up[:G] -= xi
    return A * critic.grad_params(inp, up), A


def policy_delta(actor, critic, traj: Trajectory, gamma: float, terminal: str = "critic") -> np.ndarray:
    """Policy-gradient direction (apply as ascent).

    ``terminal`` picks the value used at node ``G``: the critic's own estimate
    (``"critic"``) or the realised payoff (``"payoff"``).
    """
    h = traj.grid.step
    inp = traj.inputs()
    V = critic.value(inp)
    if terminal == "payoff":
        V[-1] = traj.terminal_reward
    elif terminal != "critic":
        raise ValueError("terminal must be 'critic' or 'payoff'")
    logd = _need_log_density(traj)
    td = np.diff(V) + traj.reward - (gamma * logd + gamma) * h
    return actor.score_batch(inp[:-1], traj.v, td)
