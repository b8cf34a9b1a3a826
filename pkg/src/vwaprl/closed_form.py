"""Closed-form optimal policies.

With the ansatz ``V = x + q S + w0(t, mu) + w1(t, mu) q + w2(t) q^2`` the HJB
equation separates into ODEs whose solutions are

    w2(t) = -((T - t)/(k + phi) + 1/(alpha - b/2))^-1 - b/2
    w1(t, mu) = l0(t) + l1(t) mu
    l1(t) = 2 phi rho ((T - t) + zeta)^-1 (1 - exp(-kappa (T - t))) / kappa
    l0(t) = 2 phi rho lam E[eta] ((T - t) + zeta)^-1 (exp(-kappa (T - t)) - 1 + kappa (T - t)) / kappa^2

with ``zeta = (k + phi) / (alpha - b/2)``.  The entropy-regularised optimum is
Gaussian with a state-independent variance ``gamma / (2 (phi + k))`` and a mean
equal to the classical optimal speed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model_core import MarketParams, MarketState, PenaltyParams, TimeGrid

__all__ = ["GaussianPolicySpec", "ClosedForm"]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianPolicySpec:
    """Action distribution at one state; ``std == 0`` is a point mass at ``mean``."""

    mean: float
    std: float

    @property
    def deterministic(self) -> bool:
        return self.std == 0.0

    def log_density(self, v: float) -> float:
        d = (v - self.mean) / self.std
        return -0.5 * _LOG_2PI - math.log(self.std) - 0.5 * d * d

    def density(self, v):
        v = np.asarray(v, dtype=float)
        d = (v - self.mean) / self.std
        return np.exp(-0.5 * d * d) / (self.std * math.sqrt(2.0 * math.pi))


class ClosedForm:
    """Analytic coefficient functions and optimal policies for one environment."""

    def __init__(self, market: MarketParams, penalty: PenaltyParams, grid: TimeGrid):
        if market.alpha <= market.b / 2:
            raise ValueError("alpha: closed form requires alpha > b/2")
        self.market = market
        self.penalty = penalty
        self.grid = grid

    @property
    def T(self) -> float:
        return self.grid.t_end

    @property
    def zeta(self) -> float:
        m, p = self.market, self.penalty
        return (m.k + p.phi) / (m.alpha - 0.5 * m.b)

    # -- coefficient functions (vectorised in t) ---------------------------
    def w2(self, t):
        m, p = self.market, self.penalty
        tau = self.T - np.asarray(t, dtype=float)
        return -1.0 / (tau / (m.k + p.phi) + 1.0 / (m.alpha - 0.5 * m.b)) - 0.5 * m.b

    def l1(self, t):
        m, p = self.market, self.penalty
        tau = self.T - np.asarray(t, dtype=float)
        return 2.0 * p.phi * p.rho / (tau + self.zeta) * (-np.expm1(-m.kappa * tau)) / m.kappa

    def l0(self, t):
        m, p = self.market, self.penalty
        tau = self.T - np.asarray(t, dtype=float)
        ramp = (np.expm1(-m.kappa * tau) + m.kappa * tau) / m.kappa**2
        return 2.0 * p.phi * p.rho * m.lam * m.eta_mean / (tau + self.zeta) * ramp

    def w1(self, t, mu):
        return self.l0(t) + self.l1(t) * np.asarray(mu, dtype=float)

    # -- policies --------------------------------------------------------
    def optimal_speed_at(self, t, q, mu):
        """Classical optimal speed, vectorised over ``(t, q, mu)``."""
        m, p = self.market, self.penalty
        q = np.asarray(q, dtype=float)
        mu = np.asarray(mu, dtype=float)
        tracking = p.phi * p.rho * mu - 0.5 * self.w1(t, mu)
        return (tracking - (0.5 * m.b + self.w2(t)) * q) / (m.k + p.phi)

    def optimal_speed(self, t: float, state: MarketState) -> float:
        return float(self.optimal_speed_at(t, state.q, state.mu))

    @property
    def exploration_std(self) -> float:
        m, p = self.market, self.penalty
        return math.sqrt(p.gamma / (2.0 * (p.phi + m.k)))

    def exploratory_mean_at(self, t, q, mu):
        # Same optimum written through the value-function coefficients; kept
        # separate from optimal_speed_at so the two forms check each other.
        m, p = self.market, self.penalty
        q = np.asarray(q, dtype=float)
        mu = np.asarray(mu, dtype=float)
        num = -self.w1(t, mu) - 2.0 * self.w2(t) * q - m.b * q + 2.0 * p.phi * p.rho * mu
        return num / (2.0 * (p.phi + m.k))

    def optimal_exploratory_policy(self, t: float, state: MarketState) -> GaussianPolicySpec:
        return GaussianPolicySpec(float(self.exploratory_mean_at(t, state.q, state.mu)), self.exploration_std)

    def twap_speed(self) -> float:
        return self.market.q0 / self.T

    def affine_coefficients(self, stochastic: bool = True) -> np.ndarray:
        """Per-node ``(c0, c_q, c_mu, std)`` with mean speed ``c0 + c_q q + c_mu mu``."""
        m, p = self.market, self.penalty
        t = self.grid.times()[:-1]
        kp = m.k + p.phi
        coef = np.empty((len(t), 4))
        coef[:, 0] = -0.5 * self.l0(t) / kp
        coef[:, 1] = -(0.5 * m.b + self.w2(t)) / kp
        coef[:, 2] = (p.phi * p.rho - 0.5 * self.l1(t)) / kp
        coef[:, 3] = self.exploration_std if stochastic else 0.0
        return coef

    def twap_coefficients(self) -> np.ndarray:
        coef = np.zeros((self.grid.n_steps, 4))
        coef[:, 0] = self.twap_speed()
        return coef

    # -- diagnostics -----------------------------------------------------
    def coeff_ode_residual(self, t, which: str, delta: float | None = None, order: int = 4):
        """Residual of the coefficient ODE ``which`` at interior times ``t``.

        The time derivative is a central difference of the given ``order`` (2 or
        4) with half-width ``delta`` (default ``1e-5 * T``).  Order 4 is the
        default: when ``zeta`` is small, ``w2`` bends sharply just before ``T``
        and the three-point stencil's truncation error reaches 1e-3.
        """
        m, p = self.market, self.penalty
        if delta is None:
            delta = 1e-5 * self.T
        t = np.asarray(t, dtype=float)
        kp = m.k + p.phi
        u = self.w2(t) + 0.5 * m.b
        fn = {"w2": self.w2, "l1": self.l1, "l0": self.l0}[which]
        if order == 2:
            dt = (fn(t + delta) - fn(t - delta)) / (2.0 * delta)
        elif order == 4:
            dt = (8.0 * (fn(t + delta) - fn(t - delta)) - (fn(t + 2 * delta) - fn(t - 2 * delta))) / (12.0 * delta)
        else:
            raise ValueError("order must be 2 or 4")
        if which == "w2":
            res = dt + u**2 / kp
        elif which == "l1":
            l1 = self.l1(t)
            res = dt - m.kappa * l1 + (l1 - 2.0 * p.phi * p.rho) * u / kp
        else:
            res = dt + u / kp * self.l0(t) + m.lam * m.eta_mean * self.l1(t)
        return np.abs(res)
