import numpy as np
import pytest

from vwaprl import ClosedForm, Environment, MarketParams, PenaltyParams, TimeGrid

ENV1_MARKET = MarketParams()
ENV2_MARKET = MarketParams(b=0.5, k=0.5, alpha=10.0)
ENV1_PENALTY = PenaltyParams()
ENV2_PENALTY = PenaltyParams(phi=10.0)


@pytest.fixture
def env1():
    return Environment(ENV1_MARKET, ENV1_PENALTY, TimeGrid())


@pytest.fixture
def env2():
    return Environment(ENV2_MARKET, ENV2_PENALTY, TimeGrid())


@pytest.fixture(params=["env1", "env2"])
def any_env(request):
    if request.param == "env1":
        return Environment(ENV1_MARKET, ENV1_PENALTY, TimeGrid())
    return Environment(ENV2_MARKET, ENV2_PENALTY, TimeGrid())


def closed_form(env):
    return ClosedForm(env.market, env.penalty, env.grid)


def const_policy(v):
    return lambda i, state, rng: v


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
