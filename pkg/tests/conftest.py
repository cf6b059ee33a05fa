import logging

import pytest

from ostb.energy import HarvestModel, table_one
from ostb.mdp import RewardConfig, build_mdp
from ostb.solver import solve

logging.getLogger("ostb").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def params():
    return table_one()


@pytest.fixture(scope="session")
def u3():
    return HarvestModel.uniform(0.0, 3e-3)


@pytest.fixture(scope="session")
def model_u3(params, u3):
    return build_mdp(params, u3, RewardConfig("basic"))


@pytest.fixture(scope="session")
def solution_u3(model_u3):
    return solve(model_u3, rule="dantzig")


@pytest.fixture(scope="session")
def small_params():
    # the four-superstate sensing-only geometry (M=8, N_v=3, d_s=3, n_s=3)
    return table_one(subintervals=8, levels=3, deadline=3, sense_steps=3, transmit_steps=0)


@pytest.fixture(scope="session")
def small_model(small_params, u3):
    return build_mdp(small_params, u3)


# acceptance criteria report one line each; the lines are repeated at the
# end of the run so they survive output capturing

def pytest_configure(config):
    config._criteria = {}


@pytest.fixture
def criterion(request):
    def record(number, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        request.config._criteria[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criteria", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
