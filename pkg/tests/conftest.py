import numpy as np
import pytest

from kahlerflow import flow as flowmod

# (number, title, passed, detail) collected by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d} {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cp1_trace():
    """Default P_2 perturbation on CP1, n_points 512, t in [0, 10]."""
    cfg = flowmod.FlowConfig(manifold="CP1", n_points=512, t_end=10.0, dt=0.02)
    return flowmod.run_flow(cfg)


@pytest.fixture(scope="session")
def cp2_trace():
    cfg = flowmod.FlowConfig(manifold="CP2", n_points=512, t_end=15.0, dt=0.02)
    return flowmod.run_flow(cfg)


@pytest.fixture(scope="session")
def short_cp1_trace():
    cfg = flowmod.FlowConfig(manifold="CP1", n_points=96, t_end=3.0, dt=0.02)
    return flowmod.run_flow(cfg)
