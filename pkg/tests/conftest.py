from dataclasses import replace

import pytest

from spinherald.config import AtomNumberModel, DriftModel, NoiseCoefficients, SimConfig, load_config
from spinherald.efficiency import EfficiencyChain


@pytest.fixture(scope="session")
def default_cfg():
    return load_config()


def make_sim(**kw) -> SimConfig:
    """Small stationary generator config; keyword arguments override fields."""
    base = SimConfig(
        shots=20000,
        atom_number=AtomNumberModel(mean=3e5, spread=0.05, multipliers=(1.0, 0.92, 0.85, 0.78)),
        noise=NoiseCoefficients(c_const=1e5, c_lin=1.0, c_quad=1.199e-6),
        drift=DriftModel(),
        p_click=6.7e-3,
        p_state=0.38,
        eta_chain=EfficiencyChain(0.5, 0.75, 0.956, 0.97, 0.77),
        window=200,
        seed=1,
    )
    return replace(base, **kw)


def wide_sim(**kw) -> SimConfig:
    """Atom-number levels where each noise term dominates in turn, so all three are identifiable."""
    base = make_sim(
        shots=100_000,
        atom_number=AtomNumberModel(mean=1e5, spread=0.0, multipliers=(1e-3, 1e-2, 0.3, 1.0, 3.0, 10.0, 100.0, 1000.0)),
        noise=NoiseCoefficients(c_const=1e4, c_lin=1.0, c_quad=1e-6),
        p_click=0.0,
        seed=11,
    )
    return replace(base, **kw)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
