import numpy as np
import pytest

from qflow.encode import PanelData
from qflow.model import TrainConfig, prepare_training_data, train

# acceptance verdicts collected by test_acceptance.py: id -> (passed, detail)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c.split()[0])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {cid}: {detail}")


def toy_panel(num_days=12, num_ports=2, T=6, seed=0):
    rng = np.random.default_rng(seed)
    inc = rng.integers(-3, 4, size=(num_days, num_ports, T - 1))
    counts = np.concatenate([np.full((num_days, num_ports, 1), 20), 20 + np.cumsum(inc, axis=2)],
                            axis=2)
    return PanelData(counts.astype(float), [f"2024-04-{k + 1:02d}" for k in range(num_days)],
                     [f"p{d}" for d in range(num_ports)])


@pytest.fixture(scope="session")
def small_model():
    """A quickly trained 2-port model used by the generate and scenario tests."""
    td = prepare_training_data(toy_panel(), 2)
    return train(td, TrainConfig(iterations=15, num_layers=1, num_ancilla=1, seed=3))
