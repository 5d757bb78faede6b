import numpy as np
import pytest

from ctreach.abstraction import OOD, Partition
from ctreach.controller import AnalyticLaw, NeuralNet, load_network, surrogate_path
from ctreach.graph import CellGraph, CellRecord


@pytest.fixture(scope="session")
def analytic():
    return AnalyticLaw()


@pytest.fixture(scope="session")
def surrogate():
    return NeuralNet(load_network(surrogate_path()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def synthetic_graph(part: Partition, succ: dict, inter: dict | None = None, flags=None) -> CellGraph:
    """Graph with hand-written edges; every linear model is a placeholder."""
    recs = []
    inter = inter or {}
    for c in range(part.n_cells):
        b = part.cell_box(c)
        s = tuple(sorted(succ.get(c, ())))
        recs.append(CellRecord(
            A=(0.0, 0.0), b=0.0, U=(0.0, 0.0), U_raw=(0.0, 0.0),
            gamma=(b[0].lo, b[0].hi, b[1].lo, b[1].hi), bf=0.0, retries=0,
            flags=frozenset((flags or {}).get(c, ())), succ=s,
            inter=tuple(sorted(inter.get(c, s))), wall=0.0,
        ))
    return CellGraph(part, recs, "continuous", 1.0, "0" * 64, "0" * 64)


@pytest.fixture
def small_part():
    return Partition(bins=(8, 8))


def self_loop_graph(part):
    return synthetic_graph(part, {c: (c,) for c in range(part.n_cells)})


def ood_graph(part):
    return synthetic_graph(part, {c: (OOD,) for c in range(part.n_cells)})




# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
