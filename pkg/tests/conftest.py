import numpy as np
import pytest

from quasipath import model
from quasipath.geometry import TubeSpec
from quasipath.manifold import relax_to_invariant_curve


@pytest.fixture(scope="session")
def ring0():
    return model.ring(0.0)


@pytest.fixture(scope="session")
def ring1():
    return model.ring(1.0)


@pytest.fixture(scope="session")
def pm_ring0(ring0):
    return relax_to_invariant_curve(ring0, 0.1)


@pytest.fixture(scope="session")
def pm_ring1(ring1):
    return relax_to_invariant_curve(ring1, 0.1)


def make_tube(pm, C0=1.0, d1=np.pi / 2, d2=np.pi / 2):
    return TubeSpec(pm.curve_delta, pm.delta, C0, d1, d2, pm.stable.phi_A)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def record(key, ok, detail):
    ACCEPTANCE[key] = (ok, detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0]), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
