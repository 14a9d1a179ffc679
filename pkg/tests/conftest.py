import numpy as np
import pytest

from pztrigger import camera, pzernike

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def geom():
    return camera.build_geometry(11)


@pytest.fixture(scope="session")
def mapping(geom):
    return camera.map_to_unit_disk(geom)


@pytest.fixture(scope="session")
def table(mapping):
    return pzernike.build_basis_table(mapping, 7)


@pytest.fixture(scope="session")
def small_events(geom):
    return camera.generate_dataset(20, 20, camera.GeneratorParams(), 11, geom)


def labels_to_y(events):
    return np.array([1 if e.label == camera.GAMMA else -1 for e in events])
