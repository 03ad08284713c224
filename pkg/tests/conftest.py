import numpy as np
import pytest

from invisible_eit.basis import build_dual_basis, project_kappa0
from invisible_eit.mesh import OmegaSpec, build_disk_mesh
from invisible_eit.potentials import ElectrodeConfig

FOUR_ELECTRODES_DEG = (1.0, 91.0, 181.0, 271.0)

_acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion."""
    return _acceptance_lines


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def four_cfg():
    return ElectrodeConfig.from_degrees(FOUR_ELECTRODES_DEG)


@pytest.fixture(scope="session")
def coarse_mesh(four_cfg):
    return build_disk_mesh(OmegaSpec.concentric_disk(0.5), 0.1, four_cfg.angles)


@pytest.fixture(scope="session")
def medium_mesh(four_cfg):
    return build_disk_mesh(OmegaSpec.concentric_disk(0.5), 0.05, four_cfg.angles)


@pytest.fixture(scope="session")
def medium_basis(medium_mesh, four_cfg):
    return project_kappa0(build_dual_basis(medium_mesh, four_cfg), "1")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
