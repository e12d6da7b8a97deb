import pytest

from electroperm.fem import PhysParams, assemble
from electroperm.mesh import GeometrySpec, generate_mesh
from electroperm.oracles import disk_spec


@pytest.fixture(scope="session")
def params():
    return PhysParams()


@pytest.fixture(scope="session")
def mesh05():
    return generate_mesh(GeometrySpec(target_h=0.05))


@pytest.fixture(scope="session")
def system05(mesh05, params):
    return assemble(mesh05, params)


@pytest.fixture(scope="session")
def disk_mesh05():
    return generate_mesh(disk_spec(0.05))


@pytest.fixture(scope="session")
def disk_system05(disk_mesh05, params):
    return assemble(disk_mesh05, params)


@pytest.fixture(scope="session")
def disk_system025(params):
    return assemble(generate_mesh(disk_spec(0.025)), params)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
