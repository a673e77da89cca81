import pytest

from feac.fixtures import hospital_text
from feac.scenario import parse_scenario
from feac.sim import run_simulation

# Filled by the acceptance tests; echoed after the run so the verdicts are
# visible regardless of capture settings.
acceptance_verdicts: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_verdicts:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_verdicts:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def hospital():
    scenario, diags = parse_scenario(hospital_text(), "hospital.feac")
    assert not diags, diags
    return scenario


@pytest.fixture(scope="session")
def hospital_run(hospital):
    return run_simulation(hospital)


@pytest.fixture(scope="session")
def hospital_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixtures") / "hospital.feac"
    path.write_text(hospital_text(), encoding="utf-8")
    return str(path)
