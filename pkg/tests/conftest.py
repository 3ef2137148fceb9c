import time

import pytest

from rbc_koopman.dns import DESK_GRID

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_COUNT = 12


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory):
    """Five Ra=1e5 episodes on the 48x32 grid (seeds 0..4), simulated once per session."""
    from rbc_koopman.experiments import cmd_simulate

    out = tmp_path_factory.mktemp("desk_ra1e5")
    t0 = time.perf_counter()
    report = cmd_simulate(1e5, 5, 0, DESK_GRID, out)
    assert not report.failures, report.failures
    return out, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")


@pytest.fixture(scope="session")
def desk_kdmd_sweep(desk_data, tmp_path_factory):
    from rbc_koopman.experiments import cmd_sweep_kdmd

    data_dir, _ = desk_data
    return cmd_sweep_kdmd(data_dir, 1e5, tmp_path_factory.mktemp("sweep") / "kdmd.csv")
