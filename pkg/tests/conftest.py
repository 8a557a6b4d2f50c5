import pytest

# A configuration small enough that every scenario runs in a few seconds.
TINY = {
    "seeds": [0],
    "data": {"T": 60},
    "mi": {"steps": 20, "noise_grid": [0.0, 0.1, 0.3], "score_seeds": [0, 1], "lazy_fractions": [0.5, 1.0]},
    "selection": {"providers": 3, "trials": 2},
    "vfl": {"T": 120, "mi_samples": 60, "epochs": 2},
    "game": {"cycles": 40},
    "sweep": {"betas": [2.0, 11.0], "rhos": [100.0, 400.0], "gamma0s": [0.5], "epsilon0s": [0.5], "bound_gamma0s": [0.3, 0.9]},
}


@pytest.fixture
def tiny():
    import copy

    return copy.deepcopy(TINY)


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call":
        _ACCEPTANCE.extend(v for k, v in report.user_properties if k == "acceptance")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
