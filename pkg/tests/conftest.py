import json

import numpy as np
import pytest

from clearing_lab import SystemParams

_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def p1():
    return SystemParams(d=[1.0, 1.0], sigma=[1.0, 1.0], omega=[1.0, 2.0], a_d=3.0, c=[0.0, 0.0])


@pytest.fixture
def p2():
    return SystemParams(d=[1.0, 1.0], sigma=[1.0, 3.0], omega=[5.0, 1.0], a_d=3.0, c=[0.0, 0.0])


@pytest.fixture
def p1_file(tmp_path, p1):
    path = tmp_path / "p1.json"
    path.write_text(json.dumps(p1.to_dict()))
    return path


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_line(request, capsys):
    """Print a criterion verdict immediately and again in the final summary."""

    def emit(number: int, ok: bool, detail: str, runtime_s: float):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  ({runtime_s:.1f} s)  {detail}"
        request.config.stash[_ACCEPTANCE_KEY].append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
