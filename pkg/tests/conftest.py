import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_script(path, body):
    """Write an executable python script and return the argv to run it."""
    import sys

    path.write_text(body)
    return [sys.executable, str(path)]


_ACCEPTANCE = {}


def record(n, ok, detail):
    """Store one acceptance outcome for the end-of-session summary."""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
