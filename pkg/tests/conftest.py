import numpy as np
import pytest

from distill_lab.nncore import DenoiserConfig, init_params


@pytest.fixture(scope="session")
def damped_params():
    """An untrained denoiser with a small but non-zero output layer."""
    p = init_params(DenoiserConfig(base_channels=8), 11, zero_output=False)
    p.arrays["conv_out.w"] *= np.float32(0.05)
    return p


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
