import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("dnls", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("dnls")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(rng, window, zero_origin=False, support=None):
    from dnlslab.lattice import LatticeField

    v = rng.standard_normal(window.size) + 1j * rng.standard_normal(window.size)
    if support is not None:
        mask = np.abs(window.sites) > support
        v[mask] = 0.0
    if zero_origin:
        v[window.N] = 0.0
    return LatticeField(window, v)


ACCEPTANCE: dict = {}


def record(k: int, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    ACCEPTANCE[k] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
