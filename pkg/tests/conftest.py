import math

import numpy as np
import pytest
from hypothesis import settings

from parapde.spectral_core import Grid, ifft

settings.register_profile("parapde", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("parapde")


@pytest.fixture
def grid1():
    return Grid(1, 128, math.pi)


@pytest.fixture
def grid2():
    return Grid(2, 32, math.pi)


def random_field(grid, seed, decay=1.0, lead=(), kmax=None):
    """Band-limited random real field with spectrum ``<k>^{-decay}``."""
    rng = np.random.default_rng(seed)
    shape = lead + grid.rshape
    k = grid.kabs_r
    amp = (1.0 + k * k) ** (-0.5 * decay)
    if kmax is not None:
        amp = np.where(k <= kmax, amp, 0.0)
    c = amp * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return ifft(grid, c * grid.N**grid.dim / 8.0)


def power_law_field(grid, rng, s, lead=()):
    """Random-phase field with block norms of order ``2^{-s j}`` (one dimension)."""
    k = grid.kabs_r
    amp = np.where(k > 0, np.maximum(k, 1.0) ** (-s - 0.5), 0.0)
    shape = lead + k.shape
    c = amp * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * grid.N
    c[..., 0] = 0.0
    return ifft(grid, c)


def lacunary_field(grid, s, seed=0):
    """One cosine per dyadic block with amplitude ``2^{-s j}``: a flat ``C^s`` profile."""
    from parapde.spectral_core import get_partition

    rng = np.random.default_rng(seed)
    x = grid.x
    scale = math.pi / grid.L
    jm = get_partition(grid).j_max
    return sum(2.0 ** (-s * j) * np.cos(round(1.25 * 2**j) * scale * x + rng.uniform(0, 2 * math.pi))
               for j in range(0, jm))


REPORT_LINES = []


def report(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    REPORT_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if REPORT_LINES:
        terminalreporter.section("acceptance report")
        for line in REPORT_LINES:
            terminalreporter.write_line(line)
