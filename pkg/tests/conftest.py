import numpy as np
import pytest

from gridsynth.grid import GridImage
from gridsynth.program import Component, Program, Sketch


def tiles_image(labels, cell_m=4, seed=0):
    """Grid image where equal labels get identical random tiles."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    rng = np.random.default_rng(seed)
    palette = {}
    px = np.zeros((n * cell_m, n * cell_m, 3), dtype=np.uint8)
    for (t, u), lab in np.ndenumerate(labels):
        if lab not in palette:
            palette[lab] = rng.integers(0, 256, size=(cell_m, cell_m, 3), dtype=np.uint8)
        px[t * cell_m : (t + 1) * cell_m, u * cell_m : (u + 1) * cell_m] = palette[lab]
    return GridImage(px, n, cell_m)


def random_sketch(rng, grid_n):
    def axis():
        a = int(rng.integers(1, grid_n + 1))
        n = int(rng.integers(1, grid_n // a + 1))
        b = int(rng.integers(0, grid_n - a * n + 1))
        return n, a, b

    n, a, b = axis()
    n2, a2, b2 = axis()
    return Sketch(n, a, b, n2, a2, b2)


def random_program(rng, grid_n, cell_m=2, max_pairs=4, raw_prob=0.3):
    pairs = []
    for _ in range(int(rng.integers(0, max_pairs + 1))):
        s = random_sketch(rng, grid_n)
        if rng.random() < raw_prob:
            c = Component.from_pixels(rng.integers(0, 256, size=(cell_m, cell_m, 3), dtype=np.uint8))
        else:
            c = Component(cell=(int(rng.integers(1, grid_n + 1)), int(rng.integers(1, grid_n + 1))))
        pairs.append((s, c))
    return Program(tuple(pairs), grid_n, cell_m)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)
