import numpy as np
import pytest
from scipy.linalg import expm

from isoimmerse.chart import ChartGrid, MatrixForm
from isoimmerse.gauge import gauge_transform


def so3_basis():
    """Generators of rotations in the (0,1), (1,2) and (0,2) planes."""
    out = []
    for a, b in ((0, 1), (1, 2), (0, 2)):
        E = np.zeros((3, 3))
        E[a, b], E[b, a] = 1.0, -1.0
        out.append(E)
    return out


def rotation_field(grid, scale=1.0):
    """A smooth SO(3)-valued field built from two angle functions."""
    A, B, _ = so3_basis()
    x = grid.mesh()
    a1 = scale * 0.7 * np.sin(2 * x[0] + x[1])
    a2 = scale * 0.5 * np.cos(x[0] - 2 * x[1])
    return expm(a1[..., None, None] * A) @ expm(a2[..., None, None] * B)


def pure_gauge(grid, scale=1.0):
    P0 = rotation_field(grid, scale)
    return P0, gauge_transform(P0, MatrixForm.zeros(grid, 1, 3, antisymmetric=True))


def smooth_nonflat(grid):
    """Fixed smooth so(3)-valued 1-form with both exact and coexact parts."""
    A, B, C = so3_basis()
    x, y = grid.mesh()
    d = np.zeros((2, *grid.shape, 3, 3))
    d[0] = np.cos(x + 2 * y)[..., None, None] * A + (np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))[..., None, None] * B
    d[1] = (np.sin(x * y)[..., None, None] * C - (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y))[..., None, None] * B
            + x[..., None, None] * A)
    return MatrixForm(grid, 1, d, True)


def potentials(grid):
    """Five smooth so(3)-valued potentials vanishing on the boundary."""
    A, B, _ = so3_basis()
    x, y = grid.mesh()
    s = np.sin(np.pi * x) * np.sin(np.pi * y)
    pairs = [
        (s, np.sin(2 * np.pi * x) * np.sin(np.pi * y)),
        (s, np.sin(np.pi * x) * np.sin(2 * np.pi * y)),
        (s * x, s * y),
        (np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y), s),
        (s * (1 + x * y), np.sin(3 * np.pi * x) * np.sin(np.pi * y)),
    ]
    for a, b in pairs:
        yield MatrixForm(grid, 0, (a[..., None, None] * A + b[..., None, None] * B)[None], True)


def interior(a, margin=1, n=2):
    return a[tuple(slice(margin, -margin) for _ in range(n))]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_square():
    return ChartGrid.square(2, 33)
