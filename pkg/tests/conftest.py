import math
from functools import lru_cache

import numpy as np
import pytest

from adscone.fixtures import cone_sphere, flat_torus, refine_times
from adscone.germ import solve_modified_gauss
from adscone.mess import mess_transform, pair_metrics
from adscone.pipeline import fixture_quaddiff

TETRA = """# regular tetrahedron
v 1 1 1
v 1 -1 -1
v -1 1 -1
v -1 -1 1
f 1 2 3
f 1 4 2
f 1 3 4
f 2 4 3
"""


@lru_cache(maxsize=None)
def torus_fixture(level: int):
    """Flat torus n = 8 refined ``level`` times, one cone of pi/2, q = 1.2 dz^2."""
    s = refine_times(flat_torus(8, cones={0: math.pi / 2}), level)
    return s, fixture_quaddiff("const:1.2", s)


@lru_cache(maxsize=None)
def sphere_fixture(level: int, scale: float = 0.1):
    """Icosphere with four cones of pi/2, q = scale dz^2 / prod(z - p_i)."""
    s = cone_sphere(level, n_cones=4)
    return s, fixture_quaddiff(f"poles:{scale}", s)


@lru_cache(maxsize=None)
def forward(kind: str, level: int):
    s, q = torus_fixture(level) if kind == "torus" else sphere_fixture(level)
    germ, _ = solve_modified_gauss(s.mesh, s.metric, q)
    field, pair = mess_transform(germ)
    m1, m2 = pair_metrics(s.mesh, pair)
    return s, germ, field, pair, m1, m2


@pytest.fixture
def tetra_text():
    return TETRA


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
