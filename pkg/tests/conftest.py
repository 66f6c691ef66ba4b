import numpy as np
import pytest

from barrierkit.barrier import build_barrier
from barrierkit.geometry import build_mesh, interval_domain, unit_square
from barrierkit.weights import constant_weight, make_operator


@pytest.fixture(scope="session")
def square_p2():
    """Unit square barrier at h=1/16, p=2, w=1: cheap shared certificate."""
    dom = unit_square(gamma="all")
    mesh = build_mesh(dom, 1.0 / 16)
    op = make_operator(2.0, constant_weight(2.0, 2))
    bl, rep = build_barrier(dom, mesh, op, thetas=(0.125,))
    return dom, mesh, op, bl, rep


@pytest.fixture(scope="session")
def interval_p2():
    """Interval barrier with Gamma = left endpoint at h=1/256."""
    dom = interval_domain(0.0, 1.0, gamma=(0,))
    mesh = build_mesh(dom, 1.0 / 256)
    op = make_operator(2.0, constant_weight(2.0, 1))
    bl, rep = build_barrier(dom, mesh, op)
    return dom, mesh, op, bl, rep


@pytest.fixture(scope="session")
def grid_mesh_16():
    dom = unit_square(gamma="all")
    return dom, build_mesh(dom, 1.0 / 16)


def nodal(mesh, f):
    vals = np.asarray(f(mesh.nodes), dtype=float)
    vals[~mesh.interior_mask] = 0.0
    return vals
