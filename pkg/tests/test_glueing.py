"""Minimum of two discrete supersolutions stays a supersolution.

Pairs are produced by solving with nonnegative sources and crossing affine
boundary data on a nonobtuse grid mesh, so the nodal minimum has a genuine
branch interface; the check accepts the documented interface slack.
"""

import numpy as np
import pytest

from barrierkit.geometry import build_mesh, interval_domain, unit_square
from barrierkit.solver import glueing_check, solve_dirichlet
from barrierkit.weights import constant_weight, make_operator


def affine_pair(mesh, rng):
    a1, b1, a2, b2 = rng.uniform(-1.0, 1.0, size=4)
    c = rng.uniform(0.0, 0.5)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    g1 = a1 * x + b1 * y + c
    g2 = a2 * (1.0 - x) + b2 * y + c
    return g1, g2


@pytest.mark.parametrize("seed", range(24))
def test_glued_minimum_is_supersolution(seed, grid_mesh_16):
    _, mesh = grid_mesh_16
    assert mesh.nonobtuse
    rng = np.random.default_rng(seed)
    p = float(rng.choice([1.5, 2.0, 3.0]))
    op = make_operator(p, constant_weight(p, 2))
    rho = float(rng.uniform(0.0, 2.0))
    g1, g2 = affine_pair(mesh, rng)
    u = solve_dirichlet(mesh, op, rho=rho, g=g1)
    v = solve_dirichlet(mesh, op, rho=rho, g=g2)
    res = glueing_check(u, v, op, rho_u=rho, rho_v=rho)
    assert res.passed, (seed, p, res.worst_margin, res.n_violations)


def test_glueing_with_itself(grid_mesh_16):
    _, mesh = grid_mesh_16
    op = make_operator(2.0, constant_weight(2.0, 2))
    u = solve_dirichlet(mesh, op, rho=1.0, g=0.0)
    assert glueing_check(u, u, op, rho_u=1.0, rho_v=1.0).passed


def test_glueing_1d():
    mesh = build_mesh(interval_domain(0.0, 1.0, gamma="all"), 1.0 / 64)
    op = make_operator(3.0, constant_weight(3.0, 1))
    x = mesh.nodes[:, 0]
    u = solve_dirichlet(mesh, op, rho=1.0, g=0.5 * x)
    v = solve_dirichlet(mesh, op, rho=1.0, g=0.5 * (1.0 - x))
    assert glueing_check(u, v, op, rho_u=1.0, rho_v=1.0).passed


def test_glueing_flags_subsolution_pair(grid_mesh_16):
    # with a negative source the minimum is generally not a supersolution
    # for the zero density; the check must not silently pass everything
    _, mesh = grid_mesh_16
    op = make_operator(2.0, constant_weight(2.0, 2))
    rho = -4.0
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    u = solve_dirichlet(mesh, op, rho=rho, g=x)
    v = solve_dirichlet(mesh, op, rho=rho, g=1.0 - x)
    res = glueing_check(u, v, op, rho_u=0.0, rho_v=0.0)
    assert not res.passed
