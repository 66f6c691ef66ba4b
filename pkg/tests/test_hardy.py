import numpy as np
import pytest
from scipy.linalg import eigh

from barrierkit.geometry import build_mesh, gamma_distance, interval_domain
from barrierkit.hardy import (estimate_best_constant, hardy_pair,
                              hardy_report, hardy_sweep, picone_check,
                              sweep_functions)
from barrierkit.weights import constant_weight, make_operator


def interval_setup(h, gamma="all", p=2.0):
    dom = interval_domain(0.0, 1.0, gamma=gamma)
    mesh = build_mesh(dom, h)
    op = make_operator(p, constant_weight(1.0, 1))
    return mesh, op


def parabola(mesh):
    x = mesh.nodes[:, 0]
    phi = x * (1.0 - x)
    phi[~mesh.interior_mask] = 0.0
    return phi


def test_pair_matches_interval_quadrature():
    # phi = x(1-x), Gamma both endpoints: int phi^2 delta^-2 = 7/12,
    # int |phi'|^2 = 1/3, so the quotient is 4/7
    mesh, op = interval_setup(1.0 / 4096)
    pair = hardy_pair(mesh, op, 0.25, parabola(mesh))
    assert abs(pair["lhs"] / 0.25 - 7.0 / 12.0) < 1e-6
    assert abs(pair["rhs"] - 1.0 / 3.0) < 1e-6
    assert np.isclose(pair["quotient"], 4.0 / 7.0, rtol=1e-5)
    assert pair["passed"]
    assert pair["margin"] == pair["rhs"] - pair["lhs"]
    assert pair["lhs_bias"] == "low"


def test_pair_homogeneity():
    mesh, op = interval_setup(1.0 / 256)
    phi = parabola(mesh)
    one = hardy_pair(mesh, op, 0.25, phi)
    two = hardy_pair(mesh, op, 0.25, 2.0 * phi)
    assert two["lhs"] == 4.0 * one["lhs"]
    assert abs(two["quotient"] / one["quotient"] - 1.0) <= 1e-12


def test_pair_zero_function():
    mesh, op = interval_setup(1.0 / 64)
    pair = hardy_pair(mesh, op, 0.25, np.zeros(mesh.n_nodes))
    assert pair["lhs"] == 0.0 and pair["rhs"] == 0.0
    assert pair["quotient"] == np.inf
    assert pair["passed"]


def test_pair_input_validation():
    mesh, op = interval_setup(1.0 / 64)
    with pytest.raises(ValueError, match="vanish"):
        hardy_pair(mesh, op, 0.25, np.ones(mesh.n_nodes))
    with pytest.raises(ValueError, match="length"):
        hardy_pair(mesh, op, 0.25, np.zeros(7))
    skew = make_operator(2.0, constant_weight(1.0, 1),
                         aniso=np.array([[2.0]]))
    with pytest.raises(ValueError, match="anisotropy"):
        hardy_pair(mesh, skew, 0.25, parabola(mesh))


def test_picone_rejects_negative(square_p2):
    _, mesh, op, bl, _ = square_p2
    phi = np.zeros(mesh.n_nodes)
    phi[mesh.interior_mask] = -1.0
    with pytest.raises(ValueError, match="nonnegative"):
        picone_check(bl, op, phi)


def test_sweep_function_inventory(square_p2, interval_p2):
    _, mesh, _, bl, _ = square_p2
    fns = sweep_functions(bl, n_random=5, seed=7)
    assert len(fns) == 20
    assert len(sweep_functions(bl, 0, seed=7)) == 15
    names = [n for n, _ in fns]
    assert len(set(names)) == len(names)
    for _, phi in fns:
        assert phi.shape == (mesh.n_nodes,)
        assert np.all(phi[~mesh.interior_mask] == 0.0)
    _, _, _, bl1, _ = interval_p2
    assert len(sweep_functions(bl1, 0, seed=7)) == 9


def test_sweep_rows_pass(square_p2):
    _, _, op, bl, _ = square_p2
    rows = hardy_sweep(bl, op, seed=7, n_random=5)
    assert len(rows) == 20
    assert all(r["pair_ok"] and r["picone_ok"] for r in rows)
    assert all(r["margin"] >= 0.0 for r in rows)
    assert all(r["picone_excess"] == 0.0 for r in rows)
    # every quotient is an upper bound for the certified constant
    assert min(r["quotient"] for r in rows) > bl.constants.c_h


def test_best_constant_matches_eigenproblem():
    # independent oracle: assemble the quotient's stiffness and singular
    # mass by hand and take the smallest generalized eigenvalue
    mesh, op = interval_setup(1.0 / 64)
    n = mesh.n_nodes
    h = 1.0 / (n - 1)
    A = np.zeros((n, n))
    S = np.zeros((n, n))
    delta_b = gamma_distance(mesh, mesh.el_bary)
    for e, (i, j) in enumerate(mesh.elements):
        A[i, i] += 1.0 / h
        A[j, j] += 1.0 / h
        A[i, j] -= 1.0 / h
        A[j, i] -= 1.0 / h
        c = h * delta_b[e] ** (-2.0) / 4.0
        S[np.ix_((i, j), (i, j))] += c
    free = mesh.interior_mask
    lam_min = eigh(A[np.ix_(free, free)], S[np.ix_(free, free)],
                   eigvals_only=True)[0]

    est = estimate_best_constant(mesh, op, seed=11, n_starts=3, max_iter=300)
    assert abs(est["c_hat"] / lam_min - 1.0) < 1e-6
    assert est["c_hat"] == min(s["c"] for s in est["per_start"])
    q = hardy_pair(mesh, op, 1.0, est["minimizer"].values)["quotient"]
    assert np.isclose(q, est["c_hat"], rtol=1e-6)


def test_report_flags(square_p2):
    _, mesh, op, bl, _ = square_p2
    rep = hardy_report(bl, op, seed=7, n_random=4, n_starts=2, max_iter=60)
    assert rep.passed
    assert rep.pairs_ok and rep.picone_ok and rep.floor_ok and rep.ordering_ok
    assert rep.n_functions == 19
    assert rep.c_h == bl.constants.c_h
    assert rep.c_h < rep.c_hat
    assert rep.lhs_bias == "low"
    assert len(rep.minimizer.values) == mesh.n_nodes
    for s in rep.per_start:
        assert "field" not in s and s["c"] >= rep.c_hat
