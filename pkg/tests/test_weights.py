"""Weight admissibility, flux evaluation, and the operator axiom sweep."""

import numpy as np
import pytest

from barrierkit.errors import GeometryError, WeightError
from barrierkit.geometry import build_mesh, unit_square
from barrierkit.weights import (axiom_sampler, boundary_power_weight,
                                constant_weight, eval_operator, eval_weight,
                                make_operator, measure_doubling,
                                point_power_weight)


def test_constant_weight():
    w = constant_weight(2.0, 2, value=3.0)
    assert w.admissible
    assert np.allclose(eval_weight(w, np.zeros((4, 2))), 3.0)
    with pytest.raises(WeightError):
        constant_weight(2.0, 2, value=0.0)


def test_point_power_admissibility():
    # -n < mu < n (p - 1)
    assert point_power_weight(2.0, 2, 1.5, (0, 0)).admissible
    assert not point_power_weight(2.0, 2, -2.5, (0, 0)).admissible
    assert not point_power_weight(1.5, 2, 1.1, (0, 0)).admissible
    assert point_power_weight(3.0, 2, 3.9, (0, 0)).admissible


def test_boundary_power_admissibility():
    mesh = build_mesh(unit_square(gamma="all"), 0.25)
    assert boundary_power_weight(2.0, mesh, 0.5).admissible
    assert not boundary_power_weight(2.0, mesh, 1.5).admissible
    assert not boundary_power_weight(2.0, mesh, -1.0).admissible


def test_eval_weight_values_and_singularity():
    w = point_power_weight(2.0, 2, 2.0, (0.0, 0.0))
    pts = np.array([[3.0, 4.0], [1.0, 0.0]])
    assert np.allclose(eval_weight(w, pts), [25.0, 1.0])
    wneg = point_power_weight(2.0, 2, -0.5, (0.0, 0.0))
    with pytest.raises(WeightError):
        eval_weight(wneg, np.array([[0.0, 0.0]]))


def test_make_operator_validation():
    w = constant_weight(2.0, 2)
    with pytest.raises(WeightError):
        make_operator(1.0, w)
    with pytest.raises(WeightError):
        make_operator(2.0, w, aniso=[[1.0, 0.5], [0.4, 1.0]])  # not symmetric
    with pytest.raises(WeightError):
        make_operator(2.0, w, aniso=[[0.5, 0.0], [0.0, 2.0]])  # eig below 1
    op = make_operator(2.0, w, aniso=[[2.0, 0.0], [0.0, 4.0]])
    assert np.isclose(op.lam, 4.0)
    assert np.isclose(op.growth_constant, 4.0)


def test_flux_values():
    # p = 2, M = I: A(x, z) = w z exactly
    op = make_operator(2.0, constant_weight(2.0, 2, value=2.0))
    z = np.array([0.3, -0.4])
    assert np.allclose(eval_operator(op, [0.5, 0.5], z), 2.0 * z)
    # p = 4: |z|^2 z
    op4 = make_operator(4.0, constant_weight(4.0, 2))
    assert np.allclose(eval_operator(op4, [0.5, 0.5], z), 0.25 * z)
    assert np.allclose(eval_operator(op4, [0.5, 0.5], np.zeros(2)), 0.0)


@pytest.mark.parametrize("p", (1.5, 2.0, 3.0))
@pytest.mark.parametrize("lam", (1.0, 4.0))
def test_axiom_sweep(p, lam):
    aniso = None if lam == 1.0 else np.diag([1.0, lam])
    op = make_operator(p, constant_weight(p, 2), aniso=aniso)
    assert np.isclose(op.growth_constant, lam ** (p / 2.0))
    rep = axiom_sampler(op, 2000, seed=11)
    assert rep.passed, rep.witness
    assert rep.margins["homogeneity"] <= 1e-10


def test_axioms_with_weight_on_mesh():
    mesh = build_mesh(unit_square(gamma="all"), 1.0 / 8)
    w = boundary_power_weight(2.0, mesh, 0.5)
    op = make_operator(2.0, w)
    rep = axiom_sampler(op, 2000, seed=3, mesh=mesh)
    assert rep.passed, rep.witness


def test_measure_doubling():
    mesh = build_mesh(unit_square(gamma="all"), 1.0 / 8)
    w = point_power_weight(2.0, 2, 1.0, (0.5, 0.5))
    balls = [((0.5, 0.5), 0.2), ((0.4, 0.6), 0.15)]
    diag = measure_doubling(w, mesh, balls)
    assert diag.c_d_hat >= 1.0
    assert np.all(np.isfinite(diag.doubling_ratios))
    with pytest.raises(GeometryError):
        measure_doubling(w, mesh, [((0.9, 0.9), 0.3)])  # 2B leaves the domain
