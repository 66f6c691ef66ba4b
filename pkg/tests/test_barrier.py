"""Calibration, layer assembly, and barrier verification at desk scale."""

import numpy as np
import pytest

from barrierkit.barrier import (build_barrier, calibrate, constants_from,
                                transform_barrier, verify_barrier)
from barrierkit.errors import BarrierError, CalibrationError
from barrierkit.geometry import build_mesh, l_shape
from barrierkit.weights import constant_weight, make_operator


def test_constants_formulas():
    theta, c3, p = 0.125, 0.9, 2.0
    c = constants_from(theta, c3, p)
    assert np.isclose(c.alpha, np.log(4.0 / 3.0) / np.log(16.0))
    assert np.isclose(c.c_h,
                      (1.25 * (4.0 / 3.0) ** 5) ** (1.0 - p)
                      * (theta / 2.0) ** (6.0 * p) * c3)
    # alpha grows as theta grows (fewer, slower scales)
    assert constants_from(0.5, c3, p).alpha > c.alpha


def test_constants_validation():
    with pytest.raises(CalibrationError):
        constants_from(0.6, 1.0, 2.0)
    with pytest.raises(CalibrationError):
        constants_from(0.25, 0.0, 2.0)
    with pytest.raises(CalibrationError):
        constants_from(0.25, 1.0, 1.0)


def test_calibrate_selects_and_margins(square_p2):
    dom, mesh, op, bl, rep = square_p2
    c = bl.constants
    assert c.theta == 0.125
    ev = c.evidence
    sel = ev["selected"]
    assert sel["c3_grid_value"] * sel["margin"] == c.c3
    assert ev.get("gamma_hat", 1.0) > 1e-3
    hit = [g for g in ev["grid"]
           if g["theta"] == c.theta and g["c3"] == sel["c3_grid_value"]]
    assert hit and hit[0]["passed"]


def test_calibrate_rejects_unmeshable_scale(square_p2):
    dom, mesh, op, _, _ = square_p2
    with pytest.raises(CalibrationError):
        calibrate(dom, mesh, op, thetas=(0.125,), c3_grid=(1.0,),
                  scales=(mesh.h,), fatness=False)


def test_barrier_report_structure(square_p2):
    _, mesh, op, bl, rep = square_p2
    assert rep["passed"]
    sw = rep["sandwich"]
    assert sw["n_low_violations"] == 0 and sw["n_high_violations"] == 0
    assert 1.0 <= sw["min_ratio"] and sw["max_ratio"] <= 30.0
    ss = rep["supersolution"]
    assert ss["pass_fraction"] >= 0.99
    assert ss["violation_mass_ratio"] <= 1e-3
    assert rep["layers_ok"]
    for layer in rep["per_layer"]:
        assert layer["bounds_ok"]


def test_barrier_fields(square_p2):
    _, mesh, op, bl, _ = square_p2
    assert np.allclose(bl.s_gamma, 4.0 * bl.s)
    assert np.all(bl.s_gamma[mesh.gamma_mask] >= 0.0)
    res = bl.resolved_mask
    assert res.any()
    r_fine = bl.ladder.radius(bl.ladder.k_hi + 1)
    assert np.all(bl.delta[res] > r_fine)
    # sandwich on resolved nodes, written out
    a = bl.constants.alpha
    lo = bl.delta[res] ** a
    assert np.all(bl.s_gamma[res] >= lo * (1.0 - 1e-12))
    assert np.all(bl.s_gamma[res] <= 30.0 * lo * (1.0 + 1e-12))


def test_verify_barrier_echo(square_p2):
    _, mesh, op, bl, rep = square_p2
    again = verify_barrier(bl, op)
    assert again["alpha"] == bl.constants.alpha
    assert again["c_h"] == bl.constants.c_h
    assert again["passed"] == rep["passed"]


def test_transform_barrier(square_p2):
    _, mesh, op, bl, _ = square_p2
    a = bl.constants.alpha
    v, rep = transform_barrier(bl, op, beta=a, K=1.0)
    assert rep["passed"]
    assert rep["density_identity_ok"]
    assert rep["bounds"]["passed"]
    amp = (1.0 / bl.constants.c_h) ** (1.0 / (op.p - 1.0))
    assert np.isclose(rep["amplitude"], amp)
    assert np.allclose(v.values, amp * bl.s_gamma, rtol=1e-12)
    # beta below alpha bends the profile, bounds still certified
    v2, rep2 = transform_barrier(bl, op, beta=a / 2, K=2.0)
    assert rep2["passed"]
    assert v2.values.max() > 0


def test_transform_barrier_validation(square_p2):
    _, mesh, op, bl, _ = square_p2
    a = bl.constants.alpha
    with pytest.raises(BarrierError):
        transform_barrier(bl, op, beta=2.0 * a)
    with pytest.raises(BarrierError):
        transform_barrier(bl, op, beta=a, K=0.0)
    with pytest.raises(BarrierError):
        transform_barrier(bl, op, beta=0.0)


def test_barrier_l_shape_small():
    dom = l_shape()
    mesh = build_mesh(dom, 1.0 / 16)
    op = make_operator(2.0, constant_weight(2.0, 2))
    bl, rep = build_barrier(dom, mesh, op, thetas=(0.125,))
    assert rep["passed"]
    assert bl.resolved_mask.sum() > 0
