"""Condenser capacities against closed forms, plus the boundary fatness probe.

1D oracle: plate [1/3, 2/3] in (0,1) has linear ramps of slope 3 on both
gaps, so cap_p = 2 * (1/3) * 3^p = 2 * 3^(p-1) exactly (P1 contains the
minimizer).
"""

import numpy as np
import pytest

from barrierkit.capacity import capacity, cdc_ratio, condenser, estimate_gamma
from barrierkit.errors import CapacityError
from barrierkit.geometry import build_mesh, disk_domain, interval_domain, unit_square
from barrierkit.weights import constant_weight


@pytest.mark.parametrize("p", (2.0, 3.0, 1.5))
def test_1d_condenser_exact(p):
    mesh = build_mesh(interval_domain(0.0, 1.0, gamma="all"), 1.0 / 48)
    x = mesh.nodes[:, 0]
    plate = (x >= 1.0 / 3 - 1e-12) & (x <= 2.0 / 3 + 1e-12)
    cap = capacity(condenser(mesh, plate, p))
    assert np.isclose(cap, 2.0 * 3.0 ** (p - 1.0), rtol=1e-8)


def disk_plate_capacity(p, h, r_plate=0.5):
    mesh = build_mesh(disk_domain(radius=1.0), h)
    r = np.linalg.norm(mesh.nodes, axis=1)
    plate = r <= r_plate + 1e-9
    return capacity(condenser(mesh, plate, p))


def test_annulus_capacity_p2():
    cap = disk_plate_capacity(2.0, 1.0 / 32)
    assert abs(cap - 2.0 * np.pi / np.log(2.0)) < 0.03 * 2.0 * np.pi / np.log(2.0)


def test_capacity_monotonicity():
    mesh = build_mesh(disk_domain(radius=1.0), 1.0 / 24)
    r = np.linalg.norm(mesh.nodes, axis=1)
    small = capacity(condenser(mesh, r <= 0.35 + 1e-9, 2.0))
    big = capacity(condenser(mesh, r <= 0.5 + 1e-9, 2.0))
    assert big >= small - 1e-8


@pytest.mark.parametrize("p,power", [(2.0, 0.0), (3.0, -1.0)])
def test_capacity_scaling_law(p, power):
    # cap_p(sK, sO) = s^(n-p) cap_p(K, O) for w = 1, n = 2
    cap1 = disk_plate_capacity(p, 1.0 / 24)
    mesh2 = build_mesh(disk_domain(radius=2.0), 2.0 / 24)
    r = np.linalg.norm(mesh2.nodes, axis=1)
    cap2 = capacity(condenser(mesh2, r <= 1.0 + 1e-9, p))
    assert abs(cap2 / cap1 - 2.0 ** power) < 0.05 * 2.0 ** power


def test_condenser_validation(grid_mesh_16):
    _, mesh = grid_mesh_16
    with pytest.raises(CapacityError):
        condenser(mesh, np.zeros(mesh.n_nodes, dtype=bool), 2.0)
    touching = np.linalg.norm(mesh.nodes - 0.5, axis=1) <= 0.51
    with pytest.raises(CapacityError):
        condenser(mesh, touching, 2.0)


def test_capacity_potential_range(grid_mesh_16):
    _, mesh = grid_mesh_16
    plate = np.linalg.norm(mesh.nodes - 0.5, axis=1) <= 0.25 + 1e-9
    cap, pot = capacity(condenser(mesh, plate, 2.0), return_potential=True)
    assert cap > 0
    assert pot.values.min() >= -1e-12
    assert pot.values.max() <= 1.0 + 1e-12
    assert np.all(pot.values[plate] == 1.0)


def test_cdc_ratio_trivial_when_domain_absent():
    # probe far from the square: complement fills the ball, ratio is 1
    dom = unit_square(gamma="all")
    row = cdc_ratio(dom, (8.0, 8.0), 0.5, 2.0)
    assert abs(row["ratio"] - 1.0) <= 1e-6


def test_cdc_ratio_half_plane_stability():
    dom = unit_square(gamma="all")
    vals = [cdc_ratio(dom, (0.5, 0.0), r, 2.0)["ratio"] for r in (0.1, 0.2)]
    assert all(v > 0.1 for v in vals)
    assert abs(vals[0] - vals[1]) <= 0.10 * max(vals)


def test_cdc_ratio_bounds_and_thin_complement():
    dom = unit_square(gamma="all")
    row = cdc_ratio(dom, (0.5, 0.0), 0.15, 2.0)
    assert 0.0 <= row["ratio"] <= 1.0 + 1e-6
    with pytest.raises(CapacityError):
        # ball strictly inside the domain: complement has no ambient node
        cdc_ratio(dom, (0.5, 0.5), 0.05, 2.0)


def test_estimate_gamma_square():
    dom = unit_square(gamma="all")
    rep = estimate_gamma(dom, 2.0, scales=(0.1, 0.2), n_centers=4)
    assert rep.gamma_hat > 1e-3
    assert len(rep.rows) == 8
    assert not rep.flagged
