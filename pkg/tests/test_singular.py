import numpy as np
import pytest

from barrierkit.barrier import build_barrier
from barrierkit.errors import MajorantError
from barrierkit.geometry import (build_mesh, distance_field, interval_domain,
                                 unit_square)
from barrierkit.singular import (SingularLoad, SingularSource, solve_singular,
                                 uniqueness_probe, verify_theorem_bound)
from barrierkit.weights import (boundary_power_weight, constant_weight,
                                eval_weight, make_operator)


@pytest.fixture(scope="module")
def interval_run(interval_p2):
    _, mesh, op, bl, _ = interval_p2
    src = SingularSource(K=1.0, beta=bl.constants.alpha)
    return mesh, op, bl, src, solve_singular(bl, op, src)


def test_source_validation():
    for bad in (dict(K=0.0, beta=0.5), dict(K=-2.0, beta=0.5),
                dict(K=np.inf, beta=0.5), dict(K=1.0, beta=0.0),
                dict(K=1.0, beta=-0.1), dict(K=1.0, beta=0.5, sign=0)):
        with pytest.raises(ValueError):
            SingularSource(**bad)
    src = SingularSource(K=2.0, beta=0.5, sign=-1)
    assert src.exponent(3.0) == 0.5 * 2.0 - 3.0
    d = src.density(np.array([0.0, 1.0, 4.0]), 2.0)
    assert d[0] == -np.inf
    assert np.isclose(d[1], -2.0)
    assert np.isclose(d[2], -2.0 * 4.0 ** (-1.5))


def test_truncated_load_matches_interval_quadrature():
    # independent x-space oracle: Gamma = {0}, so the interpolated distance
    # is x itself and each hat pairing is a pair of power integrals
    dom = interval_domain(0.0, 1.0, gamma=(0,))
    mesh = build_mesh(dom, 1.0 / 64)
    op = make_operator(2.0, constant_weight(2.0, 1))
    x = mesh.nodes[:, 0]
    h = x[1] - x[0]

    def seg(a, b, e, r):
        a = max(a, r)
        if a >= b:
            return 0.0
        if abs(e + 1.0) < 1e-12:
            return np.log(b / a)
        return (b ** (e + 1) - a ** (e + 1)) / (e + 1)

    for beta in (0.05, 1.0):
        src = SingularSource(K=1.7, beta=beta)
        q = src.exponent(2.0)
        loader = SingularLoad(mesh, op, src)
        for r in (0.3, 1e-4):
            f = loader.at_cutoff(r)
            ref = np.zeros_like(f)
            for i in range(len(x)):
                lo, hi = x[i] - h, x[i] + h
                acc = 0.0
                if i > 0:
                    acc += (seg(lo, x[i], q + 1, r)
                            - lo * seg(lo, x[i], q, r)) / h
                if i < len(x) - 1:
                    acc += (hi * seg(x[i], hi, q, r)
                            - seg(x[i], hi, q + 1, r)) / h
                ref[i] = src.K * acc
            ref[~mesh.interior_mask] = 0.0
            err = np.abs(f - ref).max() / (1.0 + np.abs(ref).max())
            assert err < 1e-12, (beta, r, err)


def test_truncated_load_moment_identity():
    # exponent zero makes the density constant: every vertex of every
    # element must receive exactly K * w_T * area / 3
    dom = unit_square(gamma="all")
    mesh = build_mesh(dom, 1.0 / 16)
    op = make_operator(2.0, boundary_power_weight(2.0, mesh, 0.7),
                       validate=False)
    src = SingularSource(K=2.3, beta=2.0)
    assert src.exponent(2.0) == 0.0
    f = SingularLoad(mesh, op, src).at_cutoff(1e-300)
    w = eval_weight(op.weight, mesh.el_bary)
    ref = src.K * np.bincount(mesh.elements.ravel(),
                              weights=np.repeat(w * mesh.el_vol / 3.0, 3),
                              minlength=mesh.n_nodes)
    ref[~mesh.interior_mask] = 0.0
    assert np.abs(f - ref).max() / np.abs(ref).max() < 1e-12


def test_truncated_load_rejects_bad_cutoff(interval_run):
    mesh, op, _, src, _ = interval_run
    loader = SingularLoad(mesh, op, src)
    with pytest.raises(ValueError, match="cutoff"):
        loader.at_cutoff(0.0)


def test_exhaustion_matches_interval_solution(interval_run):
    # closed form for -u'' = K x^(beta-2), u(0) = u(1) = 0
    mesh, _, bl, src, run = interval_run
    b = src.beta
    x = mesh.nodes[:, 0]
    exact = src.K * (x ** b - x) / (b * (1.0 - b))
    err = np.abs(run.u.values - exact).max() / np.abs(exact).max()
    assert err < 0.01
    assert run.converged


def test_exhaustion_certificates(interval_run):
    _, _, _, _, run = interval_run
    assert run.m_stop == len(run.cutoffs) - 1
    assert len(run.sup_deltas) == len(run.cutoffs) - 1
    assert np.allclose(run.cutoffs[:-1] / run.cutoffs[1:], run.base)
    assert run.min_increment >= -1e-8 * (1.0 + np.abs(run.u.values).max())
    assert run.energy_tail_ratio <= 1.05
    assert run.majorant_report["passed"]
    assert np.all(run.majorant_excess <= 1e-6 * (1.0 + run.majorant.values.max()))
    assert run.probe_mask.sum() > 0
    # probe nodes are free nodes only; pinned nodes can't witness anything
    assert not run.probe_mask[~run.mesh.interior_mask].any()


def test_sign_flip_is_exact(interval_run):
    _, op, bl, src, run = interval_run
    flipped = SingularSource(K=src.K, beta=src.beta, sign=-1)
    run_m = solve_singular(bl, op, flipped)
    assert np.abs(run_m.u.values + run.u.values).max() == 0.0


def test_amplitude_doubling_matched_iterates(interval_run):
    # each truncated problem is linear at p = 2, so iterate m at 2K is
    # exactly twice iterate m at K up to solver tolerance
    _, op, bl, src, _ = interval_run
    ra = solve_singular(bl, op, src, keep_iterates=True)
    rb = solve_singular(bl, op, SingularSource(K=2.0 * src.K, beta=src.beta),
                        keep_iterates=True)
    m = min(len(ra.iterates), len(rb.iterates)) - 1
    ua, ub = ra.iterates[m].values, rb.iterates[m].values
    mask = np.abs(ua) > 1e-12
    assert np.abs(ub[mask] / ua[mask] - 2.0).max() < 1e-5


def test_limit_agrees_across_bases(interval_run):
    _, op, bl, src, run = interval_run
    run3 = solve_singular(bl, op, src, base=3.0)
    probe = uniqueness_probe(run, run3)
    assert probe["passed"]
    assert probe["max_diff"] <= probe["tol"]
    assert probe["bases"] == (2.0, 3.0)


def test_bad_base_rejected(interval_run):
    _, op, bl, src, _ = interval_run
    with pytest.raises(ValueError, match="base"):
        solve_singular(bl, op, src, base=1.0)


def test_decay_bound_detail(interval_run):
    _, _, bl, src, run = interval_run
    out = verify_theorem_bound(run, bl.constants, src, detail=True)
    assert out["passed"] and out["near_gamma_ok"]
    det = out["detail"]
    assert int(det["resolved_mask"].sum()) == out["n_checked"]
    assert len(det["bound"]) == out["n_checked"]
    assert len(det["utilization"]) == out["n_checked"]
    assert det["utilization"].max() == out["max_utilization"]
    d = run.delta[det["resolved_mask"]]
    amp = out["amplitude"]
    assert np.allclose(det["bound"], amp * d ** src.beta)
    assert "detail" not in verify_theorem_bound(run, bl.constants, src)


def test_oversingular_exponent_fails_honestly():
    # beta = alpha at p = 3 gives a hat pairing that diverges with the
    # cutoff; the iterates must blow through the majorant, not settle
    dom = interval_domain(0.0, 1.0, gamma=(0,))
    mesh = build_mesh(dom, 1.0 / 64)
    op = make_operator(3.0, constant_weight(2.0, 1))
    bl, _ = build_barrier(dom, mesh, op)
    src = SingularSource(K=1.0, beta=bl.constants.alpha)
    assert src.exponent(3.0) < -2.0
    with pytest.raises(MajorantError, match="escaped"):
        solve_singular(bl, op, src, max_cutoffs=200)
