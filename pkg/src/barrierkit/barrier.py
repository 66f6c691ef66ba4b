"""Calibrated boundary barrier on a geometric ladder of scales.

The goal is a discrete field s_gamma that is comparable to delta^alpha near
the distinguished boundary part Gamma and, at the same time, a certified
supersolution for the singular density c_H s_gamma^(p-1) / delta^p relative
to the weight measure.  Both constants are explicit in the calibrated pair
(theta, c3):

    alpha = ln(4/3) / ln(2/theta)
    c_H   = ((5/4) (4/3)^5)^(1-p) * (theta/2)^(6p) * c3

Nothing here rests on asymptotic smallness: candidate pairs are accepted
only when every probe ball solve satisfies the required nodal bounds, and
every assembled object is re-checked on the mesh it lives on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .capacity import CdcReport, _gamma_arclength_centers, estimate_gamma
from .errors import BarrierError, CalibrationError, SolverError
from .geometry import DomainSpec, Mesh, ScaleLadder, build_ladder
from .parallel import parallel_map
from .solver import DiscreteField, P1System, solve_dirichlet
from .weights import OperatorDescriptor


@dataclass(frozen=True)
class CalibratedConstants:
    """Calibrated (theta, c3) with the exponents they induce."""

    theta: float
    c3: float
    p: float
    alpha: float
    c_h: float
    evidence: dict = field(default_factory=dict, repr=False, compare=False)


def constants_from(theta: float, c3: float, p: float,
                   evidence: dict | None = None) -> CalibratedConstants:
    if not 0 < theta <= 0.5:
        raise CalibrationError("theta must lie in (0, 1/2]")
    if c3 <= 0:
        raise CalibrationError("c3 must be positive")
    if p <= 1:
        raise CalibrationError("p must exceed 1")
    alpha = np.log(4.0 / 3.0) / np.log(2.0 / theta)
    c_h = ((5.0 / 4.0) * (4.0 / 3.0) ** 5) ** (1.0 - p) \
        * (theta / 2.0) ** (6.0 * p) * c3
    return CalibratedConstants(theta=float(theta), c3=float(c3), p=float(p),
                               alpha=float(alpha), c_h=float(c_h),
                               evidence=evidence or {})


def _ball_distance(mesh: Mesh, xi) -> np.ndarray:
    c = np.atleast_1d(np.asarray(xi, dtype=float))
    return np.linalg.norm(mesh.nodes - c[None, :], axis=1)


def auxiliary_function(mesh: Mesh, op: OperatorDescriptor, xi, r0: float,
                       c3: float, theta: float | None = None,
                       u_init=None, check: bool = True):
    """Solve the calibration ball problem at center xi and radius r0.

    Boundary data ramps from 1/4 on the inner half-ball to 1 at the rim;
    the source is the constant c3 / r0^p.  Returns the field extended by 1
    outside the open ball together with a probe record (nodal min / max,
    the maximum next to the rim, and the maximum on theta B when theta is
    given).  With check=True a violated bound raises BarrierError.
    """
    r0 = float(r0)
    if r0 <= 0:
        raise BarrierError("ball radius must be positive")
    r = _ball_distance(mesh, xi)
    eta = np.clip(0.25 + 0.75 * (2.0 * r / r0 - 1.0), 0.25, 1.0)
    free = mesh.interior_mask & (r < r0)
    rho = c3 / r0 ** op.p
    u, info = solve_dirichlet(mesh, op, rho, eta,
                              free_mask=free,
                              u_init=eta if u_init is None else u_init,
                              return_info=True)
    vals = u.values
    outside = (r >= r0).astype(float)
    near_rim = free & ((mesh.neighbors @ outside) > 0)
    probe = {
        "center": [float(x) for x in np.atleast_1d(np.asarray(xi, float))],
        "radius": r0,
        "c3": float(c3),
        "min": float(vals.min()),
        "max": float(vals.max()),
        "rim_max": float(vals[near_rim].max()) if near_rim.any() else None,
        "newton_iterations": info.newton_iterations,
    }
    breaches = []
    if probe["min"] < 0.25 - 1e-8:
        breaches.append(f"lower bound breached: min {probe['min']:.6g}")
    if probe["max"] > 1.25 + 1e-8:
        breaches.append(f"upper bound breached: max {probe['max']:.6g}")
    if probe["rim_max"] is not None and probe["rim_max"] > 1.0 + 1e-8:
        breaches.append(f"rim overshoot: {probe['rim_max']:.6g}")
    if theta is not None:
        inner = r <= theta * r0 + 1e-12 * r0
        tmax = float(vals[inner].max()) if inner.any() else None
        probe["theta_max"] = tmax
        if tmax is not None and tmax > 0.5 + 1e-8:
            breaches.append(f"decay bound breached on theta B: {tmax:.6g}")
    probe["breaches"] = breaches
    if check and breaches:
        raise BarrierError(
            f"ball problem at {probe['center']} r={r0:.4g}: " + "; ".join(breaches))
    return u, probe


def _gamma_length(domain: DomainSpec) -> float:
    _, ents = domain.gamma_entities()
    return float(sum(np.linalg.norm(e[1] - e[0]) for e in ents if e.ndim == 2))


def _ladder_work(domain: DomainSpec, mesh: Mesh, theta: float) -> float:
    """Predicted number of ball solves for a full ladder at this theta."""
    ratio = theta / 2.0
    k_lo = int(np.floor(np.log(2.0 * domain.diameter()) / np.log(ratio)))
    k_hi = int(np.floor(np.log(4.0 * mesh.h) / np.log(ratio)))
    if k_hi < k_lo:
        return np.inf
    length = _gamma_length(domain)
    return float(sum(length / (ratio * ratio ** k) + 1.0
                     for k in range(k_lo, k_hi + 1)))


def calibrate(domain: DomainSpec, mesh: Mesh, op: OperatorDescriptor,
              thetas=(0.5, 0.25, 0.125, 0.0625),
              c3_grid=(1.0, 0.1, 0.01, 0.001),
              scales=None, n_centers: int = 8, margin: float = 0.9,
              fatness=None, threads: int = 1) -> CalibratedConstants:
    """Select (theta, c3) by direct verification on probe balls.

    Probe balls sit at n_centers arclength-uniform points of Gamma and at
    each probe scale (default: 4h, diam/2, and their geometric mean).  A
    candidate pair passes when every probe stays in [1/4, 5/4], does not
    overshoot 1 next to the rim, and is at most 1/2 on theta B.  Among the
    passing pairs the one with the cheapest predicted ladder (ties: larger
    c3) wins, and the stored c3 keeps a 10% safety margin.

    fatness: a CdcReport to reuse, None to compute one at the finest probe
    scale, or False to skip the gate entirely.
    """
    p = op.p
    h = mesh.h
    diam = domain.diameter()
    if scales is None:
        coarse = diam / 2.0
        if coarse <= 4.0 * h:
            raise CalibrationError("mesh too coarse for probe scales")
        scales = (4.0 * h, float(np.sqrt(4.0 * h * coarse)), coarse)
    scales = tuple(sorted({float(s) for s in scales}))
    if scales[0] < 4.0 * h * (1.0 - 1e-9):
        raise CalibrationError(
            f"probe scale {scales[0]:.4g} is below the resolution limit 4h = {4 * h:.4g}")
    if fatness is None:
        fatness = estimate_gamma(domain, p, scales=(scales[0],),
                                 weight=op.weight,
                                 n_centers=min(4, n_centers), ambient_rings=16)
    if isinstance(fatness, CdcReport):
        if fatness.gamma_hat < 1e-3:
            raise CalibrationError(
                f"Gamma is too thin for the construction: gamma_hat = {fatness.gamma_hat:.3g}")
    centers = _gamma_arclength_centers(domain, n_centers)
    c3_desc = sorted((float(c) for c in c3_grid), reverse=True)

    def run_probe(task):
        xi, r0 = task
        out = []
        u_prev = None
        for c3 in c3_desc:
            try:
                u, pr = auxiliary_function(mesh, op, xi, r0, c3,
                                           u_init=u_prev, check=False)
            except SolverError as exc:
                out.append({"center": [float(x) for x in np.atleast_1d(xi)],
                            "radius": float(r0), "c3": c3, "failed": str(exc)})
                u_prev = None
                continue
            r = _ball_distance(mesh, xi)
            pr["theta_max"] = {}
            for th in thetas:
                inner = r <= th * r0 + 1e-12 * r0
                pr["theta_max"][float(th)] = (
                    float(u.values[inner].max()) if inner.any() else None)
            out.append(pr)
            u_prev = u.values
        return out

    tasks = [(xi, r0) for xi in centers for r0 in scales]
    rows = [pr for chunk in parallel_map(run_probe, tasks, threads) for pr in chunk]

    def probe_failures(pr, th):
        if "failed" in pr:
            return [f"solver failed: {pr['failed']}"]
        out = list(pr["breaches"])
        tmax = pr["theta_max"][float(th)]
        if tmax is not None and tmax > 0.5 + 1e-8:
            out.append(f"decay bound breached on theta B: {tmax:.6g}")
        return out

    grid, candidates = [], []
    for th in thetas:
        work = _ladder_work(domain, mesh, th)
        for c3 in c3_desc:
            fails = []
            for pr in rows:
                if pr["c3"] != c3:
                    continue
                for msg in probe_failures(pr, th):
                    fails.append({"center": pr["center"],
                                  "radius": pr["radius"], "issue": msg})
            if not np.isfinite(work):
                fails.append({"issue": "no resolvable ladder scale at this theta"})
            passed = not fails
            grid.append({"theta": float(th), "c3": c3, "passed": passed,
                         "work": work, "failures": fails})
            if passed:
                candidates.append((work, -c3, float(th), c3))
    if not candidates:
        worst = min(grid, key=lambda g: len(g["failures"]))
        raise CalibrationError(
            "no (theta, c3) pair passed the probe bounds; closest candidate "
            f"theta={worst['theta']} c3={worst['c3']} failed "
            f"{len(worst['failures'])} probes, first: {worst['failures'][0]}")
    candidates.sort()
    _, _, theta_sel, c3_sel = candidates[0]
    evidence = {
        "probes": rows,
        "grid": grid,
        "scales": list(scales),
        "selected": {"theta": theta_sel, "c3_grid_value": c3_sel,
                     "c3": margin * c3_sel, "margin": margin},
    }
    if isinstance(fatness, CdcReport):
        evidence["gamma_hat"] = fatness.gamma_hat
    return constants_from(theta_sel, margin * c3_sel, p, evidence)


def _label_interfaces(mesh: Mesh, labels: np.ndarray) -> np.ndarray:
    """Nodes whose element star mixes different branch labels."""
    g = mesh.neighbors.tocoo()
    differs = labels[g.row] != labels[g.col]
    iface = np.zeros(mesh.n_nodes, dtype=bool)
    iface[g.row[differs]] = True
    iface[g.col[differs]] = True
    return iface


def _net_distance(mesh: Mesh, centers: np.ndarray) -> np.ndarray:
    dcent = np.full(mesh.n_nodes, np.inf)
    for xi in centers:
        dcent = np.minimum(dcent, _ball_distance(mesh, xi))
    return dcent


@dataclass
class LayerField:
    """Scale-k layer field: the ball problem merged over the covering net.

    The per-center boundary ramps depend only on the distance to their own
    center, so their nodal minimum is the same ramp in the distance to the
    net; solving once with that merged data (and the source on the whole
    ball union D_k) gives the glued field directly, with the layer equation
    satisfied exactly at every free node instead of approximately across
    branch interfaces.  branch is -1 where the field sits at its ambient
    value 1 and 0 on the solved region; d_mask is the open ball union.
    """

    k: int
    radius: float
    field: DiscreteField
    branch: np.ndarray
    d_mask: np.ndarray
    nu: np.ndarray
    source: float
    check: dict
    probe: dict


def layer_function(mesh: Mesh, op: OperatorDescriptor, ladder: ScaleLadder,
                   k: int, constants: CalibratedConstants,
                   sysm: P1System | None = None,
                   check: bool = True) -> LayerField:
    """Build and certify the layer field v_k at scale k.

    Certification: values stay in [1/4, 5/4], equal exactly 1 off the ball
    union, are at most 1/2 on the next layer, and the field passes the
    supersolution check for the source c3 R_k^{-p} on the ball union with
    rim slack.
    """
    if sysm is None:
        sysm = P1System(mesh, op)
    radius = ladder.radii[k]
    centers = ladder.centers[k]
    if len(centers) == 0:
        raise BarrierError(f"no covering centers at scale {k}")
    c3 = constants.c3
    p = op.p
    n = mesh.n_nodes

    dcent = _net_distance(mesh, centers)
    d_mask = dcent < radius
    eta = np.clip(0.25 + 0.75 * (2.0 * dcent / radius - 1.0), 0.25, 1.0)
    free = mesh.interior_mask & d_mask
    source = c3 / radius ** p
    u, info = solve_dirichlet(mesh, op, source, eta, free_mask=free,
                              u_init=eta, return_info=True)
    v = u.values
    branch = np.where(d_mask & (v < 1.0 - 1e-12), 0, -1).astype(np.int64)

    probe = {"k": k, "radius": radius, "min": float(v.min()),
             "max": float(v.max()),
             "newton_iterations": info.newton_iterations}
    inner = ladder.layers[k + 1]
    probe["next_layer_max"] = float(v[inner].max()) if inner.any() else None

    if check:
        if not np.all(v[~d_mask] == 1.0):
            raise BarrierError(
                f"layer {k} differs from 1 outside its ball union")
        if probe["min"] < 0.25 - 1e-8 or probe["max"] > 1.25 + 1e-8:
            raise BarrierError(
                f"layer {k} range [{probe['min']:.6g}, {probe['max']:.6g}] "
                "breaches [1/4, 5/4]")
        if probe["next_layer_max"] is not None \
                and probe["next_layer_max"] > 0.5 + 1e-8:
            raise BarrierError(
                f"layer {k} exceeds 1/2 on the next layer: "
                f"{probe['next_layer_max']:.6g}")

    nu = sysm.bulk_residual(v)
    rho = np.where(d_mask, source, 0.0)
    iface = _label_interfaces(mesh, branch)
    slack = np.where(iface, 1e-3 * np.abs(nu) + mesh.h * sysm.mass, 0.0)
    tau = 10.0 * 1e-6 * (1.0 + np.abs(rho)) * sysm.mass + slack
    margin = nu - rho * sysm.mass + tau
    idx = np.flatnonzero(mesh.interior_mask)
    bad = idx[margin[idx] < 0]
    chk = {
        "passed": len(bad) == 0,
        "n_checked": len(idx),
        "n_violations": len(bad),
        "worst_margin": float(margin[idx].min()) if len(idx) else 0.0,
        "interface_mask": iface,
    }
    if check and not chk["passed"]:
        raise BarrierError(
            f"layer {k} supersolution check failed at {len(bad)} nodes, "
            f"worst margin {chk['worst_margin']:.3e}")
    return LayerField(k=k, radius=radius, field=DiscreteField(mesh, v),
                      branch=branch, d_mask=d_mask, nu=nu, source=source,
                      check=chk, probe=probe)


@dataclass
class BarrierLadder:
    """Assembled barrier: the envelope s, its boundary version s_gamma = 4s,
    and the bookkeeping needed to verify and transform it."""

    mesh: Mesh
    ladder: ScaleLadder
    constants: CalibratedConstants
    layers: dict
    s: np.ndarray
    s_gamma: np.ndarray
    delta: np.ndarray
    layer_index: np.ndarray
    active_k: np.ndarray
    resolved_mask: np.ndarray
    interface_mask: np.ndarray

    @property
    def field(self) -> DiscreteField:
        return DiscreteField(self.mesh, self.s_gamma)


def assemble_barrier(ladder: ScaleLadder, layers: dict,
                     constants: CalibratedConstants) -> BarrierLadder:
    """Merge the layer fields into s = min_k (3/4)^k v_k over E_k.

    The minimum over all scales must agree bitwise with the minimum over
    the six-scale window ending at each node's own layer; a mismatch means
    some layer breached its bounds and raises BarrierError.
    """
    mesh = ladder.mesh
    n = mesh.n_nodes
    k_lo, k_hi = ladder.k_lo, ladder.k_hi
    ks = list(range(k_lo, k_hi + 1))
    missing = [k for k in ks if k not in layers]
    if missing:
        raise BarrierError(f"missing layer fields for scales {missing}")

    big = np.full((len(ks), n), np.inf)
    for i, k in enumerate(ks):
        mask = ladder.layers[k]
        big[i, mask] = 0.75 ** k * layers[k].field.values[mask]
    s = big.min(axis=0)
    if not np.all(np.isfinite(s)):
        raise BarrierError("a node escaped the coarsest layer")
    active_k = (k_lo + big.argmin(axis=0)).astype(np.int64)

    count = np.zeros(n, dtype=np.int64)
    for k in range(k_lo, k_hi + 2):
        count += ladder.layers[k]
    layer_index = k_lo + count - 1
    resolved = ladder.delta > ladder.radii[k_hi + 1]
    if not np.array_equal(resolved, layer_index <= k_hi):
        raise BarrierError("layer bookkeeping is inconsistent")

    win = np.full(n, np.inf)
    ridx = np.flatnonzero(resolved)
    for off in range(6):
        kk = layer_index[ridx] - off
        ok = kk >= k_lo
        cols = ridx[ok]
        win[cols] = np.minimum(win[cols], big[kk[ok] - k_lo, cols])
    mism = ridx[win[ridx] != s[ridx]]
    if len(mism):
        raise BarrierError(
            f"window reduction mismatch at {len(mism)} nodes (first: node "
            f"{mism[0]}, delta {ladder.delta[mism[0]]:.4g})")

    branch = np.full(n, -2, dtype=np.int64)
    for k in ks:
        m = active_k == k
        branch[m] = layers[k].branch[m]
    labels = active_k * 10_000_000 + branch + 2
    iface = _label_interfaces(mesh, labels)

    return BarrierLadder(mesh=mesh, ladder=ladder, constants=constants,
                         layers=layers, s=s, s_gamma=4.0 * s,
                         delta=ladder.delta, layer_index=layer_index,
                         active_k=active_k, resolved_mask=resolved,
                         interface_mask=iface)


def _scaled_branch_reference(bl: BarrierLadder, p: float) -> np.ndarray:
    """Nodewise residual magnitude of the scaled branch fields, the
    reference for interface slack."""
    ref = np.zeros(bl.mesh.n_nodes)
    for k, lf in bl.layers.items():
        fac = (4.0 * 0.75 ** k) ** (p - 1.0)
        ref = np.maximum(ref, fac * np.abs(lf.nu))
    return ref


def verify_barrier(bl: BarrierLadder, op: OperatorDescriptor) -> dict:
    """Re-derive every property of the assembled barrier on the mesh.

    Checks: the constants match their defining formulas exactly; the
    sandwich delta^alpha <= s_gamma <= 30 delta^alpha holds at every
    resolved node; each layer's envelope stays between (3/4)^k / 4 and
    (5/4) (3/4)^k; and s_gamma passes the supersolution check for the
    density c_H s_gamma^(p-1) / delta^p on the resolved region, with at
    least 99% of nodes clean and the violation mass below 1e-3 of the
    residual mass.
    """
    c = bl.constants
    p = op.p
    mesh = bl.mesh
    res = bl.resolved_mask

    ref = constants_from(c.theta, c.c3, c.p)
    constants_ok = (ref.alpha == c.alpha) and (ref.c_h == c.c_h)

    d = bl.delta[res]
    da = d ** c.alpha
    sg = bl.s_gamma[res]
    low_bad = int(np.sum(sg < da * (1.0 - 1e-12)))
    high_bad = int(np.sum(sg > 30.0 * da * (1.0 + 1e-12)))
    sandwich = {
        "n_checked": int(res.sum()),
        "n_low_violations": low_bad,
        "n_high_violations": high_bad,
        "max_ratio": float((sg / da).max()) if len(d) else 0.0,
        "min_ratio": float((sg / da).min()) if len(d) else 0.0,
        "passed": low_bad == 0 and high_bad == 0,
    }

    per_layer = []
    layers_ok = True
    for k in range(bl.ladder.k_lo, bl.ladder.k_hi + 1):
        m = bl.layer_index == k
        if not m.any():
            continue
        lo = 0.25 * 0.75 ** k
        hi = 1.25 * 0.75 ** k
        smin = float(bl.s[m].min())
        smax = float(bl.s[m].max())
        ok = smin >= lo * (1.0 - 1e-12) and smax <= hi * (1.0 + 1e-12)
        layers_ok &= ok
        per_layer.append({"k": k, "n_nodes": int(m.sum()), "s_min": smin,
                          "s_max": smax, "lower": lo, "upper": hi,
                          "bounds_ok": ok,
                          "s_gamma_max": float(bl.s_gamma[m].max())})

    sysm = P1System(mesh, op)
    nu = sysm.bulk_residual(bl.s_gamma)
    rho = np.zeros(mesh.n_nodes)
    rho[res] = c.c_h * bl.s_gamma[res] ** (p - 1.0) / bl.delta[res] ** p
    ref_nu = _scaled_branch_reference(bl, p)
    slack = np.where(bl.interface_mask,
                     1e-3 * np.maximum(ref_nu, np.abs(nu))
                     + mesh.h * sysm.mass, 0.0)
    tau = 10.0 * 1e-6 * (1.0 + np.abs(rho)) * sysm.mass + slack
    margin = nu - rho * sysm.mass + tau
    checked = res & mesh.interior_mask
    idx = np.flatnonzero(checked)
    bad = idx[margin[idx] < 0]
    viol_mass = float(-margin[bad].sum()) if len(bad) else 0.0
    resid_mass = float(np.abs(nu[idx]).sum())
    pass_fraction = 1.0 - len(bad) / max(len(idx), 1)
    mass_ratio = viol_mass / max(resid_mass, 1e-300)
    worst = int(idx[np.argmin(margin[idx])]) if len(idx) else None
    supersolution = {
        "n_checked": len(idx),
        "n_violations": len(bad),
        "pass_fraction": pass_fraction,
        "violation_mass_ratio": mass_ratio,
        "worst_margin": float(margin[idx].min()) if len(idx) else 0.0,
        "worst_node": worst,
        "passed": pass_fraction >= 0.99 and mass_ratio <= 1e-3,
    }

    passed = bool(constants_ok and sandwich["passed"] and layers_ok
                  and supersolution["passed"])
    return {"constants_ok": constants_ok, "sandwich": sandwich,
            "per_layer": per_layer, "layers_ok": bool(layers_ok),
            "supersolution": supersolution, "passed": passed,
            "alpha": c.alpha, "c_h": c.c_h}


def transform_barrier(bl: BarrierLadder, op: OperatorDescriptor, beta: float,
                      K: float | None = None):
    """Map the barrier through g(t) = (K/c_H)^(1/(p-1)) (alpha/beta) t^(beta/alpha).

    The result v = g(s_gamma) is the majorant candidate for sources of size
    K delta^(beta (p-1) - p): the report records the bound checks
    g(delta^alpha) <= v <= g(30 delta^alpha), the exact rewrite of the
    density through g, and the supersolution margins on the resolved
    region.  For beta = alpha and K = c_H the transform is the identity.
    """
    c = bl.constants
    p = op.p
    if beta <= 0:
        raise BarrierError("decay exponent beta must be positive")
    if beta > c.alpha * (1.0 + 1e-12):
        raise BarrierError(
            f"decay exponent beta = {beta:.6g} exceeds the barrier exponent "
            f"alpha = {c.alpha:.6g}")
    K = c.c_h if K is None else float(K)
    if K <= 0:
        raise BarrierError("source constant K must be positive")

    coef = (K / c.c_h) ** (1.0 / (p - 1.0))
    ratio = beta / c.alpha
    amp = coef * (c.alpha / beta)
    v = amp * bl.s_gamma ** ratio

    mesh = bl.mesh
    res = bl.resolved_mask
    d = bl.delta[res]
    rho = np.zeros(mesh.n_nodes)
    rho[res] = K * d ** (beta * (p - 1.0) - p)
    alt = c.c_h * (coef * (d ** c.alpha) ** ratio) ** (p - 1.0) / d ** p
    density_ok = bool(np.allclose(alt, rho[res], rtol=1e-10, atol=0.0))

    lows = amp * (d ** c.alpha) ** ratio
    highs = amp * (30.0 * d ** c.alpha) ** ratio
    vr = v[res]
    low_bad = int(np.sum(vr < lows * (1.0 - 1e-9)))
    high_bad = int(np.sum(vr > highs * (1.0 + 1e-9)))

    sysm = P1System(mesh, op)
    nu = sysm.bulk_residual(v)
    ref_nu = amp ** (p - 1.0) * _scaled_branch_reference(bl, p)
    slack = np.where(bl.interface_mask,
                     1e-3 * np.maximum(ref_nu, np.abs(nu))
                     + mesh.h * sysm.mass, 0.0)
    tau = 10.0 * 1e-6 * (1.0 + np.abs(rho)) * sysm.mass + slack
    margin = nu - rho * sysm.mass + tau
    idx = np.flatnonzero(res & mesh.interior_mask)
    bad = idx[margin[idx] < 0]
    viol_mass = float(-margin[bad].sum()) if len(bad) else 0.0
    resid_mass = float(np.abs(nu[idx]).sum())
    pass_fraction = 1.0 - len(bad) / max(len(idx), 1)
    mass_ratio = viol_mass / max(resid_mass, 1e-300)
    supersolution = {
        "n_checked": len(idx),
        "n_violations": len(bad),
        "pass_fraction": pass_fraction,
        "violation_mass_ratio": mass_ratio,
        "worst_margin": float(margin[idx].min()) if len(idx) else 0.0,
        "passed": pass_fraction >= 0.99 and mass_ratio <= 1e-3,
    }
    report = {
        "beta": float(beta),
        "K": K,
        "amplitude": amp,
        "density_identity_ok": density_ok,
        "bounds": {"n_checked": int(res.sum()),
                   "n_low_violations": low_bad,
                   "n_high_violations": high_bad,
                   "passed": low_bad == 0 and high_bad == 0},
        "supersolution": supersolution,
        "passed": bool(density_ok and low_bad == 0 and high_bad == 0
                       and supersolution["passed"]),
    }
    return DiscreteField(mesh, v), report


def build_barrier(domain: DomainSpec, mesh: Mesh, op: OperatorDescriptor,
                  constants: CalibratedConstants | None = None,
                  threads: int = 1, verify: bool = True, **calibration):
    """Calibrate (unless constants are given), build every layer, assemble,
    and verify.  Returns (BarrierLadder, verification report or None)."""
    if constants is None:
        constants = calibrate(domain, mesh, op, threads=threads, **calibration)
    ladder = build_ladder(mesh, constants.theta)
    sysm = P1System(mesh, op)
    layers = {}
    for k in range(ladder.k_lo, ladder.k_hi + 1):
        layers[k] = layer_function(mesh, op, ladder, k, constants, sysm=sysm)
    bl = assemble_barrier(ladder, layers, constants)
    report = verify_barrier(bl, op) if verify else None
    return bl, report
