"""Discrete condenser capacities and capacity-density boundary tests.

The condenser capacity of a plate K inside an open container O is the
minimum of int_O |grad u|^p w dx over P1 fields with u = 1 on K and u = 0 on
the container rim; the minimizer is the capacity potential.  The boundary
fatness test compares, on an ambient ball mesh around a boundary point, the
capacity of (closed ball minus domain) against the capacity of the full
closed ball in the doubled ball, and reports the worst ratio over sampled
centers and scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError
from .geometry import (DomainSpec, Mesh, ambient_ball_mesh, build_mesh,
                       interval_domain, point_in_domain)
from .solver import P1System, solve_dirichlet
from .weights import OperatorDescriptor, WeightDescriptor, constant_weight, make_operator


@dataclass(frozen=True)
class CondenserSpec:
    """Plate node set K inside an open container O on a fixed mesh."""

    mesh: Mesh
    plate: np.ndarray
    container: np.ndarray
    p: float
    weight: WeightDescriptor


def condenser(mesh: Mesh, plate: np.ndarray, p: float,
              weight: WeightDescriptor | None = None,
              container: np.ndarray | None = None) -> CondenserSpec:
    """Validate and freeze a condenser.  The plate must be nonempty, lie in
    the container, and keep at least two element layers away from the rim."""
    if weight is None:
        weight = constant_weight(p, mesh.dim)
    if container is None:
        container = mesh.interior_mask.copy()
    plate = np.asarray(plate, dtype=bool)
    container = np.asarray(container, dtype=bool) & mesh.interior_mask
    if not plate.any():
        raise CapacityError("empty plate")
    if np.any(plate & ~container):
        raise CapacityError("plate touches or leaves the container")
    g = mesh.neighbors
    ring = (g @ plate.astype(float) > 0) & ~plate
    ring2 = (g @ (plate | ring).astype(float) > 0) & ~(plate | ring)
    if np.any(ring & ~container) or np.any(ring2 & ~container):
        raise CapacityError("unresolved gap: plate within two element layers of the rim")
    return CondenserSpec(mesh=mesh, plate=plate, container=container, p=p,
                         weight=weight)


def capacity(spec: CondenserSpec, return_potential: bool = False):
    """Discrete condenser capacity (and optionally the potential field)."""
    op = make_operator(spec.p, spec.weight)
    gdat = np.where(spec.plate, 1.0, 0.0)
    free = spec.container & ~spec.plate
    u = solve_dirichlet(spec.mesh, op, rho=0.0, g=gdat, free_mask=free,
                        u_init=gdat)
    sysm = P1System(spec.mesh, op)
    grad = sysm.grad_u(u.values)
    mg = np.einsum("eij,ej->ei", sysm.m_el, grad)
    q = np.einsum("ei,ei->e", mg, grad)
    cap = float(np.sum(sysm.w * sysm.vol * q ** (spec.p / 2.0)))
    return (cap, u) if return_potential else cap


# ---------------------------------------------------------------------------
# boundary fatness


@dataclass
class CdcReport:
    rows: list
    gamma_hat: float
    flagged: list
    p: float
    detail: dict = field(default_factory=dict)


def _ambient_interval_mesh(xi: float, radius: float, h: float) -> Mesh:
    n = max(8, int(np.ceil(radius / h)))
    dom = interval_domain(xi - 2 * radius, xi + 2 * radius)
    return build_mesh(dom, 2 * radius / (2 * n))


def cdc_ratio(domain: DomainSpec, xi, radius: float, p: float,
              weight: WeightDescriptor | None = None,
              ambient_h: float | None = None) -> dict:
    """Capacity ratio cap(ball \\ domain, 2-ball) / cap(ball, 2-ball) at a
    boundary point xi and scale radius, on a shared ambient mesh."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if ambient_h is None:
        ambient_h = radius / 24.0
    if weight is None:
        weight = constant_weight(p, domain.dim)
    if domain.dim == 1:
        amesh = _ambient_interval_mesh(xi[0], radius, ambient_h)
        d = np.abs(amesh.nodes[:, 0] - xi[0])
    else:
        amesh = ambient_ball_mesh(domain, xi, 2 * radius, ambient_h)
        d = np.linalg.norm(amesh.nodes - xi, axis=1)
    tol = 1e-9 * radius
    in_ball = d <= radius + tol
    complement = ~point_in_domain(domain, amesh.nodes, tol=tol)
    num_plate = in_ball & complement
    if not num_plate.any():
        raise CapacityError("complement of the domain is thinner than the "
                            "ambient mesh at this center and scale")
    den_plate = in_ball
    container = amesh.interior_mask
    c_num = capacity(condenser(amesh, num_plate, p, weight, container))
    c_den = capacity(condenser(amesh, den_plate, p, weight, container))
    if c_den <= 0:
        raise CapacityError("degenerate denominator capacity")
    return {"center": xi.tolist(), "radius": float(radius),
            "cap_num": c_num, "cap_den": c_den, "ratio": c_num / c_den,
            "n_plate": int(num_plate.sum())}


def _gamma_arclength_centers(domain: DomainSpec, n_centers: int) -> np.ndarray:
    ids, ents = domain.gamma_entities()
    segs = [e for e in ents if e.ndim == 2]
    if not segs:
        return np.array([[float(e[0])] for e in ents])
    lens = np.array([np.linalg.norm(s[1] - s[0]) for s in segs])
    total = lens.sum()
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    targets = (np.arange(n_centers) + 0.5) / n_centers * total
    out = []
    for t in targets:
        j = min(np.searchsorted(cum, t, side="right") - 1, len(segs) - 1)
        s = segs[j]
        frac = (t - cum[j]) / lens[j]
        out.append(s[0] + frac * (s[1] - s[0]))
    return np.array(out)


def estimate_gamma(domain: DomainSpec, p: float, scales,
                   weight: WeightDescriptor | None = None,
                   n_centers: int = 8, ambient_rings: int = 24) -> CdcReport:
    """Sampled lower bound for the boundary capacity density along Gamma.

    Returns per-(center, scale) capacity ratios and their minimum gamma_hat;
    ratios below 1e-3 are flagged as effectively thin.
    """
    centers = _gamma_arclength_centers(domain, n_centers)
    rows, flagged = [], []
    for xi in centers:
        for r in scales:
            row = cdc_ratio(domain, xi, float(r), p, weight,
                            ambient_h=float(r) / ambient_rings)
            rows.append(row)
            if row["ratio"] < 1e-3:
                flagged.append(row)
    gamma_hat = min(row["ratio"] for row in rows)
    return CdcReport(rows=rows, gamma_hat=float(gamma_hat), flagged=flagged,
                     p=p, detail={"n_centers": len(centers),
                                  "scales": [float(r) for r in scales]})
