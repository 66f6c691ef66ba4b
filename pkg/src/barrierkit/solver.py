"""P1 energy minimization for the weighted quasilinear operator.

The discrete Dirichlet problem minimizes

    J(u) = sum_T w(x_T) (M grad u . grad u)^(p/2) |T| / p - sum_i rho_i u_i m_i

over nodal fields with fixed values on the Dirichlet node set, where x_T is
the element barycenter (one-point quadrature) and m_i is the nodal w-mass of
the hat function.  Minimization runs damped Newton on a regularized density
(eps^2 + M grad u . grad u)^(p/2) with eps decreasing geometrically from 1e-2
to 1e-8, Armijo backtracking (factor 0.5, slope parameter 1e-4), and a final
first-order check on the unregularized residual.

The residual measure nu_i = int A(x, grad u) . grad phi_i dx - rho_i m_i is
the discrete analogue of the Riesz measure of a supersolution; the check
helpers below (supersolution, glueing of minima, comparison) all run on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from .errors import SolverError, BarrierkitError
from .geometry import Mesh, gamma_distance
from .weights import OperatorDescriptor, eval_weight

EPS_SOLVE = 1e-8
EPS_SCHEDULE = tuple(10.0 ** (-k) for k in range(2, 9))
ARMIJO_FACTOR = 0.5
ARMIJO_SLOPE = 1e-4


@dataclass(frozen=True)
class DiscreteField:
    """Nodal P1 field on a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.mesh.n_nodes:
            raise BarrierkitError("field length does not match mesh")


@dataclass
class SolveInfo:
    converged: bool
    newton_iterations: int
    residual_inf: float
    residual_history: list
    energy_history: list
    scale: float


@dataclass(frozen=True)
class ResidualMeasure:
    """Nodal residuals nu and w-masses m; interior_mask marks the nodes where
    nu represents the Riesz measure (non-Dirichlet nodes)."""

    mesh: Mesh
    nu: np.ndarray
    mass: np.ndarray
    interior_mask: np.ndarray
    rho: np.ndarray


class P1System:
    """Cached element data for one (mesh, operator) pair.

    active restricts assembly to elements touching at least one free node;
    energies and residuals over inactive elements do not influence the
    minimizer, so skipping them is purely an optimization.
    """

    def __init__(self, mesh: Mesh, op: OperatorDescriptor, active=None):
        self.mesh = mesh
        self.op = op
        self.p = op.p
        els = np.arange(len(mesh.elements)) if active is None else np.flatnonzero(active)
        self.els = els
        self.elements = mesh.elements[els]
        self.grads = mesh.grads[els]
        self.vol = mesh.el_vol[els]
        self.w = eval_weight(op.weight, mesh.el_bary[els])
        m = op.m_at(mesh.el_bary[els])
        # M applied to hat gradients, precomputed: (E, nverts, dim)
        self.mgrads = np.einsum("eij,ekj->eki", m, self.grads)
        self.m_el = m
        k = mesh.elements.shape[1]
        self.mass = np.bincount(self.elements.ravel(),
                                weights=np.repeat(self.w * self.vol / k, k),
                                minlength=mesh.n_nodes)

    def grad_u(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("eki,ek->ei", self.grads, u[self.elements])

    def bulk_energy(self, u: np.ndarray, eps: float) -> float:
        g = self.grad_u(u)
        mg = np.einsum("eij,ej->ei", self.m_el, g)
        q = np.einsum("ei,ei->e", mg, g) + eps * eps
        return float(np.sum(self.w * self.vol * q ** (self.p / 2.0)) / self.p)

    def bulk_residual(self, u: np.ndarray, eps: float = 0.0) -> np.ndarray:
        """Nodal assembly of the flux pairing against hat functions."""
        g = self.grad_u(u)
        mg = np.einsum("eij,ej->ei", self.m_el, g)
        q = np.einsum("ei,ei->e", mg, g) + eps * eps
        if eps == 0.0:
            fac = np.where(q > 0, np.maximum(q, 1e-300) ** ((self.p - 2) / 2.0), 0.0)
        else:
            fac = q ** ((self.p - 2) / 2.0)
        flux = (self.w * self.vol * fac)[:, None] * mg
        contrib = np.einsum("eki,ei->ek", self.grads, flux)
        return np.bincount(self.elements.ravel(), weights=contrib.ravel(),
                           minlength=self.mesh.n_nodes)

    def energy(self, u: np.ndarray, rho: np.ndarray, eps: float) -> float:
        return self.bulk_energy(u, eps) - float(np.sum(rho * u * self.mass))

    def residual(self, u: np.ndarray, rho: np.ndarray, eps: float = 0.0) -> np.ndarray:
        return self.bulk_residual(u, eps) - rho * self.mass

    def hessian(self, u: np.ndarray, eps: float):
        g = self.grad_u(u)
        mg = np.einsum("eij,ej->ei", self.m_el, g)
        q = np.einsum("ei,ei->e", mg, g) + eps * eps
        c1 = self.w * self.vol * q ** ((self.p - 2) / 2.0)
        blocks = c1[:, None, None] * np.einsum("eki,eli->ekl", self.grads,
                                               self.mgrads)
        if self.p != 2.0:
            c2 = self.w * self.vol * (self.p - 2) * q ** ((self.p - 4) / 2.0)
            mgk = np.einsum("eki,ei->ek", self.grads, mg)
            blocks = blocks + c2[:, None, None] * mgk[:, :, None] * mgk[:, None, :]
        k = self.elements.shape[1]
        rows = np.repeat(self.elements, k, axis=1).ravel()
        cols = np.tile(self.elements, (1, k)).ravel()
        n = self.mesh.n_nodes
        return coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _newton_stage(sysm, u, f, free, eps, tol, max_iter, hist, ehist):
    """Damped Newton iterations at fixed regularization; returns iterations.

    f is the assembled load vector (source pairing against hat functions).
    """
    it = 0
    r = sysm.bulk_residual(u, eps) - f
    j = sysm.bulk_energy(u, eps) - float(f @ u)
    while it < max_iter:
        rinf = float(np.abs(r[free]).max()) if free.any() else 0.0
        hist.append(rinf)
        ehist.append(j)
        if rinf <= tol:
            return it, True
        h = sysm.hessian(u, eps)
        hff = h[free][:, free]
        try:
            du = spsolve(hff.tocsc(), -r[free])
        except Exception as exc:  # singular factorization
            raise SolverError(f"linear solve failed: {exc}", history=hist)
        if not np.all(np.isfinite(du)):
            raise SolverError("non-finite Newton step", history=hist)
        slope = float(r[free] @ du)
        if slope >= 0:
            du = -r[free]
            slope = float(r[free] @ du)
        t = 1.0
        for _ in range(60):
            u_try = u.copy()
            u_try[free] += t * du
            j_try = sysm.bulk_energy(u_try, eps) - float(f @ u_try)
            if j_try <= j + ARMIJO_SLOPE * t * slope:
                break
            t *= ARMIJO_FACTOR
        else:
            raise SolverError("line search stalled", history=hist)
        u[free] += t * du
        j = j_try
        r = sysm.bulk_residual(u, eps) - f
        it += 1
    return it, False


def solve_dirichlet(mesh: Mesh, op: OperatorDescriptor, rho, g,
                    free_mask: np.ndarray | None = None,
                    u_init: np.ndarray | None = None,
                    tol: float = EPS_SOLVE,
                    load: np.ndarray | None = None,
                    return_info: bool = False):
    """Solve the discrete Dirichlet problem, returning the minimizer.

    rho is the nodal source density relative to the weight measure (scalar or
    array); g supplies Dirichlet values on every non-free node.  free_mask
    defaults to the mesh interior.  load, when given, is a fully assembled
    source pairing vector and overrides the lumped rho_i m_i pairing (used by
    sources too singular for nodal quadrature).  Convergence demands the
    unregularized first-order residual satisfy max |nu_i| <= tol (1 + max
    load scale) over free nodes; failure raises SolverError with the residual
    history.
    """
    n = mesh.n_nodes
    rho = np.full(n, float(rho)) if np.isscalar(rho) else np.asarray(rho, dtype=float)
    g = np.full(n, float(g)) if np.isscalar(g) else np.asarray(g, dtype=float)
    free = mesh.interior_mask.copy() if free_mask is None else free_mask.copy()
    free &= mesh.interior_mask
    if not np.all(np.isfinite(g[~free])):
        raise SolverError("boundary data must be finite on the Dirichlet set")
    el_free = free[mesh.elements].any(axis=1)
    sysm = P1System(mesh, op, active=el_free)
    f = rho * sysm.mass if load is None else np.asarray(load, dtype=float)
    u = g.astype(float).copy() if u_init is None else np.asarray(u_init, dtype=float).copy()
    u[~free] = g[~free]
    scale = 1.0 + float(np.max(np.abs(f[free]))) if free.any() else 1.0
    hist, ehist = [], []
    total_it = 0

    if not free.any():
        info = SolveInfo(True, 0, 0.0, hist, ehist, scale)
        fld = DiscreteField(mesh, u)
        return (fld, info) if return_info else fld

    if sysm.p == 2.0:
        stages = (0.0,)
    else:
        r0 = sysm.bulk_residual(u, 0.0) - f
        warm = float(np.abs(r0[free]).max()) <= 1e3 * tol * scale
        stages = (EPS_SCHEDULE[-1],) if warm else EPS_SCHEDULE
    for eps in stages[:-1]:
        it, _ = _newton_stage(sysm, u, f, free, eps,
                              max(0.03 * eps * scale, tol * scale),
                              40, hist, ehist)
        total_it += it
    # final stage: iterate at the last regularization level but declare
    # convergence on the exact (eps = 0) residual
    eps_f = stages[-1]
    for attempt in range(3):
        it, _ = _newton_stage(sysm, u, f, free, eps_f, 0.02 * tol * scale,
                              60, hist, ehist)
        total_it += it
        r0 = sysm.bulk_residual(u, 0.0) - f
        rinf = float(np.abs(r0[free]).max())
        if rinf <= tol * scale:
            info = SolveInfo(True, total_it, rinf, hist, ehist, scale)
            fld = DiscreteField(mesh, u)
            return (fld, info) if return_info else fld
        eps_f = max(eps_f * 0.01, 1e-14)
    raise SolverError(
        f"no convergence: |nu|_inf = {rinf:.3e} > {tol * scale:.3e}",
        history=hist)


def residual_measure(u: DiscreteField, op: OperatorDescriptor, rho,
                     load: np.ndarray | None = None) -> ResidualMeasure:
    """Exact (unregularized) residual measure of a nodal field.

    load overrides the lumped rho_i m_i source pairing when given.
    """
    mesh = u.mesh
    n = mesh.n_nodes
    rho = np.full(n, float(rho)) if np.isscalar(rho) else np.asarray(rho, dtype=float)
    sysm = P1System(mesh, op)
    f = rho * sysm.mass if load is None else np.asarray(load, dtype=float)
    nu = sysm.bulk_residual(u.values, 0.0) - f
    return ResidualMeasure(mesh=mesh, nu=nu, mass=sysm.mass,
                           interior_mask=mesh.interior_mask, rho=rho)


@dataclass
class CheckResult:
    passed: bool
    n_checked: int
    n_violations: int
    worst_margin: float
    worst_node: int | None
    detail: dict = field(default_factory=dict)


def supersolution_check(u: DiscreteField, op: OperatorDescriptor, rho,
                        extra_slack: np.ndarray | None = None,
                        tau_scale: float = 1.0) -> CheckResult:
    """Check nu_i >= -tau_i at interior nodes, tau_i = 1e-6 (1+|rho_i|) m_i.

    extra_slack, when given, is added nodewise to tau (glueing interfaces).
    """
    rm = residual_measure(u, op, rho)
    tau = tau_scale * 1e-6 * (1.0 + np.abs(rm.rho)) * rm.mass
    if extra_slack is not None:
        tau = tau + extra_slack
    margin = rm.nu + tau
    idx = np.flatnonzero(rm.interior_mask)
    bad = idx[margin[idx] < 0]
    worst = int(idx[np.argmin(margin[idx])]) if len(idx) else None
    return CheckResult(passed=len(bad) == 0, n_checked=len(idx),
                       n_violations=len(bad),
                       worst_margin=float(margin[idx].min()) if len(idx) else 0.0,
                       worst_node=worst,
                       detail={"nu": rm.nu, "tau": tau, "mass": rm.mass,
                               "violations": bad})


def _interface_nodes(mesh: Mesh, diff: np.ndarray, scale: float) -> np.ndarray:
    """Nodes whose element star contains a sign change of diff = u - v."""
    sgn = np.zeros(len(diff), dtype=np.int8)
    sgn[diff > 1e-14 * scale] = 1
    sgn[diff < -1e-14 * scale] = -1
    g = mesh.neighbors
    has_pos = (sgn == 1).astype(float)
    has_neg = (sgn == -1).astype(float)
    has_tie = (sgn == 0).astype(float)
    pos = g @ has_pos + has_pos
    neg = g @ has_neg + has_neg
    tie = g @ has_tie + has_tie
    return ((pos > 0) & (neg > 0)) | (tie > 0) & ((pos > 0) | (neg > 0))


def _element_flux(sysm: P1System, u: np.ndarray) -> np.ndarray:
    g = sysm.grad_u(u)
    mg = np.einsum("eij,ej->ei", sysm.m_el, g)
    q = np.einsum("ei,ei->e", mg, g)
    fac = np.where(q > 0, np.maximum(q, 1e-300) ** ((sysm.p - 2) / 2.0), 0.0)
    return (sysm.w * fac)[:, None] * mg


def glueing_check(u: DiscreteField, v: DiscreteField, op: OperatorDescriptor,
                  rho_u, rho_v) -> CheckResult:
    """Check that the nodal minimum of two supersolutions is a supersolution
    for the pointwise minimum density, up to the branch-mixing defect.

    On elements where the active branch switches between vertices the nodal
    min is not equal to either branch, and its residual at a star node i
    differs from the active branch's residual by exactly
    sum_T int_T (A(grad w) - A(grad u_b)) . grad phi_i over those elements.
    The check absorbs the assembled triangle-inequality bound of that term
    (slack_i, reported nodewise) plus 10 tau_i of solver tolerance; it fails
    precisely when an input is not a discrete supersolution to that accuracy.
    """
    mesh = u.mesh
    n = mesh.n_nodes
    ru = np.full(n, float(rho_u)) if np.isscalar(rho_u) else np.asarray(rho_u, float)
    rv = np.full(n, float(rho_v)) if np.isscalar(rho_v) else np.asarray(rho_v, float)
    wmin = DiscreteField(mesh, np.minimum(u.values, v.values))
    rho_min = np.minimum(ru, rv)
    scale = max(float(np.abs(u.values).max()), float(np.abs(v.values).max()), 1.0)
    diff = u.values - v.values
    iface = _interface_nodes(mesh, diff, scale)

    sysm = P1System(mesh, op)
    els = sysm.elements
    tie = 1e-14 * scale
    fw = _element_flux(sysm, wmin.values)
    dev_u = sysm.vol * np.linalg.norm(fw - _element_flux(sysm, u.values), axis=1)
    dev_v = sysm.vol * np.linalg.norm(fw - _element_flux(sysm, v.values), axis=1)
    impure_u = (diff[els] > tie).any(axis=1)
    impure_v = (diff[els] < -tie).any(axis=1)
    gnorm = np.linalg.norm(sysm.grads, axis=2)
    cu = np.where(impure_u, dev_u, 0.0)[:, None] * gnorm
    cv = np.where(impure_v, dev_v, 0.0)[:, None] * gnorm
    slack_u = np.bincount(els.ravel(), weights=cu.ravel(), minlength=n)
    slack_v = np.bincount(els.ravel(), weights=cv.ravel(), minlength=n)
    slack = np.where(diff < -tie, slack_u,
                     np.where(diff > tie, slack_v,
                              np.minimum(slack_u, slack_v)))

    res = supersolution_check(wmin, op, rho_min, extra_slack=slack, tau_scale=10.0)
    res.detail["interface_mask"] = iface
    res.detail["mixing_slack"] = slack
    res.detail["min_field"] = wmin
    return res


def comparison_check(u1: DiscreteField, u2: DiscreteField) -> CheckResult:
    """Nodal domination u1 <= u2 + 1e-8 (1 + |u2|_inf)."""
    tol = 1e-8 * (1.0 + float(np.abs(u2.values).max()))
    gap = u2.values - u1.values + tol
    bad = np.flatnonzero(gap < 0)
    return CheckResult(passed=len(bad) == 0, n_checked=len(gap),
                       n_violations=len(bad), worst_margin=float(gap.min()),
                       worst_node=int(np.argmin(gap)))


def harnack_diagnostic(u: DiscreteField, op: OperatorDescriptor, center,
                       radius: float, s: float, rho) -> dict:
    """Weak Harnack ratio (avg_B u^s dw)^(1/s) / (min_B u + F-) for a
    nonnegative supersolution; diagnostic only, no pass bound."""
    p = op.p
    if not 0 < s < p - 1 + 1e-12:
        raise BarrierkitError("harnack exponent must satisfy 0 < s <= p - 1")
    mesh = u.mesh
    c = np.atleast_1d(np.asarray(center, dtype=float))
    n = mesh.n_nodes
    rho = np.full(n, float(rho)) if np.isscalar(rho) else np.asarray(rho, float)
    d_nodes = np.linalg.norm(mesh.nodes - c, axis=1)
    in_b = d_nodes <= radius
    in_2b = d_nodes <= 2 * radius
    if not in_b.any():
        raise BarrierkitError("empty ball in harnack diagnostic")
    if np.any(u.values[in_2b] < -1e-12):
        raise BarrierkitError("harnack diagnostic requires u >= 0 on 2B")
    d_bary = np.linalg.norm(mesh.el_bary - c, axis=1)
    el = d_bary <= radius
    w = eval_weight(op.weight, mesh.el_bary[el])
    ubar = u.values[mesh.elements[el]].mean(axis=1)
    mass = float(np.sum(w * mesh.el_vol[el]))
    avg = (float(np.sum(w * mesh.el_vol[el] * np.maximum(ubar, 0.0) ** s)) / mass) ** (1.0 / s)
    neg_part = float(np.max(np.maximum(-rho[in_2b], 0.0))) if in_2b.any() else 0.0
    f_minus = (radius ** p * neg_part) ** (1.0 / (p - 1))
    m = float(u.values[in_b].min())
    ratio = avg / (m + f_minus) if (m + f_minus) > 0 else np.inf
    return {"ratio": ratio, "avg": avg, "min": m, "f_minus": f_minus,
            "s": s, "radius": radius}


def oscillation_probe(u: DiscreteField, xi, radius: float, theta: float) -> float:
    """sup over nodes of u on (theta B) divided by sup on B, with 0/0 -> 0."""
    c = np.atleast_1d(np.asarray(xi, dtype=float))
    d = np.linalg.norm(u.mesh.nodes - c, axis=1)
    big = d <= radius
    small = d <= theta * radius
    if not big.any() or not small.any():
        raise BarrierkitError("oscillation probe ball contains no node")
    sup_b = float(np.maximum(u.values[big], 0.0).max())
    sup_t = float(np.maximum(u.values[small], 0.0).max())
    if sup_b == 0.0:
        return 0.0
    return sup_t / sup_b
