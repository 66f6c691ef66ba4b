"""Dirichlet problems whose source blows up at the distinguished boundary.

Densities of the form rho = sign * K * delta^(beta*(p-1) - p) are not
integrable against nodal lumping: the exponent is negative and the blowup
sits exactly where the hat functions of boundary-adjacent nodes live.  The
load assembler here pairs the density with each hat function exactly,
replacing the true distance by its P1 interpolant delta_h.  On every element
the sub-level sets of delta_h are straight cuts, the level-set measure is a
polynomial in the level t, and the integral of t^q times a polynomial has a
closed form, so truncating the density to {delta_h >= r} amounts to clipping
integration bounds.  No quadrature error enters at any cutoff.

solve_singular drives the exhaustion r_m = r0 * base^-m, warm starting each
solve from the last iterate and stopping when consecutive iterates agree on
the probe region {delta >= r0} to the requested tolerance.  Every iterate is
checked against the transformed barrier majorant; escapes abort the run.
Exponents too singular for the mesh pairing (free-node loads that diverge as
r -> 0) fail honestly through the majorant check or the cutoff budget.
"""

from dataclasses import dataclass

import numpy as np

from .barrier import BarrierLadder, transform_barrier
from .errors import MajorantError, SolverError
from .geometry import Mesh, distance_field
from .solver import DiscreteField, solve_dirichlet
from .weights import OperatorDescriptor, eval_weight


@dataclass(frozen=True)
class SingularSource:
    """Boundary-concentrated power source, density sign * K * delta^q.

    The exponent q = beta*(p-1) - p is tied to the operator, so it is derived
    on demand rather than stored; beta is the decay rate the solution is
    expected to inherit.
    """

    K: float
    beta: float
    sign: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.K) and self.K > 0):
            raise ValueError(f"K must be positive and finite, got {self.K}")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    def exponent(self, p: float) -> float:
        return self.beta * (p - 1.0) - p

    def density(self, delta: np.ndarray, p: float) -> np.ndarray:
        """Nodal density values; infinite where delta vanishes."""
        q = self.exponent(p)
        out = np.full(np.shape(delta), np.inf)
        pos = np.asarray(delta) > 0
        out[pos] = np.asarray(delta)[pos] ** q
        return self.sign * self.K * out


def _tpow_int(a, b, e):
    # integral of t**e over [a, b], elementwise; callers guarantee 0 < a <= b
    if abs(e + 1.0) < 1e-12:
        return np.log(b / a)
    s = e + 1.0
    return (b ** s - a ** s) / s


class SingularLoad:
    """Exact hat pairings of a truncated power density on one mesh.

    at_cutoff(r) integrates sign * K * delta_h^q * w over {delta_h >= r}
    against every hat function, with the weight frozen at element barycenters
    so the measure bookkeeping matches the rest of the discretization.  Rows
    at Dirichlet nodes are zeroed: they never enter a solve, and their raw
    values diverge as r -> 0.
    """

    def __init__(self, mesh: Mesh, op: OperatorDescriptor, src: SingularSource,
                 delta: np.ndarray | None = None):
        self.mesh = mesh
        self.src = src
        self.q = src.exponent(op.p)
        self.delta = distance_field(mesh).values if delta is None else np.asarray(delta, dtype=float)
        els = mesh.elements
        dv = self.delta[els]
        order = np.argsort(dv, axis=1)
        self.sorted_d = np.take_along_axis(dv, order, axis=1)
        # node id receiving the contribution of each sorted slot
        self.cols = np.take_along_axis(els, order, axis=1)
        w = eval_weight(op.weight, mesh.el_bary)
        self.amp = src.sign * src.K * w * mesh.el_vol

    def at_cutoff(self, r: float) -> np.ndarray:
        if not (r > 0):
            raise ValueError(f"cutoff radius must be positive, got {r}")
        q = self.q
        ds = self.sorted_d
        nverts = ds.shape[1]
        part = np.zeros_like(ds)

        with np.errstate(over="ignore"):
            if nverts == 3:
                d1, d2, d3 = ds[:, 0], ds[:, 1], ds[:, 2]
                w12, w13, w23 = d2 - d1, d3 - d1, d3 - d2
                inv12 = np.zeros_like(w12)
                inv13 = np.zeros_like(w13)
                inv23 = np.zeros_like(w23)
                np.divide(1.0, w12, out=inv12, where=w12 > 0)
                np.divide(1.0, w13, out=inv13, where=w13 > 0)
                np.divide(1.0, w23, out=inv23, where=w23 > 0)

                # rising piece t in [d1, d2]: level sets cut off the lowest
                # vertex, hats are linear in x = t - d1 times the cut length
                a = np.maximum(d1, r)
                b = d2
                empty = a >= b
                a = np.where(empty, 1.0, a)
                b = np.where(empty, 1.0, b)
                i0 = _tpow_int(a, b, q)
                i1 = _tpow_int(a, b, q + 1.0)
                i2 = _tpow_int(a, b, q + 2.0)
                c = 2.0 * inv12 * inv13
                for slot, (u, v) in enumerate((
                        (c, -0.5 * c * (inv12 + inv13)),
                        (np.zeros_like(c), 0.5 * c * inv12),
                        (np.zeros_like(c), 0.5 * c * inv13))):
                    g0 = -u * d1 + v * d1 * d1
                    g1 = u - 2.0 * v * d1
                    part[:, slot] += g0 * i0 + g1 * i1 + v * i2

                # falling piece t in [d2, d3], mirrored in y = d3 - t
                a = np.maximum(d2, r)
                b = d3
                empty = a >= b
                a = np.where(empty, 1.0, a)
                b = np.where(empty, 1.0, b)
                i0 = _tpow_int(a, b, q)
                i1 = _tpow_int(a, b, q + 1.0)
                i2 = _tpow_int(a, b, q + 2.0)
                e = 2.0 * inv13 * inv23
                for slot, (u, v) in enumerate((
                        (np.zeros_like(e), 0.5 * e * inv13),
                        (np.zeros_like(e), 0.5 * e * inv23),
                        (e, -0.5 * e * (inv13 + inv23)))):
                    g0 = u * d3 + v * d3 * d3
                    g1 = -u - 2.0 * v * d3
                    part[:, slot] += g0 * i0 + g1 * i1 + v * i2

                flat = w13 == 0.0
            else:
                d1, d2 = ds[:, 0], ds[:, 1]
                w12 = d2 - d1
                inv12 = np.zeros_like(w12)
                np.divide(1.0, w12, out=inv12, where=w12 > 0)
                a = np.maximum(d1, r)
                b = d2
                empty = a >= b
                a = np.where(empty, 1.0, a)
                b = np.where(empty, 1.0, b)
                i0 = _tpow_int(a, b, q)
                i1 = _tpow_int(a, b, q + 1.0)
                for slot, (u, v) in enumerate((
                        (inv12, -inv12 * inv12),
                        (np.zeros_like(inv12), inv12 * inv12))):
                    part[:, slot] += (u - v * d1) * i0 + v * i1
                flat = w12 == 0.0

            # constant-delta elements: the density is a plain constant there
            idx = np.flatnonzero(flat & (ds[:, 0] >= r) & (ds[:, 0] > 0))
            if idx.size:
                part[idx] = (ds[idx, 0] ** q / nverts)[:, None]

        part *= self.amp[:, None]
        f = np.bincount(self.cols.ravel(), weights=part.ravel(),
                        minlength=self.mesh.n_nodes)
        f[~self.mesh.interior_mask] = 0.0
        if not np.all(np.isfinite(f)):
            raise SolverError(f"truncated load overflowed at cutoff {r:.3e}")
        return f


@dataclass(frozen=True)
class TruncationRun:
    """One converged cutoff exhaustion and its certificates."""

    mesh: Mesh
    source: SingularSource
    base: float
    r0: float
    probe_radius: float
    stop_tol: float
    delta: np.ndarray
    probe_mask: np.ndarray
    cutoffs: np.ndarray
    sup_deltas: np.ndarray
    energies: np.ndarray
    energy_tail_ratio: float
    newton_iterations: list
    majorant: DiscreteField
    majorant_report: dict
    majorant_excess: np.ndarray
    min_increment: float
    u: DiscreteField
    converged: bool
    iterates: list | None

    @property
    def m_stop(self) -> int:
        return len(self.cutoffs) - 1


def solve_singular(bl: BarrierLadder, op: OperatorDescriptor,
                   src: SingularSource, stop_tol: float = 1e-6,
                   max_cutoffs: int = 1000, base: float = 2.0,
                   keep_iterates: bool = False) -> TruncationRun:
    """Exhaust the singular source by shrinking cutoffs until iterates settle.

    Cutoff m truncates the density to {delta_h >= r0 * base^-m} with r0 the
    finest ladder radius; each truncated problem is solved with homogeneous
    boundary values, warm started from the previous iterate.  Stops when the
    sup difference of consecutive iterates over the probe region
    {delta >= r0} drops below stop_tol * (1 + sup |u|).  Every iterate must
    stay below the transformed barrier majorant (slack 1e-6 * (1 + sup v)),
    and iterates must move monotonically in the source direction at probe
    nodes (slack 1e-8); violations raise.  Exhausting max_cutoffs without
    meeting the stop rule raises SolverError, which is the expected honest
    outcome for exponents whose hat pairings diverge on this mesh.
    """
    if base <= 1.0:
        raise ValueError(f"cutoff base must exceed 1, got {base}")
    mesh = bl.mesh
    vfld, vrep = transform_barrier(bl, op, src.beta, K=src.K)
    if not vrep["passed"]:
        raise MajorantError("transformed barrier failed certification; "
                            "no usable majorant for this source")
    v = vfld.values
    vtol = 1e-6 * (1.0 + float(v.max()))
    r0 = float(bl.ladder.radius(bl.ladder.k_hi))
    delta = bl.delta
    # stop metric lives on free nodes of {delta >= r0}; coarse ladders can
    # push r0 past every free node, in which case the next ladder radius
    # serves instead.  Dirichlet nodes are pinned at zero and see nothing.
    r_probe = r0
    probe = (delta >= r_probe) & mesh.interior_mask
    if not probe.any():
        r_probe = float(bl.ladder.radius(bl.ladder.k_hi + 1))
        probe = (delta >= r_probe) & mesh.interior_mask
    if not probe.any():
        raise ValueError("probe region {delta >= r0} is empty")

    loader = SingularLoad(mesh, op, src, delta=delta)
    # energy is tracked over elements fully inside the probe region
    pel = np.flatnonzero(probe[mesh.elements].all(axis=1))
    grads_p = mesh.grads[pel]
    els_p = mesh.elements[pel]
    m_p = op.m_at(mesh.el_bary[pel])
    wv_p = eval_weight(op.weight, mesh.el_bary[pel]) * mesh.el_vol[pel]

    def probe_energy(uv):
        if pel.size == 0:
            return 0.0
        g = np.einsum("eki,ek->ei", grads_p, uv[els_p])
        qd = np.einsum("ei,ei->e", np.einsum("eij,ej->ei", m_p, g), g)
        return float(np.sum(wv_p * qd ** (op.p / 2.0)))

    cutoffs, sup_deltas, energies, newtons, excesses = [], [], [], [], []
    iterates = [] if keep_iterates else None
    u_prev = None
    min_inc = np.inf
    converged = False
    for m in range(max_cutoffs + 1):
        r = r0 * base ** (-float(m))
        f = loader.at_cutoff(r)
        fld, info = solve_dirichlet(mesh, op, 0.0, 0.0, u_init=u_prev,
                                    load=f, return_info=True)
        u = fld.values
        cutoffs.append(r)
        newtons.append(info.newton_iterations)
        energies.append(probe_energy(u))
        if iterates is not None:
            iterates.append(fld)
        excess = float(np.max(np.abs(u) - v))
        excesses.append(excess)
        if excess > vtol:
            raise MajorantError(
                f"iterate {m} escaped the barrier majorant by {excess:.3e} "
                f"(allowed {vtol:.3e})")
        sup_u = float(np.abs(u[probe]).max())
        if u_prev is not None:
            inc = src.sign * (u[probe] - u_prev[probe])
            worst = float(inc.min())
            min_inc = min(min_inc, worst)
            if worst < -1e-8 * (1.0 + sup_u):
                raise SolverError(
                    f"iterate {m} moved against the source direction by "
                    f"{-worst:.3e} at a probe node")
            d_sup = float(np.abs(inc).max())
            sup_deltas.append(d_sup)
            sup_prev = float(np.abs(u_prev[probe]).max())
            # the stop rule is vacuous while the cutoff still truncates
            # inside the probe region itself
            if r <= r_probe and d_sup <= stop_tol * (1.0 + sup_prev):
                converged = True
                u_prev = u
                break
        u_prev = u

    if not converged:
        raise SolverError(
            f"cutoff exhaustion did not settle within {max_cutoffs} "
            f"refinements; last probe increment {sup_deltas[-1]:.3e}")

    en = np.asarray(energies)
    tail = en[len(en) // 2:]
    ratios = tail[1:][tail[:-1] > 0] / tail[:-1][tail[:-1] > 0]
    tail_ratio = float(ratios.max()) if ratios.size else 1.0

    return TruncationRun(
        mesh=mesh, source=src, base=float(base), r0=r0, probe_radius=r_probe,
        stop_tol=stop_tol,
        delta=delta, probe_mask=probe, cutoffs=np.asarray(cutoffs),
        sup_deltas=np.asarray(sup_deltas), energies=en,
        energy_tail_ratio=tail_ratio, newton_iterations=newtons,
        majorant=vfld, majorant_report=vrep,
        majorant_excess=np.asarray(excesses), min_increment=float(min_inc),
        u=DiscreteField(mesh, u_prev), converged=True, iterates=iterates)


def verify_theorem_bound(run: TruncationRun, constants, src: SingularSource,
                         detail: bool = False) -> dict:
    """Check the decay bound |u| <= C * K^(1/(p-1)) * delta^beta.

    C = c_h^(1-p) * 30^(beta/alpha) * (alpha/beta) comes from the calibrated
    constants alone.  The bound is tested at every node of the resolved
    region {delta > (theta/2) * r0}; nodes closer to the distinguished piece
    are compared against the bound frozen at r0, which dominates there.
    Violations are reported, not raised.  detail=True adds the per-node
    arrays (mask, bound, utilization) for table emission.
    """
    p = constants.p
    beta = src.beta
    c_big = constants.c_h ** (1.0 - p) * 30.0 ** (beta / constants.alpha) \
        * (constants.alpha / beta)
    amp = c_big * src.K ** (1.0 / (p - 1.0))
    d = run.delta
    uv = np.abs(run.u.values)
    resolved = d > 0.5 * constants.theta * run.r0
    bound = amp * d[resolved] ** beta
    util = uv[resolved] / bound
    worst = int(np.argmax(util))
    near = ~resolved
    near_bound = amp * run.r0 ** beta
    near_max = float(uv[near].max()) if near.any() else 0.0
    out = {
        "C": float(c_big),
        "amplitude": float(amp),
        "n_checked": int(resolved.sum()),
        "max_utilization": float(util.max()),
        "worst_node": int(np.flatnonzero(resolved)[worst]),
        "passed": bool(util.max() <= 1.0 + 1e-9),
        "near_gamma_max": near_max,
        "near_gamma_bound": float(near_bound),
        "near_gamma_ok": bool(near_max <= near_bound * (1.0 + 1e-9)),
    }
    if detail:
        out["detail"] = {"resolved_mask": resolved, "bound": bound,
                         "utilization": util}
    return out


def uniqueness_probe(run_a: TruncationRun, run_b: TruncationRun) -> dict:
    """Compare two converged exhaustions of the same problem.

    Different cutoff sequences must land on the same discrete limit; nodal
    disagreement beyond 10 * stop_tol * (1 + sup |u|) flags the pair.
    """
    if run_a.mesh.n_nodes != run_b.mesh.n_nodes:
        raise ValueError("runs live on different meshes")
    ua, ub = run_a.u.values, run_b.u.values
    sup = max(float(np.abs(ua).max()), float(np.abs(ub).max()))
    tol = 10.0 * max(run_a.stop_tol, run_b.stop_tol) * (1.0 + sup)
    diff = float(np.abs(ua - ub).max())
    return {
        "passed": bool(diff <= tol),
        "max_diff": diff,
        "tol": tol,
        "bases": (run_a.base, run_b.base),
    }
