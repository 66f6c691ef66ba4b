"""Admissible weights and the weighted quasilinear flux map.

Weights are positive densities on the ambient space: constants, powers of the
distance to a reference point, or powers of the distance to the selected
boundary portion Gamma.  The flux map is

    A(x, z) = w(x) * (M(x) z . z)^((p-2)/2) * M(x) z

with a symmetric positive anisotropy M whose eigenvalues lie in [1, Lam].
It satisfies coercivity A(x,z).z >= w |z|^p, growth |A(x,z)| <= L w |z|^(p-1)
with L = Lam^(p/2), strict monotonicity in z, and degree p-1 homogeneity.
axiom_sampler spot checks all four properties on seeded samples and reports
worst margins; measure_doubling estimates the doubling constant of w dx by
quadrature over sampled balls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import WeightError, GeometryError
from .geometry import Mesh, dist_to_segments, dist_to_points, point_in_domain

_TINY = 1e-300


@dataclass(frozen=True)
class WeightDescriptor:
    """A weight w(x) > 0 on the ambient space.

    kind: "constant" | "point-power" | "distance-power".
    point-power is |x - center|^mu, admissible (Muckenhoupt class for the
    p-Laplacian) iff -n < mu < n (p - 1).  distance-power is dist(x, Gamma)^mu
    with the Lipschitz-boundary admissible range -1 < mu < p - 1.
    """

    kind: str
    p: float
    dim: int
    mu: float = 0.0
    value: float = 1.0
    center: np.ndarray | None = None
    gamma: tuple | None = None  # ("points"|"segments", array)

    @property
    def admissible(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "point-power":
            n = self.dim
            return -n < self.mu < n * (self.p - 1)
        return -1.0 < self.mu < self.p - 1.0


def constant_weight(p: float, dim: int, value: float = 1.0) -> WeightDescriptor:
    if value <= 0:
        raise WeightError("constant weight must be positive")
    return WeightDescriptor(kind="constant", p=p, dim=dim, value=value)


def point_power_weight(p: float, dim: int, mu: float, center) -> WeightDescriptor:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    return WeightDescriptor(kind="point-power", p=p, dim=dim, mu=mu, center=c)


def boundary_power_weight(p: float, mesh_or_gamma, mu: float) -> WeightDescriptor:
    """Weight dist(x, Gamma)^mu; Gamma geometry is taken from the mesh."""
    if isinstance(mesh_or_gamma, Mesh):
        gamma = mesh_or_gamma.gamma_entities
        dim = mesh_or_gamma.dim
    else:
        gamma = mesh_or_gamma
        dim = 2 if gamma[0] == "segments" else 1
    return WeightDescriptor(kind="distance-power", p=p, dim=dim, mu=mu,
                            gamma=gamma)


def eval_weight(w: WeightDescriptor, pts: np.ndarray) -> np.ndarray:
    """Vectorized weight values; raises on evaluation at a singular point."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if w.kind == "constant":
        return np.full(len(pts), w.value)
    if w.kind == "point-power":
        d = np.linalg.norm(pts - w.center, axis=1)
    else:
        kind, data = w.gamma
        d = dist_to_points(pts, data) if kind == "points" else dist_to_segments(pts, data)
    if w.mu == 0.0:
        return np.ones(len(pts))
    if w.mu < 0 and np.any(d <= 0.0):
        raise WeightError("negative-power weight evaluated at its singular set")
    return d ** w.mu


@dataclass(frozen=True)
class OperatorDescriptor:
    """Flux map A(x,z) for the weighted (p, w)-Laplacian with anisotropy M."""

    p: float
    weight: WeightDescriptor
    aniso: np.ndarray | None = None
    lam: float = 1.0

    @property
    def dim(self) -> int:
        return self.weight.dim

    @property
    def growth_constant(self) -> float:
        return self.lam ** (self.p / 2.0)

    def m_at(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d = self.dim
        if self.aniso is None:
            out = np.zeros((len(pts), d, d))
            out[:, range(d), range(d)] = 1.0
            return out
        return np.broadcast_to(self.aniso, (len(pts), d, d))


def make_operator(p: float, weight: WeightDescriptor, aniso=None,
                  validate: bool = True) -> OperatorDescriptor:
    if not p > 1:
        raise WeightError("exponent p must exceed 1")
    if aniso is None:
        return OperatorDescriptor(p=p, weight=weight, aniso=None, lam=1.0)
    m = np.asarray(aniso, dtype=float)
    if m.shape != (weight.dim, weight.dim) or not np.allclose(m, m.T):
        raise WeightError("anisotropy must be a symmetric dim x dim matrix")
    eigs = np.linalg.eigvalsh(m)
    if validate and eigs[0] < 1.0 - 1e-12:
        raise WeightError(f"anisotropy eigenvalue {eigs[0]:.6g} below 1")
    return OperatorDescriptor(p=p, weight=weight, aniso=m, lam=float(eigs[-1]))


def eval_operator(a: OperatorDescriptor, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """A(x, z) at a single point x; z may be one vector or a batch of rows."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = np.atleast_2d(z)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    w = eval_weight(a.weight, x)[0]
    m = a.m_at(x)[0]
    mz = zz @ m.T
    g = np.einsum("nd,nd->n", mz, zz)
    fac = np.where(g > 0, np.maximum(g, _TINY) ** ((a.p - 2) / 2.0), 0.0)
    out = w * fac[:, None] * mz
    return out[0] if single else out


# ---------------------------------------------------------------------------
# axiom spot checks


@dataclass
class AxiomReport:
    passed: bool
    n_samples: int
    margins: dict
    witness: dict | None = None


def _sample_points(rng, a: OperatorDescriptor, mesh: Mesh | None, n: int):
    if mesh is not None:
        el = rng.integers(0, len(mesh.elements), size=n)
        k = mesh.elements.shape[1]
        lam = rng.dirichlet(np.ones(k), size=n)
        return np.einsum("nk,nkd->nd", lam, mesh.nodes[mesh.elements[el]])
    return rng.uniform(0.05, 0.95, size=(n, a.dim))


def axiom_sampler(a: OperatorDescriptor, n_samples: int, seed: int,
                  mesh: Mesh | None = None) -> AxiomReport:
    """Check coercivity, growth, strict monotonicity, and homogeneity on
    seeded random samples; returns worst margins and a witness on failure.

    Monotonicity is only sampled at pairs with |z1 - z2| >= 1e-6 and asserted
    up to a 1e-12 slack; homogeneity is checked to 1e-10 relative error.
    """
    rng = np.random.default_rng(seed)
    pts = _sample_points(rng, a, mesh, n_samples)
    w = eval_weight(a.weight, pts)
    m = a.m_at(pts)
    scale = 10.0 ** rng.uniform(-3, 3, size=n_samples)
    z = rng.normal(size=(n_samples, a.dim)) * scale[:, None]
    z2 = rng.normal(size=(n_samples, a.dim)) * scale[:, None]
    close = np.linalg.norm(z - z2, axis=1) < 1e-6
    z2[close] += 2e-6

    def flux(zz):
        mz = np.einsum("nij,nj->ni", m, zz)
        g = np.einsum("ni,ni->n", mz, zz)
        fac = np.where(g > 0, np.maximum(g, _TINY) ** ((a.p - 2) / 2.0), 0.0)
        return w[:, None] * fac[:, None] * mz

    az = flux(z)
    zn = np.linalg.norm(z, axis=1)
    coer = np.einsum("ni,ni->n", az, z) - w * zn ** a.p
    coer_rel = coer / np.maximum(w * zn ** a.p, _TINY)
    grow = a.growth_constant * w * zn ** (a.p - 1) - np.linalg.norm(az, axis=1)
    grow_rel = grow / np.maximum(w * zn ** (a.p - 1), _TINY)
    mono = np.einsum("ni,ni->n", az - flux(z2), z - z2)
    t = rng.uniform(-3.0, 3.0, size=n_samples)
    t[np.abs(t) < 0.1] = 0.5
    hom_ref = t * np.abs(t) ** (a.p - 2)
    hom_err = np.linalg.norm(flux(z * t[:, None]) - hom_ref[:, None] * az, axis=1)
    hom_rel = hom_err / np.maximum(np.abs(hom_ref) * np.linalg.norm(az, axis=1), _TINY)

    margins = {
        "coercivity": float(coer_rel.min()),
        "growth": float(grow_rel.min()),
        "monotonicity": float(mono.min()),
        "homogeneity": float(hom_rel.max()),
    }
    checks = [
        ("coercivity", coer_rel >= -1e-12),
        ("growth", grow_rel >= -1e-12),
        ("monotonicity", mono > -1e-12),
        ("homogeneity", hom_rel <= 1e-10),
    ]
    witness = None
    passed = True
    for name, ok in checks:
        if not np.all(ok):
            passed = False
            if witness is None:
                i = int(np.argmin(ok))
                witness = {"axiom": name, "x": pts[i].tolist(),
                           "z": z[i].tolist(), "z2": z2[i].tolist(),
                           "t": float(t[i])}
    return AxiomReport(passed=passed, n_samples=n_samples, margins=margins,
                       witness=witness)


# ---------------------------------------------------------------------------
# doubling diagnostics


@dataclass
class WeightDiagnostics:
    """Measured doubling ratios; Poincare and Harnack inputs are recorded as
    assumptions, not estimated."""

    doubling_ratios: np.ndarray
    c_d_hat: float
    balls: list
    assumed_poincare: float | None = None
    assumed_harnack_chi: float | None = None


def _tri_area(verts) -> float:
    u, v = verts[1] - verts[0], verts[2] - verts[0]
    return 0.5 * abs(u[0] * v[1] - u[1] * v[0])


def _ball_mass_recursive(verts, w: WeightDescriptor, center, r, depth):
    """w-mass of (triangle intersect ball) by adaptive splitting."""
    d = np.linalg.norm(verts - center, axis=1)
    if np.all(d <= r):
        return _tri_area(verts) * eval_weight(w, verts.mean(axis=0)[None, :])[0]
    # quick reject: ball and triangle cannot meet
    if d.min() > r and dist_to_segments(np.asarray([center]),
                                        np.array([[verts[0], verts[1]],
                                                  [verts[1], verts[2]],
                                                  [verts[2], verts[0]]]))[0] > r:
        return 0.0
    if depth <= 0:
        area = _tri_area(verts)
        bary = verts.mean(axis=0)
        if np.linalg.norm(bary - center) <= r:
            return area * eval_weight(w, bary[None, :])[0]
        return 0.0
    m01 = 0.5 * (verts[0] + verts[1])
    m12 = 0.5 * (verts[1] + verts[2])
    m20 = 0.5 * (verts[2] + verts[0])
    total = 0.0
    for sub in ((verts[0], m01, m20), (m01, verts[1], m12),
                (m20, m12, verts[2]), (m01, m12, m20)):
        total += _ball_mass_recursive(np.asarray(sub), w, center, r, depth - 1)
    return total


def ball_weight_mass(mesh: Mesh, w: WeightDescriptor, center, r: float,
                     depth: int = 7) -> float:
    """Quadrature of the w-measure of B(center, r) over mesh elements."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if mesh.dim == 1:
        total = 0.0
        for el in mesh.elements:
            a, b = sorted(mesh.nodes[el][:, 0])
            lo, hi = max(a, center[0] - r), min(b, center[0] + r)
            if hi > lo:
                total += (hi - lo) * eval_weight(w, np.array([[0.5 * (lo + hi)]]))[0]
        return total
    d_bary = np.linalg.norm(mesh.el_bary - center, axis=1)
    rough = mesh.el_vol.max() ** 0.5 * 2
    total = 0.0
    near = d_bary <= r + 2 * rough
    for e in np.flatnonzero(near):
        total += _ball_mass_recursive(mesh.nodes[mesh.elements[e]], w, center,
                                      r, depth)
    return total


def measure_doubling(w: WeightDescriptor, mesh: Mesh, ball_samples) -> WeightDiagnostics:
    """Estimate the doubling constant over explicit (center, radius) samples.

    Each sampled ball must satisfy 2B inside the domain; violations raise.
    """
    ratios = []
    for center, r in ball_samples:
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if mesh.dim == 2:
            from .geometry import boundary_distance

            ok = point_in_domain(mesh.domain, c[None, :])[0]
            ok = ok and boundary_distance(mesh, c[None, :])[0] > 2 * r * (1 - 1e-12)
        else:
            a, b = mesh.domain.endpoints
            ok = (c[0] - 2 * r > a - 1e-12) and (c[0] + 2 * r < b + 1e-12)
        if not ok:
            raise GeometryError(f"sampled ball at {c} with 2r={2*r} leaves the domain")
        m1 = ball_weight_mass(mesh, w, c, r)
        m2 = ball_weight_mass(mesh, w, c, 2 * r)
        if m1 <= 0:
            raise WeightError("sampled ball has zero discrete mass")
        ratios.append(m2 / m1)
    ratios = np.asarray(ratios)
    return WeightDiagnostics(doubling_ratios=ratios, c_d_hat=float(ratios.max()),
                             balls=list(ball_samples))
