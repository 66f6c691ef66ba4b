"""Domains, meshes, boundary distance fields, and multi-scale boundary coverings.

Domains are segments in 1D and polygonal regions in 2D (axis-aligned polygons,
regular-polygon disk approximations, and a square with an interior slit).  A
distinguished closed boundary portion Gamma is selected by boundary-entity
index, or "all" for the full boundary.

Meshes are piecewise-linear simplicial complexes.  Axis-aligned polygons are
meshed by splitting grid cells into right triangles, which keeps every angle
at most 90 degrees; disk approximations use concentric rings triangulated by
Delaunay.  A flag records whether the nonobtuse property holds, since the
discrete comparison and minimum principles used elsewhere rely on it.

The scale ladder carries geometrically shrinking radii R_k, boundary layers
E_k = {dist to Gamma <= R_k}, and greedy farthest-point nets on Gamma whose
balls of radius theta*R_k cover the next layer down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .errors import GeometryError, MeshingError

_EPS = 1e-9


# ---------------------------------------------------------------------------
# domain specifications


@dataclass(frozen=True)
class DomainSpec:
    """Geometric description of the computational domain.

    kind is one of "interval", "polygon", "disk-approximation", "l-shape",
    "slit-square".  Polygonal kinds carry CCW vertices; the slit kind adds a
    single interior segment whose points belong to the complement of the
    domain.  gamma_selector picks boundary entities by index ("all" selects
    the whole boundary).
    """

    kind: str
    vertices: np.ndarray | None = None
    endpoints: tuple[float, float] | None = None
    slit: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None
    gamma_selector: tuple[int, ...] | str = "all"

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    def boundary_entities(self):
        """List of boundary entities: points in 1D, segments in 2D.

        Entity i of a polygon is the edge from vertex i to vertex i+1; the
        slit, when present, is appended as one extra entity.
        """
        if self.kind == "interval":
            a, b = self.endpoints
            return [np.array([a]), np.array([b])]
        ents = []
        v = self.vertices
        for i in range(len(v)):
            ents.append(np.array([v[i], v[(i + 1) % len(v)]]))
        if self.slit is not None:
            ents.append(np.asarray(self.slit, dtype=float))
        return ents

    def gamma_entities(self):
        ents = self.boundary_entities()
        if self.gamma_selector == "all":
            idx = tuple(range(len(ents)))
        else:
            idx = tuple(self.gamma_selector)
            if len(idx) == 0:
                raise GeometryError("gamma selector is empty")
            for i in idx:
                if not 0 <= i < len(ents):
                    raise GeometryError(f"gamma selector index {i} out of range")
        return idx, [ents[i] for i in idx]

    def diameter(self) -> float:
        if self.kind == "interval":
            a, b = self.endpoints
            return abs(b - a)
        v = self.vertices
        d2 = np.sum((v[:, None, :] - v[None, :, :]) ** 2, axis=-1)
        return float(np.sqrt(d2.max()))


def _validate_polygon(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise GeometryError("polygon needs at least 3 two-dimensional vertices")
    x, y = v[:, 0], v[:, 1]
    area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if abs(area2) < 1e-14:
        raise GeometryError("degenerate polygon (zero area)")
    if area2 < 0:
        v = v[::-1].copy()
    return v


def interval_domain(a: float = 0.0, b: float = 1.0, gamma="all") -> DomainSpec:
    if not b > a:
        raise GeometryError("interval endpoints must satisfy a < b")
    return DomainSpec(kind="interval", endpoints=(float(a), float(b)),
                      gamma_selector=gamma)


def polygon_domain(vertices, gamma="all", kind="polygon") -> DomainSpec:
    return DomainSpec(kind=kind, vertices=_validate_polygon(vertices),
                      gamma_selector=gamma)


def unit_square(gamma="all") -> DomainSpec:
    return polygon_domain([(0, 0), (1, 0), (1, 1), (0, 1)], gamma=gamma)


def l_shape(gamma="all") -> DomainSpec:
    verts = [(0, 0), (1, 0), (1, 0.5), (0.5, 0.5), (0.5, 1), (0, 1)]
    return polygon_domain(verts, gamma=gamma, kind="l-shape")


def slit_square(gamma=(4,)) -> DomainSpec:
    """Unit square with a vertical interior slit; entity 4 is the slit."""
    verts = _validate_polygon([(0, 0), (1, 0), (1, 1), (0, 1)])
    slit = np.array([[0.5, 0.25], [0.5, 0.75]])
    return DomainSpec(kind="slit-square", vertices=verts, slit=slit,
                      gamma_selector=gamma)


def disk_domain(center=(0.0, 0.0), radius: float = 1.0, n_boundary: int = 256,
                gamma="all") -> DomainSpec:
    if radius <= 0:
        raise GeometryError("disk radius must be positive")
    c = np.asarray(center, dtype=float)
    t = 2 * np.pi * np.arange(n_boundary) / n_boundary
    verts = c + radius * np.stack([np.cos(t), np.sin(t)], axis=1)
    return DomainSpec(kind="disk-approximation", vertices=verts, center=c,
                      radius=float(radius), gamma_selector=gamma)


# ---------------------------------------------------------------------------
# elementary geometric predicates


def dist_to_segments(pts: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Exact distance from each point to the nearest of the given segments.

    pts has shape (N, 2); segs has shape (G, 2, 2).  Chunked over points so
    memory stays bounded for large meshes.
    """
    pts = np.atleast_2d(pts)
    a = segs[:, 0, :]
    ab = segs[:, 1, :] - a
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    out = np.empty(len(pts))
    for lo in range(0, len(pts), 2048):
        p = pts[lo:lo + 2048]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("ngd,gd->ng", ap, ab) / denom, 0.0, 1.0)
        proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        d = np.linalg.norm(p[:, None, :] - proj, axis=2)
        out[lo:lo + 2048] = d.min(axis=1)
    return out


def dist_to_points(pts: np.ndarray, qs: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(pts)
    qs = np.atleast_2d(qs)
    d = np.linalg.norm(pts[:, None, :] - qs[None, :, :], axis=2)
    return d.min(axis=1)


def _points_in_polygon(pts: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Crossing-number test, True for points strictly or weakly inside."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        cond = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xin = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        np.logical_xor(inside, cond & (x < xin), out=inside)
    return inside


def boundary_segments(domain: DomainSpec) -> np.ndarray:
    ents = domain.boundary_entities()
    return np.stack([e for e in ents if e.ndim == 2], axis=0)


def point_in_domain(domain: DomainSpec, pts: np.ndarray, tol: float = _EPS) -> np.ndarray:
    """True where a point lies in the open domain (boundary excluded)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if domain.kind == "interval":
        a, b = domain.endpoints
        x = pts[:, 0]
        return (x > a + tol) & (x < b - tol)
    if domain.kind == "disk-approximation":
        r = np.linalg.norm(pts - domain.center, axis=1)
        return r < domain.radius - tol
    inside = _points_in_polygon(pts, domain.vertices)
    near = dist_to_segments(pts, boundary_segments(domain)) <= tol
    return inside & ~near


# ---------------------------------------------------------------------------
# mesh container


@dataclass(frozen=True)
class Mesh:
    """Simplicial mesh with boundary bookkeeping.

    Arrays are treated as immutable after construction; parallel callers must
    not mutate them.  grads[e, i] is the gradient of the hat function of local
    vertex i on element e; el_vol and el_bary are element measures and
    barycenters.  boundary_facets/boundary_tags describe the topological
    boundary plus any slit facets; gamma_mask marks nodes on the selected
    Gamma, and gamma_entities carries its points (1D) or segments (2D) for
    exact distance queries.
    """

    dim: int
    nodes: np.ndarray
    elements: np.ndarray
    el_vol: np.ndarray
    el_bary: np.ndarray
    grads: np.ndarray
    boundary_facets: np.ndarray
    boundary_tags: np.ndarray
    boundary_mask: np.ndarray
    gamma_mask: np.ndarray
    gamma_entities: tuple
    gamma_edge_ids: tuple
    h: float
    nonobtuse: bool
    domain: DomainSpec | None
    neighbors: object = field(repr=False, default=None)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    def node_neighbors(self, i: int) -> np.ndarray:
        g = self.neighbors
        return g.indices[g.indptr[i]:g.indptr[i + 1]]


def _element_geometry(nodes, elements, dim):
    if dim == 1:
        p = nodes[elements]
        length = np.abs(p[:, 1, 0] - p[:, 0, 0])
        vol = length
        bary = p.mean(axis=1)
        sign = np.sign(p[:, 1, 0] - p[:, 0, 0])
        grads = np.empty((len(elements), 2, 1))
        grads[:, 0, 0] = -sign / length
        grads[:, 1, 0] = sign / length
        return vol, bary, grads
    p = nodes[elements]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(np.abs(det) < 1e-16):
        raise MeshingError("degenerate element with near-zero area")
    vol = 0.5 * np.abs(det)
    bary = p.mean(axis=1)
    inv = np.empty((len(elements), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det
    grads = np.empty((len(elements), 3, 2))
    grads[:, 1] = inv[:, 0]
    grads[:, 2] = inv[:, 1]
    grads[:, 0] = -inv[:, 0] - inv[:, 1]
    return vol, bary, grads


def _orient_ccw(nodes, elements):
    p = nodes[elements]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    flip = det < 0
    elements[flip] = elements[flip][:, [0, 2, 1]]
    return elements


def _measure_nonobtuse(nodes, elements) -> bool:
    p = nodes[elements]
    ok = True
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        ok = ok and bool(np.all(np.einsum("ed,ed->e", a, b) >= -1e-12))
    return ok


def _node_adjacency(n_nodes, elements):
    from scipy.sparse import coo_matrix

    k = elements.shape[1]
    rows, cols = [], []
    for i in range(k):
        for j in range(k):
            if i != j:
                rows.append(elements[:, i])
                cols.append(elements[:, j])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    g = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                   shape=(n_nodes, n_nodes)).tocsr()
    g.data[:] = 1
    return g


def _extract_boundary_facets(elements):
    """Edges that belong to exactly one triangle, in deterministic order."""
    edges = np.concatenate([elements[:, [0, 1]], elements[:, [1, 2]],
                            elements[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    ks = key[order]
    uniq, first, counts = np.unique(ks, axis=0, return_index=True,
                                    return_counts=True)
    return uniq[counts == 1]


def _tag_facets(nodes, facets, entities, tol):
    mids = 0.5 * (nodes[facets[:, 0]] + nodes[facets[:, 1]])
    tags = np.full(len(facets), -1, dtype=int)
    for tag, ent in enumerate(entities):
        if ent.ndim != 2:
            continue
        d = dist_to_segments(mids, ent[None, :, :])
        tags[(d <= tol) & (tags < 0)] = tag
    if np.any(tags < 0):
        raise MeshingError("boundary facet does not lie on any domain edge")
    return tags


def _finish_mesh(domain, dim, nodes, elements, boundary_facets, boundary_tags,
                 h, extra_boundary_nodes=None):
    vol, bary, grads = _element_geometry(nodes, elements, dim)
    bmask = np.zeros(len(nodes), dtype=bool)
    bmask[np.unique(boundary_facets)] = True
    if extra_boundary_nodes is not None:
        bmask[extra_boundary_nodes] = True
    gamma_ids, gamma_ents = domain.gamma_entities()
    if dim == 1:
        gpts = np.array([e[0] for e in gamma_ents])[:, None]
        gmask = np.zeros(len(nodes), dtype=bool)
        for g in gpts[:, 0]:
            gmask |= np.abs(nodes[:, 0] - g) <= _EPS
        gent = ("points", gpts)
    else:
        segs = np.stack(gamma_ents, axis=0)
        gmask = dist_to_segments(nodes, segs) <= _EPS
        gent = ("segments", segs)
    if not gmask.any():
        raise MeshingError("no mesh node lies on the selected Gamma")
    nonobtuse = True if dim == 1 else _measure_nonobtuse(nodes, elements)
    return Mesh(dim=dim, nodes=nodes, elements=elements, el_vol=vol,
                el_bary=bary, grads=grads,
                boundary_facets=boundary_facets, boundary_tags=boundary_tags,
                boundary_mask=bmask, gamma_mask=gmask, gamma_entities=gent,
                gamma_edge_ids=gamma_ids, h=h, nonobtuse=nonobtuse,
                domain=domain, neighbors=_node_adjacency(len(nodes), elements))


def _grid_lines(coords, h):
    coords = np.unique(np.asarray(coords, dtype=float))
    lines = [coords[0]]
    for a, b in zip(coords[:-1], coords[1:]):
        n = max(1, int(np.ceil((b - a) / h - 1e-12)))
        lines.extend(a + (b - a) * np.arange(1, n + 1) / n)
    return np.array(lines)


def _build_grid_mesh(domain: DomainSpec, h: float) -> Mesh:
    verts = domain.vertices
    keyx = list(verts[:, 0])
    keyy = list(verts[:, 1])
    if domain.slit is not None:
        keyx += list(domain.slit[:, 0])
        keyy += list(domain.slit[:, 1])
    xs = _grid_lines(keyx, h)
    ys = _grid_lines(keyy, h)
    nx, ny = len(xs), len(ys)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)

    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    ccx, ccy = np.meshgrid(cx, cy, indexing="ij")
    centers = np.stack([ccx.ravel(), ccy.ravel()], axis=1)
    keep = _points_in_polygon(centers, verts).reshape(nx - 1, ny - 1)

    def nid(i, j):
        return i * ny + j

    tris = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            if not keep[i, j]:
                continue
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    if not tris:
        raise MeshingError("no interior cells; h too coarse for this domain")
    tris = np.array(tris, dtype=int)

    used = np.unique(tris)
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(len(used))
    nodes = pts[used]
    elements = _orient_ccw(nodes, remap[tris])

    facets = _extract_boundary_facets(elements)
    entities = domain.boundary_entities()
    tags = _tag_facets(nodes, facets, entities, tol=_EPS)
    extra = None
    if domain.slit is not None:
        on_slit = dist_to_segments(nodes, domain.slit[None, :, :]) <= _EPS
        slit_ids = np.flatnonzero(on_slit)
        if len(slit_ids) < 2:
            raise MeshingError("mesh does not resolve the slit")
        order = np.argsort(nodes[slit_ids, 1], kind="stable")
        slit_ids = slit_ids[order]
        slit_facets = np.stack([slit_ids[:-1], slit_ids[1:]], axis=1)
        slit_tag = len(entities) - 1
        facets = np.concatenate([facets, slit_facets])
        tags = np.concatenate([tags, np.full(len(slit_facets), slit_tag)])
        extra = slit_ids
    return _finish_mesh(domain, 2, nodes, elements, facets, tags, h,
                        extra_boundary_nodes=extra)


def _build_disk_mesh(domain: DomainSpec, h: float) -> Mesh:
    c, radius = domain.center, domain.radius
    n_r = max(4, int(round(radius / h)))
    pts = [c[None, :]]
    for i in range(1, n_r + 1):
        r = radius * i / n_r
        m = max(8, int(np.ceil(2 * np.pi * r / h)))
        if i == n_r:
            m = len(domain.vertices)
        t = 2 * np.pi * np.arange(m) / m
        ring = c + r * np.stack([np.cos(t), np.sin(t)], axis=1)
        pts.append(ring)
    nodes = np.concatenate(pts, axis=0)
    tri = Delaunay(nodes)
    elements = _orient_ccw(nodes, np.array(tri.simplices, dtype=int))
    vol, _, _ = _element_geometry(nodes, elements, 2)
    elements = elements[vol > 1e-14 * radius * radius]

    facets = _extract_boundary_facets(elements)
    tags = _tag_facets(nodes, facets, domain.boundary_entities(),
                       tol=1e-7 * radius)
    return _finish_mesh(domain, 2, nodes, elements, facets, tags, h)


def _build_scatter_mesh(domain: DomainSpec, h: float) -> Mesh:
    verts = domain.vertices
    chains = []
    n = len(verts)
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        m = max(1, int(np.ceil(np.linalg.norm(b - a) / h)))
        for k in range(m):
            chains.append(a + (b - a) * k / m)
    bpts = np.array(chains)
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    xs = np.arange(lo[0], hi[0] + h / 2, h)
    ys = np.arange(lo[1], hi[1] + h / 2, h)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    cand = np.stack([gx.ravel(), gy.ravel()], axis=1)
    inside = _points_in_polygon(cand, verts)
    clear = dist_to_segments(cand, boundary_segments(domain)) > 0.45 * h
    ipts = cand[inside & clear]
    nodes = np.concatenate([bpts, ipts], axis=0)
    tri = Delaunay(nodes)
    elements = np.array(tri.simplices, dtype=int)
    cent = nodes[elements].mean(axis=1)
    elements = elements[_points_in_polygon(cent, verts)]
    elements = _orient_ccw(nodes, elements)
    vol, _, _ = _element_geometry(nodes, elements, 2)
    elements = elements[vol > 1e-14]
    facets = _extract_boundary_facets(elements)
    tags = _tag_facets(nodes, facets, domain.boundary_entities(), tol=1e-7)
    return _finish_mesh(domain, 2, nodes, elements, facets, tags, h)


def _interval_mesh(domain: DomainSpec, xs: np.ndarray) -> Mesh:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or len(xs) < 5 or np.any(np.diff(xs) <= 0):
        raise MeshingError("interval nodes must be increasing, at least 5")
    a, b = domain.endpoints
    if xs[0] != a or xs[-1] != b:
        raise MeshingError("interval nodes must start and end at the "
                           "domain endpoints")
    n = len(xs) - 1
    pts = xs[:, None]
    elements = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1)
    facets = np.array([[0], [n]])
    tags = np.array([0, 1])
    bmask = np.zeros(n + 1, dtype=bool)
    bmask[[0, n]] = True
    vol, bary, grads = _element_geometry(pts, elements, 1)
    gamma_ids, gamma_ents = domain.gamma_entities()
    gpts = np.array([e[0] for e in gamma_ents])[:, None]
    gmask = np.zeros(n + 1, dtype=bool)
    # tolerance below the smallest cell so graded nodes next to an endpoint
    # are not swallowed into Gamma
    tol = min(_EPS, 0.25 * float(np.diff(xs).min()))
    for g in gpts[:, 0]:
        gmask |= np.abs(xs - g) <= tol
    return Mesh(dim=1, nodes=pts, elements=elements, el_vol=vol,
                el_bary=bary, grads=grads, boundary_facets=facets,
                boundary_tags=tags, boundary_mask=bmask, gamma_mask=gmask,
                gamma_entities=("points", gpts), gamma_edge_ids=gamma_ids,
                h=float(np.diff(xs).max()), nonobtuse=True, domain=domain,
                neighbors=_node_adjacency(n + 1, elements))


def graded_interval_mesh(domain: DomainSpec, m_per_side: int = 400,
                         depth: float = 1e-12) -> Mesh:
    """Interval mesh geometrically refined into each selected boundary point.

    Cells shrink log-uniformly from the interior down to depth (relative to
    the interval length) at every Gamma endpoint.  Near-boundary profiles
    live across many length scales, and resolving them costs a few hundred
    nodes here versus millions on a uniform mesh.
    """
    if domain.kind != "interval":
        raise MeshingError("graded meshes are built for interval domains")
    if not 0.0 < depth < 0.25:
        raise MeshingError("grading depth must lie in (0, 0.25)")
    if m_per_side < 8:
        raise MeshingError("need at least 8 nodes per graded side")
    a, b = domain.endpoints
    length = b - a
    _, gamma_ents = domain.gamma_entities()
    gpts = sorted(e[0] for e in gamma_ents)
    left = any(np.isclose(g, a) for g in gpts)
    right = any(np.isclose(g, b) for g in gpts)
    if left and right:
        half = np.concatenate([[0.0], np.geomspace(depth, 0.5, m_per_side)])
        rel = np.concatenate([half, (1.0 - half[::-1])[1:]])
    elif left:
        rel = np.concatenate([[0.0], np.geomspace(depth, 1.0, 2 * m_per_side)])
    elif right:
        rel = 1.0 - np.concatenate([[0.0],
                                    np.geomspace(depth, 1.0,
                                                 2 * m_per_side)])[::-1]
    else:
        raise MeshingError("interval Gamma selects neither endpoint")
    xs = a + length * rel
    xs[0], xs[-1] = a, b
    return _interval_mesh(domain, xs)


def _axis_aligned(domain: DomainSpec) -> bool:
    v = domain.vertices
    n = len(v)
    for i in range(n):
        d = v[(i + 1) % n] - v[i]
        if abs(d[0]) > _EPS and abs(d[1]) > _EPS:
            return False
    if domain.slit is not None:
        d = domain.slit[1] - domain.slit[0]
        if abs(d[0]) > _EPS and abs(d[1]) > _EPS:
            return False
    return True


def build_mesh(domain: DomainSpec, h: float) -> Mesh:
    """Mesh the domain at target spacing h.

    h must be positive and smaller than a quarter of the domain diameter.
    Every returned element is nondegenerate, boundary facets carry the index
    of the domain edge they lie on, and max edge length stays below 2h.
    """
    if not h > 0:
        raise MeshingError("mesh spacing h must be positive")
    if h >= domain.diameter() / 4:
        raise MeshingError("mesh spacing h must be below diam(domain)/4")
    if domain.kind == "interval":
        a, b = domain.endpoints
        n = max(4, int(np.ceil((b - a) / h)))
        return _interval_mesh(domain, np.linspace(a, b, n + 1))
    if domain.kind == "disk-approximation":
        return _build_disk_mesh(domain, h)
    if _axis_aligned(domain):
        return _build_grid_mesh(domain, h)
    return _build_scatter_mesh(domain, h)


# ---------------------------------------------------------------------------
# distance field


@dataclass(frozen=True)
class DistanceField:
    """Nodal distances to Gamma; exact for polygonal Gamma, zero on Gamma."""

    mesh: Mesh
    values: np.ndarray

    def at(self, pts: np.ndarray) -> np.ndarray:
        return gamma_distance(self.mesh, pts)


def gamma_distance(mesh: Mesh, pts: np.ndarray) -> np.ndarray:
    kind, data = mesh.gamma_entities
    if kind == "points":
        return dist_to_points(np.atleast_2d(pts), data)
    return dist_to_segments(pts, data)


def distance_field(mesh: Mesh) -> DistanceField:
    vals = gamma_distance(mesh, mesh.nodes)
    vals = vals.copy()
    vals[mesh.gamma_mask] = 0.0
    return DistanceField(mesh=mesh, values=vals)


def boundary_distance(mesh: Mesh, pts: np.ndarray) -> np.ndarray:
    """Distance to the full boundary of the domain (all entities)."""
    dom = mesh.domain
    if dom.kind == "interval":
        a, b = dom.endpoints
        x = np.atleast_2d(pts)[:, 0]
        return np.minimum(np.abs(x - a), np.abs(x - b))
    segs = np.stack([e for e in dom.boundary_entities()], axis=0)
    return dist_to_segments(pts, segs)


# ---------------------------------------------------------------------------
# greedy nets and the scale ladder


def greedy_net(candidates: np.ndarray, spacing: float) -> np.ndarray:
    """Farthest-point net: every candidate ends within `spacing` of a center.

    Deterministic: starts from the first candidate and always adds the
    farthest remaining point (first index on ties).
    """
    cand = np.atleast_2d(candidates)
    if len(cand) == 0:
        raise GeometryError("cannot build a net on an empty candidate set")
    chosen = [0]
    d = np.linalg.norm(cand - cand[0], axis=1)
    while d.max() > spacing:
        i = int(np.argmax(d))
        chosen.append(i)
        d = np.minimum(d, np.linalg.norm(cand - cand[i], axis=1))
    return cand[np.array(chosen)]


def _gamma_candidates(mesh: Mesh, step: float) -> np.ndarray:
    kind, data = mesh.gamma_entities
    if kind == "points":
        return data.copy()
    pts = []
    for seg in data:
        a, b = seg[0], seg[1]
        m = max(1, int(np.ceil(np.linalg.norm(b - a) / step)))
        for k in range(m + 1):
            pts.append(a + (b - a) * k / m)
    return np.array(pts)


@dataclass(frozen=True)
class ScaleLadder:
    """Radii, boundary layers, and covering nets for the barrier construction.

    radii[k] for k in [k_lo, k_hi + 1] follows R_k = (theta/2)**k * r_ref.
    layers[k] is the node mask of E_k = {delta <= R_k}; centers[k] is the
    greedy net on Gamma at scale k with spacing at most (theta/2) R_k, and
    every node of E_{k+1} lies inside some ball B(center, theta R_k).
    max_overlap[k] records the measured covering multiplicity.
    """

    mesh: Mesh
    theta: float
    r_ref: float
    k_lo: int
    k_hi: int
    radii: dict
    layers: dict
    centers: dict
    max_overlap: dict
    delta: np.ndarray

    def radius(self, k: int) -> float:
        return (self.theta / 2.0) ** k * self.r_ref


def build_ladder(mesh: Mesh, theta: float, r_ref: float = 1.0) -> ScaleLadder:
    """Construct the scale ladder for the given covering parameter theta.

    The coarsest scale satisfies R_{k_lo} >= 2 diam(domain), which makes the
    coarsest layer the whole domain and keeps the coarsest covering balls
    around every node.  The finest scale keeps R_{k_hi} >= 4h so that layers
    stay resolved by the mesh.
    """
    if not 0 < theta <= 0.5:
        raise GeometryError("theta must lie in (0, 1/2]")
    ratio = theta / 2.0
    diam = mesh.domain.diameter()
    k_lo = int(np.floor(np.log(2.0 * diam / r_ref) / np.log(ratio)))
    k_hi = int(np.floor(np.log(4.0 * mesh.h / r_ref) / np.log(ratio)))
    if k_hi < k_lo:
        raise MeshingError("mesh too coarse: no resolvable barrier scale")
    delta = distance_field(mesh).values
    radii, layers, centers, overlap = {}, {}, {}, {}
    for k in range(k_lo, k_hi + 2):
        radii[k] = ratio ** k * r_ref
        layers[k] = delta <= radii[k]
    for k in range(k_lo, k_hi + 1):
        spacing = ratio * radii[k]
        step = spacing / 8.0
        cand = _gamma_candidates(mesh, step)
        net = greedy_net(cand, spacing - step / 2.0)
        centers[k] = net
        inner = mesh.nodes[layers[k + 1]]
        if len(inner):
            d = np.linalg.norm(inner[:, None, :] - net[None, :, :], axis=2)
            cover = d <= theta * radii[k] + 1e-12
            if not np.all(cover.any(axis=1)):
                raise MeshingError(f"covering failed at scale {k}")
            overlap[k] = int(cover.sum(axis=1).max())
        else:
            overlap[k] = 0
    return ScaleLadder(mesh=mesh, theta=theta, r_ref=r_ref, k_lo=k_lo,
                       k_hi=k_hi, radii=radii, layers=layers, centers=centers,
                       max_overlap=overlap, delta=delta)


# ---------------------------------------------------------------------------
# ambient ball meshes (used by the capacity module)


def _clip_segment_to_disk(a, b, center, radius):
    d = b - a
    f = a - center
    A = np.dot(d, d)
    B = 2 * np.dot(f, d)
    C = np.dot(f, f) - radius * radius
    if A < 1e-300:
        return None
    disc = B * B - 4 * A * C
    if disc <= 0:
        return None
    s = np.sqrt(disc)
    t0 = max(0.0, (-B - s) / (2 * A))
    t1 = min(1.0, (-B + s) / (2 * A))
    if t1 <= t0:
        return None
    return a + t0 * d, a + t1 * d


def ambient_ball_mesh(domain: DomainSpec, center, radius: float, h: float) -> Mesh:
    """Triangulate the full disk B(center, radius), resolving nearby pieces
    of the domain boundary with inserted nodes so thin complements (such as a
    slit) carry mesh nodes."""
    c = np.asarray(center, dtype=float)
    n_r = max(8, int(np.ceil(radius / h)))
    pts = [c[None, :]]
    for i in range(1, n_r + 1):
        r = radius * i / n_r
        m = max(8, int(np.ceil(2 * np.pi * r / h)))
        t = 2 * np.pi * np.arange(m) / m
        pts.append(c + r * np.stack([np.cos(t), np.sin(t)], axis=1))
    ring_pts = np.concatenate(pts, axis=0)

    extra = []
    if domain.kind != "interval":
        ents = [e for e in domain.boundary_entities() if e.ndim == 2]
        for seg in ents:
            clipped = _clip_segment_to_disk(seg[0], seg[1], c, radius * 0.999)
            if clipped is None:
                continue
            a, b = clipped
            m = max(1, int(np.ceil(np.linalg.norm(b - a) / (0.75 * h))))
            for k in range(m + 1):
                extra.append(a + (b - a) * k / m)
    if extra:
        extra = np.array(extra)
        extra = np.unique(np.round(extra / (1e-9 * radius)), axis=0) * (1e-9 * radius)
        d = dist_to_points(ring_pts, extra)
        ring_pts = ring_pts[d > 0.35 * h]
        keep_center = np.linalg.norm(extra - c, axis=1) < radius - 0.25 * h
        nodes = np.concatenate([ring_pts, extra[keep_center]], axis=0)
    else:
        nodes = ring_pts
    tri = Delaunay(nodes)
    elements = _orient_ccw(nodes, np.array(tri.simplices, dtype=int))
    vol, bary, grads = _element_geometry(nodes, elements, 2)
    ok = vol > 1e-14 * radius * radius
    elements = elements[ok]
    vol, bary, grads = _element_geometry(nodes, elements, 2)
    facets = _extract_boundary_facets(elements)
    tags = np.zeros(len(facets), dtype=int)
    bmask = np.zeros(len(nodes), dtype=bool)
    bmask[np.unique(facets)] = True
    gmask = np.zeros(len(nodes), dtype=bool)
    return Mesh(dim=2, nodes=nodes, elements=elements, el_vol=vol,
                el_bary=bary, grads=grads, boundary_facets=facets,
                boundary_tags=tags, boundary_mask=bmask, gamma_mask=gmask,
                gamma_entities=("segments", np.zeros((0, 2, 2))),
                gamma_edge_ids=(), h=h, nonobtuse=_measure_nonobtuse(nodes, elements),
                domain=None, neighbors=_node_adjacency(len(nodes), elements))
