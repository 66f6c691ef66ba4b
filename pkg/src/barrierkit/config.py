"""Run configuration: YAML tree, schema validation, object construction.

Every tunable of the numerical modules is reachable from the file; defaults
match the library defaults.  Validation errors carry the dotted path of the
offending field ("mesh.h: ...") so configs can be fixed without reading
tracebacks.  A parsed RunConfig echoes back only canonical values, which is
what makes rerun reports byte-comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .geometry import (DomainSpec, disk_domain, interval_domain, l_shape,
                       polygon_domain, slit_square, unit_square)
from .weights import (WeightDescriptor, boundary_power_weight, constant_weight,
                      make_operator, point_power_weight)

_DOMAIN_KINDS = ("unit-square", "l-shape", "slit-square", "disk", "interval",
                 "polygon")
_WEIGHT_KINDS = ("constant", "point-power", "boundary-power")


def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}")


def _as_map(node, path):
    if node is None:
        return {}
    if not isinstance(node, dict):
        _fail(path, "expected a mapping")
    return node


_MISSING = object()


def _check_num(v, path, lo=None, hi=None, strict_lo=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(path, "expected a number")
    v = float(v)
    if not np.isfinite(v):
        _fail(path, "must be finite")
    if lo is not None and (v <= lo if strict_lo else v < lo):
        _fail(path, f"must be {'>' if strict_lo else '>='} {lo:g}")
    if hi is not None and v > hi:
        _fail(path, f"must be <= {hi:g}")
    return v


def _join(path, key):
    return f"{path}.{key}" if path else key


def _num(m, key, path, lo=None, hi=None, strict_lo=False, default=_MISSING):
    if m.get(key) is None:
        if default is _MISSING:
            _fail(_join(path, key), "required field is missing")
        return default
    return _check_num(m[key], _join(path, key), lo=lo, hi=hi,
                      strict_lo=strict_lo)


def _int(m, key, path, lo=None, hi=None, default=_MISSING):
    if m.get(key) is None:
        if default is _MISSING:
            _fail(_join(path, key), "required field is missing")
        return default
    v = m[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(_join(path, key), "expected an integer")
    if lo is not None and v < lo:
        _fail(_join(path, key), f"must be >= {lo}")
    if hi is not None and v > hi:
        _fail(_join(path, key), f"must be <= {hi}")
    return v


def _num_list(m, key, path, default, lo=None, strict_lo=False):
    v = m.get(key)
    if v is None:
        return list(default)
    if not isinstance(v, (list, tuple)) or not v:
        _fail(_join(path, key), "expected a nonempty list of numbers")
    return [_check_num(x, f"{_join(path, key)}[{i}]", lo=lo,
                       strict_lo=strict_lo) for i, x in enumerate(v)]


def _build_domain(node) -> DomainSpec:
    m = _as_map(node, "domain")
    kind = m.get("kind")
    if kind not in _DOMAIN_KINDS:
        _fail("domain.kind", f"expected one of {', '.join(_DOMAIN_KINDS)}")
    gamma = m.get("gamma", "all")
    if gamma != "all":
        if not isinstance(gamma, (list, tuple)) or not gamma \
                or not all(isinstance(i, int) and not isinstance(i, bool)
                           for i in gamma):
            _fail("domain.gamma", 'expected "all" or a list of entity indices')
        gamma = tuple(gamma)
    try:
        if kind == "unit-square":
            return unit_square(gamma=gamma)
        if kind == "l-shape":
            return l_shape(gamma=gamma)
        if kind == "slit-square":
            return slit_square(gamma=gamma if gamma != "all" else (4,))
        if kind == "disk":
            center = m.get("center", [0.0, 0.0])
            radius = _num(m, "radius", "domain", lo=0.0, strict_lo=True,
                          default=1.0)
            return disk_domain(center=center, radius=radius, gamma=gamma)
        if kind == "interval":
            a = _num(m, "a", "domain", default=0.0)
            b = _num(m, "b", "domain", default=1.0)
            if b <= a:
                _fail("domain.b", "must exceed domain.a")
            return interval_domain(a, b, gamma=gamma)
        verts = m.get("vertices")
        if not isinstance(verts, (list, tuple)) or len(verts) < 3:
            _fail("domain.vertices", "polygon needs at least 3 vertices")
        return polygon_domain(verts, gamma=gamma)
    except ConfigError:
        raise
    except Exception as exc:
        _fail("domain", str(exc))


def _build_weight(node, p: float, dim: int) -> WeightDescriptor:
    m = _as_map(node, "operator.weight")
    kind = m.get("kind", "constant")
    if kind not in _WEIGHT_KINDS:
        _fail("operator.weight.kind",
              f"expected one of {', '.join(_WEIGHT_KINDS)}")
    if kind == "constant":
        value = _num(m, "value", "operator.weight", lo=0.0, strict_lo=True,
                     default=1.0)
        return constant_weight(p, dim, value)
    mu = _num(m, "mu", "operator.weight")
    if kind == "point-power":
        if not -dim < mu < dim * (p - 1.0):
            _fail("operator.weight.mu",
                  f"outside the admissible range (-{dim}, {dim * (p - 1):g})")
        center = m.get("center")
        if center is None or len(np.atleast_1d(center)) != dim:
            _fail("operator.weight.center",
                  f"required, {dim} coordinate(s)")
        return point_power_weight(p, dim, mu, center)
    if not -1.0 < mu < p - 1.0:
        _fail("operator.weight.mu",
              f"outside the admissible range (-1, {p - 1:g})")
    # geometry is attached once the mesh exists
    return WeightDescriptor(kind="distance-power", p=p, dim=dim, mu=mu)


@dataclass(frozen=True)
class RunConfig:
    """Validated run parameters plus the canonical config echo."""

    domain: DomainSpec
    h: float
    p: float
    weight: WeightDescriptor
    aniso: np.ndarray | None
    seed: int | None
    threads: int
    out: str | None
    solve: dict
    capacity: dict
    cdc: dict
    calibration: dict
    hardy: dict
    singular: dict
    echo: dict = field(repr=False)

    def operator(self, mesh=None):
        w = self.weight
        if w.kind == "distance-power" and w.gamma is None:
            if mesh is None:
                raise ConfigError(
                    "operator.weight: boundary-power weight needs a mesh")
            w = boundary_power_weight(self.p, mesh, w.mu)
        return make_operator(self.p, w, aniso=self.aniso)


_SECTIONS = ("domain", "mesh", "operator", "solve", "capacity", "cdc",
             "calibration", "hardy", "singular", "seed", "threads", "out")


def parse_config(raw: dict) -> RunConfig:
    raw = _as_map(raw, "config")
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        _fail(unknown[0], "unknown configuration section")

    domain = _build_domain(raw.get("domain"))
    mesh_m = _as_map(raw.get("mesh"), "mesh")
    h = _num(mesh_m, "h", "mesh", lo=0.0, strict_lo=True)

    op_m = _as_map(raw.get("operator"), "operator")
    p = _num(op_m, "p", "operator", default=2.0)
    if p <= 1.0:
        _fail("operator.p", "must exceed 1")
    weight = _build_weight(op_m.get("weight"), p, domain.dim)
    aniso = op_m.get("aniso")
    if aniso is not None:
        try:
            aniso = np.asarray(aniso, dtype=float)
            make_operator(p, constant_weight(p, domain.dim), aniso=aniso)
        except Exception as exc:
            _fail("operator.aniso", str(exc))

    seed = _int(raw, "seed", "", lo=0, default=None)
    threads = _int(raw, "threads", "", lo=1, default=1)
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        _fail("out", "expected a directory path string")

    sv = _as_map(raw.get("solve"), "solve")
    solve = {"rho": _num(sv, "rho", "solve", default=1.0),
             "g": _num(sv, "g", "solve", default=0.0)}

    cp = _as_map(raw.get("capacity"), "capacity")
    cap = {"plate_radius": _num(cp, "plate_radius", "capacity", lo=0.0,
                                strict_lo=True, default=0.5)}

    cd = _as_map(raw.get("cdc"), "cdc")
    cdc = {"scales": _num_list(cd, "scales", "cdc", default=(), lo=0.0,
                               strict_lo=True),
           "n_centers": _int(cd, "n_centers", "cdc", lo=1, default=8),
           "ambient_rings": _int(cd, "ambient_rings", "cdc", lo=8,
                                 default=24)}

    cl = _as_map(raw.get("calibration"), "calibration")
    thetas = _num_list(cl, "thetas", "calibration",
                       default=(0.5, 0.25, 0.125, 0.0625), lo=0.0,
                       strict_lo=True)
    for i, th in enumerate(thetas):
        if th > 0.5:
            _fail(f"calibration.thetas[{i}]", "must be <= 0.5")
    calibration = {
        "thetas": thetas,
        "c3_grid": _num_list(cl, "c3_grid", "calibration",
                             default=(1.0, 0.1, 0.01, 0.001), lo=0.0,
                             strict_lo=True),
        "n_centers": _int(cl, "n_centers", "calibration", lo=1, default=8),
        "margin": _num(cl, "margin", "calibration", lo=0.0, hi=1.0,
                       strict_lo=True, default=0.9),
    }

    hd = _as_map(raw.get("hardy"), "hardy")
    hardy = {"n_random": _int(hd, "n_random", "hardy", lo=0, default=36),
             "n_starts": _int(hd, "n_starts", "hardy", lo=1, default=5),
             "max_iter": _int(hd, "max_iter", "hardy", lo=1, default=200)}

    sg = _as_map(raw.get("singular"), "singular")
    sign = _int(sg, "sign", "singular", default=1)
    if sign not in (1, -1):
        _fail("singular.sign", "must be 1 or -1")
    singular = {
        "K": _num(sg, "K", "singular", lo=0.0, strict_lo=True, default=1.0),
        "beta": _num(sg, "beta", "singular", lo=0.0, strict_lo=True,
                     default=None),
        "beta_fraction": _num(sg, "beta_fraction", "singular", lo=0.0,
                              hi=1.0, strict_lo=True, default=1.0),
        "sign": sign,
        "stop_tol": _num(sg, "stop_tol", "singular", lo=0.0, strict_lo=True,
                         default=1e-6),
        "base": _num(sg, "base", "singular", lo=1.0, strict_lo=True,
                     default=2.0),
        "max_cutoffs": _int(sg, "max_cutoffs", "singular", lo=1,
                            default=1000),
    }

    echo = {
        "domain": {"kind": raw["domain"]["kind"],
                   "gamma": ("all" if domain.gamma_selector == "all"
                             else list(domain.gamma_selector))},
        "mesh": {"h": h},
        "operator": {"p": p,
                     "weight": {"kind": weight.kind, "mu": weight.mu,
                                "value": weight.value},
                     "aniso": None if aniso is None else aniso.tolist()},
        "solve": solve, "capacity": cap, "cdc": cdc,
        "calibration": calibration, "hardy": hardy, "singular": singular,
        "seed": seed, "threads": threads,
    }
    for key in ("a", "b", "radius", "center", "vertices"):
        if key in _as_map(raw.get("domain"), "domain"):
            echo["domain"][key] = raw["domain"][key]
    if weight.center is not None:
        echo["operator"]["weight"]["center"] = weight.center.tolist()

    return RunConfig(domain=domain, h=h, p=p, weight=weight, aniso=aniso,
                     seed=seed, threads=threads, out=out, solve=solve,
                     capacity=cap, cdc=cdc, calibration=calibration,
                     hardy=hardy, singular=singular, echo=echo)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: invalid YAML in {path}: {exc}")
    if raw is None:
        raise ConfigError("config: file is empty")
    return parse_config(raw)
