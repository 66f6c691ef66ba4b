"""Command-line runner: one subcommand, one output directory, one report.

Every run writes report.json (machine-readable, timing excluded, byte-stable
for a fixed config and seed), report.txt (human summary with timings), and
per-subcommand CSV tables.  Exit status is 0 exactly when every check in the
run passed; configuration problems exit with 2 and module failures with 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .barrier import build_barrier
from .capacity import capacity, condenser, estimate_gamma
from .config import RunConfig, load_config
from .errors import BarrierkitError, ConfigError
from .geometry import build_mesh
from .hardy import hardy_report
from .singular import SingularSource, solve_singular, verify_theorem_bound
from .solver import residual_measure, solve_dirichlet

SUBCOMMANDS = ("solve", "capacity", "cdc-check", "barrier", "hardy",
               "singular-solve", "full-pipeline")
_SAMPLED = ("hardy", "full-pipeline")


@dataclass
class RunReport:
    """Everything a run produced: results keyed by module, artifacts by
    file name, wall-clock timings kept apart so reruns stay comparable."""

    subcommand: str
    config: dict
    version: str
    results: dict
    passed: bool
    timing: dict
    artifacts: dict

    def body(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "version": self.version,
            "config": self.config,
            "results": self.results,
            "passed": self.passed,
            "artifacts": sorted(self.artifacts),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()
                if not isinstance(v, np.ndarray) or v.ndim == 1}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


# ---------------------------------------------------------------------------
# subcommand bodies: each returns (results, artifacts, passed)


def _run_solve(cfg: RunConfig):
    mesh = build_mesh(cfg.domain, cfg.h)
    op = cfg.operator(mesh)
    fld, info = solve_dirichlet(mesh, op, cfg.solve["rho"], cfg.solve["g"],
                                return_info=True)
    rm = residual_measure(fld, op, cfg.solve["rho"])
    rinf = float(np.abs(rm.nu[mesh.interior_mask]).max()) \
        if mesh.interior_mask.any() else 0.0
    results = {"solve": {
        "n_nodes": mesh.n_nodes,
        "converged": info.converged,
        "newton_iterations": info.newton_iterations,
        "residual_inf": rinf,
        "sup": float(np.abs(fld.values).max()),
        "min": float(fld.values.min()),
        "max": float(fld.values.max()),
    }}
    rows = [("node",) + tuple(f"x{i}" for i in range(mesh.dim)) + ("u",)]
    for i in range(mesh.n_nodes):
        rows.append((i, *mesh.nodes[i], fld.values[i]))
    return results, {"solution.csv": rows}, bool(info.converged)


def _domain_center(cfg: RunConfig):
    d = cfg.domain
    if d.kind == "interval":
        a, b = d.endpoints
        return np.array([0.5 * (a + b)])
    if d.center is not None:
        return np.asarray(d.center, dtype=float)
    return d.vertices.mean(axis=0)


def _run_capacity(cfg: RunConfig):
    mesh = build_mesh(cfg.domain, cfg.h)
    op = cfg.operator(mesh)
    c = _domain_center(cfg)
    r_plate = cfg.capacity["plate_radius"]
    plate = np.linalg.norm(mesh.nodes - c, axis=1) <= r_plate
    spec = condenser(mesh, plate, cfg.p, op.weight)
    value, pot = capacity(spec, return_potential=True)
    results = {"capacity": {
        "value": value, "p": cfg.p, "plate_radius": r_plate,
        "center": c.tolist(), "n_plate": int(plate.sum()),
        "n_nodes": mesh.n_nodes,
    }}
    rows = [("node",) + tuple(f"x{i}" for i in range(mesh.dim))
            + ("potential",)]
    for i in range(mesh.n_nodes):
        rows.append((i, *mesh.nodes[i], pot.values[i]))
    return results, {"potential.csv": rows}, bool(value > 0)


def _run_cdc(cfg: RunConfig):
    scales = cfg.cdc["scales"] or [8.0 * cfg.h, 16.0 * cfg.h]
    mesh = build_mesh(cfg.domain, cfg.h)
    op = cfg.operator(mesh)
    rep = estimate_gamma(cfg.domain, cfg.p, scales=scales, weight=op.weight,
                         n_centers=cfg.cdc["n_centers"],
                         ambient_rings=cfg.cdc["ambient_rings"])
    results = {"cdc": {
        "gamma_hat": rep.gamma_hat,
        "n_probes": len(rep.rows),
        "n_flagged": len(rep.flagged),
        "scales": [float(s) for s in scales],
    }}
    rows = [("center", "radius", "cap_complement", "cap_ball", "ratio")]
    for r in rep.rows:
        rows.append((";".join(repr(x) for x in r["center"]), r["radius"],
                     r["cap_num"], r["cap_den"], r["ratio"]))
    return results, {"ratios.csv": rows}, bool(rep.gamma_hat >= 1e-3)


def _build_certified(cfg: RunConfig):
    mesh = build_mesh(cfg.domain, cfg.h)
    op = cfg.operator(mesh)
    bl, rep = build_barrier(cfg.domain, mesh, op, threads=cfg.threads,
                            thetas=tuple(cfg.calibration["thetas"]),
                            c3_grid=tuple(cfg.calibration["c3_grid"]),
                            n_centers=cfg.calibration["n_centers"],
                            margin=cfg.calibration["margin"])
    return mesh, op, bl, rep


def _barrier_results(bl, rep):
    c = bl.constants
    return {
        "theta": c.theta, "c3": c.c3, "alpha": c.alpha, "c_h": c.c_h,
        "k_lo": bl.ladder.k_lo, "k_hi": bl.ladder.k_hi,
        "n_resolved": int(bl.resolved_mask.sum()),
        "sandwich": {k: rep["sandwich"][k] for k in
                     ("n_checked", "n_low_violations", "n_high_violations",
                      "min_ratio", "max_ratio", "passed")},
        "supersolution": rep["supersolution"],
        "layers_ok": rep["layers_ok"],
        "per_layer": rep["per_layer"],
        "passed": rep["passed"],
    }


def _barrier_artifacts(bl):
    mesh = bl.mesh
    rows = [("node",) + tuple(f"x{i}" for i in range(mesh.dim))
            + ("delta", "s_gamma", "layer_k", "resolved")]
    for i in range(mesh.n_nodes):
        rows.append((i, *mesh.nodes[i], bl.delta[i], bl.s_gamma[i],
                     int(bl.layer_index[i]), int(bl.resolved_mask[i])))
    return {"barrier.csv": rows}


def _run_barrier(cfg: RunConfig):
    _, _, bl, rep = _build_certified(cfg)
    return ({"barrier": _barrier_results(bl, rep)}, _barrier_artifacts(bl),
            bool(rep["passed"]))


def _hardy_results(hrep):
    return {
        "p": hrep.p, "c_h": hrep.c_h, "c_hat": hrep.c_hat,
        "n_functions": hrep.n_functions,
        "pairs_ok": hrep.pairs_ok, "picone_ok": hrep.picone_ok,
        "floor_ok": hrep.floor_ok, "ordering_ok": hrep.ordering_ok,
        "lhs_bias": hrep.lhs_bias,
        "per_start": hrep.per_start,
        "worst_quotient": min(r["quotient"] for r in hrep.rows),
        "passed": hrep.passed,
    }


def _hardy_artifacts(hrep):
    rows = [("function", "lhs", "rhs", "margin", "quotient", "pair_ok",
             "picone_excess", "picone_ok")]
    for r in hrep.rows:
        rows.append((r["id"], r["lhs"], r["rhs"], r["margin"], r["quotient"],
                     int(r["pair_ok"]), r["picone_excess"],
                     int(r["picone_ok"])))
    return {"hardy.csv": rows}


def _run_hardy(cfg: RunConfig):
    _, op, bl, rep = _build_certified(cfg)
    hrep = hardy_report(bl, op, seed=cfg.seed,
                        n_random=cfg.hardy["n_random"],
                        n_starts=cfg.hardy["n_starts"],
                        max_iter=cfg.hardy["max_iter"], threads=cfg.threads)
    results = {"barrier": _barrier_results(bl, rep),
               "hardy": _hardy_results(hrep)}
    artifacts = _barrier_artifacts(bl)
    artifacts.update(_hardy_artifacts(hrep))
    return results, artifacts, bool(rep["passed"] and hrep.passed)


def _singular_pieces(cfg: RunConfig, op, bl):
    beta = cfg.singular["beta"]
    if beta is None:
        beta = cfg.singular["beta_fraction"] * bl.constants.alpha
    src = SingularSource(K=cfg.singular["K"], beta=beta,
                         sign=cfg.singular["sign"])
    run = solve_singular(bl, op, src, stop_tol=cfg.singular["stop_tol"],
                         max_cutoffs=cfg.singular["max_cutoffs"],
                         base=cfg.singular["base"])
    bound = verify_theorem_bound(run, bl.constants, src, detail=True)
    det = bound.pop("detail")
    results = {
        "K": src.K, "beta": src.beta, "sign": src.sign,
        "exponent": src.exponent(op.p),
        "m_stop": run.m_stop, "converged": run.converged,
        "final_cutoff": float(run.cutoffs[-1]),
        "sup_u": float(np.abs(run.u.values).max()),
        "energy_tail_ratio": run.energy_tail_ratio,
        "max_majorant_excess": float(run.majorant_excess.max()),
        "min_increment": run.min_increment,
        "majorant_ok": bool(run.majorant_report["passed"]),
        "bound": bound,
        "passed": bool(run.converged and run.majorant_report["passed"]
                       and bound["passed"] and bound["near_gamma_ok"]),
    }
    conv = [("m", "cutoff", "probe_increment", "energy",
             "newton_iterations")]
    for m in range(len(run.cutoffs)):
        inc = run.sup_deltas[m - 1] if m > 0 else ""
        conv.append((m, run.cutoffs[m], inc, run.energies[m],
                     run.newton_iterations[m]))
    mesh = bl.mesh
    ids = np.flatnonzero(det["resolved_mask"])
    util = [("node", "delta", "abs_u", "bound", "utilization")]
    for j, i in enumerate(ids):
        util.append((int(i), run.delta[i], abs(run.u.values[i]),
                     det["bound"][j], det["utilization"][j]))
    return results, {"convergence.csv": conv, "utilization.csv": util}


def _run_singular(cfg: RunConfig):
    _, op, bl, rep = _build_certified(cfg)
    results, artifacts = _singular_pieces(cfg, op, bl)
    out = {"barrier": _barrier_results(bl, rep), "singular": results}
    artifacts.update(_barrier_artifacts(bl))
    return out, artifacts, bool(rep["passed"] and results["passed"])


def _run_pipeline(cfg: RunConfig):
    _, op, bl, rep = _build_certified(cfg)
    hrep = hardy_report(bl, op, seed=cfg.seed,
                        n_random=cfg.hardy["n_random"],
                        n_starts=cfg.hardy["n_starts"],
                        max_iter=cfg.hardy["max_iter"], threads=cfg.threads)
    sing, artifacts = _singular_pieces(cfg, op, bl)
    results = {"barrier": _barrier_results(bl, rep),
               "hardy": _hardy_results(hrep),
               "singular": sing}
    artifacts.update(_barrier_artifacts(bl))
    artifacts.update(_hardy_artifacts(hrep))
    passed = bool(rep["passed"] and hrep.passed and sing["passed"])
    return results, artifacts, passed


_RUNNERS = {
    "solve": _run_solve,
    "capacity": _run_capacity,
    "cdc-check": _run_cdc,
    "barrier": _run_barrier,
    "hardy": _run_hardy,
    "singular-solve": _run_singular,
    "full-pipeline": _run_pipeline,
}


# ---------------------------------------------------------------------------
# orchestration


def run(subcommand: str, cfg: RunConfig) -> RunReport:
    if subcommand not in _RUNNERS:
        raise ConfigError(f"subcommand: unknown subcommand {subcommand!r}")
    if subcommand in _SAMPLED and cfg.seed is None:
        raise ConfigError("seed: required for subcommands with sampled "
                          "starts (set it in the config or pass --seed)")
    t0 = time.perf_counter()
    results, artifacts, passed = _RUNNERS[subcommand](cfg)
    timing = {"total_s": time.perf_counter() - t0}
    return RunReport(subcommand=subcommand, config=cfg.echo,
                     version=__version__, results=_jsonable(results),
                     passed=passed, timing=timing, artifacts=artifacts)


def _flatten_checks(results, prefix=""):
    out = []
    for key, val in results.items():
        path = f"{prefix}{key}"
        if isinstance(val, dict):
            if "passed" in val:
                out.append((path, bool(val["passed"])))
            out.extend(_flatten_checks(
                {k: v for k, v in val.items() if isinstance(v, dict)},
                prefix=f"{path}."))
    return out


def write_report(report: RunReport, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    body = json.dumps(report.body(), indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(body + "\n")
    for name, rows in report.artifacts.items():
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            wr = csv.writer(fh)
            for row in rows:
                wr.writerow([repr(float(x)) if isinstance(x, float) else x
                             for x in row])
    lines = [f"barrierkit {report.version} :: {report.subcommand}", ""]
    for path, ok in _flatten_checks(report.results):
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {path}")
    lines.append("")
    lines.append(f"overall: {'PASS' if report.passed else 'FAIL'}")
    lines.append(f"elapsed: {report.timing['total_s']:.2f} s")
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_dir


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="barrierkit",
        description="certified barrier, Hardy, and singular-source runs")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads for independent solves")
    ns = ap.parse_args(argv)

    try:
        cfg = load_config(ns.config)
        if ns.seed is not None or ns.threads is not None:
            from dataclasses import replace

            echo = dict(cfg.echo)
            if ns.seed is not None:
                echo["seed"] = ns.seed
            if ns.threads is not None:
                echo["threads"] = ns.threads
            cfg = replace(cfg,
                          seed=ns.seed if ns.seed is not None else cfg.seed,
                          threads=(ns.threads if ns.threads is not None
                                   else cfg.threads),
                          echo=echo)
        out_dir = ns.out or os.environ.get("BARRIERKIT_OUT") or cfg.out \
            or os.path.join("runs", ns.subcommand)
        report = run(ns.subcommand, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BarrierkitError as exc:
        print(f"{ns.subcommand}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1

    write_report(report, out_dir)
    print(f"{'PASS' if report.passed else 'FAIL'} "
          f"{ns.subcommand} -> {out_dir}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
