"""Command-line runner: solve | exponents | sweep | check-energy.

Exit codes: 0 success, 1 a check failed (or nothing to check), 2 bad usage
or invalid configuration. All artifacts are UTF-8 JSON/CSV and contain no
timestamps, so re-running a config reproduces them byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .energy import (
    NonConvexDensityWarning,
    check_structural_bounds,
    convexity_gap,
    finite_difference_check,
    halton_pairs,
    validated_nu,
)
from .freeboundary import classify_contact, gradient_match
from .grid import Domain, GridField, read_field_csv, write_field_csv
from .problems import dead_core_profile
from .regularity import (
    campanato_exponent,
    default_radii,
    dyadic_decay_check,
    growth_exponent,
    plane_subtracted,
    theoretical_exponents,
)
from .solver import linf_bound_violation, solve

log = logging.getLogger("singular_obstacle")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return None
    return o


def write_json(path, obj):
    text = json.dumps(_clean(json.loads(json.dumps(obj, default=_json_default))), indent=2, sort_keys=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


# -- shared analysis ----------------------------------------------------------


def obstacle_gradient(spec, i):
    """Difference quotient of phi at node i: central where possible."""
    grid = spec.grid
    phi = spec.obstacle.values
    g = np.zeros(grid.dim)
    nb = {(a, s): j for a, s, j in grid.neighbors(i)}
    for axis in range(grid.dim):
        lo, hi = nb.get((axis, -1)), nb.get((axis, 1))
        if lo is not None and hi is not None:
            g[axis] = (phi[hi] - phi[lo]) / (2 * grid.h)
        elif hi is not None:
            g[axis] = (phi[hi] - phi[i]) / grid.h
        elif lo is not None:
            g[axis] = (phi[i] - phi[lo]) / grid.h
    return g


def designated_node(spec, classification, x0=None):
    """Node where the exponent check is made, or None if there is no FB.

    With ``x0``: its nearest node if that node is in contact, otherwise the
    nearest free-boundary node. Without: the interior FB node closest to the
    centre of the domain.
    """
    grid = spec.grid
    fb = classification.fb_nodes
    if fb.size == 0:
        return None
    if x0 is not None:
        i = grid.nearest_node(x0)
        if classification.contact[i] and not grid.boundary_mask[i]:
            return i
        target = np.asarray(x0, float)
    else:
        target = np.array([0.5 * (a + b) for a, b in grid.domain.bounds])
    interior = fb[grid.interior_mask[fb]]
    pool = interior if interior.size else fb
    d = np.linalg.norm(grid.coords[pool] - target, axis=1)
    return int(pool[np.argmin(d)])


def run_exponent_analysis(spec, result, analysis, tolerance=None, all_fb=True):
    """Growth fit at the designated point (and optionally every FB node).

    Returns ``(report, status)`` with status "pass", "fail", "vacuous" or
    "unconverged".
    """
    tol = analysis.tolerance if tolerance is None else tolerance
    pred = theoretical_exponents(spec.p, spec.gamma, spec.beta, kappa1=spec.density.growth.kappa1)
    report = {"prediction": pred.to_dict(), "tolerance": tol, "converged": result.converged}
    if not result.converged:
        return report, "unconverged"
    cls = classify_contact(result, spec, analysis.tol_detach)
    report["tol_detach"] = cls.tol_detach
    report["n_contact"] = int(cls.contact.sum())
    report["n_free_boundary"] = int(cls.fb_nodes.size)
    report["gradient_match"] = gradient_match(cls)
    i = designated_node(spec, cls, analysis.x0)
    if i is None:
        report["status"] = "vacuous"
        return report, "vacuous"
    grid = spec.grid
    x0 = grid.coords[i]

    def fit_at(node):
        x = grid.coords[node]
        radii = analysis.radii
        if radii is None:
            radii = default_radii(grid, x, analysis.rho_max, analysis.levels, analysis.min_cells)
        return growth_exponent(result.u, x, obstacle_gradient(spec, node), radii)

    fit = fit_at(i)
    target = pred.growth
    ok = bool(fit.usable and abs(fit.slope - target) <= tol)
    q = analysis.q if analysis.q is not None else pred.q
    camp = campanato_exponent(result.u, q, x0, analysis.radii)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        normalized = plane_subtracted(result.u, x0, obstacle_gradient(spec, i))
        dyadic = dyadic_decay_check(normalized, x0, pred.tau, analysis.k_max, min_radius_cells=analysis.min_cells)
    report.update(
        designated_point=x0.tolist(),
        designated_node=i,
        predicted_slope=target,
        fit=fit.to_dict(),
        campanato=camp.to_dict(),
        dyadic=dyadic.to_dict(),
        passed=ok,
    )
    if all_fb:
        report["fb_fits"] = [
            {"node": int(j), "x": grid.coords[j].tolist(), **fit_at(j).to_dict()}
            for j in cls.fb_nodes
            if grid.interior_mask[j]
        ]
    report["status"] = "pass" if ok else "fail"
    return report, report["status"]


def _result_json(cfg, spec, result):
    viol = linf_bound_violation(result, spec)
    out = {
        "config": cfg.to_dict(),
        "grid": {"domain": spec.grid.domain.to_dict(), "h": spec.grid.h, "n_nodes": spec.grid.n_active},
        "converged": result.converged,
        "final_energy": result.final_energy,
        "kkt": result.kkt,
        "tol_kkt": result.tol_kkt,
        "linf_violation": viol,
        "linf_bound_holds": viol == 0.0,
        "n_contact": int(result.contact_mask.sum()),
        "stages": [s.to_dict() for s in result.stages],
    }
    pb = cfg.problem
    if (
        spec.grid.dim == 1
        and pb.obstacle["name"] == "zero"
        and pb.boundary["name"] == "benchmark"
    ):
        exact = dead_core_profile(spec.grid.coords, spec.p, spec.gamma, pb.boundary["params"].get("shift", 0.0))
        out["max_error_vs_closed_form"] = float(np.abs(result.u.values - exact).max())
    return out


# -- commands -----------------------------------------------------------------


def cmd_solve(cfg, out: Path, tolerance=None):
    spec = cfg.build_spec()
    result = solve(spec, cfg.solver)
    out.mkdir(parents=True, exist_ok=True)
    write_field_csv(out / "solution.csv", result.u)
    rep = _result_json(cfg, spec, result)
    write_json(out / "result.json", rep)
    if not result.converged:
        print(f"not converged: kkt={result.kkt:.3e} > {result.tol_kkt:.3e}", file=sys.stderr)
        return EXIT_FAIL
    if not rep["linf_bound_holds"]:
        print(f"L-infinity bound violated by {rep['linf_violation']:.3e}", file=sys.stderr)
        return EXIT_FAIL
    print(f"converged: energy={result.final_energy:.12g}, contact nodes={rep['n_contact']}")
    return EXIT_OK


def _load_or_solve(cfg, spec, out: Path):
    """Reuse a prior ``solve`` in ``out`` made from the same problem and
    solver blocks; otherwise solve inline."""
    rj, sc = out / "result.json", out / "solution.csv"
    if rj.exists() and sc.exists():
        try:
            prior = json.loads(rj.read_text(encoding="utf-8"))
            same = all(prior["config"].get(k) == cfg.to_dict().get(k) for k in ("problem", "solver", "density"))
            if same and prior.get("converged"):
                from .solver import SolveResult

                u = read_field_csv(sc, spec.grid)
                zero = GridField(spec.grid, np.zeros(spec.grid.n_active))
                log.info("reusing %s", sc)
                return SolveResult(
                    u=u,
                    stages=[],
                    final_energy=prior["final_energy"],
                    contact_mask=u.values - spec.obstacle.values <= cfg.solver.tol_contact,
                    kkt_residual=zero,
                    kkt=prior["kkt"],
                    tol_kkt=prior["tol_kkt"],
                    converged=True,
                )
        except (OSError, KeyError, ValueError):
            pass
    return solve(spec, cfg.solver)


def _write_fit_csv(path, fit):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["radius", "value"])
        for r, v in fit["samples"]:
            w.writerow([repr(float(r)), repr(float(v))])


def cmd_exponents(cfg, out: Path, tolerance=None):
    spec = cfg.build_spec()
    result = _load_or_solve(cfg, spec, out)
    report, status = run_exponent_analysis(spec, result, cfg.analysis, tolerance)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "exponents.json", report)
    if status == "vacuous":
        print("vacuous: no free boundary found", file=sys.stderr)
        return EXIT_FAIL
    if status == "unconverged":
        print("solve did not converge; no exponent check", file=sys.stderr)
        return EXIT_FAIL
    _write_fit_csv(out / "growth_fit.csv", report["fit"])
    print(
        f"slope {report['fit']['slope']:.4f} vs predicted {report['predicted_slope']:.4f} "
        f"(tolerance {report['tolerance']}): {status}"
    )
    return EXIT_OK if status == "pass" else EXIT_FAIL


def _sweep_cell(cfg, cell, tolerance):
    row = dict(cell)
    try:
        spec = cfg.build_spec(**cell)
        row["tau_pred"] = theoretical_exponents(spec.p, spec.gamma, spec.beta).tau
        result = solve(spec, cfg.solver)
        report, status = run_exponent_analysis(spec, result, cfg.analysis, tolerance, all_fb=False)
        row["slope"] = report.get("fit", {}).get("slope", math.nan)
        row["linf_violation"] = linf_bound_violation(result, spec)
        row["status"] = status
        row["pass"] = status == "pass" and row["linf_violation"] == 0.0
        row["report"] = report
    except Exception as exc:  # a failing cell must not stop the sweep
        log.exception("sweep cell %s failed", cell)
        row.setdefault("tau_pred", math.nan)
        row.update(slope=math.nan, status="error", error=f"{type(exc).__name__}: {exc}")
        row["pass"] = False
    return row


def cmd_sweep(cfg, out: Path, tolerance=None):
    if cfg.sweep is None or cfg.problem is None:
        print("error: sweep needs problem and sweep blocks", file=sys.stderr)
        return EXIT_USAGE
    cells = cfg.sweep.cells(cfg.problem)
    if not cells:
        print("error: the sweep grid is empty", file=sys.stderr)
        return EXIT_USAGE
    with ThreadPoolExecutor(max_workers=cfg.sweep.workers) as pool:
        rows = list(pool.map(lambda c: _sweep_cell(cfg, c, tolerance), cells))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "gamma", "beta", "h", "tau_pred", "slope", "pass"])
        for r in rows:
            w.writerow([repr(r["p"]), repr(r["gamma"]), repr(r["beta"]), repr(r["h"]),
                        repr(float(r["tau_pred"])), repr(float(r["slope"])), int(r["pass"])])
    write_json(out / "sweep.json", {"cells": rows})
    failed = [r for r in rows if not r["pass"]]
    print(f"{len(rows) - len(failed)}/{len(rows)} cells passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_check_energy(cfg, out: Path, tolerance=None):
    if cfg.density is None:
        print("error: check-energy needs a density block", file=sys.stderr)
        return EXIT_USAGE
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonConvexDensityWarning)
        dens = cfg.density_object()
    ec = cfg.energy_check
    dim = dens.dim or (Domain.from_dict(cfg.problem.domain).dim if cfg.problem else 2)
    rep = check_structural_bounds(dens, ec.radii, ec.samples_per_radius, dim=dim)
    gap, (gx, gy) = convexity_gap(dens, halton_pairs(ec.pairs, dim, ec.pair_radius), return_argmin=True)
    fd = finite_difference_check(dens, halton_pairs(ec.fd_points, dim, ec.pair_radius)[0], ec.fd_step)
    record = rep.to_dict()
    record["min_gap"] = gap
    record["worst_points"]["gap"] = [gx, gy]
    record["finite_differences"] = fd
    record["finite_differences"]["pass"] = max(fd["gradient_rel_err"], fd["hessian_rel_err"]) <= ec.fd_tolerance
    if dens.kind == "appendixA":
        record["validated_nu"] = validated_nu(dens.p, dens.kappa0)
        record["nonconvex_risk"] = dens.nonconvex_risk
    record["warnings"] = [str(w.message) for w in caught]
    ok = record["lambda_hat"] > 0 and gap > 0
    record["pass"] = ok
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "energy_check.json", record)
    if not ok:
        print(
            f"non-convex regime: lambda_hat={record['lambda_hat']:.4g}, min_gap={gap:.4g}; "
            f"worst points {json.dumps(_clean(record['worst_points']))}",
            file=sys.stderr,
        )
        return EXIT_FAIL
    print(f"Upsilon={record['Upsilon_hat']:.4g} Lambda={record['Lambda_hat']:.4g} "
          f"lambda={record['lambda_hat']:.4g} gap={gap:.4g}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "exponents": cmd_exponents,
    "sweep": cmd_sweep,
    "check-energy": cmd_check_energy,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="singular-obstacle", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, metavar="PATH", help="YAML experiment file")
    ap.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    ap.add_argument("--tolerance", type=float, metavar="X", help="overrides analysis.tolerance")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.tolerance is not None and not args.tolerance > 0:
        print("error: --tolerance must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = ExperimentConfig.load(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or cfg.output.dir)
    try:
        return COMMANDS[args.command](cfg, out, args.tolerance)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
