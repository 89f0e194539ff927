"""Command line drivers for the benchmark scenarios.

Each run writes ``errors.csv`` (steady and property scenarios) or
``diag.csv`` (unsteady scenarios) plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 violated property, 2 configuration error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import analysis, assembly, flows
from .errors import (BackendFailure, Blowup, DimensionLimit, MeshGenerationFailure,
                     MissingTag, NotNormalContinuous, ParseError, SingularSystem,
                     TopologyError, UnsupportedOrder)
from .mesh import parse_mesh_spec
from .solvers import (ImexIntegrator, initial_state, run_unsteady,
                      solve_stokes)
from .spaces import HDGSpace

SCENARIOS = ("kovasznay", "lattice", "cylinder", "infsup", "reconstruct-check", "manufactured")

DEFAULTS = {
    "kovasznay": {"k": "2..9", "nu": flows.KOVASZNAY_NU},
    "manufactured": {"k": "2..3", "nu": 1.0, "n": 4},
    "infsup": {"k": "1..6", "mesh": "square:4"},
    "reconstruct-check": {"k": "1..8", "mesh": "square:3"},
    "lattice": {"k": "4", "nu": flows.LATTICE_NU, "n": 10, "dt": 1e-4, "tend": 0.1,
                "scheme": "IMEX1"},
    "cylinder": {"k": "3", "nu": flows.CHANNEL_NU, "mesh": "channel:0.075", "dt": 5e-4,
                 "tend": 0.5, "scheme": "SBDF2"},
}
FULL_BENCHMARK_TEND = 8.0

SOLVER_ERRORS = (SingularSystem, BackendFailure, Blowup, MeshGenerationFailure,
                 NotNormalContinuous, DimensionLimit)
CONFIG_ERRORS = (ValueError, ParseError, TopologyError, UnsupportedOrder, MissingTag,
                 FileNotFoundError)


class ConfigError(Exception):
    pass


def parse_k(text):
    """``"4"`` or ``"a..b"`` (inclusive)."""
    text = str(text)
    if ".." in text:
        a, b = text.split("..", 1)
        ks = list(range(int(a), int(b) + 1))
    else:
        ks = [int(text)]
    if not ks or min(ks) < 1:
        raise ConfigError(f"invalid order range {text!r}")
    return ks


def build_parser():
    p = argparse.ArgumentParser(prog="relaxhdg", description=__doc__.splitlines()[0])
    p.add_argument("scenario_pos", nargs="?", choices=SCENARIOS, metavar="SCENARIO")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--config", help="manifest.json of an earlier run to repeat")
    p.add_argument("--k")
    p.add_argument("--mesh")
    p.add_argument("--nt", type=int, default=20, help="target element count (kovasznay)")
    p.add_argument("--n", type=int, help="subdivisions per side of the unit square")
    p.add_argument("--levels", type=int, default=4, help="uniform refinements (manufactured)")
    p.add_argument("--nu", type=float)
    p.add_argument("--lambda", dest="lam", type=float, default=assembly.DEFAULT_LAMBDA)
    p.add_argument("--variant", default="B,PR")
    p.add_argument("--semidisc", default="d", choices=("a", "b", "c", "d"))
    p.add_argument("--scheme", choices=("IMEX1", "SBDF2"))
    p.add_argument("--dt", type=float)
    p.add_argument("--tend", type=float)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--dump-system", dest="dump_system")
    p.add_argument("--full-benchmark", action="store_true")
    p.add_argument("--quiet", action="store_true")
    return p


def resolve_config(args):
    """Merge flags, scenario defaults and an optional earlier manifest."""
    cfg = {}
    if args.config:
        cfg.update(json.loads(Path(args.config).read_text())["config"])
    given = {k: v for k, v in vars(args).items() if v is not None}
    parser_defaults = vars(build_parser().parse_args([]))
    for key, val in given.items():
        if key in ("config", "scenario_pos"):
            continue
        if key in cfg and parser_defaults.get(key) == val:
            continue        # keep manifest value over an untouched default
        cfg[key] = val
    scenario = args.scenario or args.scenario_pos or cfg.get("scenario")
    if scenario is None:
        raise ConfigError("no scenario given")
    cfg["scenario"] = scenario
    for key, val in DEFAULTS[scenario].items():
        cfg.setdefault(key, val)
    if scenario == "cylinder" and cfg.get("full_benchmark"):
        cfg["tend"] = FULL_BENCHMARK_TEND
    for key in ("dt", "tend"):
        if scenario in ("lattice", "cylinder") and not cfg[key] > 0:
            raise ConfigError(f"--{key} must be positive")
    cfg["k"] = str(cfg["k"])
    parse_k(cfg["k"])
    variants = cfg["variant"].split(",")
    if not set(variants) <= {"B", "PR"}:
        raise ConfigError(f"unknown variant list {cfg['variant']!r}")
    if cfg["lam"] <= 0:
        raise ConfigError("--lambda must be positive")
    return cfg


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or not math.isfinite(v):
        return ""
    return f"{v:.12e}"


def _dump(cfg, system):
    if cfg.get("dump_system"):
        assembly.dump_matrix(cfg["dump_system"], system.matrix(),
                             f"scenario {cfg['scenario']} k {system.space.order}")


# ---------------------------------------------------------------------------
# scenarios: each returns (summary dict, exit code)

ERROR_HEADER = ["variant", "k", "h", "ndof", "err_l2_u", "err_h1_u", "err_triple",
                "err_l2_p", "err_h1_u_rec", "rate"]


def run_kovasznay(cfg, out, log):
    flow = flows.kovasznay(cfg["nu"])
    mesh = parse_mesh_spec(cfg["mesh"]) if cfg.get("mesh") else flows.kovasznay_mesh(cfg["nt"])
    rows, summary = [], {"lambda_kov": flows.kovasznay_lambda(cfg["nu"]),
                         "n_elements": mesh.n_elements}
    for variant in cfg["variant"].split(","):
        prev = None
        for k in parse_k(cfg["k"]):
            sol = solve_stokes(mesh, k, cfg["nu"], flow.forcing, flow.velocity, variant,
                               cfg["lam"])
            if prev is None:
                _dump(cfg, sol.system)
            e = analysis.solution_errors(flow, sol)
            er = analysis.solution_errors(flow, sol, reconstructed=True)
            factor = e.h1_u / prev if prev is not None else float("nan")
            prev = e.h1_u
            rows.append([variant, k, e.h, e.ndofs, e.l2_u, e.h1_u, e.triple_u, e.l2_p,
                         er.h1_u, factor])
            log(f"{variant} k={k} h1={e.h1_u:.3e} rec={er.h1_u:.3e}")
    _write_csv(out / "errors.csv", ERROR_HEADER, rows)
    return summary, 0


def run_manufactured(cfg, out, log):
    flow = flows.manufactured(cfg["nu"])
    rows, summary = [], {}
    for variant in cfg["variant"].split(","):
        for k in parse_k(cfg["k"]):
            reports = []
            for level in range(cfg["levels"]):
                mesh = parse_mesh_spec(f"square:{cfg['n'] * 2 ** level}")
                sol = solve_stokes(mesh, k, cfg["nu"], flow.forcing, flow.velocity, variant,
                                   cfg["lam"])
                if not reports and k == parse_k(cfg["k"])[0]:
                    _dump(cfg, sol.system)
                e = analysis.solution_errors(flow, sol)
                rate = (math.log(reports[-1].h1_u / e.h1_u) / math.log(reports[-1].h / e.h)
                        if reports else float("nan"))
                reports.append(e)
                rows.append([variant, k, e.h, e.ndofs, e.l2_u, e.h1_u, e.triple_u, e.l2_p,
                             float("nan"), rate])
                log(f"{variant} k={k} h={e.h:.4f} h1={e.h1_u:.3e} p={e.l2_p:.3e}")
            h = [r.h for r in reports]
            summary[f"{variant}_k{k}"] = {
                "rate_h1": analysis.fit_rate(h, [r.h1_u for r in reports]),
                "rate_l2p": analysis.fit_rate(h, [r.l2_p for r in reports])}
    _write_csv(out / "errors.csv", ERROR_HEADER, rows)
    return summary, 0


def run_infsup(cfg, out, log):
    mesh = parse_mesh_spec(cfg["mesh"])
    rows = []
    for k in parse_k(cfg["k"]):
        r = analysis.estimate_infsup(mesh, k, cfg["lam"])
        rows.append([k, r.h, r.lam, r.c_lbb, r.c_co])
        log(f"k={k} c_lbb={r.c_lbb:.4f} c_co={r.c_co:.4f}")
    _write_csv(out / "errors.csv", ["k", "h", "lambda", "c_lbb", "c_co"], rows)
    lbb = [r[3] for r in rows]
    summary = {"lbb_ratio": max(lbb) / min(lbb) if min(lbb) > 0 else float("inf"),
               "min_c_co": min(r[4] for r in rows)}
    ok = min(lbb) > 0 and summary["min_c_co"] > 0
    return summary, 0 if ok else 1


def run_reconstruct_check(cfg, out, log):
    mesh = parse_mesh_spec(cfg["mesh"])
    rows, bad = [], []
    for k in parse_k(cfg["k"]):
        r = analysis.check_reconstruction(mesh, k, cfg["samples"], cfg["seed"])
        v = r.violations()
        bad += [f"k={k}:{name}" for name in v]
        rows.append([k, r.samples, r.normal_jump, r.facet_moment_defect,
                     r.interior_moment_defect, r.max_ratio, len(v)])
        log(f"k={k} ratio={r.max_ratio:.4f} violations={v}")
    _write_csv(out / "errors.csv", ["k", "samples", "normal_jump", "facet_moment_defect",
                                    "interior_moment_defect", "max_ratio", "violations"], rows)
    ratios = [r[5] for r in rows]
    spread = max(ratios) / min(ratios)
    if spread > 2.0:
        bad.append("ratio_spread")
    summary = {"max_ratio": max(ratios), "ratio_spread": spread, "violations": bad}
    return summary, 1 if bad else 0


def run_lattice(cfg, out, log):
    if cfg.get("mesh"):
        mesh = parse_mesh_spec(cfg["mesh"])
    else:
        mesh = parse_mesh_spec(f"square-periodic:{cfg['n']}")
    k = parse_k(cfg["k"])[0]
    space = HDGSpace.build(mesh, k)
    flow = flows.lattice_initial()
    integ = ImexIntegrator(space, cfg["nu"], cfg["dt"], cfg["scheme"], cfg["semidisc"],
                           lam=cfg["lam"])
    state = initial_state(integ, flow.velocity)
    _dump(cfg, integ.system(1.0))
    norm0 = math.sqrt(2.0 * state.energy)

    def exact(s):
        return (norm0 * flows.lattice_decay(s.t, cfg["nu"]),)

    rows, state = run_unsteady(integ, state, cfg["tend"], cfg["stride"], out / "diag.csv",
                               exact, functional_names=("exact",))
    dev = max(abs(r[1] / r[4] - 1.0) for r in rows)
    incr = max([(b[1] - a[1]) / a[1] for a, b in zip(rows, rows[1:])] + [0.0])
    log(f"steps={state.step} final={rows[-1][1]:.10f} max_dev={dev:.3e}")
    return {"initial_norm": norm0, "final_norm": rows[-1][1], "max_relative_deviation": dev,
            "max_relative_increase": incr, "steps": state.step}, 0


def run_cylinder(cfg, out, log):
    if cfg.get("full_benchmark"):
        warnings.warn("full benchmark horizon: expect many hours of runtime", RuntimeWarning,
                      stacklevel=2)
    mesh = parse_mesh_spec(cfg["mesh"])
    k = parse_k(cfg["k"])[0]
    space = HDGSpace.build(mesh, k)
    nu = cfg["nu"]
    bc = flows.channel_inflow
    sol = solve_stokes(mesh, k, nu, None, bc, "B", cfg["lam"], space=space)
    integ = ImexIntegrator(space, nu, cfg["dt"], cfg["scheme"], cfg["semidisc"], bc=bc,
                           lam=cfg["lam"])
    _dump(cfg, integ.system(1.0 if cfg["scheme"] == "IMEX1" else 1.5))
    w, f = sol.reconstructed()
    state = integ.make_state(0.0, np.concatenate([w.coefficients, f.coefficients]),
                             sol.pressure.coefficients)

    def forces(s):
        return analysis.drag_lift(space, s.velocity, s.pressure, nu, "cylinder", 20.0)

    rows, state = run_unsteady(integ, state, cfg["tend"], cfg["stride"], out / "diag.csv",
                               forces)
    cd = np.array([r[4] for r in rows])
    cl = np.array([r[5] for r in rows])
    log(f"steps={state.step} cd in [{cd.min():.4f}, {cd.max():.4f}]")
    return {"n_elements": mesh.n_elements, "cd_max": float(cd.max()), "cd_min": float(cd.min()),
            "cd_mean": float(cd.mean()), "cl_max": float(cl.max()), "cl_min": float(cl.min()),
            "final_norm": rows[-1][1], "steps": state.step}, 0


RUNNERS = {"kovasznay": run_kovasznay, "manufactured": run_manufactured,
           "infsup": run_infsup, "reconstruct-check": run_reconstruct_check,
           "lattice": run_lattice, "cylinder": run_cylinder}


def _versions():
    import scipy
    import sympy
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "sympy": sympy.__version__}


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, *CONFIG_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    log = (lambda msg: None) if cfg.get("quiet") else (lambda msg: print(msg, flush=True))
    t0 = time.perf_counter()
    try:
        summary, code = RUNNERS[cfg["scenario"]](cfg, out, log)
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, *CONFIG_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest = {"config": cfg, "versions": _versions(), "summary": summary,
                "exit_code": code, "wall_time_s": time.perf_counter() - t0}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
