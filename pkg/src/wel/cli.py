"""Command-line entry point: ``wel <command> [options]``.

Every run resolves its configuration as defaults < ``--config`` JSON <
explicit flags, embeds the resolved configuration in its JSON report, and
exits with 0 (pass), 1 (criterion failed), 2 (bad configuration) or
3 (solver failure).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .calculus import field_from_csv, field_to_csv, sym2_identity, sym2_identity_batch, Sym2
from .errors import InvalidArgument, SolverFailure
from .grid import grid_from_descriptor, with_conformal_factor
from .hodge import decompose, gap_estimate, random_one_form
from .inequalities import (C_TOL, _json_float, random_bump_params, random_test_function,
                           refinement_sweep, run_check, sum_of_bumps)
from .seeding import stream
from .spectral import CylinderField, cylinder_energies, cylinder_fourth_direct, first_dirichlet_eigenvalue
from .weights import GRAD_TOL, OMEGA_TOL, parse_weight_shorthand, weak_equation_residual, weight_from_descriptor

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

DOMAINS = {
    "disk": {"type": "disk", "center": [0.0, 0.0], "radius": 1.0},
    "square": {"type": "rectangle", "origin": [0.0, 0.0], "size": [1.0, 1.0]},
    "rect1x2": {"type": "rectangle", "origin": [0.0, 0.0], "size": [1.0, 2.0]},
}

# every key a config file may set, with its default
COMMON = {"seed": 0, "resolution": 128, "out": None, "json": False, "domain": "disk",
          "tol": 1e-10, "c_tol": C_TOL, "g_tol": GRAD_TOL, "omega_tol": OMEGA_TOL,
          "psi_amplitude": 0.0}
DEFAULTS = {
    "verify-weight": {"weight": "|x|", "resolutions": [64, 128], "seeds": 3, "kappa": None, "bumps": 3},
    "check": {"kind": "ckn", "weight": "|x|", "tau": 2.0, "eps": 0.5, "lambda1": "zero", "seeds": 20,
              "bumps": 3},
    "decompose": {"weight": "|x|", "eps": 0.5, "form": None, "annulus": [0.3, 0.9], "bumps": 4,
                  "stencil": "wide", "residual_tol": 1e-5},
    "lemma-fuzz": {"samples": 1_000_000, "adversarial": False},
    "logpolar": {"case": "sin-theta", "t_max": 12.0, "nt": 1024, "modes": 32, "eps": 0.0, "mode_file": None},
    "eigenvalue": {},
    "sweep": {"kind": "ckn", "weight": "|x|", "tau": 2.0, "eps": 0.5, "lambda1": "zero",
              "resolutions": [64, 128, 256]},
}


class ConfigError(Exception):
    pass


def _threads() -> int:
    try:
        n = int(os.environ.get("WEL_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else min(8, os.cpu_count() or 1)


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_pair(text):
    vals = [float(v) for v in str(text).split(",")]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file with option values (flags override it)")
    common.add_argument("--seed", type=int, help="root seed for all randomness")
    common.add_argument("--resolution", type=int, help="cells per unit length; h = 1/N")
    common.add_argument("--out", help="directory for report.json and CSV dumps")
    common.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    common.add_argument("--domain", help="disk | square | rect1x2 | JSON descriptor")
    common.add_argument("--tol", type=float, help="relative tolerance of linear solves")
    common.add_argument("--c-tol", dest="c_tol", type=float, help="discretisation slack factor (slack = c_tol*h)")
    common.add_argument("--g-tol", dest="g_tol", type=float, help="critical-node threshold on |grad w|")
    common.add_argument("--omega-tol", dest="omega_tol", type=float, help="singular-node threshold on w")
    common.add_argument("--psi-amplitude", dest="psi_amplitude", type=float,
                        help="use the metric exp(2 psi), psi = a sin(pi x) sin(pi y)")

    p = _Parser(prog="wel", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"wel {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("verify-weight", parents=[common], argument_default=S,
                       help="weak-equation residual and its O(h^2) decay")
    s.add_argument("--weight")
    s.add_argument("--resolutions", type=_int_list)
    s.add_argument("--seeds", type=int)
    s.add_argument("--kappa", type=float)

    s = sub.add_parser("check", parents=[common], argument_default=S, help="inequality checks over seeds")
    s.add_argument("--kind", choices=["ckn", "elliptic", "epsilon"])
    s.add_argument("--weight")
    s.add_argument("--tau", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--lambda1", help="computed | zero | a number")
    s.add_argument("--seeds", type=int)

    s = sub.add_parser("decompose", parents=[common], argument_default=S, help="Hodge decompositions and gap estimate")
    s.add_argument("--weight")
    s.add_argument("--eps", type=float)
    s.add_argument("--form", help="CSV one-form dump (x,y,a,b) instead of a seeded form")
    s.add_argument("--annulus", type=_float_pair, help="r0,r1 support of the seeded form")
    s.add_argument("--stencil", choices=["wide", "compact"])

    s = sub.add_parser("lemma-fuzz", parents=[common], argument_default=S, help="fuzz the 2x2 matrix identity")
    s.add_argument("--samples", type=int)
    s.add_argument("--adversarial", action="store_true", help="draw nearly colinear b and c")

    s = sub.add_parser("logpolar", parents=[common], argument_default=S, help="cylinder energies")
    s.add_argument("--case", choices=["sin-theta", "constant", "file"])
    s.add_argument("--t-max", dest="t_max", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--mode-file", dest="mode_file", help=".npy array of complex modes, shape (2M+1, nt)")

    sub.add_parser("eigenvalue", parents=[common], argument_default=S, help="first Dirichlet eigenvalue")

    s = sub.add_parser("sweep", parents=[common], argument_default=S, help="refinement table for one check")
    s.add_argument("--kind", choices=["ckn", "elliptic", "epsilon"])
    s.add_argument("--weight")
    s.add_argument("--tau", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--lambda1", help="zero | a number")
    s.add_argument("--resolutions", type=_int_list)
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cmd = args.command
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[cmd])
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config must be a JSON object")
        file_cfg.pop("command", None)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {cmd}: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update(flags)
    cfg["command"] = cmd
    _validate(cfg)
    return cfg


def _validate(cfg):
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if not isinstance(cfg["resolution"], int) or cfg["resolution"] < 4:
        raise ConfigError("resolution must be an integer >= 4")
    for key in ("seeds", "samples"):
        if key in cfg and (not isinstance(cfg[key], int) or cfg[key] < 1):
            raise ConfigError(f"{key} must be a positive integer")
    if "resolutions" in cfg and (len(cfg["resolutions"]) < 2 or min(cfg["resolutions"]) < 4):
        raise ConfigError("resolutions needs at least two values >= 4")
    if cfg.get("kind") == "elliptic" and not 0 < cfg["tau"] <= 2:
        raise ConfigError(f"tau must lie in (0, 2], got {cfg['tau']}")
    if cfg["command"] in ("check", "sweep") and cfg.get("kind") == "epsilon" and not cfg["eps"] > 0:
        raise ConfigError("eps must be positive")
    if cfg["command"] == "decompose" and not cfg["eps"] > 0:
        raise ConfigError("eps must be positive")
    if cfg["command"] == "logpolar" and cfg["eps"] < 0:
        raise ConfigError("eps must be nonnegative")
    for key in ("tol", "c_tol", "g_tol", "omega_tol"):
        if not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive")


def _domain(cfg) -> dict:
    d = cfg["domain"]
    if isinstance(d, dict):
        return d
    if d in DOMAINS:
        return DOMAINS[d]
    try:
        out = json.loads(d)
    except (TypeError, json.JSONDecodeError):
        raise ConfigError(f"unknown domain {d!r}") from None
    if not isinstance(out, dict):
        raise ConfigError(f"unknown domain {d!r}")
    return out


def _weight_desc(cfg) -> dict:
    w = cfg["weight"]
    return w if isinstance(w, dict) else parse_weight_shorthand(str(w))


def _grid(cfg, n=None):
    grid = grid_from_descriptor(_domain(cfg), 1.0 / (n or cfg["resolution"]))
    a = cfg.get("psi_amplitude", 0.0)
    if a:
        grid = with_conformal_factor(grid, a * np.sin(np.pi * grid.x) * np.sin(np.pi * grid.y))
    return grid


def _weight(cfg, grid):
    return weight_from_descriptor(_weight_desc(cfg), grid, cfg["omega_tol"], cfg["g_tol"])


def _lambda1(cfg, grid):
    mode = cfg["lambda1"]
    if mode in ("zero", 0, 0.0):
        return 0.0, "zero"
    if mode == "computed":
        return first_dirichlet_eigenvalue(grid, cg_tol=cfg["tol"]).lambda1, "computed"
    try:
        return float(mode), "explicit"
    except (TypeError, ValueError):
        raise ConfigError(f"lambda1 must be computed, zero or a number, got {mode!r}") from None


def _map(fn, items):
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        return list(pool.map(fn, items))


# -- commands ----------------------------------------------------------------


def cmd_verify_weight(cfg):
    res = sorted(cfg["resolutions"])
    grids = [_grid(cfg, n) for n in res]
    weights = [_weight(cfg, g) for g in grids]
    coarse = grids[0]

    def one(k):
        params = random_bump_params(coarse, int(stream(cfg["seed"], 2, k).integers(2**63)),
                                    cfg["bumps"], weight=weights[0])
        vals = []
        for g, w in zip(grids, weights):
            r = weak_equation_residual(w, sum_of_bumps(g, params), cfg["kappa"])
            vals.append({"h": g.h, "residual": r.value, "trusted": r.trusted})
        ratios = [a["residual"] / b["residual"] if b["residual"] != 0 else None for a, b in zip(vals, vals[1:])]
        expected = [(a["h"] / b["h"]) ** 2 for a, b in zip(vals, vals[1:])]
        if all(v["residual"] == 0 for v in vals):
            ok = True
        else:
            ok = all(r is not None and abs(r - e) <= 0.25 * e for r, e in zip(ratios, expected))
        ok = ok and all(v["trusted"] for v in vals)
        return {"seed_index": k, "residuals": vals, "ratios": ratios, "passed": ok}

    runs = _map(one, range(cfg["seeds"]))
    passed = all(r["passed"] for r in runs)
    return passed, {"runs": runs}, [f"seed {r['seed_index']}: ratios {r['ratios']} {'pass' if r['passed'] else 'FAIL'}"
                                    for r in runs]


def cmd_check(cfg):
    grid = _grid(cfg)
    w = _weight(cfg, grid)
    lam, lam_mode = _lambda1(cfg, grid)
    params = {"lambda1": lam, "tau": cfg["tau"], "eps": cfg["eps"], "c_tol": cfg["c_tol"]}

    def one(k):
        seed = int(stream(cfg["seed"], 3, k).integers(2**63))
        f = random_test_function(grid, seed, cfg["bumps"], weight=w)
        rep = run_check(cfg["kind"], w, f, params)
        rep.seed = seed
        return rep

    reports = _map(one, range(cfg["seeds"]))
    passed = all(r.passed for r in reports)
    lines = [f"{r.which} seed={r.seed} lhs={r.lhs:.6g} rhs={r.rhs:.6g} ratio={r.ratio:.4g} {r.verdict}"
             for r in reports]
    return passed, {"lambda1_mode": lam_mode, "reports": [r.to_dict() for r in reports]}, lines


def cmd_decompose(cfg):
    grid = _grid(cfg)
    w = _weight(cfg, grid)
    if cfg["form"]:
        A = field_from_csv(grid, cfg["form"])
        if A.shape != (2,) + grid.shape:
            raise InvalidArgument(f"{cfg['form']} holds a scalar field, not a one-form")
    else:
        annulus = cfg["annulus"] if _domain(cfg).get("type") == "disk" else None
        A = random_one_form(grid, cfg["seed"], cfg["bumps"], annulus=annulus)
    res = decompose(grid, A, w, tol=cfg["tol"], stencil=cfg["stencil"])
    gap = gap_estimate(grid, res.xi1, res.phi1, res.phi2, w, cfg["eps"], cfg["c_tol"])
    rtol = cfg["residual_tol"]
    ok_u = res.recon_residual_unweighted <= rtol * res.norm_A
    ok_w = res.recon_residual_weighted <= rtol * res.norm_omega_A
    passed = ok_u and ok_w and gap.verdict == "pass"
    body = res.to_dict()
    body["gap"] = gap.to_dict()
    body["checks"] = {"residual_unweighted": ok_u, "residual_weighted": ok_w, "gap_end_to_end": gap.verdict == "pass",
                      "gap_chain": gap.chain_ok, "gap_identity": gap.identity_ok}
    if cfg["out"]:
        out = Path(cfg["out"])
        for name in ("xi1", "xi2", "phi1", "phi2"):
            field_to_csv(grid, getattr(res, name), out / f"{name}.csv")
        field_to_csv(grid, A, out / "A.csv")
    lines = [f"residual (unweighted) {res.recon_residual_unweighted:.3e} / |A| {res.norm_A:.3e}",
             f"residual (weighted)   {res.recon_residual_weighted:.3e} / |wA| {res.norm_omega_A:.3e}",
             f"gap: lhs {gap.lhs:.6g} <= {gap.factor:.4g} * rhs4 {gap.rhs4:.6g}: {gap.verdict}",
             f"gap identity mid {gap.mid:.6g} vs rhs4 {gap.rhs4:.6g} (rel {gap.identity_rel:.3g})"]
    return passed, body, lines


def cmd_lemma_fuzz(cfg):
    n = cfg["samples"]
    rng = stream(cfg["seed"], 4)
    a = rng.uniform(-10, 10, size=(n, 3))
    b = rng.uniform(-10, 10, size=(n, 2))
    if cfg["adversarial"]:
        c = b * rng.uniform(-2, 2, size=(n, 1)) + 1e-7 * rng.standard_normal((n, 2))
    else:
        c = rng.uniform(-10, 10, size=(n, 2))
    lhs, rhs = sym2_identity_batch(a[:, 0], a[:, 1], a[:, 2], b, c)
    defect = np.abs(lhs - rhs) / (np.abs(lhs) + np.abs(rhs) + 1.0)
    worst = int(np.argmax(defect))
    hand = sym2_identity(Sym2(2.0, 1.0, 3.0), (1.0, 2.0), (3.0, -1.0))
    passed = bool(defect[worst] <= 1e-12) and hand == (-245.0, -245.0)
    body = {"samples": n, "max_defect": float(defect[worst]), "hand_triple": {"lhs": hand[0], "rhs": hand[1]},
            "worst": {"A": a[worst].tolist(), "b": b[worst].tolist(), "c": c[worst].tolist(),
                      "lhs": float(lhs[worst]), "rhs": float(rhs[worst])}}
    lines = [f"{n} samples, max relative defect {defect[worst]:.3e}", f"hand triple: {hand}"]
    if not passed:
        lines.append(f"worst triple: {body['worst']}")
    return passed, body, lines


def _case_field(cfg, case):
    T = cfg["t_max"]
    if case == "sin-theta":
        return CylinderField.from_function(lambda t, th: np.sin(th) + 0 * t, T, cfg["nt"], cfg["modes"])
    if case == "constant":
        return CylinderField.from_function(lambda t, th: 1.0 + 0 * t + 0 * th, T, cfg["nt"], cfg["modes"])
    if not cfg["mode_file"]:
        raise ConfigError("case 'file' needs --mode-file")
    try:
        modes = np.load(cfg["mode_file"])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read mode file: {exc}") from None
    if modes.ndim != 2 or modes.shape[0] % 2 != 1 or modes.shape[1] < 4:
        raise ConfigError("mode file must hold an array of shape (2M+1, nt) with nt >= 4")
    return CylinderField(T, modes.astype(complex))


def cmd_logpolar(cfg):
    T = cfg["t_max"]
    cases = {}
    for case in dict.fromkeys(["sin-theta", cfg["case"]]):
        u = _case_field(cfg, case)
        e0 = cylinder_energies(u, 0.0)
        entry = {"zeroth": e0.zeroth, "first": e0.first, "fourth": e0.fourth,
                 "fourth_direct": cylinder_fourth_direct(u)}
        if cfg["eps"] > 0:
            ee = cylinder_energies(u, cfg["eps"])
            entry["eps"] = {"eps": cfg["eps"], "zeroth": ee.zeroth, "first": ee.first}
        cases[case] = entry
    sin = cases["sin-theta"]
    passed = sin["fourth"] <= 1e-10 and sin["zeroth"] > 0
    body = {"t_max": T, "cases": cases, "reference": {"sin-theta zeroth": math.pi * T, "constant fourth": 2 * math.pi * T}}
    lines = [f"{k}: zeroth {v['zeroth']:.10g} first {v['first']:.10g} fourth {v['fourth']:.3e}" for k, v in cases.items()]
    return passed, body, lines


def cmd_eigenvalue(cfg):
    grid = _grid(cfg)
    res = first_dirichlet_eigenvalue(grid, cg_tol=cfg["tol"])
    body = res.report(grid)
    return True, body, [f"lambda1 = {res.lambda1:.10g} ({res.iterations} inverse iterations, h = {grid.h:g})"]


def cmd_sweep(cfg):
    if cfg["lambda1"] == "computed":
        raise ConfigError("sweep needs an explicit lambda1 (zero or a number)")
    lam, _ = _lambda1(cfg, None)
    params = {"lambda1": lam, "tau": cfg["tau"], "eps": cfg["eps"], "c_tol": cfg["c_tol"]}
    rows = refinement_sweep(cfg["kind"], _weight_desc(cfg), params, cfg["resolutions"], domain=_domain(cfg))
    passed = all(r["verdict"] in ("pass", "pass-trivially") for r in rows)
    body = {"rows": [{k: _json_float(v) if k != "verdict" else v for k, v in r.items()} for r in rows]}
    lines = [f"h={r['h']:.5g} lhs={r['lhs']:.6g} rhs={r['rhs']:.6g} ratio={r['ratio']:.4g} defect={r['defect']:.3g}"
             for r in rows]
    return passed, body, lines


COMMANDS = {
    "verify-weight": cmd_verify_weight,
    "check": cmd_check,
    "decompose": cmd_decompose,
    "lemma-fuzz": cmd_lemma_fuzz,
    "logpolar": cmd_logpolar,
    "eigenvalue": cmd_eigenvalue,
    "sweep": cmd_sweep,
}


def _to_json(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return _json_float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _emit(cfg, code, body, lines):
    report = {"command": cfg["command"], "exit_code": code, "passed": code == EXIT_PASS,
              "config": cfg, "result": body,
              "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()), "version": __version__}
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False, default=_to_json)
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text + "\n")
    if cfg.get("json"):
        print(text)
    else:
        for line in lines:
            print(line)
        print("PASS" if code == EXIT_PASS else "FAIL")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        if cfg.get("out"):
            Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
        passed, body, lines = COMMANDS[cfg["command"]](cfg)
    except (ConfigError, InvalidArgument, OSError) as exc:
        print(f"wel: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"wel: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    code = EXIT_PASS if passed else EXIT_FAIL
    _emit(cfg, code, body, lines)
    return code


if __name__ == "__main__":
    sys.exit(main())
