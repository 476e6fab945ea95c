"""Command-line entry point: JSON configuration in, JSON + CSV artifacts out.

Commands:
    solve            run one coupled solve and report norms and residuals
    verify-carleman  sweep the weighted-estimate ratio over (s, lam)
    stability-holder interior-time stability ladder for the default problem
    stability-log    initial-time logarithmic stability ladder
    convergence      manufactured-solution refinement study
    coeff-check      hypothesis ratios and the operator-conjugation residual

Every run writes result.json (stable key order, every number tagged with a
unit or norm name) plus one RFC-4180 CSV per curve, each CSV with a two-line
header (column names, then units).  The result document embeds the verbatim
config and its SHA-256 over a canonical serialization; apart from the
timestamp field, identical configs produce byte-identical result.json.

Exit codes: 0 success; 2 configuration parse/validation error; 3 solver
non-convergence; 4 more than half of the sweep cells overflow the weight.
Errors are also emitted to stderr as a JSON diagnostic.  --threads is
accepted and recorded for provenance, but execution is serial: every command
here is deterministic and fast at desk scale, and a fixed schedule keeps
reductions ordered.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from degenmfg import __version__
from degenmfg.carleman import CarlemanBundle, s0_estimate, sweep_parameters
from degenmfg.domain import (
    DegenerateCoefficient,
    NormKind,
    SpaceTimeGrid,
    weighted_norm,
)
from degenmfg.manufactured import (
    IterConfig,
    catalog,
    convergence_study,
    make_case,
    solve_case,
)
from degenmfg.mfg import (
    MfgCoefficients,
    check_coefficient_bounds,
    solve_linearized_mfg,
    solve_nonlinear_mfg,
)
from degenmfg.solvers import SolverError, isomorphism_residual
from degenmfg.stability import (
    DEFAULT_HOLDER_LADDER,
    DEFAULT_LOG_LADDER,
    default_backward_spec,
    run_holder_experiment,
    run_log_experiment,
)

__all__ = ["main"]

N_X_CAP = 4096
N_T_CAP = 8192

_LINEAR_COEFF_KEYS = ("d1", "d2", "c1", "c2", "b", "rho")
_NONLINEAR_COEFF_KEYS = ("p", "d")
_DATA_KEYS = ("m0", "h", "F", "G")
_ITER_KEYS = ("max_sweeps", "damping", "tolerance", "divergence_factor")


class ConfigError(Exception):
    """Validation failure; carries one message per offending field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------- leaf checks

def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _keys(obj: dict, path: str, required, optional, errors):
    pre = path + "." if path else ""
    for k in required:
        if k not in obj:
            errors.append(f"missing required field: {pre}{k}")
    for k in obj:
        if k not in required and k not in optional:
            errors.append(f"unknown field: {pre}{k}")


def _num_field(obj, path, key, errors, lo=None, hi=None, lo_open=False):
    pre = path + "." if path else ""
    if key not in obj:
        return None
    v = obj[key]
    if not _is_num(v):
        errors.append(f"{pre}{key}: must be a finite number")
        return None
    if lo is not None and (v <= lo if lo_open else v < lo):
        errors.append(f"{pre}{key}: must be {'>' if lo_open else '>='} {lo}")
        return None
    if hi is not None and v > hi:
        errors.append(f"{pre}{key}: must be <= {hi}")
        return None
    return float(v)


def _int_field(obj, path, key, errors, lo, hi):
    pre = path + "." if path else ""
    if key not in obj:
        return None
    v = obj[key]
    if not _is_int(v) or v < lo or v > hi:
        errors.append(f"{pre}{key}: must be an integer in [{lo}, {hi}]")
        return None
    return int(v)


# --------------------------------------------------------- section validators

def _validate_problem(cfg, errors):
    prob = cfg.get("problem")
    if not isinstance(prob, dict):
        errors.append("problem: must be an object")
        return
    fam = prob.get("family")
    if fam not in ("power", "wright_fischer", "quadratic_oil"):
        errors.append(
            "problem.family: must be one of power, wright_fischer, quadratic_oil"
        )
        return
    if fam == "power":
        _keys(prob, "problem", ("family", "T", "beta", "delta"), (), errors)
        _num_field(prob, "problem", "beta", errors, lo=2.0)
        _num_field(prob, "problem", "delta", errors, lo=2.0)
    elif fam == "quadratic_oil":
        _keys(prob, "problem", ("family", "T", "gamma"), (), errors)
        _num_field(prob, "problem", "gamma", errors, lo=0.0, lo_open=True)
    else:
        _keys(prob, "problem", ("family", "T"), (), errors)
    _num_field(prob, "problem", "T", errors, lo=0.0, lo_open=True)


def _validate_grid(cfg, errors):
    grid = cfg.get("grid")
    if not isinstance(grid, dict):
        errors.append("grid: must be an object")
        return
    _keys(grid, "grid", ("n_x", "n_t"), (), errors)
    _int_field(grid, "grid", "n_x", errors, 4, N_X_CAP)
    _int_field(grid, "grid", "n_t", errors, 3, N_T_CAP)


_PROFILE_PARAMS = {
    "zero": (),
    "const": ("value",),
    "bubble": ("scale",),
    "a": ("scale",),
    "sqrt_a": ("scale",),
    "sin": ("scale", "k"),
    "a_sin": ("scale", "k"),
}


def _validate_profile(obj, path, errors):
    if not isinstance(obj, dict):
        errors.append(f"{path}: must be an object with a 'kind' field")
        return
    kind = obj.get("kind")
    if kind not in _PROFILE_PARAMS:
        errors.append(
            f"{path}.kind: must be one of {', '.join(sorted(_PROFILE_PARAMS))}"
        )
        return
    params = _PROFILE_PARAMS[kind]
    _keys(obj, path, ("kind",) + params, (), errors)
    for p in params:
        if p == "k":
            _int_field(obj, path, p, errors, 1, 64)
        elif p in obj and not _is_num(obj[p]):
            errors.append(f"{path}.{p}: must be a finite number")


def _validate_profile_map(cfg, section, allowed, errors):
    block = cfg.get(section)
    if block is None:
        return
    if not isinstance(block, dict):
        errors.append(f"{section}: must be an object")
        return
    _keys(block, section, (), allowed, errors)
    for k, v in block.items():
        if k in allowed:
            _validate_profile(v, f"{section}.{k}", errors)


def _validate_iter(cfg, errors):
    it = cfg.get("iter")
    if it is None:
        return
    if not isinstance(it, dict):
        errors.append("iter: must be an object")
        return
    _keys(it, "iter", (), _ITER_KEYS, errors)
    _int_field(it, "iter", "max_sweeps", errors, 1, 100000)
    _num_field(it, "iter", "damping", errors, lo=0.0, lo_open=True, hi=1.0)
    _num_field(it, "iter", "tolerance", errors, lo=0.0, lo_open=True)
    _num_field(it, "iter", "divergence_factor", errors, lo=1.0, lo_open=True)


def _validate_common(cfg, command, errors, extra_optional=()):
    if not isinstance(cfg, dict):
        errors.append("config: top level must be an object")
        raise ConfigError(errors)
    declared = cfg.get("command")
    if declared != command:
        errors.append(
            f"command: config declares {declared!r} but the CLI invoked {command!r}"
        )
    if "seed" in cfg:
        _int_field(cfg, "", "seed", errors, 0, 2**63 - 1)
    if "out_dir" in cfg and not isinstance(cfg["out_dir"], str):
        errors.append("out_dir: must be a string")


def _validate_eps_ladder(cfg, errors, key="eps_ladder"):
    if key not in cfg:
        return
    ladder = cfg[key]
    if not isinstance(ladder, list) or not ladder:
        errors.append(f"{key}: must be a non-empty list of numbers")
        return
    for i, e in enumerate(ladder):
        if not _is_num(e) or e < 0.0:
            errors.append(f"{key}[{i}]: must be a number >= 0")


def _validate_case(cfg, errors):
    name = cfg.get("case")
    if not isinstance(name, str) or name not in catalog():
        errors.append(f"case: must be one of {', '.join(catalog())}")


# ------------------------------------------------------ per-command validators

def _validate_solve(cfg):
    errors: list = []
    _validate_common(cfg, "solve", errors)
    _keys(
        cfg, "",
        ("command", "problem", "grid", "system"),
        ("coefficients", "data", "iter", "seed", "out_dir"),
        errors,
    )
    _validate_problem(cfg, errors)
    _validate_grid(cfg, errors)
    system = cfg.get("system")
    if system not in ("linear", "nonlinear"):
        errors.append("system: must be 'linear' or 'nonlinear'")
    else:
        allowed = _LINEAR_COEFF_KEYS if system == "linear" else _NONLINEAR_COEFF_KEYS
        _validate_profile_map(cfg, "coefficients", allowed, errors)
    _validate_profile_map(cfg, "data", _DATA_KEYS, errors)
    _validate_iter(cfg, errors)
    if errors:
        raise ConfigError(errors)


def _validate_verify_carleman(cfg):
    errors: list = []
    _validate_common(cfg, "verify-carleman", errors)
    _keys(
        cfg, "",
        ("command", "case", "grid", "s_values", "lam_values"),
        ("iter", "seed", "out_dir"),
        errors,
    )
    _validate_case(cfg, errors)
    _validate_grid(cfg, errors)
    for key in ("s_values", "lam_values"):
        vals = cfg.get(key)
        if not isinstance(vals, list) or not vals:
            errors.append(f"{key}: must be a non-empty list of positive numbers")
            continue
        for i, v in enumerate(vals):
            if not _is_num(v) or v <= 0.0:
                errors.append(f"{key}[{i}]: must be a positive number")
    _validate_iter(cfg, errors)
    if errors:
        raise ConfigError(errors)


def _validate_stability(cfg, command):
    errors: list = []
    _validate_common(cfg, command, errors)
    if command == "stability-holder":
        required = ("command", "grid", "t0")
        optional = ("eps_ladder", "experiment", "iter", "seed", "out_dir")
    else:
        required = ("command", "grid")
        optional = ("alpha", "eps_ladder", "experiment", "iter", "seed", "out_dir")
    _keys(cfg, "", required, optional, errors)
    _validate_grid(cfg, errors)
    if command == "stability-holder":
        t0 = _num_field(cfg, "", "t0", errors, lo=0.0, lo_open=True)
        # default experiment horizon is T = 1
        if t0 is not None and t0 >= 1.0:
            errors.append("t0: must be strictly less than the horizon T=1")
    else:
        a = _num_field(cfg, "", "alpha", errors, lo=0.0, lo_open=True)
        if a is not None and a >= 1.0:
            errors.append("alpha: must lie strictly inside (0, 1)")
    if "experiment" in cfg and cfg["experiment"] != "default":
        errors.append(
            "experiment: only \"default\" is supported here; use the library API "
            "for custom problems"
        )
    _validate_eps_ladder(cfg, errors)
    _validate_iter(cfg, errors)
    if errors:
        raise ConfigError(errors)


def _validate_convergence(cfg):
    errors: list = []
    _validate_common(cfg, "convergence", errors)
    _keys(
        cfg, "",
        ("command", "case", "mode"),
        ("ladder", "iter", "seed", "out_dir"),
        errors,
    )
    _validate_case(cfg, errors)
    if cfg.get("mode") not in ("space", "time"):
        errors.append("mode: must be 'space' or 'time'")
    if "ladder" in cfg:
        ladder = cfg["ladder"]
        if not isinstance(ladder, list) or len(ladder) < 3:
            errors.append("ladder: must be a list of at least 3 [n_x, n_t] pairs")
        else:
            for i, lvl in enumerate(ladder):
                if (
                    not isinstance(lvl, list)
                    or len(lvl) != 2
                    or not all(_is_int(v) for v in lvl)
                    or not (4 <= lvl[0] <= N_X_CAP)
                    or not (3 <= lvl[1] <= N_T_CAP)
                ):
                    errors.append(
                        f"ladder[{i}]: must be [n_x, n_t] with "
                        f"4 <= n_x <= {N_X_CAP} and 3 <= n_t <= {N_T_CAP}"
                    )
    _validate_iter(cfg, errors)
    if errors:
        raise ConfigError(errors)


def _validate_coeff_check(cfg):
    errors: list = []
    _validate_common(cfg, "coeff-check", errors)
    _keys(
        cfg, "",
        ("command", "problem", "grid", "system"),
        ("coefficients", "samples", "seed", "out_dir"),
        errors,
    )
    _validate_problem(cfg, errors)
    _validate_grid(cfg, errors)
    system = cfg.get("system")
    if system not in ("linear", "nonlinear"):
        errors.append("system: must be 'linear' or 'nonlinear'")
    else:
        allowed = _LINEAR_COEFF_KEYS if system == "linear" else _NONLINEAR_COEFF_KEYS
        _validate_profile_map(cfg, "coefficients", allowed, errors)
    _int_field(cfg, "", "samples", errors, 1, 100000)
    if errors:
        raise ConfigError(errors)


# ------------------------------------------------------------------- builders

def _build_coeff(prob: dict) -> DegenerateCoefficient:
    fam = prob["family"]
    if fam == "power":
        return DegenerateCoefficient.power(prob["beta"], prob["delta"])
    if fam == "quadratic_oil":
        return DegenerateCoefficient.quadratic_oil(prob["gamma"])
    return DegenerateCoefficient.wright_fischer()


def _build_grid(cfg: dict, T: float) -> SpaceTimeGrid:
    return SpaceTimeGrid(cfg["grid"]["n_x"], cfg["grid"]["n_t"], T)


def _build_iter(cfg: dict) -> IterConfig:
    it = cfg.get("iter") or {}
    return IterConfig(
        max_sweeps=int(it.get("max_sweeps", 200)),
        damping=float(it.get("damping", 0.5)),
        tolerance=float(it.get("tolerance", 1e-9)),
        divergence_factor=float(it.get("divergence_factor", 10.0)),
    )


def _profile_values(spec: dict, coeff: DegenerateCoefficient, x: np.ndarray):
    """Resolve a profile spec to (values, derivative) arrays on the nodes."""
    kind = spec["kind"]
    if kind == "zero":
        z = np.zeros_like(x)
        return z, z
    if kind == "const":
        c = float(spec["value"])
        return np.full_like(x, c), np.zeros_like(x)
    s = float(spec.get("scale", 1.0))
    if kind == "bubble":
        return s * x * (1.0 - x), s * (1.0 - 2.0 * x)
    if kind == "a":
        return s * coeff.a(x), s * coeff.a_x(x)
    if kind == "sqrt_a":
        sq = coeff.sqrt_a(x)
        return s * sq, s * 0.5 * sq * coeff.log_derivative(x)
    w = float(spec["k"]) * math.pi
    if kind == "sin":
        return s * np.sin(w * x), s * w * np.cos(w * x)
    # a_sin
    av, ax = coeff.a(x), coeff.a_x(x)
    return (
        s * av * np.sin(w * x),
        s * (ax * np.sin(w * x) + av * w * np.cos(w * x)),
    )


def _resolve_profiles(block, keys, coeff, x):
    block = block or {}
    out = {}
    for k in keys:
        if k in block:
            out[k] = _profile_values(block[k], coeff, x)
        else:
            z = np.zeros_like(x)
            out[k] = (z, z)
    return out


# --------------------------------------------------------------- result pieces

def _fnum(v) -> float:
    return float(v)


def _jnum(v):
    """JSON-safe numeric value; non-finite floats become tagged strings."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return int(v)
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return v


def qty(value, unit: str):
    """Wrap a number with its unit or norm tag for result.json."""
    return {"value": _jnum(value), "unit": unit}


def _fmt_csv(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return repr(v)


class _RunFailure(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message
        super().__init__(message)


# ------------------------------------------------------------------ runners

def _run_solve(cfg):
    coeff = _build_coeff(cfg["problem"])
    grid = _build_grid(cfg, cfg["problem"]["T"])
    icfg = _build_iter(cfg)
    x = grid.x
    data = _resolve_profiles(cfg.get("data"), _DATA_KEYS, coeff, x)
    m0, h = data["m0"][0], data["h"][0]
    F, G = data["F"][0], data["G"][0]
    if cfg["system"] == "linear":
        profs = _resolve_profiles(
            cfg.get("coefficients"), _LINEAR_COEFF_KEYS, coeff, x
        )
        coeffs = MfgCoefficients(
            coeff, grid, **{k: profs[k][0] for k in _LINEAR_COEFF_KEYS}
        )
        sol = solve_linearized_mfg(coeffs, F=F, G=G, m0=m0, h=h, cfg=icfg)
    else:
        profs = _resolve_profiles(
            cfg.get("coefficients"), _NONLINEAR_COEFF_KEYS, coeff, x
        )
        coeffs = MfgCoefficients(coeff, grid, p=profs["p"][0], d=profs["d"][0])
        sol = solve_nonlinear_mfg(coeffs, F=F, G=G, m0=m0, h=h, cfg=icfg)
    if not sol.converged:
        raise _RunFailure(
            3,
            f"coupled sweep did not converge within {icfg.max_sweeps} sweeps "
            f"(best residual {min(sol.residual_log):.3e})",
        )
    bounds = check_coefficient_bounds(coeffs)
    uv, mv = sol.u.values, sol.m.values

    def norm(vals, kind):
        return weighted_norm(vals, kind, coeff, grid)

    results = {
        "converged": True,
        "sweeps": qty(sol.sweeps, "count"),
        "final_residual": qty(sol.residual_log[-1], "max_abs"),
        "norms": {
            "u_t0_L2_inv_a": qty(norm(uv[:, 0], NormKind.L2_INV_A), "L2_inv_a"),
            "u_t0_H1_inv_a": qty(norm(uv[:, 0], NormKind.H1_INV_A), "H1_inv_a"),
            "u_T_L2_inv_a": qty(norm(uv[:, -1], NormKind.L2_INV_A), "L2_inv_a"),
            "u_T_H1_inv_a": qty(norm(uv[:, -1], NormKind.H1_INV_A), "H1_inv_a"),
            "m_t0_L2_a": qty(norm(mv[:, 0], NormKind.L2_A), "L2_a"),
            "m_t0_H1a_div": qty(norm(mv[:, 0], NormKind.H1A_DIV), "H1a_div"),
            "m_T_L2_a": qty(norm(mv[:, -1], NormKind.L2_A), "L2_a"),
            "m_T_H1a_div": qty(norm(mv[:, -1], NormKind.H1A_DIV), "H1a_div"),
        },
        "bounds": {
            e.name: {
                "value": qty(e.value, "ratio"),
                "x": qty(e.x, "x"),
                "t": qty(e.t, "t"),
            }
            for e in bounds.entries
        },
    }
    csvs = [
        (
            "residuals.csv",
            ["sweep", "residual"],
            ["count", "max_abs"],
            [[i + 1, r] for i, r in enumerate(sol.residual_log)],
        ),
        (
            "profiles.csv",
            ["x", "u_t0", "u_T", "m_t0", "m_T"],
            ["x", "u", "u", "m", "m"],
            [
                [x[i], uv[i, 0], uv[i, -1], mv[i, 0], mv[i, -1]]
                for i in range(grid.n_x)
            ],
        ),
    ]
    return results, csvs, 0


def _run_verify_carleman(cfg):
    case = make_case(cfg["case"])
    grid = _build_grid(cfg, case.T)
    icfg = _build_iter(cfg)
    try:
        u, m = solve_case(case, grid, icfg)
    except SolverError as exc:
        raise _RunFailure(3, str(exc)) from exc
    kind = {"hjb": "hjb", "fp": "fp"}.get(case.tag, "mfg")
    bundle = CarlemanBundle(
        kind=kind,
        coeff=case.coeff,
        grid=grid,
        u=u,
        m=m,
        F=case.source_F(grid) if u is not None else None,
        G=case.source_G(grid) if m is not None else None,
    )
    sweep = sweep_parameters(bundle, cfg["s_values"], cfg["lam_values"])
    s0 = s0_estimate(sweep)
    results = {
        "case": cfg["case"],
        "estimate": kind,
        "hypotheses_ok": case.hypotheses_ok,
        "top_half_max": qty(sweep.top_half_max, "ratio"),
        "median_to_max_increase": qty(sweep.median_to_max_increase, "1"),
        "s0": None if s0 is None else qty(s0, "1"),
        "overflow_cells": qty(sweep.overflow_cells, "count"),
        "total_cells": qty(sweep.total_cells, "count"),
    }
    rows = []
    for i, s in enumerate(sweep.s_values):
        for j, lam in enumerate(sweep.lam_values):
            r = sweep.ratios[i, j]
            rows.append([s, lam, r, 1 if math.isnan(r) else 0])
    csvs = [("ratios.csv", ["s", "lam", "ratio", "overflow"],
             ["1", "1", "ratio", "flag"], rows)]
    code = 4 if sweep.overflow_cells * 2 > sweep.total_cells else 0
    return results, csvs, code


def _rung_rows(rungs, with_D):
    rows = []
    for r in rungs:
        row = [r.eps, r.D0, r.err, r.s_star, r.c_envelope]
        if with_D:
            row.append(r.D)
        row.append(1 if r.accepted else 0)
        rows.append(row)
    return rows


def _stability_results(res):
    return {
        "mode": res.mode,
        "theta": qty(res.theta, "1"),
        "alpha": qty(res.alpha, "1"),
        "slope": qty(res.slope, "1"),
        "intercept": qty(res.intercept, "log"),
        "C_fit": qty(res.C_fit, "ratio"),
        "c_spread": qty(res.c_spread, "ratio"),
        "envelope_stable": res.envelope_stable,
        "M": qty(res.inputs.M, "mixed_H1"),
        "t0": qty(res.inputs.t0, "t"),
        "lam": qty(res.inputs.lam, "1"),
        "T": qty(res.inputs.T, "t"),
        "rungs_accepted": qty(sum(1 for r in res.rungs if r.accepted), "count"),
        "warnings": list(res.warnings),
    }


def _run_stability(cfg, command):
    grid_cfg = cfg["grid"]
    spec = default_backward_spec()
    grid = SpaceTimeGrid(grid_cfg["n_x"], grid_cfg["n_t"], spec.problem.T)
    icfg = _build_iter(cfg)
    try:
        if command == "stability-holder":
            ladder = cfg.get("eps_ladder", list(DEFAULT_HOLDER_LADDER))
            res = run_holder_experiment(
                spec, cfg["t0"], ladder, grid=grid, cfg=icfg
            )
        else:
            ladder = cfg.get("eps_ladder", list(DEFAULT_LOG_LADDER))
            res = run_log_experiment(
                spec, cfg.get("alpha", 0.5), ladder, grid=grid, cfg=icfg
            )
    except SolverError as exc:
        raise _RunFailure(3, str(exc)) from exc
    except ValueError as exc:
        raise ConfigError([f"experiment: {exc}"]) from exc
    with_D = res.mode == "log"
    names = ["eps", "D0", "err", "s_star", "c_envelope"]
    units = ["1", "mixed_H1", "mixed_L2", "1", "ratio"]
    if with_D:
        names.append("D")
        units.append("mixed_H1")
    names.append("accepted")
    units.append("flag")
    csvs = [("ladder.csv", names, units, _rung_rows(res.rungs, with_D))]
    return _stability_results(res), csvs, 0


def _run_convergence(cfg):
    case = make_case(cfg["case"])
    icfg = _build_iter(cfg)
    ladder = cfg.get("ladder")
    if ladder is not None:
        ladder = tuple((int(a), int(b)) for a, b in ladder)
    try:
        res = convergence_study(case, cfg["mode"], ladder, icfg)
    except SolverError as exc:
        raise _RunFailure(3, str(exc)) from exc
    results = {
        "case": res.case_name,
        "mode": res.mode,
        "observed_order": qty(res.observed_order, "1"),
        "rates": [qty(r, "1") for r in res.rates],
        "exact": res.exact,
    }
    rows = []
    for (n_x, n_t), err in zip(res.levels, res.errors):
        g = SpaceTimeGrid(n_x, n_t, case.T)
        rows.append([n_x, n_t, g.h, g.dt, err])
    csvs = [("errors.csv", ["n_x", "n_t", "h", "dt", "max_error"],
             ["count", "count", "x", "t", "max_abs"], rows)]
    return results, csvs, 0


def _run_coeff_check(cfg):
    coeff = _build_coeff(cfg["problem"])
    grid = _build_grid(cfg, cfg["problem"]["T"])
    x = grid.x
    if cfg["system"] == "linear":
        profs = _resolve_profiles(
            cfg.get("coefficients"), _LINEAR_COEFF_KEYS, coeff, x
        )
        coeffs = MfgCoefficients(
            coeff, grid, **{k: profs[k][0] for k in _LINEAR_COEFF_KEYS}
        )
    else:
        profs = _resolve_profiles(
            cfg.get("coefficients"), _NONLINEAR_COEFF_KEYS, coeff, x
        )
        coeffs = MfgCoefficients(coeff, grid, p=profs["p"][0], d=profs["d"][0])
    report = check_coefficient_bounds(coeffs)
    iso = isomorphism_residual(coeff, grid)
    seed = int(cfg.get("seed", 0))
    n_samples = int(cfg.get("samples", 256))
    rng = np.random.default_rng(seed)
    xs = rng.uniform(grid.h / 2.0, 1.0 - grid.h / 2.0, n_samples)
    slope_samples = np.abs(coeff.a_x(xs)) / coeff.sqrt_a(xs)
    results = {
        "isomorphism_residual": qty(iso, "max_abs"),
        "sampled_slope_ratio_sup": qty(float(np.max(slope_samples)), "ratio"),
        "sampled_points": qty(n_samples, "count"),
        "nonnegative_on_samples": bool(np.all(coeff.a(xs) >= 0.0)),
        "bounds": {
            e.name: {
                "value": qty(e.value, "ratio"),
                "x": qty(e.x, "x"),
                "t": qty(e.t, "t"),
            }
            for e in report.entries
        },
    }
    rows = [[e.name, e.value, e.x, e.t] for e in report.entries]
    csvs = [("bounds.csv", ["name", "value", "x", "t"],
             ["tag", "ratio", "x", "t"], rows)]
    return results, csvs, 0


_COMMANDS = {
    "solve": (_validate_solve, _run_solve),
    "verify-carleman": (_validate_verify_carleman, _run_verify_carleman),
    "stability-holder": (
        lambda cfg: _validate_stability(cfg, "stability-holder"),
        lambda cfg: _run_stability(cfg, "stability-holder"),
    ),
    "stability-log": (
        lambda cfg: _validate_stability(cfg, "stability-log"),
        lambda cfg: _run_stability(cfg, "stability-log"),
    ),
    "convergence": (_validate_convergence, _run_convergence),
    "coeff-check": (_validate_coeff_check, _run_coeff_check),
}


# ------------------------------------------------------------------- plumbing

def _canonical_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_csv(path: Path, names, units, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(names)
        w.writerow(units)
        for row in rows:
            w.writerow(
                [c if isinstance(c, (str, int)) and not isinstance(c, bool)
                 else _fmt_csv(c) for c in row]
            )


def _emit_error(code: int, message: str, details=()):
    doc = {"error": {"code": code, "message": message, "details": list(details)}}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="degenmfg",
        description="Degenerate mean-field-game laboratory: solvers, weighted "
        "estimates, and stability experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--threads", type=int, default=1,
            help="worker count (recorded; execution is serial and deterministic)",
        )
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        return _emit_error(2, f"cannot read config: {exc}")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        return _emit_error(2, f"config is not valid JSON: {exc}")
    if args.threads < 1:
        return _emit_error(2, "--threads must be >= 1")
    validate, run = _COMMANDS[args.command]
    try:
        validate(cfg)
    except ConfigError as exc:
        return _emit_error(2, "config validation failed", exc.errors)
    try:
        results, csvs, code = run(cfg)
    except ConfigError as exc:
        return _emit_error(2, "config validation failed", exc.errors)
    except _RunFailure as exc:
        return _emit_error(exc.code, exc.message)
    except SolverError as exc:
        return _emit_error(3, str(exc))
    out_dir = Path(args.out or cfg.get("out_dir") or "degenmfg-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": args.command,
        "package_version": __version__,
        "config": cfg,
        "config_sha256": _canonical_hash(cfg),
        "seed": cfg.get("seed", 0),
        "threads": args.threads,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "exit_code": code,
        "results": results,
    }
    with open(out_dir / "result.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=2, ensure_ascii=True)
        f.write("\n")
    for fname, names, units, rows in csvs:
        _write_csv(out_dir / fname, names, units, rows)
    return code


if __name__ == "__main__":
    sys.exit(main())
