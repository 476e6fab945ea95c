"""Carleman-weighted energy functionals and parameter sweeps.

Both sides of each weighted estimate carry the factor exp(2 s phi(t)) with
phi(t) = exp(lam t), which overflows double precision long before interesting
parameter ranges are exhausted.  Everything here is therefore computed with
the scaled weight exp(2 s phi(t) - K), K = 2 s phi(T): every scaled factor
lies in (0, 1], the left/right ratio is unchanged because the scaling cancels
exactly, and the unscaled magnitudes are recovered in log form as
log(scaled) + K.  Linear-scale fields of a report are exact when they fit in
a double and overflow to inf (with the overflow flag set) when they do not;
ratios and logs never overflow.

Time integration is a trapezoid between adjacent slices of the spatial
integrals multiplied by the scaled weight at the midpoint, so the fast weight
is sampled where it matters and slice integrals are reused across the whole
(s, lam) sweep: they do not depend on the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from degenmfg.domain import (
    DegenerateCoefficient,
    NormKind,
    SpaceTimeField,
    SpaceTimeGrid,
    _dx_array,
    _dxx_array,
    time_derivative,
    weighted_norm,
)
from degenmfg.solvers import FpLinearProblem, HjbLinearProblem, _traj

__all__ = [
    "OVERFLOW_LOG_LIMIT",
    "CarlemanParams",
    "WeightValue",
    "weight_at",
    "CarlemanReport",
    "evaluate_hjb_carleman",
    "evaluate_fp_carleman",
    "evaluate_mfg_carleman",
    "CarlemanBundle",
    "SweepResult",
    "sweep_parameters",
    "s0_estimate",
]

# beyond this log-weight the linear-scale value of exp() is not representable
OVERFLOW_LOG_LIMIT = 700.0


@dataclass(frozen=True)
class CarlemanParams:
    """The weight pair (s, lam): weight exp(2 s phi(t)), phi(t) = exp(lam t)."""

    s: float
    lam: float

    def __post_init__(self):
        if not self.s > 0.0:
            raise ValueError("s must be positive")
        if not self.lam > 0.0:
            raise ValueError("lam must be positive")

    def phi(self, t):
        return np.exp(self.lam * np.asarray(t, dtype=float))

    def alpha(self, t0: float) -> float:
        """phi(t0) - 1, the weight gap between t0 and the initial time."""
        return float(math.expm1(self.lam * t0))

    def log_weight(self, t):
        return 2.0 * self.s * self.phi(t)


@dataclass(frozen=True)
class WeightValue:
    phi: float
    weight: float
    log_weight: float
    overflow: bool


def weight_at(params: CarlemanParams, t: float) -> WeightValue:
    """The weight at one time, with its log and an overflow marker."""
    phi = float(params.phi(t))
    lw = 2.0 * params.s * phi
    over = lw > OVERFLOW_LOG_LIMIT
    return WeightValue(phi=phi, weight=_exp_clip(lw), log_weight=lw, overflow=over)


def _exp_clip(logv: float) -> float:
    if logv > 709.0:
        return math.inf
    return math.exp(logv)


def _safe_log(v: float) -> float:
    return math.log(v) if v > 0.0 else -math.inf


@dataclass(frozen=True)
class CarlemanReport:
    """One evaluated estimate: weighted LHS against the three RHS blocks.

    lhs, rhs_source, rhs_T, rhs_0 are linear-scale (inf when the weight
    overflows); ratio = lhs / (rhs_source + rhs_T + rhs_0) and the log fields
    are always finite for nonzero data because they are computed in scaled
    arithmetic.  parts carries the per-equation reports of a coupled
    evaluation.
    """

    estimate: str
    params: CarlemanParams
    lhs: float
    rhs_source: float
    rhs_T: float
    rhs_0: float
    ratio: float
    lhs_log: float
    rhs_log: float
    overflow: bool
    parts: tuple = ()


@dataclass(frozen=True)
class _Scaled:
    """Scaled-weight totals of one estimate; K is the common log offset."""

    lhs: float
    rhs_source: float
    rhs_T: float
    rhs_0: float
    K: float

    def __add__(self, other: "_Scaled") -> "_Scaled":
        if other.K != self.K:
            raise ValueError("cannot combine estimates with different weights")
        return _Scaled(
            self.lhs + other.lhs,
            self.rhs_source + other.rhs_source,
            self.rhs_T + other.rhs_T,
            self.rhs_0 + other.rhs_0,
            self.K,
        )


def _report_from_scaled(kind: str, params: CarlemanParams, sc: _Scaled, parts=()):
    rhs_total = sc.rhs_source + sc.rhs_T + sc.rhs_0
    if rhs_total > 0.0:
        ratio = sc.lhs / rhs_total
    else:
        ratio = 0.0 if sc.lhs == 0.0 else math.inf
    lhs_log = _safe_log(sc.lhs) + sc.K
    rhs_log = _safe_log(rhs_total) + sc.K
    fields = [
        _exp_clip(_safe_log(v) + sc.K)
        for v in (sc.lhs, sc.rhs_source, sc.rhs_T, sc.rhs_0)
    ]
    overflow = sc.K > OVERFLOW_LOG_LIMIT or any(math.isinf(f) for f in fields)
    return CarlemanReport(
        estimate=kind,
        params=params,
        lhs=fields[0],
        rhs_source=fields[1],
        rhs_T=fields[2],
        rhs_0=fields[3],
        ratio=ratio,
        lhs_log=lhs_log,
        rhs_log=rhs_log,
        overflow=overflow,
        parts=tuple(parts),
    )


def _time_sum(I: np.ndarray, params: CarlemanParams, grid: SpaceTimeGrid,
              phi_power: int, K: float) -> float:
    """Trapezoid of slice integrals against the scaled weight phi^p e^{2s phi}."""
    t = grid.t
    tm = 0.5 * (t[:-1] + t[1:])
    expo = phi_power * params.lam * tm + 2.0 * params.s * np.exp(params.lam * tm) - K
    pair = 0.5 * (I[:-1] + I[1:])
    return float(np.sum(grid.dt * pair * np.exp(expo)))


# parameter-independent slice integrals of the value-equation estimate
@dataclass(frozen=True)
class HjbIngredients:
    grid: SpaceTimeGrid
    coeff: DegenerateCoefficient
    I_ut: np.ndarray   # int u_t^2 / a
    I_uxx: np.ndarray  # int a u_xx^2
    I_ux: np.ndarray   # int u_x^2
    I_u: np.ndarray    # int u^2 / a
    I_F: np.ndarray    # int F^2 / a
    BT_0: float        # |u(., T)|^2 in L2(1/a)
    BT_1: float        # |u(., T)|^2 in H1(1/a)
    B0_0: float
    B0_1: float


def hjb_ingredients(u, F, coeff: DegenerateCoefficient, grid: SpaceTimeGrid) -> HjbIngredients:
    uv = _traj(u, grid, "u")
    Fv = _traj(F if F is not None else 0.0, grid, "F")
    a = coeff.a(grid.x)[:, None]
    h = grid.h
    ut = time_derivative(SpaceTimeField(uv, grid), 1).values
    ux = _dx_array(uv, grid.h, "dirichlet")
    uxx = _dxx_array(uv, grid.h, "dirichlet")
    return HjbIngredients(
        grid=grid,
        coeff=coeff,
        I_ut=h * np.sum(ut * ut / a, axis=0),
        I_uxx=h * np.sum(a * uxx * uxx, axis=0),
        I_ux=h * np.sum(ux * ux, axis=0),
        I_u=h * np.sum(uv * uv / a, axis=0),
        I_F=h * np.sum(Fv * Fv / a, axis=0),
        BT_0=weighted_norm(uv[:, -1], NormKind.L2_INV_A, coeff, grid) ** 2,
        BT_1=weighted_norm(uv[:, -1], NormKind.H1_INV_A, coeff, grid) ** 2,
        B0_0=weighted_norm(uv[:, 0], NormKind.L2_INV_A, coeff, grid) ** 2,
        B0_1=weighted_norm(uv[:, 0], NormKind.H1_INV_A, coeff, grid) ** 2,
    )


def _hjb_scaled(ing: HjbIngredients, params: CarlemanParams) -> _Scaled:
    s, lam = params.s, params.lam
    g = ing.grid
    K = 2.0 * s * float(params.phi(g.T))
    lhs = (
        _time_sum(ing.I_ut, params, g, 0, K)
        + _time_sum(ing.I_uxx, params, g, 0, K)
        + s * lam * _time_sum(ing.I_ux, params, g, 1, K)
        + s * s * lam * lam * _time_sum(ing.I_u, params, g, 2, K)
    )
    rhs_source = s * _time_sum(ing.I_F, params, g, 1, K)
    phi_T = float(params.phi(g.T))
    # scaled weight at t = T is exactly 1, at t = 0 it is exp(2s - K)
    rhs_T = s * (s * lam * phi_T * ing.BT_0 + ing.BT_1)
    rhs_0 = s * (s * lam * ing.B0_0 + ing.B0_1) * math.exp(min(2.0 * s - K, 0.0))
    return _Scaled(lhs, rhs_source, rhs_T, rhs_0, K)


# parameter-independent slice integrals of the density-equation estimate
@dataclass(frozen=True)
class FpIngredients:
    grid: SpaceTimeGrid
    coeff: DegenerateCoefficient
    J_v2: np.ndarray   # int a ((am)_xx)^2 + int a m_t^2
    J_vx: np.ndarray   # int ((am)_x)^2
    J_m: np.ndarray    # int a m^2
    J_G: np.ndarray    # int a G^2
    BT_m: float        # |m(., T)|^2 in L2(a)
    BT_vx: float       # |(am)_x(., T)|^2 in L2
    B0_m: float
    B0_vx: float


def fp_ingredients(m, G, coeff: DegenerateCoefficient, grid: SpaceTimeGrid) -> FpIngredients:
    mv = _traj(m, grid, "m")
    Gv = _traj(G if G is not None else 0.0, grid, "G")
    a = coeff.a(grid.x)[:, None]
    h = grid.h
    v = a * mv
    vx = _dx_array(v, grid.h, "dirichlet")
    vxx = _dxx_array(v, grid.h, "dirichlet")
    # int a m_t^2 = int v_t^2 / a, differentiating the product field in time
    vt = time_derivative(SpaceTimeField(v, grid), 1).values
    return FpIngredients(
        grid=grid,
        coeff=coeff,
        J_v2=h * np.sum(a * vxx * vxx + vt * vt / a, axis=0),
        J_vx=h * np.sum(vx * vx, axis=0),
        J_m=h * np.sum(a * mv * mv, axis=0),
        J_G=h * np.sum(a * Gv * Gv, axis=0),
        BT_m=weighted_norm(mv[:, -1], NormKind.L2_A, coeff, grid) ** 2,
        BT_vx=weighted_norm(vx[:, -1], NormKind.L2_PLAIN, coeff, grid) ** 2,
        B0_m=weighted_norm(mv[:, 0], NormKind.L2_A, coeff, grid) ** 2,
        B0_vx=weighted_norm(vx[:, 0], NormKind.L2_PLAIN, coeff, grid) ** 2,
    )


def _fp_scaled(ing: FpIngredients, params: CarlemanParams) -> _Scaled:
    s, lam = params.s, params.lam
    g = ing.grid
    K = 2.0 * s * float(params.phi(g.T))
    lhs = (
        (1.0 / s) * _time_sum(ing.J_v2, params, g, -1, K)
        + lam * _time_sum(ing.J_vx, params, g, 0, K)
        + s * lam * lam * _time_sum(ing.J_m, params, g, 1, K)
    )
    rhs_source = _time_sum(ing.J_G, params, g, 0, K)
    phi_T = float(params.phi(g.T))
    rhs_T = s * lam * (phi_T * ing.BT_m + ing.BT_vx)
    rhs_0 = (s * lam * ing.B0_m + ing.B0_vx) * math.exp(min(2.0 * s - K, 0.0))
    return _Scaled(lhs, rhs_source, rhs_T, rhs_0, K)


def _resolve(problem, grid, coeffs=None):
    """Accept a problem object, a coefficients bundle, or a bare coefficient."""
    if isinstance(problem, (HjbLinearProblem, FpLinearProblem)):
        return problem.coeff, problem.grid
    if hasattr(problem, "diffusion") and hasattr(problem, "grid"):
        return problem.diffusion, problem.grid
    if isinstance(problem, DegenerateCoefficient):
        if grid is None:
            raise ValueError("a bare coefficient needs an explicit grid")
        return problem, grid
    raise TypeError(f"cannot extract coefficient and grid from {type(problem).__name__}")


def evaluate_hjb_carleman(u, F, params: CarlemanParams, problem,
                          grid: Optional[SpaceTimeGrid] = None) -> CarlemanReport:
    """Weighted energy estimate for a backward value trajectory.

    LHS: time-weighted integrals of u_t^2/a, a u_xx^2, s lam phi u_x^2 and
    (s lam phi)^2 u^2/a.  RHS: the weighted source integral s int phi F^2/a
    plus weighted H1(1/a) data norms at the final and initial times.
    """
    coeff, g = _resolve(problem, grid)
    ing = hjb_ingredients(u, F, coeff, g)
    return _report_from_scaled("hjb", params, _hjb_scaled(ing, params))


def evaluate_fp_carleman(m, G, params: CarlemanParams, problem,
                         grid: Optional[SpaceTimeGrid] = None) -> CarlemanReport:
    """Weighted energy estimate for a forward density trajectory.

    Works through the product field v = a m: LHS integrates
    (a v_xx^2 + v_t^2/a)/(s phi), lam v_x^2 and s lam^2 phi a m^2 under the
    weight; RHS is the weighted source integral of a G^2 plus data norms of
    m and (am)_x at both ends.
    """
    coeff, g = _resolve(problem, grid)
    ing = fp_ingredients(m, G, coeff, g)
    return _report_from_scaled("fp", params, _fp_scaled(ing, params))


def evaluate_mfg_carleman(u, m, F, G, params: CarlemanParams, coeffs,
                          grid: Optional[SpaceTimeGrid] = None) -> CarlemanReport:
    """Combined estimate of a coupled pair: the exact sum of the two scalar ones.

    Computed in shared scaled arithmetic, so lhs and every rhs block equal the
    sums of the corresponding blocks of the per-equation reports (returned in
    parts) and the ratio is their joint lhs over joint rhs.
    """
    coeff, g = _resolve(coeffs, grid)
    sc_h = _hjb_scaled(hjb_ingredients(u, F, coeff, g), params)
    sc_f = _fp_scaled(fp_ingredients(m, G, coeff, g), params)
    parts = (
        _report_from_scaled("hjb", params, sc_h),
        _report_from_scaled("fp", params, sc_f),
    )
    return _report_from_scaled("mfg", params, sc_h + sc_f, parts=parts)


@dataclass(frozen=True)
class CarlemanBundle:
    """Fields and data of one estimate, packaged for parameter sweeps."""

    kind: str
    coeff: DegenerateCoefficient
    grid: SpaceTimeGrid
    u: object = None
    m: object = None
    F: object = None
    G: object = None

    def __post_init__(self):
        if self.kind not in ("hjb", "fp", "mfg"):
            raise ValueError("kind must be 'hjb', 'fp' or 'mfg'")
        if self.kind in ("hjb", "mfg") and self.u is None:
            raise ValueError(f"kind {self.kind!r} needs a value trajectory u")
        if self.kind in ("fp", "mfg") and self.m is None:
            raise ValueError(f"kind {self.kind!r} needs a density trajectory m")


@dataclass(frozen=True)
class SweepResult:
    """Ratio table of a (s, lam) sweep; overflowing cells are NaN.

    top_half_max is the largest ratio over the upper half of the s range (all
    lam); median_to_max_increase is the relative change of the per-s max
    ratio between the median s and the largest s, the quantity that should
    level off once s clears the hypothesis threshold.
    """

    s_values: tuple
    lam_values: tuple
    ratios: np.ndarray
    overflow_cells: int
    total_cells: int
    top_half_max: float
    median_to_max_increase: float


def sweep_parameters(bundle: CarlemanBundle, s_values, lam_values) -> SweepResult:
    """Evaluate the bundle's estimate over an (s, lam) grid.

    Slice integrals are computed once; each cell only reassembles the time
    quadrature.  Cells whose weight cannot be represented on a linear scale
    are recorded as NaN and counted in overflow_cells.
    """
    s_sorted = tuple(sorted(float(s) for s in s_values))
    lam_sorted = tuple(sorted(float(x) for x in lam_values))
    if len(s_sorted) == 0 or len(lam_sorted) == 0:
        raise ValueError("sweep needs at least one s and one lam")
    ing_h = None
    ing_f = None
    if bundle.kind in ("hjb", "mfg"):
        ing_h = hjb_ingredients(bundle.u, bundle.F, bundle.coeff, bundle.grid)
    if bundle.kind in ("fp", "mfg"):
        ing_f = fp_ingredients(bundle.m, bundle.G, bundle.coeff, bundle.grid)
    ratios = np.full((len(s_sorted), len(lam_sorted)), np.nan)
    overflow = 0
    for i, s in enumerate(s_sorted):
        for j, lam in enumerate(lam_sorted):
            params = CarlemanParams(s, lam)
            K = 2.0 * s * math.exp(lam * bundle.grid.T)
            if K > OVERFLOW_LOG_LIMIT:
                overflow += 1
                continue
            if bundle.kind == "hjb":
                sc = _hjb_scaled(ing_h, params)
            elif bundle.kind == "fp":
                sc = _fp_scaled(ing_f, params)
            else:
                sc = _hjb_scaled(ing_h, params) + _fp_scaled(ing_f, params)
            rep = _report_from_scaled(bundle.kind, params, sc)
            ratios[i, j] = rep.ratio
    total = len(s_sorted) * len(lam_sorted)
    half = len(s_sorted) // 2
    top = ratios[half:, :]
    top_half_max = float(np.nanmax(top)) if np.any(np.isfinite(top)) else math.nan
    mid = (len(s_sorted) - 1) // 2

    def row_max(i):
        row = ratios[i, :]
        return float(np.nanmax(row)) if np.any(np.isfinite(row)) else math.nan

    r_med, r_max = row_max(mid), row_max(len(s_sorted) - 1)
    if math.isnan(r_med) or math.isnan(r_max) or r_med == 0.0:
        inc = math.nan
    else:
        inc = (r_max - r_med) / abs(r_med)
    return SweepResult(
        s_values=s_sorted,
        lam_values=lam_sorted,
        ratios=ratios,
        overflow_cells=overflow,
        total_cells=total,
        top_half_max=top_half_max,
        median_to_max_increase=inc,
    )


def s0_estimate(sweep: SweepResult, variation: float = 0.5):
    """Smallest swept s after which the per-s max ratio varies less than
    ``variation`` relatively, step to step, through the end of the range.
    Returns None when no such s exists (including all-overflow sweeps)."""
    curve = []
    for i in range(len(sweep.s_values)):
        row = sweep.ratios[i, :]
        curve.append(float(np.nanmax(row)) if np.any(np.isfinite(row)) else math.nan)
    n = len(curve)
    for i in range(n):
        tail = curve[i:]
        if any(math.isnan(c) for c in tail):
            continue
        ok = True
        for j in range(len(tail) - 1):
            base = abs(tail[j])
            if base == 0.0:
                ok = tail[j + 1] == 0.0
            else:
                ok = abs(tail[j + 1] - tail[j]) / base <= variation
            if not ok:
                break
        if ok:
            return sweep.s_values[i]
    return None
