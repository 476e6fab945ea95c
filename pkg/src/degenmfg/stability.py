"""Backward-problem stability experiments.

The conditional estimates bound the interior state of the coupled system by
the discrepancy of final-time data: a Holder rate (D0^theta + D0) at interior
times t0 and a logarithmic rate (log 1/D)^(-alpha) at t0 = 0, both under an
a-priori bound M on the initial state.  This module manufactures solution
pairs with perturbed data, measures the actual error-versus-discrepancy
ladder, and fits the observed envelope so the predicted exponents can be
compared against measured slopes and constants.

All measured norms follow the estimates exactly: weak weighted norms
(L2(1/a) for the value, L2(a) for the density) at the interior time, first
order weighted norms at the final time, and for the logarithmic case sums of
time derivatives up to second order.  M is computed from the solutions
themselves, so the hypothesis of the estimate holds by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from degenmfg.domain import (
    DegenerateCoefficient,
    NormKind,
    SpaceTimeField,
    SpaceTimeGrid,
    time_derivative,
    weighted_norm,
)
from degenmfg.mfg import (
    IterConfig,
    MfgCoefficients,
    MfgSolution,
    solve_nonlinear_mfg,
)
from degenmfg.solvers import SolverError

__all__ = [
    "theoretical_theta",
    "optimal_s",
    "StabilityInputs",
    "LadderRung",
    "StabilityResult",
    "NonlinearProblemSpec",
    "BackwardExperimentSpec",
    "default_backward_spec",
    "generate_pair",
    "build_ladder_pairs",
    "run_holder_experiment",
    "run_log_experiment",
    "compute_data_norm_D",
    "data_norm_from_fields",
    "DEFAULT_HOLDER_LADDER",
    "DEFAULT_LOG_LADDER",
    "DEFAULT_EXPERIMENT_SHAPE",
]

DEFAULT_HOLDER_LADDER = (1e-1, 1e-2, 1e-3, 1e-4)
# kept inside one decade: the interior error responds linearly to the
# perturbation while the log envelope is nearly flat, so a multi-decade
# ladder would spread the fitted constant far beyond any honest threshold
DEFAULT_LOG_LADDER = (1e-2, 6e-3, 3.5e-3, 2e-3)
DEFAULT_EXPERIMENT_SHAPE = (128, 256)


def theoretical_theta(t0: float, T: float, lam: float) -> float:
    """Holder exponent theta = alpha(t0) / (3 phi(T) + alpha(t0)).

    Here phi(t) = exp(lam t) and alpha(t) = phi(t) - 1; theta is 0 at t0 = 0
    and stays below 1/4 for every t0 < T.
    """
    if not (0.0 <= t0 < T):
        raise ValueError("t0 must lie in [0, T)")
    if not lam > 0.0:
        raise ValueError("lam must be positive")
    alpha = math.expm1(lam * t0)
    return alpha / (3.0 * math.exp(lam * T) + alpha)


def optimal_s(M: float, D0: float, t0: float, T: float, lam: float) -> float:
    """Weight strength minimizing the interior bound: 0 when M <= D0, else
    2 log(M / D0) / (3 phi(T) + alpha(t0))."""
    if not M > 0.0 or not D0 > 0.0:
        raise ValueError("M and D0 must be positive")
    if not (0.0 <= t0 < T):
        raise ValueError("t0 must lie in [0, T)")
    if not lam > 0.0:
        raise ValueError("lam must be positive")
    if M <= D0:
        return 0.0
    alpha = math.expm1(lam * t0)
    return 2.0 * math.log(M / D0) / (3.0 * math.exp(lam * T) + alpha)


@dataclass(frozen=True)
class StabilityInputs:
    """The quantities the estimate is conditioned on."""

    t0: float
    M: float
    lam: float
    T: float


@dataclass(frozen=True)
class LadderRung:
    """One perturbation amplitude: discrepancy, interior error, constants.

    D0 is the first-order data discrepancy at t = T; D adds time derivatives
    up to second order (log experiments only, NaN otherwise).  c_envelope is
    the rung's envelope constant: err / (D0^theta + D0) for the Holder mode,
    err * (log 1/D)^alpha for the log mode.  s_star records the weight
    strength the proof would choose at this rung.
    """

    eps: float
    D0: float
    err: float
    s_star: float
    c_envelope: float
    D: float
    t0_used: float
    accepted: bool
    note: str = ""


@dataclass(frozen=True)
class StabilityResult:
    mode: str
    inputs: StabilityInputs
    theta: float
    alpha: float
    rungs: tuple
    slope: float
    intercept: float
    C_fit: float
    c_spread: float
    envelope_stable: bool
    warnings: tuple = ()


ProfileLike = Union[float, np.ndarray, Callable]


def _profile(value: ProfileLike, x: np.ndarray, name: str) -> np.ndarray:
    if callable(value):
        out = np.asarray(value(x), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
        if out.ndim == 0:
            out = np.full_like(x, float(out))
    if out.shape != x.shape:
        raise ValueError(f"{name}: profile shape {out.shape} != {x.shape}")
    return out


@dataclass(frozen=True)
class NonlinearProblemSpec:
    """Grid-free description of one quadratic-Hamiltonian system.

    p, p_x, d are spatial profiles given as callables of x (or constants);
    lam is the weight rate the stability formulas use.
    """

    coeff: DegenerateCoefficient
    p: ProfileLike
    p_x: ProfileLike
    d: ProfileLike
    T: float = 1.0
    F: ProfileLike = 0.0
    G: ProfileLike = 0.0
    lam: float = 1.0

    def coefficients_on(self, grid: SpaceTimeGrid) -> MfgCoefficients:
        x = grid.x
        return MfgCoefficients(
            self.coeff,
            grid,
            p=_profile(self.p, x, "p"),
            d=_profile(self.d, x, "d"),
        )


@dataclass(frozen=True)
class BackwardExperimentSpec:
    """A problem plus base data and the perturbation shapes applied to it."""

    problem: NonlinearProblemSpec
    m0: ProfileLike
    h: ProfileLike
    delta_m0: ProfileLike
    delta_h: ProfileLike


def default_backward_spec() -> BackwardExperimentSpec:
    """The stock experiment: power-law degeneracy with square-root Hamiltonian
    weight, data proportional to the diffusion, sinusoidal perturbations.

    a = x^2 (1-x)^2, p = 0.5 x(1-x) = 0.5 sqrt(a), d = 0.4 a; base data
    m0 = h = 16 a (peak height 1), perturbation shapes 16 a sin(pi x) on the
    terminal value and 16 a sin(2 pi x) on the initial density, which vanish
    like a at both ends so every weighted norm is finite.
    """
    coeff = DegenerateCoefficient.power(2.0, 2.0)
    return BackwardExperimentSpec(
        problem=NonlinearProblemSpec(
            coeff=coeff,
            p=lambda x: 0.5 * x * (1.0 - x),
            p_x=lambda x: 0.5 * (1.0 - 2.0 * x),
            d=lambda x: 0.4 * coeff.a(x),
            T=1.0,
            lam=1.0,
        ),
        m0=lambda x: 16.0 * coeff.a(x),
        h=lambda x: 16.0 * coeff.a(x),
        delta_m0=lambda x: 16.0 * coeff.a(x) * np.sin(2.0 * np.pi * x),
        delta_h=lambda x: 16.0 * coeff.a(x) * np.sin(np.pi * x),
    )


def _experiment_grid(problem: NonlinearProblemSpec, grid: Optional[SpaceTimeGrid]):
    if grid is not None:
        return grid
    n_x, n_t = DEFAULT_EXPERIMENT_SHAPE
    return SpaceTimeGrid(n_x, n_t, problem.T)


def generate_pair(
    base_data,
    perturbation,
    eps: float,
    spec: NonlinearProblemSpec,
    grid: Optional[SpaceTimeGrid] = None,
    cfg: IterConfig = IterConfig(),
    base_solution: Optional[MfgSolution] = None,
):
    """Solve the nonlinear system with data (m0, h) and (m0+eps dm0, h+eps dh).

    base_data and perturbation are (initial density, terminal value) pairs of
    profiles.  A precomputed base_solution skips the first solve (ladders
    share it).  Raises SolverError when either sweep fails to converge.
    """
    g = _experiment_grid(spec, grid)
    x = g.x
    m0 = _profile(base_data[0], x, "m0")
    h = _profile(base_data[1], x, "h")
    dm0 = _profile(perturbation[0], x, "delta_m0")
    dh = _profile(perturbation[1], x, "delta_h")
    coeffs = spec.coefficients_on(g)
    Fv = _profile(spec.F, x, "F")
    Gv = _profile(spec.G, x, "G")
    if base_solution is None:
        sol1 = solve_nonlinear_mfg(coeffs, F=Fv, G=Gv, m0=m0, h=h, cfg=cfg)
        if not sol1.converged:
            raise SolverError("base solve did not converge")
    else:
        sol1 = base_solution
    sol2 = solve_nonlinear_mfg(
        coeffs, F=Fv, G=Gv, m0=m0 + eps * dm0, h=h + eps * dh, cfg=cfg
    )
    if not sol2.converged:
        raise SolverError(f"perturbed solve (eps={eps:g}) did not converge")
    return sol1, sol2


def build_ladder_pairs(
    spec: BackwardExperimentSpec,
    eps_ladder: Sequence[float],
    grid: Optional[SpaceTimeGrid] = None,
    cfg: IterConfig = IterConfig(),
):
    """Solution pairs for every amplitude, sharing one base solve.

    Returns a tuple of (eps, (sol1, sol2)); reusable across experiments at
    different t0 since the pairs do not depend on the measurement time.
    """
    g = _experiment_grid(spec.problem, grid)
    base = None
    out = []
    for eps in eps_ladder:
        sol1, sol2 = generate_pair(
            (spec.m0, spec.h),
            (spec.delta_m0, spec.delta_h),
            float(eps),
            spec.problem,
            grid=g,
            cfg=cfg,
            base_solution=base,
        )
        base = sol1
        out.append((float(eps), (sol1, sol2)))
    return tuple(out)


def _end_slice_norm_sum(
    f: SpaceTimeField,
    kind: NormKind,
    coeff: DegenerateCoefficient,
    order: int,
    last: bool,
) -> float:
    """Sum over k <= order of the weighted norm of (d/dt)^k f at one end."""
    col = -1 if last else 0
    total = weighted_norm(f.values[:, col], kind, coeff, f.grid)
    for k in range(1, order + 1):
        dk = time_derivative(f, k)
        total += weighted_norm(dk.values[:, col], kind, coeff, f.grid)
    return total


def data_norm_from_fields(
    u_diff: SpaceTimeField,
    m_diff: SpaceTimeField,
    coeff: DegenerateCoefficient,
    order: int = 2,
) -> float:
    """Final-time data norm: time derivatives up to ``order`` of both fields,
    the value part in H1(1/a) and the density part in the H1(a) product norm."""
    return _end_slice_norm_sum(
        u_diff, NormKind.H1_INV_A, coeff, order, last=True
    ) + _end_slice_norm_sum(m_diff, NormKind.H1A_DIV, coeff, order, last=True)


def compute_data_norm_D(pair, coeff: DegenerateCoefficient, order: int = 2) -> float:
    """The log-estimate data discrepancy D of a solution pair's difference."""
    sol1, sol2 = pair
    g = sol1.u.grid
    u_diff = SpaceTimeField(sol2.u.values - sol1.u.values, g)
    m_diff = SpaceTimeField(sol2.m.values - sol1.m.values, g)
    return data_norm_from_fields(u_diff, m_diff, coeff, order)


def _pair_initial_bound(pair, coeff: DegenerateCoefficient, order: int) -> float:
    """Max over the pair of initial-state norms (with time derivatives when
    order > 0), the quantity the a-priori bound M must dominate."""
    vals = []
    for sol in pair:
        vals.append(_end_slice_norm_sum(sol.u, NormKind.H1_INV_A, coeff, order, last=False))
        vals.append(_end_slice_norm_sum(sol.m, NormKind.H1A_DIV, coeff, order, last=False))
    return max(vals)


def _clean_ladder(eps_ladder, warnings: list):
    eps = []
    for e in eps_ladder:
        e = float(e)
        if e == 0.0:
            warnings.append("eps=0 rung dropped: identical pair, log of zero")
            continue
        eps.append(e)
    eps = sorted(set(eps), reverse=True)
    if not eps:
        raise ValueError("perturbation ladder is empty after dropping eps=0")
    return eps


def _fit(points, warnings: list, min_points: int):
    """OLS slope/intercept of log err against log discrepancy."""
    if len(points) < min_points:
        warnings.append(
            f"only {len(points)} usable rungs; slope fit needs {min_points}"
        )
        return math.nan, math.nan
    lx = np.log([p[0] for p in points])
    ly = np.log([p[1] for p in points])
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def run_holder_experiment(
    spec: BackwardExperimentSpec,
    t0: float,
    eps_ladder: Sequence[float] = DEFAULT_HOLDER_LADDER,
    grid: Optional[SpaceTimeGrid] = None,
    cfg: IterConfig = IterConfig(),
    pairs=None,
) -> StabilityResult:
    """Interior-time stability ladder against the Holder envelope.

    For each amplitude, measures D0 (first-order discrepancy of the pair at
    t = T) and err (weak-norm difference at the grid time nearest t0), fits
    log err against log D0, and reports C_fit = max err / (D0^theta + D0)
    together with the spread of the per-rung constants (envelope_stable means
    every rung's constant stays within 50 percent of C_fit).  Precomputed
    ``pairs`` from build_ladder_pairs are reused as-is, since pairs are
    independent of t0.
    """
    problem = spec.problem
    T, lam = problem.T, problem.lam
    if not (0.0 < t0 < T):
        raise ValueError("t0 must lie strictly inside (0, T)")
    warnings: list = []
    if pairs is None:
        eps_list = _clean_ladder(eps_ladder, warnings)
        if len(eps_list) < 4 or max(eps_list) / min(eps_list) < 100.0:
            raise ValueError("ladder must have >= 4 amplitudes spanning >= 2 decades")
        pairs = build_ladder_pairs(spec, eps_list, grid=grid, cfg=cfg)
    g = pairs[0][1][0].u.grid
    coeff = problem.coeff
    theta = theoretical_theta(t0, T, lam)
    k0 = int(round(t0 / g.dt))
    t0_used = float(g.t[k0])
    rungs = []
    M = 0.0
    for eps, pair in pairs:
        sol1, sol2 = pair
        u_diff = SpaceTimeField(sol2.u.values - sol1.u.values, g)
        m_diff = SpaceTimeField(sol2.m.values - sol1.m.values, g)
        D0 = weighted_norm(
            u_diff.values[:, -1], NormKind.H1_INV_A, coeff, g
        ) + weighted_norm(m_diff.values[:, -1], NormKind.H1A_DIV, coeff, g)
        err = weighted_norm(
            u_diff.values[:, k0], NormKind.L2_INV_A, coeff, g
        ) + weighted_norm(m_diff.values[:, k0], NormKind.L2_A, coeff, g)
        M = max(M, _pair_initial_bound(pair, coeff, 0))
        if D0 <= 0.0:
            rungs.append(
                LadderRung(eps, D0, err, math.nan, math.nan, math.nan,
                           t0_used, False, "zero discrepancy")
            )
            continue
        s_star = optimal_s(M, D0, t0, T, lam)
        c_env = err / (D0 ** theta + D0)
        rungs.append(
            LadderRung(eps, D0, err, s_star, c_env, math.nan, t0_used, True)
        )
    accepted = [r for r in rungs if r.accepted]
    if not accepted or max(r.D0 for r in accepted) < 1e-14:
        raise ValueError("degenerate ladder: every discrepancy is below 1e-14")
    slope, intercept = _fit(
        [(r.D0, r.err) for r in accepted if r.err > 0.0], warnings, 4
    )
    cs = [r.c_envelope for r in accepted]
    C_fit = max(cs)
    c_spread = C_fit / min(cs) if min(cs) > 0.0 else math.inf
    return StabilityResult(
        mode="holder",
        inputs=StabilityInputs(t0=t0, M=M, lam=lam, T=T),
        theta=theta,
        alpha=math.expm1(lam * t0),
        rungs=tuple(rungs),
        slope=slope,
        intercept=intercept,
        C_fit=C_fit,
        c_spread=c_spread,
        envelope_stable=min(cs) >= 0.5 * C_fit,
        warnings=tuple(warnings),
    )


def run_log_experiment(
    spec: BackwardExperimentSpec,
    alpha: float = 0.5,
    eps_ladder: Sequence[float] = DEFAULT_LOG_LADDER,
    grid: Optional[SpaceTimeGrid] = None,
    cfg: IterConfig = IterConfig(),
    pairs=None,
) -> StabilityResult:
    """Initial-time stability ladder against the logarithmic envelope.

    Per rung: D is the second-order data discrepancy at t = T (rungs with
    D >= 1 are rejected with guidance, the estimate assumes D < 1) and err is
    the weak-norm difference at t = 0; the rung constant is
    err * (log 1/D)^alpha and s_star = (log 1/D)^alpha is the proof's weight
    choice.  envelope_stable uses the documented loose factor of 10:
    logarithmic envelopes are nearly flat across any practical ladder, so
    tighter thresholds would reject honest runs.
    """
    problem = spec.problem
    T, lam = problem.T, problem.lam
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    warnings: list = []
    if pairs is None:
        eps_list = _clean_ladder(eps_ladder, warnings)
        pairs = build_ladder_pairs(spec, eps_list, grid=grid, cfg=cfg)
    g = pairs[0][1][0].u.grid
    coeff = problem.coeff
    rungs = []
    M = 0.0
    for eps, pair in pairs:
        sol1, sol2 = pair
        u_diff = SpaceTimeField(sol2.u.values - sol1.u.values, g)
        m_diff = SpaceTimeField(sol2.m.values - sol1.m.values, g)
        D0 = weighted_norm(
            u_diff.values[:, -1], NormKind.H1_INV_A, coeff, g
        ) + weighted_norm(m_diff.values[:, -1], NormKind.H1A_DIV, coeff, g)
        D = data_norm_from_fields(u_diff, m_diff, coeff, 2)
        err = weighted_norm(
            u_diff.values[:, 0], NormKind.L2_INV_A, coeff, g
        ) + weighted_norm(m_diff.values[:, 0], NormKind.L2_A, coeff, g)
        M = max(M, _pair_initial_bound(pair, coeff, 2))
        if D <= 0.0:
            rungs.append(
                LadderRung(eps, D0, err, math.nan, math.nan, D, 0.0, False,
                           "zero discrepancy")
            )
            continue
        if D >= 1.0:
            rungs.append(
                LadderRung(
                    eps, D0, err, math.nan, math.nan, D, 0.0, False,
                    f"data norm D={D:.3g} >= 1; shrink the perturbation amplitude",
                )
            )
            continue
        s_star = math.log(1.0 / D) ** alpha
        c_env = err * s_star
        rungs.append(LadderRung(eps, D0, err, s_star, c_env, D, 0.0, True))
    accepted = [r for r in rungs if r.accepted]
    if not accepted or max(r.D for r in accepted) < 1e-14:
        raise ValueError("degenerate ladder: every discrepancy is below 1e-14")
    slope, intercept = _fit(
        [(r.D, r.err) for r in accepted if r.err > 0.0], warnings, 2
    )
    cs = [r.c_envelope for r in accepted]
    C_fit = max(cs)
    c_spread = C_fit / min(cs) if min(cs) > 0.0 else math.inf
    return StabilityResult(
        mode="log",
        inputs=StabilityInputs(t0=0.0, M=M, lam=lam, T=T),
        theta=0.0,
        alpha=alpha,
        rungs=tuple(rungs),
        slope=slope,
        intercept=intercept,
        C_fit=C_fit,
        c_spread=c_spread,
        envelope_stable=c_spread < 10.0,
        warnings=tuple(warnings),
    )
