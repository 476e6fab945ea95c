"""Manufactured exact solutions and grid convergence studies.

Every case here is built from closed-form factors with hand-coded first and
second derivatives, combined by product and sum rules.  Sources are then
assembled so that the chosen fields solve the scalar or coupled systems
exactly, which turns every solver into a measurable approximation of a known
function.  Space factors always carry the diffusion coefficient (or vanish at
an end where the diffusion does not), so the fields respect the boundary
closures of the schemes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from degenmfg.domain import (
    DegenerateCoefficient,
    SpaceTimeField,
    SpaceTimeGrid,
)
from degenmfg.mfg import (
    IterConfig,
    MfgCoefficients,
    solve_linearized_mfg,
    solve_nonlinear_mfg,
)
from degenmfg.solvers import (
    FpLinearProblem,
    HjbLinearProblem,
    SolverError,
    solve_fp_linear,
    solve_hjb_linear,
)

__all__ = [
    "Smooth",
    "smooth_const",
    "smooth_linear",
    "smooth_power",
    "smooth_sin",
    "smooth_cos",
    "smooth_exp",
    "coeff_smooth",
    "ManufacturedCase",
    "make_case",
    "catalog",
    "solve_case",
    "case_error",
    "ConvergenceResult",
    "convergence_study",
    "SPACE_LADDER",
    "TIME_LADDER",
]


@dataclass(frozen=True)
class Smooth:
    """A scalar function bundled with its first two derivatives.

    Supports +, -, * (product rule) and scalar multiples, so composite
    profiles keep exact derivatives without symbolic machinery.
    """

    f: Callable
    f1: Callable
    f2: Callable

    def __add__(self, other: "Smooth") -> "Smooth":
        s, o = self, other
        return Smooth(
            lambda x: s.f(x) + o.f(x),
            lambda x: s.f1(x) + o.f1(x),
            lambda x: s.f2(x) + o.f2(x),
        )

    def __sub__(self, other: "Smooth") -> "Smooth":
        s, o = self, other
        return Smooth(
            lambda x: s.f(x) - o.f(x),
            lambda x: s.f1(x) - o.f1(x),
            lambda x: s.f2(x) - o.f2(x),
        )

    def __mul__(self, other):
        s = self
        if isinstance(other, Smooth):
            o = other
            return Smooth(
                lambda x: s.f(x) * o.f(x),
                lambda x: s.f1(x) * o.f(x) + s.f(x) * o.f1(x),
                lambda x: s.f2(x) * o.f(x) + 2.0 * s.f1(x) * o.f1(x) + s.f(x) * o.f2(x),
            )
        c = float(other)
        return Smooth(lambda x: c * s.f(x), lambda x: c * s.f1(x), lambda x: c * s.f2(x))

    __rmul__ = __mul__


def smooth_const(c: float) -> Smooth:
    c = float(c)
    return Smooth(
        lambda x: np.full_like(np.asarray(x, dtype=float), c),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def smooth_linear(c0: float, c1: float) -> Smooth:
    c0, c1 = float(c0), float(c1)
    return Smooth(
        lambda x: c0 + c1 * np.asarray(x, dtype=float),
        lambda x: np.full_like(np.asarray(x, dtype=float), c1),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def smooth_power(p: float, q: float) -> Smooth:
    """x^p (1-x)^q with derivatives; zero-coefficient terms are skipped.

    Skipping matters: a literal p(p-1) x^(p-2) at p = 1 would evaluate
    0 * x^(-1), which is fine on interior nodes but fragile in general.
    """
    p, q = float(p), float(q)

    def term(cf, pp, qq):
        if cf == 0.0:
            return None
        return lambda x: cf * x ** pp * (1.0 - x) ** qq

    def combine(parts):
        live = [t for t in parts if t is not None]
        if not live:
            return lambda x: np.zeros_like(np.asarray(x, dtype=float))
        return lambda x: sum(t(np.asarray(x, dtype=float)) for t in live)

    f = combine([term(1.0, p, q)])
    f1 = combine([term(p, p - 1.0, q), term(-q, p, q - 1.0)])
    f2 = combine(
        [
            term(p * (p - 1.0), p - 2.0, q),
            term(-2.0 * p * q, p - 1.0, q - 1.0),
            term(q * (q - 1.0), p, q - 2.0),
        ]
    )
    return Smooth(f, f1, f2)


def smooth_sin(omega: float) -> Smooth:
    w = float(omega)
    return Smooth(
        lambda x: np.sin(w * np.asarray(x, dtype=float)),
        lambda x: w * np.cos(w * np.asarray(x, dtype=float)),
        lambda x: -w * w * np.sin(w * np.asarray(x, dtype=float)),
    )


def smooth_cos(omega: float) -> Smooth:
    w = float(omega)
    return Smooth(
        lambda x: np.cos(w * np.asarray(x, dtype=float)),
        lambda x: -w * np.sin(w * np.asarray(x, dtype=float)),
        lambda x: -w * w * np.cos(w * np.asarray(x, dtype=float)),
    )


def smooth_exp(rate: float) -> Smooth:
    r = float(rate)
    return Smooth(
        lambda x: np.exp(r * np.asarray(x, dtype=float)),
        lambda x: r * np.exp(r * np.asarray(x, dtype=float)),
        lambda x: r * r * np.exp(r * np.asarray(x, dtype=float)),
    )


_ZERO = smooth_const(0.0)


def coeff_smooth(coeff: DegenerateCoefficient) -> Smooth:
    """The diffusion coefficient as a Smooth (exact derivatives)."""
    if coeff.family == "power":
        return smooth_power(coeff.beta, coeff.delta)
    if coeff.family == "wright_fischer":
        return smooth_power(1.0, 1.0)
    if coeff.family == "quadratic_oil":
        return (0.5 * coeff.gamma ** 2) * smooth_power(2.0, 0.0)
    raise ValueError(f"unknown coefficient family: {coeff.family}")


_TAGS = ("hjb", "fp", "mfg_linear", "mfg_nonlinear")


@dataclass
class ManufacturedCase:
    """One exact-solution scenario: fields, coefficients, and sources.

    The value field is u(x,t) = Tu(t) U(x) and the density m(x,t) = Tm(t) V(x);
    time and space factors are Smooths, as are all spatial coefficients.  The
    sources F and G are derived so the pair solves the system named by ``tag``
    exactly.  ``hypotheses_ok`` marks whether the intrinsic slope ratio
    |a_x| / sqrt(a) stays bounded near the boundary for this diffusion (the
    square-root degeneracy fails it), which downstream weighted estimates
    assume.
    """

    name: str
    tag: str
    coeff: DegenerateCoefficient
    Tu: Smooth = _ZERO
    U: Smooth = _ZERO
    Tm: Smooth = _ZERO
    V: Smooth = _ZERO
    d1: Smooth = _ZERO
    d2: Smooth = _ZERO
    c1: Smooth = _ZERO
    b: Smooth = _ZERO
    c2: Smooth = _ZERO
    rho: Smooth = _ZERO
    p: Smooth = _ZERO
    d: Smooth = _ZERO
    T: float = 1.0
    hypotheses_ok: bool = True
    A: Smooth = field(init=False)
    W: Smooth = field(init=False)

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ValueError(f"tag must be one of {_TAGS}")
        self.A = coeff_smooth(self.coeff)
        # product field a(x) V(x); its second derivative is exactly (am)_xx / Tm
        self.W = self.A * self.V

    # point evaluators; x and t may be scalars or broadcastable arrays
    def u(self, x, t):
        return self.Tu.f(t) * self.U.f(x)

    def u_x(self, x, t):
        return self.Tu.f(t) * self.U.f1(x)

    def u_xx(self, x, t):
        return self.Tu.f(t) * self.U.f2(x)

    def u_t(self, x, t):
        return self.Tu.f1(t) * self.U.f(x)

    def m(self, x, t):
        return self.Tm.f(t) * self.V.f(x)

    def m_x(self, x, t):
        return self.Tm.f(t) * self.V.f1(x)

    def m_t(self, x, t):
        return self.Tm.f1(t) * self.V.f(x)

    def am_xx(self, x, t):
        return self.Tm.f(t) * self.W.f2(x)

    def F(self, x, t):
        """Value-equation source making the exact fields solve the system."""
        base = self.u_t(x, t) + self.A.f(x) * self.u_xx(x, t)
        if self.tag == "mfg_nonlinear":
            ux = self.u_x(x, t)
            return base - 0.5 * self.p.f(x) * ux * ux + self.d.f(x) * self.m(x, t)
        out = base + self.d1.f(x) * self.u_x(x, t)
        if self.tag in ("mfg_linear",):
            out = out - self.d2.f(x) * self.m(x, t)
        return out

    def G(self, x, t):
        """Density-equation source for the exact fields."""
        base = self.m_t(x, t) - self.am_xx(x, t)
        if self.tag == "mfg_nonlinear":
            ux = self.u_x(x, t)
            flux_x = (
                self.p.f1(x) * self.m(x, t) * ux
                + self.p.f(x) * self.m_x(x, t) * ux
                + self.p.f(x) * self.m(x, t) * self.u_xx(x, t)
            )
            return base - flux_x
        out = base + self.c1.f(x) * self.m_x(x, t) - self.b.f(x) * self.m(x, t)
        if self.tag in ("mfg_linear",):
            out = out - self.c2.f(x) * self.u_x(x, t) - self.rho.f(x) * self.u_xx(x, t)
        return out

    # grid samplers
    def exact_u(self, grid: SpaceTimeGrid) -> SpaceTimeField:
        return SpaceTimeField.from_function(grid, self.u)

    def exact_m(self, grid: SpaceTimeGrid) -> SpaceTimeField:
        return SpaceTimeField.from_function(grid, self.m)

    def source_F(self, grid: SpaceTimeGrid) -> SpaceTimeField:
        return SpaceTimeField.from_function(grid, self.F)

    def source_G(self, grid: SpaceTimeGrid) -> SpaceTimeField:
        return SpaceTimeField.from_function(grid, self.G)

    def terminal(self, grid: SpaceTimeGrid) -> np.ndarray:
        return np.asarray(self.u(grid.x, self.T), dtype=float)

    def initial(self, grid: SpaceTimeGrid) -> np.ndarray:
        return np.asarray(self.m(grid.x, 0.0), dtype=float)

    def coefficients_on(self, grid: SpaceTimeGrid) -> MfgCoefficients:
        x = grid.x
        return MfgCoefficients(
            self.coeff,
            grid,
            p=self.p.f(x),
            d=self.d.f(x),
            d1=self.d1.f(x),
            d2=self.d2.f(x),
            c1=self.c1.f(x),
            c2=self.c2.f(x),
            b=self.b.f(x),
            rho=self.rho.f(x),
        )


def _power22():
    return DegenerateCoefficient.power(2.0, 2.0)


def _wf():
    return DegenerateCoefficient.wright_fischer()


_CATALOG = {
    # scalar backward cases
    "decay-bubble": lambda: ManufacturedCase(
        name="decay-bubble",
        tag="hjb",
        coeff=_wf(),
        Tu=smooth_exp(-1.0),
        U=smooth_power(1.0, 1.0),
        hypotheses_ok=False,
    ),
    "drifted-well": lambda: ManufacturedCase(
        name="drifted-well",
        tag="hjb",
        coeff=_power22(),
        Tu=smooth_exp(-0.5),
        U=smooth_power(2.0, 2.0) * smooth_linear(1.0, 0.5),
        d1=0.3 * smooth_power(1.0, 1.0),
    ),
    "cosine-decay": lambda: ManufacturedCase(
        name="cosine-decay",
        tag="hjb",
        coeff=DegenerateCoefficient.quadratic_oil(1.0),
        Tu=smooth_cos(1.0),
        U=smooth_power(2.0, 1.0),
        d1=0.2 * smooth_linear(0.0, 1.0),
    ),
    # scalar forward cases
    "spreading-ridge": lambda: ManufacturedCase(
        name="spreading-ridge",
        tag="fp",
        coeff=_power22(),
        Tm=smooth_cos(3.0),
        # cubic wall contact: m = v/a amplifies boundary-row truncation by 1/a
        V=smooth_power(3.0, 3.0) * smooth_linear(1.0, 1.0),
        c1=0.25 * smooth_power(1.0, 1.0),
        b=0.5 * smooth_cos(2.0),
    ),
    "wf-pulse": lambda: ManufacturedCase(
        name="wf-pulse",
        tag="fp",
        coeff=_wf(),
        Tm=smooth_exp(-0.7),
        V=smooth_power(2.0, 2.0),
        c1=0.3 * smooth_power(1.0, 1.0),
        b=smooth_const(0.4),
        hypotheses_ok=False,
    ),
    "oil-drift": lambda: ManufacturedCase(
        name="oil-drift",
        tag="fp",
        coeff=DegenerateCoefficient.quadratic_oil(1.2),
        Tm=smooth_cos(2.0),
        V=smooth_power(2.0, 1.0),
        c1=0.2 * smooth_linear(0.0, 1.0),
        b=0.3 * smooth_linear(1.0, -1.0),
    ),
    # coupled, linearized template
    "coupled-mild": lambda: ManufacturedCase(
        name="coupled-mild",
        tag="mfg_linear",
        coeff=_power22(),
        Tu=smooth_exp(-1.0),
        U=smooth_power(2.0, 2.0),
        Tm=smooth_cos(3.0),
        V=smooth_power(3.0, 3.0) * smooth_linear(1.0, 1.0),
        d1=0.3 * smooth_power(1.0, 1.0),
        d2=0.2 * smooth_power(2.0, 2.0),
        c1=0.25 * smooth_power(1.0, 1.0),
        b=smooth_const(0.4),
        c2=0.3 * smooth_cos(1.0),
        rho=0.1 * smooth_power(1.0, 1.0),
    ),
    "coupled-wf": lambda: ManufacturedCase(
        name="coupled-wf",
        tag="mfg_linear",
        coeff=_wf(),
        Tu=smooth_exp(-1.0),
        U=smooth_power(1.0, 1.0) * smooth_linear(1.0, 0.5),
        Tm=smooth_exp(-0.4),
        V=smooth_power(1.0, 1.0),
        d1=0.2 * smooth_power(1.0, 1.0),
        d2=0.3 * smooth_power(1.0, 1.0),
        c1=0.2 * smooth_power(1.0, 1.0),
        b=smooth_const(0.25),
        c2=0.2 * smooth_sin(1.0),
        rho=0.15 * smooth_power(1.0, 1.0),
        hypotheses_ok=False,
    ),
    "coupled-oil": lambda: ManufacturedCase(
        name="coupled-oil",
        tag="mfg_linear",
        coeff=DegenerateCoefficient.quadratic_oil(1.2),
        Tu=smooth_cos(0.6),
        U=smooth_power(2.0, 1.0),
        Tm=smooth_exp(-0.5),
        V=smooth_power(2.0, 1.0) * smooth_linear(1.0, 0.5),
        d1=0.25 * smooth_linear(0.0, 1.0),
        d2=0.2 * smooth_power(2.0, 0.0),
        c1=0.2 * smooth_linear(0.0, 1.0),
        b=0.3 * smooth_cos(1.0),
        c2=0.25 * smooth_linear(1.0, -1.0),
        rho=0.1 * smooth_power(2.0, 0.0),
    ),
    # coupled, quadratic Hamiltonian
    "quad-hamiltonian": lambda: ManufacturedCase(
        name="quad-hamiltonian",
        tag="mfg_nonlinear",
        coeff=_power22(),
        Tu=smooth_exp(-1.0),
        U=smooth_power(2.0, 2.0),
        Tm=smooth_cos(3.0),
        V=smooth_power(3.0, 3.0) * smooth_linear(1.0, 1.0),
        p=0.5 * smooth_power(1.0, 1.0),
        d=0.4 * smooth_power(2.0, 2.0),
    ),
    "wf-game": lambda: ManufacturedCase(
        name="wf-game",
        tag="mfg_nonlinear",
        coeff=_wf(),
        Tu=smooth_exp(-0.5),
        U=smooth_power(1.0, 1.0),
        Tm=smooth_exp(-1.0),
        V=smooth_power(1.0, 1.0) * smooth_linear(1.0, 1.0),
        p=0.3 * smooth_power(1.0, 1.0),
        d=0.3 * smooth_power(1.0, 1.0),
        hypotheses_ok=False,
    ),
    "oil-game": lambda: ManufacturedCase(
        name="oil-game",
        tag="mfg_nonlinear",
        coeff=DegenerateCoefficient.quadratic_oil(1.0),
        Tu=smooth_cos(0.7),
        U=smooth_power(2.0, 1.0),
        Tm=smooth_exp(-0.4),
        V=smooth_power(2.0, 1.0),
        p=0.25 * smooth_linear(0.0, 1.0),
        d=0.3 * smooth_power(2.0, 0.0),
    ),
    # trivial data, exact zero solution
    "zero": lambda: ManufacturedCase(
        name="zero",
        tag="mfg_linear",
        coeff=_wf(),
        hypotheses_ok=False,
    ),
}


def make_case(name: str) -> ManufacturedCase:
    try:
        builder = _CATALOG[name]
    except KeyError:
        known = ", ".join(sorted(_CATALOG))
        raise KeyError(f"unknown case {name!r}; known cases: {known}") from None
    return builder()


def catalog() -> tuple:
    """All case names, scalar cases first."""
    return tuple(_CATALOG)


# (n_x, n_t) ladders; the space ladder refines dt like h^2 so the first-order
# time error cannot mask the second-order space error, the time ladder holds
# the mesh fine and fixed
SPACE_LADDER = ((64, 32), (128, 128), (256, 512))
TIME_LADDER = ((256, 128), (256, 256), (256, 512))


@dataclass(frozen=True)
class ConvergenceResult:
    case_name: str
    mode: str
    levels: tuple
    errors: tuple
    rates: tuple
    observed_order: float
    exact: bool


def solve_case(case: ManufacturedCase, grid: SpaceTimeGrid, cfg: IterConfig = IterConfig()):
    """Run the solver matching the case tag; returns (u or None, m or None)."""
    x = grid.x
    if case.tag == "hjb":
        prob = HjbLinearProblem(
            grid,
            case.coeff,
            drift=case.d1.f(x),
            source=case.source_F(grid),
            terminal=case.terminal(grid),
        )
        return solve_hjb_linear(prob), None
    if case.tag == "fp":
        prob = FpLinearProblem(
            grid,
            case.coeff,
            convection=case.c1.f(x),
            zeroth=case.b.f(x),
            source=case.source_G(grid),
            initial=case.initial(grid),
        )
        return None, solve_fp_linear(prob)
    coeffs = case.coefficients_on(grid)
    solver = solve_linearized_mfg if case.tag == "mfg_linear" else solve_nonlinear_mfg
    sol = solver(
        coeffs,
        F=case.source_F(grid),
        G=case.source_G(grid),
        m0=case.initial(grid),
        h=case.terminal(grid),
        cfg=cfg,
    )
    if not sol.converged:
        raise SolverError(
            f"case {case.name}: coupled sweep did not converge on grid {grid.shape}"
        )
    return sol.u, sol.m


def case_error(case: ManufacturedCase, grid: SpaceTimeGrid, cfg: IterConfig = IterConfig()) -> float:
    """Max-node error of the matching solver against the exact fields."""
    u, m = solve_case(case, grid, cfg)
    err = 0.0
    if u is not None:
        err = max(err, float(np.max(np.abs(u.values - case.exact_u(grid).values))))
    if m is not None:
        err = max(err, float(np.max(np.abs(m.values - case.exact_m(grid).values))))
    return err


def convergence_study(
    case: ManufacturedCase,
    mode: str = "space",
    ladder: Optional[tuple] = None,
    cfg: IterConfig = IterConfig(),
) -> ConvergenceResult:
    """Errors, pairwise rates, and a fitted order over a refinement ladder.

    mode="space" fits against h (the ladder refines dt like h^2 so the fit
    isolates the spatial order); mode="time" fits against dt on a fixed fine
    mesh.  An exactly reproduced solution (all errors at rounding level)
    short-circuits to observed_order = inf with the exact flag set.
    """
    if mode not in ("space", "time"):
        raise ValueError("mode must be 'space' or 'time'")
    if ladder is None:
        ladder = SPACE_LADDER if mode == "space" else TIME_LADDER
    grids = [SpaceTimeGrid(n_x, n_t, case.T) for n_x, n_t in ladder]
    errors = [case_error(case, g, cfg) for g in grids]
    steps = [g.h if mode == "space" else g.dt for g in grids]
    if max(errors) < 1e-13:
        return ConvergenceResult(
            case.name, mode, tuple(ladder), tuple(errors), (), math.inf, True
        )
    rates = tuple(
        math.log(errors[i] / errors[i + 1]) / math.log(steps[i] / steps[i + 1])
        for i in range(len(errors) - 1)
    )
    slope = float(np.polyfit(np.log(steps), np.log(errors), 1)[0])
    return ConvergenceResult(
        case.name, mode, tuple(ladder), tuple(errors), rates, slope, False
    )
