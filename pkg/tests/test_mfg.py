"""Coupled forward-backward iteration and difference-system algebra."""

import numpy as np
import pytest

from degenmfg.domain import DegenerateCoefficient, SpaceTimeGrid
from degenmfg.mfg import (
    IterConfig,
    MfgCoefficients,
    check_coefficient_bounds,
    form_difference_coefficients,
    solve_linearized_mfg,
    solve_nonlinear_mfg,
)
from degenmfg.solvers import (
    FpLinearProblem,
    HjbLinearProblem,
    solve_fp_linear,
    solve_hjb_linear,
)

WF = DegenerateCoefficient.wright_fischer()
P22 = DegenerateCoefficient.power(2.0, 2.0)


def _grid(n_x=48, n_t=48, T=1.0):
    return SpaceTimeGrid(n_x, n_t, T)


def test_zero_data_converges_in_one_sweep():
    g = _grid()
    coeffs = MfgCoefficients(WF, g)
    sol = solve_linearized_mfg(coeffs)
    assert sol.converged
    assert sol.sweeps == 1
    assert np.all(sol.u.values == 0.0)
    assert np.all(sol.m.values == 0.0)


def test_decoupled_matches_scalar_solves_bit_exactly():
    g = _grid()
    x = g.x
    coeffs = MfgCoefficients(
        WF, g, d1=0.3 * x * (1 - x), c1=0.2 * x * (1 - x), b=0.4
    )
    F = np.sin(np.pi * x)
    G = np.cos(np.pi * x)
    m0 = 6.0 * x * (1 - x)
    h = x * (1 - x)
    sol = solve_linearized_mfg(coeffs, F=F, G=G, m0=m0, h=h)
    assert sol.converged and sol.sweeps == 1

    u_ref = solve_hjb_linear(
        HjbLinearProblem(g, WF, drift=coeffs.d1, source=F, terminal=h)
    )
    m_ref = solve_fp_linear(
        FpLinearProblem(
            g, WF, convection=coeffs.c1, zeroth=coeffs.b, source=G, initial=m0
        )
    )
    assert np.array_equal(sol.u.values, u_ref.values)
    assert np.array_equal(sol.m.values, m_ref.values)


def test_nonlinear_with_zero_hamiltonian_reduces_to_linear():
    g = _grid()
    x = g.x
    d = 0.4 * P22.a(x)
    F = np.sin(np.pi * x)
    G = np.cos(2 * np.pi * x)
    m0 = 16.0 * P22.a(x)
    h = 16.0 * P22.a(x)
    nl = MfgCoefficients(P22, g, p=0.0, d=d)
    lin = MfgCoefficients(P22, g, d2=-d)
    sol_nl = solve_nonlinear_mfg(nl, F=F, G=G, m0=m0, h=h)
    sol_lin = solve_linearized_mfg(lin, F=F, G=G, m0=m0, h=h)
    assert sol_nl.converged and sol_lin.converged
    assert np.max(np.abs(sol_nl.u.values - sol_lin.u.values)) <= 1e-14
    assert np.max(np.abs(sol_nl.m.values - sol_lin.m.values)) <= 1e-14


def test_nonlinear_solve_residual_reaches_tolerance():
    g = _grid(64, 64)
    x = g.x
    coeffs = MfgCoefficients(P22, g, p=0.5 * x * (1 - x), d=0.4 * P22.a(x))
    sol = solve_nonlinear_mfg(
        coeffs, m0=16.0 * P22.a(x), h=16.0 * P22.a(x)
    )
    assert sol.converged
    assert sol.residual_log[-1] <= 1e-9
    assert sol.residual_log[-1] < sol.residual_log[0]


def test_sweep_budget_exhaustion_reports_not_converged():
    g = _grid()
    x = g.x
    coeffs = MfgCoefficients(P22, g, p=0.5 * x * (1 - x), d=0.4 * P22.a(x))
    sol = solve_nonlinear_mfg(
        coeffs,
        m0=16.0 * P22.a(x),
        h=16.0 * P22.a(x),
        cfg=IterConfig(max_sweeps=1, tolerance=1e-14),
    )
    assert not sol.converged
    assert sol.u.values.shape == (g.n_x, g.n_t + 1)


def _nonlinear_pair(g, eps):
    x = g.x
    coeffs = MfgCoefficients(P22, g, p=0.5 * x * (1 - x), d=0.4 * P22.a(x))
    m0 = 16.0 * P22.a(x)
    h = 16.0 * P22.a(x)
    dm0 = 16.0 * P22.a(x) * np.sin(2 * np.pi * x)
    dh = 16.0 * P22.a(x) * np.sin(np.pi * x)
    s1 = solve_nonlinear_mfg(coeffs, m0=m0, h=h)
    s2 = solve_nonlinear_mfg(coeffs, m0=m0 + eps * dm0, h=h + eps * dh)
    assert s1.converged and s2.converged
    return coeffs, s1, s2


def test_difference_fields_antisymmetric():
    g = _grid()
    coeffs, s1, s2 = _nonlinear_pair(g, 1e-2)
    _, u12, m12 = form_difference_coefficients(s1, s2, coeffs)
    _, u21, m21 = form_difference_coefficients(s2, s1, coeffs)
    assert np.array_equal(u12.values, -u21.values)
    assert np.array_equal(m12.values, -m21.values)


def test_identical_solutions_give_zero_difference():
    g = _grid()
    coeffs, s1, _ = _nonlinear_pair(g, 1e-2)
    dc, ud, md = form_difference_coefficients(s1, s1, coeffs)
    assert np.all(ud.values == 0.0)
    assert np.all(md.values == 0.0)
    # coefficients stay well-defined
    assert np.all(np.isfinite(dc.d1))
    assert np.all(np.isfinite(dc.b))


def test_difference_coefficients_anchoring():
    # d1 averages both value gradients; c1 and b are anchored at the first
    # solution, c2 and rho at the second density
    g = _grid()
    coeffs, s1, s2 = _nonlinear_pair(g, 1e-2)
    dc12, _, _ = form_difference_coefficients(s1, s2, coeffs)
    dc21, _, _ = form_difference_coefficients(s2, s1, coeffs)
    assert np.allclose(dc12.d1, dc21.d1, rtol=0, atol=1e-12)
    assert not np.allclose(dc12.c1, dc21.c1, rtol=0, atol=1e-12)
    assert not np.allclose(dc12.rho, dc21.rho, rtol=0, atol=1e-12)


def test_bound_report_unit_ratio_for_matched_drift():
    g = _grid()
    coeffs = MfgCoefficients(WF, g, d1=WF.sqrt_a(g.x))
    report = check_coefficient_bounds(coeffs)
    assert report.value("d1_over_sqrt_a") == pytest.approx(1.0, rel=1e-12)


def test_bound_report_all_zero():
    g = _grid()
    report = check_coefficient_bounds(MfgCoefficients(WF, g))
    for name in ("d1_over_sqrt_a", "c1_over_sqrt_a", "d2_over_a", "b_sup"):
        assert report.value(name) == 0.0


def test_iter_config_validation():
    with pytest.raises(ValueError):
        IterConfig(max_sweeps=0)
    with pytest.raises(ValueError):
        IterConfig(damping=0.0)
    with pytest.raises(ValueError):
        IterConfig(damping=1.5)
    with pytest.raises(ValueError):
        IterConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        IterConfig(divergence_factor=1.0)
