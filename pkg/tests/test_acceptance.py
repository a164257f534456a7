"""Acceptance suite: every criterion at its stated tolerance, one visible
pass/fail line per criterion (printed unconditionally through capsys).

Run as  pytest tests/test_acceptance.py  (add -s to stream the lines live).
"""

import time

import numpy as np
import pytest
import sympy as sp

from torus_ma import dumpio
from torus_ma import equations as eq
from torus_ma import nilframe as nf
from torus_ma import solver as sv
from torus_ma import verify as vf
from torus_ma.cli import write_report
from torus_ma.grid import (
    ScalarField,
    TorusGrid,
    derivative,
    from_function,
    integrate,
    mixed_derivative,
    project_mean_zero,
    random_trig_field,
)

from conftest import branch_safe_field


def announce(capsys, line):
    with capsys.disabled():
        print(line)


def rel(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def d1(u, ax):
    return derivative(u, ax, 1).values


def d2(u, a, b):
    return mixed_derivative(u, a, b).values


@pytest.fixture(scope="module")
def g64():
    return TorusGrid((64, 64))


@pytest.fixture(scope="module")
def g32c():
    return TorusGrid((32, 32, 32))


@pytest.fixture(scope="module")
def star2(g64):
    u = from_function(g64, lambda x, y: 0.012 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
                      + 0.002 * np.cos(2 * np.pi * x) * np.sin(4 * np.pi * y))
    return project_mean_zero(u)


@pytest.fixture(scope="module")
def star3(g32c):
    u = from_function(g32c, lambda x1, x2, y1: 0.01 * np.sin(2 * np.pi * x1) * np.cos(2 * np.pi * y1)
                      + 0.008 * np.cos(2 * np.pi * x2) * np.sin(2 * np.pi * y1))
    return project_mean_zero(u)


def test_criterion_01_flat_identity_suite(capsys, g32c):
    """Type decomposition and top-form ratio of the flat coframe ansatz."""
    rng = np.random.default_rng(101)
    spec = eq.EquationSpec(eq.Family.DETA_T3)
    st = eq.structure_for(spec, g32c)
    t0 = time.time()
    worst_anti = worst_ratio = 0.0
    for _ in range(50):
        u = branch_safe_field(g32c, rng, max_mode=2, hessian_scale=0.4)
        da = nf.exterior_derivative(nf.ansatz_one_form(u, st))
        _, anti = nf.type_split(da)
        worst_anti = max(worst_anti, anti.max_norm() / max(1.0, da.max_norm()))
        ratio = nf.top_form_ratio(nf.form_add(st.omega, da), st)
        a11 = 1.0 + d2(u, 0, 0) + d2(u, 2, 2) + d1(u, 2)
        want = a11 * (1.0 + d2(u, 1, 1)) - d2(u, 0, 1) ** 2 - d2(u, 1, 2) ** 2
        worst_ratio = max(worst_ratio, rel(ratio.values, want))
    elapsed = time.time() - t0
    ok = worst_anti <= 1e-10 and worst_ratio <= 1e-10 and elapsed <= 30.0
    announce(capsys, f"[ACCEPTANCE] 1 flat ansatz identity (50 samples, 32^3): "
                     f"{'PASS' if ok else 'FAIL'} "
                     f"(anti {worst_anti:.2e}, ratio {worst_ratio:.2e}, {elapsed:.1f}s)")
    assert worst_anti <= 1e-10
    assert worst_ratio <= 1e-10
    assert elapsed <= 30.0


def test_criterion_02_warped_identity_suite(capsys, g32c):
    """Same with a field-valued almost-complex action, against the expanded
    coefficient-matrix formula."""
    rng = np.random.default_rng(102)
    worst_anti = worst_ratio = 0.0
    for _ in range(50):
        u = branch_safe_field(g32c, rng, max_mode=2, hessian_scale=0.4)
        h = random_trig_field(g32c, rng, max_mode=1, scale=0.3, axes=(0, 2))
        spec = eq.EquationSpec(eq.Family.WARPED_T3, h=h)
        st = eq.structure_for(spec, g32c)
        da = nf.exterior_derivative(nf.ansatz_one_form(u, st))
        _, anti = nf.type_split(da)
        worst_anti = max(worst_anti, anti.max_norm() / max(1.0, da.max_norm()))
        ratio = nf.top_form_ratio(nf.form_add(st.omega, da), st)
        eh, emh = np.exp(h.values), np.exp(-h.values)
        a11 = (eh * d2(u, 0, 0) + emh * d2(u, 2, 2) + d1(u, 2)
               + eh * d1(h, 0) * d1(u, 0) - emh * d1(h, 2) * d1(u, 2))
        want = ((1.0 + a11) * (1.0 + d2(u, 1, 1))
                - eh * d2(u, 0, 1) ** 2 - emh * d2(u, 1, 2) ** 2)
        worst_ratio = max(worst_ratio, rel(ratio.values, want))
    ok = worst_anti <= 1e-10 and worst_ratio <= 1e-10
    announce(capsys, f"[ACCEPTANCE] 2 warped ansatz identity (50 samples): "
                     f"{'PASS' if ok else 'FAIL'} "
                     f"(anti {worst_anti:.2e}, ratio {worst_ratio:.2e})")
    assert worst_anti <= 1e-10
    assert worst_ratio <= 1e-10


def test_criterion_03_lagrangian_identity_suite(capsys):
    """Both Lagrangian-fibration reductions with coframe-derived parameters."""
    rng = np.random.default_rng(103)
    g = TorusGrid((32, 32))
    worst = 0.0
    for _ in range(20):
        u = branch_safe_field(g, rng, max_mode=2, hessian_scale=0.3)
        a, c0 = rng.uniform(0.6, 1.7, 2)
        shear = rng.uniform(-1.0, 1.0)
        pxx = eq.CoframeParams(scale_x=a, scale_y=c0, shear=shear,
                               lam1=rng.uniform(-1, 1), lam2=rng.uniform(-1, 1))
        sxx = eq.EquationSpec.lagr_x1x2_from_coframe(pxx)
        assert sxx.l1 == pytest.approx(1.0 / a**2) and sxx.l2 == pytest.approx(1.0 / c0**2)
        worst = max(worst, rel(eq.residual_geom(sxx, u).values,
                               eq.residual(sxx, u).values))
        pxy = eq.CoframeParams(scale_x=a, scale_y=c0, shear=shear,
                               lam=rng.uniform(-1, 1), mu=rng.uniform(-1, 1))
        sxy = eq.EquationSpec.lagr_x2y1_from_coframe(pxy)
        assert sxy.l1 == pytest.approx(-1.0 / a**2)
        assert sxy.m1 == pytest.approx(-pxy.lam * a / c0**2)
        assert sxy.m2 == pytest.approx(-pxy.lam * shear / c0**2)
        worst = max(worst, rel(eq.residual_geom(sxy, u).values,
                               eq.residual(sxy, u).values))
    ok = worst <= 1e-10
    announce(capsys, f"[ACCEPTANCE] 3 Lagrangian coframe identities (20 parameter sets): "
                     f"{'PASS' if ok else 'FAIL'} (worst {worst:.2e})")
    assert worst <= 1e-10


def test_criterion_04_manufactured_roundtrips(capsys, g64, g32c, star2, star3):
    """Continuity solves recover manufactured solutions in every family."""
    t0 = time.time()
    h2 = from_function(g64, lambda x, y: 0.3 * np.sin(2 * np.pi * x))
    cases_2d = [
        ("STDMA", eq.EquationSpec(eq.Family.STDMA)),
        ("GENMA", eq.EquationSpec(eq.Family.GENMA)),
        ("LAGR_X1X2(+1)", eq.EquationSpec(eq.Family.LAGR_X1X2, l1=1.0, l2=1.0)),
        ("LAGR_X1X2(-1)", eq.EquationSpec(eq.Family.LAGR_X1X2, l1=-1.0, l2=-1.0)),
        ("LAGR_X2Y1(+1)", eq.EquationSpec(eq.Family.LAGR_X2Y1, l1=1.0, l2=1.0,
                                          m1=0.3, m2=-0.2)),
        ("LAGR_X2Y1(-1)", eq.EquationSpec(eq.Family.LAGR_X2Y1, l1=-1.0, l2=-1.0,
                                          m1=0.3, m2=-0.2)),
        ("WARPED(c=0)", eq.EquationSpec(eq.Family.WARPED, c=0.0, h=h2)),
        ("WARPED(c=1)", eq.EquationSpec(eq.Family.WARPED, c=1.0, h=h2)),
    ]
    h3 = from_function(g32c, lambda x1, x2, y1: 0.2 * np.sin(2 * np.pi * x1)
                       + 0.15 * np.cos(2 * np.pi * y1))
    cases_3d = [
        ("DETA_T3", eq.EquationSpec(eq.Family.DETA_T3)),
        ("WARPED_T3", eq.EquationSpec(eq.Family.WARPED_T3, h=h3)),
    ]
    cfg = sv.SolverConfig()
    lines = []
    ok = True
    for name, spec in cases_2d:
        F = eq.normalize_datum(spec, eq.manufactured_datum(spec, star2))
        rep = sv.continuity_solve(spec, F, cfg)
        err = float(np.max(np.abs(rep.u.values - star2.values)))
        good = rep.converged and err <= 1e-7
        ok = ok and good
        lines.append(f"{name} err={err:.1e}")
        assert rep.converged, name
        assert err <= 1e-7, (name, err)
        assert vf.verify_solution(rep.u, F, spec, tol=100 * cfg.newton_tol).passed, name
    for name, spec in cases_3d:
        F = eq.normalize_datum(spec, eq.manufactured_datum(spec, star3))
        rep = sv.continuity_solve(spec, F, cfg)
        err = float(np.max(np.abs(rep.u.values - star3.values)))
        good = rep.converged and err <= 1e-6
        ok = ok and good
        lines.append(f"{name} err={err:.1e}")
        assert rep.converged, name
        assert err <= 1e-6, (name, err)
        assert vf.verify_solution(rep.u, F, spec, tol=100 * cfg.newton_tol).passed, name
    elapsed = time.time() - t0
    ok = ok and elapsed <= 300.0
    announce(capsys, f"[ACCEPTANCE] 4 manufactured roundtrips: "
                     f"{'PASS' if ok else 'FAIL'} ({'; '.join(lines)}; {elapsed:.0f}s)")
    assert elapsed <= 300.0


def test_criterion_05_warped_end_to_end(capsys, g64):
    """Full homotopy for the warped family with drift, geometric residual and
    a-priori gradient bound at the end."""
    h = from_function(g64, lambda x, y: 0.3 * np.sin(2 * np.pi * x))
    spec = eq.EquationSpec(eq.Family.WARPED, c=1.0, h=h)
    F = eq.normalize_datum(spec, from_function(
        g64, lambda x, y: 0.8 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)))
    rep = sv.continuity_solve(spec, F, sv.SolverConfig())
    assert rep.converged
    assert rep.trace[-1].t == 1.0
    ver = vf.verify_solution(rep.u, F, spec, tol=1e-7)
    gb = rep.monitors["gradient_bound"]
    ok = (ver.topform_residual <= 1e-7 and abs(rep.b) <= 1e-6
          and gb.applicable and gb.passed)
    announce(capsys, f"[ACCEPTANCE] 5 warped end-to-end homotopy: "
                     f"{'PASS' if ok else 'FAIL'} "
                     f"(topform {ver.topform_residual:.1e}, |b| {abs(rep.b):.1e}, "
                     f"|u_x| {gb.observed_x:.3f} <= {gb.bound_x:.3f})")
    assert ver.topform_residual <= 1e-7
    assert abs(rep.b) <= 1e-6
    assert gb.passed


def test_criterion_06_mass_and_volume(capsys, g64):
    """The flat-family residual integrates to one for any potential, and the
    rebuilt top form conserves total volume in every family."""
    rng = np.random.default_rng(106)
    spec = eq.EquationSpec(eq.Family.STDMA)
    worst_mass = 0.0
    for _ in range(20):
        u = branch_safe_field(g64, rng, max_mode=4, hessian_scale=0.5)
        worst_mass = max(worst_mass, abs(integrate(eq.residual(spec, u)) - 1.0))

    h2 = from_function(g64, lambda x, y: 0.3 * np.sin(2 * np.pi * x))
    g3 = TorusGrid((32, 32, 32))
    h3 = random_trig_field(g3, rng, max_mode=1, scale=0.3, axes=(0, 2))
    g4 = TorusGrid((16,) * 4)
    g3n = TorusGrid((16,) * 3)
    volume_cases = [
        (eq.EquationSpec(eq.Family.STDMA), g64),
        (eq.EquationSpec(eq.Family.GENMA), g64),
        (eq.EquationSpec(eq.Family.LAGR_X1X2, l1=1.3, l2=0.7), g64),
        (eq.EquationSpec(eq.Family.LAGR_X1X2, l1=-1.3, l2=-0.7), g64),
        (eq.EquationSpec(eq.Family.LAGR_X2Y1, l1=1.2, l2=0.8, m1=0.4, m2=-0.3), g64),
        (eq.EquationSpec(eq.Family.LAGR_X2Y1, l1=-1.2, l2=-0.8, m1=0.4, m2=-0.3), g64),
        (eq.EquationSpec(eq.Family.WARPED, c=1.0, h=h2), g64),
        (eq.EquationSpec(eq.Family.DETA_T3), g3),
        (eq.EquationSpec(eq.Family.WARPED_T3, h=h3), g3),
        (eq.EquationSpec(eq.Family.NDIM_FULL, n=3), g4),
        (eq.EquationSpec(eq.Family.NDIM_HESSIAN, n=3), g3n),
        (eq.EquationSpec(eq.Family.NDIM_B, n=3), g3n),
    ]
    worst_vol = 0.0
    for spec_v, grid in volume_cases:
        mode = 1 if grid.d >= 4 else 2
        u = branch_safe_field(grid, rng, max_mode=mode, hessian_scale=0.3)
        st = eq.structure_for(spec_v, grid)
        w = vf.reconstruct_form(u, spec_v, structure=st)
        ratio = nf.top_form_ratio(w, st)
        worst_vol = max(worst_vol, abs(float(np.mean(ratio.values)) - 1.0))
    ok = worst_mass <= 1e-11 and worst_vol <= 1e-10
    announce(capsys, f"[ACCEPTANCE] 6 mass identity and volume conservation: "
                     f"{'PASS' if ok else 'FAIL'} "
                     f"(mass {worst_mass:.1e}, volume {worst_vol:.1e})")
    assert worst_mass <= 1e-11
    assert worst_vol <= 1e-10


def test_criterion_07_linearization_slope(capsys, g64):
    """Taylor-remainder slope of the analytic linearization for every family."""
    rng = np.random.default_rng(107)
    h2 = from_function(g64, lambda x, y: 0.3 * np.sin(2 * np.pi * x))
    g3 = TorusGrid((32, 32, 32))
    h3 = random_trig_field(g3, rng, max_mode=1, scale=0.3, axes=(0, 2))
    g4 = TorusGrid((8,) * 4)
    g3n = TorusGrid((8,) * 3)
    cases = [
        (eq.EquationSpec(eq.Family.STDMA), g64),
        (eq.EquationSpec(eq.Family.GENMA), g64),
        (eq.EquationSpec(eq.Family.LAGR_X1X2, l1=-1.3, l2=-0.7), g64),
        (eq.EquationSpec(eq.Family.LAGR_X2Y1, l1=1.2, l2=0.8, m1=0.4, m2=-0.3), g64),
        (eq.EquationSpec(eq.Family.WARPED, c=1.0, h=h2), g64),
        (eq.EquationSpec(eq.Family.DETA_T3), g3),
        (eq.EquationSpec(eq.Family.WARPED_T3, h=h3), g3),
        (eq.EquationSpec(eq.Family.NDIM_FULL, n=3), g4),
        (eq.EquationSpec(eq.Family.NDIM_HESSIAN, n=3), g3n),
        (eq.EquationSpec(eq.Family.NDIM_B, n=3), g3n),
    ]
    eps_list = (1e-3, 1e-4, 1e-5)
    worst_low, worst_high = 2.0, 2.0
    for spec, grid in cases:
        mode = 1 if grid.d >= 4 else 2
        u = branch_safe_field(grid, rng, max_mode=mode, hessian_scale=0.25)
        w = branch_safe_field(grid, rng, max_mode=mode, hessian_scale=1.0)
        r0 = eq.residual(spec, u).values
        lw = eq.linearize_apply(spec, u, w).values
        rems = []
        for epsilon in eps_list:
            up = ScalarField(grid, u.values + epsilon * w.values)
            rems.append(float(np.max(np.abs(
                eq.residual(spec, up).values - r0 - epsilon * lw))))
        slope = float(np.polyfit(np.log(eps_list), np.log(rems), 1)[0])
        worst_low = min(worst_low, slope)
        worst_high = max(worst_high, slope)
        assert 1.9 <= slope <= 2.1, (spec.family, slope)
    announce(capsys, f"[ACCEPTANCE] 7 linearization Taylor slope (10 families): "
                     f"PASS (slopes in [{worst_low:.3f}, {worst_high:.3f}])")


def test_criterion_08_potential_dichotomy(capsys, g64):
    """Solved flat-fibration potentials wedge to zero; mixed-fibration
    solutions with transverse dependence are obstructed."""
    cfg = sv.SolverConfig()
    spec_a = eq.EquationSpec(eq.Family.STDMA)
    F_a = eq.normalize_datum(spec_a, from_function(
        g64, lambda x, y: 0.8 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)))
    rep_a = sv.continuity_solve(spec_a, F_a, cfg)
    assert rep_a.converged
    defect_a = vf.potential_defect(rep_a.u, spec_a)

    spec_b = eq.EquationSpec(eq.Family.GENMA)
    F_b = eq.normalize_datum(spec_b, from_function(
        g64, lambda x, y: 0.5 * np.cos(2 * np.pi * x)
        + 0.4 * np.sin(2 * np.pi * y) * np.cos(2 * np.pi * x)))
    rep_b = sv.continuity_solve(spec_b, F_b, cfg)
    assert rep_b.converged
    assert derivative(rep_b.u, 1, 1).max_norm() > 1e-3  # u_y not identically zero
    defect_b = vf.potential_defect(rep_b.u, spec_b)
    ok = defect_a <= 1e-8 and defect_b >= 1e-4
    announce(capsys, f"[ACCEPTANCE] 8 potential dichotomy: "
                     f"{'PASS' if ok else 'FAIL'} "
                     f"(flat {defect_a:.1e} <= 1e-8, mixed {defect_b:.1e} >= 1e-4)")
    assert defect_a <= 1e-8
    assert defect_b >= 1e-4


def test_criterion_09_bundle_cross_check(capsys, tmp_path):
    """n = 3: the exterior-algebra residual is computed on the 4-torus and its
    discrepancy against the published closed form is emitted as an artifact
    (reported, not asserted); the Hessian special case solves to tolerance."""
    rng = np.random.default_rng(109)
    g4 = TorusGrid((16,) * 4)
    u = branch_safe_field(g4, rng, max_mode=1, hessian_scale=0.3)
    spec = eq.EquationSpec(eq.Family.NDIM_FULL, n=3)
    geom = eq.residual_geom(spec, u)
    printed = eq.ndim_printed(spec, u)
    disc = ScalarField(g4, geom.values - printed.values)
    dumpio.write_field(tmp_path / "bundle_discrepancy.tma", disc)
    write_report(tmp_path / "bundle_discrepancy.txt", {
        "comparison": "exterior-algebra residual minus published closed form",
        "assertion": "none (documented open question)",
        "max_abs": float(np.max(np.abs(disc.values))),
        "mean_abs": float(np.mean(np.abs(disc.values))),
        "also_matched_catalog_residual": rel(geom.values,
                                             eq.residual(spec, u).values),
    })
    assert (tmp_path / "bundle_discrepancy.tma").exists()
    assert np.all(np.isfinite(disc.values))

    g3 = TorusGrid((32,) * 3)
    u3 = from_function(g3, lambda x1, x2, x3: 0.008 * np.sin(2 * np.pi * x1)
                       * np.cos(2 * np.pi * x2)
                       + 0.006 * np.cos(2 * np.pi * x2) * np.sin(2 * np.pi * x3))
    u3 = project_mean_zero(u3)
    spec_h = eq.EquationSpec(eq.Family.NDIM_HESSIAN, n=3)
    F = eq.normalize_datum(spec_h, eq.manufactured_datum(spec_h, u3))
    rep = sv.continuity_solve(spec_h, F, sv.SolverConfig())
    err = float(np.max(np.abs(rep.u.values - u3.values)))
    ok = rep.converged and err <= 1e-6
    announce(capsys, f"[ACCEPTANCE] 9 bundle cross-check: "
                     f"{'PASS' if ok else 'FAIL'} "
                     f"(discrepancy artifact max {np.max(np.abs(disc.values)):.2e} emitted; "
                     f"Hessian roundtrip err {err:.1e})")
    assert rep.converged
    assert err <= 1e-6


def test_criterion_10_spectral_convergence(capsys):
    """Manufactured error decays super-algebraically under refinement."""
    x = sp.symbols("x")
    rho = 0.4
    kernel = (1 - rho**2) / (1 - 2 * rho * sp.cos(2 * sp.pi * x) + rho**2) - 1
    gfun = sp.lambdify(x, kernel, "numpy")
    gp = sp.lambdify(x, sp.diff(kernel, x), "numpy")
    gpp = sp.lambdify(x, sp.diff(kernel, x, 2), "numpy")
    xs64 = np.arange(64) / 64
    kappa = 0.25 / np.max(np.abs(np.outer(gpp(xs64), gfun(xs64))))

    spec = eq.EquationSpec(eq.Family.STDMA)
    errs = {}
    for n in (16, 32, 64):
        g = TorusGrid((n, n))
        xs = np.arange(n) / n
        a, apx, apxx = gfun(xs), gp(xs), gpp(xs)
        u_star = kappa * np.outer(a, a)
        res = ((1 + kappa * np.outer(apxx, a)) * (1 + kappa * np.outer(a, apxx))
               - (kappa * np.outer(apx, apx)) ** 2)
        assert res.min() > 0
        F = eq.normalize_datum(spec, ScalarField(g, np.log(res)))
        rep = sv.continuity_solve(spec, F, sv.SolverConfig(newton_tol=1e-12))
        assert rep.converged
        target = project_mean_zero(ScalarField(g, u_star))
        errs[n] = float(np.max(np.abs(rep.u.values - target.values)))
    ratio_a = errs[16] / errs[32]
    ratio_b = errs[32] / errs[64]
    ok = ratio_a >= 1e3 and ratio_b >= 1e3
    announce(capsys, f"[ACCEPTANCE] 10 spectral convergence: "
                     f"{'PASS' if ok else 'FAIL'} "
                     f"(err 16/32/64 = {errs[16]:.1e}/{errs[32]:.1e}/{errs[64]:.1e})")
    assert ratio_a >= 1e3
    assert ratio_b >= 1e3
