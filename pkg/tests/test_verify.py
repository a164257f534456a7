import numpy as np
import pytest

from torus_ma import equations as eq
from torus_ma import nilframe as nf
from torus_ma import solver as sv
from torus_ma import verify as vf
from torus_ma.grid import (
    ScalarField,
    TorusGrid,
    from_function,
    mixed_derivative,
    project_mean_zero,
    random_trig_field,
)

from conftest import branch_safe_field, rel_err


def zero_field(grid):
    return ScalarField(grid, np.zeros(grid.sizes))


@pytest.fixture(scope="module")
def solved_stdma():
    g = TorusGrid((64, 64))
    spec = eq.EquationSpec(eq.Family.STDMA)
    F = eq.normalize_datum(spec, from_function(
        g, lambda x, y: 0.8 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)))
    rep = sv.continuity_solve(spec, F, sv.SolverConfig())
    assert rep.converged
    return spec, F, rep


@pytest.fixture(scope="module")
def solved_genma():
    g = TorusGrid((64, 64))
    spec = eq.EquationSpec(eq.Family.GENMA)
    F = eq.normalize_datum(spec, from_function(
        g, lambda x, y: 0.5 * np.cos(2 * np.pi * x) + 0.4 * np.sin(2 * np.pi * y)
        * np.cos(2 * np.pi * x)))
    rep = sv.continuity_solve(spec, F, sv.SolverConfig())
    assert rep.converged
    return spec, F, rep


class TestReconstruct:
    def test_zero_gives_omega(self):
        g = TorusGrid((16, 16))
        spec = eq.EquationSpec(eq.Family.STDMA)
        st = eq.structure_for(spec, g)
        w = vf.reconstruct_form(zero_field(g), spec, structure=st)
        assert nf.form_sub(w, st.omega).max_norm() == 0.0

    def test_stdma_coefficients(self, rng):
        # the rebuilt form carries 1 + u_xx, 1 + u_yy, and the mixed terms
        g = TorusGrid((32, 32))
        spec = eq.EquationSpec(eq.Family.STDMA)
        u = branch_safe_field(g, rng, max_mode=2, hessian_scale=0.3)
        w = vf.reconstruct_form(u, spec)
        uxx = mixed_derivative(u, 0, 0).values
        uyy = mixed_derivative(u, 1, 1).values
        uxy = mixed_derivative(u, 0, 1).values
        assert rel_err(w.coefficient((0, 2)), 1.0 + uxx) < 1e-11
        assert rel_err(w.coefficient((1, 3)), 1.0 + uyy) < 1e-11
        assert rel_err(w.coefficient((0, 3)), uxy) < 1e-11
        assert rel_err(w.coefficient((1, 2)), uxy) < 1e-11
        # no update along the fiber pair for base-only potentials
        assert np.max(np.abs(w.coefficient((0, 1)))) < 1e-11
        assert np.max(np.abs(w.coefficient((2, 3)))) < 1e-11

    def test_genma_cross_terms_present(self, rng):
        g = TorusGrid((32, 32))
        spec = eq.EquationSpec(eq.Family.GENMA)
        u = branch_safe_field(g, rng, max_mode=2, hessian_scale=0.3)
        w = vf.reconstruct_form(u, spec)
        # labels for the x2-y1 fibration: e1, e2, f1, f2 with x -> e2, y -> f1
        uxy = mixed_derivative(u, 0, 1).values
        assert rel_err(w.coefficient((0, 1)), uxy) < 1e-11
        assert rel_err(w.coefficient((2, 3)), uxy) < 1e-11


class TestVerifySolution:
    def test_flat_case_all_zero(self):
        g = TorusGrid((16, 16))
        spec = eq.EquationSpec(eq.Family.STDMA)
        rep = vf.verify_solution(zero_field(g), zero_field(g), spec)
        assert rep.anti_invariant_norm == 0.0
        assert rep.topform_residual == 0.0
        assert rep.volume_defect == 0.0
        assert rep.potential_defect == 0.0
        assert rep.positivity_margin == pytest.approx(1.0)
        assert rep.passed

    def test_converged_stdma_passes(self, solved_stdma):
        spec, F, rep = solved_stdma
        ver = vf.verify_solution(rep.u, F, spec, tol=1e-8)
        assert ver.passed
        assert ver.potential_defect <= 1e-8

    def test_converged_genma_potential_obstruction(self, solved_genma):
        spec, F, rep = solved_genma
        ver = vf.verify_solution(rep.u, F, spec, tol=1e-8)
        assert ver.passed
        assert ver.potential_defect >= 1e-4

    def test_grid_mismatch_rejected(self):
        spec = eq.EquationSpec(eq.Family.STDMA)
        u = zero_field(TorusGrid((16, 16)))
        F = zero_field(TorusGrid((32, 32)))
        with pytest.raises(ValueError):
            vf.verify_solution(u, F, spec)


class TestVolumeConservation:
    def test_any_potential_preserves_volume(self, rng):
        # exactness of the update makes the total volume invariant for any
        # periodic potential, solution or not
        cases = []
        g2 = TorusGrid((32, 32))
        u2 = branch_safe_field(g2, rng, max_mode=2, hessian_scale=0.4)
        h2 = from_function(g2, lambda x, y: 0.3 * np.sin(2 * np.pi * x))
        for spec in (eq.EquationSpec(eq.Family.STDMA),
                     eq.EquationSpec(eq.Family.GENMA),
                     eq.EquationSpec(eq.Family.LAGR_X1X2, l1=1.3, l2=0.6),
                     eq.EquationSpec(eq.Family.LAGR_X2Y1, l1=-1.3, l2=-0.6,
                                     m1=0.4, m2=-0.2),
                     eq.EquationSpec(eq.Family.WARPED, c=1.0, h=h2)):
            cases.append((spec, u2))
        g3 = TorusGrid((32, 32, 32))
        u3 = branch_safe_field(g3, rng, max_mode=2, hessian_scale=0.3)
        h3 = random_trig_field(g3, rng, max_mode=1, scale=0.3, axes=(0, 2))
        cases.append((eq.EquationSpec(eq.Family.DETA_T3), u3))
        cases.append((eq.EquationSpec(eq.Family.WARPED_T3, h=h3), u3))
        g4 = TorusGrid((16,) * 4)
        cases.append((eq.EquationSpec(eq.Family.NDIM_FULL, n=3),
                      branch_safe_field(g4, rng, max_mode=1, hessian_scale=0.3)))
        g3n = TorusGrid((16,) * 3)
        u3n = branch_safe_field(g3n, rng, max_mode=1, hessian_scale=0.3)
        cases.append((eq.EquationSpec(eq.Family.NDIM_HESSIAN, n=3), u3n))
        cases.append((eq.EquationSpec(eq.Family.NDIM_B, n=3), u3n))

        for spec, u in cases:
            st = eq.structure_for(spec, u.grid)
            w = vf.reconstruct_form(u, spec, structure=st)
            ratio = nf.top_form_ratio(w, st)
            assert abs(float(np.mean(ratio.values)) - 1.0) <= 1e-10, spec.family

    def test_positivity_co_occurrence(self, rng):
        # compatibility positivity of the rebuilt form and the coefficient
        # matrix margin agree in sign on branch and off branch
        g = TorusGrid((32, 32))
        spec = eq.EquationSpec(eq.Family.STDMA)
        st = eq.structure_for(spec, g)
        for _ in range(6):
            u = branch_safe_field(g, rng, max_mode=2, hessian_scale=0.5)
            margin = vf.compatibility_margin(vf.reconstruct_form(u, spec, structure=st))
            monitor = sv.ellipticity_monitor(spec, u)
            assert margin > 0 and monitor > 0
        bad = from_function(g, lambda x, y: 2.5 / (2 * np.pi) ** 2 * np.cos(2 * np.pi * x))
        margin = vf.compatibility_margin(vf.reconstruct_form(bad, spec, structure=st))
        monitor = sv.ellipticity_monitor(spec, bad)
        assert margin < 0 and monitor < 0


class TestPotentialDefect:
    def test_zero_candidate(self):
        g = TorusGrid((16, 16))
        assert vf.potential_defect(zero_field(g), eq.EquationSpec(eq.Family.STDMA)) == 0.0

    def test_base_fibration_always_potential(self, rng):
        # for the x1-x2 fibration the correction never obstructs
        g = TorusGrid((32, 32))
        u = branch_safe_field(g, rng, max_mode=3, hessian_scale=0.4)
        assert vf.potential_defect(u, eq.EquationSpec(eq.Family.STDMA)) <= 1e-12

    def test_mixed_fibration_obstruction(self, rng):
        # a y-dependent potential on the x2-y1 fibration is obstructed
        g = TorusGrid((32, 32))
        u = branch_safe_field(g, rng, max_mode=2, hessian_scale=0.4)
        assert vf.potential_defect(u, eq.EquationSpec(eq.Family.GENMA)) > 1e-4
