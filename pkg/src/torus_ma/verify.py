"""Geometric post-verification of solved potentials.

Rebuilds the candidate symplectic form from a scalar solution, then checks:
the (1,1) type of the update, compatibility positivity of the pairing with
the almost-complex action, the pointwise top-form equation, conservation of
total volume, and whether the solution is a potential in the strict sense
(the correction 1-form's differential wedges to zero against the new form).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nilframe as nf
from .equations import EquationSpec, branch_sign, structure_for
from .grid import ScalarField, integrate


@dataclass
class VerificationReport:
    anti_invariant_norm: float
    positivity_margin: float
    topform_residual: float
    volume_defect: float
    potential_defect: float
    passed: bool

    def __post_init__(self):
        for name in ("anti_invariant_norm", "topform_residual", "volume_defect",
                     "potential_defect"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")


def reconstruct_form(
    u: ScalarField,
    spec: EquationSpec,
    structure: nf.NilStructure | None = None,
) -> nf.InvariantForm:
    """omega + d(alpha(u)) on the family's coframe structure."""
    st = structure if structure is not None else structure_for(spec, u.grid)
    alpha = nf.ansatz_one_form(u, st)
    return nf.form_add(st.omega, nf.exterior_derivative(alpha))


def _vector_j_matrix(st: nf.NilStructure) -> np.ndarray:
    """J acting on the dual frame, stacked over the grid: column b holds the
    frame components of J applied to the b-th frame vector."""
    r = st.rank
    J = np.zeros(st.grid.sizes + (r, r))
    for i in range(r):
        for b, coeff in st.j_table.get(i, {}).items():
            J[..., i, b] = np.broadcast_to(np.asarray(coeff, dtype=float), st.grid.sizes)
    return J


def _form_matrix(w: nf.InvariantForm) -> np.ndarray:
    """Antisymmetric coefficient matrix of a 2-form in the dual frame."""
    st = w.structure
    r = st.rank
    W = np.zeros(st.grid.sizes + (r, r))
    for (i, j), c in w.terms.items():
        vals = np.broadcast_to(np.asarray(c, dtype=float), st.grid.sizes)
        W[..., i, j] = vals
        W[..., j, i] = -vals
    return W


def compatibility_margin(w: nf.InvariantForm, sign: float = 1.0) -> float:
    """Min over the grid of the smallest eigenvalue of the symmetrized
    pairing w(., J.); positive iff w tames and is compatible with J.

    `sign` flips the pairing for the families tracking the negative branch,
    where the compatible metric is built from the opposite orientation of the
    almost-complex action (matching the branch adjustment of the ellipticity
    monitor)."""
    st = w.structure
    G = _form_matrix(w) @ _vector_j_matrix(st)
    G = 0.5 * sign * (G + np.swapaxes(G, -1, -2))
    return float(np.min(np.linalg.eigvalsh(G)[..., 0]))


def potential_defect(
    u: ScalarField,
    spec: EquationSpec,
    structure: nf.NilStructure | None = None,
) -> float:
    """Max coefficient of d(a) ^ w relative to omega^2, where a is the ansatz
    correction (the part of alpha beyond -J du); zero exactly when u is a
    potential for the reconstructed form."""
    st = structure if structure is not None else structure_for(spec, u.grid)
    corr = st.zero_form(1)
    for coeff, label in st.correction:
        if coeff != 0.0:
            corr = nf.form_add(corr, nf.InvariantForm(
                st, 1, {(label,): coeff * u.values}))
    w = nf.form_add(st.omega, nf.exterior_derivative(nf.ansatz_one_form(u, st)))
    da_w = nf.wedge(nf.exterior_derivative(corr), w)
    om2 = nf.wedge(st.omega, st.omega)
    return da_w.max_norm() / max(om2.max_norm(), 1.0)


def verify_solution(
    u: ScalarField,
    F: ScalarField,
    spec: EquationSpec,
    tol: float = 1e-8,
) -> VerificationReport:
    """All geometric checks on a candidate solution u with datum F.

    PASS requires the type defect, the top-form residual and the volume
    defect within tol and a strictly positive compatibility margin; the
    potential defect is reported as information (it is an intrinsic property
    of the family, not an error measure).
    """
    if not u.grid.compatible(F.grid):
        raise ValueError("u and F must share one grid")
    st = structure_for(spec, u.grid)
    w = reconstruct_form(u, spec, structure=st)
    delta = nf.form_sub(w, st.omega)
    _, anti = nf.type_split(delta)
    anti_norm = anti.max_norm()

    ratio = nf.top_form_ratio(w, st)
    topform = float(np.max(np.abs(ratio.values - np.exp(F.values))))
    volume = abs(integrate(ratio) - 1.0)
    margin = compatibility_margin(w, sign=branch_sign(spec))
    pot = potential_defect(u, spec, structure=st)
    passed = bool(anti_norm <= tol and topform <= tol and volume <= tol and margin > 0.0)
    return VerificationReport(
        anti_invariant_norm=anti_norm,
        positivity_margin=margin,
        topform_residual=topform,
        volume_defect=volume,
        potential_defect=pot,
        passed=passed,
    )
