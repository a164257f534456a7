"""Catalog of reduced scalar volume equations on periodic tori.

Each family states a pointwise residual whose zero set (against a prescribed
right-hand side e^F) is the reduced Calabi-Yau volume equation of one torus
bundle geometry.  Every family also carries a geometric realization through
`nilframe`, so the scalar formula can be cross-checked by rebuilding the
2-form and expanding its top wedge power.

Warped families evaluate their principal coefficient in divergence form,
(e^h u_x)_x computed as the spectral derivative of the pointwise product:
this is exactly the composition the exterior-algebra route performs, so the
two routes agree to grid roundoff rather than to an aliasing tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import nilframe as nf
from .grid import (
    ScalarField,
    TorusGrid,
    derivative,
    integrate,
    mixed_derivative,
    resample,
)


class Family(str, Enum):
    STDMA = "STDMA"
    GENMA = "GENMA"
    LAGR_X1X2 = "LAGR_X1X2"
    LAGR_X2Y1 = "LAGR_X2Y1"
    WARPED = "WARPED"
    DETA_T3 = "DETA_T3"
    WARPED_T3 = "WARPED_T3"
    NDIM_FULL = "NDIM_FULL"
    NDIM_HESSIAN = "NDIM_HESSIAN"
    NDIM_B = "NDIM_B"


_T2_FAMILIES = (Family.STDMA, Family.GENMA, Family.LAGR_X1X2, Family.LAGR_X2Y1, Family.WARPED)


@dataclass
class CoframeParams:
    """Invariant Hermitian-coframe data for the Lagrangian-fibration families.

    scale_x, scale_y and shear are the expansion constants of the base
    coordinate differentials in the coframe; lam1/lam2 (or lam, mu) are the
    structure constants of the non-closed coframe directions.
    """

    scale_x: float
    scale_y: float
    shear: float = 0.0
    lam1: float = 0.0
    lam2: float = 0.0
    lam: float = 0.0
    mu: float = 0.0


@dataclass
class EquationSpec:
    """One member of the reduced-equation catalog with its parameters."""

    family: Family
    l1: float = 1.0
    l2: float = 1.0
    m1: float = 0.0
    m2: float = 0.0
    c: float = 0.0
    h: ScalarField | None = None
    n: int = 2
    coframe: CoframeParams | None = None

    def __post_init__(self):
        self.family = Family(self.family)
        if self.family is Family.STDMA:
            self.l1, self.l2, self.m1, self.m2 = 1.0, 1.0, 0.0, 0.0
        elif self.family is Family.GENMA:
            self.l1, self.l2, self.m1, self.m2 = 1.0, 1.0, 0.0, 1.0
        if self.family in (Family.LAGR_X1X2, Family.LAGR_X2Y1):
            if self.l1 * self.l2 <= 0:
                raise ValueError("l1 and l2 must be both positive or both negative")
        if self.family in (Family.WARPED, Family.WARPED_T3):
            if self.h is None:
                raise ValueError(f"{self.family.value} requires the exponent field h")
            # h is a profile in x (resp. in (x1, y1)); dependence on the
            # second axis would silently change the family
            along = np.take(self.h.values, [0], axis=1)
            drift = float(np.max(np.abs(self.h.values - along)))
            if drift > 1e-12 * max(1.0, self.h.max_norm()):
                raise ValueError("h must be constant along the second coordinate")
        if self.family in (Family.NDIM_FULL, Family.NDIM_HESSIAN, Family.NDIM_B):
            if not 2 <= self.n <= 4:
                raise ValueError("higher-dimensional families support n = 2..4")

    @property
    def dim(self) -> int:
        if self.family in _T2_FAMILIES:
            return 2
        if self.family in (Family.DETA_T3, Family.WARPED_T3):
            return 3
        if self.family is Family.NDIM_FULL:
            return self.n + 1
        return self.n

    @property
    def axis_names(self) -> tuple[str, ...]:
        return family_axis_names(self.family, self.n)

    @classmethod
    def lagr_x1x2_from_coframe(cls, params: CoframeParams) -> "EquationSpec":
        """Fibration over (x1, x2): l_i from the coordinate scales; the
        structure constants lam1, lam2 drop out of the reduced equation."""
        a, c0 = params.scale_x, params.scale_y
        return cls(Family.LAGR_X1X2, l1=1.0 / a**2, l2=1.0 / c0**2, coframe=params)

    @classmethod
    def lagr_x2y1_from_coframe(cls, params: CoframeParams) -> "EquationSpec":
        """Fibration over (x2, y1): negative l_i, first-order coefficients
        m1 = -lam*scale_x/scale_y^2 and m2 = -lam*shear/scale_y^2."""
        a, c0 = params.scale_x, params.scale_y
        return cls(
            Family.LAGR_X2Y1,
            l1=-1.0 / a**2,
            l2=-1.0 / c0**2,
            m1=-params.lam * a / c0**2,
            m2=-params.lam * params.shear / c0**2,
            coframe=params,
        )


def family_axis_names(family: Family | str, n: int = 2) -> tuple[str, ...]:
    """Base-coordinate names of a family's torus, in grid-axis order."""
    family = Family(family)
    if family in _T2_FAMILIES:
        return ("x", "y")
    if family in (Family.DETA_T3, Family.WARPED_T3):
        return ("x1", "x2", "y1")
    if family is Family.NDIM_FULL:
        return tuple(f"x{k + 1}" for k in range(n)) + ("y1",)
    if family is Family.NDIM_HESSIAN:
        return tuple(f"x{k + 1}" for k in range(n))
    return tuple(f"z{k + 1}" for k in range(n))


def _check_grid(spec: EquationSpec, u: ScalarField) -> None:
    if u.grid.d != spec.dim:
        raise ValueError(f"{spec.family.value} lives on a {spec.dim}-torus, "
                         f"got a {u.grid.d}-d field")
    if spec.h is not None and not spec.h.grid.compatible(u.grid):
        raise ValueError("h and u must share one grid")


def _d1(u, ax):
    return derivative(u, ax, 1).values


def _d2(u, ax_a, ax_b):
    return mixed_derivative(u, ax_a, ax_b).values


def _warped_principal(u: ScalarField, h: ScalarField, axis: int, c: float = 0.0):
    """(e^h u_a)_a + c * u_a along one axis, spectral derivative of the product."""
    eh = np.exp(h.values)
    ua = _d1(u, axis)
    div = _d1(ScalarField(u.grid, eh * ua), axis)
    return div + c * ua, ua


def _ndim_matrix(spec: EquationSpec, u: ScalarField) -> np.ndarray:
    """The n x n second-order coefficient matrix of the n-dimensional families."""
    n = spec.n
    M = np.zeros(u.grid.sizes + (n, n))
    for i in range(n):
        for j in range(n):
            M[..., i, j] = _d2(u, min(i, j), max(i, j))
    if spec.family is Family.NDIM_FULL:
        # the first diagonal entry carries the fiber-direction second
        # derivative and the drift term
        M[..., 0, 0] += _d2(u, n, n) + _d1(u, n)
    elif spec.family is Family.NDIM_B:
        M[..., 0, 0] += _d1(u, 0)
    M += np.eye(n)
    return M


def _minor(M: np.ndarray, rows: tuple[int, ...], cols: tuple[int, ...]) -> np.ndarray:
    n = M.shape[-1]
    rkeep = [i for i in range(n) if i not in rows]
    ckeep = [j for j in range(n) if j not in cols]
    return M[..., rkeep, :][..., :, ckeep]


def _det(M: np.ndarray) -> np.ndarray:
    if M.shape[-1] == 0:
        return np.ones(M.shape[:-2])
    return np.linalg.det(M)


def _adjugate(M: np.ndarray) -> np.ndarray:
    """Adjugate of a stacked small matrix by explicit cofactors."""
    n = M.shape[-1]
    adj = np.empty_like(M)
    for i in range(n):
        for j in range(n):
            adj[..., i, j] = (-1) ** (i + j) * _det(_minor(M, (j,), (i,)))
    return adj


def _ndim_full_correction(spec: EquationSpec, u: ScalarField, M: np.ndarray):
    """sum over k,m >= 2 of u_{x_k y1} u_{x_m y1} D_km with signed second minors."""
    n = spec.n
    uky = [_d2(u, k, n) for k in range(n)]
    corr = np.zeros(u.grid.sizes)
    for k in range(1, n):
        for m in range(1, n):
            Dkm = (-1) ** (k + m) * _det(_minor(M, (0, k), (0, m)))
            corr += uky[k] * uky[m] * Dkm
    return corr, uky


def residual(spec: EquationSpec, u: ScalarField, dealias: bool = False) -> ScalarField:
    """Left-hand side of the family's equation, evaluated pointwise.

    With `dealias=True` the nonlinearity is evaluated on a 3/2 zero-padded
    grid and truncated back.
    """
    _check_grid(spec, u)
    if dealias:
        sizes = _padded_sizes(u.grid.sizes)
        spec_p = spec if spec.h is None else replace(spec, h=resample(spec.h, sizes))
        r = residual(spec_p, resample(u, sizes), dealias=False)
        return resample(r, u.grid.sizes)

    fam = spec.family
    if fam in (Family.STDMA, Family.GENMA, Family.LAGR_X1X2, Family.LAGR_X2Y1):
        uxx, uyy, uxy = _d2(u, 0, 0), _d2(u, 1, 1), _d2(u, 0, 1)
        second = spec.l2 + uyy + spec.m1 * _d1(u, 0) + spec.m2 * _d1(u, 1)
        vals = ((spec.l1 + uxx) * second - uxy**2) / (spec.l1 * spec.l2)
    elif fam is Family.WARPED:
        emh = np.exp(-spec.h.values)
        q1, _ = _warped_principal(u, spec.h, 0, spec.c)
        vals = (emh * (1.0 + q1)) * (1.0 + _d2(u, 1, 1)) - _d2(u, 0, 1) ** 2
    elif fam is Family.DETA_T3:
        a11 = 1.0 + _d2(u, 0, 0) + _d2(u, 2, 2) + _d1(u, 2)
        vals = (a11 * (1.0 + _d2(u, 1, 1)) - _d2(u, 0, 1) ** 2 - _d2(u, 1, 2) ** 2)
    elif fam is Family.WARPED_T3:
        eh = np.exp(spec.h.values)
        emh = np.exp(-spec.h.values)
        px, _ = _warped_principal(u, spec.h, 0)
        hm = ScalarField(u.grid, -spec.h.values)
        py, _ = _warped_principal(u, hm, 2)
        a11 = 1.0 + px + py + _d1(u, 2)
        ux1x2 = _d2(u, 0, 1)
        vals = (a11 * (1.0 + _d2(u, 1, 1)) - eh * ux1x2**2 - emh * _d2(u, 1, 2) ** 2)
    elif fam is Family.NDIM_FULL:
        M = _ndim_matrix(spec, u)
        corr, _ = _ndim_full_correction(spec, u, M)
        vals = _det(M) - corr
    else:  # NDIM_HESSIAN, NDIM_B
        vals = _det(_ndim_matrix(spec, u))
    return ScalarField(u.grid, vals)


def ndim_printed(spec: EquationSpec, u: ScalarField) -> ScalarField:
    """The published n = 3 closed-form expression, implemented verbatim for
    comparison: its first-order sign and correction terms disagree with the
    exterior-algebra expansion, which is the residual of record."""
    if spec.family is not Family.NDIM_FULL or spec.n != 3:
        raise ValueError("the printed comparison form is stated for n = 3")
    _check_grid(spec, u)
    n = 3
    M = np.zeros(u.grid.sizes + (n, n))
    for i in range(n):
        for j in range(n):
            M[..., i, j] = _d2(u, min(i, j), max(i, j))
    M[..., 0, 0] += _d2(u, n, n) - _d1(u, n)
    M += np.eye(n)
    u2y, u3y = _d2(u, 1, 3), _d2(u, 2, 3)
    u22, u33, u23 = _d2(u, 1, 1), _d2(u, 2, 2), _d2(u, 1, 2)
    vals = (_det(M) - u33 * u2y**2 - u22 * u3y**2 - 2.0 * u23 * u2y * u3y)
    return ScalarField(u.grid, vals)


def _padded_sizes(sizes: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(-((-3 * ns) // 2) + (-((-3 * ns) // 2)) % 2 for ns in sizes)


def linearizer(spec: EquationSpec, u: ScalarField, dealias: bool = False):
    """Frechet derivative of residual at u, returned as a closure w -> L(w).

    Coefficients frozen at u are precomputed once; per application only the
    derivatives of w are taken.  With `dealias=True` the operator acts on the
    3/2 zero-padded grid, consistently with the dealiased residual.
    """
    _check_grid(spec, u)
    if dealias:
        sizes = _padded_sizes(u.grid.sizes)
        spec_p = spec if spec.h is None else replace(spec, h=resample(spec.h, sizes))
        inner = linearizer(spec_p, resample(u, sizes), dealias=False)

        def apply_padded(w: ScalarField) -> ScalarField:
            return resample(inner(resample(w, sizes)), u.grid.sizes)

        return apply_padded
    fam = spec.family

    if fam in (Family.STDMA, Family.GENMA, Family.LAGR_X1X2, Family.LAGR_X2Y1):
        a = spec.l1 + _d2(u, 0, 0)
        b = spec.l2 + _d2(u, 1, 1) + spec.m1 * _d1(u, 0) + spec.m2 * _d1(u, 1)
        uxy = _d2(u, 0, 1)
        ll = spec.l1 * spec.l2

        def apply(w: ScalarField) -> ScalarField:
            wxx, wyy, wxy = _d2(w, 0, 0), _d2(w, 1, 1), _d2(w, 0, 1)
            first = spec.m1 * _d1(w, 0) + spec.m2 * _d1(w, 1)
            return ScalarField(u.grid, (wxx * b + a * (wyy + first) - 2 * uxy * wxy) / ll)

        return apply

    if fam is Family.WARPED:
        emh = np.exp(-spec.h.values)
        eh = np.exp(spec.h.values)
        q1, _ = _warped_principal(u, spec.h, 0, spec.c)
        a11 = emh * (1.0 + q1)
        a22 = 1.0 + _d2(u, 1, 1)
        uxy = _d2(u, 0, 1)

        def apply(w: ScalarField) -> ScalarField:
            wx = _d1(w, 0)
            dq = emh * (_d1(ScalarField(w.grid, eh * wx), 0) + spec.c * wx)
            return ScalarField(u.grid, dq * a22 + a11 * _d2(w, 1, 1) - 2 * uxy * _d2(w, 0, 1))

        return apply

    if fam is Family.DETA_T3:
        a11 = 1.0 + _d2(u, 0, 0) + _d2(u, 2, 2) + _d1(u, 2)
        a22 = 1.0 + _d2(u, 1, 1)
        u12 = _d2(u, 0, 1)
        u2y = _d2(u, 1, 2)

        def apply(w: ScalarField) -> ScalarField:
            da11 = _d2(w, 0, 0) + _d2(w, 2, 2) + _d1(w, 2)
            vals = (da11 * a22 + a11 * _d2(w, 1, 1)
                    - 2 * u12 * _d2(w, 0, 1) - 2 * u2y * _d2(w, 1, 2))
            return ScalarField(u.grid, vals)

        return apply

    if fam is Family.WARPED_T3:
        eh = np.exp(spec.h.values)
        emh = np.exp(-spec.h.values)
        hm = ScalarField(u.grid, -spec.h.values)
        px, _ = _warped_principal(u, spec.h, 0)
        py, _ = _warped_principal(u, hm, 2)
        a11 = 1.0 + px + py + _d1(u, 2)
        a22 = 1.0 + _d2(u, 1, 1)
        u12 = _d2(u, 0, 1)
        u2y = _d2(u, 1, 2)

        def apply(w: ScalarField) -> ScalarField:
            wx1 = _d1(w, 0)
            wy1 = _d1(w, 2)
            da11 = (_d1(ScalarField(w.grid, eh * wx1), 0)
                    + _d1(ScalarField(w.grid, emh * wy1), 2) + wy1)
            vals = (da11 * a22 + a11 * _d2(w, 1, 1)
                    - 2 * eh * u12 * _d2(w, 0, 1) - 2 * emh * u2y * _d2(w, 1, 2))
            return ScalarField(u.grid, vals)

        return apply

    # n-dimensional determinant families
    M = _ndim_matrix(spec, u)
    adjM = _adjugate(M)
    n = spec.n

    if fam in (Family.NDIM_HESSIAN, Family.NDIM_B):
        extra_axis = 0 if fam is Family.NDIM_B else None

        def apply(w: ScalarField) -> ScalarField:
            vals = np.zeros(u.grid.sizes)
            for i in range(n):
                for j in range(n):
                    dm = _d2(w, min(i, j), max(i, j))
                    if extra_axis is not None and i == j == 0:
                        dm = dm + _d1(w, 0)
                    vals += adjM[..., j, i] * dm
            return ScalarField(u.grid, vals)

        return apply

    # NDIM_FULL: determinant part plus the signed-minor correction
    uky = [_d2(u, k, n) for k in range(n)]
    minors = {}
    adj_minors = {}
    for k in range(1, n):
        for m in range(1, n):
            mm = _minor(M, (0, k), (0, m))
            minors[(k, m)] = (-1) ** (k + m) * _det(mm)
            adj_minors[(k, m)] = _adjugate(mm) if n > 2 else None

    def apply(w: ScalarField) -> ScalarField:
        vals = np.zeros(u.grid.sizes)
        for i in range(n):
            for j in range(n):
                dm = _d2(w, min(i, j), max(i, j))
                if i == j == 0:
                    dm = dm + _d2(w, n, n) + _d1(w, n)
                vals += adjM[..., j, i] * dm
        wky = [_d2(w, k, n) for k in range(n)]
        rows_all = list(range(n))
        for k in range(1, n):
            for m in range(1, n):
                vals -= (wky[k] * uky[m] + uky[k] * wky[m]) * minors[(k, m)]
                if n > 2:
                    rkeep = [i for i in rows_all if i not in (0, k)]
                    ckeep = [j for j in rows_all if j not in (0, m)]
                    dmin = np.zeros(u.grid.sizes)
                    am = adj_minors[(k, m)]
                    for ii, gi in enumerate(rkeep):
                        for jj, gj in enumerate(ckeep):
                            dmin += am[..., jj, ii] * _d2(w, min(gi, gj), max(gi, gj))
                    vals -= uky[k] * uky[m] * (-1) ** (k + m) * dmin
        return ScalarField(u.grid, vals)

    return apply


def linearize_apply(spec: EquationSpec, u: ScalarField, w: ScalarField) -> ScalarField:
    if not u.grid.compatible(w.grid):
        raise ValueError("u and w must share one grid")
    return linearizer(spec, u)(w)


def manufactured_datum(spec: EquationSpec, u_star: ScalarField) -> ScalarField:
    """Datum F for which u_star solves the family's equation exactly on the grid."""
    r = residual(spec, u_star)
    if np.min(r.values) <= 0.0:
        raise ValueError("candidate leaves the elliptic branch: residual must stay positive")
    vals = np.log(r.values)
    if spec.family is Family.WARPED:
        vals = vals + spec.h.values
    return ScalarField(u_star.grid, vals)


def normalize_datum(spec: EquationSpec, F: ScalarField) -> ScalarField:
    """Shift F by a constant so that the flat-measure integral of e^F is 1."""
    shift = np.log(integrate(ScalarField(F.grid, np.exp(F.values))))
    return ScalarField(F.grid, F.values - shift)


def coefficient_matrix(spec: EquationSpec, u: ScalarField) -> np.ndarray:
    """The family's second-order coefficient matrix, stacked over the grid."""
    _check_grid(spec, u)
    fam = spec.family
    if fam in (Family.STDMA, Family.GENMA, Family.LAGR_X1X2, Family.LAGR_X2Y1):
        M = np.zeros(u.grid.sizes + (2, 2))
        M[..., 0, 0] = spec.l1 + _d2(u, 0, 0)
        M[..., 1, 1] = spec.l2 + _d2(u, 1, 1) + spec.m1 * _d1(u, 0) + spec.m2 * _d1(u, 1)
        M[..., 0, 1] = M[..., 1, 0] = _d2(u, 0, 1)
        return M
    if fam is Family.WARPED:
        emh = np.exp(-spec.h.values)
        q1, _ = _warped_principal(u, spec.h, 0, spec.c)
        M = np.zeros(u.grid.sizes + (2, 2))
        M[..., 0, 0] = emh * (1.0 + q1)
        M[..., 1, 1] = 1.0 + _d2(u, 1, 1)
        M[..., 0, 1] = M[..., 1, 0] = _d2(u, 0, 1)
        return M
    if fam is Family.DETA_T3:
        M = np.zeros(u.grid.sizes + (2, 2))
        M[..., 0, 0] = 1.0 + _d2(u, 0, 0) + _d2(u, 2, 2) + _d1(u, 2)
        M[..., 1, 1] = 1.0 + _d2(u, 1, 1)
        M[..., 0, 1] = M[..., 1, 0] = _d2(u, 0, 1)
        return M
    if fam is Family.WARPED_T3:
        eh = np.exp(spec.h.values)
        hm = ScalarField(u.grid, -spec.h.values)
        px, _ = _warped_principal(u, spec.h, 0)
        py, _ = _warped_principal(u, hm, 2)
        M = np.zeros(u.grid.sizes + (2, 2))
        M[..., 0, 0] = 1.0 + px + py + _d1(u, 2)
        M[..., 1, 1] = 1.0 + _d2(u, 1, 1)
        M[..., 0, 1] = _d2(u, 0, 1)
        M[..., 1, 0] = eh * _d2(u, 0, 1)
        return M
    return _ndim_matrix(spec, u)


def branch_sign(spec: EquationSpec) -> float:
    """Sign multiplying the coefficient matrix on the tracked elliptic branch."""
    return -1.0 if spec.l1 < 0 else 1.0


# ---------------------------------------------------------------------------
# geometric realizations
# ---------------------------------------------------------------------------

def structure_for(spec: EquationSpec, grid: TorusGrid) -> nf.NilStructure:
    """Invariant-coframe structure whose reduction is the family's equation."""
    fam = spec.family
    if fam is Family.STDMA:
        return nf.kodaira_thurston(grid, ("e1", "e2"))
    if fam is Family.GENMA:
        return nf.kodaira_thurston(grid, ("e2", "f1"))
    if fam is Family.LAGR_X1X2:
        s = 1 if spec.l1 > 0 else -1
        a = 1.0 / np.sqrt(abs(spec.l1))
        c0 = 1.0 / np.sqrt(abs(spec.l2))
        if spec.coframe is not None:
            p = spec.coframe
            lam1 = p.lam1 * p.scale_x * p.scale_y
            lam2 = p.lam2 * p.scale_x * p.scale_y
        else:
            lam1, lam2 = 0.0, -1.0
        return nf.lagrangian_coframe_xx(grid, a, c0, lam1, lam2, sign=s)
    if fam is Family.LAGR_X2Y1:
        s = 1 if spec.l1 > 0 else -1
        a = 1.0 / np.sqrt(abs(spec.l1))
        c0 = 1.0 / np.sqrt(abs(spec.l2))
        lam = spec.m1 * c0**2 / a
        nu = -spec.m2 * c0
        mu = spec.coframe.mu if spec.coframe is not None else 0.0
        return nf.lagrangian_coframe_xy(grid, a, c0, lam=lam, mu=mu, nu=nu, sign=s)
    if fam is Family.WARPED:
        if not spec.h.grid.compatible(grid):
            raise ValueError("h must live on the target grid")
        warp = ScalarField(grid, -spec.h.values)
        return nf.kodaira_thurston(grid, ("f1", "e2"), warp=warp, twist=spec.c)
    if fam is Family.DETA_T3:
        return nf.kodaira_thurston(grid, ("e1", "e2", "f1"))
    if fam is Family.WARPED_T3:
        if not spec.h.grid.compatible(grid):
            raise ValueError("h must live on the target grid")
        return nf.kodaira_thurston(grid, ("e1", "e2", "f1"), warp=spec.h)
    if fam is Family.NDIM_FULL:
        axes = tuple(f"e{k + 1}" for k in range(spec.n)) + ("f1",)
        return nf.nil_bundle(grid, spec.n, axes)
    if fam is Family.NDIM_HESSIAN:
        axes = tuple(f"e{k + 1}" for k in range(spec.n))
        return nf.nil_bundle(grid, spec.n, axes)
    if fam is Family.NDIM_B:
        axes = ("f1",) + tuple(f"e{k + 1}" for k in range(1, spec.n))
        return nf.nil_bundle(grid, spec.n, axes)
    raise ValueError(f"no geometric realization for {fam}")


def residual_geom(spec: EquationSpec, u: ScalarField) -> ScalarField:
    """The family's residual recomputed through the exterior-algebra route:
    rebuild omega + d(alpha) and expand its top wedge power."""
    _check_grid(spec, u)
    st = structure_for(spec, u.grid)
    alpha = nf.ansatz_one_form(u, st)
    w = nf.form_add(st.omega, nf.exterior_derivative(alpha))
    ratio = nf.top_form_ratio(w, st)
    if spec.family is Family.WARPED:
        return ScalarField(u.grid, np.exp(-spec.h.values) * ratio.values)
    return ratio
