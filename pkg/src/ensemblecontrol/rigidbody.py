"""Controllability tests for ensembles of torque-driven rigid bodies.

A body with (inverse) inertia tensor J = diag(J1, J2, J3) has momentum drift
E_J(K) = K x JK.  Applying a scalar torque along a fixed axis L to N bodies
at once gives a control-affine system on R^{3N}; constant vector fields
obtained from iterated brackets of the drift with the torque direction fill
out the columns of a (3N x 3N) matrix whose determinant decides whether the
bracket-generated directions span everything.

The bracket chain is generated by the linear map Lambda = D_J * Lhat acting
on the torque axis: V^0 = L, V^{m+1} = Lambda V^m.  All chain values are
available both in float and in exact rational arithmetic; the exact mode is
the oracle for the float verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import odesim
from .polyfield import Poly, PolyField, divergence, iterated_brackets_joint
from .signals import ONE

DEFAULT_TAU = 1e-8        # scaled-determinant threshold for "generating"
DEFAULT_TAU_0 = 1e-12     # scaled-determinant threshold for "singular"
DEFAULT_J_GAP = 1e-9      # minimum relative gap between principal values
MC_REJECT_GAP = 1e-3      # rejection threshold when sampling random bodies


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class InertiaSpec:
    """Principal values of an inverse inertia tensor; dynamically asymmetric."""

    j1: float
    j2: float
    j3: float
    min_gap: float = DEFAULT_J_GAP

    def __post_init__(self):
        vals = (self.j1, self.j2, self.j3)
        if any(v <= 0 for v in vals):
            raise ValidationError(f"principal values must be positive, got {vals}")
        for a, b in ((self.j1, self.j2), (self.j1, self.j3), (self.j2, self.j3)):
            if abs(a - b) < self.min_gap * max(abs(a), abs(b)):
                raise ValidationError(
                    f"principal values {vals} are not distinct "
                    f"(relative gap below {self.min_gap})"
                )

    @property
    def values(self) -> tuple:
        return (self.j1, self.j2, self.j3)

    def as_fractions(self) -> tuple[Fraction, Fraction, Fraction]:
        return tuple(Fraction(v) for v in self.values)


@dataclass(frozen=True)
class TorqueAxis:
    """Direction of the shared control torque."""

    L: tuple

    def __init__(self, L: Sequence):
        vec = tuple(L)
        if len(vec) != 3 or all(v == 0 for v in vec):
            raise ValidationError(f"torque axis must be a nonzero 3-vector, got {L}")
        object.__setattr__(self, "L", vec)

    def as_floats(self) -> np.ndarray:
        return np.array([float(v) for v in self.L])

    def as_fractions(self) -> tuple:
        return tuple(Fraction(v) for v in self.L)


@dataclass(frozen=True)
class RNReport:
    """Determinant verdict for one ensemble configuration."""

    N: int
    det: float
    scale: float
    cond: float
    verdict: str  # 'generating' | 'singular' | 'borderline'


def euler_field(J: InertiaSpec) -> PolyField:
    """E_J(K) = K x JK as an exact quadratic field on R^3 (principal axes)."""
    j1, j2, j3 = J.as_fractions()
    return PolyField(
        [
            Poly(3, {(0, 1, 1): j3 - j2}),
            Poly(3, {(1, 0, 1): j1 - j3}),
            Poly(3, {(1, 1, 0): j2 - j1}),
        ]
    )


def torque_field(L: TorqueAxis) -> PolyField:
    """The constant field b_L on R^3."""
    return PolyField.constant_field(list(L.as_fractions()))


def _lambda_rows(J: InertiaSpec, L: TorqueAxis):
    """Rows of D_J * Lhat in exact rational arithmetic."""
    j1, j2, j3 = J.as_fractions()
    l1, l2, l3 = L.as_fractions()
    d = (j3 - j2, j1 - j3, j2 - j1)
    lhat = ((0, l3, l2), (l3, 0, l1), (l2, l1, 0))
    return [[d[i] * lhat[i][k] for k in range(3)] for i in range(3)]


def lambda_matrix(J: InertiaSpec, L: TorqueAxis) -> np.ndarray:
    """Matrix of K -> L x JK + K x JL in the principal-axis basis."""
    return np.array([[float(v) for v in row] for row in _lambda_rows(J, L)])


def bracket_chain(J: InertiaSpec, L: TorqueAxis, m_max: int, exact: bool = False):
    """V^0 ... V^{m_max} with V^0 = L and V^{m+1} = Lambda V^m.

    Float by default; exact=True runs the recursion in rational arithmetic.
    """
    if m_max < 0:
        raise ValidationError(f"m_max must be >= 0, got {m_max}")
    if exact:
        lam = _lambda_rows(J, L)
        v = list(L.as_fractions())
        chain = [v]
        for _ in range(m_max):
            v = [sum(lam[i][k] * v[k] for k in range(3)) for i in range(3)]
            chain.append(v)
        return chain
    lam = lambda_matrix(J, L)
    v = L.as_floats()
    chain = [v]
    for _ in range(m_max):
        v = lam @ v
        chain.append(v)
    return chain


def rn_matrix(Js: Sequence[InertiaSpec], L: TorqueAxis, exact: bool = False):
    """The (3N x 3N) matrix with row-block theta = (V^0 | ... | V^{3N-1})."""
    N = len(Js)
    if N < 1:
        raise ValidationError("need at least one body")
    if exact:
        rows = []
        for J in Js:
            chain = bracket_chain(J, L, 3 * N - 1, exact=True)
            for i in range(3):
                rows.append([chain[m][i] for m in range(3 * N)])
        return rows
    M = np.empty((3 * N, 3 * N))
    for b, J in enumerate(Js):
        chain = bracket_chain(J, L, 3 * N - 1)
        for m in range(3 * N):
            M[3 * b : 3 * b + 3, m] = chain[m]
    return M


def fraction_det(rows) -> Fraction:
    """Exact determinant by fraction Gaussian elimination with pivoting."""
    n = len(rows)
    m = [list(r) for r in rows]
    det = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            det = -det
        pivot = m[col][col]
        det *= pivot
        for r in range(col + 1, n):
            if m[r][col] != 0:
                factor = m[r][col] / pivot
                m[r] = [a - factor * b for a, b in zip(m[r], m[col])]
    return det


def _verdict(det: float, scale: float, tau: float, tau0: float) -> str:
    if abs(det) <= tau0 * scale:
        return "singular"
    if abs(det) > tau * scale:
        return "generating"
    return "borderline"


def build_RN(
    Js: Sequence[InertiaSpec],
    L: TorqueAxis,
    tau: float = DEFAULT_TAU,
    tau0: float = DEFAULT_TAU_0,
) -> RNReport:
    """Assemble the chain matrix, take its determinant, and classify it.

    The determinant is compared against the product of column norms (the
    Hadamard scale of the matrix), so the verdict is invariant under global
    rescaling of J or L.
    """
    M = rn_matrix(Js, L)
    det = float(np.linalg.det(M))
    scale = float(np.prod(np.linalg.norm(M, axis=0)))
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(M))
    return RNReport(
        N=len(Js), det=det, scale=scale, cond=cond,
        verdict=_verdict(det, scale, tau, tau0),
    )


def build_RN_exact(Js: Sequence[InertiaSpec], L: TorqueAxis) -> Fraction:
    """Exact-rational determinant of the chain matrix (the float oracle)."""
    return fraction_det(rn_matrix(Js, L, exact=True))


# -- Monte-Carlo genericity ----------------------------------------------------


def sample_configuration(seed: int, index: int, N: int, box: tuple[float, float]):
    """Deterministic (Js, L) draw for sample ``index`` of a seeded study.

    Principal values are i.i.d. uniform in ``box`` with near-degenerate
    triples rejected; L is uniform on the unit sphere.
    """
    rng = np.random.default_rng([seed, index])
    lo, hi = box
    Js = []
    for _ in range(N):
        while True:
            vals = sorted(rng.uniform(lo, hi, size=3))
            gaps = min(
                abs(a - b) / max(abs(a), abs(b))
                for a, b in ((vals[0], vals[1]), (vals[1], vals[2]), (vals[0], vals[2]))
            )
            if gaps >= MC_REJECT_GAP:
                break
        Js.append(InertiaSpec(*vals))
    while True:
        v = rng.normal(size=3)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            break
    return Js, TorqueAxis(tuple(v / norm))


def genericity_mc(
    N: int,
    samples: int,
    seed: int,
    box: tuple[float, float],
    tau: float = DEFAULT_TAU,
    tau0: float = DEFAULT_TAU_0,
    fixed_L: Sequence | None = None,
    fixed_Js: Sequence[InertiaSpec] | None = None,
) -> dict:
    """Fraction of random configurations whose verdict is 'generating'.

    fixed_L pins the torque axis while bodies vary; fixed_Js pins the bodies
    and sweeps only L (the exploratory mode for the fixed-bodies question).
    Deterministic given the seed: sample k uses its own RNG stream derived
    from (seed, k).
    """
    if samples < 1:
        raise ValidationError(f"samples must be >= 1, got {samples}")
    records = []
    n_generating = 0
    min_scaled = np.inf
    for k in range(samples):
        Js, L = sample_configuration(seed, k, N, box)
        if fixed_Js is not None:
            Js = list(fixed_Js)
        if fixed_L is not None:
            L = TorqueAxis(tuple(fixed_L))
        report = build_RN(Js, L, tau=tau, tau0=tau0)
        scaled = abs(report.det) / report.scale if report.scale > 0 else 0.0
        min_scaled = min(min_scaled, scaled)
        if report.verdict == "generating":
            n_generating += 1
        records.append(
            {
                "index": k,
                "det": report.det,
                "scaled_det": scaled,
                "verdict": report.verdict,
            }
        )
    return {
        "N": N,
        "samples": samples,
        "seed": seed,
        "fraction_generating": n_generating / samples,
        "min_abs_scaled_det": float(min_scaled),
        "records": records,
    }


# -- scaling diagnostics --------------------------------------------------------


def _scaled_spec(J: InertiaSpec, eps) -> InertiaSpec:
    return InertiaSpec(J.j1 * eps, J.j2 * eps, J.j3 * eps, min_gap=J.min_gap)


def scaling_diagnostic(
    Js: Sequence[InertiaSpec], L: TorqueAxis, eps: float, exact: bool = False
) -> dict:
    """Probe the induction structure behind the determinant non-vanishing.

    Scales the first N-1 bodies by eps (equivalently: multiplies column k of
    the upper block by eps^{k-1}, since V^{m} is degree-m homogeneous in J)
    and reports det R_N(eps J^1, ..., eps J^{N-1}, J^N; L) together with the
    limiting block product det R_{N-1}(J^1..J^{N-1}) * det(corner block of
    the last row-block).
    """
    N = len(Js)
    if N < 2:
        raise ValidationError("scaling diagnostic needs N >= 2 bodies")
    if not 0 < eps <= 1:
        raise ValidationError(f"eps must be in (0, 1], got {eps}")
    scaled = [_scaled_spec(J, Fraction(eps) if exact else eps) for J in Js[:-1]]
    scaled.append(Js[-1])
    if exact:
        det_eps = fraction_det(rn_matrix(scaled, L, exact=True))
        det_head = fraction_det(rn_matrix(Js[:-1], L, exact=True))
        chain = bracket_chain(Js[-1], L, 3 * N - 1, exact=True)
        corner = [
            [chain[m][i] for m in range(3 * N - 3, 3 * N)] for i in range(3)
        ]
        det_corner = fraction_det(corner)
        return {
            "det_eps": det_eps,
            "det_limit_block": det_head * det_corner,
        }
    det_eps = float(np.linalg.det(rn_matrix(scaled, L)))
    det_head = float(np.linalg.det(rn_matrix(list(Js[:-1]), L)))
    chain = bracket_chain(Js[-1], L, 3 * N - 1)
    corner = np.column_stack(chain[3 * N - 3 : 3 * N])
    det_corner = float(np.linalg.det(corner))
    return {"det_eps": det_eps, "det_limit_block": det_head * det_corner}


# -- drift invariants -----------------------------------------------------------


def drift_invariants_check(
    J: InertiaSpec, K0: Sequence[float], T: float, h: float = 1e-3
) -> dict:
    """Integrate the pure Euler drift and report conservation diagnostics.

    norm_drift is max_t | ||K(t)||^2 - ||K0||^2 |; div_ok is the symbolic
    divergence-free verdict.  Together these are the volume-preservation and
    invariant-sphere hypotheses behind the recurrence argument.
    """
    if T <= 0:
        raise ValidationError(f"horizon must be positive, got {T}")
    field = euler_field(J)
    record = odesim.integrate_ensemble([(field,)], [ONE], list(K0), T, h)
    norms = np.sum(record.states[:, 0, :] ** 2, axis=-1)
    drift = float(np.max(np.abs(norms - norms[0])))
    return {"norm_drift": drift, "div_ok": divergence(field).is_zero()}


# -- product-system bracket rank --------------------------------------------------


def product_bracket_rank(
    ensemble: Sequence[Sequence[PolyField]],
    points: Sequence[Sequence[float]],
    depth: int,
    rank_tol: float = 1e-10,
) -> dict:
    """Numerical bracket-generation test for a finite product ensemble.

    Brackets act diagonally on the product of the member systems, so each
    right-nested bracket word is computed once per member and its evaluations
    at the member's base point are stacked into one R^{nN} column.  The rank
    of the stacked column set (SVD, threshold rank_tol * sigma_max) is
    compared against the full product dimension.
    """
    if depth < 1:
        raise ValidationError(f"depth must be >= 1, got {depth}")
    N = len(ensemble)
    if N < 1 or len(points) != N:
        raise ValidationError("need one field tuple and one point per member system")
    arity = len(ensemble[0])
    dim = ensemble[0][0].dim
    for tup in ensemble:
        if len(tup) != arity:
            raise ValidationError("all members must supply the same number of fields")
        for f in tup:
            if f.dim != dim:
                raise ValidationError("all member systems must share the state dimension")

    words = iterated_brackets_joint(ensemble, depth)

    cols = []
    for _, per in words:
        cols.append(np.concatenate([np.array(f.eval(p)) for f, p in zip(per, points)]))
    if not cols:
        return {"rank": 0, "full": False, "n_brackets": 0}
    A = np.column_stack(cols)
    s = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    return {"rank": rank, "full": rank == dim * N, "n_brackets": len(words)}
