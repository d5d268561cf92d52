import math
from fractions import Fraction

import numpy as np
import pytest

from ensemblecontrol.polyfield import Poly, PolyField, lie_bracket
from ensemblecontrol.rigidbody import (
    InertiaSpec,
    TorqueAxis,
    ValidationError,
    bracket_chain,
    build_RN,
    build_RN_exact,
    drift_invariants_check,
    euler_field,
    fraction_det,
    genericity_mc,
    lambda_matrix,
    product_bracket_rank,
    rn_matrix,
    sample_configuration,
    scaling_diagnostic,
    torque_field,
)

J123 = InertiaSpec(1, 2, 3)
L123 = TorqueAxis((1, 2, 3))


def cross_oracle(a, b):
    return np.cross(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


class TestSpecs:
    def test_symmetric_body_rejected(self):
        with pytest.raises(ValidationError):
            InertiaSpec(1, 1, 2)

    def test_near_degenerate_rejected(self):
        with pytest.raises(ValidationError):
            InertiaSpec(1.0, 1.0 + 1e-12, 2.0)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValidationError):
            InertiaSpec(0.0, 1.0, 2.0)

    def test_zero_axis_rejected(self):
        with pytest.raises(ValidationError):
            TorqueAxis((0, 0, 0))


class TestEulerField:
    def test_components_match_cross_product(self):
        E = euler_field(J123)
        expected = PolyField(
            [
                Poly(3, {(0, 1, 1): 1}),
                Poly(3, {(1, 0, 1): -2}),
                Poly(3, {(1, 1, 0): 1}),
            ]
        )
        assert E == expected
        rng = np.random.default_rng(0)
        for _ in range(20):
            K = rng.uniform(-2, 2, size=3)
            JK = np.array([1, 2, 3]) * K
            assert np.allclose(E.eval(K), cross_oracle(K, JK), atol=1e-12)

    def test_divergence_free_random_bodies(self):
        from ensemblecontrol.polyfield import divergence

        rng = np.random.default_rng(1)
        for _ in range(20):
            vals = np.sort(rng.uniform(0.3, 4.0, size=3))
            if min(np.diff(vals)) < 1e-3:
                continue
            assert divergence(euler_field(InertiaSpec(*vals))).is_zero()


class TestLambdaMatrix:
    def test_hand_product(self):
        lam = lambda_matrix(J123, L123)
        assert np.array_equal(
            lam, np.array([[0.0, 3.0, 2.0], [-6.0, 0.0, -2.0], [2.0, 1.0, 0.0]])
        )

    def test_det_lhat_law(self):
        # det(Lhat) = 2 L1 L2 L3, so any zero component kills det(Lambda)
        lam = lambda_matrix(J123, TorqueAxis((1, 1, 0)))
        assert np.linalg.det(lam) == pytest.approx(0.0, abs=1e-12)

    def test_principal_axis_in_kernel(self):
        lam = lambda_matrix(J123, TorqueAxis((1, 0, 0)))
        assert np.allclose(lam @ np.array([1.0, 0.0, 0.0]), 0.0)

    def test_action_is_symmetric_bilinear_form(self):
        # Lambda_{J,L} V == L x JV + V x JL for random inputs
        rng = np.random.default_rng(2)
        Jv = np.array([1.0, 2.0, 3.0])
        for _ in range(10):
            L = rng.uniform(-1, 1, size=3)
            V = rng.uniform(-1, 1, size=3)
            lam = lambda_matrix(J123, TorqueAxis(tuple(L)))
            expected = cross_oracle(L, Jv * V) + cross_oracle(V, Jv * L)
            assert np.allclose(lam @ V, expected, atol=1e-12)


class TestBracketChain:
    def test_v1_is_twice_L_cross_JL(self):
        chain = bracket_chain(J123, L123, 1)
        assert np.allclose(chain[1], 2 * cross_oracle([1, 2, 3], [1, 4, 9]))
        assert np.array_equal(chain[1], np.array([12.0, -12.0, 4.0]))

    def test_v1_on_principal_axis_vanishes(self):
        chain = bracket_chain(J123, TorqueAxis((1, 0, 0)), 1)
        assert np.array_equal(chain[1], np.zeros(3))

    def test_v2_matrix_power_oracle(self):
        lam = lambda_matrix(J123, L123)
        chain = bracket_chain(J123, L123, 2)
        assert np.allclose(chain[2], lam @ lam @ np.array([1.0, 2.0, 3.0]))
        assert np.array_equal(chain[2], np.array([-28.0, -80.0, 12.0]))

    def test_v1_cross_product_on_100_random_bodies(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            vals = np.sort(rng.uniform(0.4, 4.0, size=3))
            if min(np.diff(vals)) < 1e-2:
                continue
            J = InertiaSpec(*vals)
            L = rng.normal(size=3)
            chain = bracket_chain(J, TorqueAxis(tuple(L)), 1)
            assert np.allclose(
                chain[1], 2 * cross_oracle(L, vals * L), rtol=1e-12, atol=1e-12
            )

    def test_exact_mode_matches_float(self):
        exact = bracket_chain(J123, L123, 5, exact=True)
        flo = bracket_chain(J123, L123, 5)
        for e, f in zip(exact, flo):
            assert np.allclose([float(v) for v in e], f, rtol=1e-12)

    def test_chain_agrees_with_actual_lie_brackets_up_to_sign(self):
        # the recursion V^{m+1} = Lambda V^m reproduces the right-nested
        # bracket words [b,[E,[b,[E,...b]]]] up to the sign flip (-1)^m
        # that the two formulas in circulation disagree by
        E = euler_field(J123)
        b = torque_field(L123)
        chain = bracket_chain(J123, L123, 4, exact=True)
        w = b
        for m in range(1, 5):
            w = lie_bracket(b, lie_bracket(E, w))
            vec = w.constant_vector()
            expected = [(-1) ** m * v for v in chain[m]]
            assert vec == expected


class TestBuildRN:
    def test_single_body_documented_determinant(self):
        rep = build_RN([J123], L123)
        exact = build_RN_exact([J123], L123)
        assert exact == Fraction(-4224)
        assert rep.det == pytest.approx(-4224.0, rel=1e-9)
        assert rep.verdict == "generating"
        assert rep.N == 1 and rep.scale > 0 and rep.cond > 1

    def test_principal_axis_exactly_singular(self):
        for axis in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
            rep = build_RN([J123], TorqueAxis(axis))
            assert rep.det == 0.0
            assert rep.verdict == "singular"
            assert build_RN_exact([J123], TorqueAxis(axis)) == 0

    def test_separatrix_plane_exactly_singular(self):
        # the degenerate torque directions besides the principal axes are
        # the separatrix planes (J2-J1) L1^2 = (J3-J2) L3^2; for diag(1,2,3)
        # that is L1 = +-L3, checked in exact arithmetic
        for axis in ((1, 0, 1), (1, 1, 1), (1, -2, 1), (-1, 3, 1)):
            assert build_RN_exact([J123], TorqueAxis(axis)) == 0
            assert build_RN([J123], TorqueAxis(axis)).verdict == "singular"

    def test_scaled_determinant_is_scale_invariant_near_axis(self):
        # the column-norm scaling makes the verdict about directions, not
        # magnitudes: approaching a principal axis the scaled determinant
        # converges to a nonzero limit even though the raw determinant
        # vanishes; only the axis itself is singular
        rep = build_RN([J123], TorqueAxis((1.0, 1e-13, 1e-13)))
        assert abs(rep.det) < 1e-20
        assert abs(rep.det) / rep.scale > 0.5
        assert rep.verdict == "generating"

    def test_coordinate_plane_without_separatrix_is_generating(self):
        # det(Lhat) = 2 L1 L2 L3 = 0 breaks the N >= 2 scaling induction
        # but does not by itself kill the single-body chain
        assert build_RN_exact([J123], TorqueAxis((1, 1, 0))) == Fraction(12)
        assert build_RN([J123], TorqueAxis((1, 1, 0))).verdict == "generating"

    def test_two_bodies_generating_with_exact_oracle(self):
        Js = [J123, InertiaSpec(1.1, 2.7, 3.9)]
        rep = build_RN(Js, L123)
        exact = build_RN_exact(Js, L123)
        assert exact != 0
        assert rep.det == pytest.approx(float(exact), rel=1e-9)
        assert rep.verdict == "generating"

    def test_fraction_det_small_cases(self):
        assert fraction_det([[Fraction(2)]]) == 2
        assert fraction_det([[1, 2], [3, 4]]) == -2
        assert fraction_det([[1, 2], [2, 4]]) == 0


class TestHomogeneity:
    def test_chain_scaling_exact(self):
        eps = Fraction(1, 2)
        scaled = InertiaSpec(eps * 1, eps * 2, eps * 3)
        base = bracket_chain(J123, L123, 6, exact=True)
        shrunk = bracket_chain(scaled, L123, 6, exact=True)
        for m in range(7):
            assert shrunk[m] == [eps**m * v for v in base[m]]

    @pytest.mark.parametrize("N", [1, 2, 3])
    def test_determinant_scaling_law(self, N):
        Js = [J123, InertiaSpec(1.1, 2.7, 3.9), InertiaSpec(0.7, 1.9, 2.4)][:N]
        eps = 0.5
        scaled = [InertiaSpec(eps * J.j1, eps * J.j2, eps * J.j3) for J in Js]
        det = build_RN(Js, L123).det
        det_s = build_RN(scaled, L123).det
        power = 3 * N * (3 * N - 1) // 2
        assert det_s == pytest.approx(eps**power * det, rel=1e-9)


class TestScalingDiagnostic:
    def test_eps_one_matches_build(self):
        Js = [J123, InertiaSpec(1.1, 2.7, 3.9)]
        diag = scaling_diagnostic(Js, L123, 1.0)
        assert diag["det_eps"] == pytest.approx(build_RN(Js, L123).det, rel=1e-12)

    def test_block_product_is_the_eps_to_zero_limit(self):
        # det R_N(eps J^1, J^2) / eps^(0+1+2) converges to the block product
        Js = [J123, InertiaSpec(1.1, 2.7, 3.9)]
        diag = scaling_diagnostic(Js, L123, 1.0)
        limit = diag["det_limit_block"]
        ratios = []
        for eps in (1e-2, 1e-3, 1e-4):
            d = scaling_diagnostic(Js, L123, eps)
            ratios.append(d["det_eps"] / eps**3 / limit)
        assert abs(ratios[1] - 1.0) < abs(ratios[0] - 1.0) + 1e-12
        assert ratios[2] == pytest.approx(1.0, abs=1e-3)

    def test_sign_stable_at_small_eps_exact(self):
        Js = [J123, InertiaSpec(1.1, 2.7, 3.9)]
        d_exact = scaling_diagnostic(Js, L123, 1e-3, exact=True)
        assert d_exact["det_eps"] != 0
        ref = scaling_diagnostic(Js, L123, 0.5, exact=True)
        assert (d_exact["det_eps"] > 0) == (ref["det_eps"] > 0) or ref["det_eps"] == 0

    def test_needs_two_bodies_and_valid_eps(self):
        with pytest.raises(ValidationError):
            scaling_diagnostic([J123], L123, 0.5)
        with pytest.raises(ValidationError):
            scaling_diagnostic([J123, J123], L123, 0.0)


class TestGenericityMC:
    def test_fraction_high_for_single_body(self):
        res = genericity_mc(1, 200, seed=42, box=(0.5, 3.0))
        assert res["fraction_generating"] >= 0.99
        assert res["min_abs_scaled_det"] >= 0.0

    def test_deterministic_given_seed(self):
        a = genericity_mc(2, 50, seed=7, box=(0.5, 3.0))
        b = genericity_mc(2, 50, seed=7, box=(0.5, 3.0))
        assert a == b

    def test_seed_changes_samples(self):
        a = genericity_mc(1, 20, seed=1, box=(0.5, 3.0))
        b = genericity_mc(1, 20, seed=2, box=(0.5, 3.0))
        assert a["records"] != b["records"]

    def test_forced_principal_axis_never_generates(self):
        res = genericity_mc(1, 1, seed=0, box=(0.5, 3.0), fixed_L=(1.0, 0.0, 0.0))
        assert res["fraction_generating"] == 0.0

    def test_fixed_bodies_sweep_L_mode(self):
        res = genericity_mc(
            1, 30, seed=3, box=(0.5, 3.0), fixed_Js=[J123]
        )
        assert res["fraction_generating"] >= 0.9

    def test_exact_rational_cross_check(self):
        res = genericity_mc(2, 10, seed=11, box=(0.5, 3.0))
        for rec in res["records"]:
            Js, L = sample_configuration(11, rec["index"], 2, (0.5, 3.0))
            exact = build_RN_exact(Js, L)
            if rec["verdict"] == "generating":
                assert exact != 0
            elif rec["verdict"] == "singular":
                assert exact == 0


class TestDriftInvariants:
    def test_zero_start_is_equilibrium(self):
        res = drift_invariants_check(J123, (0.0, 0.0, 0.0), 1.0)
        assert res["norm_drift"] == 0.0
        assert res["div_ok"]

    def test_principal_axis_rotation_is_stationary(self):
        res = drift_invariants_check(J123, (1.0, 0.0, 0.0), 1.0)
        assert res["norm_drift"] < 1e-12

    def test_generic_start_conserves_norm(self):
        res = drift_invariants_check(J123, (1.0, 1.0, 1.0), 10.0, h=1e-3)
        assert res["norm_drift"] < 1e-9
        assert res["div_ok"]


class TestProductBracketRank:
    def test_heisenberg_full(self):
        X = PolyField.coordinate(3, 0)
        Y = PolyField([Poly.zero(3), Poly.constant(3, 1), Poly.variable(3, 0)])
        res = product_bracket_rank([(X, Y)], [(0, 0, 0)], 2)
        assert res == {"rank": 3, "full": True, "n_brackets": 4}

    def test_two_member_model_ensemble_rank_three(self):
        # shared x,y rows pair up across members and the bracket algebra
        # closes at [X,Y] = theta d/dz, so the stacked span is 3-dimensional
        # (exhaustive right-nested enumeration is the oracle here: depth 3
        # adds no nonzero words beyond the depth-2 ones)
        X = PolyField.coordinate(3, 0)

        def Yt(th):
            return PolyField(
                [Poly.zero(3), Poly.constant(3, 1), Poly(3, {(1, 0, 0): th})]
            )

        ens = [(X, Yt(1)), (X, Yt(2))]
        res = product_bracket_rank(ens, [(0, 0, 0)] * 2, 3)
        assert res["rank"] == 3
        assert not res["full"]
        deeper = product_bracket_rank(ens, [(0, 0, 0)] * 2, 5)
        assert deeper["rank"] == 3

    def test_single_rigid_body_full_at_depth5(self):
        ens = [(euler_field(J123), torque_field(L123))]
        res = product_bracket_rank(ens, [(0, 0, 0)], 5)
        assert res["rank"] == 3 and res["full"]

    def test_rn_consistency_two_bodies(self):
        # generating verdict implies the bracket span fills R^6 once the
        # enumeration is deep enough to reach V^5 (depth 2*5+1)
        Js = [J123, InertiaSpec(1.1, 2.7, 3.9)]
        assert build_RN(Js, L123).verdict == "generating"
        ens = [(euler_field(J), torque_field(L123)) for J in Js]
        res = product_bracket_rank(ens, [(0, 0, 0)] * 2, 11)
        assert res["full"]

    def test_dimension_validation(self):
        X2 = PolyField.coordinate(2, 0)
        X3 = PolyField.coordinate(3, 0)
        with pytest.raises(ValidationError):
            product_bracket_rank([(X2,), (X3,)], [(0, 0), (0, 0, 0)], 2)

    def test_depth_validation(self):
        with pytest.raises(ValidationError):
            product_bracket_rank([(PolyField.coordinate(2, 0),)], [(0, 0)], 0)


def test_rn_matrix_layout():
    # row-block per body, column m holds V^m
    M = rn_matrix([J123], L123)
    chain = bracket_chain(J123, L123, 2)
    for m in range(3):
        assert np.array_equal(M[:, m], chain[m])
