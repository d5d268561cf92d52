import math
from fractions import Fraction

import numpy as np
import pytest

from ensemblecontrol import moments
from ensemblecontrol.exprdsl import parse, taylor_coeffs
from ensemblecontrol.moments import (
    GammaMatrix,
    InfeasibleEpsilonError,
    LegendreBasis,
    SynthesisScenario,
    choose_epsilon,
    evaluate_terminal,
    gamma_moment,
    legendre,
    ode_cross_check,
    poly_int01,
    project_target,
    rescale_to_horizon,
    synthesize_controls,
    verify_model,
)
from ensemblecontrol.odesim import integrate_ensemble, make_grid
from ensemblecontrol.polyfield import Poly, PolyField
from ensemblecontrol.signals import Polynomial

PI = "3.141592653589793"


class TestLegendre:
    def test_p0_is_one(self):
        assert legendre(0) == Poly.constant(1, 1)

    def test_p2_rodrigues(self):
        assert legendre(2) == Poly(1, {(2,): 6, (1,): -6, (0,): 1})

    def test_orthogonality_spot(self):
        assert poly_int01(legendre(2) * legendre(4)) == 0

    def test_degree_and_value_at_one(self):
        basis = LegendreBasis.build(8)
        for k, p in enumerate(basis.polys):
            assert p.degree() == k
            assert p.eval_exact([Fraction(1)]) == 1  # shifted family normalization

    def test_squared_norm(self):
        # integral of P_k^2 over [0,1] is 1/(2k+1)
        for k in (1, 2, 5):
            assert poly_int01(legendre(k) * legendre(k)) == Fraction(1, 2 * k + 1)


class TestGamma:
    def test_triangular_zero(self):
        assert gamma_moment(1, 2) == 0

    def test_gamma_11(self):
        assert gamma_moment(1, 1) == Fraction(1, 30)
        # equals the moment of t^{2r} against P_{2r} since lower powers drop
        t2 = Poly(1, {(2,): 1})
        assert poly_int01(t2 * legendre(2)) == Fraction(1, 30)

    def test_diagonal_formula(self):
        # gamma_rr = ((2r)!)^2 / (4r+1)!
        for r in (1, 2, 3, 4):
            expect = Fraction(
                math.factorial(2 * r) ** 2, math.factorial(4 * r + 1)
            )
            assert gamma_moment(r, r) == expect

    def test_bound_m_up_to_12(self):
        for m in range(1, 13):
            for r in range(1, 7):
                assert abs(gamma_moment(m, r)) < Fraction(1, 8)

    def test_matrix_validates(self):
        gm = GammaMatrix.build(8, 5)
        assert gm.value(3, 3) == Fraction(1, 12012)

    def test_scaled_moments_identity_exact(self):
        # substituting U -> eps U and v_r -> eps^{-r} v_r multiplies the
        # moment by exactly eps^{m-r}; checked by direct construction
        eps = Fraction(1, 8)
        U = Poly(1, {(2,): eps, (1,): -eps})
        gm = GammaMatrix.build(6, 3)
        for m in range(1, 7):
            Um = Poly.constant(1, 1)
            for _ in range(m):
                Um = Um * U
            for r in range(1, 4):
                vr = legendre(2 * r) * (eps ** (-r))
                direct = poly_int01(Um * vr)
                assert direct == gm.scaled_value(m, r, eps)


class TestProjection:
    def _profile(self, grid, M=8):
        e = parse("exp(theta*x)-1")
        a = np.empty((grid.size, M))
        for i, th in enumerate(grid.nodes):
            a[i] = taylor_coeffs(e, float(th), M).as_floats()[1:]
        return a

    def test_member_of_span_recovered(self):
        grid = make_grid("gauss", (0, 1), 32)
        a = self._profile(grid)
        c, residual = project_target(a, a[:, 1], grid, 4)
        assert residual <= 1e-10
        assert c == pytest.approx([0.0, 1.0, 0.0, 0.0], abs=1e-8)

    def test_orthogonal_target_keeps_full_norm(self):
        # f = theta x has profile span {theta}; project out theta from 1
        grid = make_grid("gauss", (0, 1), 32)
        a = np.stack([grid.nodes], axis=1)
        w = grid.weights
        zhat = 1.0 - (np.dot(w, grid.nodes) / np.dot(w, grid.nodes**2)) * grid.nodes
        c, residual = project_target(a, zhat, grid, 1)
        assert abs(c[0]) < 1e-12
        norm = math.sqrt(float(np.dot(w, zhat**2)))
        assert residual == pytest.approx(norm, abs=1e-9)

    def test_against_dense_least_squares_oracle(self):
        # the Gram system is badly conditioned at R = 6, so the raw
        # coefficients are not comparable; the residual and the projected
        # vector are the well-posed quantities and must match the
        # independent dense solver
        grid = make_grid("gauss", (0, 1), 64)
        a = self._profile(grid)
        zhat = np.sin(math.pi * grid.nodes)
        c, residual = project_target(a, zhat, grid, 6)
        sw = np.sqrt(grid.weights)
        sol, *_ = np.linalg.lstsq(sw[:, None] * a[:, :6], sw * zhat, rcond=None)
        r = zhat - a[:, :6] @ sol
        oracle = math.sqrt(float(np.dot(grid.weights, r * r)))
        assert residual == pytest.approx(oracle, abs=1e-9)
        assert a[:, :6] @ c == pytest.approx(a[:, :6] @ sol, abs=1e-7)

    def test_degenerate_basis_rejected(self):
        grid = make_grid("gauss", (0, 1), 8)
        with pytest.raises(moments.DegenerateBasisError):
            project_target(np.zeros((8, 3)), np.ones(8), grid, 2)


class TestChooseEpsilon:
    def test_vanishing_mu_returns_cap(self):
        assert choose_epsilon(0.1, 3, rho=2.0, mu_f=0.0, b_y=10.0) == 1.0

    def test_documented_example_is_dyadic_and_tight(self):
        eps1, R, rho, mu_f, b_y = 1e-2, 4, 2.0, 3.0, 10.0
        eps = choose_epsilon(eps1, R, rho, mu_f, b_y)
        assert math.log2(eps) == round(math.log2(eps))

        def lhs(e):
            return e * math.pi * mu_f / (2 * (rho - e))

        rhs = eps1 * rho**R / b_y
        assert lhs(eps) < rhs
        assert lhs(2 * eps) >= rhs

    def test_monotone_in_gain_budget(self):
        base = choose_epsilon(1e-2, 4, 2.0, 3.0, 10.0)
        doubled = choose_epsilon(1e-2, 4, 2.0, 3.0, 20.0)
        assert doubled <= base

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            choose_epsilon(0.0, 1, 1.0, 1.0, 1.0)


class TestSynthesize:
    def test_envelope_vanishes_at_both_ends(self):
        u, v = synthesize_controls([1.0, -2.0], eps=0.25, R=2)
        U = u.antiderivative()
        assert U.eval(0.0) == 0.0
        assert float(U.coeffs[1] + U.coeffs[2]) == 0.0  # U(1) = -eps + eps

    def test_control_integrates_to_exact_zero(self):
        u, v = synthesize_controls([3.0, -1.0, 0.5], eps=2.0**-20, R=3)
        total = v.definite_integral(0, 1)
        assert isinstance(total, Fraction) and total == 0

    def test_zero_gains_zero_control(self):
        _, v = synthesize_controls([0.0, 0.0], eps=0.5, R=2)
        assert all(c == 0 for c in v.coeffs)

    def test_horizon_rescaling(self):
        u, v = synthesize_controls([1.0], eps=0.5, R=1)
        uT = rescale_to_horizon(u, 2.0)
        # u_T(t) = u(t/2)/2 keeps the primitive's endpoint structure
        assert float(uT.eval(1.0)) == pytest.approx(0.5 * float(u.eval(0.5)))


def _truncated_model_fields(f_src, grid, deg):
    """(d/dx, d/dy + T_deg f(x, theta) d/dz) per node, for brute-force runs."""
    e = parse(f_src)
    X = PolyField.coordinate(3, 0)
    out = []
    for th in grid.nodes:
        jet = taylor_coeffs(e, float(th), deg).coeffs
        terms = {
            (m, 0, 0): Fraction(c)
            for m, c in enumerate(jet)
            if m >= 1 and c != 0
        }
        Y = PolyField([Poly.zero(3), Poly.constant(3, 1), Poly(3, terms)])
        out.append((X, Y))
    return out


class TestTerminalEvaluation:
    def test_linear_profile_closed_form(self):
        # f = theta x: z(1) = theta * integral of x(t) v(t), linear in theta
        grid = make_grid("gauss", (0, 1), 8)
        u, v = synthesize_controls([1.0], eps=0.25, R=1)
        z = evaluate_terminal(parse("theta*x"), grid, u, v)
        xp = Poly(1, {(2,): Fraction(1, 4), (1,): Fraction(-1, 4)})
        vp = Poly(1, {(k,): Fraction(c) for k, c in enumerate(v.coeffs) if c})
        base = float(poly_int01(xp * vp))
        assert z == pytest.approx(grid.nodes * base, rel=1e-12)

    def test_zero_control_zero_output(self):
        grid = make_grid("gauss", (0, 1), 4)
        u, v = synthesize_controls([0.0], eps=0.25, R=1)
        z = evaluate_terminal(parse("exp(theta*x)-1"), grid, u, v)
        assert np.allclose(z, 0.0)

    def test_quadrature_route_agrees_with_ode_routes(self):
        # benign gains: the analytic remainder is resolvable, so the
        # adaptive quadrature, the stabilized marcher, and a raw RK4 on the
        # truncated model must all agree
        grid = make_grid("gauss", (0, 1), 8)
        f_src = "exp(theta*x)-1"
        y = [0.9, -0.4]
        eps = 2.0**-7
        u, v = synthesize_controls(y, eps=eps, R=2)
        z_quad = evaluate_terminal(parse(f_src), grid, u, v)
        ode = ode_cross_check(parse(f_src), grid, u, v, h=2e-4)
        assert np.max(np.abs(z_quad - ode["z"])) < 1e-6
        assert ode["x1"] == 0.0 and ode["y1"] == 0.0

        fields = _truncated_model_fields(f_src, grid, 12)
        rec = integrate_ensemble(fields, [u, v], [0.0, 0.0, 0.0], 1.0, 2e-4)
        brute = rec.terminal
        assert np.max(np.abs(brute[:, 2] - z_quad)) < 1e-6
        assert np.max(np.abs(brute[:, 0])) < 1e-10
        assert np.max(np.abs(brute[:, 1])) < 1e-10

    def test_certified_route_matches_highprec_raw_integral(self):
        # harsh gains (1e40+): float quadrature of the raw integrand is
        # meaningless, so the evaluator integrates the Taylor trend in exact
        # rational arithmetic; mpmath at 60 digits is the independent oracle
        import mpmath as mp
        from ensemblecontrol import exprdsl as E

        grid = make_grid("gauss", (0, 1), 64)
        sc = SynthesisScenario(
            f_theta="exp(theta*x)-1", target=f"sin({PI}*theta)",
            grid=grid, eps1=0.02, rho=2.0, mu_f=math.e**2 - 1,
        )
        rep = verify_model(sc)
        assert rep.stage == "complete" and rep.R == 4
        u, v = rep.controls

        def mp_eval(e, x, th):
            if isinstance(e, E.Num):
                return mp.mpf(e.value.numerator) / mp.mpf(e.value.denominator)
            if isinstance(e, E.Var):
                return x if e.name == "x" else th
            if isinstance(e, E.Neg):
                return -mp_eval(e.arg, x, th)
            if isinstance(e, E.Pow):
                return mp_eval(e.base, x, th) ** e.exponent
            if isinstance(e, E.Fun):
                return getattr(mp, e.name)(mp_eval(e.arg, x, th))
            a, b = mp_eval(e.left, x, th), mp_eval(e.right, x, th)
            return {"+": a + b, "-": a - b, "*": a * b, "/": a / b}[e.op]

        fe = parse(sc.f_theta)
        with mp.workdps(60):
            ucoef = [mp.mpf(c.numerator) / mp.mpf(c.denominator)
                     for c in u.antiderivative().coeffs]
            vcoef = [mp.mpf(c.numerator) / mp.mpf(c.denominator) for c in v.coeffs]

            def horner(cs, t):
                acc = mp.mpf(0)
                for c in reversed(cs):
                    acc = acc * t + c
                return acc

            for idx in (0, 31, 63):
                th = mp.mpf(float(grid.nodes[idx]))
                raw = mp.quad(
                    lambda t: mp_eval(fe, horner(ucoef, t), th) * horner(vcoef, t),
                    [0, mp.mpf(1) / 4, mp.mpf(1) / 2, mp.mpf(3) / 4, 1],
                )
                assert abs(float(raw) - rep.z_terminal[idx]) < 1e-10


class TestVerifyModel:
    def test_single_mode_target(self):
        grid = make_grid("gauss", (0, 1), 32)
        sc = SynthesisScenario(
            f_theta="exp(theta*x)-1", target="0.2*theta",
            grid=grid, eps1=0.1, rho=2.0, mu_f=math.e**2 - 1,
        )
        rep = verify_model(sc)
        assert rep.stage == "complete" and rep.ok
        assert rep.R == 1
        assert rep.terminal_error < 2 * 0.1
        assert rep.x1 == 0.0 and rep.y1 == 0.0

    def test_necessity_direction_unreachable_target(self):
        # profile span of f = theta x is {theta}; theta^2 keeps its exact
        # L2 distance to that span: residual^2 = 1/5 - (3/4)^2/3 = 1/80
        grid = make_grid("gauss", (0, 1), 64)
        sc = SynthesisScenario(
            f_theta="theta*x", target="theta^2",
            grid=grid, eps1=0.05, rho=1.0, mu_f=1.0,
        )
        rep = verify_model(sc)
        assert rep.stage == "project_target"
        assert not rep.ok
        exact = math.sqrt(1.0 / 80.0)
        assert abs(rep.projection_residual - exact) <= 1e-6
        assert rep.projection_residual >= exact - 1e-6

    def test_decomposition_bound_holds(self):
        grid = make_grid("gauss", (0, 1), 64)
        sc = SynthesisScenario(
            f_theta="exp(theta*x)-1", target=f"sin({PI}*theta)",
            grid=grid, eps1=0.1, rho=2.0, mu_f=math.e**2 - 1,
        )
        rep = verify_model(sc)
        assert rep.ok
        assert rep.terminal_error <= (
            rep.projection_residual + rep.perturbation_bound + 1e-12
        )

    def test_analyticity_bound_violation_reported(self):
        grid = make_grid("gauss", (0, 1), 16)
        sc = SynthesisScenario(
            f_theta="exp(theta*x)-1", target="0.2*theta",
            grid=grid, eps1=0.1, rho=2.0, mu_f=0.01,
        )
        rep = verify_model(sc)
        assert rep.stage == "analyticity_bound" and not rep.ok

    def test_infeasible_epsilon_reported(self):
        grid = make_grid("gauss", (0, 1), 64)
        sc = SynthesisScenario(
            f_theta="exp(theta*x)-1", target=f"sin({PI}*theta)",
            grid=grid, eps1=1e-6, rho=2.0, mu_f=math.e**2 - 1,
        )
        rep = verify_model(sc)
        assert rep.stage == "choose_epsilon" and not rep.ok
        assert "gain" in rep.message


class TestGainCap:
    def test_gain_overflow_raises_infeasible(self):
        with pytest.raises(InfeasibleEpsilonError):
            choose_epsilon(1e-12, 12, rho=2.0, mu_f=1e6, b_y=1e30)
