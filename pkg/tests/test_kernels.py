import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from pmechaos.errors import (
    AssumptionViolation,
    ConfigurationError,
    SingularityError,
    UnsupportedFamilyError,
)
from pmechaos.kernels import (
    CoulombSpec,
    MollifierSpec,
    ScalingLaw,
    coulomb_grad_phi,
    coulomb_grad_phi_reg,
    eta_from_n,
    eval_grad_v,
    eval_grad_w,
    eval_v,
    eval_w,
    gaussian_abs_moment,
    second_moment_v,
    self_convolution_error,
    tensor_quadrature,
    verify_assumptions,
)


class TestScalingLaw:
    def test_eta_formula(self):
        law = ScalingLaw(0.2, 2)
        assert eta_from_n(100000, law) == pytest.approx(10**-0.5, rel=1e-15)
        assert law.eta(100000) == pytest.approx(0.316228, abs=1e-6)

    @pytest.mark.parametrize("beta", [0.0, -0.1])
    def test_nonpositive_beta(self, beta):
        with pytest.raises(ConfigurationError, match="beta > 0"):
            ScalingLaw(beta, 1)

    def test_pme_upper_bound_named(self):
        with pytest.raises(ConfigurationError, match=r"d/\(2\(d\+2\)\)"):
            ScalingLaw(0.3, 2, "pme")

    def test_pme_bound_edge(self):
        assert ScalingLaw(0.24, 2).upper_bound == 0.25

    def test_coulomb_bound(self):
        ScalingLaw(0.24, 2, "coulomb")
        with pytest.raises(ConfigurationError, match="1/4"):
            ScalingLaw(0.25, 3, "coulomb")
        with pytest.raises(ConfigurationError):
            ScalingLaw(0.1, 1, "coulomb")

    @pytest.mark.parametrize("n", [0, 1])
    def test_small_n(self, n):
        with pytest.raises(ConfigurationError):
            eta_from_n(n, ScalingLaw(0.1, 1))

    @given(st.integers(2, 10**7), st.floats(0.01, 0.16), st.integers(1, 3))
    def test_eta_decreasing(self, n, beta, d):
        law = ScalingLaw(beta, d)
        assert 0 < law.eta(n + 1) < law.eta(n) < 1


class TestMollifier:
    def test_peak_value(self):
        spec = MollifierSpec(1, 1.0)
        assert float(eval_w(spec, 0.0)) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
        mass, _ = integrate.quad(lambda x: float(eval_w(spec, x)), -np.inf, np.inf)
        assert mass == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_gradients_vanish_at_origin(self, d):
        spec = MollifierSpec(d, 0.3)
        assert np.all(eval_grad_w(spec, np.zeros(d)) == 0)
        assert np.all(eval_grad_v(spec, np.zeros(d)) == 0)

    def test_bandwidth_scaling(self):
        a, b = MollifierSpec(1, 1.0), MollifierSpec(1, 0.5)
        assert b.w(0.0) == pytest.approx(2 * a.w(0.0))
        assert math.sqrt(b.w_var) == pytest.approx(0.5 * math.sqrt(a.w_var))
        x = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(b.w(x), 2 * a.w(2 * x), rtol=1e-14)

    def test_v_is_variance_two_gaussian(self):
        spec = MollifierSpec(1, 1.0)
        x = np.linspace(-6, 6, 101)
        np.testing.assert_allclose(eval_v(spec, x), np.exp(-x**2 / 4) / math.sqrt(4 * math.pi), rtol=1e-14)

    @pytest.mark.parametrize("d,eta", [(1, 1.0), (1, 0.2), (2, 0.3)])
    def test_self_convolution_matches_closed_form(self, d, eta):
        assert self_convolution_error(MollifierSpec(d, eta)) < 1e-6

    @pytest.mark.parametrize(
        "d,eta,expected", [(1, 1.0, 2.0), (2, 0.1, 0.04), (1, 0.5, 0.5)]
    )
    def test_second_moment(self, d, eta, expected):
        spec = MollifierSpec(d, eta)
        assert second_moment_v(spec) == pytest.approx(expected, rel=1e-14)
        (mom,), _ = tensor_quadrature(
            [lambda p: np.sum(p * p, axis=-1) * spec.v(p)], d, 12 * eta * math.sqrt(2)
        )
        assert mom == pytest.approx(expected, abs=1e-6)

    @given(st.floats(0.01, 5.0), st.integers(1, 4), st.floats(0.2, 3.0))
    def test_second_moment_scaling(self, eta, d, s):
        a = MollifierSpec(d, eta, base_std=s)
        b = a.with_bandwidth(eta / 2)
        assert second_moment_v(a) / second_moment_v(b) == pytest.approx(4.0, rel=1e-12)
        assert second_moment_v(a) / eta**2 == pytest.approx(2 * d * s * s, rel=1e-10)

    @pytest.mark.parametrize("eta", [1.0, 0.3, 0.05])
    @pytest.mark.parametrize("d", [1, 2])
    def test_unit_mass(self, eta, d):
        spec = MollifierSpec(d, eta)
        (mw, mv), _ = tensor_quadrature([spec.w, spec.v], d, 12 * eta * math.sqrt(2))
        assert abs(mw - 1) < 1e-8 and abs(mv - 1) < 1e-8

    @settings(max_examples=50)
    @given(st.lists(st.floats(-4, 4), min_size=2, max_size=2), st.floats(0.05, 2.0))
    def test_symmetry(self, x, eta):
        spec = MollifierSpec(2, eta)
        x = np.array(x)
        assert spec.w(x) == spec.w(-x)
        np.testing.assert_array_equal(spec.grad_v(-x), -spec.grad_v(x))

    def test_invalid_spec(self):
        with pytest.raises(ConfigurationError):
            MollifierSpec(1, 0.0)
        with pytest.raises(ConfigurationError):
            MollifierSpec(0, 1.0)
        with pytest.raises(UnsupportedFamilyError):
            MollifierSpec(1, 1.0, family="bump")

    def test_abs_moment_closed_form(self):
        assert gaussian_abs_moment(2, 3, 1.0) == pytest.approx(3.0)
        assert gaussian_abs_moment(1, 1, 1.0) == pytest.approx(math.sqrt(2 / math.pi))


class TestAssumptions:
    def test_default_gaussian_passes(self):
        rep = verify_assumptions(MollifierSpec(2, 0.3), ScalingLaw(0.24, 2), (1, 2, 4))
        assert rep.passed and rep.beta_ok
        assert rep.mass_error < 1e-8
        orders = dict(rep.moments)
        assert orders[2] == pytest.approx(2 * 0.09, rel=1e-8)
        assert orders[1] == pytest.approx(gaussian_abs_moment(1, 2, 0.3), rel=1e-6)
        assert orders[4] == pytest.approx(gaussian_abs_moment(4, 2, 0.3), rel=1e-8)
        # standard Gaussian: e^{-l^2/2} e^{l} peaks at e^{1/2}
        assert rep.fourier_C == pytest.approx(math.exp(0.5), rel=1e-4)
        assert rep.closed_form_error < 1e-8

    def test_fourier_tail_dominated(self):
        lam = np.linspace(2, 20, 200)
        assert np.all(np.exp(-lam**2 / 2) <= np.exp(-lam))

    def test_json_fields(self):
        rep = verify_assumptions(MollifierSpec(1, 0.5), ScalingLaw(0.1, 1))
        data = json.loads(rep.to_json())
        assert {"mass_error", "moments", "fourier_C", "beta_ok"} <= set(data)
        assert data["moments"][0][0] == 1

    def test_dimension_mismatch_fails_beta(self):
        with pytest.raises(AssumptionViolation):
            verify_assumptions(MollifierSpec(1, 0.5), ScalingLaw(0.1, 2))
        rep = verify_assumptions(MollifierSpec(1, 0.5), ScalingLaw(0.1, 2), strict=False)
        assert not rep.passed and not rep.beta_ok

    def test_unsupported_family(self):
        spec = MollifierSpec(1, 1.0)
        object.__setattr__(spec, "family", "bump")
        with pytest.raises(UnsupportedFamilyError):
            verify_assumptions(spec, ScalingLaw(0.1, 1))


class TestCoulomb:
    def test_exact_field(self):
        spec = CoulombSpec(2, -1, 0.1)
        np.testing.assert_allclose(coulomb_grad_phi(spec, [1.0, 0.0]), [1.0, 0.0])
        np.testing.assert_allclose(coulomb_grad_phi(spec, [0.0, 2.0]), [0.0, 0.5])

    def test_singular_origin(self):
        with pytest.raises(SingularityError):
            coulomb_grad_phi(CoulombSpec(2, 1, 0.1), [0.0, 0.0])

    def test_regularized_finite_at_origin(self):
        assert np.all(coulomb_grad_phi_reg(CoulombSpec(3, 1, 0.1), np.zeros(3)) == 0)

    @pytest.mark.parametrize("d", [2, 3])
    def test_exact_outside_bandwidth(self, d):
        spec = CoulombSpec(d, 1, 0.2)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((500, d))
        x = x / np.linalg.norm(x, axis=1)[:, None] * (0.2 + rng.uniform(0, 3, 500))[:, None]
        np.testing.assert_allclose(spec.grad(x), coulomb_grad_phi(spec, x), rtol=1e-13)

    @pytest.mark.parametrize("d", [2, 3])
    def test_blend_is_continuously_differentiable(self, d):
        # second-order one-sided derivative estimates on both sides of each seam
        eta = 0.1
        spec = CoulombSpec(d, 1, eta)
        e = np.zeros(d)
        e[0] = 1.0
        step = 1e-5
        for fn, tol in ((spec.grad, 1e-6), (spec.hessian, 1e-3)):
            for r in (eta / 2, eta):
                f = lambda s: fn((r + s) * e)
                right = (-3 * f(0) + 4 * f(step) - f(2 * step)) / (2 * step)
                left = (3 * f(0) - 4 * f(-step) + f(-2 * step)) / (2 * step)
                scale = eta ** -(d + 1)
                assert np.abs(right - left).max() / scale < tol

    def test_gradient_seam_jump_absolute(self):
        spec = CoulombSpec(2, 1, 0.1)
        e = np.array([1.0, 0.0])
        step = 2e-7
        for r in (0.05, 0.1):
            f = lambda s: spec.grad((r + s) * e)
            right = (-3 * f(0) + 4 * f(step) - f(2 * step)) / (2 * step)
            left = (3 * f(0) - 4 * f(-step) + f(-2 * step)) / (2 * step)
            assert np.abs(right - left).max() < 1e-6

    def test_hessian_matches_finite_differences(self):
        spec = CoulombSpec(2, 1, 0.2)
        x = np.array([0.07, 0.11])
        eps = 1e-6
        fd = np.stack([(spec.grad(x + eps * e) - spec.grad(x - eps * e)) / (2 * eps) for e in np.eye(2)], axis=-1)
        np.testing.assert_allclose(spec.hessian(x), fd, atol=1e-4)

    def test_potential_gradient(self):
        spec = CoulombSpec(3, 1, 0.2)
        x = np.array([0.05, 0.13, -0.02])
        eps = 1e-6
        fd = np.array([(spec.potential(x + eps * e) - spec.potential(x - eps * e)) / (2 * eps) for e in np.eye(3)])
        np.testing.assert_allclose(fd, spec.grad(x), rtol=1e-6)

    @pytest.mark.parametrize("d", [2, 3])
    def test_constant_independent_of_bandwidth(self, d):
        consts = []
        for eta in (0.2, 0.1, 0.05):
            spec = CoulombSpec(d, -1, eta)
            ax = np.linspace(-4 * eta, 4 * eta, 201 if d == 2 else 61)
            pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
            sup1 = np.linalg.norm(spec.grad(pts), axis=-1).max()
            sup2 = np.abs(spec.hessian(pts)).max()
            assert sup1 <= spec.constant * eta ** -(d - 1) * (1 + 1e-12)
            assert sup2 <= spec.constant * eta ** -d * (1 + 1e-12) * d
            consts.append((sup1 * eta ** (d - 1), spec.constant))
        np.testing.assert_allclose([c for _, c in consts], consts[0][1], rtol=1e-12)
        np.testing.assert_allclose([s for s, _ in consts], consts[0][0], rtol=1e-9)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            CoulombSpec(1, 1, 0.1)
        with pytest.raises(ConfigurationError):
            CoulombSpec(2, 2, 0.1)
