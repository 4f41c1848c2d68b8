import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from pmechaos.diagnostics import (
    GridMeta,
    ckp_check,
    h1_distance,
    kde_marginal,
    l1_distance,
    l2_mollified_error,
    l2_mollified_grad_error,
    modulated_energy,
    mollified_empirical,
    product_density,
    rate_fit,
    relative_entropy,
    relative_fisher,
    superadditivity_check,
)
from pmechaos.errors import (
    ConfigurationError,
    DomainError,
    InequalityViolation,
    NormalizationError,
    ResolutionError,
    ResourceError,
    ShapeError,
)
from pmechaos import grid as gr
from pmechaos.grid import GridDensity, gaussian_density
from pmechaos.kernels import MollifierSpec
from pmechaos.particles import InitialLawSpec, init_iid
from pmechaos.seeds import SeedLineage

BOX, M = 20.0, 2048


@pytest.fixture(scope="module")
def shifted_pair():
    p = gaussian_density(M, BOX, 1, 1.0)
    q = gaussian_density(M, BOX, 1, 1.0, center=(BOX / 2 + 0.2,))
    return p, q


def mollified(rho, spec):
    _, k2 = gr.wavenumbers(rho.points_per_axis, rho.box_length, rho.dims)
    return rho.with_values(gr.irfft(gr.rfft(rho.values) * spec.w_hat(k2), rho.values.shape))


def random_density(rng, m=64, box=4.0):
    v = rng.random(m) + 0.05
    return GridDensity(v / (v.sum() * box / m), box)


class TestMollifiedEmpirical:
    def test_single_particle_at_node(self):
        spec = MollifierSpec(1, 0.4)
        meta = GridMeta(256, 12.8, 1)
        x0 = 100 * meta.spacing
        out = mollified_empirical(np.array([[x0]]), spec, meta).values
        x = np.arange(256) * meta.spacing
        want = np.exp(-0.5 * ((x - x0) / 0.4) ** 2) / (math.sqrt(2 * math.pi) * 0.4)
        assert np.abs(out - want).max() < 1e-6

    def test_mass(self):
        rng = np.random.default_rng(0)
        pos = rng.uniform(0, 8.0, (300, 2))
        out = mollified_empirical(pos, MollifierSpec(2, 0.5), GridMeta(64, 8.0, 2))
        assert out.mass() == pytest.approx(1.0, abs=1e-6)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        pos = rng.uniform(0, 8.0, (100, 1))
        spec, meta = MollifierSpec(1, 0.5), GridMeta(128, 8.0, 1)
        a = mollified_empirical(pos, spec, meta).values
        b = mollified_empirical(pos[rng.permutation(100)], spec, meta).values
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_unresolved(self):
        with pytest.raises(ResolutionError):
            mollified_empirical(np.zeros((2, 1)), MollifierSpec(1, 0.4), GridMeta(16, 8.0, 1))


class TestL2:
    def test_self_distance_zero(self):
        spec = MollifierSpec(1, 0.4)
        rho = gaussian_density(256, 12.8, 1, 1.0)
        assert l2_mollified_error(mollified(rho, spec), rho, spec) == 0.0

    def test_quarter_homogeneity(self):
        spec = MollifierSpec(1, 0.4)
        rho = gaussian_density(256, 12.8, 1, 1.0)
        other = gaussian_density(256, 12.8, 1, 1.3)
        full = l2_mollified_error(other, rho, spec)
        half = l2_mollified_error(other.with_values(0.5 * other.values), rho.with_values(0.5 * rho.values), spec)
        assert half == pytest.approx(0.25 * full, rel=1e-12)

    def test_decreases_with_n(self):
        spec = MollifierSpec(1, 0.4)
        rho = gaussian_density(256, 12.8, 1, 1.0)
        means = []
        for n in (250, 1000, 4000):
            vals = [l2_mollified_error(init_iid(n, 1, InitialLawSpec(1.0), SeedLineage(5, r, "l2", n), 12.8), rho, spec) for r in range(20)]
            means.append(np.mean(vals))
        assert means[0] > means[1] > means[2]
        assert rate_fit(list(zip((250, 1000, 4000), means))).slope == pytest.approx(-1.0, abs=0.2)

    def test_grad_variant(self):
        spec = MollifierSpec(1, 0.4)
        rho = gaussian_density(256, 12.8, 1, 1.0)
        shifted = gaussian_density(256, 12.8, 1, 1.0, center=(6.5,))
        assert l2_mollified_grad_error(mollified(rho, spec), rho, spec) < 1e-25
        assert l2_mollified_grad_error(mollified(shifted, spec), rho, spec) > 0

    def test_grid_mismatch(self):
        spec = MollifierSpec(1, 0.4)
        with pytest.raises(ShapeError):
            l2_mollified_error(gaussian_density(128, 12.8, 1, 1.0), gaussian_density(256, 12.8, 1, 1.0), spec)


class TestModulatedEnergy:
    def test_constant(self):
        est = modulated_energy([0.3, 0.3, 0.3])
        assert est.value == pytest.approx(0.15)
        assert est.stderr == 0.0

    def test_linear(self):
        vals = np.array([0.1, 0.4, 0.2])
        assert modulated_energy(2 * vals).value == pytest.approx(2 * modulated_energy(vals).value)

    def test_needs_two(self):
        with pytest.raises(ConfigurationError):
            modulated_energy([1.0])


class TestEntropy:
    def test_identical(self, shifted_pair):
        p, _ = shifted_pair
        assert abs(relative_entropy(p, p)) < 1e-12
        assert relative_fisher(p, p) == 0.0
        assert l1_distance(p, p) == 0.0

    def test_gaussian_shift(self, shifted_pair):
        p, q = shifted_pair
        assert relative_entropy(p, q) == pytest.approx(0.02, abs=1e-4)
        assert relative_fisher(p, q) == pytest.approx(0.04, abs=1e-4)

    def test_l1_and_ckp(self, shifted_pair):
        p, q = shifted_pair
        # two equal-variance Gaussians a distance mu apart: l1 = 2 (2 Phi(mu/2) - 1)
        assert l1_distance(p, q) == pytest.approx(2 * (2 * norm.cdf(0.1) - 1), abs=1e-6)
        rep = ckp_check(p, q)
        assert rep.ckp_bound == pytest.approx(0.2, abs=5e-4)
        assert rep.l1_distance <= rep.ckp_bound
        assert rep.reliable

    def test_translation_invariant(self, shifted_pair):
        p, q = shifted_pair
        k = 37
        a = relative_fisher(p, q)
        b = relative_fisher(p.with_values(np.roll(p.values, k)), q.with_values(np.roll(q.values, k)))
        assert a == pytest.approx(b, abs=1e-8)

    def test_normalization(self, shifted_pair):
        p, q = shifted_pair
        with pytest.raises(NormalizationError):
            relative_entropy(p.with_values(1.01 * p.values), q)

    def test_report_json(self, shifted_pair):
        rep = ckp_check(*shifted_pair)
        d = json.loads(rep.to_json())
        assert set(d) >= {"relative_entropy", "l1_distance", "ckp_bound", "relative_fisher", "floor_sensitivity", "reliable"}

    def test_strict_violation_raises(self):
        # CKP cannot fail for valid densities; a negative 'entropy' from a broken floor can
        p = GridDensity(np.array([2.0, 0.0, 0.0, 0.0]), 2.0)
        q = GridDensity(np.array([0.0, 0.0, 0.0, 2.0]), 2.0)
        with pytest.raises(InequalityViolation):
            ckp_check(p, q, floor=1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_gibbs_and_ckp_random(self, seed):
        rng = np.random.default_rng(seed)
        p, q = random_density(rng), random_density(rng)
        rep = ckp_check(p, q)
        assert rep.relative_entropy >= -1e-9
        assert rep.relative_fisher >= 0
        assert np.abs(p.values - q.values).max() <= 1e-6 or (rep.relative_entropy > 0 and rep.relative_fisher > 0)


class TestSuperadditivity:
    def test_factorization_k2(self, shifted_pair):
        p = gaussian_density(128, 12.8, 1, 1.0)
        q = gaussian_density(128, 12.8, 1, 1.1, center=(6.6,))
        rep = superadditivity_check(p, q, 2, 10)
        assert rep.factorization_error < 1e-8
        assert rep.holds

    def test_k3_gaussian(self):
        p = gaussian_density(128, 12.8, 1, 1.0)
        q = gaussian_density(128, 12.8, 1, 1.0, center=(6.6,))
        rep = superadditivity_check(p, q, 3, 50)
        assert rep.hk == pytest.approx(0.06, abs=1e-6)
        assert rep.holds

    def test_equal(self):
        p = gaussian_density(64, 12.8, 1, 1.0)
        rep = superadditivity_check(p, p, 2, 4)
        assert rep.h1 == 0 and rep.hk == 0 and rep.lhs == rep.rhs and rep.holds

    def test_resource_limit(self):
        p = gaussian_density(64, 12.8, 1, 1.0)
        with pytest.raises(ResourceError):
            superadditivity_check(p, p, 4, 10)

    def test_product_density_mass(self):
        p = gaussian_density(64, 12.8, 1, 1.0)
        assert product_density(p, 2).mass() == pytest.approx(p.mass() ** 2, rel=1e-13)


class TestKde:
    def test_single_replica(self):
        ens = init_iid(100, 1, seed_lineage=SeedLineage(0), box_length=12.8)
        meta = GridMeta(256, 12.8, 1)
        np.testing.assert_array_equal(kde_marginal([ens], 0.4, meta).values, mollified_empirical(ens, MollifierSpec(1, 0.4), meta).values)

    def test_identical_replicas(self):
        ens = init_iid(100, 1, seed_lineage=SeedLineage(0), box_length=12.8)
        meta = GridMeta(256, 12.8, 1)
        np.testing.assert_allclose(kde_marginal([ens] * 5, 0.4, meta).values, kde_marginal([ens], 0.4, meta).values, atol=1e-15)

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            kde_marginal([], 0.4, GridMeta(64, 12.8, 1))

    def test_pooled_lln(self):
        spec = MollifierSpec(1, 0.4)
        rho = gaussian_density(256, 12.8, 1, 1.0)
        target = mollified(rho, spec).values
        errs = []
        for n in (20, 200, 2000):
            reps = [init_iid(n, 1, InitialLawSpec(1.0), SeedLineage(8, r, "kde", n), 12.8) for r in range(50)]
            errs.append(np.sum(np.abs(kde_marginal(reps, 0.4, GridMeta.of(rho)).values - target)) * 0.05)
        assert errs[0] > errs[1] > errs[2]


class TestRateFit:
    def test_exact(self):
        fit = rate_fit([(10, 1), (100, 0.1), (1000, 0.01)])
        assert fit.slope == pytest.approx(-1.0, abs=1e-12)
        assert fit.residual_rms < 1e-12

    def test_constant(self):
        assert rate_fit([(1, 3.0), (2, 3.0), (4, 3.0)]).slope == pytest.approx(0.0, abs=1e-12)

    def test_noisy(self):
        rng = np.random.default_rng(0)
        x = np.array([1, 2, 4, 8, 16, 32], dtype=float)
        y = 3 * x**-0.5 * (1 + 0.01 * rng.standard_normal(6))
        assert rate_fit(zip(x, y)).slope == pytest.approx(-0.5, abs=0.02)

    def test_errors(self):
        with pytest.raises(DomainError):
            rate_fit([(1, 1.0), (2, 0.0), (3, 1.0)])
        with pytest.raises(ConfigurationError):
            rate_fit([(1, 1.0), (2, 1.0)])

    def test_json(self):
        d = json.loads(rate_fit([(1, 1.0), (2, 0.5), (4, 0.25)]).to_json())
        assert d["slope"] == pytest.approx(-1.0)


@pytest.mark.parametrize("k", [1, 3, 7])
def test_h1_distance_sine(k):
    # ||a sin(2 pi k x / L)||_{H^1}^2 = a^2 L / 2 (1 + (2 pi k / L)^2)
    m, box, a = 256, 12.8, 0.01
    x = np.arange(m) * box / m
    p = GridDensity(1 / box + a * np.sin(2 * np.pi * k * x / box), box)
    q = GridDensity(np.full(m, 1 / box), box)
    expect = a * math.sqrt(box / 2 * (1 + (2 * np.pi * k / box) ** 2))
    assert h1_distance(p, q) == pytest.approx(expect, rel=1e-12)
    assert h1_distance(q, p) == pytest.approx(expect, rel=1e-12)
