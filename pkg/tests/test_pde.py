import math

import numpy as np
import pytest
from scipy.special import erf

from pmechaos import grid as gr
from pmechaos.errors import BlowUpError, ConfigurationError, NormalizationError, ResolutionError, SchemeError, ShapeError
from pmechaos.grid import GridDensity, convolve, gaussian_density
from pmechaos.kernels import CoulombSpec, MollifierSpec
from pmechaos.pde import (
    PdeConfig,
    Solver,
    load_solution,
    mollification_error,
    save_solution,
    solve_coulomb_drift,
    solve_intermediate,
    solve_vpme,
    stable_dt,
)
from pmechaos.diagnostics import rate_fit


def uniform(m, box, d=1):
    return GridDensity(np.full((m,) * d, 1.0 / box**d), box)


class TestGridDensity:
    def test_values_read_only(self):
        g = uniform(16, 2.0)
        with pytest.raises(ValueError):
            g.values[0] = 1.0

    def test_power_of_two(self):
        with pytest.raises(ShapeError):
            GridDensity(np.ones(12), 1.0)
        with pytest.raises(ShapeError):
            GridDensity(np.ones((8, 4)), 1.0)

    def test_mass_and_check(self):
        g = gaussian_density(256, 20.0, 1, 1.0)
        assert g.mass() == pytest.approx(1.0, abs=1e-12)
        g.check()
        with pytest.raises(NormalizationError):
            g.with_values(2 * g.values).check()

    def test_minimum_image_odd(self):
        dx = np.linspace(-30, 30, 1001)
        np.testing.assert_array_equal(gr.minimum_image(-dx, 10.0), -gr.minimum_image(dx, 10.0))
        assert np.all(np.abs(gr.minimum_image(dx, 10.0)) <= 5.0)


class TestConvolve:
    def test_uniform_gradient_vanishes(self):
        g = uniform(128, 8.0, 2)
        out = convolve(g, MollifierSpec(2, 0.4), gradient=True)
        assert np.abs(out).max() < 1e-14

    def test_single_cell_reproduces_kernel(self):
        m, box = 256, 6.4
        spec = MollifierSpec(1, 0.2)
        h = box / m
        vals = np.zeros(m)
        vals[m // 2] = 1.0 / h
        out = convolve(GridDensity(vals, box), spec, which="v")
        x = np.arange(m) * h - box / 2
        assert h <= spec.bandwidth / 8
        assert np.abs(out - spec.v(x)).max() < 1e-6

    def test_linearity(self):
        rng = np.random.default_rng(3)
        a, b = rng.random(64), rng.random(64)
        spec = MollifierSpec(1, 0.5)
        ca = convolve(GridDensity(a, 8.0), spec)
        cb = convolve(GridDensity(b, 8.0), spec)
        np.testing.assert_allclose(convolve(GridDensity(2 * a - 3 * b, 8.0), spec), 2 * ca - 3 * cb, atol=1e-13)

    def test_unresolved(self):
        with pytest.raises(ResolutionError):
            convolve(uniform(64, 8.0), MollifierSpec(1, 0.4))

    def test_coulomb_field_odd_for_symmetric_density(self):
        rho = gaussian_density(64, 6.4, 2, 0.5)
        b = convolve(rho, CoulombSpec(2, -1, 0.4))
        # reflection x -> -x about the box centre flips the first component
        flipped = np.roll(b[0][::-1, :], 1, axis=0)
        np.testing.assert_allclose(flipped, -b[0], atol=1e-12)


class TestTransfer:
    def test_cic_mass(self):
        rng = np.random.default_rng(0)
        pos = rng.uniform(0, 5.0, (200, 2))
        vals = gr.spread_cic(pos, 32, 5.0)
        assert np.sum(vals) * (5.0 / 32) ** 2 == pytest.approx(1.0, rel=1e-13)

    def test_cic_interp_exact_at_nodes(self):
        m, box = 32, 4.0
        f = np.sin(2 * np.pi * np.arange(m) / m)
        nodes = (np.arange(m) * box / m)[:, None]
        np.testing.assert_allclose(gr.interp_cic(f, nodes, box), f, atol=1e-14)

    def test_gaussian_spread_is_sampled_gaussian(self):
        m, box, tau = 128, 8.0, 1.5 * 8.0 / 128
        x0 = np.array([[3.1234]])
        vals = gr.spread_gaussian(x0, m, box, tau)
        x = np.arange(m) * box / m
        want = np.exp(-0.5 * ((x - 3.1234) / tau) ** 2) / (math.sqrt(2 * math.pi) * tau)
        np.testing.assert_allclose(vals, want, atol=1e-12)


class TestVpme:
    def test_uniform_steady(self):
        g = uniform(64, 4.0)
        sol = solve_vpme(g, PdeConfig(stable_dt(g, lock=0.01), 0.2))
        np.testing.assert_allclose(sol.final.values, g.values, rtol=1e-12)

    def test_linearized_mode_decay(self):
        m, box, eps, t_end = 128, 2 * np.pi, 1e-4, 0.5
        x = np.arange(m) * box / m
        base = 1.0 / box
        rho0 = GridDensity(base + eps * np.cos(2 * np.pi * x / box), box)
        dt = stable_dt(rho0, lock=t_end / 500)
        sol = solve_vpme(rho0, PdeConfig(dt, t_end))
        amp = 2 * np.abs(np.fft.rfft(sol.final.values)[1]) / m
        rate = 0.5 * (1 + base) * (2 * np.pi / box) ** 2
        assert amp == pytest.approx(eps * math.exp(-rate * t_end), rel=0.02)

    def test_mass_over_many_steps(self):
        rho0 = gaussian_density(64, 8.0, 1, 0.6)
        dt = stable_dt(rho0)
        sol = solve_vpme(rho0, PdeConfig(dt, dt * 10000))
        assert abs(sol.final.mass() - rho0.mass()) < 1e-8
        assert sol.final.values.min() >= 0

    def test_cfl_violation(self):
        rho0 = gaussian_density(64, 8.0, 1, 0.6)
        with pytest.raises(ConfigurationError, match="stability"):
            Solver(rho0, PdeConfig(1.0, 1.0))

    def test_undershoot_raises(self):
        vals = np.zeros(64)
        vals[10] = 64 / 8.0
        rho0 = GridDensity(vals, 8.0)
        dt = stable_dt(rho0)
        with pytest.raises(SchemeError):
            solve_vpme(rho0, PdeConfig(dt, dt * 5, equation="vpme"))

    def test_grid_refinement(self):
        # terminal L1 change under doubling shrinks (second-order evidence)
        box, t_end = 12.8, 0.25
        outs = {}
        for m in (128, 256, 512, 1024):
            rho0 = gaussian_density(m, box, 1, 0.7)
            dt = stable_dt(gaussian_density(1024, box, 1, 0.7), lock=t_end / 50)
            outs[m] = solve_vpme(rho0, PdeConfig(dt, t_end)).final
        diffs = []
        for a, b in ((128, 256), (256, 512), (512, 1024)):
            fine = outs[b].subsample(2)
            diffs.append(np.sum(np.abs(fine.values - outs[a].values)) * outs[a].spacing)
        assert diffs[2] < 4 * diffs[1] and diffs[1] < 4 * diffs[0]
        assert diffs[0] / diffs[1] > 3 and diffs[1] / diffs[2] > 3


class TestIntermediate:
    def test_uniform_steady(self):
        g = uniform(128, 8.0)
        sol = solve_intermediate(g, PdeConfig(stable_dt(g, lock=0.01), 0.1, "intermediate", MollifierSpec(1, 0.3)))
        np.testing.assert_allclose(sol.final.values, g.values, rtol=1e-12)

    def test_heat_kernel_when_interaction_off(self):
        box, m, s0 = 20.0, 512, 1.0
        rho0 = gaussian_density(m, box, 1, s0)
        cfg = PdeConfig(0.01, 1.0, "intermediate", MollifierSpec(1, 0.3), interaction=0.0)
        sol = solve_intermediate(rho0, cfg)
        exact = gaussian_density(m, box, 1, math.sqrt(s0**2 + 1.0))
        assert np.sum(np.abs(sol.final.values - exact.values)) * rho0.spacing < 1e-4

    def test_eta_rate_and_monotone(self):
        box, m, t_end = 12.8, 512, 0.5
        rho0 = gaussian_density(m, box, 1, 1.0)
        ts = tuple(np.linspace(0, t_end, 6))
        dt = stable_dt(rho0, lock=0.1)
        ref = solve_vpme(rho0, PdeConfig(dt, t_end, snapshot_times=ts))
        obs = []
        for eta in (0.4, 0.2, 0.1):
            sol = solve_intermediate(rho0, PdeConfig(dt, t_end, "intermediate", MollifierSpec(1, eta), snapshot_times=ts))
            obs.append((eta, max(np.sum(np.abs(a.values - b.values)) * rho0.spacing for a, b in zip(sol.snapshots, ref.snapshots))))
        assert obs[0][1] > obs[1][1] > obs[2][1]
        assert rate_fit(obs).slope == pytest.approx(2.0, abs=0.4)

    def test_needs_kernel(self):
        with pytest.raises(ConfigurationError):
            PdeConfig(0.1, 1.0, "intermediate")

    def test_resolution(self):
        with pytest.raises(ResolutionError):
            Solver(gaussian_density(64, 12.8, 1, 1.0), PdeConfig(1e-4, 1.0, "intermediate", MollifierSpec(1, 0.4)))


class TestCoulombDrift:
    def test_radial_symmetry_and_mass(self):
        box, m = 6.4, 64
        rho0 = gaussian_density(m, box, 2, 0.6)
        spec = CoulombSpec(2, -1, 0.4)
        dt = stable_dt(rho0, lock=0.01)
        sol = solve_coulomb_drift(rho0, PdeConfig(dt, 0.2, "coulomb_drift", spec))
        v = sol.final.values
        c = m // 2
        centred = np.roll(v, -c, axis=(0, 1))
        refl = np.roll(centred[::-1, :], 1, axis=0)
        assert np.abs(refl - centred).max() < 1e-8
        assert np.abs(v - v.T).max() < 1e-8
        assert abs(sol.final.mass() - rho0.mass()) < 1e-8
        # repulsion spreads mass relative to pure diffusion
        diff = solve_coulomb_drift(rho0, PdeConfig(dt, 0.2, "coulomb_drift", spec, interaction=0.0))
        assert v.max() < diff.final.values.max()

    def test_heat_kernel_when_field_off(self):
        box, m, s0 = 12.8, 128, 1.0
        rho0 = gaussian_density(m, box, 2, s0)
        cfg = PdeConfig(0.01, 1.0, "coulomb_drift", CoulombSpec(2, 1, 0.4), interaction=0.0)
        sol = solve_coulomb_drift(rho0, cfg)
        exact = gaussian_density(m, box, 2, math.sqrt(s0**2 + 1.0))
        assert np.sum(np.abs(sol.final.values - exact.values)) * rho0.cell_volume < 1e-4

    def test_sup_ceiling(self):
        rho0 = gaussian_density(64, 6.4, 2, 0.3)
        cfg = PdeConfig(stable_dt(rho0, lock=0.01), 0.5, "coulomb_drift", CoulombSpec(2, 1, 0.4), sup_ceiling=1.5)
        with pytest.raises(BlowUpError, match="ceiling"):
            solve_coulomb_drift(rho0, cfg)

    def test_sup_history_recorded(self):
        rho0 = gaussian_density(64, 6.4, 2, 0.5)
        cfg = PdeConfig(stable_dt(rho0, lock=0.01), 0.05, "coulomb_drift", CoulombSpec(2, -1, 0.4))
        sol = solve_coulomb_drift(rho0, cfg)
        assert len(sol.sup_history) == sol.steps + 1


class TestMollificationError:
    def test_taylor_rate(self):
        rho = gaussian_density(2048, 20.48, 1, 1.0)
        obs = [(eta, mollification_error(rho, MollifierSpec(1, eta))) for eta in (0.4, 0.2, 0.1, 0.05)]
        assert rate_fit(obs).slope == pytest.approx(2.0, abs=0.2)

    def test_leading_constant(self):
        # V^eta * f - f ~ (eta^2 s^2) f'' for V with variance 2 eta^2 s^2
        rho = gaussian_density(2048, 20.48, 1, 1.0)
        eta = 0.02
        x = np.arange(2048) * 0.01 - 10.24
        third = (3 * x - x**3) * np.exp(-x**2 / 2) / math.sqrt(2 * math.pi)
        assert mollification_error(rho, MollifierSpec(1, eta)) == pytest.approx(eta**2 * np.abs(third).max(), rel=1e-3)


def test_gaussian_density_matches_cdf():
    g = gaussian_density(1024, 20.0, 1, 1.3)
    x = g.axis() - 10.0
    h = g.spacing
    cell = (erf((x + h / 2) / (1.3 * math.sqrt(2))) - erf((x - h / 2) / (1.3 * math.sqrt(2)))) / 2 / h
    assert np.abs(cell - g.values).max() < 1e-3


def test_solution_roundtrip(tmp_path):
    rho0 = gaussian_density(128, 12.8, 1, 1.0)
    cfg = PdeConfig(stable_dt(rho0, lock=0.05), 0.1, "intermediate", MollifierSpec(1, 0.4), snapshot_times=(0.0, 0.05, 0.1))
    sol = solve_intermediate(rho0, cfg)
    path, _ = save_solution(str(tmp_path / "sol.npy"), sol, cfg)
    back, meta = load_solution(path)
    assert meta["equation"] == "intermediate" and meta["kernel"]["bandwidth"] == 0.4
    assert back.times == sol.times
    for a, b in zip(sol.snapshots, back.snapshots):
        np.testing.assert_array_equal(a.values, b.values)
        assert a.time == b.time
