import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dimermc import system
from dimermc.diffusion import DiffusionSpec, SmoothTable
from dimermc.latent import (OUTSIDE, BinnedEstimator, LatentGrid, Profile,
                            cv_divergence_term, effective_drift_integrand,
                            effective_noise_integrand, effective_sde_step,
                            integrate_mean_force, local_mean_force)

from conftest import central_diff


class TestGrid:
    def test_bin_edges(self):
        g = LatentGrid(-0.2, 1.225, 100)
        assert g.bin_index(-0.2) == 0
        assert g.bin_index(-0.2 + 1.5 * g.dz) == 1
        assert g.bin_index(1.325) == OUTSIDE
        assert g.bin_index(1.225) == OUTSIDE
        assert g.bin_index(1.225 - 1e-12) == g.n_bins - 1

    def test_invalid(self):
        with pytest.raises(ValueError):
            LatentGrid(1.0, 0.0, 10)
        with pytest.raises(ValueError):
            LatentGrid(0.0, 1.0, 0)

    @given(st.floats(-5, 5))
    @settings(max_examples=200, deadline=None)
    def test_floor_formula(self, z):
        g = LatentGrid(-1.0, 2.0, 30)
        idx = int(g.bin_index(z))
        if -1.0 <= z < 2.0:
            assert idx == int(np.floor((z + 1.0) / g.dz))
            assert g.z_min + idx * g.dz <= z < g.z_min + (idx + 1) * g.dz \
                or z == pytest.approx(g.z_min + idx * g.dz)
        else:
            assert idx == OUTSIDE


class TestEstimator:
    def test_single_sample(self):
        est = BinnedEstimator(LatentGrid(0, 1, 4), default_value=0.0)
        est.add(0.1, 3.0)
        assert est.means()[0] == 3.0

    def test_mean_of_three(self):
        est = BinnedEstimator(LatentGrid(0, 1, 4))
        for v in (1.0, 2.0, 3.0):
            est.add(0.1, v)
        assert est.means()[0] == pytest.approx(2.0)

    def test_below_threshold_uses_default(self):
        est = BinnedEstimator(LatentGrid(0, 1, 4), default_value=7.5, n_min=3)
        est.add(0.1, 100.0)
        assert est.evaluate(0.1) == 7.5
        est.add(0.1, 100.0)
        est.add(0.1, 100.0)
        assert est.evaluate(0.1) == pytest.approx(100.0)

    def test_outside_is_dropped(self):
        est = BinnedEstimator(LatentGrid(0, 1, 4), default_value=-1.0)
        est.add(2.0, 5.0)
        assert est.counts.sum() == 0
        assert est.evaluate(2.0) == -1.0

    @given(st.lists(st.tuples(st.floats(0, 0.999), st.floats(-10, 10)),
                    min_size=1, max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_mean_equals_sum_over_count(self, samples):
        est = BinnedEstimator(LatentGrid(0, 1, 5))
        for z, v in samples:
            est.add(z, v)
        m = est.means()
        for b in range(5):
            if est.counts[b]:
                assert m[b] == pytest.approx(est.sums[b] / est.counts[b])

    def test_batched_accumulation(self):
        est = BinnedEstimator(LatentGrid(0, 1, 4), batch_shape=(3,))
        est.add(np.array([0.1, 0.6, 2.0]), np.array([1.0, 2.0, 9.0]))
        assert est.counts[0, 0] == 1 and est.counts[1, 2] == 1
        assert est.counts.sum() == 2  # outside sample dropped
        np.testing.assert_allclose(est.evaluate(np.array([0.1, 0.6, 0.6])),
                                   [1.0, 2.0, 0.0])


class TestLocalMeanForce:
    def test_two_particle_radial_formula(self, params2):
        # on a two-particle system the integrand depends only on the bond
        # length: f = 2w V'(r) - 2w/(beta r)
        rng = np.random.default_rng(0)
        for _ in range(5):
            r = rng.uniform(0.9, 2.6)
            th = rng.uniform(0, 2 * np.pi)
            q = np.array([3.0, 3.0, 3.0 + r * np.cos(th),
                          3.0 + r * np.sin(th)])
            w = params2.w
            expected = 2 * w * system.dw_deriv(r, params2) \
                - 2 * w / (params2.beta * r)
            assert local_mean_force(params2, q) == pytest.approx(expected,
                                                                 abs=1e-8)

    def test_divergence_term_matches_fd(self, params16, configs16):
        for q in configs16[:4]:
            cv = system.cv_eval(params16, q)
            div = np.zeros(())
            for i in range(32):
                qp = q.copy()
                qm = q.copy()
                qp[i] += 1e-6
                qm[i] -= 1e-6
                gp = system.cv_eval(params16, qp)
                gm = system.cv_eval(params16, qm)
                div = div + (gp.grad[i] / gp.grad_norm_sq
                             - gm.grad[i] / gm.grad_norm_sq) / 2e-6
            assert cv_divergence_term(cv) == pytest.approx(float(div),
                                                           rel=1e-5)

    def test_fast_path_equals_general(self, params16, configs16):
        cv = system.cv_eval(params16, configs16)
        fast = cv_divergence_term(cv)
        general = cv.laplacian / cv.grad_norm_sq \
            - 2.0 * np.sum(cv.grad * cv.hess_dot(cv.grad), axis=-1) \
            / cv.grad_norm_sq ** 2
        np.testing.assert_allclose(fast, general, atol=1e-10)


class TestIntegrands:
    def test_noise_integrand_constant(self, params16, configs16):
        vals = effective_noise_integrand(params16, configs16)
        np.testing.assert_allclose(vals, 1.0 / (2 * params16.w ** 2),
                                   rtol=1e-12)

    def test_drift_opposes_force_for_unit_gradient(self):
        # algebraic identity checked on synthetic CV data with |grad xi|=1
        rng = np.random.default_rng(3)
        grad_v = rng.standard_normal(8)
        grad_xi = rng.standard_normal(8)
        grad_xi /= np.linalg.norm(grad_xi)
        lap = 0.37
        beta = 1.0
        f = np.dot(grad_v, grad_xi) / 1.0 - lap / beta
        drift = -np.dot(grad_v, grad_xi) + lap / beta
        assert drift == pytest.approx(-f)

    def test_drift_integrand_fd(self, params16, configs16):
        q = configs16[0]
        val = effective_drift_integrand(params16, q)
        grad_v = system.potential_gradient(params16, q)
        cv = system.cv_eval(params16, q)
        lap_fd = 0.0
        for i in range(32):
            qp = q.copy()
            qm = q.copy()
            qp[i] += 1e-5
            qm[i] -= 1e-5
            lap_fd += (system.cv_eval(params16, qp).grad[i]
                       - system.cv_eval(params16, qm).grad[i]) / 2e-5
        expected = -np.dot(grad_v, cv.grad) + lap_fd / params16.beta
        assert val == pytest.approx(expected, rel=1e-6)


class TestIntegrateMeanForce:
    def test_zero_force(self):
        g = LatentGrid(0, 1, 10)
        f = integrate_mean_force(Profile(g, np.zeros(10), outside=0.0))
        np.testing.assert_array_equal(f.values, 0.0)

    def test_linear_ramp(self):
        g = LatentGrid(0, 1, 20)
        c = 2.5
        f = integrate_mean_force(Profile(g, np.full(20, c), outside=0.0))
        expected = c * (np.arange(1, 21) * g.dz)
        expected -= expected.min()
        np.testing.assert_allclose(f.values, expected, rtol=1e-12)
        assert f.values.min() == 0.0

    def test_against_trapezoid_quadrature(self):
        g = LatentGrid(-0.2, 1.225, 100)
        z = g.centers
        fp = np.sin(3 * z) + 0.5 * z
        prof = integrate_mean_force(Profile(g, fp, outside=0.0))
        fine = np.linspace(g.z_min, g.z_max, 20001)
        vals = np.interp(fine, z, fp)
        ref = np.concatenate([[0.0], np.cumsum(
            0.5 * (vals[1:] + vals[:-1]) * np.diff(fine))])
        ref_at = np.interp(z, fine, ref)
        ref_at -= ref_at.min()
        assert np.max(np.abs(prof.values - ref_at)) < g.dz * np.max(np.abs(fp))

    def test_min_is_exactly_zero(self):
        g = LatentGrid(0, 1, 17)
        rng = np.random.default_rng(2)
        prof = integrate_mean_force(Profile(g, rng.standard_normal(17),
                                            outside=0.0))
        assert prof.values.min() == 0.0


class TestProfile:
    def test_outside_policies(self):
        g = LatentGrid(0, 1, 4)
        vals = np.array([1.0, 2.0, 3.0, 4.0])
        edge = Profile(g, vals, outside="edge")
        assert edge(np.float64(-5.0)) == 1.0
        assert edge(np.float64(5.0)) == 4.0
        const = Profile(g, vals, outside=0.5)
        assert const(np.float64(5.0)) == 0.5
        assert const(np.float64(0.3)) == 2.0

    def test_rejects_nonfinite(self):
        g = LatentGrid(0, 1, 2)
        with pytest.raises(ValueError):
            Profile(g, np.array([1.0, np.inf]))


class TestEffectiveSde:
    def _spec(self, alpha, c):
        table = SmoothTable(
            F=lambda z: c * np.asarray(z) ** 2,
            Fp=lambda z: 2 * c * np.asarray(z),
            b=lambda z: -2 * c * np.asarray(z),
            s2=lambda z: np.ones_like(np.asarray(z, dtype=float)))
        return DiffusionSpec(alpha=alpha, beta=1.0, kappa=1.0, table=table)

    def test_identity_map_reduces_to_plain_dynamics(self):
        spec = self._spec(0.0, 1.0)
        z = np.float64(0.4)
        out = effective_sde_step(z, spec, 1e-3, np.float64(0.7))
        expected = z + (-0.8) * 1e-3 + np.sqrt(2e-3) * 0.7
        assert out == pytest.approx(expected, rel=1e-12)

    def test_no_noise_no_drift(self):
        spec = self._spec(0.7, 1.0)
        out = effective_sde_step(np.float64(0.0), spec, 1e-3, np.float64(0.0))
        assert out == pytest.approx(0.0, abs=1e-15)

    def test_quadratic_stationary_variance(self):
        # Euler-Maruyama on a quadratic free energy is an AR(1) process with
        # known stationary variance; 3 sigma band via the AR(1) ESS.
        c = 1.0
        dt = 1e-3
        spec = self._spec(0.0, c)
        rng = np.random.default_rng(11)
        n_chains, n_steps = 256, 4000
        target_var = 1.0 / (2 * c) / (1.0 - c * dt)
        z = rng.standard_normal(n_chains) * np.sqrt(target_var)
        vals = []
        for _ in range(n_steps):
            z = effective_sde_step(z, spec, dt, rng.standard_normal(n_chains))
            vals.append(z.copy())
        v = np.concatenate(vals)
        rho = 1.0 - 2 * c * dt
        ess = v.size * (1 - rho ** 2) / (1 + rho ** 2)
        se = target_var * np.sqrt(2.0 / ess)
        assert abs(v.var() - target_var) < 3 * se
