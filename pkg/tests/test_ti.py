import numpy as np
import pytest

from dimermc import system
from dimermc.latent import LatentGrid
from dimermc.ti import (TiConfig, _shift_to_level, constrained_step,
                        lagrange_multiplier, ti_run)


def on_level(params, z, seed=0):
    """Configuration satisfying the constraint, reached by pulling the bond
    from the compact lattice through intermediate levels so the solvent has
    room to yield (a direct jump would stack the dimer onto a lattice
    site)."""
    rng = np.random.default_rng(seed)
    q = _shift_to_level(params, system.lattice_config(params), 0.0)
    for zi in np.linspace(0.0, z, 10)[1:] if z != 0.0 else []:
        q = _shift_to_level(params, q, zi)
        for _ in range(40):
            q = constrained_step(params, q, zi, 1e-4,
                                 rng.standard_normal(np.shape(q)),
                                 max_drift=0.1)
    return _shift_to_level(params, q, z)


class TestConstrainedStep:
    def test_zero_displacement_returns_trial(self, params16):
        q = on_level(params16, 0.4)
        out = constrained_step(params16, q, 0.4, 0.0, np.zeros(32))
        np.testing.assert_allclose(
            system.min_image(out - q, params16.box_len), 0.0, atol=1e-12)

    def test_constraint_contract(self, params16):
        rng = np.random.default_rng(1)
        for z in (-0.15, 0.0, 0.5, 0.9):
            q = on_level(params16, z)
            for _ in range(50):
                q = constrained_step(params16, q, z, 1e-4,
                                     rng.standard_normal(32))
                assert abs(float(system.cv_eval(params16, q).value) - z) \
                    < 1e-10

    def test_batched_constraint(self, params16):
        rng = np.random.default_rng(2)
        q = np.tile(on_level(params16, 0.3), (8, 1))
        for _ in range(30):
            q = constrained_step(params16, q, 0.3, 1e-4,
                                 rng.standard_normal((8, 32)))
        np.testing.assert_allclose(system.cv_eval(params16, q).value, 0.3,
                                   atol=1e-10)

    def test_multiplier_matches_bisection_root(self, params16):
        # the closed form must agree with a bisection solve of the implicit
        # projection equation along the final bond direction
        rng = np.random.default_rng(3)
        z = 0.45
        q = on_level(params16, z)
        gauss = rng.standard_normal(32)
        dt = 1e-4

        grad = system.potential_gradient(params16, q)
        trial = q - grad * dt + np.sqrt(2 * dt / params16.beta) * gauss
        out = constrained_step(params16, q, z, dt, gauss)

        pos_t = trial.reshape(16, 2)
        pos_o = out.reshape(16, 2)
        d_out = system.min_image(pos_o[0] - pos_o[1], params16.box_len)
        direction = d_out / np.linalg.norm(d_out)

        w = params16.w

        def xi_of(lam):
            shift = lam * direction / (2 * w)
            d = system.min_image((pos_t[0] + shift) - (pos_t[1] - shift),
                                 params16.box_len)
            return (np.linalg.norm(d) - params16.r0) / (2 * w)

        lo, hi = -2.0, 2.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if xi_of(mid) < z:
                lo = mid
            else:
                hi = mid
        lam_root = 0.5 * (lo + hi)
        xi_trial = float(system.cv_eval(params16, trial).value)
        closed = float(lagrange_multiplier(params16, z, xi_trial))
        assert closed == pytest.approx(lam_root, abs=1e-10)

    def test_center_of_mass_preserved(self, params16):
        rng = np.random.default_rng(4)
        z = 0.6
        q = on_level(params16, z)
        for _ in range(20):
            gauss = rng.standard_normal(32)
            grad = system.potential_gradient(params16, q)
            trial = q - grad * 1e-4 + np.sqrt(2e-4 / params16.beta) * gauss
            out = constrained_step(params16, q, z, 1e-4, gauss)
            pos_t = trial.reshape(16, 2)
            pos_o = out.reshape(16, 2)
            com_diff = system.min_image(
                (pos_o[0] + pos_o[1]) - (pos_t[0] + pos_t[1]),
                params16.box_len)
            np.testing.assert_allclose(com_diff, 0.0, atol=1e-12)
            # solvent coordinates are exactly the unconstrained move
            np.testing.assert_allclose(
                system.min_image(out[4:] - trial[4:], params16.box_len),
                0.0, atol=1e-12)
            q = out

    def test_collapsed_trial_raises(self, params2):
        q = on_level(params2, 0.0)
        pos = q.reshape(2, 2)
        # noise crafted to land both particles on the same point
        gauss = np.zeros(4)
        delta = system.min_image(pos[0] - pos[1], params2.box_len)
        gauss[0:2] = -delta / np.sqrt(2e-4 / params2.beta) / 2
        gauss[2:4] = delta / np.sqrt(2e-4 / params2.beta) / 2
        grad = system.potential_gradient(params2, q)
        gauss[0:2] += grad[0:2] * 1e-4 / np.sqrt(2e-4 / params2.beta)
        gauss[2:4] += grad[2:4] * 1e-4 / np.sqrt(2e-4 / params2.beta)
        with pytest.raises(system.SingularCvError):
            constrained_step(params2, q, 0.0, 1e-4, gauss)


class TestTiRun:
    def test_two_particle_matches_analytic(self, params2):
        grid = LatentGrid(-0.2, 1.2, 14)
        cfg = TiConfig(grid=grid, dt=2e-4, sim_time_per_level=0.3,
                       n_walkers=2, seed=5)
        res = ti_run(params2, cfg)
        r = 2 * params2.w * grid.centers + params2.r0
        analytic = 2 * params2.w * system.dw_deriv(r, params2) \
            - 2 * params2.w / (params2.beta * r)
        np.testing.assert_allclose(res.mean_force.values, analytic,
                                   atol=1e-9)

    def test_zero_noise_gives_potential_term(self, params2):
        # with the thermal noise off, the remaining mean-force contribution
        # beyond the geometric term is exactly V'(r) dr/dz
        grid = LatentGrid(0.0, 1.0, 5)
        z = grid.centers[2]
        q = _shift_to_level(params2, system.lattice_config(params2), z)
        for _ in range(40):
            q = constrained_step(params2, q, z, 1e-4, np.zeros(4))
        from dimermc.latent import local_mean_force
        f = float(local_mean_force(params2, q))
        r = 2 * params2.w * z + params2.r0
        geometric = -2 * params2.w / (params2.beta * r)
        assert f - geometric == pytest.approx(
            2 * params2.w * float(system.dw_deriv(r, params2)), abs=1e-10)

    def test_free_energy_shape(self, params16):
        grid = LatentGrid(-0.2, 1.225, 12)
        cfg = TiConfig(grid=grid, dt=1e-4, sim_time_per_level=0.12,
                       n_walkers=8, seed=6, max_drift=0.1)
        res = ti_run(params16, cfg)
        f = res.free_energy
        assert f.values.min() == 0.0
        assert np.all(np.isfinite(f.values))
        assert f(np.float64(0.0)) < f(np.float64(0.55))
        assert res.std_errors.shape == (12,)
        assert np.all(res.std_errors >= 0)

    def test_convergence_self_check(self, params2):
        # doubling the simulated time per level moves each estimate by less
        # than 3 combined standard errors (trivially true for the
        # two-particle system whose estimator variance vanishes)
        grid = LatentGrid(0.0, 1.0, 6)
        r1 = ti_run(params2, TiConfig(grid=grid, dt=2e-4,
                                      sim_time_per_level=0.2, seed=7))
        r2 = ti_run(params2, TiConfig(grid=grid, dt=2e-4,
                                      sim_time_per_level=0.4, seed=8))
        tol = 3 * np.sqrt(r1.std_errors ** 2 + r2.std_errors ** 2) + 1e-9
        assert np.all(np.abs(r1.mean_force.values - r2.mean_force.values)
                      <= tol)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TiConfig(dt=-1.0)
        with pytest.raises(ValueError):
            TiConfig(burn_frac=1.5)
