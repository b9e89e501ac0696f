import numpy as np
import pytest

from dimermc import system


@pytest.fixture(scope="session")
def params16():
    return system.SystemParams.benchmark()


@pytest.fixture(scope="session")
def params2():
    return system.SystemParams.dimer_only(box_len=12.0)


def make_configs(params, n, seed=1234, equil_steps=250, relax_steps=80):
    """Physically sensible configurations spanning the CV range.

    Chains are equilibrated with plain MALA, the dimer bond is then set to
    a spread of lengths, and a short relaxation lets the solvent yield so
    no pair is left overlapping."""
    from dimermc.diffusion import DiffusionSpec
    from dimermc.mala import MalaSampler

    rng = np.random.default_rng(seed)
    base = np.tile(system.lattice_config(params), (n, 1))
    base = system.wrap_coords(base + 0.01 * rng.standard_normal(base.shape),
                              params.box_len)
    sampler = MalaSampler(params, DiffusionSpec.identity(params.beta), 2.5e-3)
    state = sampler.init_state(base)
    for _ in range(equil_steps):
        state, _ = sampler.step(state, rng)

    # pull the bond to its target length in small increments, letting the
    # solvent yield in between so no overlap survives; targets stay inside
    # the minimum-image chart (below half the box edge)
    z_cap = min(1.1, (0.95 * 0.5 * params.box_len - params.r0)
                / (2.0 * params.w))
    target = params.r0 + 2.0 * params.w * rng.uniform(-0.12, z_cap, size=n)
    slow = MalaSampler(params, DiffusionSpec.identity(params.beta), 1e-3)
    n_stages = 8
    for stage in range(n_stages):
        q = state.q.copy()
        pos = q.reshape(n, -1, 2)
        delta = system.min_image(pos[:, 0] - pos[:, 1], params.box_len)
        r = np.linalg.norm(delta, axis=-1)
        step_r = r + (target - r) / (n_stages - stage)
        scale = (step_r / r)[:, None]
        center = pos[:, 1] + 0.5 * delta
        pos[:, 0] = center + 0.5 * scale * delta
        pos[:, 1] = center - 0.5 * scale * delta
        q = system.wrap_coords(pos.reshape(n, -1), params.box_len)
        state = slow.init_state(q)
        for _ in range(relax_steps // n_stages + 5):
            state, _ = slow.step(state, rng)
    # fine-step polish so any remaining tight contact settles
    fine = MalaSampler(params, DiffusionSpec.identity(params.beta), 5e-5)
    state = fine.init_state(state.q)
    for _ in range(60):
        state, _ = fine.step(state, rng)
    return state.q


@pytest.fixture(scope="session")
def configs16(params16):
    return make_configs(params16, 100)


def central_diff(f, x, h=1e-6):
    """Componentwise central finite differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (f(xp) - f(xm)) / (2.0 * h)
    return out
