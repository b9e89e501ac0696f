"""Metropolis-adjusted Langevin sampling with the CV-modulated diffusion.

Both samplers operate on batches of independent chains: every state array
carries an optional leading batch axis, and one call to step() advances all
chains with vectorized numpy work.  A single chain is the degenerate batch
of shape ()."""

from dataclasses import dataclass

import numpy as np

from . import system
from ._util import merge_cv as _merge_cv
from ._util import where_lanes as _where
from .diffusion import (DiffusionEval, DiffusionSpec, GridTable,
                        eval_diffusion, kappa_alpha)
from .latent import BinnedEstimator, LatentGrid, cv_divergence_term


@dataclass
class MalaState:
    """Current configuration with every quantity the proposal needs cached."""

    q: np.ndarray
    energy: np.ndarray
    grad: np.ndarray
    cv: object
    diff: DiffusionEval
    n_steps: int = 0
    n_accepted: object = 0


class MalaSampler:
    """MALA over the overdamped dynamics preconditioned by the diffusion.

    The proposal is one Euler-Maruyama step of
    dq = (-D grad V + div D / beta) dt + sqrt(2/beta) D^(1/2) dW,
    accepted or rejected by Metropolis-Hastings under the exact Gaussian
    transition density of the scheme."""

    def __init__(self, params: system.SystemParams, spec: DiffusionSpec,
                 dt: float):
        self.params = params
        self.spec = spec
        self.dt = dt

    def init_state(self, q) -> MalaState:
        q = system.wrap_coords(np.asarray(q, dtype=float), self.params.box_len)
        energy, grad = system.energy_and_gradient(self.params, q)
        cv = system.cv_eval(self.params, q)
        diff = eval_diffusion(self.spec, self.params.dim, cv)
        acc = np.zeros(np.shape(energy), dtype=np.int64) if np.ndim(energy) else 0
        return MalaState(q=q, energy=energy, grad=grad, cv=cv, diff=diff,
                         n_accepted=acc)

    def proposal_mean(self, state: MalaState):
        drift = -state.diff.dot(state.grad) + state.diff.divergence() / self.params.beta
        return state.q + self.dt * drift

    def propose(self, state: MalaState, gauss):
        """Proposal configuration and the mean it was drawn around."""
        mu = self.proposal_mean(state)
        noise = np.sqrt(2.0 * self.dt / self.params.beta) * state.diff.sqrt_dot(gauss)
        return system.wrap_coords(mu + noise, self.params.box_len), mu

    def log_transition(self, state: MalaState, q_to, mu=None):
        """Log density of moving from state.q to q_to in one proposal.

        The torus Gaussian is approximated by its principal image, so the
        displacement from the mean uses the minimum-image convention."""
        if mu is None:
            mu = self.proposal_mean(state)
        delta = system.min_image(q_to - mu, self.params.box_len)
        quad = np.sum(delta * state.diff.inv_dot(delta), axis=-1)
        d = self.params.dim
        const = -0.5 * d * np.log(4.0 * np.pi * self.dt / self.params.beta)
        return const - 0.5 * state.diff.log_det \
            - self.params.beta / (4.0 * self.dt) * quad

    def log_ratio(self, state: MalaState, prop: MalaState, mu_fwd):
        log_t_fwd = self.log_transition(state, prop.q, mu_fwd)
        log_t_rev = self.log_transition(prop, state.q)
        with np.errstate(over="ignore", invalid="ignore"):
            return (-self.params.beta * (prop.energy - state.energy)
                    + log_t_rev - log_t_fwd)

    def step(self, state: MalaState, rng):
        gauss = rng.standard_normal(np.shape(state.q))
        q_prop, mu = self.propose(state, gauss)
        prop = self.init_state(q_prop)
        log_r = self.log_ratio(state, prop, mu)
        u = rng.uniform(size=np.shape(state.energy))
        with np.errstate(invalid="ignore"):
            accepted = np.log(u) <= log_r
        accepted = np.where(np.isnan(log_r), False, accepted)

        new = MalaState(
            q=_where(accepted, prop.q, state.q),
            energy=_where(accepted, prop.energy, state.energy),
            grad=_where(accepted, prop.grad, state.grad),
            cv=_merge_cv(accepted, prop.cv, state.cv),
            diff=None,
            n_steps=state.n_steps + 1,
            n_accepted=state.n_accepted + accepted.astype(np.int64)
            if np.ndim(accepted) else state.n_accepted + int(accepted))
        new.diff = DiffusionEval(
            a=_where(accepted, prop.diff.a, state.diff.a),
            a_prime=_where(accepted, prop.diff.a_prime, state.diff.a_prime),
            kappa=state.diff.kappa, cv=new.cv, dim=self.params.dim)
        return new, {"accepted": accepted, "log_ratio": log_r}


class AdaptiveMalaSampler:
    """MALA whose diffusion is learned on the fly.

    The chain accumulates, at every step, the local mean force, the
    effective-drift integrand and the squared CV gradient norm into binned
    estimators.  Every n_update steps the published piecewise profiles (and
    the free energy obtained by integrating the mean force, plus the
    normalization constant) are refreshed atomically; between refreshes the
    chain runs plain MALA on the frozen snapshot, so the sampling is only
    approximately unbiased while learning is active.  freeze_after stops
    the learning permanently after that many steps."""

    def __init__(self, params: system.SystemParams, alpha: float, dt: float,
                 grid: LatentGrid | None = None, n_min: int = 100,
                 n_update: int = 20, sigma_unit: bool = True,
                 freeze_after: int | None = None):
        self.params = params
        self.alpha = alpha
        self.dt = dt
        self.grid = grid if grid is not None else LatentGrid()
        self.n_min = n_min
        self.n_update = n_update
        self.sigma_unit = sigma_unit
        self.freeze_after = freeze_after
        self._core = None
        self._est_f = None
        self._est_b = None
        self._est_s2 = None

    @property
    def spec(self) -> DiffusionSpec:
        return self._core.spec

    def init_state(self, q) -> MalaState:
        q = np.asarray(q, dtype=float)
        batch = np.shape(q)[:-1]
        nz = self.grid.n_bins
        table = GridTable(self.grid,
                          f_vals=np.zeros((*batch, nz)),
                          fp_vals=np.zeros((*batch, nz)),
                          b_vals=np.zeros((*batch, nz)),
                          s2_vals=np.ones((*batch, nz)))
        kappa = np.ones(batch) if batch else 1.0
        spec = DiffusionSpec(alpha=self.alpha, beta=self.params.beta,
                             kappa=kappa, table=table,
                             sigma_unit=self.sigma_unit)
        self._core = MalaSampler(self.params, spec, self.dt)
        self._est_f = BinnedEstimator(self.grid, 0.0, self.n_min, batch)
        self._est_b = BinnedEstimator(self.grid, 0.0, self.n_min, batch)
        self._est_s2 = BinnedEstimator(self.grid, 1.0, self.n_min, batch)
        return self._core.init_state(q)

    def _accumulate(self, state: MalaState):
        cv = state.cv
        dotv = np.sum(state.grad * cv.grad, axis=-1)
        f = dotv / cv.grad_norm_sq - cv_divergence_term(cv) / self.params.beta
        b_int = -dotv + cv.laplacian / self.params.beta
        z = cv.value
        self._est_f.add(z, f)
        self._est_b.add(z, b_int)
        self._est_s2.add(z, np.broadcast_to(cv.grad_norm_sq, np.shape(z)))

    def _refresh(self):
        table = self.spec.table
        table.fp_vals = self._est_f.means()
        table.b_vals = self._est_b.means()
        table.s2_vals = self._est_s2.means()
        f = np.cumsum(table.fp_vals, axis=-1) * self.grid.dz
        table.f_vals = f - f.min(axis=-1, keepdims=True)
        self.spec.kappa = kappa_alpha(self.spec, self.params.dim, self.grid)

    def step(self, state: MalaState, rng):
        new, info = self._core.step(state, rng)
        self._accumulate(new)
        learning = self.freeze_after is None or new.n_steps <= self.freeze_after
        if learning and new.n_steps % self.n_update == 0:
            self._refresh()
            # cached diffusion factors must match the new snapshot
            new.diff = eval_diffusion(self.spec, self.params.dim, new.cv)
        return new, info

    def snapshot_profiles(self):
        """Published per-bin learned values (mean force, free energy,
        effective drift, effective diffusion) and their visit counts."""
        table = self.spec.table
        return {"mean_force": table.fp_vals.copy(),
                "free_energy": table.f_vals.copy(),
                "eff_drift": table.b_vals.copy(),
                "eff_diff": table.s2_vals.copy(),
                "counts": self._est_f.counts.copy(),
                "kappa": np.array(self.spec.kappa, copy=True)}
