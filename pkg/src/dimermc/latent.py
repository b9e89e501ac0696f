"""Latent-space machinery: binning, conditional-average estimators and
piecewise-constant profiles for the free energy, mean force, effective drift
and effective diffusion of a scalar collective variable."""

from dataclasses import dataclass, field

import numpy as np

OUTSIDE = -1


@dataclass(frozen=True)
class LatentGrid:
    """Uniform binning of the CV range [z_min, z_max) into n_bins bins.

    Bins are left-closed, right-open; z_max itself maps outside."""

    z_min: float = -0.2
    z_max: float = 1.225
    n_bins: int = 100

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be below z_max")
        if self.n_bins < 1:
            raise ValueError("need at least one bin")

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return self.z_min + (np.arange(self.n_bins) + 0.5) * self.dz

    def bin_index(self, z):
        """Bin index of z, or OUTSIDE (-1) when z is not in [z_min, z_max)."""
        z = np.asarray(z, dtype=float)
        raw = np.floor((z - self.z_min) / self.dz).astype(np.int64)
        return np.where((raw >= 0) & (raw < self.n_bins), raw, OUTSIDE)


@dataclass
class Profile:
    """Piecewise-constant function of the CV on a LatentGrid.

    Outside the grid the profile either continues its boundary value
    (outside="edge", used for the free energy) or takes a fixed constant
    (outside=float, e.g. 0 for the mean force, 1 for the effective
    diffusion)."""

    grid: LatentGrid
    values: np.ndarray
    outside: object = "edge"
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_bins,):
            raise ValueError("values must have one entry per bin")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("profile values must be finite")

    def __call__(self, z):
        idx = self.grid.bin_index(z)
        inside = idx != OUTSIDE
        clipped = np.clip(
            np.floor((np.asarray(z, dtype=float) - self.grid.z_min) / self.grid.dz),
            0, self.grid.n_bins - 1).astype(np.int64)
        vals = self.values[clipped]
        if self.outside == "edge":
            return vals
        return np.where(inside, vals, float(self.outside))


@dataclass
class BinnedEstimator:
    """Running conditional-mean estimator over a LatentGrid.

    Keeps per-bin sums and visit counts (memory O(n_bins), not O(samples)).
    Bins with fewer than n_min visits, and values of z outside the grid,
    evaluate to default_value.  batch_shape prepends independent copies so a
    batch of chains can each learn its own estimate."""

    grid: LatentGrid
    default_value: float = 0.0
    n_min: int = 1
    batch_shape: tuple = ()
    sums: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sums = np.zeros((*self.batch_shape, self.grid.n_bins))
        self.counts = np.zeros((*self.batch_shape, self.grid.n_bins), dtype=np.int64)

    def add(self, z, value):
        """Accumulate one observation per (batched) chain; outside-grid
        samples are dropped."""
        idx = self.grid.bin_index(z)
        inside = idx != OUTSIDE
        if self.batch_shape:
            chain = np.nonzero(inside)
            bins = idx[inside]
            np.add.at(self.sums, (*chain, bins), np.asarray(value)[inside])
            np.add.at(self.counts, (*chain, bins), 1)
        elif inside:
            self.sums[..., idx] += value
            self.counts[..., idx] += 1

    def means(self):
        """Per-bin estimates with default_value where data is insufficient."""
        ok = self.counts >= self.n_min
        with np.errstate(invalid="ignore", divide="ignore"):
            m = self.sums / self.counts
        return np.where(ok, m, self.default_value)

    def evaluate(self, z):
        idx = self.grid.bin_index(z)
        inside = idx != OUTSIDE
        clipped = np.where(inside, idx, 0)
        m = self.means()
        vals = np.take_along_axis(m, clipped[..., None], axis=-1)[..., 0] \
            if self.batch_shape else m[clipped]
        return np.where(inside, vals, self.default_value)

    def to_profile(self, outside=None) -> Profile:
        if self.batch_shape:
            raise ValueError("snapshot of a batched estimator is per chain")
        out = self.default_value if outside is None else outside
        return Profile(self.grid, self.means(), outside=out,
                       counts=self.counts.copy())


def local_mean_force(params, q, cv=None):
    """Pointwise mean-force integrand f whose conditional average is F'.

    f = grad V . grad xi / |grad xi|^2 - (1/beta) div(grad xi / |grad xi|^2);
    for CVs with constant gradient norm the divergence term reduces to the
    Laplacian over the squared norm."""
    from .system import cv_eval, potential_gradient
    if cv is None:
        cv = cv_eval(params, q)
    grad_v = potential_gradient(params, q)
    pot = np.sum(grad_v * cv.grad, axis=-1) / cv.grad_norm_sq
    return pot - cv_divergence_term(cv) / params.beta


def cv_divergence_term(cv):
    """div(grad xi / |grad xi|^2) evaluated from a CvEval."""
    lead = cv.laplacian / cv.grad_norm_sq
    if cv.const_grad_norm:
        return lead
    corr = 2.0 * np.sum(cv.grad * cv.hess_grad(), axis=-1) / cv.grad_norm_sq ** 2
    return lead - corr


def effective_drift_integrand(params, q, cv=None):
    """Integrand whose conditional average is the effective drift b."""
    from .system import cv_eval, potential_gradient
    if cv is None:
        cv = cv_eval(params, q)
    grad_v = potential_gradient(params, q)
    return -np.sum(grad_v * cv.grad, axis=-1) + cv.laplacian / params.beta


def effective_noise_integrand(params, q, cv=None):
    """Integrand whose conditional average is the effective diffusion."""
    from .system import cv_eval
    if cv is None:
        cv = cv_eval(params, q)
    return np.broadcast_to(cv.grad_norm_sq, np.shape(cv.value)).copy() \
        if np.ndim(cv.value) else np.float64(cv.grad_norm_sq)


def integrate_mean_force(mean_force: Profile) -> Profile:
    """Free energy as the bin-wise cumulative integral of the mean force,
    shifted so its minimum over the grid is exactly zero and extended as a
    constant outside the grid."""
    grid = mean_force.grid
    f = np.cumsum(mean_force.values) * grid.dz
    f -= f.min()
    counts = None if mean_force.counts is None else mean_force.counts.copy()
    return Profile(grid, f, outside="edge", counts=counts)


def effective_sde_step(z, spec, dt, noise):
    """Euler-Maruyama step of the 1D effective dynamics
    dz = b_a dt + sqrt(2/beta) sigma_a dB with b_a = a b + a' sigma^2 / beta
    and sigma_a^2 = a sigma^2; spec is a DiffusionSpec (kappa is not
    involved, only the latent functions)."""
    a, a_prime = spec.a_aprime(z)
    s2 = spec.s2(z)
    b_a = a * spec.b(z) + a_prime * s2 / spec.beta
    sigma_a = np.sqrt(a * s2)
    return z + b_a * dt + np.sqrt(2.0 * dt / spec.beta) * sigma_a * noise
