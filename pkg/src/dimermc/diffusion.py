"""CV-modulated diffusion family.

The diffusion matrix is kappa * (Pperp + a(z) P) where P projects onto the
CV gradient direction and a(z) = exp(alpha * beta * F(z)) / sigma^2(z)
amplifies motion along the CV according to the free energy F.  Because the
matrix is identity plus a rank-one update, its square root, inverse,
determinant and divergence are all available in closed form, and every
matrix-vector product costs O(d)."""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .latent import LatentGrid, Profile, OUTSIDE

# exp() overflows near 709; refuse a bit earlier so callers can reduce alpha
EXP_GUARD = 700.0


class DiffusionOverflowError(FloatingPointError):
    """The exponent alpha*beta*F(z) is too large to evaluate the diffusion."""


@dataclass
class GridTable:
    """Piecewise-constant latent functions backing the diffusion.

    Value arrays may carry leading batch axes (one learned table per chain).
    Outside the grid the free energy continues its boundary value while the
    mean force and effective drift fall back to 0 and the effective
    diffusion to 1, so the diffusion is constant there."""

    grid: LatentGrid
    f_vals: np.ndarray
    fp_vals: np.ndarray
    b_vals: np.ndarray
    s2_vals: np.ndarray

    def _lookup(self, vals, z, outside_value):
        idx = self.grid.bin_index(z)
        inside = idx != OUTSIDE
        clipped = np.where(inside, idx, 0)
        if vals.ndim == 1:
            picked = vals[clipped]
        else:
            picked = np.take_along_axis(vals, clipped[..., None], axis=-1)[..., 0]
        if outside_value is None:  # continuous boundary extension
            edge = np.where(np.asarray(z) < self.grid.z_min,
                            vals[..., 0], vals[..., -1])
            return np.where(inside, picked, edge)
        return np.where(inside, picked, outside_value)

    def F(self, z):
        return self._lookup(self.f_vals, z, None)

    def Fp(self, z):
        return self._lookup(self.fp_vals, z, 0.0)

    def b(self, z):
        return self._lookup(self.b_vals, z, 0.0)

    def s2(self, z):
        return self._lookup(self.s2_vals, z, 1.0)


@dataclass
class SmoothTable:
    """Latent functions given as smooth callables; used by finite-difference
    oracles and wherever an analytic free energy is available."""

    F: Callable
    Fp: Callable
    b: Callable
    s2: Callable


@dataclass
class DiffusionSpec:
    """Frozen description of one member of the diffusion family.

    sigma_unit=True adopts the convention sigma = 1 (the effective-diffusion
    profile is ignored and a' = alpha*beta*F'*a); sigma_unit=False uses the
    learned sigma^2 and effective drift b via
    a'(z) = beta * exp(alpha*beta*F) / sigma^4 * ((alpha-1)*sigma^2*F' - b).
    free_energy_offset shifts F inside the exponent only, exposing the
    additive-constant degree of freedom (default: F already has min 0)."""

    alpha: float
    beta: float
    kappa: object = 1.0
    table: object = None
    sigma_unit: bool = True
    free_energy_offset: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.kappa) <= 0):
            raise ValueError("kappa must be strictly positive")

    @classmethod
    def identity(cls, beta: float) -> "DiffusionSpec":
        """alpha = 0, sigma = 1, kappa = 1: the constant identity diffusion."""
        return cls(alpha=0.0, beta=beta, kappa=1.0,
                   table=SmoothTable(F=np.zeros_like, Fp=np.zeros_like,
                                     b=np.zeros_like, s2=np.ones_like))

    @classmethod
    def from_profiles(cls, alpha, beta, free_energy: Profile,
                      mean_force: Profile, eff_drift: Profile | None = None,
                      eff_diff: Profile | None = None, dim: int | None = None,
                      sigma_unit: bool = True, kappa=None) -> "DiffusionSpec":
        """Bundle profiles sharing one grid; kappa is normalized from the
        free energy when a dimension is given and kappa is not supplied."""
        grid = free_energy.grid
        for p in (mean_force, eff_drift, eff_diff):
            if p is not None and p.grid != grid:
                raise ValueError("profiles must share one grid")
        b_vals = eff_drift.values if eff_drift is not None else -mean_force.values
        s2_vals = eff_diff.values if eff_diff is not None \
            else np.ones(grid.n_bins)
        table = GridTable(grid, free_energy.values.copy(),
                          mean_force.values.copy(), b_vals.copy(),
                          s2_vals.copy())
        spec = cls(alpha=float(alpha), beta=float(beta), table=table,
                   sigma_unit=sigma_unit)
        if kappa is not None:
            spec.kappa = kappa
        elif dim is not None:
            spec.kappa = kappa_alpha(spec, dim, grid)
        return spec

    def _exponent(self, z):
        x = self.alpha * self.beta * (self.table.F(z) + self.free_energy_offset)
        xm = np.max(x) if np.ndim(x) else x
        if not xm <= EXP_GUARD:  # also catches NaN
            raise DiffusionOverflowError(
                "alpha*beta*F exceeds the exponential range; reduce alpha "
                "or cap the free energy")
        return x

    def a(self, z):
        """CV-direction amplification a(z) = exp(alpha beta F) / sigma^2."""
        e = np.exp(self._exponent(z))
        return e if self.sigma_unit else e / self.table.s2(z)

    def a_aprime(self, z):
        """a(z) together with its derivative a'(z)."""
        e = np.exp(self._exponent(z))
        if self.sigma_unit:
            a = e
            ap = self.alpha * self.beta * self.table.Fp(z) * a
        else:
            s2 = self.table.s2(z)
            a = e / s2
            ap = self.beta * e / s2 ** 2 * (
                (self.alpha - 1.0) * s2 * self.table.Fp(z) - self.table.b(z))
        return a, ap

    def a_aprime_guarded(self, z):
        """a and a' with a per-lane validity mask instead of raising.

        Implicit solvers evaluate the diffusion at trial configurations
        that may have diverged; such lanes must fail individually rather
        than abort the whole batch.  Invalid lanes get a=1, a'=0."""
        x = self.alpha * self.beta * (self.table.F(z)
                                      + self.free_energy_offset)
        bad = ~(np.abs(x) <= EXP_GUARD)
        x = np.where(bad, 0.0, x)
        e = np.exp(x)
        if self.sigma_unit:
            a = e
            ap = self.alpha * self.beta * self.table.Fp(z) * a
        else:
            s2 = np.where(bad, 1.0, self.table.s2(z))
            a = e / s2
            ap = self.beta * e / s2 ** 2 * (
                (self.alpha - 1.0) * s2 * self.table.Fp(z) - self.table.b(z))
        a = np.where(bad, 1.0, a)
        ap = np.where(bad, 0.0, ap)
        return a, ap, bad

    def b(self, z):
        return self.table.b(z)

    def s2(self, z):
        return np.ones_like(np.asarray(z, dtype=float)) if self.sigma_unit \
            else self.table.s2(z)


def kappa_alpha(spec: DiffusionSpec, dim: int, grid: LatentGrid):
    """Normalization constant: reciprocal of the Riemann sum of
    sqrt(d - 1 + a(z)^2) exp(-beta F(z)) over the latent grid.

    Grid-backed tables integrate their bin values directly (this also
    yields one constant per chain for batched tables); other tables are
    sampled at the bin centers."""
    t = spec.table
    if isinstance(t, GridTable) and t.grid == grid:
        f = t.f_vals
        x = spec.alpha * spec.beta * (f + spec.free_energy_offset)
        if np.any(x > EXP_GUARD) or not np.all(np.isfinite(x)):
            raise DiffusionOverflowError("alpha*beta*F exceeds the "
                                         "exponential range")
        a = np.exp(x)
        if not spec.sigma_unit:
            a = a / t.s2_vals
    else:
        z = grid.centers
        a = spec.a(z)
        f = t.F(z)
    integrand = np.sqrt(dim - 1.0 + a * a) * np.exp(-spec.beta * f)
    total = np.sum(integrand, axis=-1) * grid.dz
    return 1.0 / total


@dataclass
class Projectors:
    """Rank-one projector P onto the CV gradient and its complement."""

    grad: np.ndarray
    grad_norm_sq: np.ndarray

    def dot(self, v):
        coef = np.sum(self.grad * v, axis=-1) / self.grad_norm_sq
        return coef[..., None] * self.grad if np.ndim(coef) else coef * self.grad

    def perp_dot(self, v):
        return v - self.dot(v)

    def dense(self, dim: int):
        outer = self.grad[..., :, None] * self.grad[..., None, :]
        return outer / np.asarray(self.grad_norm_sq)[..., None, None]

    def perp_dense(self, dim: int):
        return np.eye(dim) - self.dense(dim)


def projectors(cv) -> Projectors:
    return Projectors(grad=cv.grad, grad_norm_sq=cv.grad_norm_sq)


@dataclass
class DiffusionEval:
    """Diffusion matrix at one configuration, in kappa*(I + c P) action form.

    All matrix products are O(d); dense materializations exist for tests."""

    a: np.ndarray
    a_prime: np.ndarray
    kappa: np.ndarray
    cv: object
    dim: int
    proj: Projectors = field(init=False)

    def __post_init__(self):
        self.proj = projectors(self.cv)

    def _apply(self, scale, coef, v):
        pv = self.proj.dot(v)
        c = np.asarray(coef)[..., None] if np.ndim(coef) else coef
        s = np.asarray(scale)[..., None] if np.ndim(scale) else scale
        return s * (v + c * pv)

    def dot(self, v):
        return self._apply(self.kappa, self.a - 1.0, v)

    def sqrt_dot(self, v):
        return self._apply(np.sqrt(self.kappa), np.sqrt(self.a) - 1.0, v)

    def inv_dot(self, v):
        return self._apply(1.0 / self.kappa, 1.0 / self.a - 1.0, v)

    def isqrt_dot(self, v):
        return self._apply(1.0 / np.sqrt(self.kappa),
                           1.0 / np.sqrt(self.a) - 1.0, v)

    @property
    def log_det(self):
        return self.dim * np.log(self.kappa) + np.log(self.a)

    def divergence(self):
        """Divergence vector of the diffusion field.

        For constant-gradient-norm CVs only the Laplacian and a' terms
        survive; the general expression adds the hess @ grad corrections."""
        cv = self.cv
        gns = cv.grad_norm_sq
        lead = (self.a - 1.0) * cv.laplacian / gns + self.a_prime
        out = np.asarray(lead)[..., None] * cv.grad if np.ndim(lead) \
            else lead * cv.grad
        if not cv.const_grad_norm:
            hg = cv.hess_grad()
            quad = np.sum(cv.grad * hg, axis=-1)
            corr = hg / np.asarray(gns)[..., None] \
                - 2.0 * np.asarray(quad / gns ** 2)[..., None] * cv.grad
            out = out + np.asarray(self.a - 1.0)[..., None] * corr
        return np.asarray(self.kappa)[..., None] * out if np.ndim(self.kappa) \
            else self.kappa * out

    def divergence_general(self):
        """Same divergence without the constant-norm shortcut (dual-route
        consistency checks)."""
        cv = self.cv
        gns = cv.grad_norm_sq
        hg = cv.hess_dot(cv.grad)
        quad = np.sum(cv.grad * hg, axis=-1)
        div_p = hg / np.asarray(gns)[..., None] \
            + np.asarray(cv.laplacian / gns)[..., None] * cv.grad \
            - 2.0 * np.asarray(quad / gns ** 2)[..., None] * cv.grad
        term = np.asarray(self.a - 1.0)[..., None] * div_p \
            + np.asarray(self.a_prime)[..., None] * cv.grad
        return np.asarray(self.kappa)[..., None] * term if np.ndim(self.kappa) \
            else self.kappa * term

    def dense(self):
        eye = np.eye(self.dim)
        return self.kappa * (eye + (self.a - 1.0) * self.proj.dense(self.dim))

    def dense_sqrt(self):
        eye = np.eye(self.dim)
        return np.sqrt(self.kappa) * (
            eye + (np.sqrt(self.a) - 1.0) * self.proj.dense(self.dim))

    def dense_inv(self):
        eye = np.eye(self.dim)
        return (eye + (1.0 / self.a - 1.0) * self.proj.dense(self.dim)) / self.kappa


def eval_diffusion(spec: DiffusionSpec, dim: int, cv) -> DiffusionEval:
    """Evaluate the diffusion family at a configuration's CvEval."""
    a, ap = spec.a_aprime(cv.value)
    return DiffusionEval(a=a, a_prime=ap, kappa=spec.kappa, cv=cv, dim=dim)
