"""Physical model: WCA solvent + double-well dimer in a periodic 2D box.

Positions are flat arrays of length d = 2N (x1, y1, x2, y2, ...), stored
reduced to [0, box_len).  All functions broadcast over leading axes, so a
batch of B configurations is simply an array of shape (B, d).  Particles 0
and 1 form the dimer; every other pair interacts through the purely
repulsive WCA potential.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

# Distances are clamped below this value instead of dividing by zero; the
# resulting huge (but finite) energies make Metropolis reject the move.
R_FLOOR = 1e-12


class SingularCvError(ValueError):
    """Raised when the dimer particles coincide and the CV is undefined."""


@dataclass(frozen=True)
class SystemParams:
    """Immutable physical constants of the dimer-in-solvent system."""

    n_particles: int = 16
    box_len: float = math.sqrt(16 / 0.7)
    beta: float = 1.0
    eps: float = 1.0
    r_cap: float = 1.0
    w: float = 0.7
    barrier_h: float = 2.0

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least the two dimer particles")
        for name in ("box_len", "beta", "eps", "r_cap", "w", "barrier_h"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def dim(self) -> int:
        return 2 * self.n_particles

    @property
    def r0(self) -> float:
        """WCA cutoff and compact dimer bond length, 2^(1/6) * r_cap."""
        return 2.0 ** (1.0 / 6.0) * self.r_cap

    @property
    def grad_norm_sq(self) -> float:
        """Squared CV gradient norm, constant for the bond-length CV."""
        return 1.0 / (2.0 * self.w * self.w)

    @classmethod
    def benchmark(cls, n_particles: int = 16, density: float = 0.7,
                  beta: float = 1.0) -> "SystemParams":
        """Benchmark preset: N particles at density N/box_len^2."""
        return cls(n_particles=n_particles,
                   box_len=math.sqrt(n_particles / density), beta=beta)

    @classmethod
    def dimer_only(cls, box_len: float = 12.0, beta: float = 1.0) -> "SystemParams":
        """Two-particle reduced system in a box large enough that the
        stretched dimer never feels the periodic images."""
        return cls(n_particles=2, box_len=box_len, beta=beta)


@lru_cache(maxsize=None)
def _pairs(n: int):
    """Upper-triangular pair indices and the +/-1 incidence matrix used to
    scatter pair forces back onto particles.  Pair 0 is the dimer (0, 1)."""
    iu, ju = np.triu_indices(n, 1)
    inc = np.zeros((n, len(iu)))
    inc[iu, np.arange(len(iu))] = 1.0
    inc[ju, np.arange(len(ju))] = -1.0
    return iu, ju, inc


def wrap_coords(coords, box_len: float):
    """Reduce coordinates to the canonical box representation [0, box_len)."""
    return np.mod(coords, box_len)


def min_image(delta, box_len: float):
    """Componentwise representative of a displacement in [-L/2, L/2)."""
    return delta - box_len * np.floor(delta / box_len + 0.5)


def wca(r, params: SystemParams):
    """Purely repulsive WCA pair energy; zero beyond the cutoff r0."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("pair distance must be positive")
    s6 = (params.r_cap / np.maximum(r, R_FLOOR)) ** 6
    val = 4.0 * params.eps * (s6 * s6 - s6) + params.eps
    return np.where(r <= params.r0, val, 0.0)


def wca_deriv(r, params: SystemParams):
    """Radial derivative of the WCA pair energy."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("pair distance must be positive")
    rc = np.maximum(r, R_FLOOR)
    s6 = (params.r_cap / rc) ** 6
    val = (24.0 * params.eps / rc) * (s6 - 2.0 * s6 * s6)
    return np.where(r <= params.r0, val, 0.0)


def dw(r, params: SystemParams):
    """Double-well dimer bond energy with minima at r0 and r0 + 2w."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("pair distance must be positive")
    u = (r - params.r0 - params.w) / params.w
    return params.barrier_h * (1.0 - u * u) ** 2


def dw_deriv(r, params: SystemParams):
    """Radial derivative of the double-well bond energy."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("pair distance must be positive")
    u = (r - params.r0 - params.w) / params.w
    return -4.0 * params.barrier_h * u * (1.0 - u * u) / params.w


def _pair_geometry(params: SystemParams, q):
    """Minimum-image pair displacements (..., P, 2) and distances (..., P)."""
    n = params.n_particles
    iu, ju, _ = _pairs(n)
    pos = np.asarray(q, dtype=float).reshape(*np.shape(q)[:-1], n, 2)
    delta = min_image(pos[..., iu, :] - pos[..., ju, :], params.box_len)
    r = np.sqrt(np.sum(delta * delta, axis=-1))
    return delta, r


def _pair_terms(params: SystemParams, q):
    """Pair displacements, energies and force coefficients V'(r)/r.

    The WCA terms only need squared distances, so the square root is taken
    for the dimer pair alone."""
    n = params.n_particles
    iu, ju, _ = _pairs(n)
    pos = np.asarray(q, dtype=float).reshape(*np.shape(q)[:-1], n, 2)
    delta = min_image(pos[..., iu, :] - pos[..., ju, :], params.box_len)
    r2 = delta[..., 0] ** 2 + delta[..., 1] ** 2
    r2 = np.maximum(r2, R_FLOOR * R_FLOOR)

    eps = params.eps
    s6 = (params.r_cap * params.r_cap / r2) ** 3
    inside = r2 <= params.r0 * params.r0
    e_pair = np.where(inside, 4.0 * eps * (s6 * s6 - s6) + eps, 0.0)
    coef = np.where(inside, 24.0 * eps * (s6 - 2.0 * s6 * s6) / r2, 0.0)

    r_dimer = np.sqrt(r2[..., 0])
    u = (r_dimer - params.r0 - params.w) / params.w
    e_pair[..., 0] = params.barrier_h * (1.0 - u * u) ** 2
    coef[..., 0] = -4.0 * params.barrier_h * u * (1.0 - u * u) \
        / (params.w * r_dimer)
    return delta, e_pair, coef


def potential_energy(params: SystemParams, q):
    """Total energy: double well on the dimer pair, WCA on all other pairs."""
    _, e_pair, _ = _pair_terms(params, q)
    return np.sum(e_pair, axis=-1)


def potential_gradient(params: SystemParams, q):
    """Gradient of the potential energy, shape (..., d)."""
    return energy_and_gradient(params, q)[1]


def energy_and_gradient(params: SystemParams, q):
    """Energy and gradient in one pass over the pair list."""
    n = params.n_particles
    _, _, inc = _pairs(n)
    delta, e_pair, coef = _pair_terms(params, q)
    energy = np.sum(e_pair, axis=-1)
    pair_grad = coef[..., None] * delta
    grad = np.einsum("np,...pc->...nc", inc, pair_grad)
    return energy, grad.reshape(*np.shape(q)[:-1], 2 * n)


@dataclass
class CvEval:
    """One-stop evaluation of a collective variable at a configuration.

    Holds the value, gradient, squared gradient norm and Laplacian, plus the
    action of the (sparse) Hessian.  ``const_grad_norm`` marks CVs whose
    gradient norm is position independent, which lets samplers drop every
    term proportional to hess @ grad.
    """

    value: np.ndarray
    grad: np.ndarray
    grad_norm_sq: np.ndarray
    laplacian: np.ndarray
    const_grad_norm: bool
    _block: np.ndarray  # (..., 2, 2) dimer Hessian block

    def hess_dot(self, v):
        """Hessian-vector product; only the first four components react."""
        u = v[..., 0:2] - v[..., 2:4]
        mu = np.einsum("...ij,...j->...i", self._block, u)
        out = np.zeros_like(v)
        out[..., 0:2] = mu
        out[..., 2:4] = -mu
        return out

    def hess_grad(self):
        """Hessian applied to the CV gradient (zero for bond-length CVs)."""
        if self.const_grad_norm:
            return np.zeros_like(self.grad)
        return self.hess_dot(self.grad)

    def hess_dense(self, dim: int):
        """Full (dim, dim) Hessian, for tests and dense oracles only."""
        h = np.zeros((*self.value.shape, dim, dim)) if self.value.ndim \
            else np.zeros((dim, dim))
        m = self._block
        h[..., 0:2, 0:2] = m
        h[..., 0:2, 2:4] = -m
        h[..., 2:4, 0:2] = -m
        h[..., 2:4, 2:4] = m
        return h


def cv_eval(params: SystemParams, q) -> CvEval:
    """Normalized dimer bond length xi = (|q2 - q1| - r0) / (2w).

    The distance uses the minimum-image convention.  Raises
    SingularCvError when the dimer particles coincide.
    """
    cv, bad = cv_eval_clamped(params, q)
    if np.any(bad):
        raise SingularCvError("dimer particles coincide; CV gradient undefined")
    return cv


def cv_eval_clamped(params: SystemParams, q):
    """cv_eval variant for batched implicit solvers: lanes with a (nearly)
    coincident dimer are flagged instead of raising, with the distance
    clamped so downstream arithmetic stays finite."""
    q = np.asarray(q, dtype=float)
    pos = q.reshape(*q.shape[:-1], params.n_particles, 2)
    delta = min_image(pos[..., 0, :] - pos[..., 1, :], params.box_len)
    r = np.sqrt(np.sum(delta * delta, axis=-1))
    bad = r < 1e-12
    if np.any(bad):
        shift = np.zeros_like(delta)
        shift[..., 0] = 1e-9
        delta = np.where(bad[..., None] if np.ndim(bad) else bad,
                         delta + shift, delta)
        r = np.sqrt(np.sum(delta * delta, axis=-1))

    w = params.w
    value = (r - params.r0) / (2.0 * w)
    unit = delta / r[..., None]
    pref = 1.0 / (2.0 * w * r)
    grad = np.zeros_like(q)
    grad[..., 0:2] = pref[..., None] * delta
    grad[..., 2:4] = -pref[..., None] * delta
    eye = np.eye(2)
    block = pref[..., None, None] * (eye - unit[..., :, None] * unit[..., None, :])
    gns = np.broadcast_to(np.asarray(params.grad_norm_sq), value.shape).copy() \
        if value.ndim else np.float64(params.grad_norm_sq)
    cv = CvEval(value=value, grad=grad, grad_norm_sq=gns,
                laplacian=1.0 / (w * r), const_grad_norm=True, _block=block)
    return cv, bad


def lattice_config(params: SystemParams):
    """Canonical initial configuration: solvent on a square lattice, dimer
    compact (particle 1 sits a bond length r0 above particle 0)."""
    n = params.n_particles
    side = max(int(math.ceil(math.sqrt(n))), 2)
    a = params.box_len / math.sqrt(n)
    i = np.arange(n)
    x = a * (0.5 + i // side)
    y = a * (0.5 + (i % side))
    y[1] = y[0] + params.r0
    q = np.empty(2 * n)
    q[0::2] = x
    q[1::2] = y
    return wrap_coords(q, params.box_len)
