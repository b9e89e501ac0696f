"""Hamiltonian samplers with a position-dependent mass matrix.

The Hamiltonian is H(q, p) = V(q) - log det D(q) / 2 + p^T D(q) p / 2 with
the CV-modulated diffusion D playing the role of an inverse mass matrix.
H is not separable, so the generalized Stormer-Verlet scheme is implicit in
its first two substeps; the implicit equations are solved with Newton's
method, and a forward/backward reversibility check guards the Metropolis
step against silently non-reversible numerical flows.

Because the CV touches only the first four coordinates, the Newton updates
split into a dense 4x4 linear solve plus an explicit update of the
remaining components.  All functions are batched over chains; failure
bookkeeping is per lane.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import system
from ._util import merge_cv, where_lanes
from .diffusion import DiffusionEval, DiffusionSpec, eval_diffusion


class StepCause(IntEnum):
    """Outcome of one proposal, in the order the checks are applied."""

    ACCEPTED = 0
    FWD_MOMENTA = 1
    FWD_POSITION = 2
    BWD_MOMENTA = 3
    BWD_POSITION = 4
    REVERSIBILITY = 5
    METROPOLIS = 6


@dataclass(frozen=True)
class NewtonParams:
    """Thresholds for the implicit solves and the reversibility test.

    The reversibility tolerance is deliberately looser than the Newton
    tolerances to absorb round-off accumulated across the four solves."""

    max_iter: int = 100
    tol_cauchy: float = 1e-12
    tol_root: float = 1e-12
    tol_rev: float = 1e-6
    pivot_tol: float = 1e-14

    def __post_init__(self):
        if min(self.tol_cauchy, self.tol_root, self.tol_rev) <= 0:
            raise ValueError("tolerances must be positive")
        if self.tol_rev <= self.tol_cauchy:
            raise ValueError("tol_rev must exceed tol_cauchy")


@dataclass
class PhaseState:
    """Phase-space point with cached energy, force, CV and diffusion data."""

    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    grad: np.ndarray
    cv: object
    diff: DiffusionEval
    n_steps: int = 0
    n_accepted: object = 0


def make_phase_state(params, spec, q, p=None) -> PhaseState:
    q = system.wrap_coords(np.asarray(q, dtype=float), params.box_len)
    energy, grad = system.energy_and_gradient(params, q)
    cv = system.cv_eval(params, q)
    diff = eval_diffusion(spec, params.dim, cv)
    if p is None:
        p = np.zeros_like(q)
    acc = np.zeros(np.shape(energy), dtype=np.int64) if np.ndim(energy) else 0
    return PhaseState(q=q, p=np.asarray(p, dtype=float), energy=energy,
                      grad=grad, cv=cv, diff=diff, n_accepted=acc)


def hamiltonian_from(params, energy, diff: DiffusionEval, p):
    """H evaluated from cached pieces.  The constant -(d/2) log kappa is
    kept so values are comparable across diffusion strengths."""
    cv = diff.cv
    m = np.sum(cv.grad * p, axis=-1)
    quad = np.sum(p * p, axis=-1) + (diff.a - 1.0) * m * m / cv.grad_norm_sq
    return (energy - 0.5 * params.dim * np.log(diff.kappa)
            - 0.5 * np.log(diff.a) + 0.5 * diff.kappa * quad)


def hamiltonian(params, spec: DiffusionSpec, q, p):
    energy, _ = system.energy_and_gradient(params, q)
    cv = system.cv_eval(params, q)
    diff = eval_diffusion(spec, params.dim, cv)
    return hamiltonian_from(params, energy, diff, p)


def grad_q_h_from(grad_v, diff: DiffusionEval, p):
    """Position gradient of H from cached pieces.

    Terms proportional to hess @ grad vanish for constant-gradient-norm CVs
    and are skipped on that fast path."""
    cv = diff.cv
    gns = cv.grad_norm_sq
    kappa, a, ap = diff.kappa, diff.a, diff.a_prime
    m = np.sum(cv.grad * p, axis=-1)
    hp = cv.hess_dot(p)
    coef_g = -0.5 * ap / a + 0.5 * kappa * ap * m * m / gns
    out = grad_v + _col(coef_g) * cv.grad + _col(kappa * (a - 1.0) * m / gns) * hp
    if not cv.const_grad_norm:
        hg = cv.hess_grad()
        out = out - _col(kappa * (a - 1.0) * m * m / gns ** 2) * hg
    return out


def grad_p_h_from(diff: DiffusionEval, p):
    """Momentum gradient of H: simply D(q) p."""
    return diff.dot(p)


def grad_q_h(params, spec, q, p):
    _, grad_v = system.energy_and_gradient(params, q)
    cv = system.cv_eval(params, q)
    diff = eval_diffusion(spec, params.dim, cv)
    return grad_q_h_from(grad_v, diff, p)


def grad_p_h(params, spec, q, p):
    cv = system.cv_eval(params, q)
    diff = eval_diffusion(spec, params.dim, cv)
    return grad_p_h_from(diff, p)


def _col(x):
    """Append a broadcast axis so per-lane scalars scale vectors."""
    return np.asarray(x)[..., None]


def solve4_partial_pivot(a, b, pivot_tol=1e-14):
    """Batched 4x4 linear solve by Gaussian elimination with partial
    pivoting.  Returns the solution and a mask of lanes whose pivot product
    (the determinant magnitude) fell below pivot_tol, whose solution is
    meaningless.

    The elimination is delegated to LAPACK's batched partial-pivoting
    solver; near-singular lanes are substituted with the identity before
    the call so the batch never raises."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    det = np.linalg.det(a)
    singular = ~(np.abs(det) > pivot_tol)
    if np.any(singular):
        a = np.where(singular[..., None, None], np.eye(4), a)
    x = np.linalg.solve(a, b[..., None])[..., 0]
    return x, singular


def _momenta_jac4(dt, diff: DiffusionEval, p):
    """Leading 4x4 block of the Jacobian of the momentum residual map."""
    cv = diff.cv
    gns = cv.grad_norm_sq
    kappa, a, ap = diff.kappa, diff.a, diff.a_prime
    g4 = cv.grad[..., :4]
    m = np.sum(cv.grad * p, axis=-1)
    hp4 = cv.hess_dot(p)[..., :4]
    h4 = _hess_block4(cv)
    half = 0.5 * kappa * dt
    jac = (np.eye(4)
           + _c2(half * m * ap / gns) * _outer(g4, g4)
           + _c2(half * (a - 1.0) / gns) * _outer(hp4, g4)
           + _c2(half * (a - 1.0) * m / gns) * h4)
    if not cv.const_grad_norm:
        hg4 = cv.hess_grad()[..., :4]
        jac = jac - _c2(2.0 * half * (a - 1.0) * m / gns ** 2) * _outer(hg4, g4)
    return jac


def _position_jac4(dt, diff: DiffusionEval, p_half):
    """Leading 4x4 block of the Jacobian of the position residual map."""
    cv = diff.cv
    gns = cv.grad_norm_sq
    kappa, a, ap = diff.kappa, diff.a, diff.a_prime
    g4 = cv.grad[..., :4]
    m = np.sum(cv.grad * p_half, axis=-1)
    hp4 = cv.hess_dot(p_half)[..., :4]
    h4 = _hess_block4(cv)
    half = 0.5 * kappa * dt
    jac = (np.eye(4)
           - _c2(half * m * ap / gns) * _outer(g4, g4)
           - _c2(half * (a - 1.0) / gns) * _outer(g4, hp4)
           - _c2(half * (a - 1.0) * m / gns) * h4)
    if not cv.const_grad_norm:
        hg4 = cv.hess_grad()[..., :4]
        jac = jac + _c2(2.0 * half * (a - 1.0) * m / gns ** 2) * _outer(g4, hg4)
    return jac


def _outer(u, v):
    return u[..., :, None] * v[..., None, :]


def _c2(x):
    return np.asarray(x)[..., None, None]


def _hess_block4(cv):
    m = cv._block
    top = np.concatenate([m, -m], axis=-1)
    return np.concatenate([top, -top], axis=-2)


def _norm(v):
    return np.sqrt(np.sum(v * v, axis=-1))


def newton_momenta(params, dt, diff: DiffusionEval, grad_v, p_in,
                   newton: NewtonParams, dense: bool = False, trace=None):
    """Solve the implicit half-step momentum equation; returns (p_half, ok).

    The CV touches only the first four coordinates, so the residual is
    affine in the remaining components: they are solved exactly by the
    first update and the Newton iteration continues on the 4x4 block alone.
    Lanes that converge or fail are dropped from the working set.
    dense=True runs a generic full-dimension Newton instead (dual route for
    validation)."""
    if np.ndim(p_in) == 1:
        unsqueeze = True
        diff = _expand_diff(diff, params.dim)
        grad_v, p_in = grad_v[None], p_in[None]
    else:
        unsqueeze = False
    if dense:
        p, ok = _newton_momenta_dense(params, dt, diff, grad_v, p_in, newton,
                                      trace)
    else:
        p, ok = _newton_momenta_block(params, dt, diff, grad_v, p_in, newton,
                                      trace)
    if unsqueeze:
        return p[0], bool(ok[0])
    return p, ok


def _expand_diff(diff: DiffusionEval, dim):
    cv = diff.cv
    cv2 = type(cv)(value=np.asarray(cv.value)[None],
                   grad=cv.grad[None],
                   grad_norm_sq=np.asarray(cv.grad_norm_sq).reshape(1),
                   laplacian=np.asarray(cv.laplacian)[None],
                   const_grad_norm=cv.const_grad_norm,
                   _block=cv._block[None])
    return DiffusionEval(a=np.asarray(diff.a)[None],
                         a_prime=np.asarray(diff.a_prime)[None],
                         kappa=diff.kappa, cv=cv2, dim=dim)


def _newton_momenta_block(params, dt, diff, grad_v, p_in, newton, trace):
    cv = diff.cv
    gns = np.asarray(cv.grad_norm_sq)
    kappa, a, ap = diff.kappa, np.asarray(diff.a), np.asarray(diff.a_prime)
    g4 = cv.grad[..., :4]
    h4 = _hess_block4(cv)
    hg4 = None if cv.const_grad_norm else cv.hess_grad()[..., :4]
    const_force = grad_v - _col(0.5 * ap / a) * cv.grad

    # components beyond the CV block are affine and solved exactly by the
    # standard first iterate p_in - dt/2 grad_q H(q, p_in)
    p_full = p_in - 0.5 * dt * grad_q_h_from(grad_v, diff, p_in)
    if trace is not None:
        trace.append(p_full.copy())
    cf4 = const_force[..., :4]
    p4_in = p_in[..., :4]

    def residual4(p4, m, hp4):
        nl = (_col(0.25 * kappa * dt * m * m * ap / gns) * g4
              + _col(0.5 * kappa * dt * (a - 1.0) * m / gns) * hp4)
        if hg4 is not None:
            nl = nl - _col(0.5 * kappa * dt * (a - 1.0) * m * m / gns ** 2) \
                * hg4
        return p4 - p4_in + 0.5 * dt * cf4 + nl

    n = p_full.shape[0]
    ok = np.zeros(n, dtype=bool)
    work = np.arange(n)
    g44 = _outer(g4, g4)
    p4 = p_full[..., :4].copy()
    m = np.einsum("...i,...i->...", g4, p4)
    hp4 = np.einsum("...ij,...j->...i", h4, p4)
    g_cur = residual4(p4, m, hp4)
    for _ in range(newton.max_iter):
        # gather per-lane constants for the working subset
        g4w, g44w, h4w = g4[work], g44[work], h4[work]
        aw = a[work] if a.ndim else a
        apw = ap[work] if ap.ndim else ap
        gnsw = gns[work] if gns.ndim else gns
        half = 0.5 * kappa * dt
        jac = (np.eye(4)
               + _c2(half * m * apw / gnsw) * g44w
               + _c2(half * (aw - 1.0) / gnsw) * _outer(hp4, g4w)
               + _c2(half * (aw - 1.0) * m / gnsw) * h4w)
        if hg4 is not None:
            jac = jac - _c2(2.0 * half * (aw - 1.0) * m / gnsw ** 2) \
                * _outer(hg4[work], g4w)
        u4, singular = solve4_partial_pivot(jac, -g_cur, newton.pivot_tol)
        p4_new = np.where(singular[..., None], p4, p4 + u4)
        m = np.einsum("...i,...i->...", g4w, p4_new)
        hp4 = np.einsum("...ij,...j->...i", h4w, p4_new)
        nl = (_col(0.25 * kappa * dt * m * m * apw / gnsw) * g4w
              + _col(half * (aw - 1.0) * m / gnsw) * hp4)
        if hg4 is not None:
            nl = nl - _col(half * (aw - 1.0) * m * m / gnsw ** 2) * hg4[work]
        g_new = p4_new - p4_in[work] + 0.5 * dt * cf4[work] + nl
        gn = _norm(g_new)
        singular = singular | ~np.isfinite(gn)
        conv = (_norm(u4) < newton.tol_cauchy) & (gn < newton.tol_root)
        p_full[work, :4] = p4_new
        if trace is not None:
            trace.append(p_full.copy())
        ok[work[conv & ~singular]] = True
        still = ~(conv | singular)
        if not np.any(still):
            break
        work = work[still]
        p4, g_cur = p4_new[still], g_new[still]
        m, hp4 = m[still], hp4[still]
    return p_full, ok


def _newton_momenta_dense(params, dt, diff, grad_v, p_in, newton, trace):
    cv = diff.cv
    const_force = grad_v - _col(0.5 * diff.a_prime / diff.a) * cv.grad

    def residual(p):
        m = np.sum(cv.grad * p, axis=-1)
        nl = (_col(0.25 * diff.kappa * dt * m * m * diff.a_prime
                   / cv.grad_norm_sq) * cv.grad
              + _col(0.5 * diff.kappa * dt * (diff.a - 1.0) * m
                     / cv.grad_norm_sq) * cv.hess_dot(p))
        if not cv.const_grad_norm:
            nl = nl - _col(0.5 * diff.kappa * dt * (diff.a - 1.0) * m * m
                           / cv.grad_norm_sq ** 2) * cv.hess_grad()
        return p - p_in + 0.5 * dt * const_force + nl

    p_cur = p_in - 0.5 * dt * grad_q_h_from(grad_v, diff, p_in)
    if trace is not None:
        trace.append(p_cur.copy())
    g_cur = residual(p_cur)
    n = p_cur.shape[0]
    ok = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    for _ in range(newton.max_iter):
        jac = _dense_jacobian_momenta(params.dim, dt, diff, p_cur)
        u = np.linalg.solve(jac, -g_cur[..., None])[..., 0]
        p_new = np.where(active[..., None], p_cur + u, p_cur)
        g_new = residual(p_new)
        gn = _norm(g_new)
        conv = (_norm(u) < newton.tol_cauchy) & (gn < newton.tol_root)
        bad = ~np.isfinite(gn)
        p_cur, g_cur = p_new, g_new
        if trace is not None:
            trace.append(p_cur.copy())
        ok = ok | (active & conv & ~bad)
        active = active & ~conv & ~bad
        if not np.any(active):
            break
    return p_cur, ok


def newton_position(params, spec, q_n, dt, diff: DiffusionEval, p_half,
                    newton: NewtonParams, dense: bool = False, trace=None):
    """Solve the implicit position equation; returns (q_next, ok, end).

    end caches the CV and diffusion factors at the returned configuration.
    Components beyond the CV block are explicit and solved by the first
    iterate; the loop then updates only the four dimer coordinates.
    Iterates live on the unwrapped lift of the torus (the caller wraps)."""
    if np.ndim(p_half) == 1:
        q, ok, end = newton_position(params, spec, q_n[None], dt,
                                     _expand_diff(diff, params.dim),
                                     p_half[None], newton, dense,
                                     trace)
        cv_end, _ = system.cv_eval_clamped(params, q[0])
        a_e, ap_e, _ = spec.a_aprime_guarded(cv_end.value)
        end = DiffusionEval(a=a_e, a_prime=ap_e, kappa=end.kappa, cv=cv_end,
                            dim=params.dim)
        return q[0], bool(ok[0]), end
    if dense:
        return _newton_position_dense(params, spec, q_n, dt, diff, p_half,
                                      newton, trace)
    return _newton_position_block(params, spec, q_n, dt, diff, p_half,
                                  newton, trace)


def _dimer_geometry(params, q4):
    """CV pieces from the four dimer coordinates alone."""
    delta = system.min_image(q4[..., 0:2] - q4[..., 2:4], params.box_len)
    r2 = delta[..., 0] ** 2 + delta[..., 1] ** 2
    bad = r2 < 1e-24
    r = np.sqrt(np.maximum(r2, 1e-24))
    value = (r - params.r0) / (2.0 * params.w)
    pref = 1.0 / (2.0 * params.w * r)
    g4 = np.concatenate([_col(pref) * delta, -_col(pref) * delta], axis=-1)
    unit = delta / _col(r)
    m2 = _c2(pref) * (np.eye(2) - unit[..., :, None] * unit[..., None, :])
    top = np.concatenate([m2, -m2], axis=-1)
    h4 = np.concatenate([top, -top], axis=-2)
    return value, g4, h4, bad


def _newton_position_block(params, spec, q_n, dt, diff, p_half, newton,
                           trace):
    cv_n = diff.cv
    kappa = diff.kappa
    gns = params.grad_norm_sq
    m_n = np.sum(cv_n.grad * p_half, axis=-1)
    frozen4 = (-kappa * dt * p_half[..., :4]
               - _col(0.5 * kappa * dt * (diff.a - 1.0) * m_n
                      / cv_n.grad_norm_sq) * cv_n.grad[..., :4])

    q_full = q_n + dt * grad_p_h_from(diff, p_half)
    if trace is not None:
        trace.append(q_full.copy())
    qn4 = q_n[..., :4]
    ph4 = p_half[..., :4]

    n = q_full.shape[0]
    ok = np.zeros(n, dtype=bool)
    work = np.arange(n)
    q4 = q_full[..., :4].copy()
    val, g4, h4, bad = _dimer_geometry(params, q4)
    a, ap, bad_a = spec.a_aprime_guarded(val)
    bad = bad | bad_a
    m = np.einsum("...i,...i->...", g4, ph4)
    g_cur = q4 - qn4 + frozen4 \
        - _col(0.5 * kappa * dt * (a - 1.0) * m / gns) * g4
    fr4, ph4w = frozen4, ph4
    qn4w = qn4
    dead = bad
    for _ in range(newton.max_iter):
        hp4 = np.einsum("...ij,...j->...i", h4, ph4w)
        half = 0.5 * kappa * dt
        jac = (np.eye(4)
               - _c2(half * m * ap / gns) * _outer(g4, g4)
               - _c2(half * (a - 1.0) / gns) * _outer(g4, hp4)
               - _c2(half * (a - 1.0) * m / gns) * h4)
        u4, singular = solve4_partial_pivot(jac, -g_cur, newton.pivot_tol)
        singular = singular | dead
        q4_new = np.where(singular[..., None], q4, q4 + u4)
        val, g4, h4, bad = _dimer_geometry(params, q4_new)
        a, ap, bad_a = spec.a_aprime_guarded(val)
        bad = bad | bad_a
        m = np.einsum("...i,...i->...", g4, ph4w)
        g_new = q4_new - qn4w + fr4 \
            - _col(half * (a - 1.0) * m / gns) * g4
        gn = _norm(g_new)
        singular = singular | bad | ~np.isfinite(gn)
        conv = (_norm(u4) < newton.tol_cauchy) & (gn < newton.tol_root)
        q_full[work, :4] = q4_new
        if trace is not None:
            trace.append(q_full.copy())
        ok[work[conv & ~singular]] = True
        still = ~(conv | singular)
        if not np.any(still):
            break
        work = work[still]
        q4, g_cur = q4_new[still], g_new[still]
        val, m = val[still], m[still]
        g4, h4 = g4[still], h4[still]
        a = a[still] if np.ndim(a) else a
        ap = ap[still] if np.ndim(ap) else ap
        fr4, ph4w, qn4w = fr4[still], ph4w[still], qn4w[still]
        dead = np.zeros(len(work), dtype=bool)
    cv_end, _ = system.cv_eval_clamped(params, q_full)
    a_end, ap_end, _ = spec.a_aprime_guarded(cv_end.value)
    d_end = DiffusionEval(a=a_end, a_prime=ap_end, kappa=kappa, cv=cv_end,
                          dim=params.dim)
    return q_full, ok, d_end


def _newton_position_dense(params, spec, q_n, dt, diff, p_half, newton,
                           trace):
    cv_n = diff.cv
    kappa = diff.kappa
    m_n = np.sum(cv_n.grad * p_half, axis=-1)
    frozen = (-kappa * dt * p_half
              - _col(0.5 * kappa * dt * (diff.a - 1.0) * m_n
                     / cv_n.grad_norm_sq) * cv_n.grad)

    def endpoint(q):
        cv, bad = system.cv_eval_clamped(params, q)
        a, ap, bad_a = spec.a_aprime_guarded(cv.value)
        return DiffusionEval(a=a, a_prime=ap, kappa=kappa, cv=cv,
                             dim=params.dim), bad | bad_a

    def residual(q, dval):
        cv = dval.cv
        m = np.sum(cv.grad * p_half, axis=-1)
        move = _col(0.5 * kappa * dt * (dval.a - 1.0) * m / cv.grad_norm_sq) \
            * cv.grad
        return q - q_n + frozen - move

    q_cur = q_n + dt * grad_p_h_from(diff, p_half)
    if trace is not None:
        trace.append(q_cur.copy())
    d_cur, bad0 = endpoint(q_cur)
    g_cur = residual(q_cur, d_cur)
    n = q_cur.shape[0]
    ok = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool) & ~bad0
    for _ in range(newton.max_iter):
        jac = _dense_jacobian_position(params.dim, dt, d_cur, p_half)
        u = np.linalg.solve(jac, -g_cur[..., None])[..., 0]
        q_new = np.where(active[..., None], q_cur + u, q_cur)
        d_new, bad = endpoint(q_new)
        g_new = residual(q_new, d_new)
        gn = _norm(g_new)
        conv = (_norm(u) < newton.tol_cauchy) & (gn < newton.tol_root)
        dead = bad | ~np.isfinite(gn)
        q_cur, g_cur, d_cur = q_new, g_new, d_new
        if trace is not None:
            trace.append(q_cur.copy())
        ok = ok | (active & conv & ~dead)
        active = active & ~conv & ~dead
        if not np.any(active):
            break
    return q_cur, ok, d_cur


def _dense_jacobian_momenta(dim, dt, diff: DiffusionEval, p):
    cv = diff.cv
    gns = cv.grad_norm_sq
    kappa, a, ap = diff.kappa, diff.a, diff.a_prime
    g = cv.grad
    m = np.sum(g * p, axis=-1)
    hp = cv.hess_dot(p)
    hess = cv.hess_dense(dim)
    half = 0.5 * kappa * dt
    jac = (np.eye(dim)
           + _c2(half * m * ap / gns) * _outer(g, g)
           + _c2(half * (a - 1.0) / gns) * _outer(hp, g)
           + _c2(half * (a - 1.0) * m / gns) * hess)
    if not cv.const_grad_norm:
        hg = cv.hess_grad()
        jac = jac - _c2(2.0 * half * (a - 1.0) * m / gns ** 2) * _outer(hg, g)
    return jac


def _dense_jacobian_position(dim, dt, diff: DiffusionEval, p_half):
    cv = diff.cv
    gns = cv.grad_norm_sq
    kappa, a, ap = diff.kappa, diff.a, diff.a_prime
    g = cv.grad
    m = np.sum(g * p_half, axis=-1)
    hp = cv.hess_dot(p_half)
    hess = cv.hess_dense(dim)
    half = 0.5 * kappa * dt
    jac = (np.eye(dim)
           - _c2(half * m * ap / gns) * _outer(g, g)
           - _c2(half * (a - 1.0) / gns) * _outer(g, hp)
           - _c2(half * (a - 1.0) * m / gns) * hess)
    if not cv.const_grad_norm:
        hg = cv.hess_grad()
        jac = jac + _c2(2.0 * half * (a - 1.0) * m / gns ** 2) * _outer(g, hg)
    return jac


@dataclass
class GsvResult:
    """Endpoint of one reversibility-checked integration attempt.

    On any failure the result is the momentum-reversed input S(q, p) and
    status records the first check that failed."""

    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    grad: np.ndarray
    diff: DiffusionEval
    status: np.ndarray
    residual: np.ndarray


def gsv_forward(params, spec, q, p, grad_v, diff, dt, newton, dense=False):
    """One generalized Stormer-Verlet step (no reversibility check).

    Returns endpoint caches plus per-lane success masks of the two implicit
    solves.  The endpoint force is evaluated exactly once."""
    p_half, ok_mom = newton_momenta(params, dt, diff, grad_v, p, newton, dense)
    q_next, ok_pos, d_end = newton_position(params, spec, q, dt, diff, p_half,
                                            newton, dense)
    energy1, grad1 = system.energy_and_gradient(params, q_next)
    p1 = p_half - 0.5 * dt * grad_q_h_from(grad1, d_end, p_half)
    q1 = system.wrap_coords(q_next, params.box_len)
    return q1, p1, energy1, grad1, d_end, ok_mom, ok_pos


def gsv_rev(params, spec, state: PhaseState, dt, newton: NewtonParams,
            dense: bool = False) -> GsvResult:
    """Integrate forward, then backward from the momentum-reversed endpoint,
    and accept the flow only if the round trip returns to the start within
    tol_rev (positions compared with the minimum image)."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        q1, p1, e1, g1, d1, ok_fm, ok_fp = gsv_forward(
            params, spec, state.q, state.p, state.grad, state.diff, dt,
            newton, dense)
        q2, p2, _, _, _, ok_bm, ok_bp = gsv_forward(
            params, spec, q1, -p1, g1, d1, dt, newton, dense)
        dq = system.min_image(q2 - state.q, params.box_len)
        dp = -p2 - state.p
        residual = np.sqrt(np.sum(dq * dq, axis=-1) + np.sum(dp * dp, axis=-1))
    rev_ok = np.where(np.isnan(residual), False, residual < newton.tol_rev)
    ok_fm, ok_fp = np.asarray(ok_fm), np.asarray(ok_fp)
    ok_bm, ok_bp = np.asarray(ok_bm), np.asarray(ok_bp)

    status = np.select(
        [~ok_fm, ~ok_fp, ~ok_bm, ~ok_bp, ~rev_ok],
        [StepCause.FWD_MOMENTA, StepCause.FWD_POSITION,
         StepCause.BWD_MOMENTA, StepCause.BWD_POSITION,
         StepCause.REVERSIBILITY],
        default=StepCause.ACCEPTED).astype(np.int64)
    ok = status == StepCause.ACCEPTED

    diff = DiffusionEval(a=where_lanes(ok, d1.a, state.diff.a),
                         a_prime=where_lanes(ok, d1.a_prime, state.diff.a_prime),
                         kappa=state.diff.kappa,
                         cv=merge_cv(ok, d1.cv, state.diff.cv),
                         dim=params.dim)
    return GsvResult(q=where_lanes(ok, q1, state.q),
                     p=where_lanes(ok, p1, -state.p),
                     energy=where_lanes(ok, e1, state.energy),
                     grad=where_lanes(ok, g1, state.grad),
                     diff=diff, status=status, residual=residual)


def sample_momenta(beta, diff: DiffusionEval, rng, shape):
    """Draw p ~ N(0, (beta D)^-1) through the structured inverse root."""
    gauss = rng.standard_normal(shape)
    return diff.isqrt_dot(gauss) / np.sqrt(beta)


def ou_half_step(beta, diff: DiffusionEval, p, dt, gamma, gauss):
    """Midpoint rule for the momentum Ornstein-Uhlenbeck refresh over a
    half step, using the closed-form inverse on the two eigenspaces of D."""
    x_perp = 0.25 * dt * gamma * diff.kappa
    x_par = x_perp * diff.a
    noise = np.sqrt(gamma * dt / beta)
    pp = diff.proj.dot(p)
    pg = diff.proj.dot(gauss)
    c_perp = (1.0 - x_perp) / (1.0 + x_perp)
    f_perp = noise / (1.0 + x_perp)
    c_par = (1.0 - x_par) / (1.0 + x_par)
    f_par = noise / (1.0 + x_par)
    return (_bc(c_perp) * (p - pp) + _bc(c_par) * pp
            + _bc(f_perp) * (gauss - pg) + _bc(f_par) * pg)


def _bc(x):
    return np.asarray(x)[..., None] if np.ndim(x) else x


class RmhmcSampler:
    """Hamiltonian Monte Carlo with full momentum resampling under the
    position-dependent mass matrix D^-1."""

    def __init__(self, params, spec: DiffusionSpec, dt,
                 newton: NewtonParams | None = None,
                 dense_newton: bool = False):
        self.params = params
        self.spec = spec
        self.dt = dt
        self.newton = newton if newton is not None else NewtonParams()
        self.dense_newton = dense_newton

    def init_state(self, q, p=None) -> PhaseState:
        return make_phase_state(self.params, self.spec, q, p)

    def step(self, state: PhaseState, rng):
        p_t = sample_momenta(self.params.beta, state.diff, rng,
                             np.shape(state.q))
        cur = PhaseState(q=state.q, p=p_t, energy=state.energy,
                         grad=state.grad, cv=state.cv, diff=state.diff)
        out = gsv_rev(self.params, self.spec, cur, self.dt, self.newton,
                      self.dense_newton)
        h_cur = hamiltonian_from(self.params, cur.energy, cur.diff, p_t)
        h_out = hamiltonian_from(self.params, out.energy, out.diff, out.p)
        u = rng.uniform(size=np.shape(state.energy))
        with np.errstate(invalid="ignore", over="ignore"):
            log_r = -self.params.beta * (h_out - h_cur)
        acc = np.where(np.isnan(log_r), False, np.log(u) <= log_r)

        ok = out.status == StepCause.ACCEPTED
        moved = ok & acc
        cause = np.where(ok, np.where(acc, StepCause.ACCEPTED,
                                      StepCause.METROPOLIS), out.status)
        new = PhaseState(
            q=where_lanes(acc, out.q, cur.q),
            p=where_lanes(acc, out.p, cur.p),
            energy=where_lanes(acc, out.energy, cur.energy),
            grad=where_lanes(acc, out.grad, cur.grad),
            cv=None, diff=None,
            n_steps=state.n_steps + 1,
            n_accepted=state.n_accepted + (moved.astype(np.int64)
                                           if np.ndim(moved) else int(moved)))
        new.diff = DiffusionEval(
            a=where_lanes(acc, out.diff.a, cur.diff.a),
            a_prime=where_lanes(acc, out.diff.a_prime, cur.diff.a_prime),
            kappa=cur.diff.kappa,
            cv=merge_cv(acc, out.diff.cv, cur.diff.cv),
            dim=self.params.dim)
        new.cv = new.diff.cv
        return new, {"accepted": moved, "cause": cause,
                     "residual": out.residual}


class RmghmcSampler:
    """Generalized HMC: momenta survive between steps and are only
    partially refreshed by a midpoint Ornstein-Uhlenbeck half step on each
    side of the Hamiltonian move.  The momentum sign net-flips exactly when
    the proposal is rejected."""

    def __init__(self, params, spec: DiffusionSpec, dt, gamma: float = 1.0,
                 newton: NewtonParams | None = None,
                 dense_newton: bool = False):
        self.params = params
        self.spec = spec
        self.dt = dt
        self.gamma = gamma
        self.newton = newton if newton is not None else NewtonParams()
        self.dense_newton = dense_newton

    def init_state(self, q, rng=None, p=None) -> PhaseState:
        state = make_phase_state(self.params, self.spec, q, p)
        if p is None and rng is not None:
            state.p = sample_momenta(self.params.beta, state.diff, rng,
                                     np.shape(state.q))
        return state

    def step(self, state: PhaseState, rng):
        g1 = rng.standard_normal(np.shape(state.q))
        p_q = ou_half_step(self.params.beta, state.diff, state.p, self.dt,
                           self.gamma, g1)
        cur = PhaseState(q=state.q, p=p_q, energy=state.energy,
                         grad=state.grad, cv=state.cv, diff=state.diff)
        out = gsv_rev(self.params, self.spec, cur, self.dt, self.newton,
                      self.dense_newton)
        prop_p = -out.p
        h_cur = hamiltonian_from(self.params, cur.energy, cur.diff, p_q)
        h_prop = hamiltonian_from(self.params, out.energy, out.diff, prop_p)
        u = rng.uniform(size=np.shape(state.energy))
        with np.errstate(invalid="ignore", over="ignore"):
            log_r = -self.params.beta * (h_prop - h_cur)
        acc = np.where(np.isnan(log_r), False, np.log(u) <= log_r)

        ok = out.status == StepCause.ACCEPTED
        moved = ok & acc
        cause = np.where(ok, np.where(acc, StepCause.ACCEPTED,
                                      StepCause.METROPOLIS), out.status)
        diff_next = DiffusionEval(
            a=where_lanes(acc, out.diff.a, cur.diff.a),
            a_prime=where_lanes(acc, out.diff.a_prime, cur.diff.a_prime),
            kappa=cur.diff.kappa,
            cv=merge_cv(acc, out.diff.cv, cur.diff.cv),
            dim=self.params.dim)
        p_three = where_lanes(acc, prop_p, p_q)
        p_tilde = -p_three
        g2 = rng.standard_normal(np.shape(state.q))
        p_next = ou_half_step(self.params.beta, diff_next, p_tilde, self.dt,
                              self.gamma, g2)
        new = PhaseState(
            q=where_lanes(acc, out.q, cur.q),
            p=p_next,
            energy=where_lanes(acc, out.energy, cur.energy),
            grad=where_lanes(acc, out.grad, cur.grad),
            cv=diff_next.cv, diff=diff_next,
            n_steps=state.n_steps + 1,
            n_accepted=state.n_accepted + (moved.astype(np.int64)
                                           if np.ndim(moved) else int(moved)))
        return new, {"accepted": moved, "cause": cause,
                     "residual": out.residual}
