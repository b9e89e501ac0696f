"""Efficiency benchmark: mean transition times between the compact and
stretched dimer states, parameter sweeps and rejection-cause statistics.

Transition experiments advance a batch of independent chains and pool
their alternating first-entrance times; every cell of a sweep derives its
own seed from the base seed and the cell coordinates, so results are
deterministic regardless of execution order."""

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import system
from .diffusion import DiffusionOverflowError, DiffusionSpec
from .hmc import NewtonParams, RmghmcSampler, RmhmcSampler, StepCause
from .mala import AdaptiveMalaSampler, MalaSampler

REJECTION_CATEGORIES = ("fwd_momenta", "fwd_position", "bwd_momenta",
                        "bwd_position", "reversibility", "metropolis")


@dataclass(frozen=True)
class MetastableClassifier:
    """Compact state C0 = {xi < eta}, stretched state C1 = {xi > 1 - eta}."""

    eta: float = 0.1

    def __post_init__(self):
        if not 0 < self.eta < 0.5:
            raise ValueError("eta must lie strictly between 0 and 0.5")

    def classify(self, z):
        """0 in C0, 1 in C1, -1 in between."""
        z = np.asarray(z, dtype=float)
        return np.where(z < self.eta, 0, np.where(z > 1.0 - self.eta, 1, -1))


@dataclass
class TransitionResult:
    tau_hat: float
    ci_low: float
    ci_high: float
    samples: np.ndarray
    accept_rate: float
    n_iterations: int
    failed: bool = False


def run_transition_experiment(sampler, q0, k_target: int, seed: int,
                              n_chains: int = 1,
                              classifier: MetastableClassifier | None = None,
                              max_iterations: int | None = None,
                              init_kwargs: dict | None = None) -> TransitionResult:
    """Collect k_target alternating first-entrance times.

    All chains start from q0 with label 0 (compact).  Iterations are MH
    cycles: rejected proposals advance the clock too.  The 95% interval
    uses the normal approximation mean +- 1.96 s / sqrt(K)."""
    cls = classifier if classifier is not None else MetastableClassifier()
    rng = np.random.default_rng(seed)
    init_kwargs = init_kwargs or {}
    if n_chains > 1:
        q = np.tile(np.asarray(q0, dtype=float), (n_chains, 1))
    else:
        q = np.asarray(q0, dtype=float)
    state = sampler.init_state(q, **init_kwargs)

    theta = np.zeros(n_chains if n_chains > 1 else (), dtype=np.int64)
    counter = np.zeros_like(theta)
    samples: list[int] = []
    accepted = 0.0
    total = 0
    limit = max_iterations if max_iterations is not None else 200_000_000
    failed = False
    while len(samples) < k_target:
        try:
            state, info = sampler.step(state, rng)
        except (DiffusionOverflowError, FloatingPointError):
            failed = True
            break
        counter = counter + 1
        accepted += float(np.mean(info["accepted"]))
        total += 1
        z = state.cv.value
        entered = np.where(theta == 0, z > 1.0 - cls.eta, z < cls.eta)
        if np.any(entered):
            if np.ndim(entered):
                samples.extend(int(c) for c in counter[entered])
            else:
                samples.append(int(counter))
            theta = np.where(entered, 1 - theta, theta)
            counter = np.where(entered, 0, counter)
        if total * max(n_chains, 1) > limit:
            failed = True
            break

    arr = np.asarray(samples[:k_target], dtype=float)
    if arr.size == 0:
        return TransitionResult(float("nan"), float("nan"), float("nan"),
                                arr, 0.0, total, failed=True)
    tau = float(arr.mean())
    half = 1.96 * float(arr.std(ddof=1)) / np.sqrt(arr.size) if arr.size > 1 else 0.0
    return TransitionResult(tau, tau - half, tau + half, arr,
                            accepted / max(total, 1), total, failed=failed)


def default_dt_grid(scheme: str, n_points: int = 16) -> np.ndarray:
    """Per-scheme benchmark grids of time steps, log-spaced with exact
    endpoints."""
    bounds = {"mala": (1e-3, 5e-3),
              "adaptive-mala": (1e-3, 5e-3),
              "rmhmc": (5e-2, 1.5e-1),
              "rmghmc": (1e-2, 1e-1)}[scheme]
    return np.geomspace(bounds[0], bounds[1], n_points)


def default_alpha_beta_h_grid(scheme: str) -> np.ndarray:
    tops = {"mala": 3.1, "adaptive-mala": 3.1, "rmhmc": 1.5, "rmghmc": 2.4}
    return np.round(np.arange(0.0, tops[scheme] + 1e-9, 0.1), 10)


def make_sampler(scheme: str, params: system.SystemParams, alpha: float,
                 dt: float, spec_source=None, gamma: float = 1.0,
                 newton: NewtonParams | None = None, n_min: int = 100,
                 n_update: int = 20):
    """Build a sampler for one benchmark cell.

    spec_source is a callable (alpha -> DiffusionSpec) for the non-adaptive
    schemes (typically closing over reference profiles); adaptive MALA
    learns its own diffusion and ignores it."""
    if scheme == "adaptive-mala":
        return AdaptiveMalaSampler(params, alpha, dt, n_min=n_min,
                                   n_update=n_update)
    if spec_source is None:
        if alpha != 0.0:
            raise ValueError("non-adaptive schemes need reference profiles "
                             "for alpha != 0")
        spec = DiffusionSpec.identity(params.beta)
    else:
        spec = spec_source(alpha)
    if scheme == "mala":
        return MalaSampler(params, spec, dt)
    if scheme == "rmhmc":
        return RmhmcSampler(params, spec, dt, newton=newton)
    if scheme == "rmghmc":
        return RmghmcSampler(params, spec, dt, gamma=gamma, newton=newton)
    raise ValueError(f"unknown scheme {scheme!r}")


def cell_seed(base_seed: int, scheme: str, i_alpha: int, i_dt: int) -> int:
    """Deterministic per-cell seed derived from the cell coordinates."""
    tag = zlib.crc32(scheme.encode())
    ss = np.random.SeedSequence(entropy=base_seed,
                                spawn_key=(tag, i_alpha, i_dt))
    return int(ss.generate_state(1)[0])


@dataclass
class SweepResult:
    scheme: str
    rows: list = field(default_factory=list)

    def tau_table(self):
        return {(r["alpha"], r["dt"]): r["tau_hat"] for r in self.rows}

    def tau_star(self):
        """Minimum tau over the time-step grid for each alpha."""
        best = {}
        for r in self.rows:
            if r["failed"] or np.isnan(r["tau_hat"]):
                continue
            a = r["alpha"]
            if a not in best or r["tau_hat"] < best[a]:
                best[a] = r["tau_hat"]
        return best


def _profile_payload(spec_source):
    """Serializable stand-in for the reference-profile closure."""
    if spec_source is None:
        return None
    spec = spec_source(0.0)
    table = spec.table
    grid = table.grid
    return {"grid": (grid.z_min, grid.z_max, grid.n_bins),
            "f": np.asarray(table.f_vals), "fp": np.asarray(table.fp_vals),
            "beta": spec.beta, "sigma_unit": spec.sigma_unit}


def _payload_source(payload, dim):
    if payload is None:
        return None
    from .latent import LatentGrid, Profile
    grid = LatentGrid(*payload["grid"])
    fe = Profile(grid, payload["f"], outside="edge")
    fp = Profile(grid, payload["fp"], outside=0.0)

    def source(alpha):
        return DiffusionSpec.from_profiles(alpha, payload["beta"], fe, fp,
                                           dim=dim,
                                           sigma_unit=payload["sigma_unit"])
    return source


def _sweep_cell(job):
    (scheme, params, alpha, dt, k, seed, n_chains, gamma, max_iterations,
     payload, q0) = job
    spec_source = _payload_source(payload, params.dim)
    sampler = make_sampler(scheme, params, alpha, dt,
                           spec_source=spec_source, gamma=gamma)
    init_kwargs = {"rng": np.random.default_rng(seed ^ 0x9E3779B9)} \
        if scheme == "rmghmc" else None
    res = run_transition_experiment(sampler, q0, k, seed, n_chains=n_chains,
                                    max_iterations=max_iterations,
                                    init_kwargs=init_kwargs)
    return {"scheme": scheme, "alpha": alpha, "dt": dt,
            "tau_hat": res.tau_hat, "ci_low": res.ci_low,
            "ci_high": res.ci_high, "n_transitions": int(res.samples.size),
            "accept_rate": res.accept_rate, "failed": res.failed}


def sweep(scheme: str, params: system.SystemParams, alphas, dts, k: int,
          base_seed: int, spec_source=None, n_chains: int = 64,
          gamma: float = 1.0, max_iterations: int | None = None,
          q0=None, threads: int = 1) -> SweepResult:
    """tau_hat over the (alpha, dt) grid.

    Cells derive their seeds from the base seed and the cell coordinates,
    so the table is identical whether cells run inline or on a worker pool
    (threads > 1).  Cells failing with numerical overflow are recorded as
    failed instead of aborting the sweep."""
    q0 = system.lattice_config(params) if q0 is None else q0
    payload = _profile_payload(spec_source)
    jobs = []
    for i_a, alpha in enumerate(alphas):
        for i_t, dt in enumerate(dts):
            seed = cell_seed(base_seed, scheme, i_a, i_t)
            jobs.append((scheme, params, float(alpha), float(dt), k, seed,
                         n_chains, gamma, max_iterations, payload, q0))
    out = SweepResult(scheme=scheme)
    if threads > 1:
        import multiprocessing
        with multiprocessing.Pool(threads) as pool:
            out.rows = pool.map(_sweep_cell, jobs)
    else:
        out.rows = [_sweep_cell(job) for job in jobs]
    return out


@dataclass
class RejectionBreakdown:
    """Sequentially attributed causes over repeated one-step trials."""

    trials: int
    counts: dict

    @property
    def accepted(self) -> int:
        return self.counts["accepted"]

    def percent(self, category: str) -> float:
        return 100.0 * self.counts[category] / self.trials

    def global_percent(self) -> float:
        return 100.0 * (self.trials - self.counts["accepted"]) / self.trials

    def check_partition(self) -> bool:
        return sum(self.counts.values()) == self.trials


_CAUSE_KEYS = {StepCause.FWD_MOMENTA: "fwd_momenta",
               StepCause.FWD_POSITION: "fwd_position",
               StepCause.BWD_MOMENTA: "bwd_momenta",
               StepCause.BWD_POSITION: "bwd_position",
               StepCause.REVERSIBILITY: "reversibility",
               StepCause.METROPOLIS: "metropolis",
               StepCause.ACCEPTED: "accepted"}


def rejection_stats(scheme: str, params: system.SystemParams, alpha: float,
                    dt: float, trials: int, seed: int, spec_source=None,
                    gamma: float = 1.0, q0=None,
                    chunk: int = 20000) -> RejectionBreakdown:
    """Run `trials` independent single steps from q0 and attribute each
    outcome to the first check that rejected it."""
    if scheme not in ("rmhmc", "rmghmc"):
        raise ValueError("rejection decomposition applies to the "
                         "Hamiltonian schemes")
    q0 = system.lattice_config(params) if q0 is None else q0
    sampler = make_sampler(scheme, params, alpha, dt,
                           spec_source=spec_source, gamma=gamma)
    rng = np.random.default_rng(seed)
    counts = {k: 0 for k in _CAUSE_KEYS.values()}
    done = 0
    while done < trials:
        b = min(chunk, trials - done)
        q = np.tile(q0, (b, 1))
        init_kwargs = {"rng": rng} if scheme == "rmghmc" else {}
        state = sampler.init_state(q, **init_kwargs)
        _, info = sampler.step(state, rng)
        cause = np.asarray(info["cause"])
        for code, key in _CAUSE_KEYS.items():
            counts[key] += int(np.sum(cause == int(code)))
        done += b
    return RejectionBreakdown(trials=trials, counts=counts)


def fit_loglog_slope(dts, taus) -> float:
    """Least-squares slope of log tau against log dt."""
    x = np.log(np.asarray(dts, dtype=float))
    y = np.log(np.asarray(taus, dtype=float))
    x = x - x.mean()
    return float(np.sum(x * (y - y.mean())) / np.sum(x * x))
