"""Command-line front end.

Subcommands: ti (reference profiles via thermodynamic integration), sample
(one trajectory with diagnostics), bench (transition-time sweeps), reject
(rejection-cause decomposition).  All defaults reproduce the dimer
benchmark preset; a key=value config file with sections can override them
and command-line flags override both.  Exit codes: 0 success, 2
configuration error, 3 numerical failure."""

import argparse
import configparser
import os
import sys

import numpy as np

from . import csvio, system
from .diffusion import DiffusionOverflowError, DiffusionSpec
from .harness import (REJECTION_CATEGORIES, default_alpha_beta_h_grid,
                      default_dt_grid, make_sampler, rejection_stats, sweep)
from .hmc import NewtonParams, StepCause, hamiltonian_from
from .latent import LatentGrid
from .mala import AdaptiveMalaSampler
from .ti import TiConfig, ti_run


class ConfigError(ValueError):
    pass


PRESET = {
    "system": {"n_particles": "16", "density": "0.7", "beta": "1.0"},
    "grid": {"z_min": "-0.2", "z_max": "1.225", "n_bins": "100"},
    "sampler": {"dt": "2.6e-3", "alpha_beta_h": "0.0", "gamma": "1.0",
                "n_min": "100", "n_update": "20",
                "newton_max_iter": "100", "newton_tol_cauchy": "1e-12",
                "newton_tol_root": "1e-12", "newton_tol_rev": "1e-6"},
    "ti": {"dt": "2.5e-5", "sim_time_per_level": "125.0",
           "burn_frac": "0.05", "n_walkers": "1", "max_drift": ""},
    "bench": {"k": "100000", "chains": "64"},
}


def load_config(path=None):
    cfg = configparser.ConfigParser()
    cfg.read_dict(PRESET)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cfg.read(path)
    return cfg


def build_params(cfg) -> system.SystemParams:
    sec = cfg["system"]
    try:
        n = sec.getint("n_particles")
        beta = sec.getfloat("beta")
        if sec.get("box_len", "").strip():
            return system.SystemParams(n_particles=n, beta=beta,
                                       box_len=sec.getfloat("box_len"))
        return system.SystemParams.benchmark(
            n_particles=n, density=sec.getfloat("density"), beta=beta)
    except ValueError as exc:
        raise ConfigError(f"invalid system section: {exc}") from exc


def build_grid(cfg) -> LatentGrid:
    sec = cfg["grid"]
    try:
        return LatentGrid(z_min=sec.getfloat("z_min"),
                          z_max=sec.getfloat("z_max"),
                          n_bins=sec.getint("n_bins"))
    except ValueError as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc


def build_newton(cfg) -> NewtonParams:
    sec = cfg["sampler"]
    return NewtonParams(max_iter=sec.getint("newton_max_iter"),
                        tol_cauchy=sec.getfloat("newton_tol_cauchy"),
                        tol_root=sec.getfloat("newton_tol_root"),
                        tol_rev=sec.getfloat("newton_tol_rev"))


def cfg_fingerprint(cfg, args) -> str:
    """Hash of the semantic run configuration.

    Output and config-file paths are excluded so identical runs emitted to
    different directories produce byte-identical files."""
    items = []
    for sec in cfg.sections():
        for key, val in sorted(cfg[sec].items()):
            items.append(f"{sec}.{key}={val}")
    skip = {"func", "out", "config"}
    items.extend(f"arg.{k}={v}" for k, v in sorted(vars(args).items())
                 if k not in skip)
    return csvio.config_hash(";".join(items))


def ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def load_spec_source(args, cfg, params, need_profiles: bool):
    """Reference-profile loader shared by sample/bench/reject.

    Returns a callable alpha -> DiffusionSpec, or None when running with
    the constant identity diffusion (alpha = 0, no profiles given)."""
    prof_dir = getattr(args, "profiles", None)
    if prof_dir is None:
        if need_profiles:
            raise ConfigError(
                "this scheme modulates the diffusion with reference "
                "profiles: run `dimermc ti` first and pass --profiles, or "
                "use --scheme adaptive-mala")
        return None
    fp_path = os.path.join(prof_dir, "mean_force.csv")
    fe_path = os.path.join(prof_dir, "free_energy.csv")
    for p in (fp_path, fe_path):
        if not os.path.exists(p):
            raise ConfigError(f"missing profile file: {p}")
    mean_force = csvio.read_profile(fp_path, outside=0.0)
    free_energy = csvio.read_profile(fe_path, outside="edge")

    def source(alpha: float) -> DiffusionSpec:
        return DiffusionSpec.from_profiles(alpha, params.beta, free_energy,
                                           mean_force, dim=params.dim)
    return source


def cmd_ti(args, cfg):
    params = build_params(cfg)
    grid = build_grid(cfg)
    sec = cfg["ti"]
    if args.max_drift is not None:
        max_drift = str(args.max_drift)
    else:
        max_drift = sec.get("max_drift", "").strip()
    ti_cfg = TiConfig(grid=grid,
                      dt=args.dt if args.dt is not None else sec.getfloat("dt"),
                      sim_time_per_level=args.time_per_level
                      if args.time_per_level is not None
                      else sec.getfloat("sim_time_per_level"),
                      burn_frac=sec.getfloat("burn_frac"),
                      n_walkers=args.walkers if args.walkers is not None
                      else sec.getint("n_walkers"),
                      seed=args.seed,
                      max_drift=float(max_drift) if max_drift else None)
    result = ti_run(params, ti_cfg)
    out = ensure_outdir(args.out)
    h = cfg_fingerprint(cfg, args)
    csvio.write_profile(os.path.join(out, "mean_force.csv"),
                        result.mean_force, seed=args.seed, cfg_hash=h)
    csvio.write_profile(os.path.join(out, "free_energy.csv"),
                        result.free_energy, seed=args.seed, cfg_hash=h)
    print(f"wrote {out}/mean_force.csv and {out}/free_energy.csv "
          f"({grid.n_bins} bins)")
    return 0


def _resolve_alpha(args, params) -> float:
    if args.alpha is not None and args.alpha_beta_h is not None:
        raise ConfigError("give either --alpha or --alpha-beta-h, not both")
    if args.alpha is not None:
        return args.alpha
    if args.alpha_beta_h is not None:
        return args.alpha_beta_h / (params.beta * params.barrier_h)
    return 0.0


def cmd_sample(args, cfg):
    params = build_params(cfg)
    grid = build_grid(cfg)
    sec = cfg["sampler"]
    dt = args.dt if args.dt is not None else sec.getfloat("dt")
    alpha = _resolve_alpha(args, params)
    newton = build_newton(cfg)
    adaptive = args.scheme == "adaptive-mala"
    need_profiles = (alpha != 0.0) and not adaptive
    spec_source = load_spec_source(args, cfg, params, need_profiles)

    if adaptive:
        sampler = AdaptiveMalaSampler(params, alpha, dt, grid=grid,
                                      n_min=sec.getint("n_min"),
                                      n_update=sec.getint("n_update"),
                                      freeze_after=args.freeze_after)
    else:
        sampler = make_sampler(args.scheme, params, alpha, dt,
                               spec_source=spec_source,
                               gamma=sec.getfloat("gamma"), newton=newton)

    rng = np.random.default_rng(args.seed)
    q0 = system.lattice_config(params)
    kinetic = args.scheme in ("rmhmc", "rmghmc")
    init_kwargs = {"rng": rng} if args.scheme == "rmghmc" else {}
    state = sampler.init_state(q0, **init_kwargs)

    rows = []
    snapshots = []
    for it in range(1, args.steps + 1):
        state, info = sampler.step(state, rng)
        if it % args.stride == 0:
            z = float(state.cv.value)
            if kinetic:
                ham = float(hamiltonian_from(params, state.energy,
                                             state.diff, state.p))
                rows.append((it, f"{z:.9g}", f"{ham:.9g}",
                             StepCause(int(info["cause"])).name.lower()))
            else:
                rows.append((it, f"{z:.9g}", f"{float(state.energy):.9g}",
                             int(bool(info["accepted"])),
                             int(grid.bin_index(z))))
        if adaptive and args.snapshot_every and it % args.snapshot_every == 0:
            snap = sampler.snapshot_profiles()
            for b, (zc, val) in enumerate(zip(grid.centers,
                                              snap["free_energy"])):
                snapshots.append((it, b, f"{zc:.9g}", f"{float(val):.9g}"))

    out = ensure_outdir(args.out)
    h = cfg_fingerprint(cfg, args)
    header = csvio.KINETIC_COLUMNS if kinetic else csvio.TRAJECTORY_COLUMNS
    csvio.write_csv(os.path.join(out, "trajectory.csv"), header, rows,
                    seed=args.seed, cfg_hash=h)
    print(f"wrote {out}/trajectory.csv ({len(rows)} rows)")
    if snapshots:
        csvio.write_csv(os.path.join(out, "snapshots.csv"),
                        csvio.SNAPSHOT_COLUMNS, snapshots,
                        seed=args.seed, cfg_hash=h)
        print(f"wrote {out}/snapshots.csv")
    return 0


def cmd_bench(args, cfg):
    params = build_params(cfg)
    sec = cfg["bench"]
    k = args.k if args.k is not None else sec.getint("k")
    if args.quick:
        k = min(k, 2000)
    alpha_bh = np.array([float(x) for x in args.alpha_beta_h.split(",")]) \
        if args.alpha_beta_h else default_alpha_beta_h_grid(args.scheme)
    dts = np.array([float(x) for x in args.dts.split(",")]) \
        if args.dts else default_dt_grid(args.scheme)
    alphas = alpha_bh / (params.beta * params.barrier_h)
    need_profiles = args.scheme != "adaptive-mala" and np.any(alphas != 0)
    spec_source = load_spec_source(args, cfg, params, need_profiles)
    result = sweep(args.scheme, params, alphas, dts, k, args.seed,
                   spec_source=spec_source,
                   n_chains=args.chains if args.chains is not None
                   else sec.getint("chains"),
                   gamma=cfg["sampler"].getfloat("gamma"),
                   max_iterations=args.max_iterations,
                   threads=args.threads)
    out = ensure_outdir(args.out)
    rows = [(r["scheme"], f"{r['alpha']:.9g}", f"{r['dt']:.9g}",
             f"{r['tau_hat']:.9g}", f"{r['ci_low']:.9g}",
             f"{r['ci_high']:.9g}", r["n_transitions"],
             f"{r['accept_rate']:.6g}", int(r["failed"]))
            for r in result.rows]
    csvio.write_csv(os.path.join(out, "sweep.csv"), csvio.SWEEP_COLUMNS,
                    rows, seed=args.seed, cfg_hash=cfg_fingerprint(cfg, args))
    print(f"wrote {out}/sweep.csv ({len(rows)} cells)")
    return 0


def cmd_reject(args, cfg):
    params = build_params(cfg)
    alpha = _resolve_alpha(args, params)
    need_profiles = alpha != 0.0
    spec_source = load_spec_source(args, cfg, params, need_profiles)
    stats = rejection_stats(args.scheme, params, alpha, args.dt, args.trials,
                            args.seed, spec_source=spec_source,
                            gamma=cfg["sampler"].getfloat("gamma"))
    out = ensure_outdir(args.out)
    rows = []
    for cat in REJECTION_CATEGORIES:
        rows.append((args.scheme, f"{alpha:.9g}", f"{args.dt:.9g}", cat,
                     stats.counts[cat], f"{stats.percent(cat):.9g}"))
    rows.append((args.scheme, f"{alpha:.9g}", f"{args.dt:.9g}", "global",
                 stats.trials - stats.accepted,
                 f"{stats.global_percent():.9g}"))
    csvio.write_csv(os.path.join(out, "rejections.csv"),
                    csvio.REJECTION_COLUMNS, rows, seed=args.seed,
                    cfg_hash=cfg_fingerprint(cfg, args))
    print(f"wrote {out}/rejections.csv")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="dimermc",
                                 description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config",
                        help="key=value config file with sections")
    sub = ap.add_subparsers(dest="command", required=True)

    p_ti = sub.add_parser("ti", parents=[common],
                          help="reference profiles by thermodynamic "
                               "integration")
    p_ti.add_argument("--out", required=True)
    p_ti.add_argument("--seed", type=int, default=0)
    p_ti.add_argument("--dt", type=float)
    p_ti.add_argument("--time-per-level", type=float)
    p_ti.add_argument("--walkers", type=int)
    p_ti.add_argument("--max-drift", type=float,
                      help="cap each drift component; guards the explicit "
                           "scheme against force spikes at large dt")
    p_ti.set_defaults(func=cmd_ti)

    p_s = sub.add_parser("sample", parents=[common],
                         help="run one chain and emit diagnostics")
    p_s.add_argument("--scheme", required=True,
                     choices=["mala", "adaptive-mala", "rmhmc", "rmghmc"])
    p_s.add_argument("--steps", type=int, default=10000)
    p_s.add_argument("--dt", type=float)
    p_s.add_argument("--alpha", type=float)
    p_s.add_argument("--alpha-beta-h", type=float)
    p_s.add_argument("--profiles", help="directory with mean_force.csv and "
                                        "free_energy.csv")
    p_s.add_argument("--stride", type=int, default=10)
    p_s.add_argument("--snapshot-every", type=int, default=0)
    p_s.add_argument("--freeze-after", type=int)
    p_s.add_argument("--out", required=True)
    p_s.add_argument("--seed", type=int, default=0)
    p_s.set_defaults(func=cmd_sample)

    p_b = sub.add_parser("bench", parents=[common],
                         help="transition-time sweep")
    p_b.add_argument("--scheme", required=True,
                     choices=["mala", "adaptive-mala", "rmhmc", "rmghmc"])
    p_b.add_argument("--k", type=int)
    p_b.add_argument("--quick", action="store_true",
                     help="scale the transition count down to 2000")
    p_b.add_argument("--alpha-beta-h", help="comma-separated grid")
    p_b.add_argument("--dts", help="comma-separated grid")
    p_b.add_argument("--chains", type=int)
    p_b.add_argument("--threads", type=int, default=1,
                     help="worker processes for sweep cells")
    p_b.add_argument("--max-iterations", type=int)
    p_b.add_argument("--profiles")
    p_b.add_argument("--out", required=True)
    p_b.add_argument("--seed", type=int, default=0)
    p_b.set_defaults(func=cmd_bench)

    p_r = sub.add_parser("reject", parents=[common],
                         help="rejection-cause decomposition")
    p_r.add_argument("--scheme", default="rmhmc",
                     choices=["rmhmc", "rmghmc"])
    p_r.add_argument("--alpha", type=float)
    p_r.add_argument("--alpha-beta-h", type=float)
    p_r.add_argument("--dt", type=float, required=True)
    p_r.add_argument("--trials", type=int, default=1000000)
    p_r.add_argument("--profiles")
    p_r.add_argument("--out", required=True)
    p_r.add_argument("--seed", type=int, default=0)
    p_r.set_defaults(func=cmd_reject)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None))
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DiffusionOverflowError, system.SingularCvError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
