"""Render the benchmark figure types from dimermc CSV files.

Every renderer validates its input schema first, extracts plain data
series, draws with matplotlib and writes the image only after the data
passed validation, so a bad input never leaves a file behind.  The
extracted series are returned to the caller, which makes rendering a pure
function of the CSV contents (the tests rely on this)."""

import os
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .schemas import STACK_CATEGORIES, SchemaError, load_validated


@dataclass
class FigureSpec:
    kind: str
    inputs: list
    output: str
    options: dict = field(default_factory=dict)


def render(spec: FigureSpec):
    """Draw one figure; returns the plotted data series keyed by label."""
    try:
        handler = _HANDLERS[spec.kind]
    except KeyError:
        raise SchemaError(f"unknown figure kind {spec.kind!r}") from None
    series, draw = handler(spec)
    fig = plt.figure(figsize=(6.4, 4.4))
    try:
        ax = fig.add_subplot(1, 1, 1)
        draw(ax)
        fig.tight_layout()
        out_dir = os.path.dirname(os.path.abspath(spec.output))
        os.makedirs(out_dir, exist_ok=True)
        fig.savefig(spec.output, dpi=spec.options.get("dpi", 150))
    finally:
        plt.close(fig)
    return series


def _single_input(spec):
    if len(spec.inputs) != 1:
        raise SchemaError(f"{spec.kind} takes exactly one CSV input")
    return spec.inputs[0]


def _profile(spec):
    rows = load_validated("profile", _single_input(spec))
    z = np.array([float(r["z_center"]) for r in rows])
    v = np.array([float(r["value"]) for r in rows])
    series = {"z": z, "value": v}

    def draw(ax):
        ax.plot(z, v, lw=1.5)
        ax.set_xlabel(spec.options.get("xlabel", "collective variable"))
        ax.set_ylabel(spec.options.get("ylabel", "value"))
    return series, draw


def _tau_vs_dt(spec):
    rows = load_validated("tau-vs-dt", _single_input(spec))
    series = {}
    for r in rows:
        if r.get("failed", "0") not in ("0", "", "False"):
            continue
        tau = float(r["tau_hat"])
        if not np.isfinite(tau):
            continue
        key = float(r["alpha"])
        entry = series.setdefault(key, {"dt": [], "tau": [], "lo": [],
                                        "hi": []})
        entry["dt"].append(float(r["dt"]))
        entry["tau"].append(tau)
        entry["lo"].append(float(r["ci_low"]))
        entry["hi"].append(float(r["ci_high"]))
    if not series:
        raise SchemaError("no usable rows in the sweep table")
    for entry in series.values():
        order = np.argsort(entry["dt"])
        for k in entry:
            entry[k] = np.asarray(entry[k])[order]

    def draw(ax):
        for alpha in sorted(series):
            e = series[alpha]
            yerr = np.vstack([e["tau"] - e["lo"], e["hi"] - e["tau"]])
            ax.errorbar(e["dt"], e["tau"], yerr=np.maximum(yerr, 0.0),
                        marker="o", ms=3, capsize=2,
                        label=f"alpha={alpha:g}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("time step")
        ax.set_ylabel("mean iterations per transition")
        ax.legend(fontsize=8)
    return series, draw


def _tau_min_vs_alpha(spec):
    rows = load_validated("tau-min-vs-alpha", _single_input(spec))
    best = {}
    for r in rows:
        if r.get("failed", "0") not in ("0", "", "False"):
            continue
        tau = float(r["tau_hat"])
        if not np.isfinite(tau):
            continue
        a = float(r["alpha"])
        if a not in best or tau < best[a]:
            best[a] = tau
    if not best:
        raise SchemaError("no usable rows in the sweep table")
    alphas = np.array(sorted(best))
    taus = np.array([best[a] for a in alphas])
    series = {"alpha": alphas, "tau_star": taus}

    def draw(ax):
        ax.plot(alphas, taus, marker="o")
        ax.set_xlabel("alpha")
        ax.set_ylabel("best mean iterations per transition")
    return series, draw


def _cv_trace(spec):
    rows = load_validated("cv-trace", _single_input(spec))
    it = np.array([int(r["iteration"]) for r in rows])
    xi = np.array([float(r["xi"]) for r in rows])
    series = {"iteration": it, "xi": xi}

    def draw(ax):
        ax.plot(it, xi, lw=0.7)
        ax.set_xlabel("iteration")
        ax.set_ylabel("collective variable")
    return series, draw


def _snapshots(spec):
    rows = load_validated("free-energy-snapshots", _single_input(spec))
    series = {}
    for r in rows:
        it = int(r["iteration"])
        entry = series.setdefault(it, {"z": [], "value": []})
        entry["z"].append(float(r["z_center"]))
        entry["value"].append(float(r["value"]))
    for entry in series.values():
        order = np.argsort(entry["z"])
        entry["z"] = np.asarray(entry["z"])[order]
        entry["value"] = np.asarray(entry["value"])[order]

    def draw(ax):
        for it in sorted(series):
            e = series[it]
            ax.plot(e["z"], e["value"], lw=1.2, label=f"n={it}")
        ax.set_xlabel("collective variable")
        ax.set_ylabel("learned free energy")
        ax.legend(fontsize=8)
    return series, draw


def _rejection_stacked(spec):
    rows = load_validated("rejection-stacked", _single_input(spec))
    by_dt = {}
    global_pct = {}
    for r in rows:
        dt = float(r["dt"])
        cat = r["category"]
        if cat == "global":
            global_pct[dt] = float(r["percent"])
        elif cat in STACK_CATEGORIES:
            by_dt.setdefault(dt, {})[cat] = float(r["percent"])
        else:
            raise SchemaError(f"unknown rejection category {cat!r}")
    if not by_dt:
        raise SchemaError("no rejection rows to stack")
    dts = np.array(sorted(by_dt))
    layers = {cat: np.array([by_dt[dt].get(cat, 0.0) for dt in dts])
              for cat in STACK_CATEGORIES}
    series = {"dt": dts, "layers": layers,
              "global": np.array([global_pct.get(dt, np.nan) for dt in dts]),
              "bar_totals": np.sum([layers[c] for c in STACK_CATEGORIES],
                                   axis=0)}

    def draw(ax):
        bottom = np.zeros(len(dts))
        x = np.arange(len(dts))
        for cat in STACK_CATEGORIES:
            ax.bar(x, layers[cat], bottom=bottom, width=0.8,
                   label=cat.replace("_", " "))
            bottom += layers[cat]
        ax.set_xticks(x)
        ax.set_xticklabels([f"{dt:g}" for dt in dts], rotation=45,
                           fontsize=7)
        ax.set_xlabel("time step")
        ax.set_ylabel("rejection probability [%]")
        ax.legend(fontsize=7)
    return series, draw


_HANDLERS = {
    "profile": _profile,
    "tau-vs-dt": _tau_vs_dt,
    "tau-min-vs-alpha": _tau_min_vs_alpha,
    "cv-trace": _cv_trace,
    "free-energy-snapshots": _snapshots,
    "rejection-stacked": _rejection_stacked,
}
