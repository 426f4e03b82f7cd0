"""Render report figures next to the delimited outputs.

All functions take already-computed rows/curves, write a PNG, and return its
path.  The Agg backend keeps them usable headless; figures are a convenience
view of the CSV data, never the primary output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_CURVE_STYLE = {
    "bound": dict(color="tab:green", linestyle="-.", label="classical bound"),
    "classical_pc": dict(color="tab:red", linestyle=":", label="classical PC"),
    "quantum": dict(color="tab:blue", linestyle="-", label="twin-beam PC"),
}


def _finish(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def save_error_curves(rows, path, title: str | None = None) -> str:
    """Error probabilities of the three strategies against the reference tau."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    tau0 = [r.tau0 for r in rows]
    for key in ("bound", "classical_pc", "quantum"):
        ax.plot(tau0, [getattr(r, key) for r in rows], **_CURVE_STYLE[key])
    se = np.array([r.quantum_se for r in rows])
    if np.any(se > 0):
        q = np.array([r.quantum for r in rows])
        ax.fill_between(tau0, q - 2 * se, q + 2 * se, color="tab:blue", alpha=0.2)
    ax.set_xlabel(r"reference transmittance $\tau_0$")
    ax.set_ylabel("error probability")
    ax.set_ylim(bottom=0.0)
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_single_curve(x, y, xlabel, ylabel, path, title: str | None = None) -> str:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(x, y, color="tab:green")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_conditional_errors(n_grid, reports_by_probe, path, title: str | None = None) -> str:
    """False positive/negative probabilities versus signal photon number."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    colors = {"classical": "tab:red", "quantum": "tab:blue"}
    for probe_name, reports in reports_by_probe.items():
        color = colors.get(probe_name, None)
        ax.plot(
            n_grid,
            [r.false_positive for r in reports],
            color=color,
            linestyle="-",
            label=f"{probe_name} p01",
        )
        ax.plot(
            n_grid,
            [r.false_negative for r in reports],
            color=color,
            linestyle="--",
            label=f"{probe_name} p10",
        )
    ax.set_xlabel(r"signal photons $n_S$")
    ax.set_ylabel("conditional error probability")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_cost_curves(bias_grid, cost_by_probe, optima, path, title: str | None = None) -> str:
    """Cost against the decision bias, with the located optima marked."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    colors = {"classical": "tab:red", "quantum": "tab:blue"}
    for probe_name, curve in cost_by_probe.items():
        color = colors.get(probe_name, None)
        ax.plot(bias_grid, curve, color=color, label=probe_name)
        b_opt, c_opt = optima[probe_name]
        ax.plot([b_opt], [c_opt], marker="o", color=color)
    ax.set_xlabel("bias $b$")
    ax.set_ylabel("cost")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_optimal_bias(weights, bias_by_probe, path, title: str | None = None) -> str:
    """Optimal bias as a function of the false-negative cost weight."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    colors = {"classical": "tab:red", "quantum": "tab:blue"}
    for probe_name, biases in bias_by_probe.items():
        ax.plot(weights, biases, color=colors.get(probe_name), label=probe_name)
    ax.set_xlabel("false-negative weight $S$")
    ax.set_ylabel("optimal bias $b^*$")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_reweight_histograms(before, after, target, path, title: str | None = None) -> str:
    """Initial and reshaped transmittance histograms against the target density."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for hist, label, color in ((before, "initial", "tab:gray"), (after, "reshaped", "tab:blue")):
        edges = np.asarray(hist.edges)
        ax.stairs(hist.heights, edges, fill=True, alpha=0.45, color=color, label=label)
    lo = min(np.asarray(before.edges).min(), np.asarray(after.edges).min())
    hi = max(np.asarray(before.edges).max(), np.asarray(after.edges).max())
    taus = np.linspace(lo, hi, 400)
    ax.plot(taus, target.pdf(taus), color="tab:red", label="target")
    ax.set_xlabel(r"transmittance $\tau$")
    ax.set_ylabel("density")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)
