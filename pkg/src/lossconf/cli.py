"""Batch driver: every computation as a subcommand with reproducible configs.

Subcommands: ``bound``, ``sweep``, ``cost``, ``simulate``, ``reweight``.
Each takes a JSON config (``--config``), dotted-path overrides
(``--set key.sub=value``) and a few common flags.  Every run writes its
resolved config to ``<basename>.config.json`` next to the outputs; re-running
from that sidecar reproduces the outputs byte for byte, independent of
``--threads``.  Curves land in CSV (header row, ``.`` decimal), reports in
JSON with stable key order.  ``--plot`` additionally renders PNG figures of
the same data.

Exit codes: 0 all computations completed, 1 a computation signaled an error
(machine-readable JSON on stderr), 2 invalid usage or config.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import distributions
from .decision import CostSpec, DecisionRule, conditional_errors, cost, optimize_bias
from .errors import ConfigError, LossconfError
from .monte_carlo import DEFAULT_FRAMES_PER_TAU, estimate_error_frequencies, sample_process
from .photon_statistics import (
    ClassicalPoisson,
    TmsvPairSource,
    detection_from_config,
    probe_from_config,
    process_count_distribution,
)
from .reweighting import (
    EmpiricalDataset,
    build_histogram,
    optimize_weights,
    resample,
    reweighted_histogram,
    synthesize_dataset,
)
from .strategies import (
    GAUSSIAN_APPROX,
    _required_joint_cutoff,
    classical_bound,
    sweep_error_curves,
)

OUTPUT_DIR_ENV = "LOSSCONF_OUTDIR"

DEFAULTS = {
    "bound": {
        "mean_photons": 1e4,
        "defective": {"kind": "gaussian", "mean": 0.96, "sigma": 0.002},
        "tau0_grid": {"start": 0.92, "stop": 1.0, "count": 21},
        "seed": 0,
        "output": {"dir": None, "basename": "bound"},
    },
    "sweep": {
        "mean_photons": 1e4,
        "defective": {"kind": "gaussian", "mean": 0.96, "sigma": 0.002},
        "detection": {"eta_signal": 1.0, "eta_idler": 1.0, "dark_counts": 0.0},
        "tau0_grid": {"start": 0.92, "stop": 1.0, "count": 21},
        "quantum_mode": GAUSSIAN_APPROX,
        "classical_mode": "closed-form",
        "mc_samples": 100_000,
        "seed": 0,
        "output": {"dir": None, "basename": "sweep"},
    },
    "cost": {
        "mean_photons": 500.0,
        "tau0": 0.8,
        "defective": {"kind": "uniform", "mean": 0.9, "half_width": 0.09},
        "detection": {"eta_signal": 1.0, "eta_idler": 1.0, "dark_counts": 0.0},
        "bias": 0.6,
        "false_negative_weight": 0.25,
        "photon_grid": {"start": 100.0, "stop": 900.0, "count": 5},
        "bias_grid": {"start": -1.0, "stop": 1.0, "count": 201},
        "weight_grid": {"start": 0.1, "stop": 0.9, "count": 9},
        "seed": 0,
        "output": {"dir": None, "basename": "cost"},
    },
    "simulate": {
        "probe": {"kind": "tmsv", "mean_pairs": 100.0},
        "detection": {"eta_signal": 1.0, "eta_idler": 1.0, "dark_counts": 0.0},
        "reference": {"kind": "delta", "tau0": 0.95},
        "defective": {"kind": "uniform", "mean": 0.9, "half_width": 0.05},
        "bias": 0.0,
        "samples": DEFAULT_FRAMES_PER_TAU,
        "save_records": False,
        "seed": 0,
        "output": {"dir": None, "basename": "simulate"},
    },
    "reweight": {
        "dataset": {
            "synthetic": {
                "n_values": 100,
                "frames_per_value": 500,
                "coverage": 0.9995,
                "probe": {"kind": "classical", "mean_photons": 10.0},
                "detection": {"eta_signal": 1.0, "eta_idler": 1.0, "dark_counts": 0.0},
            }
        },
        "target": {"kind": "gaussian", "mean": 0.65, "sigma": 0.1},
        "sample_budget": 10_000,
        "threshold": 0.9,
        "bins": None,
        "save_resampled": True,
        "seed": 0,
        "output": {"dir": None, "basename": "reweight"},
    },
}


# -- config plumbing ---------------------------------------------------------


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _apply_override(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override must look like key.path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    keys = path.split(".")
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


def resolve_config(command: str, args) -> dict:
    config = json.loads(json.dumps(DEFAULTS[command]))  # deep copy
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        loaded.pop("command", None)
        loaded.pop("outputs", None)
        config = _deep_merge(config, loaded)
    for assignment in args.set or []:
        _apply_override(config, assignment)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["output"]["dir"] = args.out
    if args.basename is not None:
        config["output"]["basename"] = args.basename
    if config["output"]["dir"] is None:
        config["output"]["dir"] = os.environ.get(OUTPUT_DIR_ENV, ".")
    return config


def _grid(spec, name: str) -> list[float]:
    if isinstance(spec, (list, tuple)):
        values = [float(v) for v in spec]
    elif isinstance(spec, dict):
        try:
            count = int(spec["count"])
            if count < 1:
                raise ConfigError(f"{name}: count must be >= 1")
            values = np.linspace(float(spec["start"]), float(spec["stop"]), count).tolist()
        except KeyError as exc:
            raise ConfigError(f"{name}: grid needs start/stop/count") from exc
    else:
        raise ConfigError(f"{name}: expected list or start/stop/count mapping")
    if not values:
        raise ConfigError(f"{name}: grid is empty")
    return values


def _out_paths(config: dict, command: str):
    out_dir = Path(config["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    base = out_dir / config["output"]["basename"]
    return out_dir, base


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_sidecar(base: Path, command: str, config: dict, outputs: list[str]) -> Path:
    sidecar = base.with_suffix(".config.json")
    payload = dict(config)
    payload["command"] = command
    payload["outputs"] = sorted(outputs)
    _write_json(sidecar, payload)
    return sidecar


def _map_ordered(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# -- subcommands -------------------------------------------------------------


def run_bound(config: dict, threads: int, plot: bool) -> list[str]:
    defective = distributions.from_config(config["defective"])
    grid = _grid(config["tau0_grid"], "tau0_grid")
    mean_photons = float(config["mean_photons"])

    def one(tau0: float):
        pair = distributions.ProcessPair(distributions.Delta(tau0), defective)
        return (tau0, classical_bound(pair, mean_photons).value)

    rows = _map_ordered(one, grid, threads)
    _, base = _out_paths(config, "bound")
    csv_path = base.with_suffix(".csv")
    _write_csv(csv_path, ["tau0", "C"], rows)
    outputs = [str(csv_path)]
    if plot:
        from . import plotting

        outputs.append(
            plotting.save_single_curve(
                [r[0] for r in rows],
                [r[1] for r in rows],
                r"reference transmittance $\tau_0$",
                "classical bound",
                base.with_suffix(".png"),
            )
        )
    _write_sidecar(base, "bound", config, outputs)
    return outputs


def run_sweep(config: dict, threads: int, plot: bool) -> list[str]:
    defective = distributions.from_config(config["defective"])
    det = detection_from_config(config["detection"])
    grid = _grid(config["tau0_grid"], "tau0_grid")
    rows = sweep_error_curves(
        defective,
        grid,
        float(config["mean_photons"]),
        det,
        quantum_mode=config["quantum_mode"],
        classical_mode=config["classical_mode"],
        mc_samples=int(config["mc_samples"]),
        seed=int(config["seed"]),
        threads=threads,
    )
    _, base = _out_paths(config, "sweep")
    csv_path = base.with_suffix(".csv")
    _write_csv(
        csv_path,
        ["tau0", "C", "Cpc", "Q", "Q_se", "C_method", "Cpc_method", "Q_method"],
        [
            (
                r.tau0,
                r.bound,
                r.classical_pc,
                r.quantum,
                r.quantum_se,
                r.bound_method,
                r.classical_pc_method,
                r.quantum_method,
            )
            for r in rows
        ],
    )
    outputs = [str(csv_path)]
    if plot:
        from . import plotting

        outputs.append(plotting.save_error_curves(rows, base.with_suffix(".png")))
    _write_sidecar(base, "sweep", config, outputs)
    return outputs


def _cost_lattices(mean_photons, tau0, defective, det):
    reference = distributions.Delta(tau0)
    classical_probe = ClassicalPoisson(mean_photons)
    quantum_probe = TmsvPairSource(mean_photons)
    from .photon_statistics import _classical_cutoff, marginal_compound

    n_eff = mean_photons * det.eta_signal
    c_cut = max(
        _classical_cutoff(n_eff, reference, det.dark_counts),
        _classical_cutoff(n_eff, defective, det.dark_counts),
    )
    c0 = marginal_compound(classical_probe, reference, det, c_cut)
    c1 = marginal_compound(classical_probe, defective, det, c_cut)
    q_cut = max(
        _required_joint_cutoff(quantum_probe, det, reference),
        _required_joint_cutoff(quantum_probe, det, defective),
    )
    q0 = process_count_distribution(quantum_probe, reference, det, q_cut)
    q1 = process_count_distribution(quantum_probe, defective, det, q_cut)
    return (c0, c1), (q0, q1)


def run_cost(config: dict, threads: int, plot: bool) -> list[str]:
    defective = distributions.from_config(config["defective"])
    det = detection_from_config(config["detection"])
    tau0 = float(config["tau0"])
    bias = float(config["bias"])
    spec = CostSpec(float(config["false_negative_weight"]))
    photon_grid = _grid(config["photon_grid"], "photon_grid")
    bias_grid = np.asarray(_grid(config["bias_grid"], "bias_grid"))
    weight_grid = _grid(config["weight_grid"], "weight_grid")
    _, base = _out_paths(config, "cost")
    outputs = []

    def errors_at(n: float):
        (c0, c1), (q0, q1) = _cost_lattices(n, tau0, defective, det)
        row = []
        for b in (0.0, bias):
            rule = DecisionRule(b)
            row.append((conditional_errors(c0, c1, rule), conditional_errors(q0, q1, rule)))
        return row

    per_photon = _map_ordered(errors_at, photon_grid, threads)
    errors_rows = []
    for n, blocks in zip(photon_grid, per_photon):
        for b, (cla, qua) in zip((0.0, bias), blocks):
            errors_rows.append(
                (
                    n,
                    b,
                    cla.false_positive,
                    cla.false_negative,
                    cla.error_probability,
                    qua.false_positive,
                    qua.false_negative,
                    qua.error_probability,
                )
            )
    errors_csv = base.parent / f"{base.name}_errors_vs_photons.csv"
    _write_csv(
        errors_csv,
        ["n_signal", "bias", "cla_p01", "cla_p10", "cla_p_err", "qua_p01", "qua_p10", "qua_p_err"],
        errors_rows,
    )
    outputs.append(str(errors_csv))

    (c0, c1), (q0, q1) = _cost_lattices(float(config["mean_photons"]), tau0, defective, det)

    def _optimize(p0, p1, w_spec):
        if bias_grid.size >= 3:
            return optimize_bias(p0, p1, w_spec, bias_grid)
        # too few points to optimize: evaluate the curve as-is and advise
        from .decision import BiasOptimization

        curve = [
            cost(conditional_errors(p0, p1, DecisionRule(float(b))), w_spec)
            for b in bias_grid
        ]
        best = int(np.argmin(curve))
        return BiasOptimization(
            bias=float(bias_grid[best]),
            cost=float(curve[best]),
            bias_grid=tuple(float(b) for b in bias_grid),
            cost_curve=tuple(curve),
            false_positive_curve=(),
            false_negative_curve=(),
            unimodal=True,
            advisory="degenerate-bias-grid",
        )

    cla_opt = _optimize(c0, c1, spec)
    qua_opt = _optimize(q0, q1, spec)
    curve_csv = base.parent / f"{base.name}_cost_vs_bias.csv"
    _write_csv(
        curve_csv,
        ["bias", "cla_cost", "qua_cost"],
        list(zip(cla_opt.bias_grid, cla_opt.cost_curve, qua_opt.cost_curve)),
    )
    outputs.append(str(curve_csv))

    def optimum_at(weight: float):
        w_spec = CostSpec(weight)
        return (_optimize(c0, c1, w_spec), _optimize(q0, q1, w_spec))

    per_weight = _map_ordered(optimum_at, weight_grid, threads)
    weight_csv = base.parent / f"{base.name}_optimal_bias.csv"
    _write_csv(
        weight_csv,
        ["weight", "cla_bias_opt", "cla_cost_opt", "qua_bias_opt", "qua_cost_opt"],
        [
            (w, cla.bias, cla.cost, qua.bias, qua.cost)
            for w, (cla, qua) in zip(weight_grid, per_weight)
        ],
    )
    outputs.append(str(weight_csv))

    report = {
        "false_negative_weight": spec.false_negative_weight,
        "classical": {
            "bias_opt": cla_opt.bias,
            "cost_opt": cla_opt.cost,
            "unimodal": cla_opt.unimodal,
            "advisory": cla_opt.advisory,
        },
        "quantum": {
            "bias_opt": qua_opt.bias,
            "cost_opt": qua_opt.cost,
            "unimodal": qua_opt.unimodal,
            "advisory": qua_opt.advisory,
        },
    }
    json_path = base.with_suffix(".json")
    _write_json(json_path, report)
    outputs.append(str(json_path))

    if plot:
        from . import plotting

        outputs.append(
            plotting.save_cost_curves(
                cla_opt.bias_grid,
                {"classical": cla_opt.cost_curve, "quantum": qua_opt.cost_curve},
                {
                    "classical": (cla_opt.bias, cla_opt.cost),
                    "quantum": (qua_opt.bias, qua_opt.cost),
                },
                base.parent / f"{base.name}_cost_vs_bias.png",
            )
        )
        for b, tag in ((0.0, "ml"), (bias, "biased")):
            idx = 0 if tag == "ml" else 1
            outputs.append(
                plotting.save_conditional_errors(
                    photon_grid,
                    {
                        "classical": [blocks[idx][0] for blocks in per_photon],
                        "quantum": [blocks[idx][1] for blocks in per_photon],
                    },
                    base.parent / f"{base.name}_errors_{tag}.png",
                    title=f"bias = {b}",
                )
            )
        outputs.append(
            plotting.save_optimal_bias(
                weight_grid,
                {
                    "classical": [cla.bias for cla, _ in per_weight],
                    "quantum": [qua.bias for _, qua in per_weight],
                },
                base.parent / f"{base.name}_optimal_bias.png",
            )
        )
    _write_sidecar(base, "cost", config, outputs)
    return outputs


def run_simulate(config: dict, threads: int, plot: bool) -> list[str]:
    probe = probe_from_config(config["probe"])
    det = detection_from_config(config["detection"])
    reference = distributions.from_config(config["reference"])
    defective = distributions.from_config(config["defective"])
    samples = int(config["samples"])
    seed = int(config["seed"])
    rule = DecisionRule(float(config["bias"]))

    if isinstance(probe, TmsvPairSource):
        from .strategies import MC_LIKELIHOOD_CELLS

        cutoff = max(
            _required_joint_cutoff(probe, det, reference),
            _required_joint_cutoff(probe, det, defective),
        )
        feasible = (cutoff + 1) ** 2 <= MC_LIKELIHOOD_CELLS
    else:
        feasible = True
    if feasible:
        lik0 = process_count_distribution(probe, reference, det)
        lik1 = process_count_distribution(probe, defective, det)
    else:
        from .photon_statistics import gaussian_moments

        lik0 = gaussian_moments(probe, reference, det)
        lik1 = gaussian_moments(probe, defective, det)

    seq = np.random.SeedSequence(entropy=seed)
    seed0, seed1 = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
    records0 = sample_process(probe, det, reference, samples, seed0)
    records1 = sample_process(probe, det, defective, samples, seed1)
    report = estimate_error_frequencies(records0, records1, lik0, lik1, rule)

    _, base = _out_paths(config, "simulate")
    json_path = base.with_suffix(".json")
    _write_json(json_path, report.to_json_dict())
    outputs = [str(json_path)]
    if config.get("save_records"):
        ref_csv = base.parent / f"{base.name}_reference_records.csv"
        def_csv = base.parent / f"{base.name}_defective_records.csv"
        records0.to_csv(ref_csv)
        records1.to_csv(def_csv)
        outputs += [str(ref_csv), str(def_csv)]
    _write_sidecar(base, "simulate", config, outputs)
    return outputs


def run_reweight(config: dict, threads: int, plot: bool) -> list[str]:
    target = distributions.from_config(config["target"])
    seed = int(config["seed"])
    dataset_cfg = config["dataset"]
    if "csv" in dataset_cfg:
        dataset = EmpiricalDataset.from_csv(dataset_cfg["csv"])
    elif "synthetic" in dataset_cfg:
        syn = dataset_cfg["synthetic"]
        dataset = synthesize_dataset(
            target,
            int(syn["n_values"]),
            int(syn["frames_per_value"]),
            probe_from_config(syn["probe"]),
            detection_from_config(syn.get("detection", {})),
            coverage=float(syn.get("coverage", 0.9995)),
            seed=seed,
        )
    else:
        raise ConfigError("dataset needs either a csv path or a synthetic block")

    report = optimize_weights(
        dataset,
        target,
        int(config["sample_budget"]),
        threshold=float(config["threshold"]),
        bins=config.get("bins"),
    )
    _, base = _out_paths(config, "reweight")
    json_path = base.with_suffix(".json")
    payload = report.to_json_dict()
    payload["seed"] = seed
    _write_json(json_path, payload)
    weights_csv = base.parent / f"{base.name}_weights.csv"
    edges = report.weights.edges
    _write_csv(
        weights_csv,
        ["bin_lo", "bin_hi", "weight"],
        [
            (edges[k], edges[k + 1], report.weights.weights[k])
            for k in range(len(report.weights.weights))
        ],
    )
    outputs = [str(json_path), str(weights_csv)]

    reshaped = None
    if config.get("save_resampled") and report.final_size > 0:
        reshaped = resample(dataset, report.weights, seed=seed)
        resampled_csv = base.parent / f"{base.name}_resampled.csv"
        reshaped.to_csv(resampled_csv)
        outputs.append(str(resampled_csv))

    if plot:
        from . import plotting

        before = build_histogram(dataset.taus, bins=len(report.weights.weights))
        after = reweighted_histogram(dataset, report.weights)
        outputs.append(
            plotting.save_reweight_histograms(
                before, after, target, base.with_suffix(".png")
            )
        )
    _write_sidecar(base, "reweight", config, outputs)
    return outputs


RUNNERS = {
    "bound": run_bound,
    "sweep": run_sweep,
    "cost": run_cost,
    "simulate": run_simulate,
    "reweight": run_reweight,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lossconf",
        description="Conformance-test error probabilities for lossy optical channels",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    help_lines = {
        "bound": "Optimal classical error bound over a reference-transmittance grid",
        "sweep": "Bound, classical PC and twin-beam PC error curves",
        "cost": "Conditional errors, cost-vs-bias curve and optimal bias per weight",
        "simulate": "Monte Carlo frequency-of-error report",
        "reweight": "Histogram reweighting of a per-transmittance dataset",
    }
    for name in RUNNERS:
        p = sub.add_parser(name, help=help_lines[name])
        p.add_argument("--config", help="JSON config file (or a run's sidecar)")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY.PATH=VALUE",
            help="override a config entry (JSON-parsed value)",
        )
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: $LOSSCONF_OUTDIR or .)")
        p.add_argument("--basename", help="output file basename")
        p.add_argument("--threads", type=int, default=1, help="grid-level worker threads")
        p.add_argument("--plot", action="store_true", help="render PNG figures too")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args.command, args)
        outputs = RUNNERS[args.command](config, max(1, args.threads), args.plot)
    except ConfigError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 2
    except LossconfError as exc:
        print(
            json.dumps({"error": exc.code, "message": str(exc), "details": exc.details}),
            file=sys.stderr,
        )
        return 1
    except ValueError as exc:
        print(json.dumps({"error": "invalid-value", "message": str(exc)}), file=sys.stderr)
        return 2
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
