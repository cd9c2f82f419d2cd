"""Command-line entry point: simulate / train / eval / bench-scaling /
validate-variance / ingest.

Every run writes a ``manifest.json`` (package version, resolved config hash,
seed, argv) sufficient to reproduce it bit for bit; all randomness flows
from the single seed. Errors print a machine-parseable JSON object on
stderr and exit with code 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import HydroflockError
from .metrics import coordination_quality, safety_rate, scaling_benchmark
from .scenario import load_scenario, load_timeseries, preprocess
from .training import (
    AgentPool,
    RunSettings,
    desk_settings,
    load_checkpoint,
    rollout_episode,
    run_training,
    save_checkpoint,
    settings_to_dict,
)
from .uncertainty import monte_carlo_cascade_variance, predicted_cascade_variance
from . import rng as rngs

PROVIDER_ENV = "HYDROFLOCK_PROVIDER"


class CLIError(Exception):
    def __init__(self, message: str, **info):
        super().__init__(message)
        self.info = {"error": message, **info}


def _fail(exc: CLIError) -> int:
    print(json.dumps(exc.info), file=sys.stderr)
    return 2


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CLIError("config file not found", path=str(p))
    return json.loads(p.read_text(encoding="utf-8"))


def _resolve_seed(args, config: dict) -> int:
    seed = args.seed if args.seed is not None else config.get("seed")
    if seed is None:
        raise CLIError("seed is mandatory (use --seed or config 'seed')")
    return int(seed)


def _build_settings(config: dict) -> RunSettings:
    spec = dict(config.get("settings", {}))
    preset = spec.pop("preset", "desk")
    settings = desk_settings() if preset == "desk" else RunSettings()
    for group, overrides in spec.items():
        if not hasattr(settings, group):
            raise CLIError(f"unknown settings group {group!r}")
        current = getattr(settings, group)
        if dataclasses.is_dataclass(current) and isinstance(overrides, dict):
            overrides = {
                k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()
            }
            settings = dataclasses.replace(settings, **{group: dataclasses.replace(current, **overrides)})
        else:
            settings = dataclasses.replace(settings, **{group: overrides})
    provider = os.environ.get(PROVIDER_ENV)
    if provider:
        settings = dataclasses.replace(settings, provider_spec=provider)
    return settings


def _resolve_scenario(config: dict, config_dir: Path):
    if "scenario" not in config:
        raise CLIError("config must reference a scenario")
    scen = config["scenario"]
    if isinstance(scen, str):
        path = (config_dir / scen) if not Path(scen).is_absolute() else Path(scen)
        if not path.exists():
            raise CLIError("scenario file not found", path=str(path))
        scen = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent
    else:
        scen = dict(scen)
        base = config_dir
    if "topology" in config:
        scen["topology"] = config["topology"]
    topo = scen.get("topology")
    if isinstance(topo, str):
        tpath = (base / topo) if not Path(topo).is_absolute() else Path(topo)
        if not tpath.exists():
            raise CLIError("topology file not found", path=str(tpath))
        scen["topology"] = json.loads(tpath.read_text(encoding="utf-8"))
    return scen


def _config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _write_manifest(out: Path, resolved: dict, seed: int, argv: list[str], outputs: list[str]):
    manifest = {
        "version": __version__,
        "config_hash": _config_hash(resolved),
        "seed": seed,
        "argv": argv,
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def _out_dir(args, config: dict) -> Path:
    out = Path(args.out or config.get("out", "run_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [repr(float(row[c])) if isinstance(row[c], float) else row[c] for c in columns]
            )


TRAJ_COLUMNS = ["t", "node_id", "h", "q_in", "q_out", "demand", "temp_c", "precip_mm", "reward", "flood"]
LOG_COLUMNS = ["episode", "return_mean", "cv", "safety_rate", "loss_align", "loss_sep", "loss_coh"]


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    scen_dict = _resolve_scenario(config, Path(args.config).parent if args.config else Path("."))
    settings = _build_settings(config)
    scenario = load_scenario(scen_dict)
    pool = AgentPool(scenario.topology, settings, seed)
    if args.checkpoint:
        if not Path(args.checkpoint).exists():
            raise CLIError("checkpoint not found", path=args.checkpoint)
        load_checkpoint(args.checkpoint, pool)
    result = rollout_episode(
        pool, scenario, settings, seed, episode=0,
        deterministic=args.deterministic, collect_trajectory=True,
    )
    out = _out_dir(args, config)
    _write_csv(out / "trajectory.csv", result.trajectory, TRAJ_COLUMNS)
    node_ids = scenario.topology.node_ids()
    q = np.array(
        [[r["q_out"] for r in result.trajectory if r["node_id"] == nid] for nid in node_ids]
    ).T
    metrics = {
        "safety_rate": result.safety_rate,
        "flood_steps": result.flood_steps,
        "return_mean": float(np.mean(list(result.returns.values()))),
        "loss_align": result.loss_means[0],
        "loss_sep": result.loss_means[1],
        "loss_coh": result.loss_means[2],
    }
    if len(node_ids) >= 2 and q.shape[0] >= 8:
        qc = coordination_quality(q)
        metrics["coordination_quality"] = qc.value
        metrics["qc_bias_bound"] = qc.bias_bound
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2), encoding="utf-8")
    resolved = {"command": "simulate", "scenario": scen_dict, "seed": seed,
                "settings": settings_to_dict(settings), "deterministic": args.deterministic}
    _write_manifest(out, resolved, seed, sys.argv[1:], ["trajectory.csv", "metrics.json"])
    print(f"simulate: {scenario.steps} steps, safety_rate={result.safety_rate:.4f} -> {out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    scen_dict = _resolve_scenario(config, Path(args.config).parent if args.config else Path("."))
    settings = _build_settings(config)
    episodes = args.episodes or int(config.get("episodes", 100))
    workers = args.workers or int(config.get("workers", 1))
    scenario = load_scenario(scen_dict)
    result = run_training(scenario, settings, seed, episodes, workers=workers)
    out = _out_dir(args, config)
    _write_csv(out / "train_log.csv", result.episodes, LOG_COLUMNS)
    resolved = {"command": "train", "scenario": scen_dict, "seed": seed, "episodes": episodes,
                "settings": settings_to_dict(settings)}
    save_checkpoint(out / "checkpoint.json", result.pool, settings, _config_hash(resolved))
    _write_manifest(out, resolved, seed, sys.argv[1:], ["train_log.csv", "checkpoint.json"])
    last = result.episodes[-1]
    print(
        f"train: {episodes} episodes, final return_mean={last['return_mean']:.3f}, "
        f"safety_rate={last['safety_rate']:.4f} -> {out}"
    )
    return 0


def cmd_eval(args) -> int:
    path = Path(args.trajectory)
    if not path.exists():
        raise CLIError("trajectory not found", path=str(path))
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    if not rows:
        raise CLIError("trajectory is empty", path=str(path))
    node_ids = sorted({r["node_id"] for r in rows})
    flags = [int(r["flood"]) for r in rows]
    rewards = [float(r["reward"]) for r in rows]
    metrics = {
        "safety_rate": safety_rate(flags),
        "flood_steps": int(sum(flags)),
        "reward_mean": float(np.mean(rewards)),
    }
    q = np.array(
        [[float(r["q_out"]) for r in rows if r["node_id"] == nid] for nid in node_ids]
    ).T
    if len(node_ids) >= 2 and q.shape[0] >= 8:
        qc = coordination_quality(q)
        metrics["coordination_quality"] = qc.value
        metrics["qc_bias_bound"] = qc.bias_bound
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2), encoding="utf-8")
    print(json.dumps(metrics))
    return 0


def cmd_bench_scaling(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    seed = args.seed
    result = scaling_benchmark(sizes, args.steps, seed)
    out = _out_dir(args, {})
    rows = [
        {
            "nodes": r.nodes,
            "median_step_ms": r.median_step_ms,
            "peak_mem_mb": r.peak_mem_mb if r.peak_mem_mb is not None else "unavailable",
            "slope": result.slope,
        }
        for r in result.rows
    ]
    _write_csv(out / "bench.csv", rows, ["nodes", "median_step_ms", "peak_mem_mb", "slope"])
    summary = {
        "sizes": sizes,
        "median_step_ms": [r.median_step_ms for r in result.rows],
        "doubling_ratios": result.doubling_ratios(),
        "slope": result.slope,
    }
    (out / "bench.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    resolved = {"command": "bench-scaling", "sizes": sizes, "steps": args.steps, "seed": seed}
    _write_manifest(out, resolved, seed, sys.argv[1:], ["bench.csv", "bench.json"])
    print(json.dumps(summary))
    return 0


def cmd_validate_variance(args) -> int:
    chains = [int(c) for c in args.chain.split(",")]
    alphas = [float(a) for a in args.alpha.split(",")]
    sigmas = [float(s) for s in args.sigma.split(",")]
    rows = []
    for n in chains:
        if n < 2:
            raise CLIError("chain length must be at least 2 nodes")
        for alpha in alphas:
            for sigma in sigmas:
                hops = [alpha] * (n - 1)
                analytic = predicted_cascade_variance(hops, sigma, args.sigma_eta)
                rng = rngs.stream(args.seed, "validate", n, alpha, sigma)
                mc = monte_carlo_cascade_variance(hops, sigma, args.sigma_eta, args.samples, rng)
                rows.append(
                    {
                        "chain": n,
                        "alpha": alpha,
                        "sigma_base": sigma,
                        "sigma_eta": args.sigma_eta,
                        "analytic_var": analytic,
                        "mc_var": mc,
                        "rel_err": abs(mc - analytic) / analytic if analytic > 0 else 0.0,
                    }
                )
    columns = ["chain", "alpha", "sigma_base", "sigma_eta", "analytic_var", "mc_var", "rel_err"]
    writer = csv.writer(sys.stdout)
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row[c] for c in columns])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "variance.csv", rows, columns)
    worst = max(r["rel_err"] for r in rows)
    return 0 if worst < 0.05 else 1


def cmd_ingest(args) -> int:
    known = None
    if args.topology:
        tpath = Path(args.topology)
        if not tpath.exists():
            raise CLIError("topology file not found", path=str(tpath))
        from .network import build_topology

        known = build_topology(json.loads(tpath.read_text(encoding="utf-8"))).node_ids()
    series = load_timeseries(args.input, known_ids=known)
    result = preprocess(series)
    out = _out_dir(args, {})
    for nid, fs in result.nodes.items():
        with (out / f"features_{nid}.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["timestamp"] + fs.names)
            for ts, row in zip(fs.timestamps, fs.features):
                writer.writerow([ts.isoformat()] + [repr(float(v)) for v in row])
    (out / "stats.json").write_text(json.dumps(result.stats, indent=2), encoding="utf-8")
    (out / "invalid_spans.json").write_text(json.dumps(result.invalid, indent=2), encoding="utf-8")
    print(f"ingest: {len(result.nodes)} nodes, {len(result.invalid)} excluded spans -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydroflock", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll a policy through a scenario")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint", help="trained checkpoint to load")
    p.add_argument("--deterministic", action="store_true", help="use mean actions")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="train policies on a scenario")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--workers", type=int, help="parallel rollout workers (default 1)")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics over an existing trajectory")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench-scaling", help="decision-time scaling across grid sizes")
    p.add_argument("--sizes", default="100,200,400,800")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench_scaling)

    p = sub.add_parser("validate-variance", help="analytic vs Monte-Carlo cascade variance")
    p.add_argument("--chain", default="2,5,10,20", help="chain length(s), comma separated")
    p.add_argument("--alpha", default="1.0,0.93,0.7")
    p.add_argument("--sigma", default="0.05,0.07")
    p.add_argument("--sigma-eta", type=float, default=0.0, dest="sigma_eta")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_validate_variance)

    p = sub.add_parser("ingest", help="preprocess a timeseries CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--topology", help="validate node ids against this topology")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ingest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CLIError as exc:
        return _fail(exc)
    except HydroflockError as exc:
        return _fail(CLIError(str(exc), kind=type(exc).__name__))


if __name__ == "__main__":
    sys.exit(main())
