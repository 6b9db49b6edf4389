"""Command-line interface for instances, training, benchmarking, and traces.

Every command writes a JSON manifest recording the resolved configuration,
seeds, and produced files, so runs can be reproduced exactly.

Exit codes: 0 success, 2 validation error, 3 solver failure, 4 time-cap
truncation (partial outputs are still written).
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import sys
import time
from datetime import datetime, timezone

import click
import numpy as np

from . import __version__
from .domain import FeasibilityError, InstanceSpec
from .harness import (
    allocation_trace,
    allocation_trace_csv,
    benchmark,
    benchmark_paths,
    deprivation_heatmap,
    heatmap_csv,
    learning_curve_csv,
    run_episode,
    surface_csv,
    vfa_surface,
)
from .instances import (
    SchemaError,
    UnknownInstanceError,
    builtin_instance,
    builtin_scenario,
    derive_seed,
    generate_path,
    list_builtins,
    load_instance,
    save_instance,
)
from .learning import LinearVFA, MlpVFA, TrainingConfig, load_checkpoint, save_checkpoint
from .milp import BackendError
from .policies import (
    DlVfaPolicy,
    NnVfaPolicy,
    ReoptimizationPolicy,
    RuleBasedPolicy,
    ScriptedPolicy,
    WarmupPolicy,
    perfect_information_cost,
    train_dl_vfa,
    train_nn_vfa,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_TRUNCATED = 4


def _resolve_instance(name_or_path: str):
    if os.path.exists(name_or_path):
        return load_instance(name_or_path)
    return builtin_instance(name_or_path), builtin_scenario(name_or_path)


def _config_digest(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _write_manifest(path: str, command: str, config: dict, outputs: list[str],
                    started: float, exit_code: int, extra: dict | None = None):
    doc = {
        "command": command,
        "config": config,
        "config_digest": _config_digest(config),
        "outputs": sorted(outputs),
        "package_version": __version__,
        "python_version": platform.python_version(),
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_s": round(time.time() - started, 3),
        "exit_code": exit_code,
    }
    if extra:
        doc.update(extra)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, default=str)
        fh.write("\n")
    os.replace(tmp, path)


@click.group()
@click.version_option(__version__)
def main():
    """Dynamic relief-supply allocation: simulate, train, and benchmark."""


@main.group()
def instance():
    """Inspect, export, and validate problem instances."""


@instance.command("list")
def instance_list():
    """List the built-in instances."""
    for name in list_builtins():
        spec = builtin_instance(name)
        click.echo(f"{name}: {spec.num_districts} districts, "
                   f"modes {'/'.join(spec.mode_names)}, horizon {spec.horizon}")


@instance.command("export")
@click.argument("name")
@click.argument("path", type=click.Path(dir_okay=False))
def instance_export(name, path):
    """Write a built-in instance to a JSON file."""
    started = time.time()
    try:
        spec = builtin_instance(name)
        scenario = builtin_scenario(name)
    except UnknownInstanceError as exc:
        raise click.exceptions.Exit(_fail(str(exc), EXIT_VALIDATION))
    save_instance(spec, scenario, path)
    _write_manifest(f"{path}.manifest.json", "instance export",
                    {"name": name, "path": path}, [path], started, EXIT_OK)
    click.echo(f"wrote {path}")


@instance.command("validate")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def instance_validate(path):
    """Validate an instance file against the schema."""
    try:
        spec, _ = load_instance(path)
    except (SchemaError, ValueError) as exc:
        raise click.exceptions.Exit(_fail(f"invalid: {exc}", EXIT_VALIDATION))
    click.echo(f"OK: {spec.name} ({spec.num_districts} districts, horizon {spec.horizon})")


def _fail(message: str, code: int) -> int:
    click.echo(f"error: {message}", err=True)
    return code


@main.command()
@click.option("--method", type=click.Choice(["dl-vfa", "nn-vfa"]), required=True)
@click.option("--instance", "instance_name", required=True,
              help="Built-in instance name or path to an instance file.")
@click.option("--episodes", default=3000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--time-cap", default=14400.0, show_default=True,
              help="Training wall-clock cap in seconds.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Checkpoint output path.")
@click.option("--curve-out", type=click.Path(dir_okay=False), default=None,
              help="Learning-curve CSV path (default: <out>.curve.csv).")
@click.option("--buffer-size", default=1000, show_default=True)
@click.option("--update-every", default=10, show_default=True)
@click.option("--epsilon", default=0.2, show_default=True)
@click.option("--epsilon-decay", default=0.98, show_default=True)
@click.option("--alpha", default=0.2, show_default=True)
@click.option("--alpha-decay", default=0.99, show_default=True)
@click.option("--discount", default=0.9, show_default=True)
@click.option("--learning-rate", default=0.001, show_default=True)
@click.option("--batch-size", default=256, show_default=True)
@click.option("--hidden", default="16,16", show_default=True,
              help="Hidden layer sizes for the network method.")
@click.option("--eval-paths", default=10, show_default=True,
              help="Held-out paths per learning-curve point (0 disables).")
def train(method, instance_name, episodes, seed, time_cap, out, curve_out,
          buffer_size, update_every, epsilon, epsilon_decay, alpha, alpha_decay,
          discount, learning_rate, batch_size, hidden, eval_paths):
    """Train a value-function policy and write its checkpoint."""
    started = time.time()
    try:
        spec, scenario = _resolve_instance(instance_name)
        hidden_dims = tuple(int(h) for h in hidden.split(","))
        if len(hidden_dims) != 2:
            raise ValueError("hidden must name exactly two layer sizes")
        config = TrainingConfig(
            discount=discount, epsilon0=epsilon, epsilon_decay=epsilon_decay,
            alpha0=alpha, alpha_decay=alpha_decay, buffer_size=buffer_size,
            update_every=update_every, learning_rate=learning_rate,
            batch_size=batch_size, episodes=episodes, time_cap_s=time_cap,
            hidden=hidden_dims, eval_paths=eval_paths)
    except (SchemaError, UnknownInstanceError, ValueError) as exc:
        raise click.exceptions.Exit(_fail(str(exc), EXIT_VALIDATION))

    def progress(episode, point):
        if point:
            click.echo(f"episode {episode}: eval mean {point['mean_cost']:.1f}")

    try:
        trainer = train_dl_vfa if method == "dl-vfa" else train_nn_vfa
        result = trainer(spec, config, seed=seed, scenario=scenario, progress=progress)
    except BackendError as exc:
        raise click.exceptions.Exit(_fail(f"solver failure: {exc}", EXIT_SOLVER))

    meta = {"method": method, "instance": spec.name, "seed": seed,
            "episodes_run": result.episodes_run, "truncated": result.truncated}
    save_checkpoint(result.vfa, out, meta=meta)
    curve_path = curve_out or f"{out}.curve.csv"
    outputs = [out]
    if result.learning_curve:
        learning_curve_csv(result.learning_curve, curve_path)
        outputs.append(curve_path)
    exit_code = EXIT_TRUNCATED if result.truncated else EXIT_OK
    config_doc = {"method": method, "instance": instance_name, "seed": seed,
                  "episodes": episodes, "time_cap": time_cap,
                  "training": {k: str(v) for k, v in vars(config).items()}}
    _write_manifest(f"{out}.manifest.json", "train", config_doc, outputs, started,
                    exit_code, extra={"episodes_run": result.episodes_run,
                                      "truncated": result.truncated,
                                      "wall_seconds": round(result.wall_seconds, 3)})
    click.echo(f"trained {method} for {result.episodes_run} episodes "
               f"({result.wall_seconds:.1f} s){' [truncated]' if result.truncated else ''}")
    if result.truncated:
        raise click.exceptions.Exit(EXIT_TRUNCATED)


def _build_policy(name: str, spec, checkpoints: dict, epoch_time_limit: float):
    if name == "rule-based":
        return RuleBasedPolicy(spec)
    if name == "warm-up":
        return WarmupPolicy(spec)
    if name == "re-optimization":
        return ReoptimizationPolicy(spec, epoch_time_limit=epoch_time_limit)
    if name in ("dl-vfa", "nn-vfa"):
        if name not in checkpoints:
            raise ValueError(f"policy {name} needs --checkpoint {name}=<path>")
        vfa, _meta = load_checkpoint(checkpoints[name])
        if name == "dl-vfa":
            if not isinstance(vfa, LinearVFA):
                raise ValueError(f"checkpoint {checkpoints[name]} is not a linear VFA")
            return DlVfaPolicy(vfa, spec)
        if not isinstance(vfa, MlpVFA):
            raise ValueError(f"checkpoint {checkpoints[name]} is not a network VFA")
        return NnVfaPolicy(vfa, spec)
    raise ValueError(f"unknown policy {name!r}")


@main.command()
@click.option("--instance", "instance_name", required=True)
@click.option("--policies", default="rule-based",
              help="Comma-separated: rule-based, warm-up, re-optimization, dl-vfa, nn-vfa.")
@click.option("--paths", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--checkpoint", "checkpoints", multiple=True,
              help="Checkpoint for a VFA policy as name=path; repeatable.")
@click.option("--epoch-time-limit", default=900.0, show_default=True,
              help="Per-epoch solver limit for re-optimization (seconds).")
@click.option("--with-pi/--no-pi", default=False,
              help="Include the perfect-information bound (expensive).")
@click.option("--pi-time-limit", default=14400.0, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def bench(instance_name, policies, paths, seed, checkpoints, epoch_time_limit,
          with_pi, pi_time_limit, workers, out):
    """Benchmark policies on common random paths and write the report CSV."""
    started = time.time()
    try:
        spec, _scenario = _resolve_instance(instance_name)
        ckpt_map = dict(item.split("=", 1) for item in checkpoints)
        policy_names = [p.strip() for p in policies.split(",") if p.strip()]
        policy_objs = {name: _build_policy(name, spec, ckpt_map, epoch_time_limit)
                       for name in policy_names}
    except (SchemaError, UnknownInstanceError, ValueError) as exc:
        raise click.exceptions.Exit(_fail(str(exc), EXIT_VALIDATION))

    try:
        shared = benchmark_paths(spec, paths, seed)
        report = benchmark(policy_objs, spec, seed=seed, paths=shared, workers=workers)
        if with_pi:
            report.policies.insert(0, _pi_stats(spec, shared, pi_time_limit))
    except BackendError as exc:
        raise click.exceptions.Exit(_fail(f"solver failure: {exc}", EXIT_SOLVER))
    except FeasibilityError as exc:
        raise click.exceptions.Exit(_fail(f"infeasible policy decision: {exc}", EXIT_VALIDATION))

    report.to_csv(out)
    config_doc = {"instance": instance_name, "policies": policy_names,
                  "paths": paths, "seed": seed, "with_pi": with_pi,
                  "epoch_time_limit": epoch_time_limit,
                  "checkpoints": ckpt_map, "workers": workers}
    _write_manifest(f"{out}.manifest.json", "bench", config_doc, [out], started, EXIT_OK)
    for p in report.policies:
        gap = "" if p.mean_gap is None else f", gap {p.mean_gap:.2%}"
        click.echo(f"{p.name}: {p.mean_total:.1f} (±{p.std_total:.1f}){gap}")


def _pi_stats(spec, paths, time_limit):
    """Perfect-information row: replay each optimal schedule for full metrics."""
    from .harness import PolicyStats
    rows, gaps = [], []
    start = time.perf_counter()
    for path in paths:
        pi = perfect_information_cost(path, spec, time_limit=time_limit, gap_tol=0.0)
        result = run_episode(ScriptedPolicy(pi.schedule), spec, path)
        rows.append(result)
        if pi.gap is not None:
            gaps.append(pi.gap)
    totals = np.array([r.total_cost for r in rows])
    half = 1.96 * totals.std(ddof=0) / np.sqrt(len(totals))
    return PolicyStats(
        name="pi-bound", mean_total=float(totals.mean()),
        std_total=float(totals.std(ddof=0)),
        ci95_low=float(totals.mean() - half), ci95_high=float(totals.mean() + half),
        mean_deprivation=float(np.mean([r.deprivation_cost for r in rows])),
        mean_uav=float(np.mean([r.uav_cost for r in rows])),
        mean_truck=float(np.mean([r.truck_cost for r in rows])),
        mean_max_deprivation_hours=float(np.mean([r.max_deprivation_hours for r in rows])),
        mean_coverage=float(np.mean([r.coverage for r in rows])),
        runtime_seconds=time.perf_counter() - start,
        mean_gap=float(np.mean(gaps)) if gaps else None,
        totals=totals)


@main.command()
@click.option("--kind", type=click.Choice(["heatmap", "allocations", "surface"]),
              required=True)
@click.option("--instance", "instance_name", required=True)
@click.option("--policy", "policy_name", default="rule-based", show_default=True)
@click.option("--checkpoint", "checkpoints", multiple=True)
@click.option("--paths", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--epoch-time-limit", default=900.0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def trace(kind, instance_name, policy_name, checkpoints, paths, seed,
          epoch_time_limit, out):
    """Emit trace CSVs: deprivation heatmaps, allocation traces, VFA surfaces."""
    started = time.time()
    try:
        spec, _ = _resolve_instance(instance_name)
        ckpt_map = dict(item.split("=", 1) for item in checkpoints)
        policy = _build_policy(policy_name, spec, ckpt_map, epoch_time_limit)
    except (SchemaError, UnknownInstanceError, ValueError) as exc:
        raise click.exceptions.Exit(_fail(str(exc), EXIT_VALIDATION))

    try:
        if kind == "allocations":
            allocation_trace_csv(
                allocation_trace(policy, spec, num_paths=paths, seed=seed), spec, out)
        elif kind == "heatmap":
            path = generate_path(spec, seed=derive_seed(seed, "eval-path", 0))
            rng = np.random.default_rng(derive_seed(seed, "decide", policy_name, 0))
            result = run_episode(policy, spec, path, rng=rng)
            heatmap_csv(deprivation_heatmap(result), out)
        else:
            if not hasattr(policy, "vfa"):
                raise click.exceptions.Exit(
                    _fail("surface traces need a trained dl-vfa or nn-vfa policy",
                          EXIT_VALIDATION))
            max_inv = float(spec.supply_mean.sum())
            rows = vfa_surface(
                policy.vfa, spec, epochs=list(range(spec.horizon)),
                inventories=list(np.linspace(0, max_inv / 4, 21)),
                expected_deprivations=list(np.linspace(0, 50, 11)))
            surface_csv(rows, out)
    except BackendError as exc:
        raise click.exceptions.Exit(_fail(f"solver failure: {exc}", EXIT_SOLVER))

    config_doc = {"kind": kind, "instance": instance_name, "policy": policy_name,
                  "paths": paths, "seed": seed, "checkpoints": ckpt_map}
    _write_manifest(f"{out}.manifest.json", "trace", config_doc, [out], started, EXIT_OK)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
