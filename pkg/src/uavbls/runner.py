"""Experiment commands behind the CLI: train, eval, sweep and plot.

Run directory layout::

    <out>/config.yaml        materialized config (every default written out)
    <out>/manifest.json      config hash, seeds, code version, schema versions
    <out>/seed_<s>/metrics.csv      per-episode metrics (byte-reproducible)
    <out>/seed_<s>/timing.csv       per-episode wall-clock seconds
    <out>/seed_<s>/checkpoints/     ep_<k>.lwpt every ``checkpoint_every`` episodes
    <out>/seed_<s>/final.lwpt
    <out>/seed_<s>/summary.json     deterministic evaluation summary
    <out>/seed_<s>/eval.csv         per-episode evaluation records
    <out>/seed_<s>/trajectory.csv   first evaluation episode, one row per slot
    <out>/seed_<s>/sensors.csv      sensor layout of that run
"""
from __future__ import annotations

import csv
import json
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from . import config as cfgmod
from . import env as envmod
from . import plots
from .agent import SacPpvAgent, ablation_flags
from .config import RunConfig
from .models import ConfigError
from .training import (EpisodeRecord, TraceRow, agent_config_for, evaluate, run_config_for, summarize,
                       train)

METRICS_SCHEMA = "uavbls.metrics/1"
TIMING_SCHEMA = "uavbls.timing/1"
EVAL_SCHEMA = "uavbls.eval/1"
TRAJECTORY_SCHEMA = "uavbls.trajectory/1"
SENSORS_SCHEMA = "uavbls.sensors/1"
SWEEP_SCHEMA = "uavbls.sweep/1"

METRICS_COLUMNS = ["episode", "return", "fair_data_slot_bits", "fair_data_cum_bits", "energy_J", "jain_mean",
                   "violations"]
TRAJECTORY_COLUMNS = ["t", "x_m", "y_m", "p_tx_W", "n_eligible", "slot_bits", "slot_energy_J", "jain_slot",
                      "reward", "violation"]
SWEEP_COLUMNS = ["n_sensors", "seed", "algorithm", "reward", "fair_data", "energy"]


class RunDirExists(OSError):
    pass


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, schema: str, columns: list[str], rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {schema}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_csv(path: Path) -> tuple[str, list[dict]]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema: "):
            raise ConfigError(f"{path}: missing schema header")
        rows = list(csv.DictReader(fh))
    return first[len("# schema: "):].strip(), rows


def _metrics_row(r: EpisodeRecord):
    return [r.episode, r.ret, r.fair_data_slot_bits, r.fair_data_cum_bits, r.energy_J, r.jain_mean, r.violations]


def variant_label(cfg: RunConfig) -> str:
    if cfg.algorithm in ("random", "greedy"):
        return cfg.algorithm
    return ablation_flags(agent_config_for(cfg.algorithm, cfg.effective_agent))


def _prepare_dir(out: Path, force: bool):
    if out.exists():
        if not force:
            raise RunDirExists(f"run directory {out} already exists; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True)


def _agent_from_arrays(cfg: RunConfig, env_config, seed: int, arrays) -> SacPpvAgent:
    agent = SacPpvAgent(env_config.obs_dim, env_config.action_dim,
                        agent_config_for(cfg.algorithm, cfg.effective_agent), seed)
    try:
        agent.load_arrays(arrays, actor_only=True)
    except KeyError as exc:
        raise checkpoint.CheckpointError(str(exc.args[0])) from exc
    except ValueError as exc:
        raise checkpoint.CheckpointError(str(exc)) from exc
    return agent


def _summary_dict(records: list[EpisodeRecord]) -> dict:
    s = summarize(records)
    return {
        "episodes": s["episodes"],
        "return_mean": s["ret_mean"], "return_std": s["ret_std"],
        "fair_data_mean": s["fair_data_slot_bits_mean"], "fair_data_std": s["fair_data_slot_bits_std"],
        "fair_data_cum_mean": s["fair_data_cum_bits_mean"], "fair_data_cum_std": s["fair_data_cum_bits_std"],
        "energy_mean": s["energy_J_mean"], "energy_std": s["energy_J_std"],
        "violations_mean": s["violations_mean"],
    }


def format_summary(label: str, s: dict) -> str:
    return (f"{label}: return {s['return_mean']:.4f} ± {s['return_std']:.4f} | "
            f"fair data {s['fair_data_mean']:.4g} ± {s['fair_data_std']:.3g} bits | "
            f"energy {s['energy_mean']:.2f} ± {s['energy_std']:.2f} J")


def _eval_and_write(cfg: RunConfig, seed: int, agent, seed_dir: Path, episodes: int, eval_seeds) -> dict:
    env_config = run_config_for(cfg.env, seed)
    trace: list[TraceRow] = []
    records = evaluate(cfg.env, cfg.algorithm, list(eval_seeds), episodes, agent, run_seed=seed, trace=trace)
    write_csv(seed_dir / "eval.csv", EVAL_SCHEMA, METRICS_COLUMNS, [_metrics_row(r) for r in records])
    write_csv(seed_dir / "trajectory.csv", TRAJECTORY_SCHEMA, TRAJECTORY_COLUMNS,
              [[getattr(r, c) for c in TRAJECTORY_COLUMNS] for r in trace])
    state, _ = envmod.reset(env_config, 0)
    write_csv(seed_dir / "sensors.csv", SENSORS_SCHEMA, ["sensor", "x_m", "y_m"],
              [[i, n.position.x, n.position.y] for i, n in enumerate(state.sensors)])
    summary = _summary_dict(records)
    (seed_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def train_seed(cfg: RunConfig, seed: int, seed_dir: Path, log=print) -> dict:
    seed_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = seed_dir / "checkpoints"
    records: list[EpisodeRecord] = []

    def on_episode(rec: EpisodeRecord, agent):
        records.append(rec)
        k = rec.episode + 1
        if agent is not None and k % cfg.checkpoint_every == 0:
            ckpt_dir.mkdir(exist_ok=True)
            checkpoint.save(ckpt_dir / f"ep_{k:06d}.lwpt", agent.state_arrays())

    agent, _ = train(cfg.env, cfg.effective_agent, seed, cfg.episodes, cfg.algorithm, on_episode)
    write_csv(seed_dir / "metrics.csv", METRICS_SCHEMA, METRICS_COLUMNS, [_metrics_row(r) for r in records])
    write_csv(seed_dir / "timing.csv", TIMING_SCHEMA, ["episode", "wall_time_s"],
              [[r.episode, r.wall_time_s] for r in records])
    if agent is not None:
        checkpoint.save(seed_dir / "final.lwpt", agent.state_arrays())
    summary = _eval_and_write(cfg, seed, agent, seed_dir, cfg.eval_episodes, cfg.eval_seeds)
    log(format_summary(f"seed {seed} [{variant_label(cfg)}] eval", summary))
    return summary


def cmd_train(cfg: RunConfig, force: bool = False, log=print) -> Path:
    out = Path(cfg.out)
    _prepare_dir(out, force)
    (out / "config.yaml").write_text(cfgmod.dump(cfg))
    manifest = {
        "config_hash": cfgmod.config_hash(cfg),
        "seeds": list(cfg.seeds),
        "algorithm": cfg.algorithm,
        "variant": variant_label(cfg),
        "code_version": __version__,
        "schemas": {"metrics": METRICS_SCHEMA, "timing": TIMING_SCHEMA, "eval": EVAL_SCHEMA,
                    "trajectory": TRAJECTORY_SCHEMA, "sensors": SENSORS_SCHEMA,
                    "checkpoint": f"LWPT/{checkpoint.VERSION}"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for s in cfg.seeds:
        train_seed(cfg, s, out / f"seed_{s}", log)
    return out


def load_run(run_dir) -> RunConfig:
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.json").exists():
        raise ConfigError(f"{run_dir}: not a run directory (no manifest.json)")
    cfg = cfgmod.load(run_dir / "config.yaml")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    if manifest.get("config_hash") != cfgmod.config_hash(cfg):
        raise ConfigError(f"{run_dir}: config.yaml does not match the manifest hash")
    return cfg


def cmd_eval(target, cfg: RunConfig | None = None, episodes: int | None = None, seeds=None,
             out=None, log=print) -> dict:
    """Evaluate a run directory (each seed's final checkpoint) or a single ``.lwpt`` file.

    With no overrides on a run directory the summary reproduces ``summary.json``.
    Returns ``{seed: summary}``.
    """
    target = Path(target)
    results = {}
    if target.is_dir():
        run_cfg = load_run(target)
        cfg = cfg or run_cfg
        eps = episodes or run_cfg.eval_episodes
        ev_seeds = tuple(seeds) if seeds else run_cfg.eval_seeds
        for s in run_cfg.seeds:
            seed_dir = target / f"seed_{s}"
            agent = None
            if run_cfg.algorithm in ("sacppv", "sac"):
                agent = _agent_from_arrays(run_cfg, run_config_for(run_cfg.env, s), s,
                                           checkpoint.load(seed_dir / "final.lwpt"))
            records = evaluate(run_cfg.env, run_cfg.algorithm, list(ev_seeds), eps, agent, run_seed=s)
            results[s] = _summary_dict(records)
            log(format_summary(f"seed {s} [{variant_label(run_cfg)}]", results[s]))
            dest = Path(out) if out else seed_dir
            dest.mkdir(parents=True, exist_ok=True)
            write_csv(dest / (f"eval_seed_{s}.csv" if out else "eval_rerun.csv"), EVAL_SCHEMA, METRICS_COLUMNS,
                      [_metrics_row(r) for r in records])
        return results
    if cfg is None:
        raise ConfigError("evaluating a checkpoint file needs --config")
    if cfg.algorithm not in ("sacppv", "sac"):
        raise ConfigError(f"run.algorithm: a checkpoint needs a learning algorithm, got {cfg.algorithm!r}")
    arrays = checkpoint.load(target)
    eps = episodes or cfg.eval_episodes
    ev_seeds = tuple(seeds) if seeds else cfg.eval_seeds
    for s in cfg.seeds:
        agent = _agent_from_arrays(cfg, run_config_for(cfg.env, s), s, arrays)
        records = evaluate(cfg.env, cfg.algorithm, list(ev_seeds), eps, agent, run_seed=s)
        results[s] = _summary_dict(records)
        log(format_summary(f"seed {s} [{target.name}]", results[s]))
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            write_csv(Path(out) / f"eval_seed_{s}.csv", EVAL_SCHEMA, METRICS_COLUMNS,
                      [_metrics_row(r) for r in records])
    return results


def sweep_cell(cfg: RunConfig, n: int, seed: int) -> dict:
    """Train (learning algorithms only) then evaluate one (sensor count, seed) cell."""
    cell = replace(cfg, env=replace(cfg.env, n_sensors=n))
    agent = None
    if cell.algorithm in ("sacppv", "sac"):
        agent, _ = train(cell.env, cell.effective_agent, seed, cell.episodes, cell.algorithm)
    records = evaluate(cell.env, cell.algorithm, list(cell.eval_seeds), cell.eval_episodes, agent, run_seed=seed)
    s = summarize(records)
    return {"n_sensors": n, "seed": seed, "algorithm": variant_label(cell), "reward": s["ret_mean"],
            "fair_data": s["fair_data_slot_bits_mean"], "energy": s["energy_J_mean"]}


def _cell(args):
    return sweep_cell(*args)


def monotonicity(rows: list[dict]) -> dict[str, bool]:
    """Per algorithm: is mean fair data nondecreasing in sensor count?"""
    out = {}
    for algo in sorted({r["algorithm"] for r in rows}):
        counts = sorted({r["n_sensors"] for r in rows if r["algorithm"] == algo})
        means = [np.mean([r["fair_data"] for r in rows if r["algorithm"] == algo and r["n_sensors"] == n])
                 for n in counts]
        out[algo] = bool(all(b >= a for a, b in zip(means, means[1:])))
    return out


def cmd_sweep(cfg: RunConfig, counts: list[int], force: bool = False, workers: int = 1, log=print) -> Path:
    if not counts:
        raise ConfigError("--sensors: need at least one sensor count")
    if min(counts) < 1:
        raise ConfigError("--sensors: counts must be >= 1")
    out = Path(cfg.out)
    _prepare_dir(out, force)
    (out / "config.yaml").write_text(cfgmod.dump(cfg))
    jobs = [(cfg, n, s) for n in counts for s in cfg.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_cell, jobs))
    else:
        rows = [_cell(j) for j in jobs]
    # single collector: rows come back in job order regardless of worker scheduling
    write_csv(out / "sweep.csv", SWEEP_SCHEMA, SWEEP_COLUMNS, [[r[c] for c in SWEEP_COLUMNS] for r in rows])
    plots.sweep(rows, out / "sweep.svg")
    mono = monotonicity(rows)
    manifest = {"config_hash": cfgmod.config_hash(cfg), "counts": list(counts), "seeds": list(cfg.seeds),
                "code_version": __version__, "schemas": {"sweep": SWEEP_SCHEMA},
                "fair_data_nondecreasing": mono}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for algo, ok in mono.items():
        log(f"monotonicity [{algo}]: mean fair data {'nondecreasing' if ok else 'NOT nondecreasing'} in sensor count")
    return out


def cmd_plot(run_dirs, out) -> list[Path]:
    """Learning curves, fair-data/energy bars and a trajectory figure for one or more run directories."""
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ConfigError("plot: need at least one run directory")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    curves, bar_data = {}, {}
    for d in run_dirs:
        cfg = load_run(d)
        label = variant_label(cfg)
        if label in curves:
            label = f"{label} ({d.name})"
        per_seed, fair, energy = [], [], []
        for s in cfg.seeds:
            _, rows = read_csv(d / f"seed_{s}" / "metrics.csv")
            per_seed.append([float(r["return"]) for r in rows])
            summ = json.loads((d / f"seed_{s}" / "summary.json").read_text())
            fair.append(summ["fair_data_mean"])
            energy.append(summ["energy_mean"])
        n = min(len(x) for x in per_seed)
        curves[label] = list(np.mean([x[:n] for x in per_seed], axis=0))
        bar_data[label] = {"fair_data": float(np.mean(fair)), "fair_data_std": float(np.std(fair)),
                           "energy": float(np.mean(energy)), "energy_std": float(np.std(energy))}
    written = [out / "learning_curve.svg", out / "bars.svg", out / "trajectory.svg"]
    plots.learning_curves(curves, written[0])
    plots.bars(bar_data, written[1])
    first = load_run(run_dirs[0])
    seed_dir = run_dirs[0] / f"seed_{first.seeds[0]}"
    _, traj = read_csv(seed_dir / "trajectory.csv")
    _, sens = read_csv(seed_dir / "sensors.csv")
    e = first.env
    plots.trajectory([float(r["x_m"]) for r in traj], [float(r["y_m"]) for r in traj],
                     [[float(r["x_m"]), float(r["y_m"])] for r in sens], written[2],
                     bounds=(e.x_min, e.x_max, e.y_min, e.y_max), title=f"UAV trajectory ({variant_label(first)})")
    return written
