"""Episode rollouts, the SAC-PPV training loop and deterministic evaluation."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from . import env as envmod
from .agent import AgentConfig, SacPpvAgent
from .autodiff import NonFiniteError
from .baselines import greedy_raw, random_action
from .env import EnvConfig
from .replay import Transition

ALGORITHMS = ("sacppv", "sac", "random", "greedy")


class NumericFailure(RuntimeError):
    """A loss or activation went non-finite during training."""


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    fair_data_slot_bits: float
    fair_data_cum_bits: float
    energy_J: float
    jain_mean: float
    violations: int
    wall_time_s: float = 0.0


@dataclass
class TraceRow:
    t: int
    x_m: float
    y_m: float
    p_tx_W: float
    n_eligible: int
    slot_bits: float
    slot_energy_J: float
    jain_slot: float
    reward: float
    violation: int


def episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])


def run_config_for(env_config: EnvConfig, seed: int) -> EnvConfig:
    """Pin the sensor layout to the run seed unless the config fixes one."""
    if env_config.layout_seed is None:
        return replace(env_config, layout_seed=seed)
    return env_config


def rollout(env_config: EnvConfig, reset_seed: int, policy: Callable, episode: int = 0,
            on_step: Callable | None = None, trace: list | None = None) -> tuple[EpisodeRecord, envmod.WorldState]:
    """Run one episode. ``policy(obs, state)`` returns a raw action in [-1, 1]^3."""
    t0 = time.perf_counter()
    state, rng = envmod.reset(env_config, reset_seed)
    obs = envmod.observe(state, env_config)
    if trace is not None:
        trace.append(TraceRow(0, state.uav_position.x, state.uav_position.y, 0.0, 0, 0.0, 0.0, 0.0, 0.0, 0))
    ret, energy, jains, violations, cum_fair = 0.0, 0.0, [], 0, 0.0
    slot_fair = 0.0
    done = False
    while not done:
        action = np.asarray(policy(obs, state), dtype=np.float64)
        out = envmod.step(state, action, env_config, rng)
        info = out.info
        ret += out.reward
        energy += info["slot_energy_J"]
        slot_fair += info["slot_fair_bits"]
        cum_fair = info["cum_fair_bits"]
        jains.append(info["jain_slot"])
        violations += int(info["violation"])
        if on_step is not None:
            on_step(obs, action, out)
        if trace is not None:
            trace.append(TraceRow(state.slot, info["x_m"], info["y_m"], info["p_tx_W"], info["n_eligible"],
                                  info["slot_bits"], info["slot_energy_J"], info["jain_slot"], out.reward,
                                  int(info["violation"])))
        obs = out.next_state_vector
        done = out.done
    rec = EpisodeRecord(episode, ret, slot_fair, cum_fair, energy, float(np.mean(jains)), violations,
                        time.perf_counter() - t0)
    return rec, state


def make_policy(algorithm: str, env_config: EnvConfig, seed: int, agent: SacPpvAgent | None = None,
                deterministic: bool = True) -> Callable:
    if algorithm == "random":
        rng = np.random.default_rng([seed, 20])
        return lambda obs, state: random_action(rng)
    if algorithm == "greedy":
        return lambda obs, state: greedy_raw(state, env_config)
    if agent is None:
        raise ValueError(f"algorithm {algorithm!r} needs an agent")
    return lambda obs, state: agent.act(obs, deterministic=deterministic)[0]


def agent_config_for(algorithm: str, agent_config: AgentConfig) -> AgentConfig:
    if algorithm == "sac":
        return agent_config.ablate("pfam", "per", "vrc")
    return agent_config


def train(env_config: EnvConfig, agent_config: AgentConfig, seed: int, episodes: int,
          algorithm: str = "sacppv", on_episode: Callable[[EpisodeRecord, SacPpvAgent | None], None] | None = None
          ) -> tuple[SacPpvAgent | None, list[EpisodeRecord]]:
    """Train for ``episodes`` episodes and return the agent plus per-episode records.

    ``on_episode(record, agent)`` runs after each episode; ``agent`` is None for
    ``random`` and ``greedy``, which go through the same loop without learning.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    env_config = run_config_for(env_config, seed)
    records: list[EpisodeRecord] = []
    agent = None
    if algorithm in ("random", "greedy"):
        policy = make_policy(algorithm, env_config, seed)
        for ep in range(episodes):
            rec, _ = rollout(env_config, episode_seed(seed, ep), policy, ep)
            records.append(rec)
            if on_episode:
                on_episode(rec, None)
        return None, records

    cfg = agent_config_for(algorithm, agent_config)
    agent = SacPpvAgent(env_config.obs_dim, env_config.action_dim, cfg, seed)
    total_steps = max(1, episodes * env_config.horizon)
    warm_rng = np.random.default_rng([seed, 21])
    counter = {"steps": 0}
    last_logp = {"v": 0.0}

    def policy(obs, state):
        if counter["steps"] < cfg.warmup:
            # uniform actions: density 2^-3 on the box
            last_logp["v"] = -3.0 * math.log(2.0)
            return random_action(warm_rng)
        a, logp = agent.act(obs)
        last_logp["v"] = logp
        return a

    def on_step(obs, action, out):
        agent.remember(Transition(obs, action, out.reward, out.next_state_vector, out.done), last_logp["v"])
        counter["steps"] += 1
        step = counter["steps"]
        if step >= cfg.warmup and len(agent.buffer) >= cfg.batch_size:
            try:
                stats = agent.update(step / total_steps)
            except NonFiniteError as exc:
                raise NumericFailure(f"non-finite value at step {step}: {exc}") from exc
            if not math.isfinite(stats.critic_loss) or not math.isfinite(stats.actor_loss):
                raise NumericFailure(f"non-finite loss at step {step}")

    for ep in range(episodes):
        rec, _ = rollout(env_config, episode_seed(seed, ep), policy, ep, on_step=on_step)
        records.append(rec)
        if on_episode:
            on_episode(rec, agent)
    return agent, records


def evaluate(env_config: EnvConfig, algorithm: str, seeds: list[int], episodes: int,
             agent: SacPpvAgent | None = None, run_seed: int = 0, trace: list | None = None
             ) -> list[EpisodeRecord]:
    """Deterministic-mode rollouts; episode k of eval seed s resets from (run_seed, s, 10**6 + k).

    Algorithms evaluated with the same run seed see identical layouts and arrivals.
    """
    env_config = run_config_for(env_config, run_seed)
    out = []
    for s in seeds:
        policy = make_policy(algorithm, env_config, s, agent, deterministic=True)
        for k in range(episodes):
            tr = trace if (trace is not None and not out) else None
            reset_seed = int(np.random.SeedSequence([run_seed, s, 10**6 + k]).generate_state(1)[0])
            rec, _ = rollout(env_config, reset_seed, policy, len(out), trace=tr)
            out.append(rec)
    return out


def summarize(records: list[EpisodeRecord]) -> dict:
    keys = ("ret", "fair_data_slot_bits", "fair_data_cum_bits", "energy_J", "jain_mean", "violations")
    res = {"episodes": len(records)}
    for k in keys:
        vals = np.array([getattr(r, k) for r in records], dtype=np.float64)
        res[f"{k}_mean"] = float(vals.mean()) if vals.size else float("nan")
        res[f"{k}_std"] = float(vals.std()) if vals.size else float("nan")
    return res
