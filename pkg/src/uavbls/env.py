"""Episodic UAV / batteryless-sensor environment.

The UAV flies at fixed altitude over a rectangle, beams RF power to the
sensors and collects their buffered data over an equally split OFDMA uplink.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from . import models
from .models import ChannelParams, ConfigError, RotorParams, Vec3, WptParams


@dataclass(frozen=True)
class ArrivalParams:
    p_gen: float = 0.1
    mean_bits: float = 1e6
    std_bits: float = 2e5

    def __post_init__(self):
        if not 0 <= self.p_gen <= 1:
            raise ConfigError("arrivals.p_gen must lie in [0, 1]")
        if not self.mean_bits > 0:
            raise ConfigError("arrivals.mean_bits must be > 0")
        if not self.std_bits >= 0:
            raise ConfigError("arrivals.std_bits must be >= 0")


@dataclass(frozen=True)
class EnvConfig:
    x_min: float = 0.0
    x_max: float = 400.0
    y_min: float = 0.0
    y_max: float = 400.0
    altitude: float = 50.0
    start_x: float = 100.0
    start_y: float = 100.0
    n_sensors: int = 20
    horizon: int = 200
    t_d: float = 1.0
    d_max: float = 150.0
    r_th: float = 1e5
    xi: float = 1e-4
    penalty: float = 1.0
    p_tx_min: float = 0.0
    p_tx_max: float = 10.0
    max_dx: float = 20.0
    max_dy: float = 20.0
    bandwidth: float = 2e7
    channel_mode: Literal["expected", "sampled"] = "expected"
    fairness_scope: Literal["slot", "cumulative"] = "slot"
    # when set, sensor positions come from this seed instead of the reset seed
    layout_seed: int | None = None
    channel: ChannelParams = field(default_factory=ChannelParams)
    wpt: WptParams = field(default_factory=WptParams)
    rotor: RotorParams = field(default_factory=RotorParams)
    arrivals: ArrivalParams = field(default_factory=ArrivalParams)

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigError("env: operating rectangle is empty")
        if not (self.x_min <= self.start_x <= self.x_max and self.y_min <= self.start_y <= self.y_max):
            raise ConfigError("env: UAV start point lies outside the operating rectangle")
        if self.n_sensors < 1:
            raise ConfigError("env.n_sensors must be >= 1")
        if self.horizon < 1:
            raise ConfigError("env.horizon must be >= 1")
        if not self.t_d > 0:
            raise ConfigError("env.t_d must be > 0")
        if not self.altitude > 0:
            raise ConfigError("env.altitude must be > 0")
        if not 0 <= self.p_tx_min <= self.p_tx_max:
            raise ConfigError("env: need 0 <= p_tx_min <= p_tx_max")
        if self.channel_mode not in ("expected", "sampled"):
            raise ConfigError(f"env.channel_mode: unknown mode {self.channel_mode!r}")
        if self.fairness_scope not in ("slot", "cumulative"):
            raise ConfigError(f"env.fairness_scope: unknown scope {self.fairness_scope!r}")

    @property
    def obs_dim(self) -> int:
        return 2 + 2 * self.n_sensors

    @property
    def action_dim(self) -> int:
        return 3


@dataclass
class BlsNode:
    position: Vec3
    pending_bits: float = 0.0
    cumulative_collected_bits: float = 0.0
    generated_bits: float = 0.0


@dataclass
class WorldState:
    uav_position: Vec3
    sensors: list[BlsNode]
    slot: int = 0
    cum_fair_data: float = 0.0
    cum_energy: float = 0.0


@dataclass(frozen=True)
class ActionCmd:
    dx: float
    dy: float
    p_tx: float


@dataclass
class StepOutcome:
    next_state_vector: np.ndarray
    reward: float
    done: bool
    info: dict


class EpisodeDone(RuntimeError):
    pass


def reset(config: EnvConfig, seed: int) -> tuple[WorldState, np.random.Generator]:
    """Fresh world plus the per-episode RNG stream used by ``step``."""
    layout_seed = seed if config.layout_seed is None else config.layout_seed
    layout_rng = np.random.default_rng([layout_seed, 0])
    xs = layout_rng.uniform(config.x_min, config.x_max, config.n_sensors)
    ys = layout_rng.uniform(config.y_min, config.y_max, config.n_sensors)
    sensors = [BlsNode(Vec3(float(x), float(y), 0.0)) for x, y in zip(xs, ys)]
    state = WorldState(Vec3(config.start_x, config.start_y, config.altitude), sensors)
    return state, np.random.default_rng([seed, 1])


def generate_arrivals(state: WorldState, arrivals: ArrivalParams, rng: np.random.Generator) -> WorldState:
    n = len(state.sensors)
    # both draws happen for every sensor so the stream does not depend on outcomes
    fires = rng.random(n) < arrivals.p_gen
    sizes = rng.normal(arrivals.mean_bits, arrivals.std_bits, n)
    for node, fire, size in zip(state.sensors, fires, sizes):
        if fire:
            # whole bits keep every accumulator an exact integer in float64
            bits = float(math.floor(max(0.0, float(size))))
            node.pending_bits += bits
            node.generated_bits += bits
    return state


def scale_action(raw: np.ndarray, config: EnvConfig) -> ActionCmd:
    a = np.clip(np.asarray(raw, dtype=np.float64), -1.0, 1.0)
    p = config.p_tx_min + (a[2] + 1.0) / 2.0 * (config.p_tx_max - config.p_tx_min)
    return ActionCmd(float(a[0] * config.max_dx), float(a[1] * config.max_dy), float(p))


def unscale_action(cmd: ActionCmd, config: EnvConfig) -> np.ndarray:
    span = config.p_tx_max - config.p_tx_min
    p = 2.0 * (cmd.p_tx - config.p_tx_min) / span - 1.0 if span > 0 else -1.0
    return np.array([cmd.dx / config.max_dx, cmd.dy / config.max_dy, p])


def _link_gains(state: WorldState, config: EnvConfig, rng: np.random.Generator | None) -> list[float]:
    ch = config.channel
    gains = []
    sampled = config.channel_mode == "sampled"
    if sampled:
        n = len(state.sensors)
        los_u = rng.random(n)
        fading = rng.exponential(1.0, n)
    for i, node in enumerate(state.sensors):
        d = state.uav_position.distance(node.position)
        theta = models.elevation_deg(d, config.altitude)
        if sampled:
            base = ch.beta0 * d ** (-ch.alpha)
            los = los_u[i] < models.los_probability(theta, ch)
            gains.append((base if los else ch.kappa * base) * float(fading[i]))
        else:
            gains.append(models.expected_channel_gain(d, theta, ch))
    return gains


def _link_budget(state: WorldState, cmd: ActionCmd, config: EnvConfig):
    dists, harvest = [], []
    for node in state.sensors:
        d = state.uav_position.distance(node.position)
        p_rx = models.received_power(cmd.p_tx, d, config.wpt, config.channel.alpha)
        dists.append(d)
        harvest.append(models.harvested_power(p_rx, config.wpt))
    return dists, harvest


def eligible_sensors(state: WorldState, action: ActionCmd, config: EnvConfig,
                     gains: list[float] | None = None) -> list[int]:
    """Sensors served this slot: in range, backlogged, powered, and above the rate floor."""
    if gains is None:
        gains = _link_gains(state, config, None) if config.channel_mode == "expected" else None
        if gains is None:
            raise ValueError("sampled channel mode needs explicit gains")
    dists, harvest = _link_budget(state, action, config)
    members = [i for i, node in enumerate(state.sensors)
               if dists[i] <= config.d_max and node.pending_bits > 0 and harvest[i] > 0]
    # equal split; dropping members only raises the share, so two passes settle it
    for _ in range(2):
        if not members:
            break
        share = config.bandwidth / len(members)
        members = [i for i in members
                   if models.achievable_rate(harvest[i], gains[i], share, config.channel) >= config.r_th]
    return members


def compute_reward(state: WorldState, violation: bool, config: EnvConfig) -> float:
    if not state.cum_energy > 0:
        raise ValueError("cumulative energy must be positive")
    return config.xi * state.cum_fair_data / state.cum_energy - (config.penalty if violation else 0.0)


def observe(state: WorldState, config: EnvConfig) -> np.ndarray:
    wx = config.x_max - config.x_min
    wy = config.y_max - config.y_min
    out = np.empty(2 + 2 * len(state.sensors))
    out[0] = (state.uav_position.x - config.x_min) / wx
    out[1] = (state.uav_position.y - config.y_min) / wy
    for i, node in enumerate(state.sensors):
        out[2 + 2 * i] = (node.position.x - config.x_min) / wx
        out[3 + 2 * i] = (node.position.y - config.y_min) / wy
    return out


def step(state: WorldState, raw_action, config: EnvConfig, rng: np.random.Generator) -> StepOutcome:
    """Advance one slot in place and return the transition outcome."""
    if state.slot >= config.horizon:
        raise EpisodeDone("step() called on a finished episode")
    cmd = scale_action(raw_action, config)

    old = state.uav_position
    moved = models.update_position(old, Vec3(cmd.dx, cmd.dy, 0.0))
    x = min(max(moved.x, config.x_min), config.x_max)
    y = min(max(moved.y, config.y_min), config.y_max)
    violation = (x != moved.x) or (y != moved.y)
    state.uav_position = Vec3(x, y, old.z)

    generate_arrivals(state, config.arrivals, rng)

    gains = _link_gains(state, config, rng)
    members = eligible_sensors(state, cmd, config, gains)
    _, harvest = _link_budget(state, cmd, config)
    volumes = [0.0] * len(state.sensors)
    if members:
        share = config.bandwidth / len(members)
        for i in members:
            node = state.sensors[i]
            rate = models.achievable_rate(harvest[i], gains[i], share, config.channel)
            got = min(float(math.floor(models.data_volume(rate, config.t_d))), node.pending_bits)
            node.pending_bits -= got
            node.cumulative_collected_bits += got
            volumes[i] = got

    n = len(state.sensors)
    jain_slot = models.jain_index(volumes, n)
    slot_fair = models.fair_data_term(volumes, n)
    cum_vols = [node.cumulative_collected_bits for node in state.sensors]
    cum_fair_cumulative = models.fair_data_term(cum_vols, n)
    if config.fairness_scope == "slot":
        state.cum_fair_data += slot_fair
    else:
        state.cum_fair_data = cum_fair_cumulative

    # speed from the displacement actually flown (after clamping)
    speed = math.hypot(x - old.x, y - old.y) / config.t_d
    energy = models.slot_energy(cmd.p_tx * config.t_d, models.propulsion_energy(speed, config.t_d, config.rotor))
    state.cum_energy += energy
    state.slot += 1

    reward = compute_reward(state, violation, config)
    info = {
        "volumes": volumes,
        "slot_bits": math.fsum(volumes),
        "slot_fair_bits": slot_fair,
        "cum_fair_bits": cum_fair_cumulative,
        "slot_energy_J": energy,
        "jain_slot": jain_slot,
        "violation": violation,
        "n_eligible": len(members),
        "p_tx_W": cmd.p_tx,
        "x_m": x,
        "y_m": y,
    }
    return StepOutcome(observe(state, config), reward, state.slot == config.horizon, info)


class UavBlsEnv:
    """Stateful reset/step wrapper around the functional API."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.state: WorldState | None = None
        self.rng: np.random.Generator | None = None

    def reset(self, seed: int) -> np.ndarray:
        self.state, self.rng = reset(self.config, seed)
        return observe(self.state, self.config)

    def step(self, raw_action) -> StepOutcome:
        if self.state is None:
            raise EpisodeDone("reset() must be called first")
        return step(self.state, raw_action, self.config, self.rng)


def with_overrides(config: EnvConfig, **kw) -> EnvConfig:
    return replace(config, **kw)
