"""Non-learning reference policies."""
from __future__ import annotations

import numpy as np

from .env import ActionCmd, EnvConfig, WorldState, unscale_action


def random_action(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, 3)


def greedy_baseline(state: WorldState, config: EnvConfig) -> ActionCmd:
    """Head for the nearest backlogged sensor at full per-axis speed; power up
    only when some backlogged sensor is within reach."""
    uav = state.uav_position
    pending = [n for n in state.sensors if n.pending_bits > 0]
    if not pending:
        return ActionCmd(0.0, 0.0, config.p_tx_min)
    target = min(pending, key=lambda n: (n.position.x - uav.x) ** 2 + (n.position.y - uav.y) ** 2)
    dx = float(np.clip(target.position.x - uav.x, -config.max_dx, config.max_dx))
    dy = float(np.clip(target.position.y - uav.y, -config.max_dy, config.max_dy))
    in_reach = any(uav.distance(n.position) <= config.d_max for n in pending)
    return ActionCmd(dx, dy, config.p_tx_max if in_reach else config.p_tx_min)


def greedy_raw(state: WorldState, config: EnvConfig) -> np.ndarray:
    return unscale_action(greedy_baseline(state, config), config)
