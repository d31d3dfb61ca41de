import numpy as np
import pytest

from uavbls.baselines import greedy_baseline, greedy_raw, random_action
from uavbls.env import ActionCmd, BlsNode, EnvConfig, WorldState
from uavbls.models import Vec3

CFG = EnvConfig()


def world(sensors, uav=(100.0, 100.0)):
    nodes = [BlsNode(Vec3(x, y, 0.0), pending_bits=p, generated_bits=p) for x, y, p in sensors]
    return WorldState(Vec3(uav[0], uav[1], CFG.altitude), nodes)


def test_nothing_pending_hovers_at_min_power():
    s = world([(150.0, 100.0, 0.0), (10.0, 10.0, 0.0)])
    assert greedy_baseline(s, CFG) == ActionCmd(0.0, 0.0, CFG.p_tx_min)


def test_heads_east_at_full_speed():
    s = world([(200.0, 100.0, 1e6)])
    assert greedy_baseline(s, CFG) == ActionCmd(20.0, 0.0, CFG.p_tx_max)


def test_out_of_reach_keeps_power_low():
    s = world([(350.0, 100.0, 1e6)])
    assert greedy_baseline(s, CFG) == ActionCmd(20.0, 0.0, CFG.p_tx_min)


def test_in_reach_uses_max_power():
    s = world([(105.0, 97.0, 5.0)])
    cmd = greedy_baseline(s, CFG)
    assert cmd == ActionCmd(5.0, -3.0, CFG.p_tx_max)


def test_nearest_backlogged_wins():
    s = world([(101.0, 100.0, 0.0), (90.0, 100.0, 1.0), (130.0, 100.0, 1.0)])
    assert greedy_baseline(s, CFG).dx == -10.0


def test_greedy_raw_in_box():
    s = world([(400.0, 0.0, 1.0)])
    raw = greedy_raw(s, CFG)
    assert np.allclose(raw, [1.0, -1.0, -1.0])  # far away: minimum power


def test_random_action_range():
    a = np.array([random_action(np.random.default_rng(k)) for k in range(200)])
    assert a.shape == (200, 3) and np.all(np.abs(a) <= 1)
    assert np.array_equal(random_action(np.random.default_rng(4)), random_action(np.random.default_rng(4)))
