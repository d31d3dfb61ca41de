"""Physical and objective models: WPT link, rectenna, air-to-ground channel,
uplink rate, rotary-wing propulsion energy and Jain fairness.

Every function here is pure and works on plain floats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence


class ConfigError(ValueError):
    """Raised when a parameter set violates its invariants."""


@dataclass(frozen=True)
class ChannelParams:
    beta0: float = 1e-3
    alpha: float = 2.6
    kappa: float = 0.2
    c_env: float = 10.0
    d_env: float = 0.6
    noise_power: float = 1e-14  # -110 dBm

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("channel.alpha must be > 0")
        if not 0 < self.kappa <= 1:
            raise ConfigError("channel.kappa must lie in (0, 1]")
        if not self.beta0 > 0:
            raise ConfigError("channel.beta0 must be > 0")
        if not self.noise_power > 0:
            raise ConfigError("channel.noise_power must be > 0")


@dataclass(frozen=True)
class WptParams:
    g_t: float = 10.0
    g_r: float = 10.0
    wavelength: float = 0.3275
    p_min_rx: float = 1e-6
    p_max_rx: float = 1e-2
    eta_coeffs: tuple[float, ...] = (0.5,)

    def __post_init__(self):
        object.__setattr__(self, "eta_coeffs", tuple(float(c) for c in self.eta_coeffs))
        if not 0 < self.p_min_rx < self.p_max_rx:
            raise ConfigError("wpt: need 0 < p_min_rx < p_max_rx")
        if not self.eta_coeffs:
            raise ConfigError("wpt.eta_coeffs must not be empty")
        # sample the active interval densely; eta must stay in (0, 1]
        for k in range(257):
            p = self.p_min_rx + (self.p_max_rx - self.p_min_rx) * k / 256
            e = efficiency(p, self)
            if not 0 < e <= 1:
                raise ConfigError(f"wpt: efficiency {e!r} at p_rx={p!r} W leaves (0, 1]")


@dataclass(frozen=True)
class RotorParams:
    p0: float = 79.86
    pm: float = 88.63
    u_tip: float = 120.0
    v_ind: float = 4.03
    d0: float = 0.6
    rho0: float = 1.225
    s0: float = 0.05
    disc_area: float = 0.503

    def __post_init__(self):
        for name in ("p0", "pm", "u_tip", "v_ind", "d0", "rho0", "s0", "disc_area"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"rotor.{name} must be > 0")


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite coordinate in {self!r}")

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def distance(self, other: "Vec3") -> float:
        return math.sqrt((self.x - other.x) ** 2 + (self.y - other.y) ** 2 + (self.z - other.z) ** 2)


def received_power(p_tx: float, dist: float, wpt: WptParams, alpha: float) -> float:
    """Friis received RF power at the sensor, in watts."""
    if not dist > 0:
        raise ValueError(f"distance must be positive, got {dist!r}")
    return p_tx * wpt.g_t * wpt.g_r * wpt.wavelength ** 2 / ((4 * math.pi) ** 2 * dist ** alpha)


def efficiency(p_rx: float, wpt: WptParams) -> float:
    """Rectenna conversion efficiency polynomial (lowest order first)."""
    acc = 0.0
    for c in reversed(wpt.eta_coeffs):
        acc = acc * p_rx + c
    return acc


def harvested_power(p_rx: float, wpt: WptParams) -> float:
    """Piecewise rectenna model: dead below activation, clamped at saturation."""
    if p_rx < wpt.p_min_rx:
        return 0.0
    if p_rx >= wpt.p_max_rx:
        p_rx = wpt.p_max_rx
    return efficiency(p_rx, wpt) * p_rx


def elevation_deg(dist: float, altitude: float) -> float:
    return 180.0 / math.pi * math.asin(min(1.0, altitude / dist))


def los_probability(elevation: float, ch: ChannelParams) -> float:
    if not 0 <= elevation <= 90:
        raise ValueError(f"elevation must be in [0, 90] degrees, got {elevation!r}")
    return 1.0 / (1.0 + ch.c_env * math.exp(-ch.d_env * (elevation - ch.c_env)))


def expected_channel_gain(dist: float, elevation: float, ch: ChannelParams) -> float:
    """LoS/NLoS-averaged large-scale power gain."""
    if not dist > 0:
        raise ValueError(f"distance must be positive, got {dist!r}")
    p_los = los_probability(elevation, ch)
    base = ch.beta0 * dist ** (-ch.alpha)
    return p_los * base + (1.0 - p_los) * ch.kappa * base


def achievable_rate(p_h: float, gain: float, bandwidth: float, ch: ChannelParams) -> float:
    """Shannon rate in bits/s for transmit power ``p_h`` over ``gain``."""
    return bandwidth * math.log2(1.0 + p_h * gain / ch.noise_power)


def data_volume(rate: float, t_d: float) -> float:
    return rate * t_d


def propulsion_energy(speed: float, t_d: float, rotor: RotorParams) -> float:
    """Rotary-wing propulsion energy over one slot: blade profile + induced + parasite."""
    r = rotor
    ratio = speed / r.v_ind
    blade = r.p0 * (1.0 + 3.0 * speed ** 2 / r.u_tip ** 2)
    induced = r.pm * math.sqrt(math.sqrt(1.0 + ratio ** 4 / 4.0) - ratio ** 2 / 2.0)
    parasite = 0.5 * r.d0 * r.rho0 * r.s0 * r.disc_area * speed ** 3
    return (blade + induced + parasite) * t_d


def slot_energy(charge_energy: float, prop_energy: float) -> float:
    return charge_energy + prop_energy


def jain_index(volumes: Sequence[float], n: int | None = None) -> float:
    """Jain fairness of ``volumes``; the all-zero vector maps to 0."""
    n = len(volumes) if n is None else n
    top = max(volumes, default=0.0)
    if top == 0.0:
        return 0.0
    # scale-free, so normalize first to keep the squares away from underflow
    scaled = [v / top for v in volumes]
    total = math.fsum(scaled)
    return total * total / (n * math.fsum(v * v for v in scaled))


def fair_data_term(volumes: Sequence[float], n: int | None = None) -> float:
    return math.fsum(volumes) * jain_index(volumes, n)


def update_position(pos: Vec3, move: Vec3) -> Vec3:
    if move.z != 0:
        raise ValueError("UAV altitude is fixed; move.z must be 0")
    return pos + move
