"""SAC-PPV learner: squashed-Gaussian actor with parameter-free attention
between hidden layers, twin critics with soft-updated targets, learned
entropy temperature, prioritized replay and value-based reward centering.

Ablation flags switch each enhancement off independently; with all three off
the update is plain SAC.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .replay import Batch, PrioritizedReplay, UniformReplay

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
SQUASH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class AgentConfig:
    hidden: tuple[int, ...] = (256, 256)
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    buffer_size: int = 1_000_000
    warmup: int = 1000
    init_alpha: float = 1.0
    target_entropy: float | None = None  # None -> -action_dim
    pfam: bool = True
    per: bool = True
    vrc: bool = True
    pfam_omega: float = 1e-4
    alpha_per: float = 0.6
    beta_per_start: float = 0.4
    beta_per_end: float = 1.0
    eps_prior: float = 1e-6
    vrc_eta: float = 0.01
    rho_mode: Literal["one", "clipped"] = "one"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 2:
            raise ValueError("agent.hidden needs at least one layer of width >= 2")
        if self.rho_mode not in ("one", "clipped"):
            raise ValueError(f"agent.rho_mode: unknown mode {self.rho_mode!r}")
        if not 0 < self.tau <= 1:
            raise ValueError("agent.tau must lie in (0, 1]")

    def ablate(self, *names: str) -> "AgentConfig":
        from dataclasses import replace
        bad = set(names) - {"pfam", "per", "vrc"}
        if bad:
            raise ValueError(f"unknown ablation flag(s): {sorted(bad)}")
        return replace(self, **{n: False for n in names})


def ablation_flags(config: AgentConfig) -> str:
    """Variant label for a flag combination, e.g. 'sac', 'sac+pfam', 'sacppv'."""
    on = [n for n in ("pfam", "per", "vrc") if getattr(config, n)]
    if len(on) == 3:
        return "sacppv"
    return "+".join(["sac", *on])


def pfam(x: Tensor, omega: float = 1e-4) -> Tensor:
    """Parameter-free attention over the feature axis of a (batch, features) tensor."""
    if x.shape[-1] < 2:
        raise ValueError("pfam needs at least two features per sample")
    mu = ad.mean(x, axis=1, keepdims=True)
    var = ad.var(x, axis=1, keepdims=True)
    spread = ad.square(x - mu)
    reg = var + omega
    # 1/e* with e* = 4(var+w) / ((t-mu)^2 + 2 var + 2 w)
    inv_energy = (spread + 2.0 * reg) / (4.0 * reg)
    return ad.sigmoid(inv_energy) * x


def _init_layer(store: ParamStore, name: str, fan_in: int, fan_out: int, rng: np.random.Generator, scale: float = 1.0):
    bound = 1.0 / math.sqrt(fan_in)
    store.add(f"{name}.w", scale * rng.uniform(-bound, bound, (fan_in, fan_out)))
    store.add(f"{name}.b", scale * rng.uniform(-bound, bound, fan_out))


class Actor:
    def __init__(self, obs_dim: int, act_dim: int, hidden: tuple[int, ...], rng: np.random.Generator,
                 use_pfam: bool = True, omega: float = 1e-4):
        self.params = ParamStore()
        self.n_hidden = len(hidden)
        self.use_pfam = use_pfam
        self.omega = omega
        sizes = (obs_dim, *hidden)
        for k in range(self.n_hidden):
            _init_layer(self.params, f"h{k}", sizes[k], sizes[k + 1], rng)
        _init_layer(self.params, "mu", hidden[-1], act_dim, rng, scale=1e-2)
        _init_layer(self.params, "log_std", hidden[-1], act_dim, rng, scale=1e-2)

    def forward(self, s) -> tuple[Tensor, Tensor]:
        p = self.params
        h = ad.as_tensor(s)
        for k in range(self.n_hidden):
            h = ad.relu(ad.affine(h, p[f"h{k}.w"], p[f"h{k}.b"]))
            if self.use_pfam:
                h = pfam(h, self.omega)
        mu = ad.affine(h, p["mu.w"], p["mu.b"])
        log_std = ad.clip(ad.affine(h, p["log_std.w"], p["log_std.b"]), LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std


class Critic:
    def __init__(self, obs_dim: int, act_dim: int, hidden: tuple[int, ...], rng: np.random.Generator):
        self.params = ParamStore()
        self.n_hidden = len(hidden)
        sizes = (obs_dim + act_dim, *hidden)
        for k in range(self.n_hidden):
            _init_layer(self.params, f"h{k}", sizes[k], sizes[k + 1], rng)
        _init_layer(self.params, "q", hidden[-1], 1, rng)

    def forward(self, s, a, params: ParamStore | None = None) -> Tensor:
        p = self.params if params is None else params
        h = ad.concat([ad.as_tensor(s), ad.as_tensor(a)], axis=1)
        for k in range(self.n_hidden):
            h = ad.relu(ad.affine(h, p[f"h{k}.w"], p[f"h{k}.b"]))
        return ad.affine(h, p["q.w"], p["q.b"])


def squashed_sample(mu: Tensor, log_std: Tensor, eps: np.ndarray) -> tuple[Tensor, Tensor]:
    """Reparameterized tanh-Gaussian sample and its log-density (per row)."""
    eps_t = Tensor(eps)
    u = mu + eps_t * ad.exp(log_std)
    a = ad.tanh(u)
    gauss = ad.sum(-0.5 * ad.square(eps_t) - log_std, axis=1) - _HALF_LOG_2PI * eps.shape[1]
    correction = ad.sum(ad.log(1.0 - ad.square(a) + SQUASH_EPS), axis=1)
    return a, gauss - correction


def squashed_log_prob(mu: np.ndarray, log_std: np.ndarray, a: np.ndarray) -> np.ndarray:
    """log pi(a|s) for given squashed actions (numpy, no tape)."""
    a = np.clip(a, -1.0 + 1e-12, 1.0 - 1e-12)
    u = np.arctanh(a)
    z = (u - mu) / np.exp(log_std)
    gauss = np.sum(-0.5 * z * z - log_std, axis=1) - _HALF_LOG_2PI * a.shape[1]
    return gauss - np.sum(np.log(1.0 - np.tanh(u) ** 2 + SQUASH_EPS), axis=1)


def select_action(actor: Actor, state, mode: str, rng: np.random.Generator | None = None):
    """Action in (-1, 1)^d and its log-probability for one state or a batch."""
    s = np.atleast_2d(np.asarray(state, dtype=np.float64))
    with ad.no_grad():
        mu, log_std = actor.forward(s)
        if mode == "deterministic":
            eps = np.zeros(mu.shape)
        elif mode == "stochastic":
            eps = rng.standard_normal(mu.shape)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        a, logp = squashed_sample(mu, log_std, eps)
    if np.ndim(state) == 1:
        return a.data[0].copy(), float(logp.data[0])
    return a.data.copy(), logp.data.copy()


@dataclass
class EntropyTemp:
    target_entropy: float
    params: ParamStore = field(default_factory=ParamStore)

    @classmethod
    def create(cls, init_alpha: float, target_entropy: float) -> "EntropyTemp":
        t = cls(target_entropy)
        t.params.add("log_alpha", np.array(math.log(init_alpha)))
        return t

    @property
    def alpha(self) -> float:
        return float(np.exp(self.params["log_alpha"].data))


@dataclass
class VrcState:
    r_bar: float = 0.0
    eta: float = 0.01
    # plain running average of observed rewards, kept for diagnostics only
    running_avg: float = 0.0
    running_count: int = 0


def vrc_update(vrc: VrcState, td_errors: np.ndarray, critic_lr: float, rho=1.0) -> VrcState:
    """Move the average-reward estimate along the (signed) TD errors."""
    vrc.r_bar += vrc.eta * critic_lr * float(np.mean(np.asarray(rho) * np.asarray(td_errors)))
    return vrc


def running_average_update(vrc: VrcState, reward: float) -> VrcState:
    vrc.running_count += 1
    vrc.running_avg += (reward - vrc.running_avg) / vrc.running_count
    return vrc


def soft_update(online: ParamStore, target: ParamStore, tau: float) -> ParamStore:
    for (name, src), (tname, dst) in zip(online, target):
        if name != tname or src.data.shape != dst.data.shape:
            raise ValueError(f"soft_update structure mismatch at {name!r} / {tname!r}")
        dst.data *= 1.0 - tau
        dst.data += tau * src.data
    return target


def td_target(r, done, q1_next, q2_next, logp_next, alpha: float, gamma: float, r_bar: float = 0.0) -> np.ndarray:
    """Centered soft Bellman target with the twin-minimum next value."""
    return (r - r_bar) + gamma * (1.0 - done) * (np.minimum(q1_next, q2_next) - alpha * logp_next)


def critic_loss(q1: Tensor, q2: Tensor, y: np.ndarray, weights: np.ndarray) -> Tensor:
    yt = Tensor(np.reshape(y, (-1, 1)))
    w = Tensor(np.reshape(weights, (-1, 1)))
    return ad.mean(w * 0.5 * ad.square(q1 - yt)) + ad.mean(w * 0.5 * ad.square(q2 - yt))


def actor_loss(logp: Tensor, q1: Tensor, q2: Tensor, alpha: float) -> Tensor:
    return ad.mean(alpha * logp - ad.sum(ad.minimum(q1, q2), axis=1))


def alpha_loss(log_alpha: Tensor, logp: np.ndarray, target_entropy: float) -> Tensor:
    return ad.mean(-(ad.exp(log_alpha) * Tensor(logp + target_entropy)))


@dataclass
class UpdateStats:
    critic_loss: float
    actor_loss: float
    alpha_loss: float
    alpha: float
    r_bar: float
    td_abs: np.ndarray
    td_signed_mean: float


class SacPpvAgent:
    def __init__(self, obs_dim: int, act_dim: int, config: AgentConfig, seed: int):
        self.config = config
        self.obs_dim, self.act_dim = obs_dim, act_dim
        init_rng = np.random.default_rng([seed, 10])
        self.actor = Actor(obs_dim, act_dim, config.hidden, init_rng, config.pfam, config.pfam_omega)
        self.critic1 = Critic(obs_dim, act_dim, config.hidden, init_rng)
        self.critic2 = Critic(obs_dim, act_dim, config.hidden, init_rng)
        self.target1 = self.critic1.params.copy_structure()
        self.target2 = self.critic2.params.copy_structure()
        h0 = -float(act_dim) if config.target_entropy is None else config.target_entropy
        self.temp = EntropyTemp.create(config.init_alpha, h0)
        self.vrc = VrcState(eta=config.vrc_eta)
        self.act_rng = np.random.default_rng([seed, 11])
        self.update_rng = np.random.default_rng([seed, 12])
        self.sample_rng = np.random.default_rng([seed, 13])
        cap = config.buffer_size
        if config.per:
            self.buffer = PrioritizedReplay(cap, obs_dim, act_dim, config.eps_prior)
        else:
            self.buffer = UniformReplay(cap, obs_dim, act_dim)
        self.behavior_logp = np.zeros(cap) if config.rho_mode == "clipped" else None
        self.updates = 0

    # -- acting -----------------------------------------------------------
    def act(self, obs: np.ndarray, deterministic: bool = False) -> tuple[np.ndarray, float]:
        mode = "deterministic" if deterministic else "stochastic"
        return select_action(self.actor, obs, mode, self.act_rng)

    def remember(self, tr, behavior_logp: float = 0.0) -> int:
        i = self.buffer.push(tr, self.config.alpha_per)
        if self.behavior_logp is not None:
            self.behavior_logp[i] = behavior_logp
        return i

    # -- learning ---------------------------------------------------------
    def critic_update(self, batch: Batch, eps_next: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        cfg = self.config
        alpha = self.temp.alpha
        r_bar = self.vrc.r_bar if cfg.vrc else 0.0
        with ad.no_grad():
            mu, log_std = self.actor.forward(batch.s_next)
            a_next, logp_next = squashed_sample(mu, log_std, eps_next)
            q1t = self.critic1.forward(batch.s_next, a_next, self.target1).data[:, 0]
            q2t = self.critic2.forward(batch.s_next, a_next, self.target2).data[:, 0]
        y = td_target(batch.r, batch.done, q1t, q2t, logp_next.data, alpha, cfg.gamma, r_bar)

        self.critic1.params.zero_grad()
        self.critic2.params.zero_grad()
        q1 = self.critic1.forward(batch.s, batch.a)
        q2 = self.critic2.forward(batch.s, batch.a)
        loss = critic_loss(q1, q2, y, batch.weights)
        ad.backward(loss)
        ad.adam_step(self.critic1.params, cfg.lr)
        ad.adam_step(self.critic2.params, cfg.lr)
        d1 = y - q1.data[:, 0]
        d2 = y - q2.data[:, 0]
        return loss.item(), np.minimum(np.abs(d1), np.abs(d2)), 0.5 * (d1 + d2)

    def actor_update(self, batch: Batch, eps_pi: np.ndarray) -> tuple[float, np.ndarray]:
        alpha = self.temp.alpha
        self.actor.params.zero_grad()
        with self.critic1.params.frozen(), self.critic2.params.frozen():
            mu, log_std = self.actor.forward(batch.s)
            a, logp = squashed_sample(mu, log_std, eps_pi)
            loss = actor_loss(logp, self.critic1.forward(batch.s, a), self.critic2.forward(batch.s, a), alpha)
            ad.backward(loss)
        ad.adam_step(self.actor.params, self.config.lr)
        return loss.item(), logp.data.copy()

    def alpha_update(self, logp: np.ndarray) -> float:
        store = self.temp.params
        store.zero_grad()
        loss = alpha_loss(store["log_alpha"], logp, self.temp.target_entropy)
        ad.backward(loss)
        ad.adam_step(store, self.config.lr)
        return loss.item()

    def beta_per(self, progress: float) -> float:
        c = self.config
        return c.beta_per_start + (c.beta_per_end - c.beta_per_start) * min(1.0, max(0.0, progress))

    def _rho(self, batch: Batch) -> np.ndarray | float:
        if self.behavior_logp is None:
            return 1.0
        with ad.no_grad():
            mu, log_std = self.actor.forward(batch.s)
        logp = squashed_log_prob(mu.data, log_std.data, batch.a)
        return np.clip(np.exp(np.minimum(logp - self.behavior_logp[batch.indices], 50.0)), 0.0, 2.0)

    def update_from_batch(self, batch: Batch) -> UpdateStats:
        """One full gradient step on ``batch``; noise drawn next-action first, then policy."""
        eps_next = self.update_rng.standard_normal((len(batch.r), self.act_dim))
        eps_pi = self.update_rng.standard_normal((len(batch.r), self.act_dim))
        critic_loss, td_abs, td_signed = self.critic_update(batch, eps_next)
        actor_loss, logp = self.actor_update(batch, eps_pi)
        alpha_loss = self.alpha_update(logp)
        soft_update(self.critic1.params, self.target1, self.config.tau)
        soft_update(self.critic2.params, self.target2, self.config.tau)
        if self.config.vrc:
            vrc_update(self.vrc, td_signed, self.config.lr, self._rho(batch))
        self.updates += 1
        return UpdateStats(critic_loss, actor_loss, alpha_loss, self.temp.alpha, self.vrc.r_bar,
                           td_abs, float(np.mean(td_signed)))

    def update(self, progress: float) -> UpdateStats:
        cfg = self.config
        batch = self.buffer.sample(cfg.batch_size, cfg.alpha_per, self.beta_per(progress), self.sample_rng)
        stats = self.update_from_batch(batch)
        self.buffer.update_priorities(batch.indices, stats.td_abs, cfg.alpha_per)
        return stats

    # -- persistence ------------------------------------------------------
    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for prefix, store in (("actor/", self.actor.params), ("critic1/", self.critic1.params),
                              ("critic2/", self.critic2.params), ("target1/", self.target1),
                              ("target2/", self.target2), ("temp/", self.temp.params)):
            for name, arr in store.arrays().items():
                out[prefix + name] = arr
        out["vrc/r_bar"] = np.array(self.vrc.r_bar)
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], actor_only: bool = False):
        self.actor.params.load_arrays(arrays, "actor/")
        if actor_only:
            return
        self.critic1.params.load_arrays(arrays, "critic1/")
        self.critic2.params.load_arrays(arrays, "critic2/")
        self.target1.load_arrays(arrays, "target1/")
        self.target2.load_arrays(arrays, "target2/")
        self.temp.params.load_arrays(arrays, "temp/")
        if "vrc/r_bar" in arrays:
            self.vrc.r_bar = float(arrays["vrc/r_bar"])


def _pfam_case(rng):
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True, name="x")
    c = Tensor(rng.normal(size=(3, 5)))
    return (lambda: ad.sum(pfam(x, 1e-4) * c)), [x]


ad.CHECK_CASES["pfam"] = _pfam_case
