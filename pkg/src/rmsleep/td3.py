"""Twin delayed deep deterministic policy gradient, written against numpy.

Networks are plain multilayer perceptrons with hand-written reverse mode so
the learner has no deep-learning framework dependency. Actions live in
``[0, 1]^G``; :func:`discretize` maps them to sleep-mode levels.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

LINEAR = "linear"
TANH01 = "tanh01"
CHECKPOINT_FORMAT = 1


class TrainingError(RuntimeError):
    """A loss or gradient became non-finite."""


class Mlp:
    """Affine/ReLU stack with a linear or ``(tanh + 1) / 2`` head."""

    def __init__(
        self,
        sizes: Sequence[int],
        out_act: str = LINEAR,
        rng: np.random.Generator | None = None,
        dtype: Any = np.float64,
    ) -> None:
        if out_act not in (LINEAR, TANH01):
            raise ValueError(f"unknown output activation {out_act!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.out_act = out_act
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype))
            self.params.append(rng.uniform(-bound, bound, fan_out).astype(self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def copy(self) -> Mlp:
        other = Mlp.__new__(Mlp)
        other.sizes, other.out_act, other.dtype = self.sizes, self.out_act, self.dtype
        other.params = [p.copy() for p in self.params]
        return other

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cache(x)[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        acts = [x]
        h = x
        for i in range(self.n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < self.n_layers - 1:
                h = np.maximum(z, 0)
            elif self.out_act == TANH01:
                h = np.tanh(z)
                acts.append(h)
                return (h + 1) * 0.5, acts
            else:
                h = z
            acts.append(h)
        return h, acts

    def backward(
        self, cache: list[np.ndarray], grad_out: np.ndarray, need_input_grad: bool = False
    ) -> tuple[list[np.ndarray], np.ndarray | None]:
        """Gradients of ``sum(grad_out * output)`` w.r.t. parameters (and input)."""
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        g = np.asarray(grad_out, dtype=self.dtype)
        if self.out_act == TANH01:
            th = cache[-1]
            g = g * 0.5 * (1 - th * th)
        for i in reversed(range(self.n_layers)):
            h_in = cache[i]
            grads[2 * i] = h_in.T @ g if h_in.ndim > 1 else np.outer(h_in, g)
            grads[2 * i + 1] = g.sum(axis=0) if g.ndim > 1 else g.copy()
            if i == 0 and not need_input_grad:
                break
            g = g @ self.params[2 * i].T
            if i > 0:
                g = g * (h_in > 0)
        return grads, (g if need_input_grad else None)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for p in self.params:
            p[...] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size


def critic_loss(critic: Mlp, obs: np.ndarray, act: np.ndarray, target: np.ndarray):
    """Mean squared TD error and its parameter gradients."""
    q, cache = critic.forward_cache(np.concatenate([obs, act], axis=1))
    err = q[:, 0] - target
    loss = float(np.mean(err * err))
    grad_q = (2.0 / len(err)) * err[:, None]
    grads, _ = critic.backward(cache, grad_q)
    return loss, grads


def actor_loss(actor: Mlp, critic: Mlp, obs: np.ndarray):
    """``-mean Q(obs, actor(obs))`` and its gradients w.r.t. the actor."""
    act, a_cache = actor.forward_cache(obs)
    q, c_cache = critic.forward_cache(np.concatenate([obs, act], axis=1))
    loss = -float(np.mean(q))
    grad_q = np.full_like(q, -1.0 / len(q))
    _, grad_in = critic.backward(c_cache, grad_q, need_input_grad=True)
    grads, _ = actor.backward(a_cache, grad_in[:, obs.shape[1]:])
    return loss, grads


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, lr: float
) -> tuple[list[np.ndarray], AdamState]:
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * mi + (1 - b1) * g for mi, g in zip(state.m, grads)]
    v = [b2 * vi + (1 - b2) * g * g for vi, g in zip(state.v, grads)]
    c1, c2 = 1 - b1**t, 1 - b2**t
    new = [
        (p - lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps)).astype(p.dtype, copy=False)
        for p, mi, vi in zip(params, m, v)
    ]
    return new, AdamState(m, v, t, b1, b2, state.eps)


def soft_update(target: Mlp, source: Mlp, tau: float) -> Mlp:
    for tp, sp in zip(target.params, source.params):
        tp *= 1 - tau
        tp += tau * sp
    return target


def td_target(
    rewards: np.ndarray, dones: np.ndarray, q1: np.ndarray, q2: np.ndarray, gamma: float
) -> np.ndarray:
    return rewards + gamma * (1.0 - dones) * np.minimum(q1, q2)


def discretize(cont: np.ndarray, n_sleep_modes: int) -> np.ndarray:
    """Nearest sleep-mode level of each component, ties upward."""
    c = np.asarray(cont, dtype=np.float64)
    if np.any(c < 0) or np.any(c > 1):
        raise ValueError("continuous action components must lie in [0, 1]")
    return np.floor(c * n_sleep_modes + 0.5).astype(np.int64)


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int, dtype: Any = np.float32) -> None:
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim), dtype=dtype)
        self.next_obs = np.zeros((self.capacity, obs_dim), dtype=dtype)
        self.act = np.zeros((self.capacity, act_dim), dtype=dtype)
        self.rew = np.zeros(self.capacity, dtype=dtype)
        self.done = np.zeros(self.capacity, dtype=dtype)
        self.pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, act, rew: float, next_obs, done: bool) -> None:
        i = self.pos
        self.obs[i], self.act[i], self.rew[i] = obs, act, rew
        self.next_obs[i], self.done[i] = next_obs, float(done)
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        if batch > self.size:
            raise ValueError(f"cannot sample {batch} from {self.size} transitions")
        idx = rng.choice(self.size, size=batch, replace=False)
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.done[idx]


@dataclass
class Td3Config:
    gamma: float = 0.2
    tau: float = 0.005
    lr: float = 3e-4
    batch: int = 256
    learning_starts: int = 500
    policy_delay: int = 2
    target_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    exploration_sigma: float = 0.1
    hidden: tuple[int, ...] = (400, 300)
    buffer_size: int = 1_000_000
    dtype: str = "float32"

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch < 1 or self.policy_delay < 1 or self.buffer_size < self.batch:
            raise ValueError("batch, policy_delay and buffer_size are inconsistent")


@dataclass
class Td3Agent:
    obs_dim: int
    act_dim: int
    config: Td3Config = field(default_factory=Td3Config)
    seed: int = 0

    def __post_init__(self) -> None:
        cfg = self.config
        self.rng = np.random.default_rng(self.seed)
        dt = np.dtype(cfg.dtype)
        self.actor = Mlp((self.obs_dim, *cfg.hidden, self.act_dim), TANH01, self.rng, dt)
        self.critics = [
            Mlp((self.obs_dim + self.act_dim, *cfg.hidden, 1), LINEAR, self.rng, dt) for _ in range(2)
        ]
        self.actor_target = self.actor.copy()
        self.critic_targets = [c.copy() for c in self.critics]
        self.actor_opt = AdamState.zeros_like(self.actor.params)
        self.critic_opts = [AdamState.zeros_like(c.params) for c in self.critics]
        self.buffer = ReplayBuffer(cfg.buffer_size, self.obs_dim, self.act_dim, dt)
        self.total_steps = 0
        self.n_updates = 0
        self.metadata: dict[str, Any] = {}

    # -- acting -----------------------------------------------------------
    def select_action(self, obs: np.ndarray, explore: bool = True) -> np.ndarray:
        if explore and self.total_steps < self.config.learning_starts:
            return self.rng.uniform(0.0, 1.0, self.act_dim)
        a = self.actor(np.asarray(obs)[None, :])[0].astype(np.float64)
        if explore:
            a = a + self.rng.normal(0.0, self.config.exploration_sigma, self.act_dim)
        return np.clip(a, 0.0, 1.0)

    def observe(self, obs, act, rew: float, next_obs, done: bool) -> dict[str, float] | None:
        """Store a transition and run one gradient step once learning has started."""
        self.buffer.add(obs, act, rew, next_obs, done)
        self.total_steps += 1
        if self.total_steps >= self.config.learning_starts and len(self.buffer) >= self.config.batch:
            return self.update()
        return None

    # -- learning ---------------------------------------------------------
    def update(self) -> dict[str, float]:
        cfg = self.config
        obs, act, rew, nobs, done = self.buffer.sample(cfg.batch, self.rng)
        noise = np.clip(
            self.rng.normal(0.0, cfg.target_noise_sigma, act.shape),
            -cfg.target_noise_clip, cfg.target_noise_clip,
        ).astype(act.dtype)
        next_act = np.clip(self.actor_target(nobs) + noise, 0.0, 1.0)
        nxt_in = np.concatenate([nobs, next_act], axis=1)
        q1 = self.critic_targets[0](nxt_in)[:, 0]
        q2 = self.critic_targets[1](nxt_in)[:, 0]
        y = td_target(rew, done, q1, q2, cfg.gamma)

        info: dict[str, float] = {}
        for k, critic in enumerate(self.critics):
            loss, grads = critic_loss(critic, obs, act, y)
            _check_finite(f"critic{k + 1}", loss, grads)
            critic.params, self.critic_opts[k] = adam_step(critic.params, grads, self.critic_opts[k], cfg.lr)
            info[f"critic{k + 1}_loss"] = loss
        self.n_updates += 1

        if self.n_updates % cfg.policy_delay == 0:
            loss, grads = actor_loss(self.actor, self.critics[0], obs)
            _check_finite("actor", loss, grads)
            self.actor.params, self.actor_opt = adam_step(self.actor.params, grads, self.actor_opt, cfg.lr)
            info["actor_loss"] = loss
            soft_update(self.actor_target, self.actor, cfg.tau)
            for tgt, src in zip(self.critic_targets, self.critics):
                soft_update(tgt, src, cfg.tau)
        return info

    # -- persistence ------------------------------------------------------
    def _arrays(self) -> dict[str, list[np.ndarray]]:
        out = {"actor": self.actor.params, "actor_target": self.actor_target.params,
               "actor_opt_m": self.actor_opt.m, "actor_opt_v": self.actor_opt.v}
        for k in range(2):
            out[f"critic{k + 1}"] = self.critics[k].params
            out[f"critic{k + 1}_target"] = self.critic_targets[k].params
            out[f"critic{k + 1}_opt_m"] = self.critic_opts[k].m
            out[f"critic{k + 1}_opt_v"] = self.critic_opts[k].v
        return out

    def save(self, path: str | Path, metadata: dict[str, Any] | None = None) -> Path:
        """Write ``<path>.json`` (header) and ``<path>.bin`` (row-major little-endian data)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        dt = np.dtype(self.config.dtype).newbyteorder("<")
        header: dict[str, Any] = {
            "format": CHECKPOINT_FORMAT,
            "dtype": dt.str,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "seed": self.seed,
            "config": asdict(self.config),
            "total_steps": self.total_steps,
            "n_updates": self.n_updates,
            "adam_t": {"actor": self.actor_opt.t, "critic1": self.critic_opts[0].t,
                       "critic2": self.critic_opts[1].t},
            "metadata": metadata or {},
            "arrays": {},
        }
        offset = 0
        with open(path.with_suffix(".bin"), "wb") as fh:
            for name, arrays in self._arrays().items():
                entries = []
                for a in arrays:
                    data = np.ascontiguousarray(a, dtype=dt)
                    fh.write(data.tobytes(order="C"))
                    entries.append({"shape": list(a.shape), "offset": offset})
                    offset += data.nbytes
                header["arrays"][name] = entries
        path.with_suffix(".json").write_text(json.dumps(header, indent=1))
        return path.with_suffix(".json")

    @classmethod
    def load(cls, path: str | Path) -> Td3Agent:
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format')}")
        agent = cls(header["obs_dim"], header["act_dim"], Td3Config(**header["config"]), header["seed"])
        raw = path.with_suffix(".bin").read_bytes()
        dt = np.dtype(header["dtype"])
        for name, arrays in agent._arrays().items():
            entries = header["arrays"][name]
            if len(entries) != len(arrays):
                raise ValueError(f"checkpoint layout mismatch in {name}")
            for a, e in zip(arrays, entries):
                if list(a.shape) != e["shape"]:
                    raise ValueError(f"{name}: shape {e['shape']} != expected {list(a.shape)}")
                a[...] = np.frombuffer(raw, dtype=dt, count=a.size, offset=e["offset"]).reshape(a.shape)
        agent.total_steps = header["total_steps"]
        agent.n_updates = header["n_updates"]
        agent.actor_opt.t = header["adam_t"]["actor"]
        agent.critic_opts[0].t = header["adam_t"]["critic1"]
        agent.critic_opts[1].t = header["adam_t"]["critic2"]
        agent.metadata = header["metadata"]
        return agent


def _check_finite(name: str, loss: float, grads: Sequence[np.ndarray]) -> None:
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        norms = [float(np.linalg.norm(g)) for g in grads]
        raise TrainingError(f"{name} loss={loss!r} is non-finite; gradient norms={norms}")
