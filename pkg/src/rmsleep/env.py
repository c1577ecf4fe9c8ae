"""Episodic sleep-control environment: observations, actions, rewards, resets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import metrics as mx
from .core import ScenarioConfig, ScenarioRanges, make_scenario
from .reward_machines import DROP, THROUGHPUT, ConstraintRM, augment, rm_step
from .rewards import (
    LAGRANGIAN,
    MARKOV,
    LagrangeState,
    reward_lagrangian,
    reward_markov,
    reward_rm,
    rm_granularity,
)
from .sim import SimState, SlotOutcome, init_sim, step
from .td3 import discretize

BASE_FEATURES = 6


@dataclass
class StepInfo:
    outcome: SlotOutcome
    metrics: mx.RunningMetrics
    levels: tuple[int, ...]
    ee: float
    drop_now: float
    thr_now_mbps: float
    rho_d: float
    rho_m: float
    rm_d: int | None
    rm_m: int | None
    r_d: float
    r_m: float


def build_observation(
    sim: SimState,
    outcome: SlotOutcome | None,
    ranges: ScenarioRanges,
    rm_states: tuple[int, int] | None = None,
    granularity: int | None = None,
) -> np.ndarray:
    """Normalised state vector, with RM coordinates appended when given.

    Layout: deadline load, constant load, mean channel of each group, current
    group drop rate, current per-user throughput over mu_max, then h/H per RU.
    """
    cfg = sim.config
    load_max = ranges.load_mbps[1]
    norm_d = ranges.n_deadline[1] * load_max
    norm_m = ranges.n_constant[1] * load_max
    load_d = cfg.n_deadline * cfg.per_user_load_mbps / norm_d if norm_d > 0 else 0.0
    load_m = cfg.n_constant * cfg.per_user_load_mbps / norm_m if norm_m > 0 else 0.0
    chan_d = np.mean([q.channel_state for q in sim.deadline_queues])
    chan_m = np.mean([q.channel_state for q in sim.constant_queues])
    if outcome is None:
        drop_now = thr_now = 0.0
    else:
        drop_now = mx.group_drop_rate(outcome)
        thr_now = mx.group_throughput_mbps(outcome, cfg) / cfg.mu_max_mbps
    modes = [ru.current_mode / cfg.n_sleep_modes for ru in sim.rus]
    obs = np.clip(np.array([load_d, load_m, chan_d, chan_m, drop_now, thr_now, *modes]), 0.0, 1.0)
    if rm_states is not None:
        obs = augment(obs, rm_states[0], rm_states[1], granularity)
    return obs


class SleepControlEnv:
    """``reset(seed)`` / ``step(action)`` facade over the slot simulator.

    ``regime`` is ``"markov"``, ``"lagrangian"`` or ``"rmL"`` (e.g. ``"rm10"``).
    Episodes are truncated after ``steps_per_episode`` slots.
    """

    def __init__(
        self,
        regime: str = "rm100",
        base: ScenarioConfig | None = None,
        ranges: ScenarioRanges | None = None,
        steps_per_episode: int = 30,
        aggregate: str = mx.MEAN,
        lagrange: LagrangeState | None = None,
    ) -> None:
        self.regime = regime
        self.granularity = rm_granularity(regime)
        self.base = (base or ScenarioConfig()).validate()
        self.ranges = ranges or ScenarioRanges()
        self.ranges.validate()
        self.steps_per_episode = steps_per_episode
        self.aggregate = aggregate
        self.lagrange = lagrange or LagrangeState()
        self.sim: SimState | None = None
        self.config: ScenarioConfig | None = None

    @property
    def uses_rm(self) -> bool:
        return self.granularity is not None

    @property
    def obs_dim(self) -> int:
        return BASE_FEATURES + self.base.g_rus + (2 if self.uses_rm else 0)

    @property
    def act_dim(self) -> int:
        return self.base.g_rus

    def reset(self, seed: int) -> np.ndarray:
        self.config = make_scenario(seed, self.ranges, self.base)
        self._rng = np.random.default_rng([seed, 1])
        self.sim = init_sim(self.config, self._rng)
        self.metrics = mx.new_metrics(self.config, self.aggregate)
        if self.uses_rm:
            self.rm_d = ConstraintRM(self.granularity, DROP)
            self.rm_m = ConstraintRM(self.granularity, THROUGHPUT)
        self.t = 0
        self.sum_rho_d = 0.0
        self.sum_rho_m = 0.0
        return self._observe(None)

    def _observe(self, outcome: SlotOutcome | None) -> np.ndarray:
        rm = (self.rm_d.current, self.rm_m.current) if self.uses_rm else None
        return build_observation(self.sim, outcome, self.ranges, rm, self.granularity)

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool, StepInfo]:
        if self.sim is None:
            raise RuntimeError("call reset() before step()")
        if self.t >= self.steps_per_episode:
            raise RuntimeError("episode is over; call reset()")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (self.act_dim,):
            raise ValueError(f"action shape {a.shape} != ({self.act_dim},)")
        levels = discretize(a, self.config.n_sleep_modes)
        self.sim, outcome = step(self.sim, levels, self._rng)
        self.metrics = mx.update(self.metrics, outcome, self.config)
        ee = mx.energy_efficiency(outcome.power_all_active_w, outcome.power_actual_w)
        rho_d = mx.drop_violation(self.metrics, self.config.drop_limit)
        rho_m = mx.throughput_violation(self.metrics, self.config.min_throughput_mbps)
        self.sum_rho_d += rho_d
        self.sum_rho_m += rho_m

        rm_d = rm_m = None
        r_d = r_m = 0.0
        if self.uses_rm:
            self.rm_d, r_d = rm_step(self.rm_d, rho_d)
            self.rm_m, r_m = rm_step(self.rm_m, rho_m)
            rm_d, rm_m = self.rm_d.current, self.rm_m.current
            reward = reward_rm(ee, r_d, r_m)
        elif self.regime == MARKOV:
            reward = reward_markov(ee, rho_d, rho_m)
        elif self.regime == LAGRANGIAN:
            reward = reward_lagrangian(ee, rho_d, rho_m, self.lagrange)
        else:  # pragma: no cover - rejected in __init__
            raise ValueError(self.regime)

        self.t += 1
        done = self.t >= self.steps_per_episode
        info = StepInfo(
            outcome=outcome,
            metrics=self.metrics,
            levels=tuple(int(x) for x in levels),
            ee=ee,
            drop_now=mx.group_drop_rate(outcome, self.aggregate),
            thr_now_mbps=mx.group_throughput_mbps(outcome, self.config, self.aggregate),
            rho_d=rho_d,
            rho_m=rho_m,
            rm_d=rm_d,
            rm_m=rm_m,
            r_d=r_d,
            r_m=r_m,
        )
        return self._observe(outcome), float(reward), done, info

    def episode_mean_violations(self) -> tuple[float, float]:
        n = max(1, self.t)
        return self.sum_rho_d / n, self.sum_rho_m / n

    def describe(self) -> dict[str, Any]:
        cfg = self.config
        return {"n_deadline": cfg.n_deadline, "n_constant": cfg.n_constant,
                "load_mbps": cfg.per_user_load_mbps, "seed": cfg.seed}
