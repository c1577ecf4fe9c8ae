"""Training and evaluation runs, CSV/JSON persistence, and trace analyses."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .core import ConfigError, ScenarioConfig, ScenarioRanges, scenario_from_kv
from .env import SleepControlEnv, StepInfo
from .metrics import MEAN
from .rewards import LAGRANGIAN, LagrangeState, rm_granularity, update_multipliers
from .td3 import Td3Agent, Td3Config, TrainingError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUT_DIR_ENV = "RMSLEEP_OUT_DIR"

EPISODE_COLUMNS = [
    "schema_version", "episode", "scenario_seed", "n_deadline", "n_constant", "load_mbps",
    "mean_ee", "mean_rho_d", "mean_rho_m", "final_drop_rate", "final_throughput_mbps",
    "total_reward", "lambda_d", "lambda_m", "rm_d_terminal_visits", "rm_m_terminal_visits",
    "sm_changes", "switch_energy_j",
]


def trace_columns(g_rus: int) -> list[str]:
    return [
        "schema_version", "episode", "slot",
        *[f"mode_ru{g}" for g in range(1, g_rus + 1)],
        "served_bits_deadline", "served_bits_constant", "dropped_packets",
        "power_actual_w", "power_all_active_w", "switch_energy_j", "ee",
        "drop_now", "thr_now_mbps", "mean_drop_rate", "mean_throughput_mbps",
        "rho_d", "rho_m", "rm_d", "rm_m", "reward",
    ]


@dataclass
class RunConfig:
    regime: str = "rm100"
    episodes: int = 5000
    steps_per_episode: int = 30
    seeds: tuple[int, ...] = (0,)
    output_dir: Path = Path("runs")
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    ranges: ScenarioRanges = field(default_factory=ScenarioRanges)
    td3: Td3Config = field(default_factory=Td3Config)
    lambda_init: float = 1.0
    lambda_lr: float = 0.01
    aggregate: str = MEAN
    checkpoint_every: int = 500
    write_trace: bool = True

    def validate(self) -> RunConfig:
        if self.episodes < 1 or self.steps_per_episode < 1:
            raise ConfigError("episodes and steps_per_episode must be >= 1")
        try:
            rm_granularity(self.regime)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.base.validate()
        self.ranges.validate()
        return self


_RUN_KEYS = {"regime": str, "episodes": int, "steps_per_episode": int,
             "lambda_init": float, "lambda_lr": float, "aggregate": str,
             "checkpoint_every": int}


def run_config_from_kv(kv: Mapping[str, str]) -> RunConfig:
    """Build a RunConfig from a parsed key/value file (scenario, run and ``td3_*`` keys)."""
    base, ranges = scenario_from_kv(kv)
    kw: dict[str, Any] = {k: typ(kv[k]) for k, typ in _RUN_KEYS.items() if k in kv}
    if "seeds" in kv:
        kw["seeds"] = tuple(int(s) for s in kv["seeds"].replace(",", " ").split())
    if "output_dir" in kv:
        kw["output_dir"] = Path(kv["output_dir"])
    if "write_trace" in kv:
        kw["write_trace"] = kv["write_trace"].strip().lower() in ("1", "true", "yes", "on")
    td3_kw: dict[str, Any] = {}
    for f in dataclasses.fields(Td3Config):
        key = f"td3_{f.name}"
        if key not in kv:
            continue
        if f.name == "hidden":
            td3_kw[f.name] = tuple(int(v) for v in kv[key].replace(",", " ").split())
        elif f.name == "dtype":
            td3_kw[f.name] = kv[key].strip()
        else:
            td3_kw[f.name] = type(getattr(Td3Config(), f.name))(float(kv[key]))
    return RunConfig(base=base, ranges=ranges, td3=Td3Config(**td3_kw), **kw)


def resolve_output_dir(path: Path | None) -> Path:
    env = os.environ.get(OUT_DIR_ENV)
    return Path(env) if env else Path(path or "runs")


def episode_seed(run_seed: int, episode: int) -> int:
    """Scenario seed for ``episode`` of a run, as a 63-bit integer."""
    state = np.random.SeedSequence([run_seed, episode]).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


def _trace_row(episode: int, info: StepInfo, reward: float) -> list[Any]:
    o, m = info.outcome, info.metrics
    return [
        SCHEMA_VERSION, episode, o.slot, *o.ru_modes,
        o.served_bits_deadline, o.served_bits_constant, o.dropped_packets,
        o.power_actual_w, o.power_all_active_w, o.switch_energy_j, info.ee,
        info.drop_now, info.thr_now_mbps, m.mean_drop_rate, m.mean_throughput_mbps,
        info.rho_d, info.rho_m,
        "" if info.rm_d is None else info.rm_d,
        "" if info.rm_m is None else info.rm_m,
        reward,
    ]


def count_changes(modes: np.ndarray) -> tuple[np.ndarray, int]:
    """Per-RU and any-RU counts of slots whose mode differs from the previous slot."""
    modes = np.asarray(modes)
    if len(modes) < 2:
        return np.zeros(modes.shape[1] if modes.ndim == 2 else 0, dtype=int), 0
    diff = modes[1:] != modes[:-1]
    return diff.sum(axis=0), int(diff.any(axis=1).sum())


def run_episode(
    env: SleepControlEnv,
    agent: Td3Agent,
    scenario_seed: int,
    explore: bool,
    learn: bool,
    episode: int = 0,
    trace: list[list[Any]] | None = None,
) -> dict[str, Any]:
    obs = env.reset(scenario_seed)
    total_reward = ee_sum = switch_e = 0.0
    modes, visits_d, visits_m = [], 0, 0
    done = False
    info: StepInfo | None = None
    while not done:
        action = agent.select_action(obs, explore=explore)
        nobs, reward, done, info = env.step(action)
        if not math.isfinite(reward):
            raise TrainingError(f"non-finite reward {reward} at episode {episode}, slot {info.outcome.slot}")
        if learn:
            # truncation is not termination: keep bootstrapping
            agent.observe(obs, action, reward, nobs, False)
        total_reward += reward
        ee_sum += info.ee
        switch_e += info.outcome.switch_energy_j
        modes.append(info.outcome.ru_modes)
        if env.uses_rm:
            visits_d += info.rm_d == env.granularity
            visits_m += info.rm_m == env.granularity
        if trace is not None:
            trace.append(_trace_row(episode, info, reward))
        obs = nobs
    mean_rho_d, mean_rho_m = env.episode_mean_violations()
    _, changes = count_changes(np.array(modes))
    return {
        "scenario_seed": scenario_seed,
        **env.describe(),
        "mean_ee": ee_sum / env.t,
        "mean_rho_d": mean_rho_d,
        "mean_rho_m": mean_rho_m,
        "final_drop_rate": info.metrics.mean_drop_rate,
        "final_throughput_mbps": info.metrics.mean_throughput_mbps,
        "total_reward": total_reward,
        "rm_d_terminal_visits": visits_d,
        "rm_m_terminal_visits": visits_m,
        "sm_changes": changes,
        "switch_energy_j": switch_e,
        "modes": np.array(modes),
    }


def make_env(config: RunConfig) -> SleepControlEnv:
    return SleepControlEnv(
        config.regime, config.base, config.ranges, config.steps_per_episode,
        config.aggregate, LagrangeState(config.lambda_init, config.lambda_init, config.lambda_lr),
    )


def run_dir(config: RunConfig, seed: int) -> Path:
    return resolve_output_dir(config.output_dir) / f"{config.regime}_seed{seed}"


def train_run(config: RunConfig, seed: int) -> dict[str, Any]:
    """Train one agent; write episodes.csv, trace.csv, checkpoints and report.json."""
    config.validate()
    out = run_dir(config, seed)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(config)
    agent = Td3Agent(env.obs_dim, env.act_dim, config.td3, seed)
    meta = {"regime": config.regime, "g_rus": config.base.g_rus,
            "steps_per_episode": config.steps_per_episode, "run_seed": seed}
    started = time.perf_counter()

    ep_file = open(out / "episodes.csv", "w", newline="")
    tr_file = open(out / "trace.csv", "w", newline="") if config.write_trace else None
    rows: list[dict[str, Any]] = []
    try:
        ep_writer = csv.writer(ep_file)
        ep_writer.writerow(EPISODE_COLUMNS)
        tr_writer = None
        if tr_file is not None:
            tr_writer = csv.writer(tr_file)
            tr_writer.writerow(trace_columns(config.base.g_rus))
        for ep in range(config.episodes):
            trace: list[list[Any]] | None = [] if tr_writer else None
            res = run_episode(env, agent, episode_seed(seed, ep), True, True, ep, trace)
            if config.regime == LAGRANGIAN:
                env.lagrange = update_multipliers(env.lagrange, res["mean_rho_d"], res["mean_rho_m"])
            res.update(episode=ep, lambda_d=env.lagrange.lambda_d if config.regime == LAGRANGIAN else "",
                       lambda_m=env.lagrange.lambda_m if config.regime == LAGRANGIAN else "")
            ep_writer.writerow([SCHEMA_VERSION] + [res[c] for c in EPISODE_COLUMNS[1:]])
            if tr_writer:
                tr_writer.writerows(trace)
            rows.append({k: v for k, v in res.items() if k != "modes"})
            if config.checkpoint_every and (ep + 1) % config.checkpoint_every == 0:
                agent.save(out / f"checkpoint_ep{ep + 1}", {**meta, "episode": ep + 1})
            if (ep + 1) % 100 == 0:
                log.info("%s seed %d: episode %d mean_ee=%.3f rho_d=%.3f rho_m=%.3f",
                         config.regime, seed, ep + 1, res["mean_ee"], res["mean_rho_d"], res["mean_rho_m"])
    finally:
        ep_file.close()
        if tr_file is not None:
            tr_file.close()

    agent.save(out / "checkpoint_final", {**meta, "episode": config.episodes})
    report = summarize_training(rows)
    report.update(regime=config.regime, seed=seed, episodes=config.episodes,
                  wall_seconds=round(time.perf_counter() - started, 3))
    if config.regime == LAGRANGIAN:
        report.update(lambda_d=env.lagrange.lambda_d, lambda_m=env.lagrange.lambda_m)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


def train(config: RunConfig) -> list[dict[str, Any]]:
    return [train_run(config, s) for s in config.validate().seeds]


def summarize_training(rows: Sequence[Mapping[str, Any]], tail: float = 0.1) -> dict[str, Any]:
    """Means over the last ``tail`` fraction of episodes."""
    k = max(1, int(round(len(rows) * tail)))
    last = rows[-k:]
    keys = ("mean_ee", "mean_rho_d", "mean_rho_m", "final_drop_rate", "final_throughput_mbps", "total_reward")
    return {f"final_{key}": float(np.mean([r[key] for r in last])) for key in keys} | {"tail_episodes": k}


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def confidence_interval(values: Sequence[float], z: float = 1.96) -> dict[str, Any]:
    """Normal-approximation interval ``mean +/- z * sd / sqrt(n)`` (sample sd)."""
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("no values")
    mean = float(x.mean())
    if n == 1:
        return {"mean": mean, "lo": mean, "hi": mean, "sd": float("nan"), "n": 1, "degenerate": True}
    sd = float(x.std(ddof=1))
    half = z * sd / math.sqrt(n)
    return {"mean": mean, "lo": mean - half, "hi": mean + half, "sd": sd, "n": n, "degenerate": False}


def _eval_one(args: tuple[Path, int, RunConfig]) -> dict[str, Any]:
    checkpoint, seed, config = args
    agent = Td3Agent.load(checkpoint)
    env = make_env(config)
    if agent.obs_dim != env.obs_dim or agent.act_dim != env.act_dim:
        raise ValueError(
            f"checkpoint expects obs/act dims {agent.obs_dim}/{agent.act_dim}, "
            f"environment provides {env.obs_dim}/{env.act_dim}"
        )
    return run_episode(env, agent, seed, explore=False, learn=False)


def evaluate(
    checkpoint: str | Path,
    seeds: Sequence[int],
    config: RunConfig | None = None,
    workers: int = 1,
) -> dict[str, Any]:
    """Greedy rollouts, one episode per scenario seed, summarised with 95% intervals."""
    checkpoint = Path(checkpoint)
    header = json.loads(checkpoint.with_suffix(".json").read_text())
    meta = header.get("metadata", {})
    config = config or RunConfig()
    config = dataclasses.replace(
        config,
        regime=meta.get("regime", config.regime),
        steps_per_episode=meta.get("steps_per_episode", config.steps_per_episode),
    )
    jobs = [(checkpoint, int(s), config) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_eval_one, jobs))
    else:
        results = [_eval_one(j) for j in jobs]
    modes = np.concatenate([r["modes"] for r in results])
    report: dict[str, Any] = {
        "checkpoint": str(checkpoint),
        "regime": config.regime,
        "seeds": [int(s) for s in seeds],
        "ee": confidence_interval([r["mean_ee"] for r in results]),
        "drop_rate": confidence_interval([r["final_drop_rate"] for r in results]),
        "throughput_mbps": confidence_interval([r["final_throughput_mbps"] for r in results]),
        "rho_d": confidence_interval([r["mean_rho_d"] for r in results]),
        "rho_m": confidence_interval([r["mean_rho_m"] for r in results]),
        "sm_distribution": sm_distribution(modes, config.base.n_sleep_modes).tolist(),
        "sm_changes_per_episode": float(np.mean([r["sm_changes"] for r in results])),
    }
    report["per_seed"] = [{k: v for k, v in r.items() if k != "modes"} for r in results]
    return report


# --------------------------------------------------------------------------
# Trace analyses
# --------------------------------------------------------------------------

def read_trace(path: str | Path) -> dict[int, np.ndarray]:
    """Mode matrix (slots x G) per episode from a trace CSV."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        mode_cols = [c for c in reader.fieldnames or [] if c.startswith("mode_ru")]
        per_ep: dict[int, list[list[int]]] = {}
        for row in reader:
            if int(row["schema_version"]) != SCHEMA_VERSION:
                raise ValueError(f"unsupported trace schema {row['schema_version']}")
            per_ep.setdefault(int(row["episode"]), []).append([int(row[c]) for c in mode_cols])
    return {ep: np.array(m, dtype=int) for ep, m in per_ep.items()}


def analyze_power_cycling(trace: Mapping[int, np.ndarray]) -> dict[int, dict[str, Any]]:
    out = {}
    for ep, modes in sorted(trace.items()):
        per_ru, total = count_changes(modes)
        out[ep] = {"per_ru": per_ru.tolist(), "total": total}
    return out


def sm_distribution(modes: np.ndarray, n_sleep_modes: int) -> np.ndarray:
    """G x (H+1) matrix: fraction of slots each RU spent in each mode."""
    modes = np.asarray(modes, dtype=int)
    slots, g = modes.shape
    dist = np.zeros((g, n_sleep_modes + 1))
    for ru in range(g):
        dist[ru] = np.bincount(modes[:, ru], minlength=n_sleep_modes + 1) / slots
    return dist


def analyze(trace_path: str | Path, n_sleep_modes: int = 4, last: int | None = None) -> dict[str, Any]:
    """Power cycling per episode and the SM distribution over the last ``last`` episodes."""
    trace = read_trace(trace_path)
    episodes = sorted(trace)
    if last:
        episodes = episodes[-last:]
    cycling = analyze_power_cycling({ep: trace[ep] for ep in episodes})
    modes = np.concatenate([trace[ep] for ep in episodes])
    return {
        "episodes": len(episodes),
        "power_cycling": {str(k): v for k, v in cycling.items()},
        "mean_changes_per_episode": float(np.mean([v["total"] for v in cycling.values()])),
        "sm_distribution": sm_distribution(modes, n_sleep_modes).tolist(),
    }


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default))


def _json_default(o: Any) -> Any:
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))

