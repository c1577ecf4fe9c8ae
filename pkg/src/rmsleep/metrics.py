"""Running QoS averages, energy efficiency and constraint-violation signals."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .core import ConfigError, ScenarioConfig
from .sim import SlotOutcome

MEAN = "mean"
SUM = "sum"


@dataclass(frozen=True)
class RunningMetrics:
    """Within-episode running means.

    ``aggregate`` selects how per-user quantities combine across a group:
    ``"mean"`` (default, keeps violations inside (-1, 1)) or ``"sum"``.
    """

    mu_max_mbps: float
    slots_elapsed: int = 0
    mean_drop_rate: float = 0.0
    mean_throughput_mbps: float = 0.0
    mean_ee: float = 0.0
    cum_switch_energy_j: float = 0.0
    aggregate: str = MEAN


def max_throughput(config: ScenarioConfig) -> float:
    """Per-user ceiling of one packet per slot, in Mbps."""
    return config.packet_bits / config.slot_us


def energy_efficiency(w0: float, w: float) -> float:
    if w0 <= 0:
        raise ValueError(f"all-active power must be positive, got {w0}")
    if not 0 <= w <= w0 * (1 + 1e-12):
        raise ValueError(f"power {w} outside [0, {w0}]")
    return max(0.0, (w0 - w) / w0)


def drop_violation(metrics: RunningMetrics, drop_limit: float) -> float:
    return metrics.mean_drop_rate - drop_limit


def throughput_violation(metrics: RunningMetrics, min_throughput_mbps: float) -> float:
    if metrics.mu_max_mbps <= 0:
        raise ConfigError("mu_max must be positive")
    rho = (min_throughput_mbps - metrics.mean_throughput_mbps) / metrics.mu_max_mbps
    # keep inside the open interval (-1, 1) at the saturated-service corner
    if rho <= -1.0:
        rho = math.nextafter(-1.0, 0.0)
    return rho


def slot_drop_rates(outcome: SlotOutcome) -> dict[int, float]:
    """Per-user dropped / max(1, packets at risk) for deadline users."""
    return {
        uid: d / max(1, outcome.per_user_at_risk[uid])
        for uid, d in outcome.per_user_dropped.items()
    }


def group_drop_rate(outcome: SlotOutcome, aggregate: str = MEAN) -> float:
    rates = slot_drop_rates(outcome)
    if not rates:
        return 0.0
    total = sum(rates.values())
    return total / len(rates) if aggregate == MEAN else total


def group_throughput_mbps(outcome: SlotOutcome, config: ScenarioConfig, aggregate: str = MEAN) -> float:
    n_d = config.n_deadline
    served = [outcome.per_user_served[uid] for uid in range(n_d + 1, config.n_users + 1)]
    total = sum(served) / config.slot_us
    return total / len(served) if aggregate == MEAN else total


def new_metrics(config: ScenarioConfig, aggregate: str = MEAN) -> RunningMetrics:
    if aggregate not in (MEAN, SUM):
        raise ConfigError(f"unknown aggregate {aggregate!r}")
    return RunningMetrics(mu_max_mbps=max_throughput(config), aggregate=aggregate)


def update(metrics: RunningMetrics, outcome: SlotOutcome, config: ScenarioConfig) -> RunningMetrics:
    n = metrics.slots_elapsed + 1
    drop = group_drop_rate(outcome, metrics.aggregate)
    thr = group_throughput_mbps(outcome, config, metrics.aggregate)
    ee = energy_efficiency(outcome.power_all_active_w, outcome.power_actual_w)
    return replace(
        metrics,
        slots_elapsed=n,
        mean_drop_rate=metrics.mean_drop_rate + (drop - metrics.mean_drop_rate) / n,
        mean_throughput_mbps=metrics.mean_throughput_mbps + (thr - metrics.mean_throughput_mbps) / n,
        mean_ee=metrics.mean_ee + (ee - metrics.mean_ee) / n,
        cum_switch_energy_j=metrics.cum_switch_energy_j + outcome.switch_energy_j,
    )
