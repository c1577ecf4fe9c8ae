"""Per-slot reward variants and the Lagrange multiplier state."""
from __future__ import annotations

from dataclasses import dataclass, replace

RM_PREFIX = "rm"
MARKOV = "markov"
LAGRANGIAN = "lagrangian"
REGIMES = ("rm100", "rm10", MARKOV, LAGRANGIAN)


def rm_granularity(regime: str) -> int | None:
    """``"rm100"`` -> 100; ``None`` for the Markovian regimes."""
    if regime in (MARKOV, LAGRANGIAN):
        return None
    if regime.startswith(RM_PREFIX) and regime[len(RM_PREFIX):].isdigit():
        value = int(regime[len(RM_PREFIX):])
        if value >= 1:
            return value
    raise ValueError(f"unknown reward regime {regime!r}; expected one of {REGIMES} or rmN")


@dataclass(frozen=True)
class LagrangeState:
    lambda_d: float = 1.0
    lambda_m: float = 1.0
    lr: float = 0.01

    def __post_init__(self) -> None:
        if self.lambda_d < 0 or self.lambda_m < 0:
            raise ValueError("Lagrange multipliers must be non-negative")


def reward_markov(ee: float, rho_d: float, rho_m: float) -> float:
    return ee - rho_d - rho_m


def reward_rm(ee: float, r_d: float, r_m: float) -> float:
    return ee + r_d + r_m


def reward_lagrangian(ee: float, rho_d: float, rho_m: float, lag: LagrangeState) -> float:
    return ee - lag.lambda_d * rho_d - lag.lambda_m * rho_m


def update_multipliers(lag: LagrangeState, mean_rho_d: float, mean_rho_m: float) -> LagrangeState:
    """One projected dual-ascent step on the episode-mean violations."""
    return replace(
        lag,
        lambda_d=max(0.0, lag.lambda_d + lag.lr * mean_rho_d),
        lambda_m=max(0.0, lag.lambda_m + lag.lr * mean_rho_m),
    )
