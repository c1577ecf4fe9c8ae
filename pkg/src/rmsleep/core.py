"""Domain types and stochastic primitives for the sleep-control simulator.

Units follow one convention throughout: durations in microseconds, powers in
watts, energies in joules, rates in Mbps (equivalently bits per microsecond).
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

DEADLINE = "deadline"
CONSTANT = "constant"

BAD = 0
GOOD = 1


class ConfigError(ValueError):
    """Raised for malformed scenarios, ranges or configuration files."""


@dataclass(frozen=True)
class SleepModeSpec:
    index: int
    power_w: float
    duration_us: float = 0.0
    switch_latency_us: float = 0.0
    switch_energy_j: float = 0.0


@dataclass(frozen=True)
class RuState:
    ru_id: int
    current_mode: int = 0
    remaining_sleep_us: float = 0.0
    remaining_switch_us: float = 0.0


@dataclass(frozen=True)
class ChannelParams:
    p_good_to_bad: float = 0.1
    p_bad_to_good: float = 0.3

    def __post_init__(self) -> None:
        for name in ("p_good_to_bad", "p_bad_to_good"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name}={p} is not a probability")

    @property
    def stationary_good(self) -> float:
        total = self.p_good_to_bad + self.p_bad_to_good
        if total == 0.0:
            return 1.0
        return self.p_bad_to_good / total


@dataclass(frozen=True)
class Packet:
    arrival_slot: int
    deadline_slot: int | None
    size_bits: int


@dataclass
class UserQueue:
    user_id: int
    kind: str
    buffer: list[Packet] = field(default_factory=list)
    channel_state: int = GOOD

    def __len__(self) -> int:
        return len(self.buffer)

    def copy(self) -> UserQueue:
        return UserQueue(self.user_id, self.kind, list(self.buffer), self.channel_state)


# Durations and latencies of the four sleep modes; powers are configurable
# defaults since no absolute table is published alongside them.
DEFAULT_IDLE_POWER_W = 100.0
DEFAULT_SLEEP_POWERS_W = (50.0, 30.0, 15.0, 5.0)
DEFAULT_SLEEP_DURATIONS_US = (71.0, 1_000.0, 10_000.0, 1_000_000.0)
DEFAULT_SWITCH_LATENCIES_US = (35.5, 500.0, 5_000.0, 500_000.0)


def default_sleep_modes(
    idle_power_w: float = DEFAULT_IDLE_POWER_W,
    sleep_powers_w: Sequence[float] = DEFAULT_SLEEP_POWERS_W,
    durations_us: Sequence[float] = DEFAULT_SLEEP_DURATIONS_US,
    latencies_us: Sequence[float] = DEFAULT_SWITCH_LATENCIES_US,
    switch_energies_j: Sequence[float] | None = None,
) -> tuple[SleepModeSpec, ...]:
    """Build the mode table, index 0 being the active mode.

    Unless given explicitly, the switching energy of mode h is the energy of
    ramping up at idle power for the switching latency: ``latency * W^0``.
    """
    if not (len(sleep_powers_w) == len(durations_us) == len(latencies_us)):
        raise ConfigError("sleep-mode columns must have equal length")
    if switch_energies_j is None:
        switch_energies_j = [lat * 1e-6 * idle_power_w for lat in latencies_us]
    modes = [SleepModeSpec(0, float(idle_power_w))]
    for h, (pw, dur, lat, e) in enumerate(
        zip(sleep_powers_w, durations_us, latencies_us, switch_energies_j), start=1
    ):
        modes.append(SleepModeSpec(h, float(pw), float(dur), float(lat), float(e)))
    return tuple(modes)


def validate_sleep_modes(modes: Sequence[SleepModeSpec]) -> None:
    if len(modes) < 2:
        raise ConfigError("need the active mode and at least one sleep mode")
    active = modes[0]
    if active.index != 0 or active.duration_us or active.switch_latency_us or active.switch_energy_j:
        raise ConfigError("mode 0 must be active with zero duration, latency and energy")
    for h, m in enumerate(modes):
        if m.index != h:
            raise ConfigError(f"mode at position {h} has index {m.index}")
    for prev, cur in zip(modes[1:], modes[2:]):
        if not (cur.duration_us > prev.duration_us and cur.switch_latency_us > prev.switch_latency_us):
            raise ConfigError("sleep durations and latencies must increase with depth")
    for m in modes[1:]:
        if not m.power_w < active.power_w:
            raise ConfigError(f"SM{m.index} power {m.power_w} W is not below idle power")
        if m.duration_us <= 0 or m.switch_latency_us < 0 or m.switch_energy_j < 0:
            raise ConfigError(f"SM{m.index} has a non-positive duration or negative cost")


@dataclass(frozen=True)
class ScenarioRanges:
    """Inclusive sampling ranges for the per-episode scenario draw."""

    n_deadline: tuple[int, int] = (4, 5)
    n_constant: tuple[int, int] = (10, 60)
    load_mbps: tuple[float, float] = (0.1, 0.2)

    def validate(self) -> None:
        for name in ("n_deadline", "n_constant", "load_mbps"):
            rng = getattr(self, name)
            if len(rng) != 2 or rng[0] > rng[1]:
                raise ConfigError(f"range {name}={rng} is malformed")
        if self.n_deadline[0] < 1 or self.n_constant[0] < 1:
            raise ConfigError("user-count ranges must start at 1 or more")
        if self.load_mbps[0] < 0:
            raise ConfigError("loads must be non-negative")


@dataclass(frozen=True)
class ScenarioConfig:
    n_deadline: int = 4
    n_constant: int = 10
    per_user_load_mbps: float = 0.15
    deadline_slots: int = 5
    buffer_size: int = 10
    channel_params: ChannelParams = ChannelParams()
    sleep_modes: tuple[SleepModeSpec, ...] = field(default_factory=default_sleep_modes)
    g_rus: int = 4
    slot_us: float = 10_000.0
    packet_bits: int = 12_000
    tx_power_low_w: float = 10.0
    tx_power_high_w: float = 20.0
    drop_limit: float = 0.1
    min_throughput_mbps: float = 0.05
    seed: int = 0

    @property
    def n_sleep_modes(self) -> int:
        """H, the number of sleep modes (excluding the active mode)."""
        return len(self.sleep_modes) - 1

    @property
    def n_users(self) -> int:
        return self.n_deadline + self.n_constant

    @property
    def arrival_prob(self) -> float:
        return self.per_user_load_mbps * self.slot_us / self.packet_bits

    @property
    def mu_max_mbps(self) -> float:
        return self.packet_bits / self.slot_us

    def validate(self) -> ScenarioConfig:
        if self.n_deadline < 1 or self.n_constant < 1:
            raise ConfigError("both user groups need at least one user")
        if not 0.0 < self.drop_limit < 1.0:
            raise ConfigError(f"drop_limit={self.drop_limit} must lie in (0, 1)")
        if self.per_user_load_mbps < 0:
            raise ConfigError("per-user load must be non-negative")
        if self.arrival_prob > 1.0:
            raise ConfigError(
                f"arrival probability {self.arrival_prob:.3f} exceeds 1; "
                "lower the load or the slot length, or raise packet_bits"
            )
        if not 0.0 <= self.min_throughput_mbps < self.mu_max_mbps:
            raise ConfigError("min throughput must lie in [0, mu_max)")
        if self.deadline_slots < 2:
            raise ConfigError("deadline_slots must be at least 2")
        if self.buffer_size < 1 or self.g_rus < 1:
            raise ConfigError("buffer_size and g_rus must be positive")
        if self.slot_us <= 0 or self.packet_bits <= 0:
            raise ConfigError("slot_us and packet_bits must be positive")
        if not 0 <= self.tx_power_low_w <= self.tx_power_high_w:
            raise ConfigError("need 0 <= tx_power_low_w <= tx_power_high_w")
        validate_sleep_modes(self.sleep_modes)
        return self


def make_scenario(
    seed: int,
    ranges: ScenarioRanges | None = None,
    base: ScenarioConfig | None = None,
) -> ScenarioConfig:
    """Draw user counts and load uniformly from ``ranges``; the rest comes from ``base``."""
    ranges = ranges or ScenarioRanges()
    ranges.validate()
    base = base or ScenarioConfig()
    rng = np.random.default_rng(seed)
    n_d = int(rng.integers(ranges.n_deadline[0], ranges.n_deadline[1] + 1))
    n_c = int(rng.integers(ranges.n_constant[0], ranges.n_constant[1] + 1))
    lo, hi = ranges.load_mbps
    load = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    cfg = dataclasses.replace(
        base, n_deadline=n_d, n_constant=n_c, per_user_load_mbps=load, seed=int(seed)
    )
    return cfg.validate()


def channel_step(state: int, params: ChannelParams, rng: np.random.Generator) -> int:
    u = rng.random()
    if state == GOOD:
        return BAD if u < params.p_good_to_bad else GOOD
    return GOOD if u < params.p_bad_to_good else BAD


def channel_step_many(
    states: np.ndarray, params: ChannelParams, rng: np.random.Generator
) -> np.ndarray:
    """Vectorised ``channel_step`` over independent per-user chains."""
    u = rng.random(states.shape[0])
    flip = np.where(states == GOOD, u < params.p_good_to_bad, u < params.p_bad_to_good)
    return np.where(flip, 1 - states, states).astype(np.int8)


def arrival_draw(queue: UserQueue, config: ScenarioConfig, rng: np.random.Generator) -> int:
    if queue.kind != DEADLINE:
        return 0
    return int(rng.random() < config.arrival_prob)


def required_tx_power(channel_state: int, config: ScenarioConfig) -> float:
    return config.tx_power_high_w if channel_state == BAD else config.tx_power_low_w


# --------------------------------------------------------------------------
# Plain-text key/value configuration
# --------------------------------------------------------------------------

_SECTION = "rmsleep"

_SCENARIO_SCALARS: dict[str, type] = {
    "deadline_slots": int,
    "buffer_size": int,
    "g_rus": int,
    "slot_us": float,
    "packet_bits": int,
    "tx_power_low_w": float,
    "tx_power_high_w": float,
    "drop_limit": float,
    "min_throughput_mbps": float,
}


def read_kv_file(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines (``#`` comments, no sections) into a dict."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return dict(parser[_SECTION])


def _floats(value: str) -> list[float]:
    return [float(v) for v in value.replace(",", " ").split()]


def scenario_from_kv(kv: Mapping[str, Any]) -> tuple[ScenarioConfig, ScenarioRanges]:
    """Build base scenario and sampling ranges from parsed key/value pairs.

    Unknown keys are ignored here so one file can also carry run and TD3 keys.
    """
    try:
        base_kw: dict[str, Any] = {
            k: typ(kv[k]) for k, typ in _SCENARIO_SCALARS.items() if k in kv
        }
        if "p_good_to_bad" in kv or "p_bad_to_good" in kv:
            base_kw["channel_params"] = ChannelParams(
                float(kv.get("p_good_to_bad", 0.1)), float(kv.get("p_bad_to_good", 0.3))
            )
        sm_keys = ("sm_power_w", "sm_duration_us", "sm_switch_latency_us", "sm_switch_energy_j")
        if any(k in kv for k in sm_keys):
            powers = _floats(kv.get("sm_power_w", "100 50 30 15 5"))
            durations = _floats(kv["sm_duration_us"]) if "sm_duration_us" in kv else [0.0, *DEFAULT_SLEEP_DURATIONS_US]
            latencies = _floats(kv["sm_switch_latency_us"]) if "sm_switch_latency_us" in kv else [0.0, *DEFAULT_SWITCH_LATENCIES_US]
            energies = _floats(kv["sm_switch_energy_j"])[1:] if "sm_switch_energy_j" in kv else None
            base_kw["sleep_modes"] = default_sleep_modes(
                powers[0], powers[1:], durations[1:], latencies[1:], energies
            )
        ranges_kw: dict[str, Any] = {}
        for key in ("n_deadline", "n_constant"):
            if f"{key}_range" in kv:
                lo, hi = (int(v) for v in _floats(kv[f"{key}_range"]))
                ranges_kw[key] = (lo, hi)
        if "load_mbps_range" in kv:
            lo, hi = _floats(kv["load_mbps_range"])
            ranges_kw["load_mbps"] = (lo, hi)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad configuration value: {exc}") from exc
    base = ScenarioConfig(**base_kw)
    validate_sleep_modes(base.sleep_modes)
    ranges = ScenarioRanges(**ranges_kw)
    ranges.validate()
    return base, ranges
