"""Slot-by-slot dynamics: RU sleep timers, deadline queues, scheduling and power."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    CONSTANT,
    DEADLINE,
    Packet,
    RuState,
    ScenarioConfig,
    SleepModeSpec,
    UserQueue,
    channel_step_many,
    required_tx_power,
)

_EPS_US = 1e-9


@dataclass
class SlotOutcome:
    slot: int
    served_bits_deadline: int
    served_bits_constant: int
    dropped_packets: int
    per_user_served: dict[int, int]
    per_user_dropped: dict[int, int]
    per_user_arrivals: dict[int, int]
    per_user_at_risk: dict[int, int]
    power_actual_w: float
    power_all_active_w: float
    switch_energy_j: float
    tx_powers: dict[int, float]
    ru_modes: tuple[int, ...]
    channel_states: dict[int, int]
    assignments: dict[int, int] = field(default_factory=dict)


@dataclass
class SimState:
    config: ScenarioConfig
    rus: list[RuState]
    queues: list[UserQueue]
    cum_served_bits: dict[int, int]
    t: int = 0

    def copy(self) -> SimState:
        return SimState(
            self.config,
            list(self.rus),
            [q.copy() for q in self.queues],
            dict(self.cum_served_bits),
            self.t,
        )

    @property
    def deadline_queues(self) -> list[UserQueue]:
        return self.queues[: self.config.n_deadline]

    @property
    def constant_queues(self) -> list[UserQueue]:
        return self.queues[self.config.n_deadline :]


def init_sim(config: ScenarioConfig, rng: np.random.Generator) -> SimState:
    """All RUs active, empty deadline queues, channels drawn from the stationary law."""
    n = config.n_users
    good = rng.random(n) < config.channel_params.stationary_good
    queues = []
    for i in range(n):
        uid = i + 1
        if i < config.n_deadline:
            q = UserQueue(uid, DEADLINE, [], int(good[i]))
        else:
            # saturated user: a synthetic head packet that is never consumed
            q = UserQueue(uid, CONSTANT, [Packet(0, None, config.packet_bits)], int(good[i]))
        queues.append(q)
    rus = [RuState(g + 1) for g in range(config.g_rus)]
    return SimState(config, rus, queues, {q.user_id: 0 for q in queues}, 0)


def apply_action(
    rus: Sequence[RuState], action: Sequence[int], sleep_modes: Sequence[SleepModeSpec]
) -> list[RuState]:
    """Send active RUs to the requested mode; sleeping RUs ignore the action."""
    if len(action) != len(rus):
        raise ValueError(f"action has {len(action)} components for {len(rus)} RUs")
    out = []
    for ru, h in zip(rus, action):
        h = int(h)
        if not 0 <= h < len(sleep_modes):
            raise ValueError(f"sleep mode {h} outside 0..{len(sleep_modes) - 1}")
        if ru.current_mode != 0 or h == 0:
            out.append(ru)
            continue
        sm = sleep_modes[h]
        out.append(replace(ru, current_mode=h, remaining_sleep_us=sm.duration_us,
                           remaining_switch_us=sm.switch_latency_us))
    return out


class RuAdvance(NamedTuple):
    state: RuState
    active_fraction: float
    switch_energy_j: float
    mean_power_w: float


def advance_ru(ru: RuState, slot_us: float, sleep_modes: Sequence[SleepModeSpec]) -> RuAdvance:
    """Run one slot of the RU timeline: sleep, then ramp-up, then active.

    The ramp-up interval draws idle power. The one-shot switching energy is
    charged when ramp-up completes and is reported on its own.
    """
    idle_w = sleep_modes[0].power_w
    if ru.current_mode == 0:
        return RuAdvance(ru, 1.0, 0.0, idle_w)
    sm = sleep_modes[ru.current_mode]
    budget = slot_us
    sleep_used = min(ru.remaining_sleep_us, budget)
    budget -= sleep_used
    switch_used = min(ru.remaining_switch_us, budget)
    budget -= switch_used
    rem_sleep = ru.remaining_sleep_us - sleep_used
    rem_switch = ru.remaining_switch_us - switch_used
    energy = 0.0
    if rem_sleep <= _EPS_US and rem_switch <= _EPS_US:
        new = RuState(ru.ru_id)
        energy = sm.switch_energy_j
        active_us = budget
    else:
        new = replace(ru, remaining_sleep_us=max(rem_sleep, 0.0),
                      remaining_switch_us=max(rem_switch, 0.0))
        active_us = 0.0
    power = (sleep_used * sm.power_w + (switch_used + active_us) * idle_w) / slot_us
    return RuAdvance(new, active_us / slot_us, energy, power)


def drop_expired(
    queue: UserQueue, t: int, new_arrival: int, buffer_size: int
) -> tuple[UserQueue, int]:
    """Apply both drop rules to a deadline queue at the start of slot ``t``.

    Packets with one slot (or less) left before their deadline are dropped.
    If a packet arrives while the buffer is full, the head is dropped to make
    room. Deadlines are non-decreasing front to back, so an expiring packet is
    always at the head and the two rules never drop the same packet twice.
    """
    if queue.kind != DEADLINE:
        raise ValueError(f"user {queue.user_id} is not deadline-constrained")
    kept = [p for p in queue.buffer if p.deadline_slot - t > 1]
    dropped = len(queue.buffer) - len(kept)
    if new_arrival and len(kept) >= buffer_size:
        kept = kept[len(kept) - buffer_size + 1 :]
        dropped = len(queue.buffer) - len(kept)
    return UserQueue(queue.user_id, queue.kind, kept, queue.channel_state), dropped


def schedule_service(
    queues: Sequence[UserQueue], active_rus: Sequence[int], cum_served_bits: dict[int, int]
) -> dict[int, int]:
    """Map each fully active RU to at most one user.

    Deadline users with packets go first (earliest head deadline, then user
    id); remaining RUs serve constant-rate users with the least cumulative
    service so far (then user id).
    """
    deadline = sorted(
        (q for q in queues if q.kind == DEADLINE and q.buffer),
        key=lambda q: (q.buffer[0].deadline_slot, q.user_id),
    )
    constant = sorted(
        (q for q in queues if q.kind == CONSTANT and q.buffer),
        key=lambda q: (cum_served_bits.get(q.user_id, 0), q.user_id),
    )
    candidates = [q.user_id for q in deadline] + [q.user_id for q in constant]
    return {ru: uid for ru, uid in zip(sorted(active_rus), candidates)}


def queue_update(queue: UserQueue, served: int, arrival: Packet | None) -> UserQueue:
    """Serve the head (deadline users only), then append the new arrival."""
    if served not in (0, 1):
        raise ValueError("at most one packet is served per user and slot")
    buf = list(queue.buffer)
    if queue.kind == DEADLINE:
        if served:
            buf.pop(0)
        if arrival is not None:
            buf.append(arrival)
    return UserQueue(queue.user_id, queue.kind, buf, queue.channel_state)


def step(
    state: SimState, action: Sequence[int], rng: np.random.Generator
) -> tuple[SimState, SlotOutcome]:
    """Advance one slot. ``state`` is left untouched."""
    cfg = state.config
    modes = cfg.sleep_modes
    t = state.t
    channels = {q.user_id: q.channel_state for q in state.queues}

    acted = apply_action(state.rus, action, modes)
    advanced = [advance_ru(ru, cfg.slot_us, modes) for ru in acted]
    rus = [a.state for a in advanced]
    active_rus = [a.state.ru_id for a in advanced if a.active_fraction >= 1.0]

    arrivals_vec = rng.random(cfg.n_deadline) < cfg.arrival_prob
    queues: list[UserQueue] = []
    arrivals: dict[int, int] = {}
    dropped: dict[int, int] = {}
    at_risk: dict[int, int] = {}
    for i, q in enumerate(state.queues):
        if q.kind == DEADLINE:
            a = int(arrivals_vec[i])
            arrivals[q.user_id] = a
            at_risk[q.user_id] = len(q.buffer) + a
            q, dropped[q.user_id] = drop_expired(q, t, a, cfg.buffer_size)
        queues.append(q)

    assignments = schedule_service(queues, active_rus, state.cum_served_bits)
    served_users = set(assignments.values())

    new_queues = []
    per_user_served: dict[int, int] = {}
    tx_powers: dict[int, float] = {}
    cum = dict(state.cum_served_bits)
    for q in queues:
        uid = q.user_id
        served = int(uid in served_users)
        arrival = None
        if q.kind == DEADLINE and arrivals[uid]:
            arrival = Packet(t, t + cfg.deadline_slots, cfg.packet_bits)
        new_queues.append(queue_update(q, served, arrival))
        per_user_served[uid] = served * cfg.packet_bits
        tx_powers[uid] = required_tx_power(q.channel_state, cfg) if served else 0.0
        cum[uid] += per_user_served[uid]

    tx_total = sum(tx_powers.values())
    power_actual = sum(a.mean_power_w for a in advanced) + tx_total
    power_all_active = cfg.g_rus * modes[0].power_w + tx_total

    states = np.fromiter((q.channel_state for q in new_queues), dtype=np.int8, count=len(new_queues))
    nxt = channel_step_many(states, cfg.channel_params, rng)
    for q, y in zip(new_queues, nxt):
        q.channel_state = int(y)

    n_d = cfg.n_deadline
    outcome = SlotOutcome(
        slot=t,
        served_bits_deadline=sum(per_user_served[q.user_id] for q in queues[:n_d]),
        served_bits_constant=sum(per_user_served[q.user_id] for q in queues[n_d:]),
        dropped_packets=sum(dropped.values()),
        per_user_served=per_user_served,
        per_user_dropped=dropped,
        per_user_arrivals=arrivals,
        per_user_at_risk=at_risk,
        power_actual_w=power_actual,
        power_all_active_w=power_all_active,
        switch_energy_j=sum(a.switch_energy_j for a in advanced),
        tx_powers=tx_powers,
        ru_modes=tuple(ru.current_mode for ru in acted),
        channel_states=channels,
        assignments=assignments,
    )
    return SimState(cfg, rus, new_queues, cum, t + 1), outcome

