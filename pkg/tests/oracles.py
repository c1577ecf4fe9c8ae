"""Independent reference implementations used by the tests.

Nothing here imports the simulator's slot logic; state is held in plain
tuples and lists so that disagreements surface as test failures.
"""
from __future__ import annotations

import numpy as np


def oracle_slot(cfg, rus, queues, channels, cum, t, action, rng):
    """One slot by explicit enumeration of the documented sub-step order.

    rus: list of (mode, remaining_sleep_us, remaining_switch_us)
    queues: list (deadline users first) of lists of packet arrival slots
    channels: list of 0/1 per user; cum: cumulative served bits per user
    """
    modes = cfg.sleep_modes
    idle = modes[0].power_w
    slot = cfg.slot_us
    n_d = cfg.n_deadline

    # 1. action: only active RUs obey
    acted = []
    for (m, rs, rw), a in zip(rus, action):
        if m == 0 and a != 0:
            acted.append((a, modes[a].duration_us, modes[a].switch_latency_us))
        else:
            acted.append((m, rs, rw))

    # 2. timeline in closed form
    new_rus, full_active, ru_power, e_sw = [], [], 0.0, 0.0
    for g, (m, rs, rw) in enumerate(acted):
        if m == 0:
            new_rus.append((0, 0.0, 0.0))
            full_active.append(g + 1)
            ru_power += idle
            continue
        wake_at = rs + rw
        if wake_at <= slot:
            sleep_t, switch_t, active_t = rs, rw, slot - wake_at
            new_rus.append((0, 0.0, 0.0))
            e_sw += modes[m].switch_energy_j
            if active_t >= slot:
                full_active.append(g + 1)
        else:
            sleep_t = min(rs, slot)
            switch_t = slot - sleep_t
            active_t = 0.0
            new_rus.append((m, rs - sleep_t, rw - switch_t))
        ru_power += (sleep_t * modes[m].power_w + (switch_t + active_t) * idle) / slot

    # 3. arrivals
    arr = rng.random(n_d) < cfg.arrival_prob

    # 4. drops
    dropped, at_risk, kept = [], [], []
    for i in range(n_d):
        q = sorted(queues[i])
        at_risk.append(len(q) + int(arr[i]))
        alive = [a for a in q if (a + cfg.deadline_slots) - t > 1]
        d = len(q) - len(alive)
        if arr[i] and len(alive) == cfg.buffer_size:
            alive = alive[1:]
            d += 1
        dropped.append(d)
        kept.append(alive)

    # 5. scheduling by enumeration of the priority order
    cands = sorted((min(kept[i]) + cfg.deadline_slots, i + 1) for i in range(n_d) if kept[i])
    order = [uid for _, uid in cands]
    order += [uid for _, uid in sorted((cum[j], j + 1) for j in range(n_d, cfg.n_users))]
    served_users = set(order[: len(full_active)])

    # 6. queue update
    served, tx = [], 0.0
    new_queues = []
    for i in range(cfg.n_users):
        s = int(i + 1 in served_users)
        served.append(s * cfg.packet_bits)
        if s:
            tx += cfg.tx_power_low_w if channels[i] == 1 else cfg.tx_power_high_w
        if i < n_d:
            q = list(kept[i])
            if s:
                q.remove(min(q))
            if arr[i]:
                q.append(t)
            new_queues.append(q)
    new_cum = [c + s for c, s in zip(cum, served)]

    # 7. channels for the next slot
    u = rng.random(cfg.n_users)
    p_gb, p_bg = cfg.channel_params.p_good_to_bad, cfg.channel_params.p_bad_to_good
    new_ch = []
    for y, ui in zip(channels, u):
        if y == 1:
            new_ch.append(0 if ui < p_gb else 1)
        else:
            new_ch.append(1 if ui < p_bg else 0)

    return {
        "rus": new_rus,
        "queues": new_queues,
        "channels": new_ch,
        "cum": new_cum,
        "arrivals": [int(a) for a in arr],
        "dropped": dropped,
        "at_risk": at_risk,
        "served": served,
        "power_actual": ru_power + tx,
        "power_all_active": cfg.g_rus * idle + tx,
        "switch_energy": e_sw,
        "ru_modes": [m for m, _, _ in acted],
    }


def finite_difference_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at flat vector ``x``."""
    g = np.zeros_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2 * h)
    return g


def naive_mlp(params, x, out_act):
    """Row-by-row matrix arithmetic with explicit loops over units."""
    h = [list(row) for row in np.atleast_2d(x)]
    n_layers = len(params) // 2
    for li in range(n_layers):
        w, b = params[2 * li], params[2 * li + 1]
        out = []
        for row in h:
            z = []
            for j in range(w.shape[1]):
                acc = float(b[j])
                for i in range(w.shape[0]):
                    acc += float(row[i]) * float(w[i, j])
                z.append(acc)
            if li < n_layers - 1:
                z = [v if v > 0 else 0.0 for v in z]
            elif out_act == "tanh01":
                z = [(np.tanh(v) + 1) / 2 for v in z]
            out.append(z)
        h = out
    return np.array(h)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def td3_gradient_errors(seed: int, obs_dim: int = 5, act_dim: int = 3, batch: int = 6):
    """Relative error of analytic vs central-difference gradients on 8/8 nets.

    Returns ``(critic_error, actor_error)`` in float64.
    """
    from rmsleep.td3 import LINEAR, TANH01, Mlp, actor_loss, critic_loss

    rng = np.random.default_rng(seed)
    actor = Mlp((obs_dim, 8, 8, act_dim), TANH01, rng)
    critic = Mlp((obs_dim + act_dim, 8, 8, 1), LINEAR, rng)
    obs = rng.normal(size=(batch, obs_dim))
    act = rng.uniform(size=(batch, act_dim))
    target = rng.normal(size=batch)

    _, c_grads = critic_loss(critic, obs, act, target)
    c_probe = critic.copy()

    def fc(flat):
        c_probe.set_flat(flat)
        return critic_loss(c_probe, obs, act, target)[0]

    c_fd = finite_difference_grad(fc, critic.get_flat(), h=1e-6)

    _, a_grads = actor_loss(actor, critic, obs)
    a_probe = actor.copy()

    def fa(flat):
        a_probe.set_flat(flat)
        return actor_loss(a_probe, critic, obs)[0]

    a_fd = finite_difference_grad(fa, actor.get_flat(), h=1e-6)
    return (
        relative_error(np.concatenate([g.ravel() for g in c_grads]), c_fd),
        relative_error(np.concatenate([g.ravel() for g in a_grads]), a_fd),
    )
