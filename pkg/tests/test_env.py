from __future__ import annotations

import numpy as np
import pytest

from rmsleep.core import ScenarioConfig, ScenarioRanges
from rmsleep.env import SleepControlEnv, build_observation
from rmsleep.sim import init_sim


class TestReset:
    def test_deterministic(self):
        a, b = SleepControlEnv(), SleepControlEnv()
        assert np.array_equal(a.reset(11), b.reset(11))
        assert a.describe() == b.describe()

    def test_initial_state(self):
        env = SleepControlEnv("rm10")
        obs = env.reset(3)
        assert obs.shape == (12,) and obs[-2:].tolist() == [0, 0]
        assert obs[6:10].tolist() == [0, 0, 0, 0]
        assert obs[4] == 0 and obs[5] == 0

    @pytest.mark.parametrize("regime, dim", [("markov", 10), ("lagrangian", 10), ("rm10", 12), ("rm100", 12)])
    def test_obs_dim(self, regime, dim):
        env = SleepControlEnv(regime)
        assert env.obs_dim == dim and env.reset(0).shape == (dim,)

    def test_load_normalisation_at_maximum(self, rng):
        ranges = ScenarioRanges()
        cfg = ScenarioConfig(n_deadline=5, n_constant=60, per_user_load_mbps=0.2).validate()
        obs = build_observation(init_sim(cfg, rng), None, ranges)
        assert obs[0] == pytest.approx(1.0) and obs[1] == pytest.approx(1.0)

    def test_zero_load_range(self, rng):
        ranges = ScenarioRanges(load_mbps=(0.0, 0.0))
        cfg = ScenarioConfig(per_user_load_mbps=0.0).validate()
        obs = build_observation(init_sim(cfg, rng), None, ranges)
        assert obs[0] == 0 and obs[1] == 0


class TestStep:
    def test_truncates_after_thirty(self):
        env = SleepControlEnv("markov")
        env.reset(0)
        dones = [env.step(np.zeros(4))[2] for _ in range(30)]
        assert dones == [False] * 29 + [True]
        with pytest.raises(RuntimeError):
            env.step(np.zeros(4))

    def test_step_before_reset(self):
        with pytest.raises(RuntimeError):
            SleepControlEnv().step(np.zeros(4))

    def test_action_validation(self):
        env = SleepControlEnv()
        env.reset(0)
        with pytest.raises(ValueError):
            env.step(np.zeros(3))
        with pytest.raises(ValueError):
            env.step(np.full(4, 1.5))

    def test_markov_reward_is_ee_without_violation(self):
        base = ScenarioConfig(drop_limit=0.99, min_throughput_mbps=0.0)
        env = SleepControlEnv("markov", base=base)
        env.reset(0)
        for _ in range(10):
            _, r, _, info = env.step(np.zeros(4))
            assert info.rho_d <= 0 and info.rho_m < 0
            assert r == pytest.approx(info.ee - info.rho_d - info.rho_m)
        # all RUs active: no savings, only negative violations remain
        assert info.ee == 0

    def test_rm_reward_uses_machine_states(self):
        env = SleepControlEnv("rm10")
        env.reset(1)
        for _ in range(30):
            obs, r, _, info = env.step(np.ones(4))
            assert r == pytest.approx(info.ee - info.rm_d / 10 - info.rm_m / 10)
            assert obs[-2:].tolist() == [info.rm_d / 10, info.rm_m / 10]

    def test_lagrangian_uses_multipliers(self):
        from rmsleep.rewards import LagrangeState

        env = SleepControlEnv("lagrangian", lagrange=LagrangeState(2.0, 3.0))
        env.reset(2)
        _, r, _, info = env.step(np.full(4, 0.5))
        assert r == pytest.approx(info.ee - 2 * info.rho_d - 3 * info.rho_m)

    def test_observation_bounds(self):
        rng = np.random.default_rng(0)
        for regime in ("rm10", "markov"):
            env = SleepControlEnv(regime)
            for seed in range(20):
                obs = env.reset(seed)
                done = False
                while not done:
                    assert np.all((obs >= 0) & (obs <= 1))
                    obs, _, done, _ = env.step(rng.uniform(size=4))

    def test_replay_reproduces_rewards(self):
        rng = np.random.default_rng(4)
        env = SleepControlEnv("rm100")
        obs = env.reset(77)
        log = []
        for _ in range(30):
            a = rng.uniform(size=4)
            nobs, r, _, _ = env.step(a)
            log.append((obs, a, r))
            obs = nobs
        replay = SleepControlEnv("rm100")
        obs = replay.reset(77)
        for o, a, r in log:
            assert np.array_equal(obs, o)
            obs, r2, _, _ = replay.step(a)
            assert r2 == r
