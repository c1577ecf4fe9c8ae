from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rmsleep.rewards import (
    LagrangeState,
    reward_lagrangian,
    reward_markov,
    reward_rm,
    rm_granularity,
    update_multipliers,
)

unit_open = st.floats(-0.999, 0.999)


class TestMarkov:
    @pytest.mark.parametrize(
        "args, expected", [((0.5, 0, 0), 0.5), ((0.5, 0.2, -0.1), 0.4), ((0, 0.9, 0.9), -1.8)]
    )
    def test_examples(self, args, expected):
        assert reward_markov(*args) == pytest.approx(expected)


class TestRm:
    def test_examples(self):
        assert reward_rm(0.8, 0, 0) == 0.8
        assert reward_rm(0.8, -0.7, -0.1) == pytest.approx(0.0)

    @given(ee=st.floats(0, 0.999), r_d=st.floats(-1, 0), r_m=st.floats(-1, 0))
    def test_range(self, ee, r_d, r_m):
        assert -2 <= reward_rm(ee, r_d, r_m) < 1


class TestLagrangian:
    def test_unconstrained_limit(self):
        assert reward_lagrangian(0.6, 0.3, 0.2, LagrangeState(0, 0)) == 0.6

    def test_arithmetic(self):
        assert reward_lagrangian(0.5, 0.2, 0, LagrangeState(2, 5)) == pytest.approx(0.1)

    @given(ee=st.floats(0, 0.999), rd=unit_open, rm=unit_open)
    def test_reduces_to_markov(self, ee, rd, rm):
        assert reward_lagrangian(ee, rd, rm, LagrangeState(1, 1)) == pytest.approx(reward_markov(ee, rd, rm))

    def test_negative_multiplier_rejected(self):
        with pytest.raises(ValueError):
            LagrangeState(-0.1, 0)


class TestMultipliers:
    def test_projection(self):
        assert update_multipliers(LagrangeState(0, 0), -0.5, -0.5).lambda_d == 0

    def test_one_step(self):
        assert update_multipliers(LagrangeState(1, 1), 0.2, 0).lambda_d == pytest.approx(1.002)

    def test_satisfied_constraints_decay_to_zero(self):
        lag = LagrangeState(0.05, 0.05)
        seen = []
        for _ in range(100):
            lag = update_multipliers(lag, -0.1, -0.3)
            seen.append(lag.lambda_d)
        assert all(b <= a for a, b in zip(seen, seen[1:]))
        assert seen[-1] == 0 and lag.lambda_m == 0

    @given(l1=st.floats(0, 10), l2=st.floats(0, 10), rho=unit_open)
    def test_nonnegative_and_lipschitz(self, l1, l2, rho):
        a = update_multipliers(LagrangeState(l1, l1), rho, rho).lambda_d
        b = update_multipliers(LagrangeState(l2, l2), rho, rho).lambda_d
        assert a >= 0 and b >= 0
        assert abs(a - b) <= abs(l1 - l2) + 1e-12


class TestRegimes:
    @pytest.mark.parametrize("regime, L", [("rm100", 100), ("rm10", 10), ("rm3", 3), ("markov", None), ("lagrangian", None)])
    def test_known(self, regime, L):
        assert rm_granularity(regime) == L

    @pytest.mark.parametrize("regime", ["rm0", "rm", "deep", "rmx"])
    def test_unknown(self, regime):
        with pytest.raises(ValueError):
            rm_granularity(regime)
