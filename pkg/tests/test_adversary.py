import math

import numpy as np
import pytest

from advmm.adversary import (
    FixedRegime,
    RandomRegime,
    RegimeSource,
    StrategicRegime,
    on_episode_start,
    on_step,
)
from advmm.market import MarketParams, MarketState, Quote, SimConfig, run_episode
from advmm.policy import BetaPolicy
from advmm.stage import ParamBounds


def state(t=0.0, h=0):
    return MarketState(t, int(round(t / 0.005)), 100.0, h, 0.0)


def test_fixed_regime_defaults():
    rng = np.random.default_rng(0)
    p = on_episode_start(FixedRegime(), rng)
    assert (p.b, p.a_bid, p.a_ask, p.k_bid, p.k_ask, p.sigma) == (0.0, 140.0, 140.0, 1.5, 1.5, 2.0)


def test_fixed_regime_ignores_state_and_rng():
    reg = FixedRegime()
    rng = np.random.default_rng(0)
    before = rng.bit_generator.state
    p0 = on_episode_start(reg, rng)
    outs = {on_step(reg, state(t, h), rng, p0) for t in (0.0, 0.5) for h in (-30, 0, 30)}
    assert outs == {p0}
    assert rng.bit_generator.state == before


def test_random_regime_moments():
    rng = np.random.default_rng(1)
    reg = RandomRegime()
    n = 100_000
    draws = np.array([[p.b, p.a_bid, p.k_bid] for p in (on_episode_start(reg, rng) for _ in range(n))])
    for col, (lo, hi) in enumerate(((-5, 5), (105, 175), (1.125, 1.875))):
        sd = (hi - lo) / math.sqrt(12)
        assert abs(draws[:, col].mean() - (lo + hi) / 2) < 3 * sd / math.sqrt(n)
        assert draws[:, col].min() >= lo and draws[:, col].max() <= hi


def test_random_regime_shares_one_draw_across_sides():
    p = on_episode_start(RandomRegime(), np.random.default_rng(2))
    assert p.a_bid == p.a_ask and p.k_bid == p.k_ask


def test_random_regime_constant_within_episode():
    src = RegimeSource(RandomRegime())

    def pol(state, rng):
        return Quote(0.6, 0.6)

    ep = run_episode(pol, src, SimConfig(), np.random.default_rng(3))
    first, last = ep.steps[0], ep.steps[-1]
    assert (first.b, first.A_bid, first.k_ask) == (last.b, last.A_bid, last.k_ask)
    assert len({r.b for r in ep.steps}) == 1


def test_random_regime_reproducible():
    a = [on_episode_start(RandomRegime(), np.random.default_rng(4)) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def test_untrained_strategic_drift_within_bounds():
    reg = StrategicRegime.untrained(("b",))
    rng = np.random.default_rng(5)
    for _ in range(2000):
        p = on_step(reg, state(rng.uniform(0, 1), int(rng.integers(-50, 51))), rng)
        assert -5.0 <= p.b <= 5.0
        assert (p.a_bid, p.k_ask) == (140.0, 1.5)


@pytest.mark.parametrize("controlled", [("b",), ("A",), ("k",), ("b", "A", "k")])
def test_random_strategic_policies_stay_in_bounds(controlled):
    rng = np.random.default_rng(6)
    bounds = ParamBounds()
    base = StrategicRegime.untrained(controlled, bounds)
    for _ in range(50):
        pol = BetaPolicy(rng.normal(0, 5, base.policy.weights.shape), base.policy.names, base.policy.bounds)
        reg = StrategicRegime(pol, bounds)
        for _ in range(20):
            p = on_step(reg, state(rng.uniform(0, 1), int(rng.integers(-50, 51))), rng)
            assert bounds.b_lo <= p.b <= bounds.b_hi
            assert bounds.a_lo <= p.a_bid == p.a_ask <= bounds.a_hi or "A" not in controlled
            assert bounds.k_lo <= p.k_bid == p.k_ask <= bounds.k_hi or "k" not in controlled


def test_controlled_order_is_canonical():
    assert StrategicRegime.untrained(("k", "b")).controlled == ("b", "k")


def test_strategic_rejects_unknown_parameter():
    with pytest.raises(ValueError):
        StrategicRegime.untrained(("sigma",))
    with pytest.raises(ValueError):
        StrategicRegime.untrained(())


def test_strategic_is_pure_function_of_state_and_draw():
    reg = StrategicRegime.untrained(("b", "k"))
    s = state(0.4, 12)
    a = on_step(reg, s, np.random.default_rng(7))
    b = on_step(reg, s, np.random.default_rng(7))
    assert a == b


def test_out_of_bounds_emission_is_an_invariant_error():
    class Broken(BetaPolicy):
        def sample(self, phi, rng):
            return np.array([7.0])

    pol = Broken(np.zeros((1, 2, 10)), ("b",), ((-5.0, 5.0),))
    with pytest.raises(AssertionError):
        on_step(StrategicRegime(pol), state(), np.random.default_rng(0))


def test_non_strategic_on_step_needs_episode_params():
    with pytest.raises(ValueError):
        on_step(FixedRegime(), state(), np.random.default_rng(0))


def test_params_from_fills_uncontrolled_with_fixed():
    reg = StrategicRegime.untrained(("A",), fixed=MarketParams(b=0.3))
    p = reg.params_from([120.0])
    assert (p.b, p.a_bid, p.a_ask, p.k_bid) == (0.3, 120.0, 120.0, 1.5)
