"""Adversary regimes that supply market parameters to the simulator.

``FixedRegime`` always plays the same parameters, ``RandomRegime`` draws
drift, intensity and decay uniformly once per episode (one value shared by
both sides), and ``StrategicRegime`` samples the parameters it controls from
a Beta policy at every step, seeing the same ``(t, h)`` state as the market
maker. Parameters a strategic adversary does not control stay at the Fixed
defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .market import MarketParams, MarketState
from .policy import BetaPolicy, FeatureBasis
from .stage import ParamBounds

PARAM_ORDER = ("b", "A", "k")
DEFAULT_FIXED = MarketParams()


def _canonical(controlled) -> tuple[str, ...]:
    controlled = set(controlled)
    unknown = controlled - set(PARAM_ORDER)
    if unknown:
        raise ValueError(f"unknown adversary parameters {sorted(unknown)}; choose from {PARAM_ORDER}")
    if not controlled:
        raise ValueError("a strategic adversary must control at least one parameter")
    return tuple(p for p in PARAM_ORDER if p in controlled)


@dataclass(frozen=True)
class FixedRegime:
    params: MarketParams = DEFAULT_FIXED
    kind: str = field(default="fixed", init=False)


@dataclass(frozen=True)
class RandomRegime:
    bounds: ParamBounds = field(default_factory=ParamBounds)
    sigma: float = 2.0
    kind: str = field(default="random", init=False)


@dataclass(frozen=True)
class StrategicRegime:
    policy: BetaPolicy
    bounds: ParamBounds = field(default_factory=ParamBounds)
    fixed: MarketParams = DEFAULT_FIXED
    kind: str = field(default="strategic", init=False)

    @property
    def controlled(self) -> tuple[str, ...]:
        return self.policy.names

    @classmethod
    def untrained(cls, controlled=("b",), bounds: ParamBounds | None = None,
                  basis: FeatureBasis | None = None, fixed: MarketParams = DEFAULT_FIXED) -> StrategicRegime:
        bounds = bounds or ParamBounds()
        names = _canonical(controlled)
        policy = BetaPolicy.zeros(names, tuple(bounds.interval(n) for n in names), basis)
        return cls(policy, bounds, fixed)

    def params_from(self, values) -> MarketParams:
        chosen = dict(zip(self.controlled, (float(v) for v in values)))
        f = self.fixed
        a = chosen.get("A")
        k = chosen.get("k")
        return MarketParams(
            b=chosen.get("b", f.b),
            sigma=f.sigma,
            a_bid=f.a_bid if a is None else a,
            a_ask=f.a_ask if a is None else a,
            k_bid=f.k_bid if k is None else k,
            k_ask=f.k_ask if k is None else k,
        )


Regime = FixedRegime | RandomRegime | StrategicRegime


def on_episode_start(regime: Regime, rng: np.random.Generator) -> MarketParams:
    """Episode-level parameters.

    Random draws ``b``, ``A``, ``k`` in that order. Strategic returns its
    fixed defaults without drawing; its choices come from :func:`on_step`.
    """
    if isinstance(regime, FixedRegime):
        return regime.params
    if isinstance(regime, RandomRegime):
        bd = regime.bounds
        b = rng.uniform(bd.b_lo, bd.b_hi)
        a = rng.uniform(bd.a_lo, bd.a_hi)
        k = rng.uniform(bd.k_lo, bd.k_hi)
        return MarketParams(b=b, sigma=regime.sigma, a_bid=a, a_ask=a, k_bid=k, k_ask=k)
    if isinstance(regime, StrategicRegime):
        return regime.fixed
    raise TypeError(f"unknown regime {regime!r}")


def on_step(regime: Regime, state: MarketState, rng: np.random.Generator,
            episode_params: MarketParams | None = None) -> MarketParams:
    if isinstance(regime, StrategicRegime):
        phi = regime.policy.basis(state.t, state.h)
        values = regime.policy.sample(phi, rng)
        for name, v in zip(regime.controlled, values):
            lo, hi = regime.bounds.interval(name)
            if not lo <= v <= hi:
                raise AssertionError(f"adversary emitted {name}={v} outside [{lo}, {hi}]")
        return regime.params_from(values)
    if episode_params is None:
        raise ValueError("non-strategic regimes need the episode's parameters")
    return episode_params


class RegimeSource:
    """Stateful per-episode adapter for :func:`advmm.market.run_episode`."""

    def __init__(self, regime: Regime):
        self.regime = regime
        self.episode_params: MarketParams | None = None

    def on_episode_start(self, rng: np.random.Generator) -> MarketParams:
        self.episode_params = on_episode_start(self.regime, rng)
        return self.episode_params

    def on_step(self, state: MarketState, rng: np.random.Generator) -> MarketParams:
        return on_step(self.regime, state, rng, self.episode_params)
