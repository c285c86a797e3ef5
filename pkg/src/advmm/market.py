"""Discrete-time dealer market: midprice, fills, inventory and cash.

Conventions used throughout the package:

* ``delta_bid`` (bid offset) and ``delta_ask`` (ask offset) are distances
  below/above the midprice, both non-negative.
* A bid fill buys one unit (inventory +1), an ask fill sells one unit.
* Each side fills at most once per step, with probability
  ``1 - exp(-A exp(-k delta) dt)``.
* Cash starts at ``-h0 * z0`` so that the opening mark-to-market value is
  zero and the closing value is the episode's wealth gain.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Protocol

import numpy as np


class InvalidAction(ValueError):
    pass


class InventoryBoundError(RuntimeError):
    pass


class EpisodeAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class MarketParams:
    b: float = 0.0
    sigma: float = 2.0
    a_bid: float = 140.0
    a_ask: float = 140.0
    k_bid: float = 1.5
    k_ask: float = 1.5

    def __post_init__(self):
        if not (self.a_bid > 0 and self.a_ask > 0):
            raise ValueError(f"base intensities must be positive, got {self.a_bid}, {self.a_ask}")
        if not (self.k_bid > 0 and self.k_ask > 0):
            raise ValueError(f"decay rates must be positive, got {self.k_bid}, {self.k_ask}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")


@dataclass(frozen=True)
class SimConfig:
    n_steps: int = 200
    dt: float = 0.005
    z0: float = 100.0
    sigma: float = 2.0
    h_min: int = -50
    h_max: int = 50
    h0_range: tuple[int, int] = (-10, 10)
    t0_range: tuple[float, float] = (0.0, 0.95)

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.h_min < self.h_max:
            raise ValueError("h_min must be below h_max")
        lo, hi = self.h0_range
        if not self.h_min <= lo <= hi <= self.h_max:
            raise ValueError(f"h0_range {self.h0_range} must lie within [{self.h_min}, {self.h_max}]")
        t_lo, t_hi = self.t0_range
        if not 0.0 <= t_lo <= t_hi < self.terminal_time:
            raise ValueError(f"t0_range {self.t0_range} must lie within [0, {self.terminal_time})")
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")

    @property
    def terminal_time(self) -> float:
        return self.n_steps * self.dt

    def start_steps(self) -> tuple[int, int]:
        """Inclusive range of start step indices covering ``t0_range``."""
        lo = math.ceil(self.t0_range[0] / self.dt - 1e-9)
        hi = math.floor(self.t0_range[1] / self.dt + 1e-9)
        return lo, min(hi, self.n_steps - 1)


@dataclass(frozen=True)
class MarketState:
    t: float
    n: int
    z: float
    h: int
    x: float

    @property
    def wealth(self) -> float:
        return mark_to_market(self.x, self.h, self.z)


@dataclass(frozen=True)
class Quote:
    delta_bid: float
    delta_ask: float

    def __post_init__(self):
        if not (self.delta_bid >= 0 and self.delta_ask >= 0):
            raise InvalidAction(f"quote offsets must be non-negative, got {self.delta_bid}, {self.delta_ask}")

    @property
    def spread(self) -> float:
        return self.delta_bid + self.delta_ask

    @property
    def reservation_offset(self) -> float:
        return 0.5 * (self.delta_ask - self.delta_bid)


@dataclass(frozen=True)
class FillResult:
    bid_filled: bool
    ask_filled: bool


def quote_from_action(p_tilde: float, psi: float) -> Quote:
    """Bid/ask offsets from a reservation-price offset and a spread.

    Each side is clamped at zero independently, so a heavily skewed action
    quotes one side at the midprice without moving the other.
    """
    if not psi > 0:
        raise InvalidAction(f"spread must be positive, got {psi}")
    return Quote(max(0.5 * psi - p_tilde, 0.0), max(0.5 * psi + p_tilde, 0.0))


def step_price(z: float, params: MarketParams, dt: float, noise: float) -> float:
    return z + params.b * dt + params.sigma * math.sqrt(dt) * noise


def fill_probability(delta: float, a: float, k: float, dt: float) -> float:
    if delta < 0:
        raise InvalidAction(f"offset must be non-negative, got {delta}")
    if math.isinf(delta):
        return 0.0
    return -math.expm1(-a * math.exp(-k * delta) * dt)


def sample_fills(
    quote: Quote, params: MarketParams, state: MarketState, rng: np.random.Generator, config: SimConfig
) -> FillResult:
    # both uniforms are always drawn so the stream does not depend on inventory
    u_bid = rng.random()
    u_ask = rng.random()
    p_bid = fill_probability(quote.delta_bid, params.a_bid, params.k_bid, config.dt)
    p_ask = fill_probability(quote.delta_ask, params.a_ask, params.k_ask, config.dt)
    return FillResult(
        bid_filled=state.h < config.h_max and u_bid < p_bid,
        ask_filled=state.h > config.h_min and u_ask < p_ask,
    )


def apply_step(
    state: MarketState, quote: Quote, fills: FillResult, new_z: float, config: SimConfig
) -> MarketState:
    dh = int(fills.bid_filled) - int(fills.ask_filled)
    h = state.h + dh
    if not config.h_min <= h <= config.h_max:
        raise InventoryBoundError(f"inventory {h} left [{config.h_min}, {config.h_max}] at step {state.n}")
    x = state.x
    if fills.ask_filled:
        x += quote.delta_ask
    if fills.bid_filled:
        x += quote.delta_bid
    x -= state.z * dh
    return MarketState(t=(state.n + 1) * config.dt, n=state.n + 1, z=new_z, h=h, x=x)


def mark_to_market(x: float, h: float, z: float) -> float:
    return x + h * z


def reward(delta_pi: float, h: int, is_terminal: bool, eta: float = 0.0, zeta: float = 0.0) -> float:
    """Per-step reward: MtM change less running and terminal inventory penalties.

    ``h`` is the inventory after the step's fills.
    """
    r = delta_pi - zeta * h * h
    if is_terminal:
        r -= eta * h * h
    return r


def initial_state(config: SimConfig, n0: int = 0, h0: int = 0) -> MarketState:
    return MarketState(t=n0 * config.dt, n=n0, z=config.z0, h=h0, x=-h0 * config.z0)


class QuoteSource(Protocol):
    def __call__(self, state: MarketState, rng: np.random.Generator) -> Quote: ...


class ParamSource(Protocol):
    def on_episode_start(self, rng: np.random.Generator) -> MarketParams: ...

    def on_step(self, state: MarketState, rng: np.random.Generator) -> MarketParams: ...


@dataclass(frozen=True)
class StepRecord:
    n: int
    t: float
    z: float
    h: int
    x: float
    delta_bid: float
    delta_ask: float
    b: float
    A_bid: float
    A_ask: float
    k_bid: float
    k_ask: float
    bid_filled: bool
    ask_filled: bool
    reward: float


TRAJECTORY_COLUMNS = tuple(f.name for f in fields(StepRecord))


@dataclass(frozen=True)
class EpisodeStats:
    terminal_wealth: float
    terminal_inventory: int
    mean_spread: float
    total_reward: float
    n_steps: int


@dataclass
class Episode:
    steps: list[StepRecord] = field(default_factory=list)
    states: list[MarketState] = field(default_factory=list)
    stats: EpisodeStats | None = None


def run_episode(
    mm_policy: QuoteSource | Callable[[MarketState, np.random.Generator], Quote],
    adversary: ParamSource,
    config: SimConfig,
    rng: np.random.Generator,
    *,
    n0: int = 0,
    h0: int = 0,
    eta: float = 0.0,
    zeta: float = 0.0,
) -> Episode:
    """Roll one episode from step ``n0`` with inventory ``h0`` to the horizon.

    Per step the adversary supplies parameters, then the market maker quotes,
    then fills and the price innovation are drawn (bid uniform, ask uniform,
    normal).
    """
    state = initial_state(config, n0, h0)
    ep = Episode(states=[state])
    adversary.on_episode_start(rng)
    spread_sum = 0.0
    total = 0.0
    while state.n < config.n_steps:
        params = adversary.on_step(state, rng)
        quote = mm_policy(state, rng)
        if not (math.isfinite(quote.delta_bid) and math.isfinite(quote.delta_ask)):
            raise EpisodeAborted(f"non-finite quote {quote} at step {state.n}, state {state}")
        fills = sample_fills(quote, params, state, rng, config)
        new_z = step_price(state.z, params, config.dt, rng.standard_normal())
        nxt = apply_step(state, quote, fills, new_z, config)
        terminal = nxt.n >= config.n_steps
        r = reward(nxt.wealth - state.wealth, nxt.h, terminal, eta, zeta)
        ep.steps.append(StepRecord(
            state.n, state.t, state.z, state.h, state.x, quote.delta_bid, quote.delta_ask,
            params.b, params.a_bid, params.a_ask, params.k_bid, params.k_ask,
            fills.bid_filled, fills.ask_filled, r,
        ))
        spread_sum += quote.spread
        total += r
        state = nxt
        ep.states.append(state)
    n = len(ep.steps)
    ep.stats = EpisodeStats(state.wealth, state.h, spread_sum / n if n else 0.0, total, n)
    return ep


def write_trajectory_csv(path, steps: Iterable[StepRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        w.writeheader()
        for s in steps:
            row = asdict(s)
            row["bid_filled"] = int(s.bid_filled)
            row["ask_filled"] = int(s.ask_filled)
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
