"""Single-stage market making game.

The stage payoff is the expected mark-to-market change over one unit of time
when the market maker quotes at offsets ``delta_bid``/``delta_ask`` and the
adversary picks the drift ``b`` and the fill-intensity parameters ``A``/``k``
on each side::

    f = A_bid exp(-k_bid d_bid) (d_bid + b) + A_ask exp(-k_ask d_ask) (d_ask - b) + b h

The market maker maximises ``f``; the adversary minimises it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq


class InfeasibleEquilibrium(ValueError):
    """Raised when the concave strategy box is empty at the requested bounds."""


@dataclass(frozen=True)
class ParamBounds:
    b_lo: float = -5.0
    b_hi: float = 5.0
    a_lo: float = 105.0
    a_hi: float = 175.0
    k_lo: float = 1.125
    k_hi: float = 1.875

    def __post_init__(self):
        vals = (self.b_lo, self.b_hi, self.a_lo, self.a_hi, self.k_lo, self.k_hi)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("parameter bounds must be finite")
        if self.b_lo > self.b_hi:
            raise ValueError(f"b_lo={self.b_lo} exceeds b_hi={self.b_hi}")
        if not 0 < self.a_lo <= self.a_hi:
            raise ValueError(f"need 0 < a_lo <= a_hi, got [{self.a_lo}, {self.a_hi}]")
        if not 0 < self.k_lo <= self.k_hi:
            raise ValueError(f"need 0 < k_lo <= k_hi, got [{self.k_lo}, {self.k_hi}]")

    def interval(self, name: str) -> tuple[float, float]:
        key = {"b": "b", "A": "a", "a": "a", "k": "k"}[name]
        return getattr(self, f"{key}_lo"), getattr(self, f"{key}_hi")


@dataclass(frozen=True)
class StageProfile:
    delta_bid: float
    delta_ask: float
    b: float = 0.0
    a_bid: float = 140.0
    a_ask: float = 140.0
    k_bid: float = 1.5
    k_ask: float = 1.5
    h: float = 0.0

    def intensities(self) -> tuple[float, float]:
        return (
            self.a_bid * math.exp(-self.k_bid * self.delta_bid),
            self.a_ask * math.exp(-self.k_ask * self.delta_ask),
        )


@dataclass(frozen=True)
class BestQuote:
    delta_bid: float
    delta_ask: float
    clamped: bool


@dataclass(frozen=True)
class Equilibrium:
    profile: StageProfile
    payoff: float
    # True when every b in [b_lo, b_hi] is an equilibrium drift (h == 0)
    continuum: bool = False


def stage_payoff(p: StageProfile) -> float:
    lam_bid, lam_ask = p.intensities()
    return lam_bid * (p.delta_bid + p.b) + lam_ask * (p.delta_ask - p.b) + p.b * p.h


def payoff_gradient_delta(p: StageProfile) -> tuple[float, float]:
    """Partial derivatives of the stage payoff in the two quote offsets."""
    lam_bid, lam_ask = p.intensities()
    return (
        lam_bid * (1.0 - p.k_bid * (p.delta_bid + p.b)),
        lam_ask * (1.0 - p.k_ask * (p.delta_ask - p.b)),
    )


def payoff_hessian_delta(p: StageProfile) -> np.ndarray:
    lam_bid, lam_ask = p.intensities()
    return np.array([
        [p.k_bid * lam_bid * (p.k_bid * (p.delta_bid + p.b) - 2.0), 0.0],
        [0.0, p.k_ask * lam_ask * (p.k_ask * (p.delta_ask - p.b) - 2.0)],
    ])


def is_concave_region(p: StageProfile) -> bool:
    return (p.delta_bid <= 2.0 / p.k_bid - p.b) and (p.delta_ask <= 2.0 / p.k_ask + p.b)


def mm_best_response(b: float, k_bid: float, k_ask: float | None = None) -> BestQuote:
    """Offsets zeroing the payoff gradient, clamped below at zero."""
    if k_ask is None:
        k_ask = k_bid
    d_bid = 1.0 / k_bid - b
    d_ask = 1.0 / k_ask + b
    clamped = d_bid < 0.0 or d_ask < 0.0
    return BestQuote(max(d_bid, 0.0), max(d_ask, 0.0), clamped)


def adversary_best_response(
    delta_bid: float,
    delta_ask: float,
    h: float,
    bounds: ParamBounds,
    controlled: frozenset[str] | set[str] = frozenset({"b", "A", "k"}),
    fixed: StageProfile | None = None,
) -> tuple[float, float, float, float, float]:
    """Payoff-minimising ``(b, a_bid, a_ask, k_bid, k_ask)`` against fixed quotes.

    The payoff is linear in ``b`` and in each ``A``, and monotone in each
    ``k``, so the minimum sits on a corner of the box. Every corner is
    evaluated; ties resolve to the lower drift. Parameters outside
    ``controlled`` keep the values from ``fixed`` (Fixed-regime defaults
    when omitted).
    """
    fixed = fixed or StageProfile(delta_bid, delta_ask, h=h)
    b_cands = (bounds.b_lo, bounds.b_hi) if "b" in controlled else (fixed.b,)
    ab = {"bid": (fixed.a_bid,), "ask": (fixed.a_ask,)}
    kb = {"bid": (fixed.k_bid,), "ask": (fixed.k_ask,)}
    if "A" in controlled:
        ab = {s: (bounds.a_lo, bounds.a_hi) for s in ab}
    if "k" in controlled:
        kb = {s: (bounds.k_hi, bounds.k_lo) for s in kb}

    best = None
    for b in b_cands:
        val = b * h
        choice = [b]
        for side, delta, carry in (("bid", delta_bid, delta_bid + b), ("ask", delta_ask, delta_ask - b)):
            side_best = None
            for a in ab[side]:
                for k in kb[side]:
                    v = a * math.exp(-k * delta) * carry
                    if side_best is None or v < side_best[0]:
                        side_best = (v, a, k)
            val += side_best[0]
            choice.extend(side_best[1:])
        if best is None or val < best[0]:
            best = (val, choice)
    b, a_bid, k_bid, a_ask, k_ask = best[1]
    return b, a_bid, a_ask, k_bid, k_ask


def _check_feasible(b: float, k_bid: float, k_ask: float) -> None:
    # the concave box is [0, 2/k - b] x [0, 2/k + b]; both must be non-empty
    if 2.0 / k_bid - b < 0.0 or 2.0 / k_ask + b < 0.0:
        raise InfeasibleEquilibrium(
            f"concave strategy box is empty at b={b}: "
            f"2/k_bid - b = {2.0 / k_bid - b:.4g}, 2/k_ask + b = {2.0 / k_ask + b:.4g}"
        )
    d_bid, d_ask = 1.0 / k_bid - b, 1.0 / k_ask + b
    if d_bid < 0.0 or d_ask < 0.0:
        raise InfeasibleEquilibrium(
            f"stationary offsets leave the concave box at b={b}: "
            f"delta_bid={d_bid:.4g}, delta_ask={d_ask:.4g} (need both >= 0)"
        )


def nash_equilibrium(bounds: ParamBounds, h: float, k: float | None = None, a: float = 140.0) -> Equilibrium:
    """Corner equilibrium: drift at the bound opposing the inventory.

    ``k`` given: the adversary controls the drift only and ``A``/``k`` stay at
    ``a``/``k``. ``k=None``: full control, with ``A = a_lo`` and ``k = k_hi``.
    At ``h == 0`` the lower drift is returned and ``continuum`` is set.

    This is the closed-form corner candidate. It is an equilibrium only when
    the inventory term dominates the fill-rate asymmetry the drift induces;
    :func:`saddle_point` solves the game exactly and
    :func:`verify_equilibrium_grid` measures how exploitable a profile is.
    """
    if k is None:
        a_eq, k_eq = bounds.a_lo, bounds.k_hi
    else:
        a_eq, k_eq = a, k
    b_star = bounds.b_lo if h >= 0 else bounds.b_hi
    _check_feasible(b_star, k_eq, k_eq)
    br = mm_best_response(b_star, k_eq, k_eq)
    prof = StageProfile(br.delta_bid, br.delta_ask, b_star, a_eq, a_eq, k_eq, k_eq, h)
    return Equilibrium(prof, stage_payoff(prof), continuum=(h == 0))


def saddle_point(bounds: ParamBounds, h: float, k: float = 1.5, a: float = 140.0) -> Equilibrium:
    """Exact pure equilibrium of the drift-only game by minimising the MM's value.

    The MM's best-response value ``v(b) = max_delta f`` is convex in ``b``;
    by the envelope theorem its slope is ``lam_bid - lam_ask + h`` at the
    best response. The minimiser is a corner or the slope's root.
    """

    def slope(b):
        br = mm_best_response(b, k, k)
        p = StageProfile(br.delta_bid, br.delta_ask, b, a, a, k, k, h)
        lam_bid, lam_ask = p.intensities()
        return lam_bid - lam_ask + h

    lo, hi = slope(bounds.b_lo), slope(bounds.b_hi)
    if lo >= 0.0:
        b_star = bounds.b_lo
    elif hi <= 0.0:
        b_star = bounds.b_hi
    else:
        b_star = brentq(slope, bounds.b_lo, bounds.b_hi, xtol=1e-14, rtol=1e-15)
    _check_feasible(b_star, k, k)
    br = mm_best_response(b_star, k, k)
    prof = StageProfile(br.delta_bid, br.delta_ask, b_star, a, a, k, k, h)
    return Equilibrium(prof, stage_payoff(prof), continuum=False)


def _payoff_grid(d_bid, d_ask, b, a_bid, a_ask, k_bid, k_ask, h):
    return a_bid * np.exp(-k_bid * d_bid) * (d_bid + b) + a_ask * np.exp(-k_ask * d_ask) * (d_ask - b) + b * h


def verify_equilibrium_grid(
    profile: StageProfile,
    bounds: ParamBounds,
    grid_resolution: int = 401,
    controlled: frozenset[str] | set[str] = frozenset({"b"}),
) -> float:
    """Largest unilateral gain available to either player on a uniform grid.

    The MM deviates over ``[0, 2/k_bid - b] x [0, 2/k_ask + b]`` at the
    profile's drift. The adversary deviates over the grid of each
    ``controlled`` parameter with the MM's quotes held fixed. Returns the
    larger of the two gains, floored at zero.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    p = profile
    base = stage_payoff(p)

    hi_bid = max(2.0 / p.k_bid - p.b, 0.0)
    hi_ask = max(2.0 / p.k_ask + p.b, 0.0)
    db = np.linspace(0.0, hi_bid, grid_resolution)[:, None]
    da = np.linspace(0.0, hi_ask, grid_resolution)[None, :]
    mm_best = float(np.max(_payoff_grid(db, da, p.b, p.a_bid, p.a_ask, p.k_bid, p.k_ask, p.h)))

    def axis(name, current):
        if name in controlled:
            lo, hi = bounds.interval(name)
            return np.linspace(lo, hi, grid_resolution)
        return np.array([current])

    bs = axis("b", p.b)
    # the payoff separates by side once b is fixed
    a_b, k_b = np.meshgrid(axis("A", p.a_bid), axis("k", p.k_bid), indexing="ij")
    a_a, k_a = np.meshgrid(axis("A", p.a_ask), axis("k", p.k_ask), indexing="ij")
    lam_bid = (a_b * np.exp(-k_b * p.delta_bid)).ravel()
    lam_ask = (a_a * np.exp(-k_a * p.delta_ask)).ravel()
    adv_best = math.inf
    for b in bs:
        v = (np.min(lam_bid * (p.delta_bid + b)) + np.min(lam_ask * (p.delta_ask - b)) + b * p.h)
        adv_best = min(adv_best, float(v))

    return max(mm_best - base, base - adv_best, 0.0)


def perturb(profile: StageProfile, d_bid: float = 0.0, d_ask: float = 0.0) -> StageProfile:
    return replace(profile, delta_bid=profile.delta_bid + d_bid, delta_ask=profile.delta_ask + d_ask)
