"""Checkpoint files: policies, critics and the environment they were trained in.

A checkpoint is a JSON object::

    {
      "format": "advmm.checkpoint", "version": 1,
      "episode": <training episodes completed>,
      "sim": {SimConfig fields},
      "reward": {"eta": .., "zeta": ..},
      "regime": {"kind": "fixed"|"random"|"strategic", "bounds": {..}, "fixed": {..}},
      "mm_policy": <policy snapshot>,
      "adversary_policy": <policy snapshot> | null,
      "mm_critic": {"centers", "widths", "w_v", "w_a"} | null,
      "adversary_critic": {...} | null
    }

Policy snapshots follow ``advmm.policy.GaussianPolicy.to_dict`` and
``BetaPolicy.to_dict``. Keys are sorted and floats are written with
``repr`` so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .adversary import FixedRegime, RandomRegime, Regime, StrategicRegime
from .market import MarketParams, SimConfig
from .policy import BetaPolicy, GaussianPolicy, InvalidPolicy, policy_from_dict
from .stage import ParamBounds

CHECKPOINT_FORMAT = "advmm.checkpoint"
CHECKPOINT_VERSION = 1


class SnapshotError(ValueError):
    pass


def sim_to_dict(sim: SimConfig) -> dict:
    d = asdict(sim)
    d["h0_range"] = list(sim.h0_range)
    d["t0_range"] = list(sim.t0_range)
    return d


def sim_from_dict(d: dict) -> SimConfig:
    known = {f.name for f in fields(SimConfig)}
    unknown = set(d) - known
    if unknown:
        raise SnapshotError(f"unknown sim fields {sorted(unknown)}")
    d = dict(d)
    if "h0_range" in d:
        d["h0_range"] = tuple(int(v) for v in d["h0_range"])
    if "t0_range" in d:
        d["t0_range"] = tuple(float(v) for v in d["t0_range"])
    return SimConfig(**d)


def regime_to_dict(regime: Regime) -> dict:
    out = {"kind": regime.kind}
    if isinstance(regime, FixedRegime):
        out["fixed"] = asdict(regime.params)
    elif isinstance(regime, RandomRegime):
        out["bounds"] = asdict(regime.bounds)
        out["sigma"] = regime.sigma
    else:
        out["bounds"] = asdict(regime.bounds)
        out["fixed"] = asdict(regime.fixed)
        out["controlled"] = list(regime.controlled)
    return out


def regime_from_dict(d: dict, adversary_policy: BetaPolicy | None = None) -> Regime:
    kind = d.get("kind")
    if kind == "fixed":
        return FixedRegime(MarketParams(**d.get("fixed", {})))
    if kind == "random":
        return RandomRegime(ParamBounds(**d.get("bounds", {})), float(d.get("sigma", 2.0)))
    if kind == "strategic":
        bounds = ParamBounds(**d.get("bounds", {}))
        fixed = MarketParams(**d.get("fixed", {}))
        if adversary_policy is None:
            return StrategicRegime.untrained(d.get("controlled", ("b",)), bounds, fixed=fixed)
        return StrategicRegime(adversary_policy, bounds, fixed)
    raise SnapshotError(f"unknown regime kind {kind!r}")


@dataclass
class Checkpoint:
    episode: int
    sim: SimConfig
    eta: float
    zeta: float
    regime: Regime
    mm_policy: GaussianPolicy
    mm_critic: dict | None = None
    adversary_critic: dict | None = None

    @property
    def adversary_policy(self) -> BetaPolicy | None:
        return self.regime.policy if isinstance(self.regime, StrategicRegime) else None

    def to_dict(self) -> dict:
        adv = self.adversary_policy
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "episode": int(self.episode),
            "sim": sim_to_dict(self.sim),
            "reward": {"eta": float(self.eta), "zeta": float(self.zeta)},
            "regime": regime_to_dict(self.regime),
            "mm_policy": self.mm_policy.to_dict(),
            "adversary_policy": adv.to_dict() if adv is not None else None,
            "mm_critic": self.mm_critic,
            "adversary_critic": self.adversary_critic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Checkpoint:
        if d.get("format") != CHECKPOINT_FORMAT:
            raise SnapshotError(f"not a checkpoint file (format={d.get('format')!r})")
        if d.get("version") != CHECKPOINT_VERSION:
            raise SnapshotError(f"unsupported checkpoint version {d.get('version')!r}; expected {CHECKPOINT_VERSION}")
        try:
            mm = policy_from_dict(d["mm_policy"])
            adv = policy_from_dict(d["adversary_policy"]) if d.get("adversary_policy") else None
        except (InvalidPolicy, KeyError, TypeError) as exc:
            raise SnapshotError(f"bad policy snapshot: {exc}") from exc
        if not isinstance(mm, GaussianPolicy) or (adv is not None and not isinstance(adv, BetaPolicy)):
            raise SnapshotError("checkpoint policies have the wrong kinds")
        return cls(
            episode=int(d["episode"]),
            sim=sim_from_dict(d["sim"]),
            eta=float(d["reward"]["eta"]),
            zeta=float(d["reward"]["zeta"]),
            regime=regime_from_dict(d["regime"], adv),
            mm_policy=mm,
            mm_critic=d.get("mm_critic"),
            adversary_critic=d.get("adversary_critic"),
        )


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def save(path, checkpoint: Checkpoint) -> Path:
    """Write atomically so a crash never leaves a truncated checkpoint."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps(checkpoint.to_dict()))
    os.replace(tmp, path)
    return path


def load(path) -> Checkpoint:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"{path}: not valid JSON ({exc})") from exc
    return Checkpoint.from_dict(d)


def critic_to_dict(centers: np.ndarray, widths: np.ndarray, w_v: np.ndarray, w_a: np.ndarray) -> dict:
    return {
        "centers": np.asarray(centers).reshape(-1, 2).tolist(),
        "widths": np.asarray(widths).tolist(),
        "w_v": np.asarray(w_v).tolist(),
        "w_a": np.asarray(w_a).tolist(),
    }
