"""Run configuration files (YAML, versioned schema, unknown keys rejected).

Example::

    schema_version: 1
    experiment: rn_fixed
    seed: 1
    sim: {h0_range: [-10, 10]}
    adversary: {kind: strategic, controlled: [b]}
    reward: {eta: 0.0, zeta: 0.01}
    train: {train_episodes: 50000}
    eval: {n_episodes: 10000, regimes: [fixed, random]}

Omitted sections and keys take the defaults of the corresponding dataclass.
``resolved()`` returns the config with every default written out; loading
that dictionary again yields an identical config.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .adversary import PARAM_ORDER, FixedRegime, RandomRegime, Regime, StrategicRegime
from .learner import ConfigurationError, TrainConfig
from .market import MarketParams, SimConfig
from .stage import ParamBounds

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "ADVMM_OUTPUT_ROOT"
EVAL_REGIMES = ("fixed", "random", "strategic")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class AdversaryConfig:
    kind: str = "fixed"
    controlled: tuple[str, ...] = ("b",)
    bounds: ParamBounds = field(default_factory=ParamBounds)
    fixed_b: float = 0.0
    fixed_a: float = 140.0
    fixed_k: float = 1.5

    def regime(self, sigma: float) -> Regime:
        fixed = MarketParams(b=self.fixed_b, sigma=sigma, a_bid=self.fixed_a, a_ask=self.fixed_a,
                             k_bid=self.fixed_k, k_ask=self.fixed_k)
        if self.kind == "fixed":
            return FixedRegime(fixed)
        if self.kind == "random":
            return RandomRegime(self.bounds, sigma)
        return StrategicRegime.untrained(self.controlled, self.bounds, fixed=fixed)


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 10_000
    regimes: tuple[str, ...] = ("fixed",)
    greedy: bool = False
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int
    sim: SimConfig = field(default_factory=SimConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str | None = None

    @property
    def eta(self) -> float:
        return self.train.eta

    @property
    def zeta(self) -> float:
        return self.train.zeta

    def regime(self) -> Regime:
        return self.adversary.regime(self.sim.sigma)

    def output_path(self) -> Path:
        if self.output_dir is not None:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.experiment

    def paper_scale(self) -> RunConfig:
        return replace(self, train=replace(self.train, train_episodes=1_000_000),
                       eval=replace(self.eval, n_episodes=100_000))

    def resolved(self) -> dict:
        sim = asdict(self.sim)
        sim["h0_range"] = list(self.sim.h0_range)
        sim["t0_range"] = list(self.sim.t0_range)
        bd = self.adversary.bounds
        train = asdict(self.train)
        reward = {"eta": train.pop("eta"), "zeta": train.pop("zeta")}
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "seed": self.seed,
            "output_dir": str(self.output_path()),
            "sim": sim,
            "adversary": {
                "kind": self.adversary.kind,
                "controlled": list(self.adversary.controlled),
                "bounds": {"b": [bd.b_lo, bd.b_hi], "A": [bd.a_lo, bd.a_hi], "k": [bd.k_lo, bd.k_hi]},
                "fixed": {"b": self.adversary.fixed_b, "A": self.adversary.fixed_a, "k": self.adversary.fixed_k},
            },
            "reward": reward,
            "train": train,
            "eval": {"n_episodes": self.eval.n_episodes, "regimes": list(self.eval.regimes),
                     "greedy": self.eval.greedy, "workers": self.eval.workers},
        }


def _section(d, name: str, allowed) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(d).__name__}")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")
    return d


def _num(value, where: str, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _pair(value, where: str, kind=float) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{where}: expected a two-element list")
    return (_num(value[0], f"{where}[0]", kind), _num(value[1], f"{where}[1]", kind))


def _build(cls, kwargs: dict, where: str):
    try:
        return cls(**kwargs)
    except (ValueError, ConfigurationError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(raw: dict) -> RunConfig:
    top = _section(raw, "config", {"schema_version", "experiment", "seed", "output_dir", "sim", "adversary",
                                   "reward", "train", "eval"})
    version = top.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    if "seed" not in top:
        raise ConfigError("seed: required (there is no wall-clock default)")
    seed = _num(top["seed"], "seed", int)
    if seed < 0:
        raise ConfigError("seed: must be non-negative")
    experiment = top.get("experiment", "experiment")
    if not isinstance(experiment, str) or not experiment:
        raise ConfigError("experiment: expected a non-empty string")

    sim_fields = {f.name: f for f in fields(SimConfig)}
    sim_raw = _section(top.get("sim"), "sim", sim_fields)
    sim_kw = {}
    for k, v in sim_raw.items():
        if k == "h0_range":
            sim_kw[k] = _pair(v, "sim.h0_range", int)
        elif k == "t0_range":
            sim_kw[k] = _pair(v, "sim.t0_range")
        elif k in ("n_steps", "h_min", "h_max"):
            sim_kw[k] = _num(v, f"sim.{k}", int)
        else:
            sim_kw[k] = _num(v, f"sim.{k}")
    sim = _build(SimConfig, sim_kw, "sim")

    adv_raw = _section(top.get("adversary"), "adversary", {"kind", "controlled", "bounds", "fixed"})
    kind = adv_raw.get("kind", "fixed")
    if kind not in EVAL_REGIMES:
        raise ConfigError(f"adversary.kind: expected one of {EVAL_REGIMES}, got {kind!r}")
    controlled = adv_raw.get("controlled", ["b"])
    if not isinstance(controlled, (list, tuple)) or not controlled or any(c not in PARAM_ORDER for c in controlled):
        raise ConfigError(f"adversary.controlled: expected a non-empty subset of {list(PARAM_ORDER)}, got {controlled!r}")
    controlled = tuple(p for p in PARAM_ORDER if p in controlled)
    b_raw = _section(adv_raw.get("bounds"), "adversary.bounds", {"b", "A", "k"})
    bkw = {}
    for key, (lo, hi) in {"b": ("b_lo", "b_hi"), "A": ("a_lo", "a_hi"), "k": ("k_lo", "k_hi")}.items():
        if key in b_raw:
            bkw[lo], bkw[hi] = _pair(b_raw[key], f"adversary.bounds.{key}")
    bounds = _build(ParamBounds, bkw, "adversary.bounds")
    f_raw = _section(adv_raw.get("fixed"), "adversary.fixed", {"b", "A", "k"})
    adversary = AdversaryConfig(
        kind=kind, controlled=controlled, bounds=bounds,
        fixed_b=_num(f_raw.get("b", 0.0), "adversary.fixed.b"),
        fixed_a=_num(f_raw.get("A", 140.0), "adversary.fixed.A"),
        fixed_k=_num(f_raw.get("k", 1.5), "adversary.fixed.k"),
    )
    if not (adversary.fixed_a > 0 and adversary.fixed_k > 0):
        raise ConfigError("adversary.fixed: A and k must be positive")

    rew = _section(top.get("reward"), "reward", {"eta", "zeta"})
    train_fields = {f.name for f in fields(TrainConfig)} - {"eta", "zeta"}
    tr_raw = _section(top.get("train"), "train", train_fields)
    tr_kw = {}
    for k, v in tr_raw.items():
        default = getattr(TrainConfig, k)
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"train.{k}: expected true/false, got {v!r}")
            tr_kw[k] = v
        else:
            tr_kw[k] = _num(v, f"train.{k}", int if isinstance(default, int) else float)
    for k in ("eta", "zeta"):
        if k in rew:
            tr_kw[k] = _num(rew[k], f"reward.{k}")
    train = _build(TrainConfig, tr_kw, "train")

    ev_raw = _section(top.get("eval"), "eval", {"n_episodes", "regimes", "greedy", "workers"})
    regimes = ev_raw.get("regimes", ["fixed"])
    if not isinstance(regimes, (list, tuple)) or not regimes or any(r not in EVAL_REGIMES for r in regimes):
        raise ConfigError(f"eval.regimes: expected a non-empty list drawn from {list(EVAL_REGIMES)}")
    ev = EvalConfig(
        n_episodes=_num(ev_raw.get("n_episodes", 10_000), "eval.n_episodes", int),
        regimes=tuple(regimes),
        greedy=ev_raw.get("greedy", False),
        workers=_num(ev_raw.get("workers", 1), "eval.workers", int),
    )
    if not isinstance(ev.greedy, bool):
        raise ConfigError(f"eval.greedy: expected true/false, got {ev.greedy!r}")
    if ev.n_episodes < 1:
        raise ConfigError("eval.n_episodes: must be >= 1")
    if ev.workers < 1:
        raise ConfigError("eval.workers: must be >= 1")
    out = top.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir: expected a string path")
    return RunConfig(experiment, seed, sim, adversary, train, ev, out)


def load_config(path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return parse_config(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.resolved(), sort_keys=False)
