"""Natural actor-critic training with compatible RBF critics.

Each learning agent owns a critic

    Q(s, a) = w_v . phi_rbf(s) + w_a . score(s, a)

whose advantage part uses the policy's own score as features. The critic is
trained by undiscounted semi-gradient SARSA(lambda) with accumulating traces
that are cleared at the start of every episode, and every
``update_period`` environment steps the policy moves along the natural
gradient, which for compatible features is just ``w_a``.

The inner loop lives in the episode kernels (``advmm.kernel``); the
per-transition functions here define the same updates in plain numpy and are
what the tests check the kernels against.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernel, snapshot
from .adversary import FixedRegime, RandomRegime, Regime, StrategicRegime
from .market import SimConfig
from .market import reward as reward  # re-exported: the learner's reward is the market's
from .policy import BetaPolicy, GaussianPolicy

TRAIN_LOG_COLUMNS = ("checkpoint_episode", "mean_wealth", "std_wealth", "sharpe", "mean_inv", "std_inv",
                     "mean_spread")


class ConfigurationError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: Path | None = None, episode: int = 0):
        super().__init__(message)
        self.last_good = last_good
        self.episode = episode


def rbf_grid(n_t: int = 10, n_h: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centred prototype grid over ``[0, 1] x [-1, 1]`` and widths equal to the spacing."""
    dt_, dh_ = 1.0 / n_t, 2.0 / n_h
    ts = dt_ * (np.arange(n_t) + 0.5)
    hs = -1.0 + dh_ * (np.arange(n_h) + 0.5)
    centers = np.array([[t, h] for t in ts for h in hs])
    return centers, np.array([dt_, dh_])


@dataclass
class RBFCritic:
    centers: np.ndarray
    widths: np.ndarray
    w_v: np.ndarray
    w_a: np.ndarray
    e_v: np.ndarray = field(init=False)
    e_a: np.ndarray = field(init=False)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        self.widths = np.asarray(self.widths, dtype=float).reshape(2)
        self.w_v = np.asarray(self.w_v, dtype=float).reshape(-1)
        self.w_a = np.asarray(self.w_a, dtype=float).reshape(-1)
        if self.w_v.size != len(self.centers):
            raise ConfigurationError(f"{self.w_v.size} value weights for {len(self.centers)} centres")
        if not np.all(self.widths > 0):
            raise ConfigurationError("RBF widths must be positive")
        self.reset_traces()

    @classmethod
    def zeros(cls, n_policy_weights: int, n_t: int = 10, n_h: int = 10) -> RBFCritic:
        centers, widths = rbf_grid(n_t, n_h)
        return cls(centers, widths, np.zeros(len(centers)), np.zeros(n_policy_weights))

    def reset_traces(self):
        self.e_v = np.zeros_like(self.w_v)
        self.e_a = np.zeros_like(self.w_a)

    def rbf(self, t: float, h_norm: float) -> np.ndarray:
        d = (np.array([t, h_norm]) - self.centers) / self.widths
        return np.exp(-0.5 * np.sum(d * d, axis=1))

    def gradient(self, phi_rbf: np.ndarray, score: np.ndarray) -> np.ndarray:
        """Gradient of ``Q`` w.r.t. ``(w_v, w_a)``; Q is linear so these are its features."""
        return np.concatenate([np.asarray(phi_rbf, float).ravel(), np.asarray(score, float).ravel()])

    def to_dict(self) -> dict:
        return snapshot.critic_to_dict(self.centers, self.widths, self.w_v, self.w_a)

    @classmethod
    def from_dict(cls, d: dict) -> RBFCritic:
        return cls(np.array(d["centers"]), np.array(d["widths"]), np.array(d["w_v"]), np.array(d["w_a"]))


def critic_value(critic: RBFCritic, phi_rbf: np.ndarray, score: np.ndarray) -> float:
    phi_rbf = np.asarray(phi_rbf, float).ravel()
    score = np.asarray(score, float).ravel()
    if phi_rbf.size != critic.w_v.size or score.size != critic.w_a.size:
        raise ConfigurationError(
            f"critic expects {critic.w_v.size} state and {critic.w_a.size} score features, "
            f"got {phi_rbf.size} and {score.size}"
        )
    return float(critic.w_v @ phi_rbf + critic.w_a @ score)


@dataclass(frozen=True)
class Transition:
    """``(s, a, r, s', a')`` in feature form; ``next_*`` are ``None`` at the terminal step."""

    phi_rbf: np.ndarray
    score: np.ndarray
    reward: float
    next_phi_rbf: np.ndarray | None = None
    next_score: np.ndarray | None = None

    @property
    def terminal(self) -> bool:
        return self.next_phi_rbf is None


class NonFiniteTD(FloatingPointError):
    pass


def sarsa_lambda_step(critic: RBFCritic, tr: Transition, lr: float, trace_decay: float) -> float:
    """One accumulating-trace SARSA(lambda) update, in place. Returns the TD error."""
    q = critic_value(critic, tr.phi_rbf, tr.score)
    critic.e_v = trace_decay * critic.e_v + np.asarray(tr.phi_rbf, float).ravel()
    critic.e_a = trace_decay * critic.e_a + np.asarray(tr.score, float).ravel()
    if tr.terminal:
        td = tr.reward - q
    else:
        td = tr.reward + critic_value(critic, tr.next_phi_rbf, tr.next_score) - q
    if not math.isfinite(td):
        raise NonFiniteTD(f"TD error {td} (reward {tr.reward}, Q {q})")
    critic.w_v = critic.w_v + lr * td * critic.e_v
    critic.w_a = critic.w_a + lr * td * critic.e_a
    return td


def natural_policy_update(weights: np.ndarray, critic: RBFCritic, lr: float,
                          max_step: float = math.inf, advantage_decay: float = 1.0) -> np.ndarray:
    """``theta + lr * w_a``, with the step length capped at ``max_step``.

    ``w_a`` is then scaled by ``advantage_decay`` in place (0 resets it).
    """
    if critic.w_a.size != np.size(weights):
        raise ConfigurationError(f"advantage weights ({critic.w_a.size}) do not match policy ({np.size(weights)})")
    nrm = math.sqrt(float(critic.w_a @ critic.w_a))
    coef = lr if lr * nrm <= max_step else max_step / nrm
    new = np.asarray(weights, float) + coef * critic.w_a.reshape(np.shape(weights))
    critic.w_a = critic.w_a * advantage_decay
    return new


@dataclass(frozen=True)
class TrainConfig:
    pretrain_episodes: int = 1000
    pretrain_lr: float = 1e-3
    train_episodes: int = 50_000
    update_period: int = 100
    lr_critic: float = 1e-4
    lr_policy: float = 1e-2
    trace_decay: float = 0.97
    eta: float = 0.0
    zeta: float = 0.0
    advantage_decay: float = 1.0
    max_policy_step: float = 1e-3
    var_floor: float = 1e-2
    weight_ceiling: float = 1e6
    checkpoint_every: int = 5000
    checkpoint_eval_episodes: int = 1000
    learn_mm: bool = True
    learn_adversary: bool = True

    def __post_init__(self):
        for name in ("pretrain_lr", "lr_critic", "lr_policy", "max_policy_step", "weight_ceiling"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.trace_decay <= 1.0:
            raise ConfigurationError(f"trace_decay must lie in [0, 1], got {self.trace_decay}")
        if not 0.0 <= self.advantage_decay <= 1.0:
            raise ConfigurationError(f"advantage_decay must lie in [0, 1], got {self.advantage_decay}")
        for name in ("pretrain_episodes", "train_episodes", "checkpoint_eval_episodes"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.update_period < 1 or self.checkpoint_every < 1:
            raise ConfigurationError("update_period and checkpoint_every must be >= 1")
        if self.eta < 0 or self.zeta < 0 or self.var_floor < 0:
            raise ConfigurationError("eta, zeta and var_floor must be non-negative")

    @classmethod
    def paper_scale(cls, **overrides) -> TrainConfig:
        return cls(**{"train_episodes": 1_000_000, **overrides})


def seed_streams(seed) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Independent ``(training, evaluation)`` children of the root seed."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    train, evaluation = root.spawn(2)
    return train, evaluation


def make_workspace(sim: SimConfig, regime: Regime, mm_policy: GaussianPolicy, *,
                   mm_critic: RBFCritic | None = None, adv_critic: RBFCritic | None = None,
                   config: TrainConfig | None = None, random_start: bool = False,
                   n0: int = 0, h0: int = 0, greedy: bool = False,
                   eta: float | None = None, zeta: float | None = None) -> kernel.Workspace:
    """Flatten an environment, policies and critics into a kernel workspace."""
    cfg = config or TrainConfig()
    basis = mm_policy.basis
    if basis.degree != 3:
        raise ConfigurationError("the episode kernels support the degree-3 basis only")
    ctrl = np.zeros(0, dtype=np.int64)
    atheta = np.zeros(0)
    fixed = [0.0, 140.0, 140.0, 1.5, 1.5]
    bounds_arr = [-5.0, 5.0, 105.0, 175.0, 1.125, 1.875]
    sigma = sim.sigma
    if isinstance(regime, FixedRegime):
        p = regime.params
        fixed = [p.b, p.a_bid, p.a_ask, p.k_bid, p.k_ask]
        sigma = p.sigma
    elif isinstance(regime, RandomRegime):
        bd = regime.bounds
        bounds_arr = [bd.b_lo, bd.b_hi, bd.a_lo, bd.a_hi, bd.k_lo, bd.k_hi]
        sigma = regime.sigma
    elif isinstance(regime, StrategicRegime):
        bd, p = regime.bounds, regime.fixed
        bounds_arr = [bd.b_lo, bd.b_hi, bd.a_lo, bd.a_hi, bd.k_lo, bd.k_hi]
        fixed = [p.b, p.a_bid, p.a_ask, p.k_bid, p.k_ask]
        sigma = p.sigma
        if regime.policy.basis != basis:
            raise ConfigurationError("market maker and adversary must share the feature basis")
        ctrl = np.array([kernel.PARAM_CODES[n] for n in regime.controlled], dtype=np.int64)
        atheta = regime.policy.weights
    else:
        raise ConfigurationError(f"unknown regime {regime!r}")
    mm_critic = mm_critic or RBFCritic.zeros(mm_policy.weights.size)
    if adv_critic is None:
        adv_critic = RBFCritic(mm_critic.centers, mm_critic.widths, np.zeros(len(mm_critic.centers)),
                               np.zeros(np.size(atheta)))
    if adv_critic.w_a.size != np.size(atheta):
        raise ConfigurationError("adversary critic does not match the adversary policy")
    n_lo, n_hi = sim.start_steps()
    return kernel.Workspace(
        n_steps=sim.n_steps, dt=sim.dt, z0=sim.z0, sigma=sigma, h_min=sim.h_min, h_max=sim.h_max,
        h_scale=basis.h_scale, theta=mm_policy.weights.copy(), var_floor=mm_policy.var_floor,
        regime=kernel.REGIME_CODES[regime.kind], fixed_params=np.array(fixed), bounds=np.array(bounds_arr),
        ctrl=ctrl, atheta=np.array(atheta, dtype=float).copy(), random_start=random_start, n0=n0, h0=h0,
        n0_lo=n_lo, n0_hi=n_hi, h0_lo=sim.h0_range[0], h0_hi=sim.h0_range[1], greedy=greedy,
        centers=mm_critic.centers.copy(), widths=mm_critic.widths.copy(), wv=mm_critic.w_v.copy(),
        wa=mm_critic.w_a.copy(), awv=adv_critic.w_v.copy(), awa=adv_critic.w_a.copy(),
        lr_critic=cfg.lr_critic, lr_policy=cfg.lr_policy, trace_decay=cfg.trace_decay,
        eta=cfg.eta if eta is None else eta, zeta=cfg.zeta if zeta is None else zeta,
        update_period=cfg.update_period, advantage_decay=cfg.advantage_decay,
        max_policy_step=cfg.max_policy_step, weight_ceiling=cfg.weight_ceiling,
    )


@dataclass
class TrainResult:
    checkpoint: snapshot.Checkpoint
    log: list[dict]
    checkpoints: list[Path]
    episodes: int

    @property
    def mm_policy(self) -> GaussianPolicy:
        return self.checkpoint.mm_policy

    @property
    def regime(self) -> Regime:
        return self.checkpoint.regime


def _checkpoint_from(ws: kernel.Workspace, sim: SimConfig, regime: Regime, mm_policy: GaussianPolicy,
                     cfg: TrainConfig, episode: int) -> snapshot.Checkpoint:
    mm = GaussianPolicy(ws.theta.reshape(4, -1).copy(), mm_policy.basis, mm_policy.var_floor)
    if isinstance(regime, StrategicRegime):
        p = regime.policy
        regime = replace(regime, policy=BetaPolicy(ws.atheta.copy(), p.names, p.bounds, p.basis))
    mm_critic = snapshot.critic_to_dict(ws.centers, ws.widths, ws.wv, ws.wa)
    adv_critic = snapshot.critic_to_dict(ws.centers, ws.widths, ws.awv, ws.awa) if ws.awa.size else None
    return snapshot.Checkpoint(episode, sim, cfg.eta, cfg.zeta, regime, mm, mm_critic, adv_critic)


def _run_checked(ws, rng, n, phase, episode0, last_good):
    status, done, *_ = kernel.run_batch(ws, rng, n)
    if status != kernel.OK:
        raise TrainingDiverged(
            f"{phase} stopped at episode {episode0 + done}: {kernel.STATUS_NAMES[status]}",
            last_good, episode0 + done,
        )


def train(sim: SimConfig, regime: Regime, mm_policy: GaussianPolicy | None, config: TrainConfig, seed, *,
          out_dir=None, mm_critic: RBFCritic | None = None, adv_critic: RBFCritic | None = None,
          pretrain: bool = True, log: Callable[[dict], None] | None = None) -> TrainResult:
    """Pretrain the critics, then train market maker and adversary jointly.

    The strategic adversary learns from ``-R``; other regimes only supply
    parameters. With ``out_dir`` set, checkpoints ``ckpt_<episode>.json``
    and ``train_log.csv`` are written there as training proceeds.
    """
    from .harness import evaluate  # the harness builds on this module

    mm_policy = mm_policy or GaussianPolicy.zeros(var_floor=config.var_floor)
    if mm_policy.var_floor != config.var_floor:
        mm_policy = GaussianPolicy(mm_policy.weights, mm_policy.basis, config.var_floor)
    train_ss, eval_ss = seed_streams(seed)
    rng = np.random.Generator(np.random.PCG64(train_ss))
    ws = make_workspace(sim, regime, mm_policy, mm_critic=mm_critic, adv_critic=adv_critic, config=config,
                        random_start=True)
    ws.learn_mm = config.learn_mm
    ws.learn_adv = config.learn_adversary and isinstance(regime, StrategicRegime)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.csv"
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(TRAIN_LOG_COLUMNS)
    rows: list[dict] = []
    paths: list[Path] = []
    last_good: Path | None = None

    if pretrain and config.pretrain_episodes > 0:
        ws.lr_critic = config.pretrain_lr
        ws.policy_updates = False
        _run_checked(ws, rng, config.pretrain_episodes, "critic pretraining", 0, None)
    ws.lr_critic = config.lr_critic
    ws.policy_updates = True

    done = 0
    ckpt = _checkpoint_from(ws, sim, regime, mm_policy, config, 0)
    while done < config.train_episodes:
        n = min(config.checkpoint_every, config.train_episodes - done)
        _run_checked(ws, rng, n, "training", done, last_good)
        done += n
        ckpt = _checkpoint_from(ws, sim, regime, mm_policy, config, done)
        if config.checkpoint_eval_episodes > 0:
            rep = evaluate(ckpt.mm_policy, ckpt.regime, config.checkpoint_eval_episodes, sim, eval_ss,
                           eta=config.eta, zeta=config.zeta)
            row = {"checkpoint_episode": done, "mean_wealth": rep.mean_wealth, "std_wealth": rep.std_wealth,
                   "sharpe": rep.sharpe, "mean_inv": rep.mean_inv, "std_inv": rep.std_inv,
                   "mean_spread": rep.mean_spread}
            rows.append(row)
            if log is not None:
                log(row)
            if out is not None:
                with open(log_path, "a", newline="") as fh:
                    csv.writer(fh).writerow([done] + [repr(float(row[c])) for c in TRAIN_LOG_COLUMNS[1:]])
        if out is not None:
            last_good = snapshot.save(out / f"ckpt_{done:08d}.json", ckpt)
            paths.append(last_good)
    if out is not None:
        paths.append(snapshot.save(out / "final.json", ckpt))
    return TrainResult(ckpt, rows, paths, done)


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
