"""Evaluation protocol, robustness cross-tests, policy surfaces and audits.

Evaluation episodes start at ``t = 0`` with zero inventory and a frozen
policy. Episodes are grouped in fixed-size blocks; block ``i`` draws from
the ``i``-th child of the evaluation seed, so results do not depend on the
number of worker processes, and every moment is accumulated with
``math.fsum``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import kernel
from .adversary import FixedRegime, Regime, StrategicRegime
from .learner import RBFCritic, TrainConfig, make_workspace, train
from .market import SimConfig
from .policy import BetaPolicy, GaussianPolicy

BLOCK_SIZE = 1000
SPREAD_STD_NOTE = "std_spread is the standard deviation across per-episode average spreads"


@dataclass(frozen=True)
class EvalReport:
    mean_wealth: float
    std_wealth: float
    sharpe: float
    mean_inv: float
    std_inv: float
    mean_spread: float
    std_spread: float
    n_episodes: int
    mean_reward: float = 0.0
    std_reward: float = 0.0

    @property
    def stderr_reward(self) -> float:
        return self.std_reward / math.sqrt(self.n_episodes) if self.n_episodes else math.nan

    @property
    def stderr_wealth(self) -> float:
        return self.std_wealth / math.sqrt(self.n_episodes) if self.n_episodes else math.nan


def _moments(x) -> tuple[float, float]:
    """Mean and ``n - 1`` sample standard deviation with compensated sums."""
    x = [float(v) for v in x]
    n = len(x)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(x) / n
    if n == 1:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in x) / (n - 1))


def sharpe_ratio(mean: float, std: float) -> float:
    """Mean over standard deviation (the form the published tables use)."""
    if std == 0:
        return math.inf if mean > 0 else (-math.inf if mean < 0 else math.nan)
    return mean / std


def aggregate(wealth, inventory, spread, reward=None) -> EvalReport:
    mw, sw = _moments(wealth)
    mi, si = _moments(inventory)
    ms, ss = _moments(spread)
    mr, sr = _moments(reward if reward is not None else wealth)
    return EvalReport(mw, sw, sharpe_ratio(mw, sw), mi, si, ms, ss, len(wealth), mr, sr)


def _as_seedseq(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def block_seed(seed, i: int) -> np.random.SeedSequence:
    """The ``i``-th child of ``seed``, independent of how many were spawned before."""
    ss = _as_seedseq(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (i,), pool_size=ss.pool_size)


def _run_block(args):
    ws, child, n = args
    rng = np.random.Generator(np.random.PCG64(child))
    status, done, w, h, s, r = kernel.run_batch(ws, rng, n)
    if status != kernel.OK:
        raise FloatingPointError(f"evaluation episode aborted: {kernel.STATUS_NAMES[status]}")
    return w, h, s, r


def rollout(policy: GaussianPolicy, regime: Regime, n_episodes: int, sim: SimConfig, seed, *,
            eta: float = 0.0, zeta: float = 0.0, greedy: bool = False, workers: int = 1,
            block_size: int = BLOCK_SIZE) -> dict[str, np.ndarray]:
    """Per-episode terminal wealth, inventory, mean spread and total reward."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    ws = make_workspace(sim, regime, policy, greedy=greedy, eta=eta, zeta=zeta)
    jobs = []
    for i, start in enumerate(range(0, n_episodes, block_size)):
        jobs.append((ws, block_seed(seed, i), min(block_size, n_episodes - start)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, jobs))
    else:
        parts = [_run_block(j) for j in jobs]
    keys = ("wealth", "inventory", "spread", "reward")
    return {k: np.concatenate([p[i] for p in parts]) for i, k in enumerate(keys)}


def evaluate(policy: GaussianPolicy, regime: Regime, n_episodes: int, sim: SimConfig | None = None, seed=0, *,
             eta: float = 0.0, zeta: float = 0.0, greedy: bool = False, workers: int = 1) -> EvalReport:
    sim = sim or SimConfig()
    out = rollout(policy, regime, n_episodes, sim, seed, eta=eta, zeta=zeta, greedy=greedy, workers=workers)
    return aggregate(out["wealth"], out["inventory"], out["spread"], out["reward"])


@dataclass
class CrossTestMatrix:
    rows: list[str]
    columns: list[str]
    cells: dict[tuple[str, str], EvalReport]
    baseline: str | None = None

    def variance_ratio(self, row: str, col: str) -> float | None:
        """Terminal-wealth variance relative to the row's baseline cell."""
        if self.baseline is None:
            return None
        base = self.cells[(row, self.baseline)].std_wealth ** 2
        return self.cells[(row, col)].std_wealth ** 2 / base if base > 0 else math.nan

    def records(self) -> list[dict]:
        out = []
        for r in self.rows:
            for c in self.columns:
                rec = {"train": r, "test": c, **asdict(self.cells[(r, c)])}
                rec["variance_ratio"] = self.variance_ratio(r, c)
                out.append(rec)
        return out


def cross_test(snapshots: dict[str, GaussianPolicy], regimes: dict[str, Regime], n_episodes: int, seed,
               sim: SimConfig | None = None, *, baseline: str | None = None, eta: float = 0.0,
               zeta: float = 0.0, workers: int = 1) -> CrossTestMatrix:
    """Every snapshot under every regime with common seeds per test regime.

    ``baseline`` names the column the variance ratios are taken against;
    by default the first Fixed regime in ``regimes``.
    """
    if not snapshots or not regimes:
        raise ValueError("cross_test needs at least one snapshot and one regime")
    if baseline is None:
        baseline = next((k for k, v in regimes.items() if isinstance(v, FixedRegime)), None)
    cells = {}
    for r, pol in snapshots.items():
        for c, reg in regimes.items():
            cells[(r, c)] = evaluate(pol, reg, n_episodes, sim, seed, eta=eta, zeta=zeta, workers=workers)
    return CrossTestMatrix(list(snapshots), list(regimes), cells, baseline)


def policy_surface_export(policy: GaussianPolicy | BetaPolicy, t_grid, h_grid) -> list[dict]:
    """Most probable action over a ``(t, h)`` grid, one row per point."""
    rows = []
    for t in t_grid:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t={t} outside [0, 1]")
        for h in h_grid:
            phi = policy.basis(float(t), float(h))
            row = {"t": float(t), "h": float(h)}
            if isinstance(policy, GaussianPolicy):
                p, s = policy.mode(phi)
                row["p_tilde"] = p
                row["psi"] = s
            else:
                vals, undefined = policy.mode(phi)
                for name, v, u in zip(policy.names, vals, undefined):
                    row[name] = float(v)
                    row[f"{name}_undefined"] = int(u)
            rows.append(row)
    return rows


@dataclass
class AuditSide:
    player: str
    pre: EvalReport | None
    post: EvalReport | None
    delta: float
    stderr: float
    epsilon: float

    @property
    def passed(self) -> bool:
        return self.delta <= self.epsilon + 2.0 * self.stderr


@dataclass
class AuditReport:
    sides: list[AuditSide]
    budget: int
    vacuous: bool = False

    @property
    def verdict(self) -> str:
        if self.vacuous:
            return "approximate NE (vacuous)"
        return "approximate NE" if all(s.passed for s in self.sides) else "exploitable"


def _player_reward(rep: EvalReport, player: str) -> float:
    return rep.mean_reward if player == "mm" else -rep.mean_reward


def best_response_audit(mm_policy: GaussianPolicy, regime: StrategicRegime, sim: SimConfig,
                        config: TrainConfig, budget: int, seed, *, eps_rel: float = 0.02,
                        n_eval: int = 10_000, players=("adversary", "mm"),
                        mm_critic: RBFCritic | None = None, adv_critic: RBFCritic | None = None,
                        workers: int = 1) -> AuditReport:
    """Retrain each player in turn against the frozen other; measure the gain.

    The gain ``delta`` is the retrained player's mean episode reward after
    retraining minus before, on the evaluation protocol with a common seed.
    The pair passes for that player if ``delta <= eps + 2 * stderr`` with
    ``eps = eps_rel * |mean reward of the frozen pair|``.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if not isinstance(regime, StrategicRegime):
        raise ValueError("the audit needs a strategic adversary")
    eta, zeta = config.eta, config.zeta
    pre = evaluate(mm_policy, regime, n_eval, sim, seed, eta=eta, zeta=zeta, workers=workers)
    eps = eps_rel * abs(pre.mean_reward)
    if budget == 0:
        sides = [AuditSide(p, pre, pre, 0.0, 0.0, eps) for p in players]
        return AuditReport(sides, 0, vacuous=True)
    sides = []
    for k, player in enumerate(players):
        cfg = replace(config, train_episodes=budget, checkpoint_every=budget, checkpoint_eval_episodes=0,
                      learn_mm=player == "mm", learn_adversary=player == "adversary")
        res = train(sim, regime, mm_policy, cfg, np.random.SeedSequence([_seed_int(seed), 7919, k]),
                    mm_critic=mm_critic, adv_critic=adv_critic,
                    pretrain=(mm_critic is None if player == "mm" else adv_critic is None))
        post = evaluate(res.mm_policy, res.regime, n_eval, sim, seed, eta=eta, zeta=zeta, workers=workers)
        delta = _player_reward(post, player) - _player_reward(pre, player)
        se = math.hypot(pre.stderr_reward, post.stderr_reward)
        sides.append(AuditSide(player, pre, post, delta, se, eps))
    return AuditReport(sides, budget)


def _seed_int(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return int(seed)


REPORT_COLUMNS = tuple(f.name for f in fields(EvalReport))


def write_reports_csv(path, records: list[dict]) -> None:
    """One row per report; floats written with ``repr`` for exact round-trips."""
    if not records:
        raise ValueError("no reports to write")
    cols = list(records[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for rec in records:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in rec.items()})


def format_table(records: list[dict], label_keys=("train", "test")) -> str:
    """Aligned text table with the columns of the published results table."""
    header = [*label_keys, "term. wealth", "sharpe", "term. inventory", "avg spread"]
    body = []
    for r in records:
        body.append([
            *[str(r.get(k, "")) for k in label_keys],
            f"{r['mean_wealth']:.1f} ± {r['std_wealth']:.1f}",
            f"{r['sharpe']:.2f}",
            f"{r['mean_inv']:.2f} ± {r['std_inv']:.2f}",
            f"{r['mean_spread']:.2f} ± {r['std_spread']:.2f}",
        ])
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    lines.append(f"# {SPREAD_STD_NOTE}")
    return "\n".join(lines) + "\n"


def write_surface_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
