"""Command-line entry point: ``advmm {train,evaluate,solve-stage,audit,export-surface}``.

Exit codes: 0 success, 2 configuration or argument error, 3 training
divergence, 4 infeasible stage-game domain.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, snapshot, stage
from .adversary import FixedRegime, RandomRegime, StrategicRegime
from .config import OUTPUT_ROOT_ENV, ConfigError, dump_config, load_config
from .learner import RBFCritic, TrainConfig, TrainingDiverged, train
from .policy import GaussianPolicy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _out_root(arg: str | None, default_name: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / default_name


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.paper_scale:
        cfg = cfg.paper_scale()
    if args.output:
        cfg = replace(cfg, output_dir=args.output)
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.yaml").write_text(dump_config(cfg))

    def log(row):
        if not args.quiet:
            print(f"episode {row['checkpoint_episode']:>8d}  wealth {row['mean_wealth']:8.2f} "
                  f"± {row['std_wealth']:6.2f}  sharpe {row['sharpe']:6.2f}  inv sd {row['std_inv']:6.2f}  "
                  f"spread {row['mean_spread']:.3f}", flush=True)

    try:
        res = train(cfg.sim, cfg.regime(), None, cfg.train, cfg.seed, out_dir=out, log=log)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        print(f"last good checkpoint: {exc.last_good}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {len(res.checkpoints)} checkpoint(s) and train_log.csv to {out}")
    return EXIT_OK


def _load_ckpt(path) -> snapshot.Checkpoint:
    try:
        return snapshot.load(path)
    except OSError as exc:
        raise UsageError(f"{path}: cannot read ({exc.strerror})") from exc
    except (snapshot.SnapshotError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _test_regime(name: str, ckpt: snapshot.Checkpoint, adversary: snapshot.Checkpoint | None):
    sigma = ckpt.sim.sigma
    if name == "fixed":
        return FixedRegime(replace(FixedRegime().params, sigma=sigma))
    if name == "random":
        return RandomRegime(sigma=sigma)
    source = adversary if adversary is not None else ckpt
    if not isinstance(source.regime, StrategicRegime):
        raise UsageError("--regime strategic needs a strategic adversary: pass --adversary CHECKPOINT")
    return source.regime


def cmd_evaluate(args) -> int:
    n = args.episodes if args.episodes is not None else (100_000 if args.paper_scale else 10_000)
    if n < 1:
        raise UsageError("--episodes must be >= 1")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    ckpt = _load_ckpt(args.snapshot)
    adv = _load_ckpt(args.adversary) if args.adversary else None
    names = args.regime or ["fixed"]
    regimes = {name: _test_regime(name, ckpt, adv) for name in names}
    label = Path(args.snapshot).stem
    matrix = harness.cross_test({label: ckpt.mm_policy}, regimes, n, args.seed, ckpt.sim,
                                eta=ckpt.eta, zeta=ckpt.zeta, workers=args.workers)
    records = matrix.records()
    out = _out_root(args.output, f"eval_{label}")
    out.mkdir(parents=True, exist_ok=True)
    harness.write_reports_csv(out / "eval.csv", records)
    table = harness.format_table(records)
    (out / "eval.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_solve_stage(args) -> int:
    try:
        bounds = stage.ParamBounds(args.b_range[0], args.b_range[1], args.a_range[0], args.a_range[1],
                                   args.k_range[0], args.k_range[1])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        eq = stage.nash_equilibrium(bounds, args.h, args.k, args.a)
    except stage.InfeasibleEquilibrium as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    controlled = {"b"} if args.k is not None else {"b", "A", "k"}
    expl = stage.verify_equilibrium_grid(eq.profile, bounds, args.grid, controlled)
    p = eq.profile
    record = {
        "b": p.b, "delta_bid": p.delta_bid, "delta_ask": p.delta_ask, "A_bid": p.a_bid, "A_ask": p.a_ask,
        "k_bid": p.k_bid, "k_ask": p.k_ask, "h": p.h, "payoff": eq.payoff, "exploitability": expl,
        "continuum": eq.continuum, "grid": args.grid,
    }
    if args.json:
        print(json.dumps(record, sort_keys=True))
    else:
        for k, v in record.items():
            print(f"{k:15s} {v!r}")
    return EXIT_OK


def _perturbed(policy: GaussianPolicy, shift: float) -> GaussianPolicy:
    """Shift the reservation offset by ``shift`` everywhere (constant feature weight)."""
    w = policy.weights.copy()
    w[0, 0] += shift
    return GaussianPolicy(w, policy.basis, policy.var_floor)


def cmd_audit(args) -> int:
    if args.budget < 0:
        raise UsageError("--budget must be >= 0")
    mm = _load_ckpt(args.mm)
    adv = _load_ckpt(args.adversary)
    if snapshot.sim_to_dict(mm.sim) != snapshot.sim_to_dict(adv.sim) or (mm.eta, mm.zeta) != (adv.eta, adv.zeta):
        raise UsageError("the two snapshots were trained in different environments (sim or reward settings differ)")
    if not isinstance(adv.regime, StrategicRegime):
        raise UsageError(f"{args.adversary}: not a strategic adversary checkpoint")
    policy = _perturbed(mm.mm_policy, args.perturb_ptilde) if args.perturb_ptilde else mm.mm_policy
    cfg = TrainConfig(eta=mm.eta, zeta=mm.zeta)
    mm_critic = RBFCritic.from_dict(mm.mm_critic) if mm.mm_critic else None
    adv_critic = RBFCritic.from_dict(adv.adversary_critic) if adv.adversary_critic else None
    rep = harness.best_response_audit(policy, adv.regime, mm.sim, cfg, args.budget, args.seed,
                                      eps_rel=args.eps, n_eval=args.episodes, mm_critic=mm_critic,
                                      adv_critic=adv_critic, workers=args.workers)
    out = _out_root(args.output, "audit")
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"player": s.player, "delta": s.delta, "stderr": s.stderr, "epsilon": s.epsilon,
             "passed": int(s.passed)} for s in rep.sides]
    harness.write_reports_csv(out / "audit.csv", rows)
    for r in rows:
        print(f"{r['player']:10s} delta {r['delta']:+.4f}  stderr {r['stderr']:.4f}  eps {r['epsilon']:.4f}  "
              f"{'pass' if r['passed'] else 'FAIL'}")
    print(f"verdict: {rep.verdict}")
    (out / "verdict.txt").write_text(rep.verdict + "\n")
    return EXIT_OK


def _grid(spec: str) -> np.ndarray:
    try:
        lo, hi, n = spec.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise UsageError(f"grid {spec!r}: expected LO:HI:N") from exc


def cmd_export_surface(args) -> int:
    ckpt = _load_ckpt(args.snapshot)
    if args.player == "mm":
        policy = ckpt.mm_policy
    else:
        policy = ckpt.adversary_policy
        if policy is None:
            raise UsageError(f"{args.snapshot}: no adversary policy in this checkpoint")
    try:
        rows = harness.policy_surface_export(policy, _grid(args.t_grid), _grid(args.h_grid))
        if any(abs(r["h"]) > policy.basis.h_scale for r in rows):
            raise ValueError(f"h grid leaves [-{policy.basis.h_scale}, {policy.basis.h_scale}]")
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.output) if args.output else _out_root(None, "surfaces") / f"{Path(args.snapshot).stem}_{args.player}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    harness.write_surface_csv(out, rows)
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="advmm", description="Adversarial market-making laboratory.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from a YAML run config")
    t.add_argument("config")
    t.add_argument("--output", help="output directory (overrides the config)")
    t.add_argument("--paper-scale", action="store_true", help="1e6 training and 1e5 evaluation episodes")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint under one or more test regimes")
    e.add_argument("snapshot")
    e.add_argument("--regime", action="append", choices=("fixed", "random", "strategic"))
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--adversary", help="checkpoint holding the strategic adversary for --regime strategic")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--output")
    e.add_argument("--paper-scale", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("solve-stage", help="closed-form stage-game equilibrium with grid verification")
    s.add_argument("--b-range", nargs=2, type=float, default=(-5.0, 5.0), metavar=("LO", "HI"))
    s.add_argument("--a-range", nargs=2, type=float, default=(105.0, 175.0), metavar=("LO", "HI"))
    s.add_argument("--k-range", nargs=2, type=float, default=(1.125, 1.875), metavar=("LO", "HI"))
    s.add_argument("--h", type=float, required=True)
    s.add_argument("--k", type=float, help="fixed decay rate; omit to let the adversary choose A and k")
    s.add_argument("--a", type=float, default=140.0, help="fixed base intensity when --k is given")
    s.add_argument("--grid", type=int, default=401)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_solve_stage)

    a = sub.add_parser("audit", help="best-response retraining audit of a market maker / adversary pair")
    a.add_argument("--mm", required=True)
    a.add_argument("--adversary", required=True)
    a.add_argument("--budget", type=int, default=10_000)
    a.add_argument("--eps", type=float, default=0.02)
    a.add_argument("--episodes", type=int, default=10_000)
    a.add_argument("--seed", type=int, required=True)
    a.add_argument("--perturb-ptilde", type=float, default=0.0, help="shift the MM's reservation offset")
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--output")
    a.set_defaults(func=cmd_audit)

    x = sub.add_parser("export-surface", help="most probable action over a (t, h) grid")
    x.add_argument("snapshot")
    x.add_argument("--player", choices=("mm", "adversary"), default="mm")
    x.add_argument("--t-grid", default="0:1:11")
    x.add_argument("--h-grid", default="-50:50:21")
    x.add_argument("--output")
    x.set_defaults(func=cmd_export_surface)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
