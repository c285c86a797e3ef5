import csv
import math
import re
from pathlib import Path

import numpy as np
import pytest

from advmm.adversary import FixedRegime, RandomRegime, StrategicRegime
from advmm.harness import (
    REPORT_COLUMNS,
    SPREAD_STD_NOTE,
    _moments,
    aggregate,
    best_response_audit,
    block_seed,
    cross_test,
    evaluate,
    format_table,
    policy_surface_export,
    rollout,
    sharpe_ratio,
    write_reports_csv,
    write_surface_csv,
)
from advmm.learner import TrainConfig
from advmm.market import SimConfig
from advmm.policy import BetaPolicy, GaussianPolicy, features

PUBLISHED = Path(__file__).resolve().parents[1] / "paper.md"


def quoting_policy(d=0.7, var_raw=-10.0):
    # constant symmetric quote of half-spread d; the default variance is tiny
    w = np.zeros((4, 10))
    w[1, 0] = math.log(math.expm1(2 * d)) if d < 10 else 2 * d
    w[2, 0] = w[3, 0] = var_raw
    return GaussianPolicy(w, var_floor=1e-4)


def test_aggregate_hand_example():
    rep = aggregate([1.0, 2.0, 3.0], [0, 0, 0], [1.0, 1.0, 1.0])
    assert (rep.mean_wealth, rep.std_wealth, rep.sharpe) == (2.0, 1.0, 2.0)
    assert rep.n_episodes == 3 and rep.std_inv == 0.0


def test_published_first_row_sharpe():
    assert sharpe_ratio(67.0, 12.0) == pytest.approx(5.57, abs=0.02)


def published_rows():
    text = PUBLISHED.read_text()
    pat = re.compile(r"\$(-?[\d.]+) \\pm ([\d.]+)\$ & \$([\d.]+)\$")
    return [tuple(map(float, m.groups())) for m in pat.finditer(text)]


def test_published_sharpes_are_mean_over_std():
    # means and stds are printed to one decimal and Sharpes to two, so the
    # identity is checked over the interval those roundings allow
    rows = published_rows()
    assert len(rows) == 24
    for mean, std, sharpe in rows:
        lo = (mean - 0.05) / (std + 0.05) - 0.005
        hi = (mean + 0.05) / (std - 0.05) + 0.005
        assert lo <= sharpe <= hi, (mean, std, sharpe)
        # the variance form would give values an order of magnitude smaller
        assert abs(mean / std**2 - sharpe) > 1.0


def test_sharpe_degenerate():
    assert sharpe_ratio(1.0, 0.0) == math.inf
    assert math.isnan(sharpe_ratio(0.0, 0.0))


def test_moments_are_order_independent():
    rng = np.random.default_rng(0)
    x = rng.normal(1e6, 1.0, 10_000)
    m1, s1 = _moments(x)
    m2, s2 = _moments(rng.permutation(x))
    assert abs(m1 - m2) <= 1e-9 and abs(s1 - s2) <= 1e-9
    assert m1 == pytest.approx(math.fsum(x) / len(x), abs=0)
    assert s1 == pytest.approx(np.std(x, ddof=1), rel=1e-9)


def test_block_seeds_are_stable_children():
    ss = np.random.SeedSequence(42)
    kids = ss.spawn(3)
    assert block_seed(42, 2).generate_state(4).tolist() == kids[2].generate_state(4).tolist()


def test_evaluation_is_deterministic():
    a = evaluate(quoting_policy(), FixedRegime(), 300, seed=1)
    b = evaluate(quoting_policy(), FixedRegime(), 300, seed=1)
    assert a == b
    assert evaluate(quoting_policy(), FixedRegime(), 300, seed=2) != a


def test_evaluation_independent_of_worker_count():
    kw = dict(sim=SimConfig(), seed=3)
    one = rollout(quoting_policy(), RandomRegime(), 2500, **kw, workers=1, block_size=500)
    many = rollout(quoting_policy(), RandomRegime(), 2500, **kw, workers=3, block_size=500)
    for k in one:
        assert np.array_equal(one[k], many[k])


def test_evaluation_starts_flat_at_time_zero():
    out = rollout(quoting_policy(1e3), FixedRegime(), 50, SimConfig(), 4)
    # a quote that never fills keeps zero inventory and zero wealth
    assert not out["wealth"].any() and not out["inventory"].any()


def test_evaluation_matches_analytic_earnings():
    d = 0.7
    p = -math.expm1(-140 * math.exp(-1.5 * d) * 0.005)
    rep = evaluate(quoting_policy(d), FixedRegime(), 4000, seed=5)
    assert abs(rep.mean_wealth - 200 * 2 * d * p) < 3 * rep.stderr_wealth
    assert rep.mean_spread == pytest.approx(2 * d, rel=1e-3)


def test_stderr_halves_when_episodes_quadruple():
    small = evaluate(quoting_policy(), FixedRegime(), 2000, seed=6)
    large = evaluate(quoting_policy(), FixedRegime(), 8000, seed=7)
    assert small.stderr_wealth / large.stderr_wealth == pytest.approx(2.0, rel=0.1)


def test_reward_stats_follow_risk_penalty():
    rep0 = evaluate(quoting_policy(), FixedRegime(), 500, seed=8)
    rep1 = evaluate(quoting_policy(), FixedRegime(), 500, seed=8, zeta=0.01)
    assert rep0.mean_wealth == rep1.mean_wealth
    assert rep0.mean_reward == pytest.approx(rep0.mean_wealth, rel=1e-12)
    assert rep1.mean_reward < rep0.mean_reward


def test_rollout_rejects_empty():
    with pytest.raises(ValueError):
        rollout(quoting_policy(), FixedRegime(), 0, SimConfig(), 0)


def test_cross_test_single_cell_equals_evaluate():
    m = cross_test({"fixed": quoting_policy()}, {"fixed": FixedRegime()}, 400, 9)
    assert m.cells[("fixed", "fixed")] == evaluate(quoting_policy(), FixedRegime(), 400, seed=9)
    assert m.variance_ratio("fixed", "fixed") == 1.0


def test_random_test_inflates_fixed_trained_variance():
    m = cross_test({"q": quoting_policy()}, {"fixed": FixedRegime(), "random": RandomRegime()}, 3000, 10)
    assert m.variance_ratio("q", "random") > 1.0
    recs = m.records()
    assert [(r["train"], r["test"]) for r in recs] == [("q", "fixed"), ("q", "random")]
    assert recs[0]["variance_ratio"] == 1.0


def test_cross_test_needs_inputs():
    with pytest.raises(ValueError):
        cross_test({}, {"fixed": FixedRegime()}, 10, 0)


def test_zero_policy_surface():
    rows = policy_surface_export(GaussianPolicy.zeros(), np.linspace(0, 1, 4), np.linspace(-50, 50, 5))
    assert len(rows) == 20
    for r in rows:
        assert r["p_tilde"] == 0.0 and r["psi"] == pytest.approx(math.log(2.0))


def test_single_point_surface_equals_query():
    pol = GaussianPolicy(np.random.default_rng(11).normal(size=(4, 10)))
    (row,) = policy_surface_export(pol, [0.3], [-12.0])
    assert (row["p_tilde"], row["psi"]) == pol.mode(features(0.3, -12.0))


def test_beta_surface_and_undefined_mode():
    w = np.zeros((1, 2, 10))
    w[0, :, 0] = -800.0
    rows = policy_surface_export(BetaPolicy(w, ("b",), ((-5.0, 5.0),)), [0.0], [0.0, 10.0])
    assert all(r["b"] == 0.0 and r["b_undefined"] == 1 for r in rows)
    rows = policy_surface_export(BetaPolicy.zeros(("b", "k"), ((-5, 5), (1.125, 1.875))), [0.5], [0.0])
    assert rows[0]["b"] == pytest.approx(0.0, abs=1e-12) and rows[0]["k_undefined"] == 0
    assert rows[0]["k"] == pytest.approx(1.5)


def test_surface_rejects_time_outside_horizon():
    with pytest.raises(ValueError):
        policy_surface_export(GaussianPolicy.zeros(), [1.5], [0.0])


def test_audit_budget_zero_is_vacuous():
    rep = best_response_audit(quoting_policy(), StrategicRegime.untrained(("b",)), SimConfig(), TrainConfig(),
                              0, 12, n_eval=200)
    assert rep.verdict == "approximate NE (vacuous)"
    assert [s.delta for s in rep.sides] == [0.0, 0.0]


def test_audit_sign_conventions():
    cfg = TrainConfig(pretrain_episodes=10, lr_policy=0.05, max_policy_step=0.05)
    rep = best_response_audit(quoting_policy(var_raw=-1.0), StrategicRegime.untrained(("b",)), SimConfig(), cfg,
                              60, 13, n_eval=300)
    adv, mm = rep.sides
    assert (adv.player, mm.player) == ("adversary", "mm")
    # the adversary's reward is the negated market-maker reward on the same evaluation seed
    assert adv.delta == pytest.approx(-(adv.post.mean_reward - adv.pre.mean_reward), abs=1e-12)
    assert mm.delta == pytest.approx(mm.post.mean_reward - mm.pre.mean_reward, abs=1e-12)
    assert adv.epsilon == pytest.approx(0.02 * abs(adv.pre.mean_reward))
    assert rep.verdict in ("approximate NE", "exploitable")


def test_audit_needs_strategic_adversary():
    with pytest.raises(ValueError):
        best_response_audit(quoting_policy(), FixedRegime(), SimConfig(), TrainConfig(), 1, 0)


def test_reports_csv_and_table(tmp_path):
    m = cross_test({"q": quoting_policy()}, {"fixed": FixedRegime()}, 100, 14)
    path = tmp_path / "r.csv"
    write_reports_csv(path, m.records())
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["mean_wealth"]) == m.cells[("q", "fixed")].mean_wealth
    assert set(REPORT_COLUMNS) <= set(rows[0])
    table = format_table(m.records())
    assert "term. wealth" in table and "±" in table and SPREAD_STD_NOTE in table


def test_surface_csv(tmp_path):
    rows = policy_surface_export(GaussianPolicy.zeros(), [0.0, 1.0], [0.0])
    write_surface_csv(tmp_path / "s.csv", rows)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,h,p_tilde,psi" and len(lines) == 3
