"""Slow reference trainer assembled from the per-transition building blocks.

It consumes random draws in the order the episode kernels document, so the
same seed produces the same trajectories up to floating-point summation
order.
"""

import numpy as np

from advmm.adversary import RegimeSource, StrategicRegime
from advmm.learner import RBFCritic, Transition, natural_policy_update, sarsa_lambda_step
from advmm.market import (
    FillResult,
    MarketState,
    SimConfig,
    apply_step,
    fill_probability,
    quote_from_action,
    reward,
    step_price,
)
from advmm.policy import PSI_FLOOR, BetaPolicy, GaussianPolicy


def reference_run(sim: SimConfig, regime, mm: GaussianPolicy, mm_critic: RBFCritic, adv_critic: RBFCritic | None,
                  n_episodes: int, rng: np.random.Generator, *, lr_critic: float, lr_policy: float,
                  trace_decay: float, update_period: int, max_policy_step: float = np.inf,
                  advantage_decay: float = 1.0, eta: float = 0.0, zeta: float = 0.0,
                  learn_mm: bool = True, learn_adv: bool = True, policy_updates: bool = True,
                  adv_reward_sign: float = -1.0):
    strategic = isinstance(regime, StrategicRegime)
    learn_adv = learn_adv and strategic
    adv = regime.policy if strategic else None
    theta = mm.weights.copy()
    atheta = adv.weights.copy() if strategic else None
    step = 0
    wealth = []
    src = RegimeSource(regime)
    for _ in range(n_episodes):
        params = src.on_episode_start(rng)
        s = MarketState(0.0, 0, sim.z0, 0, 0.0)
        mm_critic.reset_traces()
        if learn_adv:
            adv_critic.reset_traces()
        pol = GaussianPolicy(theta, mm.basis, mm.var_floor)

        def decide(state):
            phi = pol.basis(state.t, state.h)
            p = params
            a_score = None
            if strategic:
                apol = BetaPolicy(atheta, adv.names, adv.bounds, adv.basis)
                values = apol.sample(phi, rng)
                p = regime.params_from(values)
                a_score = apol.score(phi, values)
            a = pol.sample(phi, rng)
            rb = mm_critic.rbf(state.t, state.h / sim.h_max)
            return p, a, pol.score(phi, a), a_score, rb

        p, a, score, a_score, rb = decide(s)
        while True:
            q = quote_from_action(a[0], max(a[1], PSI_FLOOR))
            pb = fill_probability(q.delta_bid, p.a_bid, p.k_bid, sim.dt)
            pa = fill_probability(q.delta_ask, p.a_ask, p.k_ask, sim.dt)
            u_bid, u_ask = rng.random(), rng.random()
            fills = FillResult(s.h < sim.h_max and u_bid < pb, s.h > sim.h_min and u_ask < pa)
            z2 = step_price(s.z, p, sim.dt, rng.standard_normal())
            s2 = apply_step(s, q, fills, z2, sim)
            terminal = s2.n >= sim.n_steps
            r = reward(s2.wealth - s.wealth, s2.h, terminal, eta, zeta)
            if terminal:
                tr = Transition(rb, score, r)
                atr = Transition(rb, a_score, adv_reward_sign * r) if learn_adv else None
            else:
                p2, a2, score2, a_score2, rb2 = decide(s2)
                tr = Transition(rb, score, r, rb2, score2)
                atr = Transition(rb, a_score, adv_reward_sign * r, rb2, a_score2) if learn_adv else None
            if learn_mm:
                sarsa_lambda_step(mm_critic, tr, lr_critic, trace_decay)
            if learn_adv:
                sarsa_lambda_step(adv_critic, atr, lr_critic, trace_decay)
            if policy_updates and (learn_mm or learn_adv):
                step += 1
                if step % update_period == 0:
                    if learn_mm:
                        theta = natural_policy_update(theta, mm_critic, lr_policy, max_policy_step, advantage_decay)
                        pol = GaussianPolicy(theta, mm.basis, mm.var_floor)
                    if learn_adv:
                        atheta = natural_policy_update(atheta, adv_critic, lr_policy, max_policy_step,
                                                       advantage_decay)
            s = s2
            if terminal:
                break
            p, a, score, a_score, rb = p2, a2, score2, a_score2, rb2
        wealth.append(s.wealth)
    return theta, atheta, np.array(wealth)
