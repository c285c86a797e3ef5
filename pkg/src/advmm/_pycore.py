"""Pure-Python episode kernel, used when the compiled core is unavailable.

This module and ``_core.pyx`` are written statement for statement alike:
they draw from the generator in the same order and evaluate every
floating-point expression in the same order, so the two backends agree
bit for bit on the same workspace and seed. Keep them in step.
"""

from __future__ import annotations

import math

from scipy.special import digamma

NF = 10
PSI_FLOOR = 1e-4
BETA_NUDGE = 1e-12

OK = 0
DIVERGED = 1
NONFINITE_TD = 2
NONFINITE_ACTION = 3

REGIME_FIXED = 0
REGIME_RANDOM = 1
REGIME_STRATEGIC = 2


def _softplus(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _features(t, hn, out):
    t2 = t * t
    h2 = hn * hn
    out[0] = 1.0
    out[1] = t
    out[2] = hn
    out[3] = t2
    out[4] = t * hn
    out[5] = h2
    out[6] = t2 * t
    out[7] = t2 * hn
    out[8] = t * h2
    out[9] = h2 * hn


def _rbf(t, hn, centers, wt, wh, out):
    for i in range(len(out)):
        d1 = (t - centers[2 * i]) / wt
        d2 = (hn - centers[2 * i + 1]) / wh
        out[i] = math.exp(-0.5 * d1 * d1 - 0.5 * d2 * d2)


def _dot(w, off, v, n):
    s = 0.0
    for i in range(n):
        s += w[off + i] * v[i]
    return s


def _mm_act(theta, phi, var_floor, greedy, rng, score, act):
    z0 = _dot(theta, 0, phi, NF)
    z1 = _dot(theta, NF, phi, NF)
    z2 = _dot(theta, 2 * NF, phi, NF)
    z3 = _dot(theta, 3 * NF, phi, NF)
    m_p = z0
    m_s = _softplus(z1)
    if greedy:
        act[0] = m_p
        act[1] = m_s
        return
    sp_p = _softplus(z2)
    sp_s = _softplus(z3)
    v_p = max(sp_p, var_floor)
    v_s = max(sp_s, var_floor)
    a_p = m_p + math.sqrt(v_p) * rng.standard_normal()
    a_s = m_s + math.sqrt(v_s) * rng.standard_normal()
    e_p = a_p - m_p
    e_s = a_s - m_s
    g0 = e_p / v_p
    g1 = e_s / v_s * _sigmoid(z1)
    g2 = (e_p * e_p / (2.0 * v_p * v_p) - 0.5 / v_p) * _sigmoid(z2) if sp_p >= var_floor else 0.0
    g3 = (e_s * e_s / (2.0 * v_s * v_s) - 0.5 / v_s) * _sigmoid(z3) if sp_s >= var_floor else 0.0
    for i in range(NF):
        score[i] = g0 * phi[i]
        score[NF + i] = g1 * phi[i]
        score[2 * NF + i] = g2 * phi[i]
        score[3 * NF + i] = g3 * phi[i]
    act[0] = a_p
    act[1] = a_s


def _adv_act(atheta, n_ctrl, phi, bounds_lo, bounds_hi, rng, score, values):
    for c in range(n_ctrl):
        off = 2 * NF * c
        za = _dot(atheta, off, phi, NF)
        zb = _dot(atheta, off + NF, phi, NF)
        alpha = _softplus(za) + 1.0
        beta = _softplus(zb) + 1.0
        x = rng.beta(alpha, beta)
        x = min(max(x, BETA_NUDGE), 1.0 - BETA_NUDGE)
        common = float(digamma(alpha + beta))
        ga = (math.log(x) - float(digamma(alpha)) + common) * _sigmoid(za)
        gb = (math.log1p(-x) - float(digamma(beta)) + common) * _sigmoid(zb)
        for i in range(NF):
            score[off + i] = ga * phi[i]
            score[off + NF + i] = gb * phi[i]
        values[c] = bounds_lo[c] + (bounds_hi[c] - bounds_lo[c]) * x


def _natural_step(theta, w_a, lr, max_step, decay):
    nrm = math.sqrt(_dot(w_a, 0, w_a, len(w_a)))
    coef = lr
    if lr * nrm > max_step:
        coef = max_step / nrm
    for i in range(len(theta)):
        theta[i] += coef * w_a[i]
        w_a[i] *= decay


def _norm_exceeds(w, ceiling):
    s = _dot(w, 0, w, len(w))
    return not (math.sqrt(s) <= ceiling)


def run_batch(ws, rng, n_episodes, wealth, inventory, spread, total_reward):
    """Roll ``n_episodes`` episodes on workspace ``ws``, learning as flagged.

    Returns ``(status, episodes_completed)``. Weight arrays in ``ws`` are
    updated in place.
    """
    theta = ws.theta.tolist()
    atheta = ws.atheta.tolist()
    wv = ws.wv.tolist()
    wa = ws.wa.tolist()
    awv = ws.awv.tolist()
    awa = ws.awa.tolist()
    centers = ws.centers.tolist()
    fixed = ws.fixed_params.tolist()
    bounds = ws.bounds.tolist()
    ctrl = ws.ctrl.tolist()
    step = int(ws.step_counter[0])

    n_ctrl = len(ctrl)
    n_rbf = len(wv)
    n_mm = len(theta)
    n_adv = len(atheta)
    ctrl_lo = [bounds[2 * c] for c in ctrl]
    ctrl_hi = [bounds[2 * c + 1] for c in ctrl]
    strategic = ws.regime == REGIME_STRATEGIC
    learn_mm = bool(ws.learn_mm)
    learn_adv = bool(ws.learn_adv) and strategic
    learning = learn_mm or learn_adv
    policy_updates = bool(ws.policy_updates) and learning
    greedy = bool(ws.greedy)
    dt = ws.dt
    n_steps = ws.n_steps
    h_min = ws.h_min
    h_max = ws.h_max
    h_scale = ws.h_scale
    wt = ws.widths[0]
    wh = ws.widths[1]
    vol = ws.sigma * math.sqrt(dt)
    lr_c = ws.lr_critic
    lam = ws.trace_decay
    eta = ws.eta
    zeta = ws.zeta

    phi = [0.0] * NF
    rb = [0.0] * n_rbf
    sc = [0.0] * n_mm
    asc = [0.0] * n_adv
    act = [0.0, 0.0]
    values = [0.0] * n_ctrl
    ev = [0.0] * n_rbf
    ea = [0.0] * n_mm
    aev = [0.0] * n_rbf
    aea = [0.0] * n_adv

    status = OK
    done = 0
    for ep in range(n_episodes):
        if ws.random_start:
            n = ws.n0_lo + int(rng.random() * (ws.n0_hi - ws.n0_lo + 1))
            h = ws.h0_lo + int(rng.random() * (ws.h0_hi - ws.h0_lo + 1))
        else:
            n = ws.n0
            h = ws.h0
        z = ws.z0
        x = -h * z
        pi_start = x + h * z
        b = fixed[0]
        a_bid = fixed[1]
        a_ask = fixed[2]
        k_bid = fixed[3]
        k_ask = fixed[4]
        if ws.regime == REGIME_RANDOM:
            b = rng.uniform(bounds[0], bounds[1])
            a_bid = rng.uniform(bounds[2], bounds[3])
            k_bid = rng.uniform(bounds[4], bounds[5])
            a_ask = a_bid
            k_ask = k_bid
        if learn_mm:
            for i in range(n_rbf):
                ev[i] = 0.0
            for i in range(n_mm):
                ea[i] = 0.0
        if learn_adv:
            for i in range(n_rbf):
                aev[i] = 0.0
            for i in range(n_adv):
                aea[i] = 0.0
        spread_sum = 0.0
        r_sum = 0.0
        taken = 0

        t = n * dt
        hn = h / h_scale
        _features(t, hn, phi)
        if learning:
            _rbf(t, hn, centers, wt, wh, rb)
        if strategic:
            _adv_act(atheta, n_ctrl, phi, ctrl_lo, ctrl_hi, rng, asc, values)
            for c in range(n_ctrl):
                if ctrl[c] == 0:
                    b = values[c]
                elif ctrl[c] == 1:
                    a_bid = values[c]
                    a_ask = values[c]
                else:
                    k_bid = values[c]
                    k_ask = values[c]
        _mm_act(theta, phi, ws.var_floor, greedy, rng, sc, act)

        while True:
            psi = max(act[1], PSI_FLOOR)
            db = max(0.5 * psi - act[0], 0.0)
            da = max(0.5 * psi + act[0], 0.0)
            if not (math.isfinite(db) and math.isfinite(da)):
                status = NONFINITE_ACTION
                break
            p_bid = -math.expm1(-a_bid * math.exp(-k_bid * db) * dt)
            p_ask = -math.expm1(-a_ask * math.exp(-k_ask * da) * dt)
            u_bid = rng.random()
            u_ask = rng.random()
            bid_fill = h < h_max and u_bid < p_bid
            ask_fill = h > h_min and u_ask < p_ask
            h2 = h + int(bid_fill) - int(ask_fill)
            z2 = z + b * dt + vol * rng.standard_normal()
            x2 = x
            if ask_fill:
                x2 += da
            if bid_fill:
                x2 += db
            x2 -= z * (h2 - h)
            d_pi = (x2 + h2 * z2) - (x + h * z)
            n += 1
            terminal = n >= n_steps
            r = d_pi - zeta * h2 * h2
            if terminal:
                r -= eta * h2 * h2
            spread_sum += db + da
            r_sum += r
            taken += 1

            q = 0.0
            aq = 0.0
            if learn_mm:
                q = _dot(wv, 0, rb, n_rbf) + _dot(wa, 0, sc, n_mm)
                for i in range(n_rbf):
                    ev[i] = lam * ev[i] + rb[i]
                for i in range(n_mm):
                    ea[i] = lam * ea[i] + sc[i]
            if learn_adv:
                aq = _dot(awv, 0, rb, n_rbf) + _dot(awa, 0, asc, n_adv)
                for i in range(n_rbf):
                    aev[i] = lam * aev[i] + rb[i]
                for i in range(n_adv):
                    aea[i] = lam * aea[i] + asc[i]
            h = h2
            x = x2
            z = z2

            if terminal:
                td = r - q
                atd = -r - aq
            else:
                t = n * dt
                hn = h / h_scale
                _features(t, hn, phi)
                if learning:
                    _rbf(t, hn, centers, wt, wh, rb)
                if strategic:
                    _adv_act(atheta, n_ctrl, phi, ctrl_lo, ctrl_hi, rng, asc, values)
                    for c in range(n_ctrl):
                        if ctrl[c] == 0:
                            b = values[c]
                        elif ctrl[c] == 1:
                            a_bid = values[c]
                            a_ask = values[c]
                        else:
                            k_bid = values[c]
                            k_ask = values[c]
                _mm_act(theta, phi, ws.var_floor, greedy, rng, sc, act)
                td = 0.0
                atd = 0.0
                if learn_mm:
                    td = r + (_dot(wv, 0, rb, n_rbf) + _dot(wa, 0, sc, n_mm)) - q
                if learn_adv:
                    atd = -r + (_dot(awv, 0, rb, n_rbf) + _dot(awa, 0, asc, n_adv)) - aq

            if learn_mm:
                if not math.isfinite(td):
                    status = NONFINITE_TD
                    break
                for i in range(n_rbf):
                    wv[i] += lr_c * td * ev[i]
                for i in range(n_mm):
                    wa[i] += lr_c * td * ea[i]
            if learn_adv:
                if not math.isfinite(atd):
                    status = NONFINITE_TD
                    break
                for i in range(n_rbf):
                    awv[i] += lr_c * atd * aev[i]
                for i in range(n_adv):
                    awa[i] += lr_c * atd * aea[i]
            if policy_updates:
                step += 1
                if step % ws.update_period == 0:
                    if learn_mm:
                        _natural_step(theta, wa, ws.lr_policy, ws.max_policy_step, ws.advantage_decay)
                    if learn_adv:
                        _natural_step(atheta, awa, ws.lr_policy, ws.max_policy_step, ws.advantage_decay)
            if terminal:
                break

        if status != OK:
            break
        wealth[ep] = (x + h * z) - pi_start
        inventory[ep] = h
        spread[ep] = spread_sum / taken
        total_reward[ep] = r_sum
        done += 1
        if learning:
            ceiling = ws.weight_ceiling
            if (_norm_exceeds(theta, ceiling) or _norm_exceeds(wv, ceiling) or _norm_exceeds(wa, ceiling)
                    or _norm_exceeds(atheta, ceiling) or _norm_exceeds(awv, ceiling)
                    or _norm_exceeds(awa, ceiling)):
                status = DIVERGED
                break

    ws.theta[:] = theta
    ws.atheta[:] = atheta
    ws.wv[:] = wv
    ws.wa[:] = wa
    ws.awv[:] = awv
    ws.awa[:] = awa
    ws.step_counter[0] = step
    return status, done
