# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled episode kernel.

Statement-for-statement twin of ``_pycore.py``; see that module for the
contract. Random numbers come from the numpy bit generator's C API so the
draws are the ones the Python ``Generator`` methods would produce.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, expm1, log, log1p, sqrt, isfinite
from libc.stdlib cimport malloc, free
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal, random_beta, random_uniform
from scipy.special.cython_special cimport psi as digamma

cdef int NF = 10
cdef double PSI_FLOOR = 1e-4
cdef double BETA_NUDGE = 1e-12

cdef int OK = 0
cdef int DIVERGED = 1
cdef int NONFINITE_TD = 2
cdef int NONFINITE_ACTION = 3

cdef int REGIME_RANDOM = 1
cdef int REGIME_STRATEGIC = 2


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _uniform01(bitgen_t *bg) nogil:
    return bg.next_double(bg.state)


cdef void _features(double t, double hn, double *out) nogil:
    cdef double t2 = t * t
    cdef double h2 = hn * hn
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


cdef void _rbf(double t, double hn, double[::1] centers, double wt, double wh, double *out, int m) nogil:
    cdef int i
    cdef double d1, d2
    for i in range(m):
        d1 = (t - centers[2 * i]) / wt
        d2 = (hn - centers[2 * i + 1]) / wh
        out[i] = exp(-0.5 * d1 * d1 - 0.5 * d2 * d2)


cdef inline double _dot(double *w, int off, double *v, int n) nogil:
    cdef double s = 0.0
    cdef int i
    for i in range(n):
        s += w[off + i] * v[i]
    return s


cdef void _mm_act(double *theta, double *phi, double var_floor, bint greedy, bitgen_t *bg,
                  double *score, double *act) nogil:
    cdef double z0 = _dot(theta, 0, phi, NF)
    cdef double z1 = _dot(theta, NF, phi, NF)
    cdef double z2 = _dot(theta, 2 * NF, phi, NF)
    cdef double z3 = _dot(theta, 3 * NF, phi, NF)
    cdef double m_p = z0
    cdef double m_s = _softplus(z1)
    cdef double sp_p, sp_s, v_p, v_s, a_p, a_s, e_p, e_s, g0, g1, g2, g3
    cdef int i
    if greedy:
        act[0] = m_p
        act[1] = m_s
        return
    sp_p = _softplus(z2)
    sp_s = _softplus(z3)
    # same selection rule as Python's max(): keep the first unless the second is larger
    v_p = var_floor if var_floor > sp_p else sp_p
    v_s = var_floor if var_floor > sp_s else sp_s
    a_p = m_p + sqrt(v_p) * random_standard_normal(bg)
    a_s = m_s + sqrt(v_s) * random_standard_normal(bg)
    e_p = a_p - m_p
    e_s = a_s - m_s
    g0 = e_p / v_p
    g1 = e_s / v_s * _sigmoid(z1)
    if sp_p >= var_floor:
        g2 = (e_p * e_p / (2.0 * v_p * v_p) - 0.5 / v_p) * _sigmoid(z2)
    else:
        g2 = 0.0
    if sp_s >= var_floor:
        g3 = (e_s * e_s / (2.0 * v_s * v_s) - 0.5 / v_s) * _sigmoid(z3)
    else:
        g3 = 0.0
    for i in range(NF):
        score[i] = g0 * phi[i]
        score[NF + i] = g1 * phi[i]
        score[2 * NF + i] = g2 * phi[i]
        score[3 * NF + i] = g3 * phi[i]
    act[0] = a_p
    act[1] = a_s


cdef void _adv_act(double *atheta, int n_ctrl, double *phi, double *lo, double *hi, bitgen_t *bg,
                   double *score, double *values) nogil:
    cdef int c, i, off
    cdef double za, zb, alpha, beta, x, common, ga, gb
    for c in range(n_ctrl):
        off = 2 * NF * c
        za = _dot(atheta, off, phi, NF)
        zb = _dot(atheta, off + NF, phi, NF)
        alpha = _softplus(za) + 1.0
        beta = _softplus(zb) + 1.0
        x = random_beta(bg, alpha, beta)
        if BETA_NUDGE > x:
            x = BETA_NUDGE
        if 1.0 - BETA_NUDGE < x:
            x = 1.0 - BETA_NUDGE
        common = digamma(alpha + beta)
        ga = (log(x) - digamma(alpha) + common) * _sigmoid(za)
        gb = (log1p(-x) - digamma(beta) + common) * _sigmoid(zb)
        for i in range(NF):
            score[off + i] = ga * phi[i]
            score[off + NF + i] = gb * phi[i]
        values[c] = lo[c] + (hi[c] - lo[c]) * x


cdef void _natural_step(double *theta, double *w_a, int n, double lr, double max_step, double decay) nogil:
    cdef double nrm = sqrt(_dot(w_a, 0, w_a, n))
    cdef double coef = lr
    cdef int i
    if lr * nrm > max_step:
        coef = max_step / nrm
    for i in range(n):
        theta[i] += coef * w_a[i]
        w_a[i] *= decay


cdef inline bint _norm_exceeds(double *w, int n, double ceiling) nogil:
    return not (sqrt(_dot(w, 0, w, n)) <= ceiling)


def run_batch(ws, rng, long n_episodes, double[::1] wealth, double[::1] inventory,
              double[::1] spread, double[::1] total_reward):
    """Compiled twin of :func:`advmm._pycore.run_batch`."""
    cdef double[::1] theta_v = ws.theta
    cdef double[::1] atheta_v = ws.atheta
    cdef double[::1] wv_v = ws.wv
    cdef double[::1] wa_v = ws.wa
    cdef double[::1] awv_v = ws.awv
    cdef double[::1] awa_v = ws.awa
    cdef double[::1] centers = ws.centers
    cdef double[::1] fixed = ws.fixed_params
    cdef double[::1] bounds = ws.bounds
    cdef long[::1] ctrl_v = ws.ctrl
    cdef long[::1] step_v = ws.step_counter

    cdef double *theta = &theta_v[0]
    cdef double *wv = &wv_v[0]
    cdef double *wa = &wa_v[0]
    cdef double *atheta = NULL
    cdef double *awv = &awv_v[0]
    cdef double *awa = NULL

    cdef int n_ctrl = ctrl_v.shape[0]
    cdef int n_rbf = wv_v.shape[0]
    cdef int n_mm = theta_v.shape[0]
    cdef int n_adv = atheta_v.shape[0]
    cdef int regime = ws.regime
    cdef bint strategic = regime == REGIME_STRATEGIC
    cdef bint learn_mm = bool(ws.learn_mm)
    cdef bint learn_adv = bool(ws.learn_adv) and strategic
    cdef bint learning = learn_mm or learn_adv
    cdef bint policy_updates = bool(ws.policy_updates) and learning
    cdef bint greedy = bool(ws.greedy)
    cdef bint random_start = bool(ws.random_start)
    cdef double dt = ws.dt
    cdef long n_steps = ws.n_steps
    cdef long h_min = ws.h_min
    cdef long h_max = ws.h_max
    cdef double h_scale = ws.h_scale
    cdef double wt = ws.widths[0]
    cdef double wh = ws.widths[1]
    cdef double vol = ws.sigma * sqrt(dt)
    cdef double lr_c = ws.lr_critic
    cdef double lam = ws.trace_decay
    cdef double eta = ws.eta
    cdef double zeta = ws.zeta
    cdef double var_floor = ws.var_floor
    cdef double lr_p = ws.lr_policy
    cdef double max_step = ws.max_policy_step
    cdef double adv_decay = ws.advantage_decay
    cdef double ceiling = ws.weight_ceiling
    cdef long period = ws.update_period
    cdef long n0_lo = ws.n0_lo, n0_hi = ws.n0_hi, h0_lo = ws.h0_lo, h0_hi = ws.h0_hi
    cdef long n0_fixed = ws.n0, h0_fixed = ws.h0
    cdef double z0 = ws.z0
    cdef long step = step_v[0]

    if n_adv > 0:
        atheta = &atheta_v[0]
        awa = &awa_v[0]

    cdef bitgen_t *bg = <bitgen_t *> PyCapsule_GetPointer(rng.bit_generator.capsule, "BitGenerator")

    cdef double phi[10]
    cdef double act[2]
    cdef double *rb = <double *> malloc(n_rbf * sizeof(double))
    cdef double *ev = <double *> malloc(n_rbf * sizeof(double))
    cdef double *aev = <double *> malloc(n_rbf * sizeof(double))
    cdef double *sc = <double *> malloc(n_mm * sizeof(double))
    cdef double *ea = <double *> malloc(n_mm * sizeof(double))
    cdef double *asc = <double *> malloc((n_adv + 1) * sizeof(double))
    cdef double *aea = <double *> malloc((n_adv + 1) * sizeof(double))
    cdef double *values = <double *> malloc((n_ctrl + 1) * sizeof(double))
    cdef double *ctrl_lo = <double *> malloc((n_ctrl + 1) * sizeof(double))
    cdef double *ctrl_hi = <double *> malloc((n_ctrl + 1) * sizeof(double))
    cdef long *ctrl = <long *> malloc((n_ctrl + 1) * sizeof(long))

    cdef int status = OK
    cdef long done = 0
    cdef long ep, n, h, h2
    cdef int i, c
    cdef double z, x, x2, z2, pi_start, b, a_bid, a_ask, k_bid, k_ask
    cdef double spread_sum, r_sum, t, hn, psi, db, da, p_bid, p_ask, u_bid, u_ask
    cdef double d_pi, r, q, aq, td, atd
    cdef long taken
    cdef bint bid_fill, ask_fill, terminal

    try:
        for c in range(n_ctrl):
            ctrl[c] = ctrl_v[c]
            ctrl_lo[c] = bounds[2 * ctrl[c]]
            ctrl_hi[c] = bounds[2 * ctrl[c] + 1]
        for i in range(n_rbf):
            rb[i] = 0.0
        for i in range(n_mm):
            sc[i] = 0.0
        for i in range(n_adv):
            asc[i] = 0.0
        with rng.bit_generator.lock, nogil:
            for ep in range(n_episodes):
                if random_start:
                    n = n0_lo + <long> (_uniform01(bg) * <double> (n0_hi - n0_lo + 1))
                    h = h0_lo + <long> (_uniform01(bg) * <double> (h0_hi - h0_lo + 1))
                else:
                    n = n0_fixed
                    h = h0_fixed
                z = z0
                x = -h * z
                pi_start = x + h * z
                b = fixed[0]
                a_bid = fixed[1]
                a_ask = fixed[2]
                k_bid = fixed[3]
                k_ask = fixed[4]
                if regime == REGIME_RANDOM:
                    b = random_uniform(bg, bounds[0], bounds[1] - bounds[0])
                    a_bid = random_uniform(bg, bounds[2], bounds[3] - bounds[2])
                    k_bid = random_uniform(bg, bounds[4], bounds[5] - bounds[4])
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
                    _rbf(t, hn, centers, wt, wh, rb, n_rbf)
                if strategic:
                    _adv_act(atheta, n_ctrl, phi, ctrl_lo, ctrl_hi, bg, asc, values)
                    for c in range(n_ctrl):
                        if ctrl[c] == 0:
                            b = values[c]
                        elif ctrl[c] == 1:
                            a_bid = values[c]
                            a_ask = values[c]
                        else:
                            k_bid = values[c]
                            k_ask = values[c]
                _mm_act(theta, phi, var_floor, greedy, bg, sc, act)

                while True:
                    psi = PSI_FLOOR if PSI_FLOOR > act[1] else act[1]
                    db = 0.5 * psi - act[0]
                    if 0.0 > db:
                        db = 0.0
                    da = 0.5 * psi + act[0]
                    if 0.0 > da:
                        da = 0.0
                    if not (isfinite(db) and isfinite(da)):
                        status = NONFINITE_ACTION
                        break
                    p_bid = -expm1(-a_bid * exp(-k_bid * db) * dt)
                    p_ask = -expm1(-a_ask * exp(-k_ask * da) * dt)
                    u_bid = _uniform01(bg)
                    u_ask = _uniform01(bg)
                    bid_fill = h < h_max and u_bid < p_bid
                    ask_fill = h > h_min and u_ask < p_ask
                    h2 = h + <long> bid_fill - <long> ask_fill
                    z2 = z + b * dt + vol * random_standard_normal(bg)
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
                            _rbf(t, hn, centers, wt, wh, rb, n_rbf)
                        if strategic:
                            _adv_act(atheta, n_ctrl, phi, ctrl_lo, ctrl_hi, bg, asc, values)
                            for c in range(n_ctrl):
                                if ctrl[c] == 0:
                                    b = values[c]
                                elif ctrl[c] == 1:
                                    a_bid = values[c]
                                    a_ask = values[c]
                                else:
                                    k_bid = values[c]
                                    k_ask = values[c]
                        _mm_act(theta, phi, var_floor, greedy, bg, sc, act)
                        td = 0.0
                        atd = 0.0
                        if learn_mm:
                            td = r + (_dot(wv, 0, rb, n_rbf) + _dot(wa, 0, sc, n_mm)) - q
                        if learn_adv:
                            atd = -r + (_dot(awv, 0, rb, n_rbf) + _dot(awa, 0, asc, n_adv)) - aq

                    if learn_mm:
                        if not isfinite(td):
                            status = NONFINITE_TD
                            break
                        for i in range(n_rbf):
                            wv[i] += lr_c * td * ev[i]
                        for i in range(n_mm):
                            wa[i] += lr_c * td * ea[i]
                    if learn_adv:
                        if not isfinite(atd):
                            status = NONFINITE_TD
                            break
                        for i in range(n_rbf):
                            awv[i] += lr_c * atd * aev[i]
                        for i in range(n_adv):
                            awa[i] += lr_c * atd * aea[i]
                    if policy_updates:
                        step += 1
                        if step % period == 0:
                            if learn_mm:
                                _natural_step(theta, wa, n_mm, lr_p, max_step, adv_decay)
                            if learn_adv:
                                _natural_step(atheta, awa, n_adv, lr_p, max_step, adv_decay)
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
                    if (_norm_exceeds(theta, n_mm, ceiling) or _norm_exceeds(wv, n_rbf, ceiling)
                            or _norm_exceeds(wa, n_mm, ceiling) or _norm_exceeds(atheta, n_adv, ceiling)
                            or _norm_exceeds(awv, n_rbf, ceiling) or _norm_exceeds(awa, n_adv, ceiling)):
                        status = DIVERGED
                        break
    finally:
        free(rb)
        free(ev)
        free(aev)
        free(sc)
        free(ea)
        free(asc)
        free(aea)
        free(values)
        free(ctrl_lo)
        free(ctrl_hi)
        free(ctrl)
    step_v[0] = step
    return status, done
