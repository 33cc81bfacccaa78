"""Pure numpy kernels, vectorized across runs.

Arithmetic mirrors ``_core.pyx`` operation for operation (same operand
order, no fused multiply-add), so both backends produce bitwise-identical
output for the same draws.
"""
import math

import numpy as np

SCALAR_LINEAR, TD, STYBLINSKI, CAMEL = 0, 1, 2, 3
SQRT2 = math.sqrt(2.0)


def _kahan(s, c, x):
    y = x - c
    t = s + y
    c[...] = (t - s) - y
    s[...] = t


def run_block(model, explore, params, theta, state, draws, alphas, step0, n0, mse_from,
              theta_star, use_star, fbar_sum, fbar_comp, pr_sum, pr_comp, sq_sum, sq_comp,
              status, rec_theta, rec_state, record):
    R, d = theta.shape
    B = alphas.shape[0]
    th = [theta[:, i].copy() for i in range(d)]
    st = [state[:, i].copy() for i in range(state.shape[1])]
    fb_s = [fbar_sum[:, i].copy() for i in range(d)]
    fb_c = [fbar_comp[:, i].copy() for i in range(d)]
    pr_s = [pr_sum[:, i].copy() for i in range(d)]
    pr_c = [pr_comp[:, i].copy() for i in range(d)]
    sq_s = sq_sum.copy()
    sq_c = sq_comp.copy()
    stat = status.copy()
    p = params

    for j in range(B):
        alpha = alphas[j]
        k = step0 + j + 1
        if model == SCALAR_LINEAR:
            beta, cinn, b = p[0], p[1], p[2]
            t0 = th[0]
            fb = [-t0 - b]
            w = beta * st[0] + cinn * draws[:, j, 0]
            st[0] = w
            f = [((w - 1.0) * t0 - b) + w]
        elif model == TD:
            F, sig, gamma, lg = p[0], p[1], p[2], p[3]
            t0, t1 = th
            fb = [(p[4] * t0 + p[5] * t1) + p[8], (p[6] * t0 + p[7] * t1) + p[9]]
            xo = st[1]
            xn = F * xo + sig * draws[:, j, 0]
            z1 = lg * st[2] + xo * xo
            z2 = lg * st[3] + 1.0
            st = [xo, xn, z1, z2]
            p0 = xo * xo
            p1 = xn * xn
            D = (-(t0 * p0 + t1) + p0) + gamma * (t0 * p1 + t1)
            f = [D * z1, D * z2]
        else:
            sig = p[0]
            if model == STYBLINSKI:
                xi = p[1]
                fb = [-(0.5 * (4.0 * t * t * t + xi - 32.0 * t)) / (1.0 + t * t) for t in th]
            else:
                x, y = th
                x2 = x * x
                y2 = y * y
                gx = ((8.0 * x - 8.4 * x2 * x) + 2.0 * x2 * x2 * x) + y
                gy = (x - 8.0 * y) + 16.0 * y2 * y
                fb = [-gx / (1.0 + x2 * x2), -gy / (1.0 + y2)]
            if explore == 0:
                st = [sig * draws[:, j, 0], sig * draws[:, j, 1]]
                e = st
            else:
                st = [st[2], st[3], sig * draws[:, j, 0], sig * draws[:, j, 1]]
                e = [(st[2] - st[0]) / SQRT2, (st[3] - st[1]) / SQRT2]
            f = [fb[i] + e[i] for i in range(d)]

        th = [th[i] + alpha * f[i] for i in range(d)]
        for i in range(d):
            _kahan(fb_s[i], fb_c[i], fb[i])
        if k > n0:
            for i in range(d):
                _kahan(pr_s[i], pr_c[i], th[i])
        if use_star and k > mse_from:
            diff = th[0] - theta_star[0]
            e2 = diff * diff
            for i in range(1, d):
                diff = th[i] - theta_star[i]
                e2 = e2 + diff * diff
            _kahan(sq_s, sq_c, e2)
        ss = th[0] * th[0]
        for i in range(1, d):
            ss = ss + th[i] * th[i]
        bad = ~(ss <= 1e24) & (stat < 0)
        if bad.any():
            stat[bad] = k
        if record:
            for i in range(d):
                rec_theta[:, j, i] = th[i]
            for i in range(len(st)):
                rec_state[:, j, i] = st[i]

    for i in range(d):
        theta[:, i] = th[i]
        fbar_sum[:, i] = fb_s[i]
        fbar_comp[:, i] = fb_c[i]
        pr_sum[:, i] = pr_s[i]
        pr_comp[:, i] = pr_c[i]
    for i in range(state.shape[1]):
        state[:, i] = st[i]
    sq_sum[:] = sq_s
    sq_comp[:] = sq_c
    status[:] = stat


def sensitivity_scalar_linear(st, draws, alphas, beta, cinn, b, mant, expo):
    """Co-evolve ``(theta, w)`` and the scalar sensitivity ``S``.

    ``st`` holds ``(theta, w, mantissa, exponent)`` and is updated in place;
    ``S = mantissa * 2**exponent`` is renormalized exactly after every step.
    """
    theta, w, s, E = float(st[0]), float(st[1]), float(st[2]), int(st[3])
    for j in range(alphas.shape[0]):
        alpha = float(alphas[j])
        w = beta * w + cinn * float(draws[j])
        a = w - 1.0
        f = ((w - 1.0) * theta - b) + w
        s = s + alpha * (a * s)
        theta = theta + alpha * f
        m, e = math.frexp(s)
        s = m
        E += e
        mant[j] = s
        expo[j] = E
    st[0], st[1], st[2], st[3] = theta, w, s, E
