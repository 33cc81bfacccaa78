# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled SA kernels.

Each kernel mirrors ``_fallback.py`` operation for operation; build with
``-ffp-contract=off`` so the compiler does not fuse multiply-adds.
"""
from libc.math cimport sqrt, frexp

cdef enum:
    SCALAR_LINEAR = 0
    TD = 1
    STYBLINSKI = 2
    CAMEL = 3


cdef inline void _kahan(double* s, double* c, double x) noexcept nogil:
    cdef double y = x - c[0]
    cdef double t = s[0] + y
    c[0] = (t - s[0]) - y
    s[0] = t


def run_block(int model, int explore, const double[::1] params,
              double[:, ::1] theta, double[:, ::1] state,
              const double[:, :, ::1] draws, const double[::1] alphas,
              long long step0, long long n0, long long mse_from,
              const double[::1] theta_star, bint use_star,
              double[:, ::1] fbar_sum, double[:, ::1] fbar_comp,
              double[:, ::1] pr_sum, double[:, ::1] pr_comp,
              double[::1] sq_sum, double[::1] sq_comp,
              long long[::1] status,
              double[:, :, ::1] rec_theta, double[:, :, ::1] rec_state, bint record):
    cdef Py_ssize_t R = theta.shape[0]
    cdef Py_ssize_t d = theta.shape[1]
    cdef Py_ssize_t ns = state.shape[1]
    cdef Py_ssize_t B = alphas.shape[0]
    cdef Py_ssize_t r, j, i
    cdef long long k
    cdef double th[2]
    cdef double st[4]
    cdef double fb[2]
    cdef double f[2]
    cdef double e[2]
    cdef double alpha, w, xo, xn, p0, p1, D, t, x, y, x2, y2, gx, gy, diff, e2, ss
    cdef double p_0 = params[0] if params.shape[0] > 0 else 0.0
    cdef double p_1 = params[1] if params.shape[0] > 1 else 0.0
    cdef double p_2 = params[2] if params.shape[0] > 2 else 0.0
    cdef double p_3 = params[3] if params.shape[0] > 3 else 0.0
    cdef double a00 = params[4] if params.shape[0] > 4 else 0.0
    cdef double a01 = params[5] if params.shape[0] > 5 else 0.0
    cdef double a10 = params[6] if params.shape[0] > 6 else 0.0
    cdef double a11 = params[7] if params.shape[0] > 7 else 0.0
    cdef double b0 = params[8] if params.shape[0] > 8 else 0.0
    cdef double b1 = params[9] if params.shape[0] > 9 else 0.0
    cdef double SQRT2 = sqrt(2.0)

    with nogil:
        for r in range(R):
            for i in range(d):
                th[i] = theta[r, i]
            for i in range(ns):
                st[i] = state[r, i]
            for j in range(B):
                alpha = alphas[j]
                k = step0 + j + 1
                if model == SCALAR_LINEAR:
                    # p_0 = beta, p_1 = innovation scale, p_2 = b
                    fb[0] = -th[0] - p_2
                    w = p_0 * st[0] + p_1 * draws[r, j, 0]
                    st[0] = w
                    f[0] = ((w - 1.0) * th[0] - p_2) + w
                elif model == TD:
                    # p_0 = F, p_1 = sigma_w, p_2 = gamma, p_3 = lambda*gamma
                    fb[0] = (a00 * th[0] + a01 * th[1]) + b0
                    fb[1] = (a10 * th[0] + a11 * th[1]) + b1
                    xo = st[1]
                    xn = p_0 * xo + p_1 * draws[r, j, 0]
                    st[2] = p_3 * st[2] + xo * xo
                    st[3] = p_3 * st[3] + 1.0
                    st[0] = xo
                    st[1] = xn
                    p0 = xo * xo
                    p1 = xn * xn
                    D = (-(th[0] * p0 + th[1]) + p0) + p_2 * (th[0] * p1 + th[1])
                    f[0] = D * st[2]
                    f[1] = D * st[3]
                else:
                    # p_0 = sigma_w, p_1 = xi
                    if model == STYBLINSKI:
                        for i in range(2):
                            t = th[i]
                            fb[i] = -(0.5 * (4.0 * t * t * t + p_1 - 32.0 * t)) / (1.0 + t * t)
                    else:
                        x = th[0]
                        y = th[1]
                        x2 = x * x
                        y2 = y * y
                        gx = ((8.0 * x - 8.4 * x2 * x) + 2.0 * x2 * x2 * x) + y
                        gy = (x - 8.0 * y) + 16.0 * y2 * y
                        fb[0] = -gx / (1.0 + x2 * x2)
                        fb[1] = -gy / (1.0 + y2)
                    if explore == 0:
                        st[0] = p_0 * draws[r, j, 0]
                        st[1] = p_0 * draws[r, j, 1]
                        e[0] = st[0]
                        e[1] = st[1]
                    else:
                        st[0] = st[2]
                        st[1] = st[3]
                        st[2] = p_0 * draws[r, j, 0]
                        st[3] = p_0 * draws[r, j, 1]
                        e[0] = (st[2] - st[0]) / SQRT2
                        e[1] = (st[3] - st[1]) / SQRT2
                    for i in range(2):
                        f[i] = fb[i] + e[i]

                for i in range(d):
                    th[i] = th[i] + alpha * f[i]
                for i in range(d):
                    _kahan(&fbar_sum[r, i], &fbar_comp[r, i], fb[i])
                if k > n0:
                    for i in range(d):
                        _kahan(&pr_sum[r, i], &pr_comp[r, i], th[i])
                if use_star and k > mse_from:
                    diff = th[0] - theta_star[0]
                    e2 = diff * diff
                    for i in range(1, d):
                        diff = th[i] - theta_star[i]
                        e2 = e2 + diff * diff
                    _kahan(&sq_sum[r], &sq_comp[r], e2)
                ss = th[0] * th[0]
                for i in range(1, d):
                    ss = ss + th[i] * th[i]
                if not (ss <= 1e24) and status[r] < 0:
                    status[r] = k
                if record:
                    for i in range(d):
                        rec_theta[r, j, i] = th[i]
                    for i in range(ns):
                        rec_state[r, j, i] = st[i]
            for i in range(d):
                theta[r, i] = th[i]
            for i in range(ns):
                state[r, i] = st[i]


def sensitivity_scalar_linear(double[::1] st, const double[::1] draws, const double[::1] alphas,
                              double beta, double cinn, double b,
                              double[::1] mant, long long[::1] expo):
    cdef double theta = st[0]
    cdef double w = st[1]
    cdef double s = st[2]
    cdef long long E = <long long>st[3]
    cdef double alpha, a, f
    cdef int ex
    cdef Py_ssize_t j
    with nogil:
        for j in range(alphas.shape[0]):
            alpha = alphas[j]
            w = beta * w + cinn * draws[j]
            a = w - 1.0
            f = ((w - 1.0) * theta - b) + w
            s = s + alpha * (a * s)
            theta = theta + alpha * f
            s = frexp(s, &ex)
            E += ex
            mant[j] = s
            expo[j] = E
    st[0] = theta
    st[1] = w
    st[2] = s
    st[3] = <double>E
