# cython: language_level=3
"""Compiled kernels: reduced-space MPC objective, AL/projected Newton solve, prey grid scan.

Operation-for-operation port of ``_pykernels``; keep the two in sync.
"""
import numpy as np

from libc.math cimport sqrt, fabs, pow, INFINITY
from libc.stdlib cimport malloc, free

DEF N_CON = 6

cdef double TIE_TOL = 1e-9
cdef double FSCALE_TARGET = 100.0


cdef struct Prob:
    int N
    int M
    double dt
    double x0[4]
    const double* pos_w
    double tau[2]
    const double* u_w
    const double* u_ref
    const double* centers
    const double* r2
    const double* wts
    const double* eps
    const double* qexp
    double umax
    double vmax
    double rworld
    int norm_mode
    double fscale
    # stage buffers, length N + 1 (hp, hv: 3 (N + 1); hu: 3 N)
    double* px
    double* py
    double* vx
    double* vy
    double* gpx
    double* gpy
    double* gvx
    double* gvy
    double* hp
    double* hv
    double* hu


cdef inline void predict(Prob* P, const double* u) noexcept nogil:
    cdef int k
    cdef double dt = P.dt
    cdef double h = 0.5 * dt * dt
    P.px[0] = P.x0[0]
    P.py[0] = P.x0[1]
    P.vx[0] = P.x0[2]
    P.vy[0] = P.x0[3]
    for k in range(P.N):
        P.px[k + 1] = P.px[k] + dt * P.vx[k] + h * u[2 * k]
        P.py[k + 1] = P.py[k] + dt * P.vy[k] + h * u[2 * k + 1]
        P.vx[k + 1] = P.vx[k] + dt * u[2 * k]
        P.vy[k + 1] = P.vy[k] + dt * u[2 * k + 1]


cdef double cost_terms(Prob* P, const double* u, double* gu, bint hess) noexcept nogil:
    """True objective; zeroes and fills the stage gradients (and Hessian blocks if ``hess``)."""
    cdef int k, j, c
    cdef int N = P.N
    cdef double f = 0.0
    cdef double ex, ey, wx, wy, dx, dy, xi, z, q, e, d1, d2
    for k in range(N + 1):
        P.gpx[k] = 0.0
        P.gpy[k] = 0.0
        P.gvx[k] = 0.0
        P.gvy[k] = 0.0
        if hess:
            for c in range(3):
                P.hp[3 * k + c] = 0.0
                P.hv[3 * k + c] = 0.0
        ex = P.px[k] - P.tau[0]
        ey = P.py[k] - P.tau[1]
        wx = P.pos_w[2 * k]
        wy = P.pos_w[2 * k + 1]
        f += wx * ex * ex + wy * ey * ey
        P.gpx[k] += 2.0 * wx * ex
        P.gpy[k] += 2.0 * wy * ey
        if hess:
            P.hp[3 * k] += 2.0 * wx
            P.hp[3 * k + 2] += 2.0 * wy
        for j in range(P.M):
            dx = P.px[k] - P.centers[2 * j]
            dy = P.py[k] - P.centers[2 * j + 1]
            xi = P.r2[j] - (dx * dx + dy * dy)
            if xi > 0.0:
                e = P.eps[j]
                q = P.qexp[j]
                z = xi / e
                f += P.wts[j] * pow(z, q)
                d1 = P.wts[j] * q * pow(z, q - 1.0) / e
                P.gpx[k] -= 2.0 * dx * d1
                P.gpy[k] -= 2.0 * dy * d1
                if hess:
                    d2 = 0.0
                    if q != 1.0:
                        d2 = P.wts[j] * q * (q - 1.0) * pow(z, q - 2.0) / (e * e)
                    P.hp[3 * k] += 4.0 * d2 * dx * dx - 2.0 * d1
                    P.hp[3 * k + 1] += 4.0 * d2 * dx * dy
                    P.hp[3 * k + 2] += 4.0 * d2 * dy * dy - 2.0 * d1
    for k in range(N):
        if hess:
            for c in range(3):
                P.hu[3 * k + c] = 0.0
        for c in range(2):
            e = u[2 * k + c] - P.u_ref[2 * k + c]
            f += P.u_w[2 * k + c] * e * e
            gu[2 * k + c] = 2.0 * P.u_w[2 * k + c] * e
            if hess:
                P.hu[3 * k + 2 * c] += 2.0 * P.u_w[2 * k + c]
    return f


cdef void backprop(Prob* P, double* gu) noexcept nogil:
    cdef int k
    cdef int N = P.N
    cdef double dt = P.dt
    cdef double h = 0.5 * dt * dt
    cdef double lpx = P.gpx[N]
    cdef double lpy = P.gpy[N]
    cdef double lvx = P.gvx[N]
    cdef double lvy = P.gvy[N]
    for k in range(N - 1, -1, -1):
        gu[2 * k] += h * lpx + dt * lvx
        gu[2 * k + 1] += h * lpy + dt * lvy
        lvx = P.gvx[k] + lvx + dt * lpx
        lvy = P.gvy[k] + lvy + dt * lpy
        lpx = P.gpx[k] + lpx
        lpy = P.gpy[k] + lpy


cdef void assemble(Prob* P, double* H) noexcept nogil:
    """Control-space Hessian from the stage blocks; ``H`` is row-major ``2N x 2N``."""
    cdef int N = P.N
    cdef int n = 2 * N
    cdef int k, j, l
    cdef double dt2 = P.dt * P.dt
    cdef double aj, cp
    cdef double* Pb
    cdef double* V
    for j in range(n * n):
        H[j] = 0.0
    for k in range(1, N + 1):
        Pb = P.hp + 3 * k
        V = P.hv + 3 * k
        for j in range(k):
            aj = dt2 * (k - j - 0.5)
            for l in range(j, k):
                cp = aj * dt2 * (k - l - 0.5)
                H[(2 * j) * n + 2 * l] += cp * Pb[0] + dt2 * V[0]
                H[(2 * j) * n + 2 * l + 1] += cp * Pb[1] + dt2 * V[1]
                H[(2 * j + 1) * n + 2 * l] += cp * Pb[1] + dt2 * V[1]
                H[(2 * j + 1) * n + 2 * l + 1] += cp * Pb[2] + dt2 * V[2]
    for k in range(N):
        H[(2 * k) * n + 2 * k] += P.hu[3 * k]
        H[(2 * k) * n + 2 * k + 1] += P.hu[3 * k + 1]
        H[(2 * k + 1) * n + 2 * k] += P.hu[3 * k + 1]
        H[(2 * k + 1) * n + 2 * k + 1] += P.hu[3 * k + 2]
    for j in range(n):
        for l in range(j + 1, n):
            H[l * n + j] = H[j * n + l]


cdef void constraints(Prob* P, const double* u, double* g) noexcept nogil:
    """Hard constraints g <= 0 at stages 1..N; unused slots are -inf. Requires predict()."""
    cdef int k, b, c
    cdef double vmax = P.vmax
    cdef double R = P.rworld
    cdef double ax, ay
    for k in range(1, P.N + 1):
        b = N_CON * (k - 1)
        for c in range(N_CON):
            g[b + c] = -INFINITY
        if P.norm_mode:
            g[b] = (P.vx[k] * P.vx[k] + P.vy[k] * P.vy[k] - vmax * vmax) / (2.0 * vmax)
            ax = u[2 * k - 2]
            ay = u[2 * k - 1]
            g[b + 5] = (ax * ax + ay * ay - P.umax * P.umax) / (2.0 * P.umax)
        else:
            g[b] = P.vx[k] - vmax
            g[b + 1] = -P.vx[k] - vmax
            g[b + 2] = P.vy[k] - vmax
            g[b + 3] = -P.vy[k] - vmax
        g[b + 4] = (P.px[k] * P.px[k] + P.py[k] * P.py[k] - R * R) / (2.0 * R)


cdef double al_eval(Prob* P, const double* u, const double* lam, double rho, double* gu,
                    double* g, double* f_out, bint hess, double* H) noexcept nogil:
    """Scaled augmented Lagrangian; fills ``gu`` and, if ``hess``, the Hessian ``H``."""
    cdef int N = P.N
    cdef int k, c, b, i
    cdef double f, L, fs, gi, li, m, s, ax, ay
    cdef double R = P.rworld
    cdef double vmax = P.vmax
    cdef double umax = P.umax
    predict(P, u)
    f = cost_terms(P, u, gu, hess)
    f_out[0] = f
    fs = P.fscale
    L = fs * f
    for i in range(2 * N):
        gu[i] = fs * gu[i]
    for k in range(N + 1):
        P.gpx[k] = fs * P.gpx[k]
        P.gpy[k] = fs * P.gpy[k]
    if hess:
        for i in range(3 * (N + 1)):
            P.hp[i] = fs * P.hp[i]
        for i in range(3 * N):
            P.hu[i] = fs * P.hu[i]
    constraints(P, u, g)
    for k in range(1, N + 1):
        b = N_CON * (k - 1)
        for c in range(N_CON):
            gi = g[b + c]
            if gi == -INFINITY:
                continue
            li = lam[b + c]
            m = li + rho * gi
            if m <= 0.0:
                L -= li * li / (2.0 * rho)
                continue
            L += (m * m - li * li) / (2.0 * rho)
            if c == 4:
                P.gpx[k] += m * P.px[k] / R
                P.gpy[k] += m * P.py[k] / R
                if hess:
                    s = rho / (R * R)
                    P.hp[3 * k] += s * P.px[k] * P.px[k] + m / R
                    P.hp[3 * k + 1] += s * P.px[k] * P.py[k]
                    P.hp[3 * k + 2] += s * P.py[k] * P.py[k] + m / R
            elif c == 5:
                ax = u[2 * k - 2]
                ay = u[2 * k - 1]
                gu[2 * k - 2] += m * ax / umax
                gu[2 * k - 1] += m * ay / umax
                if hess:
                    s = rho / (umax * umax)
                    P.hu[3 * (k - 1)] += s * ax * ax + m / umax
                    P.hu[3 * (k - 1) + 1] += s * ax * ay
                    P.hu[3 * (k - 1) + 2] += s * ay * ay + m / umax
            elif P.norm_mode:
                P.gvx[k] += m * P.vx[k] / vmax
                P.gvy[k] += m * P.vy[k] / vmax
                if hess:
                    s = rho / (vmax * vmax)
                    P.hv[3 * k] += s * P.vx[k] * P.vx[k] + m / vmax
                    P.hv[3 * k + 1] += s * P.vx[k] * P.vy[k]
                    P.hv[3 * k + 2] += s * P.vy[k] * P.vy[k] + m / vmax
            elif c < 2:
                P.gvx[k] += m if c == 0 else -m
                if hess:
                    P.hv[3 * k] += rho
            else:
                P.gvy[k] += m if c == 2 else -m
                if hess:
                    P.hv[3 * k + 2] += rho
    backprop(P, gu)
    if hess:
        assemble(P, H)
    return L


cdef void project(Prob* P, double* u) noexcept nogil:
    cdef int i
    cdef double umax = P.umax
    if P.norm_mode:
        return
    for i in range(2 * P.N):
        if u[i] > umax:
            u[i] = umax
        elif u[i] < -umax:
            u[i] = -umax


cdef double pg_norm(Prob* P, const double* u, const double* g, double* tmp) noexcept nogil:
    cdef int i
    cdef int n = 2 * P.N
    cdef double pgn = 0.0
    for i in range(n):
        tmp[i] = u[i] - g[i]
    project(P, tmp)
    for i in range(n):
        if fabs(tmp[i] - u[i]) > pgn:
            pgn = fabs(tmp[i] - u[i])
    return pgn


cdef bint cholesky_solve(const double* H, int n, const double* b, const int* idx, int m,
                         double* C, double* y) noexcept nogil:
    """Solve ``(H[idx, idx] + tau I) y = b[idx]`` with the smallest shift tau that factorises."""
    cdef int r, c, t, attempt, i
    cdef double diag = 1.0
    cdef double tau = 0.0
    cdef double s
    cdef bint ok
    for i in range(m):
        if fabs(H[idx[i] * n + idx[i]]) > diag:
            diag = fabs(H[idx[i] * n + idx[i]])
    for attempt in range(40):
        ok = True
        for r in range(m):
            for c in range(r + 1):
                s = H[idx[r] * n + idx[c]]
                if r == c:
                    s += tau
                for t in range(c):
                    s -= C[r * m + t] * C[c * m + t]
                if r == c:
                    if s <= 1e-14 * diag:
                        ok = False
                        break
                    C[r * m + r] = sqrt(s)
                else:
                    C[r * m + c] = s / C[c * m + c]
            if not ok:
                break
        if ok:
            for r in range(m):
                s = b[idx[r]]
                for t in range(r):
                    s -= C[r * m + t] * y[t]
                y[r] = s / C[r * m + r]
            for r in range(m - 1, -1, -1):
                s = y[r]
                for t in range(r + 1, m):
                    s -= C[t * m + r] * y[t]
                y[r] = s / C[r * m + r]
            return True
        tau = 1e-8 * diag if tau == 0.0 else 10.0 * tau
    return False


cdef int inner(Prob* P, double* u, const double* lam, double rho, int max_inner, double tol,
               double* f_out, double* pgn_out, double* work, int* idx, double* gcon) noexcept nogil:
    """Projected Newton on the augmented Lagrangian; ``u`` is updated in place."""
    cdef int n = 2 * P.N
    cdef int i, r, it, ls, m
    cdef double L, Ln, f, fn, pgn, eb, dec, alpha, slope
    cdef bint accepted, solved
    cdef double umax = P.umax
    cdef double* g = work
    cdef double* un = work + n
    cdef double* d = work + 2 * n
    cdef double* mg = work + 3 * n
    cdef double* tmp = work + 4 * n
    cdef double* y = work + 5 * n
    cdef double* H = work + 6 * n
    cdef double* C = H + n * n

    L = al_eval(P, u, lam, rho, g, gcon, &f, True, H)
    pgn = pg_norm(P, u, g, tmp)
    it = 0
    while it < max_inner and pgn > tol:
        it += 1
        eb = pgn if pgn < 1e-6 else 1e-6
        m = 0
        for i in range(n):
            if P.norm_mode or not ((u[i] <= -umax + eb and g[i] > 0.0) or (u[i] >= umax - eb and g[i] < 0.0)):
                idx[m] = i
                m += 1
        for i in range(n):
            d[i] = 0.0
            mg[i] = -g[i]
        solved = cholesky_solve(H, n, mg, idx, m, C, y)
        slope = 0.0
        if solved:
            for r in range(m):
                d[idx[r]] = y[r]
                slope += g[idx[r]] * y[r]
        if not solved or not slope < 0.0:
            for i in range(n):
                d[i] = 0.0
            for r in range(m):
                d[idx[r]] = -g[idx[r]]
        alpha = 1.0
        accepted = False
        for ls in range(60):
            for i in range(n):
                un[i] = u[i] + alpha * d[i]
            project(P, un)
            Ln = al_eval(P, un, lam, rho, tmp, gcon, &fn, False, H)
            dec = 0.0
            for i in range(n):
                dec += g[i] * (un[i] - u[i])
            if dec < 0.0 and Ln <= L + 1e-4 * dec:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        for i in range(n):
            u[i] = un[i]
        L = al_eval(P, u, lam, rho, g, gcon, &f, True, H)
        pgn = pg_norm(P, u, g, tmp)
    f_out[0] = f
    pgn_out[0] = pgn
    return it


cdef void fill_prob(Prob* P, const double[::1] x0, double dt, const double[:, ::1] pos_w,
                    const double[::1] tau, const double[:, ::1] u_w, const double[:, ::1] u_ref,
                    const double[:, ::1] centers, const double[::1] r2, const double[::1] wts,
                    const double[::1] eps, const double[::1] qexp, int N):
    cdef int i
    P.N = N
    P.M = r2.shape[0]
    P.dt = dt
    for i in range(4):
        P.x0[i] = x0[i]
    P.tau[0] = tau[0]
    P.tau[1] = tau[1]
    P.pos_w = &pos_w[0, 0]
    P.u_w = &u_w[0, 0]
    P.u_ref = &u_ref[0, 0]
    P.centers = &centers[0, 0] if P.M > 0 else NULL
    P.r2 = &r2[0] if P.M > 0 else NULL
    P.wts = &wts[0] if P.M > 0 else NULL
    P.eps = &eps[0] if P.M > 0 else NULL
    P.qexp = &qexp[0] if P.M > 0 else NULL
    P.fscale = 1.0
    P.norm_mode = 0
    P.umax = INFINITY
    P.vmax = INFINITY
    P.rworld = INFINITY


cdef double* alloc_state(Prob* P, int N):
    cdef int s = N + 1
    cdef double* buf = <double*> malloc((8 * s + 6 * s + 3 * N) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    P.px = buf
    P.py = buf + s
    P.vx = buf + 2 * s
    P.vy = buf + 3 * s
    P.gpx = buf + 4 * s
    P.gpy = buf + 5 * s
    P.gvx = buf + 6 * s
    P.gvy = buf + 7 * s
    P.hp = buf + 8 * s
    P.hv = buf + 11 * s
    P.hu = buf + 14 * s
    return buf


def objective(const double[::1] u, const double[::1] x0, double dt, const double[:, ::1] pos_w,
              const double[::1] tau, const double[:, ::1] u_w, const double[:, ::1] u_ref,
              const double[:, ::1] centers, const double[::1] r2, const double[::1] wts,
              const double[::1] eps, const double[::1] qexp):
    """Objective value and gradient with respect to the stacked controls."""
    cdef Prob P
    cdef int N = u.shape[0] // 2
    fill_prob(&P, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp, N)
    cdef double* buf = alloc_state(&P, N)
    grad = np.zeros(2 * N)
    cdef double[::1] gv = grad
    cdef double f
    try:
        predict(&P, &u[0])
        f = cost_terms(&P, &u[0], &gv[0], False)
        backprop(&P, &gv[0])
    finally:
        free(buf)
    return f, grad


def objective_hessian(const double[::1] u, const double[::1] x0, double dt, const double[:, ::1] pos_w,
                      const double[::1] tau, const double[:, ::1] u_w, const double[:, ::1] u_ref,
                      const double[:, ::1] centers, const double[::1] r2, const double[::1] wts,
                      const double[::1] eps, const double[::1] qexp):
    """Exact Hessian of the objective with respect to the stacked controls."""
    cdef Prob P
    cdef int N = u.shape[0] // 2
    fill_prob(&P, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp, N)
    cdef double* buf = alloc_state(&P, N)
    cdef double* gtmp = <double*> malloc(2 * N * sizeof(double))
    hess = np.zeros((2 * N, 2 * N))
    cdef double[:, ::1] hv = hess
    try:
        predict(&P, &u[0])
        cost_terms(&P, &u[0], gtmp, True)
        assemble(&P, &hv[0, 0])
    finally:
        free(gtmp)
        free(buf)
    return hess


def constraint_values(const double[::1] u, const double[::1] x0, double dt, double umax, double vmax,
                      double rworld, int norm_mode):
    cdef Prob P
    cdef int N = u.shape[0] // 2
    P.N = N
    P.dt = dt
    for i in range(4):
        P.x0[i] = x0[i]
    P.umax = umax
    P.vmax = vmax
    P.rworld = rworld
    P.norm_mode = norm_mode
    cdef double* buf = alloc_state(&P, N)
    out = np.empty(N_CON * N)
    cdef double[::1] ov = out
    try:
        predict(&P, &u[0])
        constraints(&P, &u[0], &ov[0])
    finally:
        free(buf)
    return out


def solve_al(const double[::1] u_init, const double[::1] x0, double dt, const double[:, ::1] pos_w,
             const double[::1] tau, const double[:, ::1] u_w, const double[:, ::1] u_ref,
             const double[:, ::1] centers, const double[::1] r2, const double[::1] wts,
             const double[::1] eps, const double[::1] qexp, double umax, double vmax,
             double rworld, int norm_mode, double rho0, int max_outer, int max_inner,
             double tol_kkt, double tol_feas):
    """Augmented-Lagrangian projected-Newton solve of the reduced problem.

    Returns ``(u, f, kkt, viol, iterations, outer_iterations, converged)``; see
    ``_pykernels.solve_al``.
    """
    cdef Prob P
    cdef int N = u_init.shape[0] // 2
    cdef int n = 2 * N
    cdef int i, outer, it, total
    cdef double f, pgn, viol, prev_viol, rho, omega, gi, gmax, tol_in
    cdef bint converged
    fill_prob(&P, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp, N)
    P.umax = umax
    P.vmax = vmax
    P.rworld = rworld
    P.norm_mode = norm_mode
    cdef double* buf = alloc_state(&P, N)
    cdef double* work = <double*> malloc((6 * n + 2 * n * n + 2 * N_CON * N + n) * sizeof(double))
    cdef int* idx = <int*> malloc(n * sizeof(int))
    if work == NULL or idx == NULL:
        free(buf)
        free(work)
        free(idx)
        raise MemoryError()
    cdef double* lam = work + 6 * n + 2 * n * n
    cdef double* gcon = lam + N_CON * N
    cdef double* g0 = gcon + N_CON * N
    out = np.array(u_init, dtype=float, copy=True)
    cdef double[::1] uv = out
    cdef double* u = &uv[0]
    try:
        project(&P, u)
        predict(&P, u)
        cost_terms(&P, u, g0, False)
        backprop(&P, g0)
        gmax = 0.0
        for i in range(n):
            if fabs(g0[i]) > gmax:
                gmax = fabs(g0[i])
        P.fscale = FSCALE_TARGET / (gmax if gmax > FSCALE_TARGET else FSCALE_TARGET)
        for i in range(N_CON * N):
            lam[i] = 0.0
        rho = rho0
        omega = 1e-2
        prev_viol = INFINITY
        total = 0
        f = 0.0
        pgn = INFINITY
        viol = INFINITY
        converged = False
        outer = 0
        with nogil:
            while outer < max_outer:
                outer += 1
                tol_in = omega if omega > 0.1 * tol_kkt else 0.1 * tol_kkt
                it = inner(&P, u, lam, rho, max_inner, tol_in, &f, &pgn, work, idx, gcon)
                omega *= 0.01
                total += it
                predict(&P, u)
                constraints(&P, u, gcon)
                viol = 0.0
                for i in range(N_CON * N):
                    gi = gcon[i]
                    if gi != -INFINITY:
                        if gi > viol:
                            viol = gi
                        lam[i] = lam[i] + rho * gi
                        if lam[i] < 0.0:
                            lam[i] = 0.0
                if viol <= tol_feas and pgn <= tol_kkt:
                    converged = True
                    break
                if viol > tol_feas and viol > 0.25 * prev_viol:
                    rho = rho * 10.0 if rho * 10.0 < 1e10 else 1e10
                prev_viol = viol
    finally:
        free(work)
        free(idx)
        free(buf)
    return out, f, pgn, viol, total, outer, converged


def prey_scan(double prey_x, double prey_y, const double[:, ::1] pred_xy, const double[::1] radii,
              const double[::1] cosv, const double[::1] sinv, double rworld):
    """Exhaustive polar-grid scan; see ``_pykernels.prey_scan``."""
    cdef int ri, ai, j
    cdef int na = cosv.shape[0]
    cdef int npred = pred_xy.shape[0]
    cdef double best = -INFINITY
    cdef int best_i = -1
    cdef double bx = 0.0, by = 0.0
    cdef double r, cx, cy, rr, dmin, d, dx, dy
    for ri in range(radii.shape[0]):
        r = radii[ri]
        for ai in range(na):
            cx = prey_x + r * cosv[ai]
            cy = prey_y + r * sinv[ai]
            rr = sqrt(cx * cx + cy * cy)
            if rr > rworld:
                cx *= rworld / rr
                cy *= rworld / rr
            dmin = INFINITY
            for j in range(npred):
                dx = cx - pred_xy[j, 0]
                dy = cy - pred_xy[j, 1]
                d = sqrt(dx * dx + dy * dy)
                if d < dmin:
                    dmin = d
            if dmin > best + TIE_TOL:
                best = dmin
                best_i = ri * na + ai
                bx = cx
                by = cy
    return best_i, bx, by, best
