"""Pure-Python reference kernels.

Mirrors ``_ckernels.pyx`` operation for operation; used when the compiled
extension is unavailable or when ``ROIMPC_PURE_PYTHON=1`` is set.

Problem data is passed as flat arrays (see ``solver.pack_problem``):

    x0        (4,)      initial state
    pos_w     (N+1, 2)  diagonal weights on (p_k - tau), k = 0..N
    tau       (2,)      tracked position
    u_w       (N, 2)    diagonal weights on (u_k - u_ref_k)
    u_ref     (N, 2)
    centers   (M, 2)    keep-out centres, squared radii r2, weights W,
    r2, wts, eps, qexp  normalisers eps and exponents q (all (M,))

Hard constraints ``g <= 0`` use ``N_CON`` slots per stage k = 1..N:
``vx - vmax, -vx - vmax, vy - vmax, -vy - vmax`` in component mode, or the
speed norm in slot 0 in norm mode; slot 4 is the arena disc and slot 5, in
norm mode only, the control norm of stage k - 1. Unused slots hold ``-inf``.
"""
from __future__ import annotations

import math

import numpy as np

TIE_TOL = 1e-9
FSCALE_TARGET = 100.0  # objective is scaled so its initial gradient has inf-norm <= this
N_CON = 6
NINF = -math.inf


def _predict(u, N, dt, x0):
    px = [0.0] * (N + 1)
    py = [0.0] * (N + 1)
    vx = [0.0] * (N + 1)
    vy = [0.0] * (N + 1)
    px[0], py[0], vx[0], vy[0] = float(x0[0]), float(x0[1]), float(x0[2]), float(x0[3])
    h = 0.5 * dt * dt
    for k in range(N):
        ax = u[2 * k]
        ay = u[2 * k + 1]
        px[k + 1] = px[k] + dt * vx[k] + h * ax
        py[k + 1] = py[k] + dt * vy[k] + h * ay
        vx[k + 1] = vx[k] + dt * ax
        vy[k + 1] = vy[k] + dt * ay
    return px, py, vx, vy


class _Problem:
    """Reduced problem data; stage Hessian blocks are stored as ``[xx, xy, yy]``."""

    def __init__(self, u_len, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp,
                 umax=math.inf, vmax=math.inf, rworld=math.inf, norm_mode=0):
        self.N = u_len // 2
        self.M = len(r2)
        self.dt = float(dt)
        self.x0 = [float(a) for a in x0]
        self.pos_w = np.asarray(pos_w, dtype=float).reshape(-1, 2).tolist()
        self.tau = [float(a) for a in tau]
        self.u_w = np.asarray(u_w, dtype=float).reshape(-1, 2).tolist()
        self.u_ref = np.asarray(u_ref, dtype=float).reshape(-1, 2).tolist()
        self.centers = np.asarray(centers, dtype=float).reshape(-1, 2).tolist()
        self.r2 = [float(a) for a in r2]
        self.wts = [float(a) for a in wts]
        self.eps = [float(a) for a in eps]
        self.qexp = [float(a) for a in qexp]
        self.umax = float(umax)
        self.vmax = float(vmax)
        self.rworld = float(rworld)
        self.norm_mode = int(norm_mode)
        self.fscale = 1.0

    def cost(self, u, px, py, hess):
        """True objective and its stage gradients (and Hessian blocks if ``hess``)."""
        N = self.N
        gpx = [0.0] * (N + 1)
        gpy = [0.0] * (N + 1)
        hp = [[0.0, 0.0, 0.0] for _ in range(N + 1)] if hess else None
        f = 0.0
        for k in range(N + 1):
            ex = px[k] - self.tau[0]
            ey = py[k] - self.tau[1]
            wx, wy = self.pos_w[k]
            f += wx * ex * ex + wy * ey * ey
            gpx[k] += 2.0 * wx * ex
            gpy[k] += 2.0 * wy * ey
            if hess:
                hp[k][0] += 2.0 * wx
                hp[k][2] += 2.0 * wy
            for j in range(self.M):
                dx = px[k] - self.centers[j][0]
                dy = py[k] - self.centers[j][1]
                xi = self.r2[j] - (dx * dx + dy * dy)
                if xi > 0.0:
                    e = self.eps[j]
                    q = self.qexp[j]
                    z = xi / e
                    f += self.wts[j] * z ** q
                    d1 = self.wts[j] * q * z ** (q - 1.0) / e
                    gpx[k] -= 2.0 * dx * d1
                    gpy[k] -= 2.0 * dy * d1
                    if hess:
                        d2 = 0.0
                        if q != 1.0:
                            d2 = self.wts[j] * q * (q - 1.0) * z ** (q - 2.0) / (e * e)
                        hp[k][0] += 4.0 * d2 * dx * dx - 2.0 * d1
                        hp[k][1] += 4.0 * d2 * dx * dy
                        hp[k][2] += 4.0 * d2 * dy * dy - 2.0 * d1
        gu = [0.0] * (2 * N)
        hu = [[0.0, 0.0, 0.0] for _ in range(N)] if hess else None
        for k in range(N):
            for c in range(2):
                e = u[2 * k + c] - self.u_ref[k][c]
                f += self.u_w[k][c] * e * e
                gu[2 * k + c] = 2.0 * self.u_w[k][c] * e
                if hess:
                    hu[k][2 * c] += 2.0 * self.u_w[k][c]
        return f, gpx, gpy, gu, hp, hu

    def constraints(self, u, px, py, vx, vy):
        N = self.N
        g = [NINF] * (N_CON * N)
        vmax = self.vmax
        R = self.rworld
        for k in range(1, N + 1):
            b = N_CON * (k - 1)
            if self.norm_mode:
                g[b] = (vx[k] * vx[k] + vy[k] * vy[k] - vmax * vmax) / (2.0 * vmax)
                ax = u[2 * k - 2]
                ay = u[2 * k - 1]
                g[b + 5] = (ax * ax + ay * ay - self.umax * self.umax) / (2.0 * self.umax)
            else:
                g[b] = vx[k] - vmax
                g[b + 1] = -vx[k] - vmax
                g[b + 2] = vy[k] - vmax
                g[b + 3] = -vy[k] - vmax
            g[b + 4] = (px[k] * px[k] + py[k] * py[k] - R * R) / (2.0 * R)
        return g

    def al(self, u, lam, rho, hess):
        """Scaled augmented Lagrangian: ``(L, grad, f, H)``; ``H`` is None unless ``hess``."""
        N = self.N
        dt = self.dt
        px, py, vx, vy = _predict(u, N, dt, self.x0)
        f, gpx, gpy, gu, hp, hu = self.cost(u, px, py, hess)
        fs = self.fscale
        L = fs * f
        gu = [fs * a for a in gu]
        gpx = [fs * a for a in gpx]
        gpy = [fs * a for a in gpy]
        gvx = [0.0] * (N + 1)
        gvy = [0.0] * (N + 1)
        hv = None
        if hess:
            hp = [[fs * a for a in blk] for blk in hp]
            hu = [[fs * a for a in blk] for blk in hu]
            hv = [[0.0, 0.0, 0.0] for _ in range(N + 1)]
        g = self.constraints(u, px, py, vx, vy)
        vmax = self.vmax
        R = self.rworld
        umax = self.umax
        for k in range(1, N + 1):
            b = N_CON * (k - 1)
            for c in range(N_CON):
                gi = g[b + c]
                if gi == NINF:
                    continue
                li = lam[b + c]
                m = li + rho * gi
                if m <= 0.0:
                    L -= li * li / (2.0 * rho)
                    continue
                L += (m * m - li * li) / (2.0 * rho)
                if c == 4:
                    gpx[k] += m * px[k] / R
                    gpy[k] += m * py[k] / R
                    if hess:
                        s = rho / (R * R)
                        hp[k][0] += s * px[k] * px[k] + m / R
                        hp[k][1] += s * px[k] * py[k]
                        hp[k][2] += s * py[k] * py[k] + m / R
                elif c == 5:
                    ax = u[2 * k - 2]
                    ay = u[2 * k - 1]
                    gu[2 * k - 2] += m * ax / umax
                    gu[2 * k - 1] += m * ay / umax
                    if hess:
                        s = rho / (umax * umax)
                        hu[k - 1][0] += s * ax * ax + m / umax
                        hu[k - 1][1] += s * ax * ay
                        hu[k - 1][2] += s * ay * ay + m / umax
                elif self.norm_mode:
                    gvx[k] += m * vx[k] / vmax
                    gvy[k] += m * vy[k] / vmax
                    if hess:
                        s = rho / (vmax * vmax)
                        hv[k][0] += s * vx[k] * vx[k] + m / vmax
                        hv[k][1] += s * vx[k] * vy[k]
                        hv[k][2] += s * vy[k] * vy[k] + m / vmax
                elif c < 2:
                    gvx[k] += m if c == 0 else -m
                    if hess:
                        hv[k][0] += rho
                else:
                    gvy[k] += m if c == 2 else -m
                    if hess:
                        hv[k][2] += rho
        _backprop(N, dt, gpx, gpy, gvx, gvy, gu)
        H = _assemble(N, dt, hp, hv, hu) if hess else None
        return L, gu, f, H


def _backprop(N, dt, gpx, gpy, gvx, gvy, gu):
    h = 0.5 * dt * dt
    lpx = gpx[N]
    lpy = gpy[N]
    lvx = gvx[N]
    lvy = gvy[N]
    for k in range(N - 1, -1, -1):
        gu[2 * k] += h * lpx + dt * lvx
        gu[2 * k + 1] += h * lpy + dt * lvy
        lvx = gvx[k] + lvx + dt * lpx
        lvy = gvy[k] + lvy + dt * lpy
        lpx = gpx[k] + lpx
        lpy = gpy[k] + lpy
    return gu


def _assemble(N, dt, hp, hv, hu):
    """Control-space Hessian ``sum_k G_k^T H_k G_k`` with ``dp_k/du_j = dt^2 (k - j - 1/2)``."""
    n = 2 * N
    H = [[0.0] * n for _ in range(n)]
    dt2 = dt * dt
    for k in range(1, N + 1):
        P = hp[k]
        V = hv[k]
        for j in range(k):
            aj = dt2 * (k - j - 0.5)
            for l in range(j, k):
                cp = aj * dt2 * (k - l - 0.5)
                H[2 * j][2 * l] += cp * P[0] + dt2 * V[0]
                H[2 * j][2 * l + 1] += cp * P[1] + dt2 * V[1]
                H[2 * j + 1][2 * l] += cp * P[1] + dt2 * V[1]
                H[2 * j + 1][2 * l + 1] += cp * P[2] + dt2 * V[2]
    for k in range(N):
        H[2 * k][2 * k] += hu[k][0]
        H[2 * k][2 * k + 1] += hu[k][1]
        H[2 * k + 1][2 * k] += hu[k][1]
        H[2 * k + 1][2 * k + 1] += hu[k][2]
    for j in range(n):
        for l in range(j + 1, n):
            H[l][j] = H[j][l]
    return H


def _unconstrained(u, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp, hess):
    u = [float(a) for a in u]
    P = _Problem(len(u), x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp)
    N = P.N
    px, py, _, _ = _predict(u, N, P.dt, P.x0)
    f, gpx, gpy, gu, hp, hu = P.cost(u, px, py, hess)
    zero = [0.0] * (N + 1)
    _backprop(N, P.dt, gpx, gpy, zero, zero, gu)
    H = None
    if hess:
        H = _assemble(N, P.dt, hp, [[0.0, 0.0, 0.0] for _ in range(N + 1)], hu)
    return f, gu, H


def objective(u, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp):
    """Objective value and gradient with respect to the stacked controls."""
    f, gu, _ = _unconstrained(u, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp, False)
    return f, np.array(gu)


def objective_hessian(u, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp):
    """Exact Hessian of the objective with respect to the stacked controls."""
    return np.array(_unconstrained(u, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp, True)[2])


def constraint_values(u, x0, dt, umax, vmax, rworld, norm_mode):
    u = [float(a) for a in u]
    N = len(u) // 2
    z = np.zeros((N + 1, 2))
    P = _Problem(len(u), x0, dt, z, [0.0, 0.0], z[:N], z[:N], z[:0], [], [], [], [],
                 umax, vmax, rworld, norm_mode)
    px, py, vx, vy = _predict(u, N, P.dt, P.x0)
    return np.array(P.constraints(u, px, py, vx, vy))


def _project(P, u):
    if P.norm_mode:
        return list(u)
    umax = P.umax
    return [umax if a > umax else (-umax if a < -umax else a) for a in u]


def _pg_norm(P, u, g):
    pu = _project(P, [u[i] - g[i] for i in range(len(u))])
    return max(abs(pu[i] - u[i]) for i in range(len(u)))


def _cholesky_solve(H, b, idx):
    """Solve ``(H[idx, idx] + tau I) x = b[idx]`` with the smallest shift tau that factorises."""
    m = len(idx)
    diag = 1.0
    for i in idx:
        if abs(H[i][i]) > diag:
            diag = abs(H[i][i])
    tau = 0.0
    for _ in range(40):
        C = [[0.0] * m for _ in range(m)]
        ok = True
        for r in range(m):
            for c in range(r + 1):
                s = H[idx[r]][idx[c]]
                if r == c:
                    s += tau
                for t in range(c):
                    s -= C[r][t] * C[c][t]
                if r == c:
                    if s <= 1e-14 * diag:
                        ok = False
                        break
                    C[r][r] = math.sqrt(s)
                else:
                    C[r][c] = s / C[c][c]
            if not ok:
                break
        if ok:
            y = [0.0] * m
            for r in range(m):
                s = b[idx[r]]
                for t in range(r):
                    s -= C[r][t] * y[t]
                y[r] = s / C[r][r]
            for r in range(m - 1, -1, -1):
                s = y[r]
                for t in range(r + 1, m):
                    s -= C[t][r] * y[t]
                y[r] = s / C[r][r]
            return y
        tau = 1e-8 * diag if tau == 0.0 else 10.0 * tau
    return None


def _inner(P, u, lam, rho, max_inner, tol):
    """Projected Newton on the augmented Lagrangian over the control box."""
    n = 2 * P.N
    umax = P.umax
    L, g, f, H = P.al(u, lam, rho, True)
    pgn = _pg_norm(P, u, g)
    it = 0
    while it < max_inner and pgn > tol:
        it += 1
        eb = pgn if pgn < 1e-6 else 1e-6
        free = []
        for i in range(n):
            if P.norm_mode or not ((u[i] <= -umax + eb and g[i] > 0.0) or (u[i] >= umax - eb and g[i] < 0.0)):
                free.append(i)
        d = [0.0] * n
        x = _cholesky_solve(H, [-a for a in g], free)
        slope = 0.0
        if x is not None:
            for r in range(len(free)):
                d[free[r]] = x[r]
                slope += g[free[r]] * x[r]
        if x is None or not slope < 0.0:
            d = [0.0] * n
            for i in free:
                d[i] = -g[i]
        alpha = 1.0
        accepted = False
        for _ in range(60):
            un = _project(P, [u[i] + alpha * d[i] for i in range(n)])
            Ln = P.al(un, lam, rho, False)[0]
            dec = 0.0
            for i in range(n):
                dec += g[i] * (un[i] - u[i])
            if dec < 0.0 and Ln <= L + 1e-4 * dec:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        u = un
        L, g, f, H = P.al(u, lam, rho, True)
        pgn = _pg_norm(P, u, g)
    return u, f, pgn, it


def solve_al(
    u_init, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp,
    umax, vmax, rworld, norm_mode, rho0, max_outer, max_inner, tol_kkt, tol_feas,
):
    """Augmented-Lagrangian projected-Newton solve of the reduced problem.

    The objective is scaled so that its gradient at the projected start has
    inf-norm at most ``FSCALE_TARGET``; ``kkt`` is the projected-gradient
    inf-norm of the scaled Lagrangian at the returned point.
    Returns ``(u, f, kkt, viol, iterations, outer_iterations, converged)``.
    """
    P = _Problem(len(u_init), x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp,
                 umax, vmax, rworld, norm_mode)
    N = P.N
    u = _project(P, [float(a) for a in u_init])
    g0 = _unconstrained(u, x0, dt, pos_w, tau, u_w, u_ref, centers, r2, wts, eps, qexp, False)[1]
    P.fscale = FSCALE_TARGET / max(FSCALE_TARGET, max(abs(a) for a in g0))
    lam = [0.0] * (N_CON * N)
    rho = float(rho0)
    omega = 1e-2
    prev_viol = math.inf
    total = 0
    f = 0.0
    pgn = math.inf
    viol = math.inf
    converged = False
    outer = 0
    while outer < max_outer:
        outer += 1
        u, f, pgn, it = _inner(P, u, lam, rho, max_inner, max(omega, 0.1 * tol_kkt))
        omega *= 0.01
        total += it
        px, py, vx, vy = _predict(u, N, P.dt, P.x0)
        g = P.constraints(u, px, py, vx, vy)
        viol = 0.0
        for i in range(len(lam)):
            if g[i] != NINF:
                if g[i] > viol:
                    viol = g[i]
                lam[i] = max(0.0, lam[i] + rho * g[i])
        if viol <= tol_feas and pgn <= tol_kkt:
            converged = True
            break
        if viol > tol_feas and viol > 0.25 * prev_viol:
            rho = min(rho * 10.0, 1e10)
        prev_viol = viol
    return np.array(u), f, pgn, viol, total, outer, converged


def prey_scan(prey_x, prey_y, pred_xy, radii, cosv, sinv, rworld):
    """Exhaustive scan of the polar candidate grid around a prey.

    Returns ``(flat_index, x, y, min_distance)`` of the first candidate (in
    radius-major order) whose minimal predator distance is largest.
    """
    best = -math.inf
    best_i = -1
    bx = by = 0.0
    na = len(cosv)
    npred = len(pred_xy)
    for ri in range(len(radii)):
        r = radii[ri]
        for ai in range(na):
            cx = prey_x + r * cosv[ai]
            cy = prey_y + r * sinv[ai]
            rr = math.sqrt(cx * cx + cy * cy)
            if rr > rworld:
                cx *= rworld / rr
                cy *= rworld / rr
            dmin = math.inf
            for j in range(npred):
                dx = cx - pred_xy[j][0]
                dy = cy - pred_xy[j][1]
                d = math.sqrt(dx * dx + dy * dy)
                if d < dmin:
                    dmin = d
            if dmin > best + TIE_TOL:
                best = dmin
                best_i = ri * na + ai
                bx = cx
                by = cy
    return best_i, bx, by, best
