"""Method of moving asymptotes for bound- and inequality-constrained
nonlinear programs.

One `mma_update` call builds the convex separable approximation around the
current iterate (asymptotes adapted by the standard oscillation heuristic)
and solves it with a primal-dual interior Newton method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ASY_INIT = 0.5
ASY_GROW = 1.2
ASY_SHRINK = 0.7
MOVE_FRACTION = 0.1


class MmaError(RuntimeError):
    """The MMA subproblem is unsolvable as posed."""


@dataclass
class MmaState:
    """Per-run optimizer memory: previous iterates and asymptotes."""

    lower: np.ndarray
    upper: np.ndarray
    move: float = MOVE_FRACTION
    asy_init: float = ASY_INIT
    asy_grow: float = ASY_GROW
    asy_shrink: float = ASY_SHRINK
    c_constraint: float = 1e4
    iteration: int = 0
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    low: np.ndarray = field(init=False)
    upp: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, float)
        self.upper = np.asarray(self.upper, float)
        if np.any(self.upper <= self.lower):
            raise ValueError("upper bounds must exceed lower bounds")
        self.low = self.lower.copy()
        self.upp = self.upper.copy()


def mma_update(state: MmaState, x: np.ndarray, f0: float, df0: np.ndarray,
               g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """One MMA iteration for min f0(x) s.t. g_i(x) <= 0, lower <= x <= upper.

    Parameters are the current iterate, objective value/gradient and
    constraint values/Jacobian (m, n). Returns the subproblem minimizer,
    feasible with respect to bounds and move limits.
    """
    x = np.asarray(x, float)
    df0 = np.asarray(df0, float)
    g = np.atleast_1d(np.asarray(g, float))
    dg = np.atleast_2d(np.asarray(dg, float))
    n = x.size
    m = g.size
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(df0)) and np.isfinite(f0)
            and np.all(np.isfinite(g)) and np.all(np.isfinite(dg))):
        raise MmaError("non-finite values passed to the MMA update")
    if dg.shape != (m, n):
        raise MmaError(f"constraint Jacobian shape {dg.shape} != ({m}, {n})")
    if m and np.any((np.abs(dg).sum(axis=1) == 0.0) & (g > 0.0)):
        raise MmaError("violated constraint with an all-zero gradient is unfixable")

    xmin, xmax = state.lower, state.upper
    xrange = xmax - xmin
    state.iteration += 1

    if state.iteration < 3:
        low = x - state.asy_init * xrange
        upp = x + state.asy_init * xrange
    else:
        osc = (x - state.xold1) * (state.xold1 - state.xold2)
        factor = np.ones(n)
        factor[osc > 0] = state.asy_grow
        factor[osc < 0] = state.asy_shrink
        low = x - factor * (state.xold1 - state.low)
        upp = x + factor * (state.upp - state.xold1)
        # proximity floor far below Svanberg's 0.01 so oscillation damping can
        # contract indefinitely (needed for clean convergence on smooth
        # unconstrained problems)
        low = np.clip(low, x - 10.0 * xrange, x - 1e-5 * xrange)
        upp = np.clip(upp, x + 1e-5 * xrange, x + 10.0 * xrange)
    state.low, state.upp = low, upp
    state.xold2 = state.xold1
    state.xold1 = x.copy()

    # feasible box: inside the asymptotes, the move limit and the bounds
    albefa = 0.1
    alfa = np.maximum.reduce([low + albefa * (x - low), x - state.move * xrange, xmin])
    beta = np.minimum.reduce([upp - albefa * (upp - x), x + state.move * xrange, xmax])

    ux1 = upp - x
    xl1 = x - low
    raa0 = 1e-5
    xmami_inv = 1.0 / np.maximum(xrange, 1e-5)

    p0 = np.maximum(df0, 0.0)
    q0 = np.maximum(-df0, 0.0)
    pq0 = 1e-3 * (p0 + q0) + raa0 * xmami_inv
    p0 = (p0 + pq0) * ux1**2
    q0 = (q0 + pq0) * xl1**2

    P = np.maximum(dg, 0.0)
    Q = np.maximum(-dg, 0.0)
    PQ = 1e-3 * (P + Q) + raa0 * xmami_inv[None, :]
    P = (P + PQ) * ux1[None, :] ** 2
    Q = (Q + PQ) * xl1[None, :] ** 2
    b = P @ (1.0 / ux1) + Q @ (1.0 / xl1) - g

    a0 = 1.0
    a = np.zeros(m)
    c = np.full(m, state.c_constraint)
    d = np.ones(m)
    xnew = _subsolve(m, n, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d)
    return xnew


def _subsolve(m, n, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d):
    """Primal-dual interior Newton solve of the MMA subproblem
    (Svanberg's standard formulation with elastic constraint variables)."""
    epsimin = 1e-7
    x = 0.5 * (alfa + beta)
    y = np.ones(m)
    z = 1.0
    lam = np.ones(m)
    xsi = np.maximum(1.0, 1.0 / (x - alfa))
    eta = np.maximum(1.0, 1.0 / (beta - x))
    mu = np.maximum(1.0, 0.5 * c)
    zet = 1.0
    s = np.ones(m)
    eps = 1.0

    def gradients(x, lam):
        ux1 = upp - x
        xl1 = x - low
        plam = p0 + lam @ P
        qlam = q0 + lam @ Q
        gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
        dpsi = plam / ux1**2 - qlam / xl1**2
        return ux1, xl1, plam, qlam, gvec, dpsi

    while eps > epsimin:
        ux1, xl1, plam, qlam, gvec, dpsi = gradients(x, lam)
        rex = dpsi - xsi + eta
        rey = c + d * y - mu - lam
        rez = a0 - zet - a @ lam
        relam = gvec - a * z - y + s - b
        rexsi = xsi * (x - alfa) - eps
        reeta = eta * (beta - x) - eps
        remu = mu * y - eps
        rezet = zet * z - eps
        res = lam * s - eps
        residu = np.concatenate([rex, rey, [rez], relam, rexsi, reeta, remu, [rezet], res])
        residunorm = np.linalg.norm(residu)
        residumax = np.abs(residu).max()

        ittt = 0
        while residumax > 0.9 * eps and ittt < 200:
            ittt += 1
            ux1, xl1, plam, qlam, gvec, dpsi = gradients(x, lam)
            ux2, xl2 = ux1**2, xl1**2
            GG = P / ux2[None, :] - Q / xl2[None, :]
            delx = dpsi - eps / (x - alfa) + eps / (beta - x)
            dely = c + d * y - lam - eps / y
            delz = a0 - a @ lam - eps / z
            dellam = gvec - a * z - y - b + eps / lam
            diagx = 2.0 * (plam / (ux2 * ux1) + qlam / (xl2 * xl1)) \
                + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglam = s / lam + 1.0 / diagy

            # eliminate x: solve the small (m+1) system in (lam, z)
            blam = dellam + dely / diagy - GG @ (delx / diagx)
            Alam = np.diag(diaglam) + (GG / diagx[None, :]) @ GG.T
            AA = np.zeros((m + 1, m + 1))
            AA[:m, :m] = Alam
            AA[:m, m] = a
            AA[m, :m] = a
            AA[m, m] = -zet / z
            bb = np.concatenate([blam, [delz]])
            try:
                sol = np.linalg.solve(AA, bb)
            except np.linalg.LinAlgError as err:
                raise MmaError(f"singular subproblem system: {err}") from err
            dlam = sol[:m]
            dz = sol[m]
            dx = -(delx + GG.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + eps / (x - alfa) - (xsi * dx) / (x - alfa)
            deta = -eta + eps / (beta - x) + (eta * dx) / (beta - x)
            dmu = -mu + eps / y - (mu * dy) / y
            dzet = -zet + eps / z - zet * dz / z
            ds = -s + eps / lam - (s * dlam) / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stepxx = -1.01 * dxx / xx
            stepalfa = -1.01 * dx / (x - alfa)
            stepbeta = 1.01 * dx / (beta - x)
            stmax = max(stepxx.max(initial=0.0), stepalfa.max(initial=0.0),
                        stepbeta.max(initial=0.0), 1.0)
            steg = 1.0 / stmax

            xold, yold, zold = x.copy(), y.copy(), z
            lamold, xsiold, etaold = lam.copy(), xsi.copy(), eta.copy()
            muold, zetold, sold = mu.copy(), zet, s.copy()

            resinew = 2.0 * residunorm
            itto = 0
            while resinew > residunorm and itto < 50:
                itto += 1
                x = xold + steg * dx
                y = yold + steg * dy
                z = zold + steg * dz
                lam = lamold + steg * dlam
                xsi = xsiold + steg * dxsi
                eta = etaold + steg * deta
                mu = muold + steg * dmu
                zet = zetold + steg * dzet
                s = sold + steg * ds
                ux1, xl1, plam, qlam, gvec, dpsi = gradients(x, lam)
                rex = dpsi - xsi + eta
                rey = c + d * y - mu - lam
                rez = a0 - zet - a @ lam
                relam = gvec - a * z - y + s - b
                rexsi = xsi * (x - alfa) - eps
                reeta = eta * (beta - x) - eps
                remu = mu * y - eps
                rezet = zet * z - eps
                res = lam * s - eps
                residu = np.concatenate([rex, rey, [rez], relam, rexsi, reeta,
                                         remu, [rezet], res])
                resinew = np.linalg.norm(residu)
                steg *= 0.5
            residunorm = resinew
            residumax = np.abs(residu).max()
        eps *= 0.1
    return x


def minimize_mma(objective, x0, lower, upper, constraints=None,
                 max_iters: int = 100, tol: float = 1e-5, move: float = MOVE_FRACTION):
    """Small driver used by tests and simple problems.

    objective(x) -> (f, df); constraints(x) -> (g, dg) with g_i <= 0 feasible.
    Stops when the iterate change max-norm falls below tol.
    """
    x = np.asarray(x0, float).copy()
    state = MmaState(np.asarray(lower, float), np.asarray(upper, float), move=move)
    for _ in range(max_iters):
        f0, df0 = objective(x)
        if constraints is None:
            g, dg = np.zeros(0), np.zeros((0, x.size))
        else:
            g, dg = constraints(x)
        xnew = mma_update(state, x, f0, df0, g, dg)
        if np.abs(xnew - x).max() < tol:
            x = xnew
            break
        x = xnew
    return x
