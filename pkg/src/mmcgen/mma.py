"""Moving-asymptote convex subproblem solver for the design updates.

One `mma_step` builds the separable convex approximation around the
current point and solves its dual with a primal-dual interior Newton
method.  Constraints are handled through elastic variables, so infeasible
starts are acceptable and are driven feasible over the iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ASY_INIT = 0.1
_ASY_INCR = 1.2
_ASY_DECR = 0.7
_ALBEFA = 0.1
_RAA0 = 1e-5
_EPSIMIN = 1e-5


@dataclass
class MmaState:
    """Carries the previous two iterates and the current asymptotes."""

    x_old1: np.ndarray
    x_old2: np.ndarray
    low: np.ndarray
    upp: np.ndarray
    iteration: int = 0

    @classmethod
    def fresh(cls, x0: np.ndarray) -> "MmaState":
        x0 = np.asarray(x0, dtype=float)
        return cls(x_old1=x0.copy(), x_old2=x0.copy(),
                   low=x0.copy(), upp=x0.copy())


def mma_step(state: MmaState, x: np.ndarray, df0: np.ndarray,
             g: np.ndarray, dg: np.ndarray,
             lower: np.ndarray, upper: np.ndarray,
             move: np.ndarray, constraint_penalty: float = 1e4) -> np.ndarray:
    """One design update; mutates `state` and returns the new point.

    x: current variables (n,); df0: objective gradient (n,);
    g / dg: constraint values (m,) and gradients (m, n), feasible iff g <= 0;
    lower/upper: global bounds; move: per-variable absolute move caps.
    """
    x = np.asarray(x, dtype=float)
    df0 = np.asarray(df0, dtype=float)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    dg = np.atleast_2d(np.asarray(dg, dtype=float))
    n = x.size
    m = g.size
    state.iteration += 1

    span = np.maximum(upper - lower, 1e-5)
    if state.iteration <= 2:
        low = x - _ASY_INIT * span
        upp = x + _ASY_INIT * span
    else:
        signs = (x - state.x_old1) * (state.x_old1 - state.x_old2)
        factor = np.ones(n)
        factor[signs > 0] = _ASY_INCR
        factor[signs < 0] = _ASY_DECR
        low = x - factor * (state.x_old1 - state.low)
        upp = x + factor * (state.upp - state.x_old1)
        low = np.clip(low, x - 10.0 * span, x - 0.01 * span)
        upp = np.clip(upp, x + 0.01 * span, x + 10.0 * span)

    alfa = np.maximum.reduce([low + _ALBEFA * (x - low), x - move, lower])
    beta = np.minimum.reduce([upp - _ALBEFA * (upp - x), x + move, upper])
    # Keep a sliver of feasible interval even when move caps collapse it.
    tight = beta - alfa < 1e-12
    if np.any(tight):
        mid = 0.5 * (alfa[tight] + beta[tight])
        alfa[tight] = mid - 5e-13
        beta[tight] = mid + 5e-13

    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    p0 = np.maximum(df0, 0.0)
    q0 = np.maximum(-df0, 0.0)
    pq0 = 0.001 * (p0 + q0) + _RAA0 / span
    p0 = (p0 + pq0) * ux2
    q0 = (q0 + pq0) * xl2
    p_mat = np.maximum(dg, 0.0)
    q_mat = np.maximum(-dg, 0.0)
    pq = 0.001 * (p_mat + q_mat) + _RAA0 / span
    p_mat = (p_mat + pq) * ux2
    q_mat = (q_mat + pq) * xl2
    b = p_mat @ (1.0 / (upp - x)) + q_mat @ (1.0 / (x - low)) - g

    x_new = _subsolv(m, n, low, upp, alfa, beta, p0, q0, p_mat, q_mat, b,
                     constraint_penalty)

    state.x_old2 = state.x_old1
    state.x_old1 = x.copy()
    state.low = low
    state.upp = upp
    return x_new


def _subsolv(m, n, low, upp, alfa, beta, p0, q0, p_mat, q_mat, b, penalty):
    """Primal-dual interior Newton solve of the separable subproblem.

    minimize sum(p0/(upp-x) + q0/(x-low)) + sum(c*y + 0.5*y^2)
    s.t.     sum(p_i/(upp-x) + q_i/(x-low)) - y_i <= b_i,
             alfa <= x <= beta, y >= 0.
    """
    c = np.full(m, penalty)
    a0, a_lin, d_quad = 1.0, np.zeros(m), np.ones(m)

    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = np.ones(m)
    z = 1.0
    lam = np.ones(m)
    xsi = np.maximum(1.0 / (x - alfa), 1.0)
    eta = np.maximum(1.0 / (beta - x), 1.0)
    mu = np.maximum(1.0, 0.5 * c)
    zet = 1.0
    s = np.ones(m)

    def residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1 = upp - x
        xl1 = x - low
        plam = p0 + p_mat.T @ lam
        qlam = q0 + q_mat.T @ lam
        gvec = p_mat @ (1.0 / ux1) + q_mat @ (1.0 / xl1)
        rex = plam / ux1 ** 2 - qlam / xl1 ** 2 - xsi + eta
        rey = c + d_quad * y - mu - lam
        rez = a0 - zet - a_lin @ lam
        relam = gvec - a_lin * z - y + s - b
        rexsi = xsi * (x - alfa) - epsi
        reeta = eta * (beta - x) - epsi
        remu = mu * y - epsi
        rezet = zet * z - epsi
        res = lam * s - epsi
        full = np.concatenate([rex, rey, [rez], relam, rexsi, reeta,
                               remu, [rezet], res])
        return full, np.linalg.norm(full), np.abs(full).max()

    while epsi > _EPSIMIN:
        _, resnorm, resmax = residuals(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        for _ in range(200):
            if resmax <= 0.9 * epsi:
                break
            ux1 = upp - x
            xl1 = x - low
            ux2 = ux1 ** 2
            xl2 = xl1 ** 2
            plam = p0 + p_mat.T @ lam
            qlam = q0 + q_mat.T @ lam
            gvec = p_mat @ (1.0 / ux1) + q_mat @ (1.0 / xl1)
            gg = p_mat / ux2 - q_mat / xl2
            dpsidx = plam / ux2 - qlam / xl2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d_quad * y - lam - epsi / y
            delz = a0 - a_lin @ lam - epsi / z
            dellam = gvec - a_lin * z - y - b + epsi / lam
            diagx = 2 * (plam / (ux2 * ux1) + qlam / (xl2 * xl1))
            diagx += xsi / (x - alfa) + eta / (beta - x)
            diagy = d_quad + mu / y
            diaglamyi = s / lam + 1.0 / diagy

            # m constraints is small here, solve the (m+1) dense system.
            blam = dellam + dely / diagy - gg @ (delx / diagx)
            aa = np.zeros((m + 1, m + 1))
            aa[:m, :m] = np.diag(diaglamyi) + (gg / diagx) @ gg.T
            aa[:m, m] = a_lin
            aa[m, :m] = a_lin
            aa[m, m] = -zet / z
            rhs = np.concatenate([blam, [delz]])
            solut = np.linalg.solve(aa, rhs)
            dlam = solut[:m]
            dz = solut[m]
            dx = -delx / diagx - (gg.T @ dlam) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - xsi * dx / (x - alfa)
            deta = -eta + epsi / (beta - x) + eta * dx / (beta - x)
            dmu = -mu + epsi / y - mu * dy / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - s * dlam / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            step = max(
                (-1.01 * dxx / xx).max(),
                (-1.01 * dx / (x - alfa)).max(),
                (1.01 * dx / (beta - x)).max(),
                1.0,
            )
            steg = 1.0 / step

            xo, yo, zo = x.copy(), y.copy(), z
            lamo, xsio, etao = lam.copy(), xsi.copy(), eta.copy()
            muo, zeto, so = mu.copy(), zet, s.copy()
            resnew = 2 * resnorm
            for _ in range(50):
                if resnew <= resnorm:
                    break
                x = xo + steg * dx
                y = yo + steg * dy
                z = zo + steg * dz
                lam = lamo + steg * dlam
                xsi = xsio + steg * dxsi
                eta = etao + steg * deta
                mu = muo + steg * dmu
                zet = zeto + steg * dzet
                s = so + steg * ds
                _, resnew, resmax = residuals(x, y, z, lam, xsi, eta, mu,
                                              zet, s, epsi)
                steg *= 0.5
            resnorm = resnew
        epsi *= 0.1
    return x
