"""JIT-compiled core of the barrier solver (optional fast path).

Mirrors guide._newton_barrier step for step; the pure-numpy implementation
remains the reference and the fallback when numba is unavailable or
SGPG_NO_NUMBA is set.

Objective modes: 0 linear c@z, 1 KL over the (mu, sigma) blocks, 2 KL plus
a linear term. Exit modes: 0 none, 1 feasibility search on the last
coordinate (stop when it drops below -gate, or once a centered point
certifies the optimum cannot reach -eps).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _sym_solve(H, rhs, out):
    """Solve H out = rhs; returns False when the solve is unusable."""
    sol = np.linalg.solve(H, rhs)
    ok = True
    for j in range(sol.size):
        out[j] = sol[j]
        if not np.isfinite(sol[j]):
            ok = False
    return ok


@njit(cache=True)
def _eval_margins(G, h, c, W2, sig_lo, sig_hi, has_cone, z):
    mg = h - np.dot(G, z)
    nrm = np.zeros(G.shape[0])
    if has_cone:
        sig = z[sig_lo:sig_hi]
        s2 = sig * sig
        for k in range(G.shape[0]):
            if c[k] > 0.0:
                acc = 0.0
                for j in range(s2.size):
                    acc += W2[k, j] * s2[j]
                nrm[k] = np.sqrt(acc)
                mg[k] -= c[k] * nrm[k]
    return mg, nrm


@njit(cache=True)
def _obj_value(obj_mode, cvec, mu_lo, sig_lo, mdim, mu_b, var_b, log_std_b, z):
    val = 0.0
    if obj_mode == 0 or obj_mode == 2:
        val += np.dot(cvec, z)
    if obj_mode == 1 or obj_mode == 2:
        for j in range(mdim):
            mu = z[mu_lo + j]
            sg = z[sig_lo + j]
            dmu = mu_b[j] - mu
            val += log_std_b[j] - np.log(sg) \
                + (sg * sg + dmu * dmu) / (2.0 * var_b[j]) - 0.5
    return val


@njit(cache=True)
def newton_barrier(G, h, c, W2, sig_lo, sig_hi, has_cone,
                   obj_mode, cvec, mu_lo, mu_b, var_b, log_std_b,
                   z0, kkt_tol, max_iter, tau0, decade,
                   exit_mode, exit_gate, exit_eps):
    """Returns (z, iters, ok); see guide._newton_barrier for the contract."""
    K, D = G.shape
    mdim = sig_hi - sig_lo
    z = z0.copy()
    iters = 0

    mg, nrm = _eval_margins(G, h, c, W2, sig_lo, sig_hi, has_cone, z)
    for k in range(K):
        if not (mg[k] > 0.0 and np.isfinite(mg[k])):
            return z, iters, False

    hmax = 1.0
    for k in range(K):
        a = abs(h[k])
        if a > hmax:
            hmax = a
    margin_floor = 1e-13 * hmax

    tau = tau0
    Gt = G.copy()
    while True:
        prev_lam2 = 1e300
        stall = 0
        for _inner in range(60):
            if iters >= max_iter:
                return z, iters, False
            iters += 1

            w1 = 1.0 / mg
            grad = np.dot(G.T, w1)
            if has_cone:
                sig = z[sig_lo:sig_hi]
                coef = np.zeros(K)
                for k in range(K):
                    if c[k] > 0.0 and nrm[k] > 0.0:
                        coef[k] = c[k] * w1[k] / nrm[k]
                grad[sig_lo:sig_hi] += np.dot(coef, W2) * sig
                Gt[:, :] = G
                for k in range(K):
                    if coef[k] != 0.0:
                        for j in range(mdim):
                            Gt[k, sig_lo + j] += coef[k] * W2[k, j] * sig[j]
                Hm = np.dot(Gt.T, Gt * (w1 * w1).reshape(-1, 1))
                cone_diag = np.dot(coef, W2)
                for j in range(mdim):
                    Hm[sig_lo + j, sig_lo + j] += cone_diag[j]
                for k in range(K):
                    if c[k] > 0.0 and nrm[k] > 0.0:
                        osc = c[k] * w1[k] / (nrm[k] ** 3)
                        for j in range(mdim):
                            vj = W2[k, j] * sig[j]
                            for l in range(mdim):
                                Hm[sig_lo + j, sig_lo + l] -= \
                                    osc * vj * W2[k, l] * sig[l]
            else:
                Hm = np.dot(G.T, G * (w1 * w1).reshape(-1, 1))

            # objective gradient and (diagonal) Hessian, scaled by tau
            if obj_mode == 0 or obj_mode == 2:
                grad += tau * cvec
            if obj_mode == 1 or obj_mode == 2:
                for j in range(mdim):
                    mu = z[mu_lo + j]
                    sg = z[sig_lo + j]
                    grad[mu_lo + j] += tau * (mu - mu_b[j]) / var_b[j]
                    grad[sig_lo + j] += tau * (-1.0 / sg + sg / var_b[j])
                    Hm[mu_lo + j, mu_lo + j] += tau / var_b[j]
                    Hm[sig_lo + j, sig_lo + j] += \
                        tau * (1.0 / (sg * sg) + 1.0 / var_b[j])

            # Jacobi-scaled Newton solve with regularization fallback
            d = np.empty(D)
            for j in range(D):
                a = abs(Hm[j, j])
                d[j] = np.sqrt(a if a > 1e-12 else 1e-12)
            Hs = Hm / d.reshape(-1, 1) / d.reshape(1, -1)
            rhs = -grad / d
            dz = np.empty(D)
            lam2 = -1.0
            reg = 0.0
            for _attempt in range(6):
                if reg > 0.0:
                    for j in range(D):
                        Hs[j, j] += reg
                if _sym_solve(Hs, rhs, dz):
                    lam2 = np.dot(rhs, dz)
                    if lam2 > 0.0:
                        break
                reg = 1e-10 if reg == 0.0 else reg * 100.0
            if lam2 <= 0.0:
                return z, iters, False
            step = dz / d

            if lam2 / 2.0 <= 1e-10:
                break
            # a stalled decrement only counts as centered once it is small:
            # large-lambda plateaus mean slow progress, not the numeric floor
            if lam2 < 1e-3 and lam2 >= 0.7 * prev_lam2:
                stall += 1
                if stall >= 3:
                    break
            elif lam2 < prev_lam2:
                stall = 0
            if lam2 < prev_lam2:
                prev_lam2 = lam2

            phi0 = tau * _obj_value(obj_mode, cvec, mu_lo, sig_lo, mdim,
                                    mu_b, var_b, log_std_b, z)
            for k in range(K):
                phi0 -= np.log(mg[k])
            gdot = np.dot(grad, step)
            alpha = 1.0
            ok_step = False
            for _bt in range(60):
                zc = z + alpha * step
                mgc, nrmc = _eval_margins(G, h, c, W2, sig_lo, sig_hi,
                                          has_cone, zc)
                feas = True
                for k in range(K):
                    if not (mgc[k] > 0.0):
                        feas = False
                        break
                if feas:
                    phi1 = tau * _obj_value(obj_mode, cvec, mu_lo, sig_lo,
                                            mdim, mu_b, var_b, log_std_b, zc)
                    for k in range(K):
                        phi1 -= np.log(mgc[k])
                    if phi1 <= phi0 + 0.25 * alpha * gdot and np.isfinite(phi1):
                        z = zc
                        mg = mgc
                        nrm = nrmc
                        ok_step = True
                        break
                alpha *= 0.5
            if not ok_step:
                return z, iters, False
            if exit_mode == 1 and z[D - 1] < -exit_gate:
                return z, iters, True

        if exit_mode == 1:
            if z[D - 1] < -exit_gate:
                return z, iters, True
            if z[D - 1] - K / tau > -exit_eps:
                return z, iters, True
        if K / tau <= kkt_tol:
            return z, iters, True
        mn = mg[0]
        for k in range(K):
            if mg[k] < mn:
                mn = mg[k]
        if mn <= margin_floor:
            return z, iters, True
        tau *= decade
