"""Jitted kernels for the per-period forecaster work.

Everything here mirrors the reference implementations in forecaster.py;
tests pin the two against each other. The engine understands two domain
shapes, encoded by `factor_sizes`: an empty array means the unit box
[0,1]^m, a nonempty one means a product of simplices with those
dimensions (coordinates concatenated in order).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def project_domain(b, factor_sizes):
    m = b.shape[0]
    out = np.empty(m)
    if factor_sizes.size == 0:
        for i in range(m):
            v = b[i]
            if v < 0.0:
                v = 0.0
            elif v > 1.0:
                v = 1.0
            out[i] = v
        return out
    off = 0
    for f in range(factor_sizes.size):
        n = factor_sizes[f]
        # sort-and-threshold simplex projection on the slice
        u = np.sort(b[off:off + n])[::-1]
        css = 0.0
        rho = 0
        theta = 0.0
        for j in range(n):
            css += u[j]
            if u[j] - (css - 1.0) / (j + 1) > 0.0:
                rho = j + 1
                theta = (css - 1.0) / (j + 1)
        for j in range(n):
            v = b[off + j] - theta
            out[off + j] = v if v > 0.0 else 0.0
        off += n
    return out


@njit(cache=True)
def basis_eval(c, centers, radius):
    """Coordinate functions followed by the tent partition values."""
    m = c.shape[0]
    K = centers.shape[0]
    out = np.empty(m + K)
    for i in range(m):
        out[i] = c[i]
    total = 0.0
    for k in range(K):
        s = 0.0
        for i in range(m):
            diff = c[i] - centers[k, i]
            s += diff * diff
        a = 3.0 * radius - np.sqrt(s)
        if a < 0.0:
            a = 0.0
        out[m + k] = a
        total += a
    for k in range(K):
        out[m + k] /= total
    return out


@njit(cache=True)
def chol_lower(A):
    """Lower Cholesky factor of an SPD matrix (fresh array)."""
    d = A.shape[0]
    L = np.zeros((d, d))
    for j in range(d):
        s = A[j, j]
        for p in range(j):
            s -= L[j, p] * L[j, p]
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, d):
            s2 = A[i, j]
            for p in range(j):
                s2 -= L[i, p] * L[j, p]
            L[i, j] = s2 / L[j, j]
    return L


@njit(cache=True)
def chol_solve_vec(L, rhs):
    d = L.shape[0]
    w = np.empty(d)
    for i in range(d):
        s = rhs[i]
        for p in range(i):
            s -= L[i, p] * w[p]
        w[i] = s / L[i, i]
    x = np.empty(d)
    for i in range(d - 1, -1, -1):
        s = w[i]
        for p in range(i + 1, d):
            s -= L[p, i] * x[p]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def eval_H(b, L_M, V, centers, radius, factor_sizes):
    """H at b: project, evaluate the basis, then the regression values.

    L_M is the Cholesky factor of M = I + window part; V holds the
    per-coordinate windowed target sums v^(j) as columns (d, m). The
    candidate term F F' enters through the rank-one identity
    (M + FF')^{-1} F = M^{-1}F / (1 + F' M^{-1} F).
    """
    c = project_domain(b, factor_sizes)
    F = basis_eval(c, centers, radius)
    u = chol_solve_vec(L_M, F)
    denom = 1.0 + F @ u
    m = b.shape[0]
    H = np.empty(m)
    for j in range(m):
        s = 0.0
        for i in range(F.shape[0]):
            s += V[i, j] * u[i]
        H[j] = s / denom
    return H


@njit(cache=True)
def damped_leg(b0, eta, L_M, V, centers, radius, factor_sizes, fp_tol,
               max_iter, stall):
    """One damped run b <- (1-eta) b + eta H(b) from a single start.

    Abandons the start once the residual has not improved for `stall`
    consecutive iterations. Returns (best iterate, its residual,
    converged); on convergence the iterate meets fp_tol.
    """
    m = b0.shape[0]
    b = b0.copy()
    leg_b = b0.copy()
    leg_res = 1e300
    since = 0
    for _ in range(max_iter):
        H = eval_H(b, L_M, V, centers, radius, factor_sizes)
        res = 0.0
        for i in range(m):
            diff = H[i] - b[i]
            res += diff * diff
        res = np.sqrt(res)
        if res <= fp_tol:
            return b, res, True
        if res < leg_res:
            leg_res = res
            leg_b = b.copy()
            since = 0
        else:
            since += 1
            if since >= stall:
                break
        for i in range(m):
            b[i] = (1.0 - eta) * b[i] + eta * H[i]
    return leg_b, leg_res, False


@njit(cache=True)
def staged_fixed_point(starts, head, L_M, V, centers, radius, factor_sizes,
                       fp_tol, max_iter, eta0, stall):
    """Staged damped iteration; returns (b, residual, converged).

    Stage order: the first `head` starts at damping eta0, then a
    damping cascade (0.25, 0.05) from the best iterate so far, then the
    remaining starts, then the cascade again. Mirrors the reference
    solve_fixed_point stage for stage.
    """
    m = starts.shape[1]
    best_b = np.zeros(m)
    best_res = 1e300
    for s in range(head):
        b, res, ok = damped_leg(starts[s], eta0, L_M, V, centers, radius,
                                factor_sizes, fp_tol, max_iter, stall)
        if ok:
            return b, res, True
        if res < best_res:
            best_res = res
            best_b = b
    for stage in range(2):
        for e in range(2):
            eta = 0.25 if e == 0 else 0.05
            b, res, ok = damped_leg(best_b, eta, L_M, V, centers, radius,
                                    factor_sizes, fp_tol, max_iter, stall)
            if ok:
                return b, res, True
            if res < best_res:
                best_res = res
                best_b = b
        if stage == 1:
            break
        for s in range(head, starts.shape[0]):
            b, res, ok = damped_leg(starts[s], eta0, L_M, V, centers,
                                    radius, factor_sizes, fp_tol,
                                    max_iter, stall)
            if ok:
                return b, res, True
            if res < best_res:
                best_res = res
                best_b = b
    return best_b, best_res, False


@njit(cache=True)
def residual_at(b, L_M, V, centers, radius, factor_sizes):
    H = eval_H(b, L_M, V, centers, radius, factor_sizes)
    res = 0.0
    for i in range(b.shape[0]):
        diff = H[i] - b[i]
        res += diff * diff
    return np.sqrt(res)


@njit(cache=True)
def grid_residuals(points, L_M, V, centers, radius, factor_sizes):
    out = np.empty(points.shape[0])
    for i in range(points.shape[0]):
        out[i] = residual_at(points[i], L_M, V, centers, radius,
                             factor_sizes)
    return out


@njit(cache=True)
def candidate_residuals(cs, L_M, V, centers, radius, factor_sizes):
    """For domain points c: residual at the candidate b = H(c).

    Fixed points of H are exactly the images H(c*) of fixed points c* of
    the projected map, so scanning the domain finds them when the box
    scan is intractable."""
    n = cs.shape[0]
    m = cs.shape[1]
    res = np.empty(n)
    bs = np.empty((n, m))
    for i in range(n):
        b = eval_H(cs[i], L_M, V, centers, radius, factor_sizes)
        bs[i] = b
        res[i] = residual_at(b, L_M, V, centers, radius, factor_sizes)
    return bs, res


@njit(cache=True)
def window_matrix(xs, lam):
    """M = I + sum over window pairs of lambda^age x x', oldest first in
    xs (so xs[i] has age n - i)."""
    n, d = xs.shape
    M = np.eye(d)
    for i in range(n):
        w = lam ** (n - i)
        for p in range(d):
            xp = xs[i, p] * w
            for q in range(d):
                M[p, q] += xp * xs[i, q]
    return M


@njit(cache=True)
def window_targets(xs, actions, lam):
    """V[:, j] = sum over window pairs of lambda^age a_j x."""
    n, d = xs.shape
    m = actions.shape[1]
    V = np.zeros((d, m))
    for i in range(n):
        w = lam ** (n - i)
        for j in range(m):
            aw = actions[i, j] * w
            for p in range(d):
                V[p, j] += aw * xs[i, p]
    return V
