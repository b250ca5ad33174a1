"""Calibration scores, smoothing kernels, and the score conversions.

K_T compares each forecast with the average action over the periods
that produced the bitwise-identical forecast. The smoothed variants pool
nearby forecasts through a kernel Lambda instead; the weak score S_T^w
averages weighted residuals w(c_t) (a_t - c_t). The averaging lemma and
the conversion constants tie the three notions together.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import ConvexDomain


# === transcripts ===============================================


@dataclass(frozen=True)
class Transcript:
    """Time-ordered (forecast, action) pairs inside a common domain."""

    domain: ConvexDomain
    forecasts: np.ndarray  # (T, m)
    actions: np.ndarray    # (T, m)

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.forecasts, dtype=float))
        a = np.atleast_2d(np.asarray(self.actions, dtype=float))
        if f.shape[0] == 1 and f.shape[1] > 1 and self.domain.ambient_dim == 1:
            f, a = f.T, a.T
        object.__setattr__(self, "forecasts", f)
        object.__setattr__(self, "actions", a)
        if f.shape != a.shape:
            raise ValueError("forecasts and actions must have equal shape")
        if f.shape[1] != self.domain.ambient_dim:
            raise ValueError("point dimension does not match the domain")
        if f.shape[0] < 1:
            raise ValueError("empty transcript")
        for name, arr in (("forecast", f), ("action", a)):
            if not _inside(self.domain, arr, tol=1e-12):
                raise ValueError(f"{name} outside the domain")

    @property
    def T(self):
        return self.forecasts.shape[0]

    @property
    def m(self):
        return self.forecasts.shape[1]

    def residuals(self):
        return self.actions - self.forecasts


def _inside(domain, arr, tol):
    """Vectorized membership check, factor by factor."""
    if domain.kind == "box":
        lo, hi = domain.lower, domain.upper
        return bool(np.all(arr >= lo - tol) and np.all(arr <= hi + tol))
    if domain.kind == "simplex":
        sums = arr.sum(axis=1)
        return bool(np.all(arr >= -tol)
                    and np.all(np.abs(sums - 1.0) <= domain.dim * tol))
    off = 0
    for (s, e, f) in domain._blocks():
        if not _inside(f, arr[:, s:e], tol):
            return False
    return True


def _group_forecasts(forecasts):
    """Indices of bitwise-identical forecast rows.

    Returns (inverse, counts): inverse[t] is the group id of row t.
    Grouping compares raw float bytes, so distinct NaN payloads or
    signed zeros never collapse.
    """
    f = np.ascontiguousarray(forecasts)
    void = f.view(np.dtype((np.void, f.dtype.itemsize * f.shape[1]))).ravel()
    _, inverse, counts = np.unique(void, return_inverse=True,
                                   return_counts=True)
    return inverse, counts


def _group_means(values, inverse, counts):
    # anchor each group at its first member so groups of identical
    # values average to that value exactly
    first = np.zeros(len(counts), dtype=np.intp)
    first[inverse[::-1]] = np.arange(len(inverse) - 1, -1, -1)
    anchors = values[first]
    sums = np.zeros((len(counts), values.shape[1]))
    np.add.at(sums, inverse, values - anchors[inverse])
    return anchors + sums / counts[:, None]


# === smoothing kernels =========================================


@dataclass(frozen=True)
class SmoothingKernel:
    """Evaluable Lambda(c', c) in [0,1] with Lambda(c,c) = 1."""

    kind: str                      # indicator | tent | gaussian
    param: float = 0.0             # tent width delta or gaussian sigma
    lipschitz_bound: float = np.inf

    @staticmethod
    def indicator():
        return SmoothingKernel(kind="indicator", param=0.0,
                               lipschitz_bound=np.inf)

    @staticmethod
    def tent(delta):
        if delta <= 0:
            raise ValueError("tent width delta > 0 required")
        return SmoothingKernel(kind="tent", param=float(delta),
                               lipschitz_bound=1.0 / float(delta))

    @staticmethod
    def gaussian(sigma):
        if sigma <= 0:
            raise ValueError("gaussian sigma > 0 required")
        # slope of exp(-r^2/(2 sigma^2)) peaks at exp(-1/2)/sigma < 1/sigma
        return SmoothingKernel(kind="gaussian", param=float(sigma),
                               lipschitz_bound=1.0 / float(sigma))

    def weights(self, sources, probes):
        """Lambda(c_s, c_t) for all pairs: (len(sources), len(probes))."""
        sources = np.atleast_2d(sources)
        probes = np.atleast_2d(probes)
        if self.kind == "indicator":
            return np.all(sources[:, None, :] == probes[None, :, :],
                          axis=-1).astype(float)
        d = np.linalg.norm(sources[:, None, :] - probes[None, :, :], axis=-1)
        if self.kind == "tent":
            return np.maximum(1.0 - d / self.param, 0.0)
        return np.exp(-0.5 * (d / self.param) ** 2)


# === core scores ===============================================


def calibration_score(t: Transcript):
    """K_T: mean distance between forecast and the conditional average
    of actions over bitwise-equal forecasts."""
    inverse, counts = _group_forecasts(t.forecasts)
    abar = _group_means(t.actions, inverse, counts)
    gaps = np.linalg.norm(abar[inverse] - t.forecasts, axis=1)
    return float(gaps.mean())


def _smooth_sums_blocked(kernel, forecasts, values, block=2048):
    """sum_s Lambda(c_s, c_t) * values_s and sum_s Lambda(c_s, c_t),
    for every t. O(T^2) kernel evaluations in blocks."""
    T = forecasts.shape[0]
    V = np.empty_like(values)
    W = np.empty(T)
    for start in range(0, T, block):
        stop = min(start + block, T)
        w = kernel.weights(forecasts, forecasts[start:stop])  # (T, b)
        V[start:stop] = w.T @ values
        W[start:stop] = w.sum(axis=0)
    return V, W


def _smooth_sums_tent_1d(delta, forecasts, values):
    """Sorted prefix-sum evaluation of the tent sums for m=1.

    sum over the support window of (1 - |c_s - c_t|/delta) * v_s equals
    sum(v) - (1/delta) * sum(|c_s - c_t| v_s), and both pieces come from
    prefix sums over the forecasts sorted once. O(T log T).
    """
    c = forecasts[:, 0]
    order = np.argsort(c, kind="stable")
    cs = c[order]
    vs = values[order]
    pv = np.concatenate([np.zeros((1, vs.shape[1])), np.cumsum(vs, axis=0)])
    pcv = np.concatenate([np.zeros((1, vs.shape[1])),
                          np.cumsum(cs[:, None] * vs, axis=0)])
    lo = np.searchsorted(cs, c - delta, side="right")
    hi = np.searchsorted(cs, c + delta, side="left")
    # strictly inside the open support (endpoints carry weight zero)
    cnt_v = pv[hi] - pv[lo]
    # sum of |c_s - c_t| v_s over the window, split at c_t
    mid_r = np.searchsorted(cs, c, side="right")
    left_v = pv[mid_r] - pv[lo]
    left_cv = pcv[mid_r] - pcv[lo]
    right_v = pv[hi] - pv[mid_r]
    right_cv = pcv[hi] - pcv[mid_r]
    absum = (c[:, None] * left_v - left_cv) + (right_cv - c[:, None] * right_v)
    return cnt_v - absum / delta


def _smooth_sums(kernel, forecasts, values):
    if kernel.kind == "tent" and forecasts.shape[1] == 1:
        ones = np.ones((forecasts.shape[0], 1))
        stacked = np.concatenate([values, ones], axis=1)
        out = _smooth_sums_tent_1d(kernel.param, forecasts, stacked)
        return out[:, :-1], out[:, -1]
    return _smooth_sums_blocked(kernel, forecasts, values)


def smoothed_score(t: Transcript, kernel: SmoothingKernel,
                   variant="both_smoothed"):
    """K_T^Lambda (both_smoothed) or the raw-forecast variant K~ that
    smoothes only the average action (action_only)."""
    if variant not in ("both_smoothed", "action_only"):
        raise ValueError(f"unknown variant {variant!r}")
    if kernel.kind == "indicator":
        # exact-match pooling: identical to the unsmoothed score in both
        # variants, computed by the same grouping code for bit identity
        return calibration_score(t)
    A, W = _smooth_sums(kernel, t.forecasts, t.actions)
    abar = A / W[:, None]
    if variant == "both_smoothed":
        C, _ = _smooth_sums(kernel, t.forecasts, t.forecasts)
        ref = C / W[:, None]
    else:
        ref = t.forecasts
    return float(np.linalg.norm(abar - ref, axis=1).mean())


@dataclass(frozen=True)
class WeightFunction:
    """w: domain -> [0,1] with a declared Lipschitz bound."""

    fn: Callable
    lipschitz_bound: float
    name: str = ""

    def evaluate_many(self, points):
        points = np.atleast_2d(points)
        try:
            vals = np.asarray(self.fn(points), dtype=float)
            if vals.shape == (points.shape[0],):
                return vals
        except Exception:
            pass
        return np.array([float(self.fn(p)) for p in points])


def weak_score(t: Transcript, w):
    """S_T^w = || (1/T) sum_t w(c_t) (a_t - c_t) ||."""
    if callable(w) and not isinstance(w, WeightFunction):
        w = WeightFunction(fn=w, lipschitz_bound=np.inf)
    vals = w.evaluate_many(t.forecasts)
    if np.any(vals < -1e-9) or np.any(vals > 1 + 1e-9):
        raise ValueError("weight function out of [0,1] on the transcript")
    avg = (vals[:, None] * t.residuals()).mean(axis=0)
    return float(np.linalg.norm(avg))


def indicator_sup_bound(t: Transcript):
    """sup over the 2m signed-part indicator weights of S_T^w, and K_T.

    The indicator of {rows whose group residual is positive in
    coordinate i} gives S_T^w equal to the positive-part sum
    (1/T) sum_t [abar_t,i - c_t,i]_+, and likewise for the negative
    part; K_T <= 2m * sup follows from the l1/l2 inequality.
    """
    inverse, counts = _group_forecasts(t.forecasts)
    abar = _group_means(t.actions, inverse, counts)
    gap = abar[inverse] - t.forecasts  # (T, m)
    pos = np.maximum(gap, 0.0).mean(axis=0)
    neg = np.maximum(-gap, 0.0).mean(axis=0)
    sup_s = float(max(pos.max(), neg.max()))
    k_t = float(np.linalg.norm(gap, axis=1).mean())
    return sup_s, k_t


# === averaging lemma and conversions ===========================


def gamma_operational(m, alpha):
    """Operational constant for the averaging bound: the closed form
    2^((m+3)/2) alpha^(m/2) m^(m/4), doubled to absorb the ceiling in
    the cube-count M = ceil(2 alpha L sqrt(m))^m."""
    return 2.0 * 2.0 ** ((m + 3) / 2.0) * alpha ** (m / 2.0) * m ** (m / 4.0)


def averaging_bound(forecasts, residuals, kernel, alpha, gamma=None):
    """Both sides of the averaging inequality

        (1/T) sum_t ||B_t|| / W_t
            <= gamma L^(m/2) ((1/T) max_t ||B_t||)^(1/2)

    with B_t = sum_s Lambda(c_s,c_t) b_s and W_t = sum_s Lambda(c_s,c_t).
    Returns (lhs, rhs, gamma)."""
    forecasts = np.atleast_2d(np.asarray(forecasts, dtype=float))
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    if forecasts.shape[0] == 1 and residuals.shape[0] != 1:
        forecasts = forecasts.T
    if residuals.shape[0] == 1 and forecasts.shape[0] != 1:
        residuals = residuals.T
    T, m = forecasts.shape
    if gamma is None:
        gamma = gamma_operational(m, alpha)
    B, W = _smooth_sums(kernel, forecasts, residuals)
    norms = np.linalg.norm(B, axis=1)
    lhs = float((norms / W).mean())
    kappa = float(norms.max()) / T
    rhs = float(gamma * kernel.lipschitz_bound ** (m / 2.0) * np.sqrt(kappa))
    return lhs, rhs, gamma


@dataclass(frozen=True)
class ConversionResult:
    eps_prime: float
    L_prime: float
    eps_1: Optional[float] = None


def conversion_constants(direction, eps, L, m, gamma=None, alpha=1.0):
    """Closed-form constants carrying one calibration notion to another.

    weak_to_smooth: an (eps, L)-weakly calibrated procedure is
    (eps', L)-smoothly calibrated with eps' = gamma L^(m/2) sqrt(eps).

    smooth_to_weak: an (eps, L)-smoothly calibrated procedure is weakly
    calibrated at eps_1 = sqrt(eps L^m), L' = sqrt(eps L^(m+2)) / 2,
    eps' = sqrt(eps L^m) (1 + sqrt(m) + sqrt(m^(m+1))). Proof constants
    verbatim, not optimized.
    """
    if eps < 0 or L < 1:
        raise ValueError("need eps >= 0 and L >= 1")
    if direction == "weak_to_smooth":
        if gamma is None:
            gamma = gamma_operational(m, alpha)
        return ConversionResult(
            eps_prime=float(gamma * L ** (m / 2.0) * np.sqrt(eps)),
            L_prime=float(L))
    if direction == "smooth_to_weak":
        eps1 = np.sqrt(eps * L ** m)
        return ConversionResult(
            eps_prime=float(eps1 * (1.0 + np.sqrt(m)
                                    + np.sqrt(float(m) ** (m + 1)))),
            L_prime=float(np.sqrt(eps * L ** (m + 2)) / 2.0),
            eps_1=float(eps1))
    raise ValueError(f"unknown direction {direction!r}")
