"""Forward, discounted, and windowed discounted online linear regression.

The forward family predicts with theta_t = Z_t^{-1} v_t where Z_t already
includes the current feature vector x_t while v_t uses targets strictly
before t. Variants differ in how past observations are weighted:

  forward     Z_t = a I + sum_{q<=t} x_q x_q',        v_t = sum_{q<t} y_q x_q
  discounted  geometric weights lambda^(t-q) on both sums
  windowed    discounted sums truncated to q > t-R

Convention: (x_t, y_t, theta_t) = (0, 0, 0) for t <= 0.

Two lanes compute the same thing: the streaming Regressor (one step at a
time, windowed sums recomputed from the stored window each step) and
solve_path (vectorized over a whole dataset via first-order recurrences;
the windowed sums are full_t - lambda^R * full_(t-R)). Tests pin the two
lanes together.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.signal import lfilter

VARIANTS = ("forward", "discounted", "windowed")


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: float


# === streaming lane ============================================


class Regressor:
    """Caller-owned mutable state for one online regression run."""

    def __init__(self, d, variant="forward", a=1.0, lam=None, R=None,
                 x_bound=np.inf, y_bound=np.inf):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if a <= 0:
            raise ValueError("ridge a must be positive")
        if variant != "forward":
            if lam is None or not 0 < lam < 1:
                raise ValueError("lambda in (0,1) required")
        if variant == "windowed":
            if R is None or R < 1:
                raise ValueError("window length R >= 1 required")
        self.d = int(d)
        self.variant = variant
        self.a = float(a)
        self.lam = lam
        self.R = R
        self.x_bound = x_bound
        self.y_bound = y_bound
        self.t = 0
        # running sums for forward/discounted; window for windowed
        self._S = np.zeros((d, d))  # weighted sum of x x' up to t-1
        self._u = np.zeros(d)       # weighted sum of y x up to t-1
        self.window = deque(maxlen=(R - 1) if variant == "windowed" else None)

    # --- state assembly ---

    def _design(self, x_t):
        """Z_t (including x_t) and v_t for prediction at the next step."""
        a, d = self.a, self.d
        if self.variant == "forward":
            Z = self._S + np.outer(x_t, x_t)
            v = self._u.copy()
        elif self.variant == "discounted":
            Z = self.lam * self._S + np.outer(x_t, x_t)
            v = self.lam * self._u
        else:
            # recomputed from the stored window every step: the newest
            # stored pair has age 1, the oldest age len(window)
            Z = np.outer(x_t, x_t)
            v = np.zeros(d)
            w = 1.0
            for (xq, yq) in reversed(self.window):
                w *= self.lam
                Z += w * np.outer(xq, xq)
                v += w * yq * xq
        Z[np.diag_indices(d)] += a
        return Z, v

    def predict(self, x_t):
        """(theta_t, yhat_t) for the incoming feature vector. Pure."""
        x_t = np.asarray(x_t, dtype=float)
        if x_t.shape != (self.d,):
            raise ValueError(f"x has shape {x_t.shape}, expected ({self.d},)")
        if np.linalg.norm(x_t) > self.x_bound * (1 + 1e-12):
            raise ValueError("||x|| exceeds declared bound")
        Z, v = self._design(x_t)
        theta = cho_solve(cho_factor(Z, lower=True), v)
        return theta, float(theta @ x_t)

    def update(self, x_t, y_t):
        x_t = np.asarray(x_t, dtype=float)
        y_t = float(y_t)
        if x_t.shape != (self.d,):
            raise ValueError(f"x has shape {x_t.shape}, expected ({self.d},)")
        if np.linalg.norm(x_t) > self.x_bound * (1 + 1e-12):
            raise ValueError("||x|| exceeds declared bound")
        if abs(y_t) > self.y_bound * (1 + 1e-12):
            raise ValueError("|y| exceeds declared bound")
        if self.variant == "forward":
            self._S += np.outer(x_t, x_t)
            self._u += y_t * x_t
        elif self.variant == "discounted":
            self._S = self.lam * self._S + np.outer(x_t, x_t)
            self._u = self.lam * self._u + y_t * x_t
        else:
            self.window.append((x_t.copy(), y_t))
        self.t += 1

    def step(self, x_t, y_t):
        """predict then update; returns (theta_t, yhat_t)."""
        out = self.predict(x_t)
        self.update(x_t, y_t)
        return out

    def design_matrix(self, x_t):
        """Z_t for diagnostics (eigenvalue checks)."""
        return self._design(np.asarray(x_t, dtype=float))[0]


# === batch lane ================================================


def _packed_indices(d):
    """(i, j) pairs for lower-triangular row-major packed storage."""
    return [(i, j) for i in range(d) for j in range(i + 1)]


def _chol_solve_packed(Zp, v, d):
    """Solve Z theta = v for T stacked SPD systems.

    Zp holds the lower triangle of each Z in row-major packed order,
    shape (T, d(d+1)/2); v has shape (T, d). Small fixed d, vectorized
    over T; plain Cholesky-Crout followed by the two triangular solves.
    """
    idx = {ij: k for k, ij in enumerate(_packed_indices(d))}
    T = Zp.shape[0]
    L = np.empty_like(Zp)
    for j in range(d):
        s = Zp[:, idx[(j, j)]].copy()
        for p in range(j):
            s -= L[:, idx[(j, p)]] ** 2
        L[:, idx[(j, j)]] = np.sqrt(s)
        for i in range(j + 1, d):
            s = Zp[:, idx[(i, j)]].copy()
            for p in range(j):
                s -= L[:, idx[(i, p)]] * L[:, idx[(j, p)]]
            L[:, idx[(i, j)]] = s / L[:, idx[(j, j)]]
    w = np.empty((T, d))
    for i in range(d):
        s = v[:, i].copy()
        for p in range(i):
            s -= L[:, idx[(i, p)]] * w[:, p]
        w[:, i] = s / L[:, idx[(i, i)]]
    theta = np.empty((T, d))
    for i in range(d - 1, -1, -1):
        s = w[:, i].copy()
        for p in range(i + 1, d):
            s -= L[:, idx[(p, i)]] * theta[:, p]
        theta[:, i] = s / L[:, idx[(i, i)]]
    return theta


@dataclass
class PathResult:
    theta: np.ndarray      # (T, d)
    yhat: np.ndarray       # (T,)
    psi: np.ndarray        # (T,) squared error of the algorithm's predictions


def solve_path(xs, ys, variant="forward", a=1.0, lam=None, R=None):
    """Run a whole dataset through the chosen variant at once.

    Produces exactly the same theta_t sequence as the streaming
    Regressor, via cumulative first-order recurrences and a batched
    Cholesky solve.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    T, d = xs.shape
    pairs = _packed_indices(d)
    npk = len(pairs)

    # products x_t x_t' (packed) and y_t x_t
    up = np.empty((T, npk))
    for k, (i, j) in enumerate(pairs):
        up[:, k] = xs[:, i] * xs[:, j]
    uyx = ys[:, None] * xs

    if variant == "forward":
        Zp = np.cumsum(up, axis=0)
        v = np.zeros((T, d))
        v[1:] = np.cumsum(uyx, axis=0)[:-1]
    elif variant in ("discounted", "windowed"):
        if lam is None or not 0 < lam < 1:
            raise ValueError("lambda in (0,1) required")
        Gx = lfilter([1.0], [1.0, -lam], up, axis=0)
        Gy = lfilter([1.0], [1.0, -lam], uyx, axis=0)
        v = np.zeros((T, d))
        v[1:] = lam * Gy[:-1]
        if variant == "windowed":
            if R is None or R < 1:
                raise ValueError("window length R >= 1 required")
            damp = lam ** R
            if R < T:
                Gx[R:] -= damp * Gx[:-R]
                v[R:] -= damp * Gy[:-R]
        Zp = Gx
    else:
        raise ValueError(f"unknown variant {variant!r}")

    diag = [k for k, (i, j) in enumerate(pairs) if i == j]
    Zp[:, diag] += a
    theta = _chol_solve_packed(Zp, v, d)
    yhat = np.einsum("ti,ti->t", theta, xs)
    psi = (ys - yhat) ** 2
    return PathResult(theta=theta, yhat=yhat, psi=psi)


# === regret reporting ==========================================


def default_theta_grid(d, radius=2.0, step=1.0):
    """Integer-step grid intersected with the ball ||theta|| <= radius."""
    axis = np.arange(-radius, radius + step / 2, step)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    return pts[np.linalg.norm(pts, axis=1) <= radius + 1e-12]


def _range_moments(xs, ys, start, stop):
    """sum of y^2, y*x, x x' over the index slice [start, stop)."""
    xb = xs[start:stop]
    yb = ys[start:stop]
    return float(yb @ yb), yb @ xb, xb.T @ xb


def _psi_sum(theta, my2, myx, mxx):
    return my2 - 2.0 * (theta @ myx) + theta @ mxx @ theta


@dataclass
class RegretReport:
    windowed_avg: dict
    cumulative_avg: dict
    bound_rhs: dict
    eps: float
    R: int
    T: int

    def violations(self, which="both"):
        out = 0
        for key, rhs in self.bound_rhs.items():
            if which in ("both", "windowed") and self.windowed_avg[key] > rhs:
                out += 1
            if which in ("both", "cumulative") \
                    and self.cumulative_avg[key] > rhs:
                out += 1
        return out

    def max_margin(self):
        """max over theta of (lhs - rhs); negative means all bounds hold."""
        worst = -np.inf
        for key, rhs in self.bound_rhs.items():
            worst = max(worst, self.windowed_avg[key] - rhs,
                        self.cumulative_avg[key] - rhs)
        return worst


def regret_report(variant, params, xs, ys, theta_refs, eps, path=None):
    """Windowed and cumulative average regret against reference thetas.

    windowed: (1/R) sum_{t=T-R+1..T} [psi_t(theta_t) - psi_t(theta)]
    cumulative: (1/T) sum_{t=1..T} [...]
    bound_rhs: eps * (1 + ||theta||^2) per reference theta.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    T = len(ys)
    if T < 1:
        raise ValueError("need at least one observation")
    R = params.get("R") or T
    if path is None:
        path = solve_path(xs, ys, variant=variant, a=params.get("a", 1.0),
                          lam=params.get("lam"), R=params.get("R"))
    alg_win = float(np.sum(path.psi[max(0, T - R):]))
    alg_cum = float(np.sum(path.psi))
    mo_win = _range_moments(xs, ys, max(0, T - R), T)
    mo_cum = _range_moments(xs, ys, 0, T)
    windowed, cumulative, rhs = {}, {}, {}
    for theta in np.atleast_2d(np.asarray(theta_refs, dtype=float)):
        key = tuple(theta)
        windowed[key] = (alg_win - _psi_sum(theta, *mo_win)) / R
        cumulative[key] = (alg_cum - _psi_sum(theta, *mo_cum)) / T
        rhs[key] = eps * (1.0 + float(theta @ theta))
    return RegretReport(windowed_avg=windowed, cumulative_avg=cumulative,
                        bound_rhs=rhs, eps=eps, R=R, T=T)


# === tuning ====================================================


def regret_constant_D1(a, lam, d):
    """Additive constant in the discounted regret bound
    a ||theta||^2 + D1."""
    return 4.0 * (math.lgamma(d + 1) + d * math.log(4.0)
                  + d * math.log(1.0 + 1.0 / (a * (1.0 - lam))))


def regret_constant_D2(a, lam, d):
    """Constant in the windowed-vs-discounted gap bound D2 * lambda^R."""
    return 2.0 * (a + d) * (a * (1.0 - lam) + 1.0) \
        / (a ** 3 * (1.0 - lam) ** 2)


def windowed_regret_rhs(theta_norm, a, lam, R, d):
    """Right-hand side of the windowed average regret inequality."""
    D1 = regret_constant_D1(a, lam, d)
    D2 = regret_constant_D2(a, lam, d)
    return ((a * theta_norm ** 2 + D1) * (1.0 - lam + lam / R)
            + (theta_norm + 1.0) ** 2 / (R * (1.0 - lam))
            + D2 * lam ** R)


@dataclass(frozen=True)
class TunedParameters:
    a: float
    lam: float
    R: int
    D1: float
    D2: float
    eps_hat: float
    k: int  # lambda = 1 - 2^-k

    def conditions(self):
        """The four R-side constraints and the two lambda-side ones,
        each as (name, lhs, rhs=eps_hat/4)."""
        q = self.eps_hat / 4.0
        lam, R, a = self.lam, self.R, self.a
        return [
            ("a*(1-lam)", a * (1.0 - lam), q),
            ("D1*(1-lam)", self.D1 * (1.0 - lam), q),
            ("a/R", a / R, q),
            ("D1/R", self.D1 / R, q),
            ("2/(R*(1-lam))", 2.0 / (R * (1.0 - lam)), q),
            ("D2*lam^R", self.D2 * lam ** R, q),
        ]


def tune_parameters(eps, X=1.0, Y=1.0, d=1):
    """Smallest lambda on the search sequence {1 - 2^-k} and smallest R
    meeting the four quarter-eps conditions, with a=1 in rescaled units.

    General bounds (X, Y) are handled by tuning the normalized problem
    at eps_hat = eps / max(X^2, Y^2); running the returned parameters on
    features scaled by 1/X and targets by 1/Y then delivers the
    eps * (1 + ||theta||^2) guarantee in original units.
    """
    if eps <= 0:
        raise ValueError("eps > 0 required")
    a = 1.0
    eps_hat = eps / max(X * X, Y * Y)
    quarter = eps_hat / 4.0
    k = 1
    while True:
        lam = 1.0 - 2.0 ** (-k)
        D1 = regret_constant_D1(a, lam, d)
        if a * (1.0 - lam) <= quarter and D1 * (1.0 - lam) <= quarter:
            break
        k += 1
    D2 = regret_constant_D2(a, lam, d)
    R = max(
        int(math.ceil(a / quarter)),
        int(math.ceil(D1 / quarter)),
        int(math.ceil(2.0 / (quarter * (1.0 - lam)))),
        1,
    )
    if D2 > quarter:
        R = max(R, int(math.ceil(math.log(quarter / D2) / math.log(lam))))
    while D2 * lam ** R > quarter:  # guard against ceil/float edge cases
        R += 1
    return TunedParameters(a=a, lam=lam, R=R, D1=D1, D2=D2,
                           eps_hat=eps_hat, k=k)


# === block expansion oracle ====================================

_BLOCK_SCALE_CAP = 1e150


def block_expand(data, a, lam):
    """Rewrite a discounted problem as a plain forward one.

    Each observation (x_t, y_t) becomes a block of d+1 rows: d ridge
    rows (lambda^(-t/2) b e_i, 0) with b = sqrt(a (1-lambda)), then the
    data row (lambda^(-t/2) x_t, lambda^(-t/2) y_t). Running the forward
    algorithm (same ridge a) on the expanded sequence reproduces the
    discounted theta_t at the data rows.
    """
    if not 0 < lam < 1:
        raise ValueError("lambda in (0,1) required")
    if a <= 0:
        raise ValueError("a > 0 required")
    b = math.sqrt(a * (1.0 - lam))
    out = []
    for t, obs in enumerate(data, start=1):
        scale = lam ** (-t / 2.0)
        if scale > _BLOCK_SCALE_CAP:
            raise OverflowError(
                f"block scale lambda^(-t/2) overflows at t={t}")
        x = np.asarray(obs.x, dtype=float)
        d = x.shape[0]
        for i in range(d):
            e = np.zeros(d)
            e[i] = scale * b
            out.append(Observation(x=e, y=0.0))
        out.append(Observation(x=scale * x, y=scale * float(obs.y)))
    return out


# === sensitivity of linear solves ==============================


def sensitivity_bound(A1, b1, A2, b2, alpha, M):
    """Both sides of the solve-perturbation inequality: for c_k the
    solution of A_k c = b_k with eigenvalues of A_k >= alpha and
    ||b_k|| <= M,

        ||c_1 - c_2|| <= ||b_1 - b_2|| / alpha + M ||A_1 - A_2|| / alpha^2

    (operator norm on matrices). Returns (lhs, rhs)."""
    c1 = np.linalg.solve(A1, b1)
    c2 = np.linalg.solve(A2, b2)
    lhs = float(np.linalg.norm(c1 - c2))
    rhs = float(np.linalg.norm(b1 - b2) / alpha
                + M * np.linalg.norm(A1 - A2, ord=2) / alpha ** 2)
    return lhs, rhs


# === test-sequence generators ==================================


def generate_sequence(kind, d, T, seed=0, x_bound=1.0, y_bound=1.0):
    """Bounded (x_t, y_t) streams for regret experiments.

    "random": x uniform in the x_bound ball, y uniform in [-y_bound,
    y_bound]. "adversarial": deterministic axis-hopping x with targets
    that flip sign in blocks of 64, the drifting regime that stresses
    window tracking; seed rotates the phase.
    """
    if kind == "random":
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((T, d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        radii = rng.uniform(0.0, 1.0, size=(T, 1)) ** (1.0 / d)
        xs = x_bound * radii * g / norms
        ys = rng.uniform(-y_bound, y_bound, size=T)
        return xs, ys
    if kind == "adversarial":
        block = 64
        ts = np.arange(T) + int(seed)
        xs = np.zeros((T, d))
        axes = ts % d
        signs = np.where((ts // (block // 2)) % 2 == 0, 1.0, -1.0)
        xs[np.arange(T), axes] = x_bound * signs
        ys = np.where((ts // block) % 2 == 0, y_bound, -y_bound)
        return xs, ys.astype(float)
    raise ValueError(f"unknown sequence kind {kind!r}")
