"""Convex domains and the Lipschitz toolkit built on them.

Projections, maximal nets, tent partitions of unity, Lipschitz function
bases, and Lipschitz approximate-best-reply maps. Everything here is a
pure function of its inputs; built objects are immutable and safe to
share.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class BasisTooLarge(ValueError):
    """Requested basis dimension exceeds the configured hard cap."""

    def __init__(self, d, cap):
        self.d = d
        self.cap = cap
        super().__init__(f"basis would need d={d} members, cap is {cap}")


class CoverageError(RuntimeError):
    """Probe grid too coarse to certify net coverage."""


class QuasiConcavityError(RuntimeError):
    """Mixture of best replies left the epsilon-best-reply set."""


# === domains ===================================================


def _project_box(b, lower, upper):
    return np.minimum(np.maximum(b, lower), upper)


def _project_simplex(v):
    # Euclidean projection onto the standard simplex, sort-and-threshold.
    n = v.shape[0]
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - cssv / ind > 0
    rho = ind[cond][-1]
    theta = cssv[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def _simplex_lattice(n, g):
    """All points k/g with k a composition of g into n nonnegative parts,
    in ascending lexicographic order of k."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + [remaining])
            return
        for k in range(remaining + 1):
            rec(prefix + [k], remaining - k, slots - 1)

    rec([], g, n)
    return np.asarray(out, dtype=float) / g


@dataclass(frozen=True)
class ConvexDomain:
    """A compact convex subset of R^m: box, simplex, or product of such.

    kind: 'box' (lower/upper bounds), 'simplex' (dim = number of
    vertices, embedded as the standard simplex in R^dim), or 'product'
    (factors combined by coordinate concatenation).
    """

    kind: str
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    dim: int = 0
    factors: tuple = ()

    @staticmethod
    def box(lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or np.any(lower > upper):
            raise ValueError("box needs lower <= upper of equal shape")
        return ConvexDomain(kind="box", lower=lower, upper=upper)

    @staticmethod
    def simplex(dim):
        if dim < 1:
            raise ValueError("simplex dim >= 1")
        return ConvexDomain(kind="simplex", dim=int(dim))

    @staticmethod
    def product(factors):
        factors = tuple(factors)
        if not factors:
            raise ValueError("product needs at least one factor")
        return ConvexDomain(kind="product", factors=factors)

    @property
    def ambient_dim(self):
        if self.kind == "box":
            return self.lower.shape[0]
        if self.kind == "simplex":
            return self.dim
        return sum(f.ambient_dim for f in self.factors)

    @property
    def diameter(self):
        if self.kind == "box":
            return float(np.linalg.norm(self.upper - self.lower))
        if self.kind == "simplex":
            return float(np.sqrt(2.0)) if self.dim >= 2 else 0.0
        return float(np.sqrt(sum(f.diameter ** 2 for f in self.factors)))

    def _blocks(self):
        """(start, stop, factor) triples for product coordinates."""
        if self.kind != "product":
            return [(0, self.ambient_dim, self)]
        blocks, start = [], 0
        for f in self.factors:
            blocks.append((start, start + f.ambient_dim, f))
            start += f.ambient_dim
        return blocks

    def project(self, b):
        """Euclidean-nearest point of the domain (the map gamma)."""
        b = np.asarray(b, dtype=float)
        if b.shape != (self.ambient_dim,):
            raise ValueError(
                f"point has dim {b.shape}, domain has dim {self.ambient_dim}")
        if self.kind == "box":
            return _project_box(b, self.lower, self.upper)
        if self.kind == "simplex":
            return _project_simplex(b)
        out = np.empty_like(b)
        for (s, e, f) in self._blocks():
            out[s:e] = f.project(b[s:e])
        return out

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        return bool(np.linalg.norm(x - self.project(x)) <= tol)

    def probe_grid(self, step):
        """Deterministic lexicographically ordered probe points with
        nearest-neighbour spacing <= step."""
        if step <= 0:
            raise ValueError("step > 0 required")
        if self.kind == "box":
            axes = []
            for lo, hi in zip(self.lower, self.upper):
                if hi > lo:
                    npts = int(np.ceil((hi - lo) / step)) + 1
                    axes.append(np.linspace(lo, hi, npts))
                else:
                    axes.append(np.array([lo]))
            mesh = np.meshgrid(*axes, indexing="ij")
            return np.stack([g.ravel() for g in mesh], axis=-1)
        if self.kind == "simplex":
            if self.dim == 1:
                return np.array([[1.0]])
            g = int(np.ceil(np.sqrt(2.0) / step))
            return _simplex_lattice(self.dim, g)
        parts = [f.probe_grid(step) for f in self.factors]
        grid = parts[0]
        for p in parts[1:]:
            grid = np.concatenate(
                [np.repeat(grid, len(p), axis=0),
                 np.tile(p, (len(grid), 1))], axis=1)
        return grid

    def barycenter(self):
        if self.kind == "box":
            return 0.5 * (self.lower + self.upper)
        if self.kind == "simplex":
            return np.full(self.dim, 1.0 / self.dim)
        return np.concatenate([f.barycenter() for f in self.factors])


def unit_box(m):
    return ConvexDomain.box(np.zeros(m), np.ones(m))


# === forecast grids ============================================


@dataclass(frozen=True)
class ForecastGrid:
    """A finite grid on a domain with deterministic nearest-point snapping.

    Box factors carry a per-axis lattice of `resolution` steps; simplex
    factors carry the lattice of compositions with denominator
    `resolution`. Ties snap lexicographically first (i.e. downward).
    """

    domain: ConvexDomain
    resolution: int

    def snap(self, c):
        c = np.asarray(c, dtype=float)
        out = np.empty_like(c)
        for (s, e, f) in self.domain._blocks():
            out[s:e] = self._snap_factor(f, c[s:e])
        return out

    def _snap_factor(self, f, c):
        if f.kind == "box":
            width = f.upper - f.lower
            with np.errstate(invalid="ignore", divide="ignore"):
                y = np.where(width > 0, (c - f.lower) / width, 0.0)
            k = self._round_half_down(y * self.resolution)
            k = np.clip(k, 0, self.resolution)
            return f.lower + width * (k / self.resolution)
        if f.kind == "simplex":
            return _snap_simplex_lattice(c, self.resolution)
        out = np.empty_like(c)
        for (s, e, sub) in f._blocks():
            out[s:e] = self._snap_factor(sub, c[s:e])
        return out

    @staticmethod
    def _round_half_down(y):
        # nearest integer, exact halves to the smaller one (lex-first)
        return np.ceil(y - 0.5)

    def max_snap_error(self, probes):
        return float(max(np.linalg.norm(self.snap(p) - p) for p in probes))


def _snap_simplex_lattice(c, g):
    """Nearest point k/g, sum(k)=g, k >= 0, to the simplex point c.

    Round each scaled coordinate, then repair the total by adjusting the
    coordinates with the cheapest residuals; ties resolved by index
    (lex-first).
    """
    y = np.asarray(c, dtype=float) * g
    k = np.floor(y + 0.5)
    delta = int(round(k.sum() - g))
    if delta != 0:
        resid = k - y  # in [-0.5, 0.5]
        n = len(y)
        if delta > 0:
            # decrement the delta coordinates where k - 1 hurts least:
            # largest resid first (they were rounded up the most)
            order = sorted(range(n), key=lambda i: (-resid[i], i))
            j = 0
            for i in order:
                if j == delta:
                    break
                if k[i] >= 1.0:
                    k[i] -= 1.0
                    j += 1
        else:
            order = sorted(range(n), key=lambda i: (resid[i], i))
            for i in order[: -delta]:
                k[i] += 1.0
    return k / g


# === nets and partitions of unity ==============================


@dataclass(frozen=True)
class Net:
    """A maximal set of centers with pairwise distance >= 2*radius."""

    domain: ConvexDomain
    centers: np.ndarray  # (K, m)
    radius: float
    probe_step: float

    @property
    def size(self):
        return self.centers.shape[0]

    def min_pairwise_distance(self):
        z = self.centers
        if len(z) < 2:
            return np.inf
        d2 = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        return float(np.sqrt(d2.min()))

    def max_cover_distance(self, probes=None):
        """Largest distance from a probe point to its nearest center."""
        if probes is None:
            probes = self.domain.probe_grid(self.probe_step)
        worst = 0.0
        for block in np.array_split(probes, max(1, len(probes) // 4096)):
            d2 = np.sum(
                (block[:, None, :] - self.centers[None, :, :]) ** 2, axis=-1)
            worst = max(worst, float(d2.min(axis=1).max()))
        return np.sqrt(worst)

    def to_dict(self):
        return {
            "radius": self.radius,
            "probe_step": self.probe_step,
            "centers": self.centers.tolist(),
        }


def maximal_net(domain, eps, probe_density=4):
    """Greedy maximal net over a deterministic lex-ordered probe grid.

    Scans probes in lexicographic order and keeps every point at
    distance >= 2*eps from all kept points. probe_density divides eps to
    give the grid step; the default step eps/4 is fine enough to certify
    coverage at the probe level.
    """
    if eps <= 0:
        raise ValueError("eps > 0 required")
    if eps >= domain.diameter and domain.diameter > 0:
        # one ball covers; still run the greedy for the single center
        pass
    step = eps / probe_density
    if step > eps / 2:
        raise CoverageError(
            f"probe step {step} exceeds eps/2; cannot certify coverage")
    probes = domain.probe_grid(step)
    n = len(probes)
    alive = np.ones(n, dtype=bool)
    dist2 = np.full(n, np.inf)
    centers = []
    # relative slack so probes at distance exactly 2*eps survive float
    # rounding of eps and of the probe coordinates
    thresh = (2.0 * eps) ** 2 * (1.0 - 1e-12)
    while True:
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        i = idx[0]  # first surviving probe in lex order
        z = probes[i]
        centers.append(z)
        d2 = np.sum((probes - z) ** 2, axis=1)
        dist2 = np.minimum(dist2, d2)
        alive &= dist2 >= thresh
    return Net(domain=domain, centers=np.asarray(centers), radius=float(eps),
               probe_step=step)


@dataclass(frozen=True)
class PartitionOfUnity:
    """Tent partition subordinate to a net: beta_k = alpha_k / sum(alpha),
    alpha_k(x) = max(0, 3*eps - ||x - z_k||)."""

    net: Net

    @property
    def size(self):
        return self.net.size

    @property
    def lipschitz_bound(self):
        m = self.net.domain.ambient_dim
        return 4.0 ** (m + 2) / self.net.radius

    def alphas(self, x):
        d = np.linalg.norm(self.net.centers - np.asarray(x, dtype=float),
                           axis=1)
        return np.maximum(3.0 * self.net.radius - d, 0.0)

    def evaluate(self, x):
        a = self.alphas(x)
        total = a.sum()
        if total <= 0:
            raise ValueError("point outside the covered region")
        return a / total

    def evaluate_many(self, xs):
        xs = np.asarray(xs, dtype=float)
        d = np.linalg.norm(xs[:, None, :] - self.net.centers[None, :, :],
                           axis=-1)
        a = np.maximum(3.0 * self.net.radius - d, 0.0)
        total = a.sum(axis=1, keepdims=True)
        if np.any(total <= 0):
            raise ValueError("point outside the covered region")
        return a / total


def partition_of_unity(net):
    return PartitionOfUnity(net=net)


# === Lipschitz function bases ==================================

BASIS_SIZE_CAP = 10_000


@dataclass(frozen=True)
class BasisFamily:
    """Members: the m coordinate functions, then Q identical copies of
    (1/Q)*beta_k per net center. Each member maps the domain to [0,1]
    and is lipschitz_bound-Lipschitz."""

    domain: ConvexDomain
    partition: PartitionOfUnity
    replication: int
    lipschitz_bound: float
    target_error: float

    @property
    def m(self):
        return self.domain.ambient_dim

    @property
    def size(self):
        return self.m + self.partition.size * self.replication

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        beta = self.partition.evaluate(x) / self.replication
        return np.concatenate([x, np.repeat(beta, self.replication)])

    def evaluate_many(self, xs):
        xs = np.asarray(xs, dtype=float)
        beta = self.partition.evaluate_many(xs) / self.replication
        return np.concatenate(
            [xs, np.repeat(beta, self.replication, axis=1)], axis=1)

    def coordinate_mask(self):
        mask = np.zeros(self.size, dtype=bool)
        mask[: self.m] = True
        return mask

    def to_dict(self):
        return {
            "d": self.size,
            "Q": self.replication,
            "L": self.lipschitz_bound,
            "target_error": self.target_error,
            "net": self.partition.net.to_dict(),
        }


def lipschitz_basis(domain, L, eps, probe_density=4, cap=BASIS_SIZE_CAP):
    """Basis spanning the L-Lipschitz [0,1]-valued functions to within eps.

    Net radius eps/(3L); each tent is split into Q copies so every member
    is itself L-Lipschitz. Raises BasisTooLarge when d = m + K*Q exceeds
    the cap (the caller must coarsen; no silent truncation).
    """
    if L < 1:
        raise ValueError("L >= 1 required")
    if not 0 < eps <= 1:
        raise ValueError("0 < eps <= 1 required")
    m = domain.ambient_dim
    eps1 = eps / (3.0 * L)
    net = maximal_net(domain, eps1, probe_density)
    ratio = 4.0 ** (m + 2) / (eps1 * L)
    Q = int(np.ceil(ratio * (1.0 - 1e-12)))
    d = m + net.size * Q
    if d > cap:
        raise BasisTooLarge(d, cap)
    return BasisFamily(domain=domain, partition=partition_of_unity(net),
                       replication=Q, lipschitz_bound=float(L),
                       target_error=float(eps))


def desk_basis(domain, net_radius, probe_density=4):
    """Small working basis: coordinates plus the raw tent partition
    (replication 1). Used by the forecaster at desk scale, where the
    declared Lipschitz bound is the partition's, not a target L."""
    net = maximal_net(domain, net_radius, probe_density)
    pou = partition_of_unity(net)
    return BasisFamily(domain=domain, partition=pou, replication=1,
                       lipschitz_bound=max(1.0, pou.lipschitz_bound),
                       target_error=3.0 * net_radius)


def approximate_weights(basis, w):
    """Weight vector omega with sum_i omega_i f_i ~ w: w(z_k) on every
    copy of a partition member, 0 on the coordinate members."""
    centers = basis.partition.net.centers
    vals = np.array([float(w(z)) for z in centers])
    if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
        raise ValueError("w out of [0,1] at a net center")
    vals = np.clip(vals, 0.0, 1.0)
    return np.concatenate(
        [np.zeros(basis.m), np.repeat(vals, basis.replication)])


# === approximate best replies ==================================


def nu_constant(m):
    """The dimension constant in the best-reply Lipschitz bound
    nu_m * (L/eps)^(m+1); an upper bound, not claimed tight."""
    return np.sqrt(m) ** (m + 1) * 4.0 ** (m + 2) * 6.0 ** (m + 1)


@dataclass(frozen=True)
class SmoothBestReply:
    """g^i(c) = sum_k beta_k(c) x_k with x_k an exact best reply at the
    net center z_k; an eps-best reply everywhere by construction."""

    partition: PartitionOfUnity
    replies: np.ndarray  # (K, dim of player's block)
    eps: float
    payoff_lipschitz: float
    lipschitz_bound: float = field(default=0.0)

    def evaluate(self, c):
        beta = self.partition.evaluate(c)
        return beta @ self.replies

    def evaluate_many(self, cs):
        beta = self.partition.evaluate_many(cs)
        return beta @ self.replies


def smooth_best_reply(payoff, domain, eps, L, player,
                      exact_reply=None, probe_density=4, net=None):
    """Lipschitz eps-best-reply map for one player.

    payoff(point) evaluates that player's payoff at a full profile point
    of `domain` (a product; `player` indexes the owned factor). The net
    has radius eps/(6L); exact replies at the centers come from
    `exact_reply(center) -> point in the player's factor` (defaults to a
    lex-first pure argmax assuming the factor is a simplex and payoff is
    linear in the player's block).
    """
    if eps <= 0:
        raise ValueError("eps > 0 required")
    blocks = domain._blocks()
    s, e, factor = blocks[player]
    if net is None:
        net = maximal_net(domain, eps / (6.0 * L), probe_density)
    pou = partition_of_unity(net)

    if exact_reply is None:
        if factor.kind != "simplex":
            raise ValueError("default exact_reply needs a simplex factor")

        def exact_reply(z):
            best_v, best_b = -np.inf, 0
            for b in range(factor.dim):
                pt = z.copy()
                pt[s:e] = 0.0
                pt[s + b] = 1.0
                v = payoff(pt)
                if v > best_v:  # strict: ties keep the first (lex) action
                    best_v, best_b = v, b
            unit = np.zeros(factor.dim)
            unit[best_b] = 1.0
            return unit

    replies = np.asarray([exact_reply(z) for z in net.centers], dtype=float)
    m = domain.ambient_dim
    bound = nu_constant(m) * (L / eps) ** (m + 1)
    return SmoothBestReply(partition=pou, replies=replies, eps=float(eps),
                           payoff_lipschitz=float(L), lipschitz_bound=bound)
