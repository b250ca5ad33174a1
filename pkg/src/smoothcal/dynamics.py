"""Smooth calibrated learning on finite games, plus the continuous-game
variant and an exhaustive-search baseline.

All players share one deterministic weakly calibrated forecast c_t of
the mixed-action profile, play Lipschitz approximate best replies
x_t^i = g^i(c_t), and sample pure actions from x_t^i. The forecaster
then observes the realized pure profile embedded as unit vectors. The
ne_fraction diagnostics measure how often x_t is an approximate Nash
equilibrium.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .forecaster import WeakCalibratedForecaster, desk_config, next_forecast
from .game import counter_uniform
from .geometry import (ConvexDomain, maximal_net, nu_constant,
                       smooth_best_reply)
from .scores import (SmoothingKernel, Transcript, _smooth_sums,
                     calibration_score, gamma_operational, smoothed_score)

INVARIANT_CHECK_PERIODS = 1_000


# === games =================================================================


@dataclass(frozen=True)
class FiniteGame:
    """n-player finite game: payoffs[i] has shape (m_1, ..., m_n)."""

    payoffs: tuple
    bound: float
    name: str = ""

    def __post_init__(self):
        shapes = {p.shape for p in self.payoffs}
        if len(shapes) != 1:
            raise ValueError("payoff tensors must share one shape")
        shape = shapes.pop()
        if len(shape) != len(self.payoffs):
            raise ValueError("need one payoff tensor per player")
        for p in self.payoffs:
            if np.max(np.abs(p)) > self.bound + 1e-12:
                raise ValueError("payoff exceeds the declared bound")

    @staticmethod
    def build(payoffs, bound=None, name=""):
        ps = tuple(np.asarray(p, dtype=float) for p in payoffs)
        if bound is None:
            bound = max(float(np.max(np.abs(p))) for p in ps) or 1.0
        return FiniteGame(payoffs=ps, bound=float(bound), name=name)

    @property
    def n(self):
        return len(self.payoffs)

    @property
    def action_counts(self):
        return list(self.payoffs[0].shape)

    @property
    def m(self):
        return int(sum(self.action_counts))

    def profile_domain(self):
        return ConvexDomain.product(
            [ConvexDomain.simplex(k) for k in self.action_counts])


def preset_game(name):
    if name == "matching_pennies":
        u1 = [[1.0, -1.0], [-1.0, 1.0]]
        return FiniteGame.build([u1, -np.asarray(u1)], name=name)
    if name == "coordination":
        u = [[1.0, 0.0], [0.0, 1.0]]
        return FiniteGame.build([u, u], name=name)
    if name == "prisoners_dilemma":
        # rows/cols ordered (cooperate, defect); defect strictly dominant
        u1 = [[2.0, 0.0], [3.0, 1.0]]
        u2 = np.asarray(u1).T
        return FiniteGame.build([u1, u2], name=name)
    if name == "shapley":
        u1 = np.eye(3)
        u2 = np.roll(np.eye(3), 1, axis=1)
        return FiniteGame.build([u1, u2], name=name)
    raise KeyError(f"unknown game preset {name!r}")

PRESET_GAMES = ("matching_pennies", "coordination", "prisoners_dilemma",
                "shapley")


@dataclass(frozen=True)
class MixedProfile:
    parts: tuple

    def __post_init__(self):
        for p in self.parts:
            if np.min(p) < -1e-12 or abs(float(np.sum(p)) - 1.0) > 1e-12:
                raise ValueError("each part must be a distribution")

    @staticmethod
    def build(parts):
        return MixedProfile(tuple(np.asarray(p, dtype=float)
                                  for p in parts))

    @staticmethod
    def from_vector(game, vec):
        vec = np.asarray(vec, dtype=float)
        parts, off = [], 0
        for k in game.action_counts:
            parts.append(vec[off:off + k])
            off += k
        return MixedProfile.build(parts)

    def concat(self):
        return np.concatenate(self.parts)


def _split(game, vec):
    parts, off = [], 0
    for k in game.action_counts:
        parts.append(np.asarray(vec[off:off + k], dtype=float))
        off += k
    return parts


def payoff_vector(game, i, parts):
    """Expected payoff to player i of each own pure action, others
    mixing per parts (contract every axis but i)."""
    t = game.payoffs[i]
    for j in range(game.n - 1, -1, -1):
        if j != i:
            t = np.tensordot(t, parts[j], axes=(j, 0))
    return t


def expected_payoff(game, i, parts):
    return float(payoff_vector(game, i, parts) @ parts[i])


def eps_nash_check(game, profile, eps):
    """(is_member, worst_gap): per-player gain of the best pure
    deviation; pure deviations suffice by multilinearity."""
    parts = profile.parts if isinstance(profile, MixedProfile) \
        else MixedProfile.build(profile).parts
    if [len(p) for p in parts] != game.action_counts:
        raise ValueError("profile does not match the game's dimensions")
    worst = 0.0
    for i in range(game.n):
        vec = payoff_vector(game, i, parts)
        gap = float(np.max(vec) - vec @ parts[i])
        worst = max(worst, gap)
    return worst <= eps, worst


# === parameter schedules ===================================================


@dataclass(frozen=True)
class TunedDynamicConstants:
    """Closed-form schedule from the accuracy analysis; runnable only in
    principle (L_g and L_c explode), kept for consistency checks."""

    eps: float
    m: int
    n: int
    U: float
    gamma: float
    eps_g: float
    L_g: float
    eps_4: float
    eps_c: float
    L_c: float
    eps_2: float
    eps_1: float

    @property
    def eps_5(self):
        return self.eps_g + np.sqrt(self.m) * self.U * self.L_g * self.eps_4

    @property
    def eps_3(self):
        return (self.eps_c + self.eps_2 + 1.0 / self.L_c
                + self.n * self.L_g / self.L_c)

    def identities(self):
        """(name, recomputed, target) pairs that must agree."""
        return [
            ("eps_5 = 3 eps", self.eps_5, 3.0 * self.eps),
            ("eps_3 = 3 eps eps_4", self.eps_3, 3.0 * self.eps * self.eps_4),
        ]

    def to_dict(self):
        d = {k: getattr(self, k) for k in
             ("eps", "m", "n", "U", "gamma", "eps_g", "L_g", "eps_4",
              "eps_c", "L_c", "eps_2", "eps_1")}
        d["eps_5"] = self.eps_5
        d["eps_3"] = self.eps_3
        return d


def tune_dynamic_parameters(eps, action_counts, U=1.0):
    """Exact schedule: eps_g, L_g, eps_4, eps_c, L_c, eps_2, eps_1."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = len(action_counts)
    m = int(sum(action_counts))
    sm = np.sqrt(m)
    # diameter of the product of simplices (each full simplex sqrt(2))
    alpha = np.sqrt(sum(2.0 for k in action_counts if k >= 2))
    gamma = gamma_operational(m, alpha)
    eps_g = eps
    L_g = nu_constant(m) * (sm * U / eps) ** (m + 1)
    eps_4 = 2.0 * eps / (sm * U * L_g)
    eps_c = eps * eps_4
    L_c = (1.0 + n * L_g) / (eps * eps_4)
    eps_2 = eps * eps_4
    eps_1 = eps_2**2 / (gamma**2 * L_c**m * (1.0 + sm * L_c))
    return TunedDynamicConstants(eps=eps, m=m, n=n, U=U, gamma=gamma,
                                 eps_g=eps_g, L_g=L_g, eps_4=eps_4,
                                 eps_c=eps_c, L_c=L_c, eps_2=eps_2,
                                 eps_1=eps_1)


@dataclass
class DynamicConfig:
    """Everything one simulation needs. profile "desk" carries runnable
    overrides in `constants`; profile "theory" carries the exact
    schedule (and usually no runnable pieces)."""

    profile: str
    constants: dict
    forecaster_config: object = None
    g_maps: list = None
    kernel: SmoothingKernel = None
    T: int = 0
    seed: int = 0
    theory: TunedDynamicConstants = None


def _payoff_fn(game, i):
    def u(vec):
        return expected_payoff(game, i, _split(game, vec))
    return u


def _probe_lipschitz(g_map, probes):
    """Largest observed slope of a smooth best-reply map over probe
    pairs; the measured stand-in for the theory L_g at desk scale."""
    vals = g_map.evaluate_many(probes)
    best = 0.0
    for i in range(len(probes)):
        d_c = np.linalg.norm(probes[i + 1:] - probes[i], axis=1)
        d_g = np.linalg.norm(vals[i + 1:] - vals[i], axis=1)
        keep = d_c > 1e-12
        if np.any(keep):
            best = max(best, float(np.max(d_g[keep] / d_c[keep])))
    return best


def desk_dynamic_config(game, T=20_000, seed=0, net_radius=0.25,
                        reply_radius=1.0 / 16.0, lam=None, R=None,
                        grid_resolution=1024, kernel_delta=0.25,
                        eps_4=0.1):
    """Runnable profile: small nets, measured constants.

    net_radius sizes the forecaster's basis net, reply_radius the
    best-reply nets; kernel_delta the tent kernel used by diagnostics;
    eps_4 is the Markov threshold on ||g(c)-c|| that the proof-chain
    diagnostics report against.

    lam and R default to 1 - 1/T and T: recall spanning the whole run,
    so the forecast is close to a running average of play and the
    best-reply gap keeps shrinking as the empirical frequencies settle
    (pilot runs on matching pennies: last-quarter mean gap about a third
    of the first-quarter mean, time-averaged forecast within 0.03 of the
    mixed equilibrium). A shorter recall leaves the orbit stationary at
    a noise floor set by 1/sqrt(effective window mass).
    """
    if R is None:
        R = max(T, 2)
    if lam is None:
        lam = 1.0 - 1.0 / max(T, 2)
    domain = game.profile_domain()
    fc = desk_config(domain=domain, net_radius=net_radius, lam=lam, R=R,
                     grid_resolution=grid_resolution)
    L_u = game.bound * np.sqrt(game.m)
    reply_net = maximal_net(domain, reply_radius)
    eps_g = 6.0 * L_u * reply_radius
    g_maps = [smooth_best_reply(_payoff_fn(game, i), domain, eps=eps_g,
                                L=L_u, player=i, net=reply_net)
              for i in range(game.n)]
    probes = domain.probe_grid(1.0 / 8.0)
    if len(probes) > 2000:
        probes = probes[:: len(probes) // 2000 + 1]
    L_g_meas = [_probe_lipschitz(g, probes) for g in g_maps]
    kernel = SmoothingKernel.tent(kernel_delta)
    constants = {
        "eps_g": eps_g,
        "payoff_lipschitz": L_u,
        "L_g_measured": L_g_meas,
        "L_c": 1.0 / kernel_delta,
        "eps_4": eps_4,
        "net_radius": net_radius,
        "reply_radius": reply_radius,
    }
    return DynamicConfig(profile="desk", constants=constants,
                         forecaster_config=fc, g_maps=g_maps,
                         kernel=kernel, T=T, seed=seed)


# === the learning dynamic ==================================================


def sample_index(probs, u):
    cum = np.cumsum(probs)
    return min(int(np.searchsorted(cum, u, side="right")),
               len(probs) - 1)


@dataclass
class DynamicRunResult:
    game: FiniteGame
    config: DynamicConfig
    forecasts: np.ndarray        # (T, m) grid points
    profiles: np.ndarray         # (T, m) x_t = g(c_t)
    actions: np.ndarray          # (T, n) sampled pure action indices
    actions_embedded: np.ndarray  # (T, m) unit-vector profile
    br_gaps: np.ndarray          # ||g(c_t) - c_t||
    nash_gaps: np.ndarray        # worst pure-deviation gain of x_t
    diagnostics: dict = field(default_factory=dict)

    def ne_fraction(self, eps):
        return float(np.mean(self.nash_gaps <= eps))

    def transcript(self):
        return Transcript(domain=self.config.forecaster_config.domain,
                          forecasts=self.forecasts,
                          actions=self.actions_embedded)

    def profile_transcript(self):
        return Transcript(domain=self.config.forecaster_config.domain,
                          forecasts=self.forecasts,
                          actions=self.profiles)


def run_smooth_calibrated_learning(game, config, check_invariant=True):
    """The (D1)-(D3) dynamic: shared forecast, smooth best replies,
    sampled pure play, forecaster fed the realized unit vectors.

    Every INVARIANT_CHECK_PERIODS periods the emitted forecast is
    recomputed from a cloned window through the plain reference lane and
    must match bit for bit (the shared-forecast invariant).
    """
    T, seed = config.T, config.seed
    fc = config.forecaster_config
    forecaster = WeakCalibratedForecaster(fc)
    m, n = game.m, game.n
    counts = game.action_counts
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(int)
    forecasts = np.empty((T, m))
    profiles = np.empty((T, m))
    actions = np.empty((T, n), dtype=np.int64)
    embedded = np.zeros((T, m))
    br_gaps = np.empty(T)
    nash_gaps = np.empty(T)
    cache = {}
    checks = 0
    for i in range(T):
        t = i + 1
        c = forecaster.next_forecast()
        if check_invariant and t % INVARIANT_CHECK_PERIODS == 0:
            c_ref = next_forecast(fc, list(forecaster.window))
            if not np.array_equal(c, c_ref):
                raise RuntimeError(
                    f"shared-forecast invariant broken at period {t}: "
                    f"engine {c} vs reference {c_ref}")
            checks += 1
        key = c.tobytes()
        hit = cache.get(key)
        if hit is None:
            parts = [g.evaluate(c) for g in config.g_maps]
            x = np.concatenate(parts)
            gap = float(np.linalg.norm(x - c))
            _, worst = eps_nash_check(game, MixedProfile.build(parts),
                                      0.0)
            hit = (parts, x, gap, worst)
            cache[key] = hit
        parts, x, gap, worst = hit
        forecasts[i] = c
        profiles[i] = x
        br_gaps[i] = gap
        nash_gaps[i] = worst
        for p in range(n):
            idx = sample_index(parts[p], counter_uniform(seed, t, p))
            actions[i, p] = idx
            embedded[i, offsets[p] + idx] = 1.0
        forecaster.observe(c, embedded[i])
    diag = {
        "fp_fraction_fine": forecaster.diagnostics.fraction_within(
            fc.fp_tol),
        "fp_max_residual": forecaster.diagnostics.max_residual(),
        "fp_fallbacks": forecaster.diagnostics.fallbacks,
        "invariant_checks": checks,
        "distinct_forecasts": len(cache),
    }
    return DynamicRunResult(game=game, config=config, forecasts=forecasts,
                            profiles=profiles, actions=actions,
                            actions_embedded=embedded, br_gaps=br_gaps,
                            nash_gaps=nash_gaps, diagnostics=diag)


def proof_chain_report(result):
    """Measured versions of the accuracy-chain inequalities.

    (a) the smoothed calibration score of realized play;
    (b) the smoothed action-vs-profile gap (law-of-large-numbers term);
    (c) mean ||x_t - c_t|| against the measured combination
        K + gap_b + 1/L_c + sum_i L_g^i / L_c;
    (d) the Markov bound on the fraction of periods with a best-reply
        gap above eps_4 (pure arithmetic, holds identically).
    """
    cfg = result.config
    kernel = cfg.kernel
    L_c = cfg.constants["L_c"]
    eps_4 = cfg.constants["eps_4"]
    tr = result.transcript()
    K_smooth = smoothed_score(tr, kernel)
    V_a, W = _smooth_sums(kernel, result.forecasts,
                          result.actions_embedded)
    V_x, _ = _smooth_sums(kernel, result.forecasts, result.profiles)
    gap_b = float(np.mean(np.linalg.norm((V_a - V_x) / W[:, None],
                                         axis=1)))
    lhs_c = float(np.mean(np.linalg.norm(result.profiles
                                         - result.forecasts, axis=1)))
    rhs_c = K_smooth + gap_b + 1.0 / L_c \
        + sum(cfg.constants["L_g_measured"]) / L_c
    mean_br = float(np.mean(result.br_gaps))
    frac_beyond = float(np.mean(result.br_gaps > eps_4))
    return {
        "K_T": calibration_score(tr),
        "K_smooth": K_smooth,
        "action_profile_gap": gap_b,
        "profile_forecast_mean": lhs_c,
        "profile_forecast_bound": rhs_c,
        "triangle_holds": lhs_c <= rhs_c + 1e-9,
        "mean_br_gap": mean_br,
        "frac_br_gap_beyond_eps4": frac_beyond,
        "markov_bound": mean_br / eps_4,
        "markov_holds": frac_beyond <= mean_br / eps_4 + 1e-12,
    }


# === continuous-game variant ===============================================


@dataclass(frozen=True)
class ContinuousGame:
    """Payoff callables on a product of per-player boxes; payoffs must
    be Lipschitz and quasi-concave in one's own action (declared;
    spot-checked on probes)."""

    payoffs: tuple
    domain: ConvexDomain
    lipschitz: float
    name: str = ""

    @property
    def n(self):
        return len(self.payoffs)


def preset_continuous(name):
    if name == "quadratic_solo":
        dom = ConvexDomain.product([ConvexDomain.box([0.0], [1.0])])
        return ContinuousGame(payoffs=(lambda v: -(v[0] - 0.3) ** 2,),
                              domain=dom, lipschitz=2.0, name=name)
    if name == "team_quadratic":
        dom = ConvexDomain.product([ConvexDomain.box([0.0], [1.0]),
                                    ConvexDomain.box([0.0], [1.0])])
        u = lambda v: -(v[0] - v[1]) ** 2
        return ContinuousGame(payoffs=(u, u), domain=dom, lipschitz=4.0,
                              name=name)
    raise KeyError(f"unknown continuous preset {name!r}")


def _own_axis_grid(factor, steps):
    lo = float(factor.lower[0])
    hi = float(factor.upper[0])
    return np.linspace(lo, hi, steps + 1)


def _grid_argmax(game, i, base, steps=256):
    """Best payoff for player i over its own grid, others fixed."""
    blocks = game.domain._blocks()
    s, e, factor = blocks[i]
    if e - s != 1:
        raise NotImplementedError("grid argmax handles 1-d factors")
    grid = _own_axis_grid(factor, steps)
    best_v, best_x = -np.inf, grid[0]
    pt = np.asarray(base, dtype=float).copy()
    for x in grid:
        pt[s] = x
        v = game.payoffs[i](pt)
        if v > best_v:
            best_v, best_x = v, x
    return best_v, best_x


def spot_check_quasiconcavity(game, probes=5, steps=64, tol=1e-9):
    """Own-payoff slices at a few probe profiles must rise then fall."""
    grid_pts = game.domain.probe_grid(0.5)
    take = grid_pts[:: max(1, len(grid_pts) // probes)]
    blocks = game.domain._blocks()
    for i in range(game.n):
        s, e, factor = blocks[i]
        axis = _own_axis_grid(factor, steps)
        for base in take:
            pt = base.copy()
            vals = np.empty(len(axis))
            for k, x in enumerate(axis):
                pt[s] = x
                vals[k] = game.payoffs[i](pt)
            j = int(np.argmax(vals))
            rising = np.all(np.diff(vals[: j + 1]) >= -tol)
            falling = np.all(np.diff(vals[j:]) <= tol)
            if not (rising and falling):
                return False
    return True


@dataclass
class ContinuousRunResult:
    game: ContinuousGame
    config: DynamicConfig
    forecasts: np.ndarray
    plays: np.ndarray            # a_t = x_t = g(c_t)
    pne_gaps: np.ndarray
    quasiconcave_ok: bool
    diagnostics: dict = field(default_factory=dict)

    def pne_fraction(self, eps, burn_in=0):
        return float(np.mean(self.pne_gaps[burn_in:] <= eps))


def desk_continuous_config(game, T=2_000, seed=0, net_radius=1.0 / 8.0,
                           reply_radius=1.0 / 16.0, lam=0.95, R=100,
                           grid_resolution=512, argmax_steps=256):
    domain = game.domain
    fc = desk_config(domain=domain, net_radius=net_radius, lam=lam, R=R,
                     grid_resolution=grid_resolution)
    reply_net = maximal_net(domain, reply_radius)
    eps_g = 6.0 * game.lipschitz * reply_radius
    blocks = domain._blocks()
    g_maps = []
    for i in range(game.n):
        s, e, factor = blocks[i]

        def exact_reply(z, i=i, s=s):
            _, best_x = _grid_argmax(game, i, z, steps=argmax_steps)
            return np.array([best_x])

        g_maps.append(smooth_best_reply(game.payoffs[i], domain,
                                        eps=eps_g, L=game.lipschitz,
                                        player=i, exact_reply=exact_reply,
                                        net=reply_net))
    constants = {"eps_g": eps_g, "argmax_steps": argmax_steps,
                 "reply_radius": reply_radius}
    return DynamicConfig(profile="desk", constants=constants,
                         forecaster_config=fc, g_maps=g_maps,
                         kernel=None, T=T, seed=seed)


def run_continuous_dynamic(game, config):
    """Deterministic variant: a_t = x_t = g(c_t), no sampling; reports
    pure epsilon-equilibrium gaps via per-player grid argmax."""
    qc_ok = spot_check_quasiconcavity(game)
    if not qc_ok:
        warnings.warn("quasi-concavity spot check failed; the "
                      "equilibrium guarantee is void", RuntimeWarning)
    T = config.T
    fc = config.forecaster_config
    forecaster = WeakCalibratedForecaster(fc)
    m = fc.domain.ambient_dim
    steps = config.constants.get("argmax_steps", 256)
    forecasts = np.empty((T, m))
    plays = np.empty((T, m))
    gaps = np.empty(T)
    cache = {}
    for i in range(T):
        c = forecaster.next_forecast()
        key = c.tobytes()
        hit = cache.get(key)
        if hit is None:
            a = np.concatenate([g.evaluate(c) for g in config.g_maps])
            worst = 0.0
            for p in range(game.n):
                best_v, _ = _grid_argmax(game, p, a, steps=steps)
                worst = max(worst, best_v - game.payoffs[p](a))
            hit = (a, worst)
            cache[key] = hit
        a, worst = hit
        forecasts[i] = c
        plays[i] = a
        gaps[i] = worst
        forecaster.observe(c, a)
    diag = {
        "fp_fraction_fine": forecaster.diagnostics.fraction_within(
            fc.fp_tol),
        "fp_max_residual": forecaster.diagnostics.max_residual(),
        "distinct_forecasts": len(cache),
    }
    return ContinuousRunResult(game=game, config=config,
                               forecasts=forecasts, plays=plays,
                               pne_gaps=gaps, quasiconcave_ok=qc_ok,
                               diagnostics=diag)


# === exhaustive-search baseline ============================================


def profile_grid(game, max_denominator=6):
    """Candidate mixed profiles: per-player lattice distributions with
    denominators 1, 2, ..., ordered by denominator then lexicographic,
    first player slowest; exact duplicates dropped."""
    from .geometry import _simplex_lattice
    from itertools import product as iproduct
    out, seen = [], set()
    for q in range(1, max_denominator + 1):
        per_player = [list(_simplex_lattice(count, q))
                      for count in game.action_counts]
        for combo in iproduct(*per_player):
            key = tuple(np.concatenate(combo).round(12))
            if key not in seen:
                seen.add(key)
                out.append(MixedProfile.build(combo))
    return out


@dataclass
class ExhaustiveSearchResult:
    profiles: np.ndarray     # (T, m) candidate examined each period
    signals: np.ndarray      # (T, n) 0 = satisfied, 1 = keep searching
    lock_period: int
    locked: MixedProfile


def run_exhaustive_search(game, grid=None, eps=0.0, T=100):
    """Scan candidate profiles until every player's eps-best-reply check
    passes, then play the winner forever.

    Signaling uses the distinct-action convention: a satisfied player
    plays its first action, a dissatisfied one its second; the candidate
    advances while anyone signals dissatisfaction, so two profiles of
    memory suffice. The grid must contain an eps-equilibrium (checked
    up front).
    """
    if grid is None:
        grid = profile_grid(game)
    if not any(eps_nash_check(game, p, eps)[0] for p in grid):
        raise ValueError("no grid point is an eps-equilibrium")
    m, n = game.m, game.n
    profiles = np.empty((T, m))
    signals = np.zeros((T, n), dtype=np.int64)
    lock_period, locked = None, None
    k = 0
    for i in range(T):
        cand = grid[k]
        profiles[i] = cand.concat()
        if locked is None:
            ok_all = True
            for p in range(n):
                vec = payoff_vector(game, p, cand.parts)
                gap = float(np.max(vec) - vec @ cand.parts[p])
                if gap > eps:
                    signals[i, p] = 1 if game.action_counts[p] > 1 else 0
                    ok_all = False
            if ok_all:
                lock_period, locked = i + 1, cand
            else:
                k += 1
    return ExhaustiveSearchResult(profiles=profiles, signals=signals,
                                  lock_period=lock_period, locked=locked)
