"""The two-player calibration game: forecaster vs. adversary.

Each period the C-player announces a forecast c_t; the A-player picks an
action a_t. In leaky mode the adversary sees c_t first; in standard mode
it only knows the history, but since every forecaster here is a
deterministic function of the history, a standard adversary may simulate
the forecast instead (the simulate callback), which is exactly why
determinism makes leakage harmless.
"""

from dataclasses import dataclass, field

import numpy as np

from .forecaster import WeakCalibratedForecaster, desk_config
from .geometry import ConvexDomain
from .scores import Transcript

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z):
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def counter_uniform(seed, *keys):
    """Deterministic uniform in [0,1) keyed by (seed, keys...).

    Counter-based (stateless), so replaying a run in any evaluation
    order draws identical values.
    """
    state = _mix64(seed & _MASK)
    for k in keys:
        state = _mix64(state ^ _mix64(k & _MASK))
    return state / 2.0**64


# === forecaster strategies =================================================


class ConstantForecaster:
    """Always announces the same point."""

    def __init__(self, c, domain=None):
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.domain = domain or ConvexDomain.box(
            np.zeros(self.c.size), np.ones(self.c.size))

    def next_forecast(self):
        return self.c.copy()

    def observe(self, forecast, action):
        pass

    def reset(self):
        pass


class AlternatingForecaster:
    """first on period 1, second on period 2, and so on alternately."""

    def __init__(self, first, second, domain=None):
        self.pair = (np.atleast_1d(np.asarray(first, dtype=float)),
                     np.atleast_1d(np.asarray(second, dtype=float)))
        self.domain = domain or ConvexDomain.box(
            np.zeros(self.pair[0].size), np.ones(self.pair[0].size))
        self._t = 0

    def next_forecast(self):
        return self.pair[self._t % 2].copy()

    def observe(self, forecast, action):
        self._t += 1

    def reset(self):
        self._t = 0


def weak_calibrated_forecaster(config=None, use_engine=True):
    return WeakCalibratedForecaster(config or desk_config(),
                                    use_engine=use_engine)


# === adversaries ===========================================================


@dataclass
class Adversary:
    """Tagged A-player strategy; build with the class methods below.

    mode "leaky" receives the current forecast; "standard" does not, but
    kinds that need the forecast call simulate() instead, which is valid
    against the deterministic forecasters this module runs.
    """

    kind: str
    mode: str = "leaky"
    cut: float = 0.5
    point: np.ndarray = None
    reaction_fn: object = None
    target: str = "residual"

    _KINDS = ("threshold", "constant", "seeded_random", "reaction",
              "simulating_best_response")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}")
        if self.mode not in ("standard", "leaky"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def threshold(cls, cut=0.5, mode="leaky"):
        """Acts 1 exactly when the forecast is below the cut."""
        return cls(kind="threshold", mode=mode, cut=float(cut))

    @classmethod
    def constant(cls, point, mode="standard"):
        return cls(kind="constant", mode=mode,
                   point=np.atleast_1d(np.asarray(point, dtype=float)))

    @classmethod
    def seeded_random(cls, mode="standard"):
        """Fair coin on {0,1}, drawn from the (seed, t) counter stream."""
        return cls(kind="seeded_random", mode=mode)

    @classmethod
    def reaction(cls, g, mode="leaky"):
        """Plays a_t = g(c_t) for a fixed reaction function g: C -> A."""
        return cls(kind="reaction", mode=mode, reaction_fn=g)

    @classmethod
    def simulating_best_response(cls, target="residual", mode="standard"):
        """Simulates the forecast, then attacks the target score.

        target "residual": maximize the immediate miss |a - c| over
        a in {0,1}. target "running_weak": maximize the running unit-
        weight signed residual sum |S + (a - c)|. Ties take the
        lexicographically first action.
        """
        if target not in ("residual", "running_weak"):
            raise ValueError(f"unknown target {target!r}")
        return cls(kind="simulating_best_response", mode=mode,
                   target=target)

    def act(self, t, seed, forecast, state):
        """Action for period t; forecast is None in standard mode for
        kinds that do not simulate."""
        if self.kind == "constant":
            return self.point.copy()
        if self.kind == "seeded_random":
            return np.array([1.0 if counter_uniform(seed, t) < 0.5
                             else 0.0])
        # the remaining kinds act on the forecast (seen or simulated)
        c = forecast
        if self.kind == "threshold":
            return np.array([1.0 if c[0] < self.cut else 0.0])
        if self.kind == "reaction":
            return np.atleast_1d(np.asarray(self.reaction_fn(c),
                                            dtype=float))
        if self.target == "residual":
            return np.array([1.0 if c[0] < 0.5 else 0.0])
        S = state.setdefault("running_sum", 0.0)
        best_a, best_v = 0.0, -1.0
        for a in (0.0, 1.0):
            v = abs(S + (a - c[0]))
            if v > best_v:
                best_a, best_v = a, v
        state["running_sum"] = S + (best_a - c[0])
        return np.array([best_a])

    def needs_forecast(self):
        return self.kind in ("threshold", "reaction",
                             "simulating_best_response")


# === the game loop =========================================================


@dataclass
class PlayResult:
    transcript: Transcript
    diagnostics: object = None


def play(forecaster, adversary, T, seed=0):
    """Run T periods and return the Transcript.

    Leaky mode hands c_t to the adversary; standard mode withholds it,
    but simulating kinds recover it via the deterministic-forecast
    simulation. Raises the forecaster's SolverAbort (with period index)
    on a fixed-point failure.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    domain = (forecaster.config.domain
              if isinstance(forecaster, WeakCalibratedForecaster)
              else forecaster.domain)
    forecasts = np.empty((T, domain.ambient_dim))
    actions = np.empty((T, domain.ambient_dim))
    state = {}
    for i in range(T):
        t = i + 1
        c = forecaster.next_forecast()
        if adversary.mode == "leaky" or adversary.needs_forecast():
            # standard simulating kinds: the simulation of a
            # deterministic forecaster equals the forecast itself
            a = adversary.act(t, seed, c, state)
        else:
            a = adversary.act(t, seed, None, state)
        forecasts[i] = c
        actions[i] = a
        forecaster.observe(c, a)
    return Transcript(domain=domain, forecasts=forecasts, actions=actions)


def fixed_point_fraction(transcript, g, tol):
    """Fraction of periods whose forecast is a tol-approximate fixed
    point of the reaction function g."""
    cs = transcript.forecasts
    gaps = np.array([np.linalg.norm(np.atleast_1d(np.asarray(g(c),
                                                             dtype=float))
                                    - c) for c in cs])
    return float(np.mean(gaps <= tol))
