"""Weakly calibrated forecaster: H map, fixed points, window, engine."""

import dataclasses
from collections import deque

import numpy as np
import pytest

import smoothcal.forecaster as fc
from smoothcal.forecaster import (ForecasterConfig, ParameterSchedule,
                                  SolverAbort, WeakCalibratedForecaster,
                                  desk_config, eval_H, next_forecast,
                                  observe, solve_fixed_point,
                                  theory_schedule, window_design)
from smoothcal.geometry import ConvexDomain, ForecastGrid, desk_basis


def scalar_config(lam=0.5, R=10):
    """d=1 basis {f(c) = c}: the coordinate-only basis on [0,1]."""
    domain = ConvexDomain.box([0.0], [1.0])
    basis = desk_basis(domain, net_radius=0.5)
    # coordinate + one tent; drop to the pure coordinate by a net of one
    schedule = ParameterSchedule.build(0.5, 1.0, 1, basis.size, lam)
    grid = ForecastGrid(domain=domain, resolution=1024)
    return ForecasterConfig(domain=domain, basis=basis, grid=grid,
                            schedule=schedule, lam=lam, R=R)


def drive(forecaster, actions):
    """Feed a fixed action sequence; returns the emitted forecasts."""
    out = []
    for a in actions:
        c = forecaster.next_forecast()
        forecaster.observe(c, np.atleast_1d(a))
        out.append(c)
    return np.array(out)


def threshold_action(c):
    return np.array([1.0]) if c[0] < 0.5 else np.array([0.0])


# === schedule and config ===================================================


def test_schedule_constants_recompute():
    s = ParameterSchedule.build(0.1, 2.0, 2, 5, lam=0.9)
    assert s.eps_1 == pytest.approx(0.1 / (2 * np.sqrt(2)), rel=1e-15)
    assert s.eps_2 == pytest.approx(0.1 / (2 + 2 * 36 + 25), rel=1e-15)
    assert s.eps_3 == pytest.approx(s.eps_2**2, rel=1e-15)
    assert s.eps_4 == pytest.approx(0.1 / (2 * np.sqrt(2) + 1), rel=1e-15)
    assert s.fp_box == pytest.approx(5 * 0.9 / 0.1, rel=1e-12)


def test_config_validation():
    cfg = desk_config()
    with pytest.raises(ValueError):
        dataclasses.replace(cfg, lam=1.0)
    with pytest.raises(ValueError):
        dataclasses.replace(cfg, R=1)
    wide = ConvexDomain.box([0.0], [2.0])
    with pytest.raises(ValueError):
        desk_config(domain=wide)


def test_fp_starts_zero_then_corners():
    cfg = desk_config()
    starts = cfg.fp_starts()
    K = cfg.schedule.fp_box
    np.testing.assert_allclose(starts, [[0.0], [-K], [K]], atol=0)


def test_theory_schedule_consistency():
    schedule, tuned = theory_schedule(0.5, 1.0, 1, 2)
    assert schedule.lam == tuned.lam
    assert tuned.R >= 2
    for name, lhs, rhs in tuned.conditions():
        assert lhs <= rhs * (1 + 1e-12), name
    with pytest.raises(ValueError):
        theory_schedule(0.0, 1.0, 1, 2)


# === H map =================================================================


def test_empty_window_h_is_zero():
    cfg = desk_config()
    for b in (np.array([0.3]), np.array([-5.0]), np.array([9.0])):
        assert eval_H(cfg, deque(), b) == pytest.approx(0.0, abs=0)
    b, res = solve_fixed_point(cfg, deque())
    assert np.all(b == 0.0) and res == 0.0
    assert next_forecast(cfg, deque()) == pytest.approx(0.0, abs=0)


def test_h_matches_scalar_hand_formula():
    # basis {f(c) = c} via a window built by hand: one pair c=0.5, a=1
    domain = ConvexDomain.box([0.0], [1.0])
    lam = 0.5
    cfg = scalar_config(lam=lam)
    x = cfg.basis.evaluate(np.array([0.5]))
    window = deque([(x, np.array([1.0]), np.array([0.5]))])
    M, V = window_design(cfg, window)
    # d coordinates: M = I + lam x x', V = lam * x * 1
    np.testing.assert_allclose(M, np.eye(cfg.d) + lam * np.outer(x, x),
                               atol=1e-15)
    np.testing.assert_allclose(V[:, 0], lam * x, atol=1e-15)

    # the pure-coordinate reduction: project the same window onto a
    # 1-feature design and compare against the closed form
    class OneFeature:
        size = 1

        @staticmethod
        def evaluate(c):
            return np.asarray(c, dtype=float)

    sched = ParameterSchedule.build(0.5, 1.0, 1, 1, lam)
    one = ForecasterConfig(domain=domain, basis=OneFeature(),
                           grid=cfg.grid, schedule=sched, lam=lam, R=10)
    w1 = deque([(np.array([0.5]), np.array([1.0]), np.array([0.5]))])
    for c in np.linspace(0.0, 1.0, 7):
        expected = c * 0.25 / (1.0 + 0.125 + c * c)
        got = eval_H(one, w1, np.array([c]))
        assert got[0] == pytest.approx(expected, rel=1e-14)


def test_h_bounded_by_box(seed=3):
    cfg = desk_config(net_radius=0.25, R=20)
    rng = np.random.default_rng(seed)
    window = deque()
    for _ in range(12):
        c = rng.uniform(0, 1, size=1)
        window = observe(cfg, window, c, rng.uniform(0, 1, size=1))
    K = cfg.schedule.fp_box
    M, V = window_design(cfg, window)
    for b in rng.uniform(-2 * K, 2 * K, size=(1000, 1)):
        h = eval_H(cfg, window, b, design=(M, V))
        assert np.all(np.abs(h) <= K + 1e-9)


# === fixed points ==========================================================


def test_fixed_point_matches_bisection_oracle():
    cfg = desk_config(net_radius=0.25, R=40)
    window = deque()
    rng = np.random.default_rng(11)
    for _ in range(30):
        c = cfg.grid.snap(rng.uniform(0, 1, size=1))
        window = observe(cfg, window, c, threshold_action(c))
    b, res = solve_fixed_point(cfg, window)
    assert res <= cfg.fp_tol

    # independent bisection on g(b) = H(b) - b over [-K, K]
    design = window_design(cfg, window)
    g = lambda v: eval_H(cfg, window, np.array([v]), design=design)[0] - v
    K = cfg.schedule.fp_box
    xs = np.linspace(-K, K, 4097)
    gs = np.array([g(v) for v in xs])
    roots = []
    for i in np.flatnonzero(np.sign(gs[:-1]) * np.sign(gs[1:]) <= 0):
        lo, hi = xs[i], xs[i + 1]
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if np.sign(g(lo)) * np.sign(g(mid)) <= 0:
                hi = mid
            else:
                lo = mid
        roots.append(0.5 * (lo + hi))
    assert roots, "oracle found no fixed point"
    assert min(abs(b[0] - r) for r in roots) <= 1e-6


def test_solver_abort_carries_residual_and_period():
    exc = SolverAbort("no convergence", residual=0.25)
    assert exc.residual == 0.25 and exc.period is None
    exc.period = 7
    assert "no convergence" in str(exc)


# === pure-function lane ====================================================


def test_next_forecast_clamps_and_snaps():
    cfg = desk_config()
    assert cfg.grid.snap(cfg.domain.project(np.array([1.2])))[0] == 1.0
    assert cfg.grid.snap(cfg.domain.project(np.array([-0.3])))[0] == 0.0


def test_stationarity_of_next_forecast():
    cfg = desk_config(R=8)
    rng = np.random.default_rng(5)
    window = deque()
    for _ in range(5):
        c = cfg.grid.snap(rng.uniform(0, 1, size=1))
        window = observe(cfg, window, c, threshold_action(c))
    first = next_forecast(cfg, window)
    again = next_forecast(cfg, deque(window))  # same content, fresh object
    assert np.array_equal(first, again)


def test_observe_window_discipline():
    cfg = desk_config(R=2)
    window = deque()
    window = observe(cfg, window, np.array([0.25]), np.array([1.0]))
    window = observe(cfg, window, np.array([0.75]), np.array([0.0]))
    assert len(window) == 1  # R-1
    x, a, c = window[0]
    np.testing.assert_array_equal(x, cfg.basis.evaluate(np.array([0.75])))
    assert a[0] == 0.0 and c[0] == 0.75
    with pytest.raises(ValueError):
        observe(cfg, window, np.array([0.5]), np.array([1.5]))


# === stateful forecaster and engine ========================================


def test_engine_matches_reference_forecasts(monkeypatch):
    monkeypatch.setattr(fc, "RESYNC_PERIODS", 50)
    cfg = desk_config(net_radius=0.25, R=30)
    eng = WeakCalibratedForecaster(cfg, use_engine=True)
    ref = WeakCalibratedForecaster(cfg, use_engine=False)
    assert eng._engine is not None and ref._engine is None
    for t in range(130):
        ce = eng.next_forecast()
        cr = ref.next_forecast()
        assert np.array_equal(ce, cr), f"diverged at period {t}"
        a = threshold_action(ce)
        eng.observe(ce, a)
        ref.observe(cr, a)
    assert eng.diagnostics.fraction_within(cfg.fp_tol) == 1.0
    assert eng.diagnostics.fallbacks == 0


def test_unsupported_basis_falls_back_to_reference():
    cfg = desk_config()
    doubled = dataclasses.replace(cfg.basis, replication=2)
    cfg2 = dataclasses.replace(cfg, basis=doubled)
    f = WeakCalibratedForecaster(cfg2, use_engine=True)
    assert f._engine is None


def test_forecasts_stay_on_grid_and_converge():
    cfg = desk_config(R=50)
    f = WeakCalibratedForecaster(cfg)
    forecasts = []
    for _ in range(400):
        c = f.next_forecast()
        # exact grid membership: snapping again is the identity
        assert np.array_equal(cfg.grid.snap(c), c)
        f.observe(c, threshold_action(c))
        forecasts.append(float(c[0]))
    # against the 0.5-threshold adversary the forecast approaches 0.5
    assert abs(np.mean(forecasts[-100:]) - 0.5) <= 0.05
    assert f.diagnostics.max_residual() <= cfg.fp_tol


def test_reset_restores_initial_behaviour():
    cfg = desk_config(R=6)
    f = WeakCalibratedForecaster(cfg)
    initial = f.next_forecast()
    drive(f, [1.0, 0.0, 1.0])
    f.reset()
    assert np.array_equal(f.next_forecast(), initial)
    assert len(f.window) == 0 and f._period == 0


def test_state_roundtrip():
    cfg = desk_config(R=12)
    f = WeakCalibratedForecaster(cfg)
    rng = np.random.default_rng(2)
    drive(f, rng.uniform(0, 1, size=25))
    state = f.state_dict()
    assert state["period"] == 25
    g = WeakCalibratedForecaster(cfg)
    g.load_state(state)
    assert np.array_equal(f.next_forecast(), g.next_forecast())

    other = WeakCalibratedForecaster(desk_config(R=13))
    with pytest.raises(ValueError):
        other.load_state(state)


def test_forecaster_rejects_action_outside_domain():
    f = WeakCalibratedForecaster(desk_config())
    c = f.next_forecast()
    with pytest.raises(ValueError):
        f.observe(c, np.array([-0.2]))


def test_residuals_stay_tight_over_long_run():
    cfg = desk_config(net_radius=0.25, R=40)
    f = WeakCalibratedForecaster(cfg)
    rng = np.random.default_rng(7)
    for _ in range(1200):
        c = f.next_forecast()
        if rng.uniform() < 0.3:
            a = np.array([rng.uniform(0.0, 1.0)])
        else:
            a = threshold_action(c)
        f.observe(c, a)
    assert f.diagnostics.fraction_within(cfg.fp_tol) == 1.0
