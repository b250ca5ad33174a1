"""Named invariant battery behind the `selftest` subcommand.

Each check is a small, fast, deterministic assertion drawn from one
module's contract; the runner turns failures (assertion or crash) into
failed results instead of exceptions so the whole battery always
reports. The full battery runs in a few seconds.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import (MixedProfile, desk_dynamic_config, eps_nash_check,
                       preset_game, run_exhaustive_search,
                       run_smooth_calibrated_learning, sample_index,
                       tune_dynamic_parameters)
from .forecaster import desk_config, eval_H, solve_fixed_point
from .game import Adversary, play, weak_calibrated_forecaster
from .geometry import (ConvexDomain, approximate_weights, lipschitz_basis,
                       maximal_net, partition_of_unity, unit_box)
from .regression import (Observation, Regressor, block_expand,
                         default_theta_grid, generate_sequence,
                         regret_constant_D1, regret_constant_D2,
                         regret_report, solve_path, tune_parameters)
from .scores import (SmoothingKernel, Transcript, WeightFunction,
                     averaging_bound, calibration_score,
                     conversion_constants, smoothed_score, weak_score)


@dataclass
class SelfTestResult:
    name: str
    ok: bool
    detail: str = ""


# === geometry ==============================================================


def _check_projection_idempotent():
    rng = np.random.default_rng(0)
    dom = ConvexDomain.product([ConvexDomain.simplex(3),
                                ConvexDomain.box([0.0], [1.0])])
    pts = rng.uniform(-2, 2, size=(50, 4))
    once = np.array([dom.project(p) for p in pts])
    twice = np.array([dom.project(p) for p in once])
    worst = float(np.max(np.abs(once - twice)))
    assert worst <= 1e-12, f"projection moved twice by {worst:.2e}"
    return f"max second-projection move {worst:.1e}"


def _check_projection_nonexpansive():
    rng = np.random.default_rng(1)
    dom = ConvexDomain.product([ConvexDomain.simplex(2),
                                ConvexDomain.simplex(2)])
    for _ in range(50):
        p, q = rng.uniform(-2, 2, size=(2, 4))
        dp = np.linalg.norm(dom.project(p) - dom.project(q))
        dq = np.linalg.norm(p - q)
        assert dp <= dq + 1e-12, f"expanded {dp:.4f} > {dq:.4f}"
    return "50 random pairs"


def _check_partition_of_unity():
    net = maximal_net(unit_box(2), 0.25)
    pou = partition_of_unity(net)
    rng = np.random.default_rng(2)
    probes = rng.uniform(0, 1, size=(200, 2))
    worst_sum, worst_active = 0.0, 0
    for p in probes:
        alphas = pou.evaluate(p)
        worst_sum = max(worst_sum, abs(float(np.sum(alphas)) - 1.0))
        dists = np.linalg.norm(net.centers - p, axis=1)
        assert np.all(alphas[dists >= 3 * net.radius] == 0.0), \
            "support leaks beyond 3 * radius"
        worst_active = max(worst_active, int(np.sum(alphas > 0)))
    assert worst_sum <= 1e-12, f"partition sums off by {worst_sum:.2e}"
    assert worst_active <= 4 ** 2, f"{worst_active} active centers"
    return f"max |sum-1| {worst_sum:.1e}, max active {worst_active}"


def _check_net_separation():
    net = maximal_net(unit_box(1), 0.1)
    centers = net.centers
    for i in range(len(centers)):
        d = np.linalg.norm(centers[i + 1:] - centers[i], axis=1)
        assert np.all(d >= 2 * 0.1 - 1e-12), "centers closer than 2 eps"
    probes = np.linspace(0, 1, 201)[:, None]
    cover = np.min(np.linalg.norm(
        probes[:, None, :] - centers[None], axis=2), axis=1)
    worst = float(np.max(cover))
    assert worst <= 2 * 0.1 + 1e-12, f"coverage hole {worst:.4f}"
    return f"{len(centers)} centers, coverage radius {worst:.3f}"


def _check_basis_approximation():
    basis = lipschitz_basis(unit_box(1), L=2.0, eps=0.3)
    weights = approximate_weights(basis, lambda c: min(1.0, 2.0 * c[0]))
    grid = np.linspace(0, 1, 401)
    target = np.minimum(1.0, 2.0 * grid)
    approx = np.array([weights @ basis.evaluate(np.array([g]))
                       for g in grid])
    err = float(np.max(np.abs(approx - target)))
    assert err <= 0.3 + 1e-9, f"approximation error {err:.4f}"
    return f"sup error {err:.4f} <= 0.3"


# === regression ============================================================


def _check_regression_hand_values():
    fwd = Regressor(d=1, variant="forward", a=1.0)
    fwd.step(np.array([1.0]), 1.0)
    theta2, _ = fwd.step(np.array([1.0]), 1.0)
    assert abs(theta2[0] - 1.0 / 3.0) < 1e-15, f"forward {theta2[0]}"
    disc = Regressor(d=1, variant="discounted", a=1.0, lam=0.5)
    disc.step(np.array([1.0]), 1.0)
    theta2, _ = disc.step(np.array([1.0]), 1.0)
    assert abs(theta2[0] - 0.2) < 1e-15, f"discounted {theta2[0]}"
    return "theta_2 = 1/3 (forward), 0.2 (discounted)"


def _check_streaming_matches_batch():
    xs, ys = generate_sequence("random", 2, 60, seed=5)
    reg = Regressor(d=2, variant="windowed", a=1.0, lam=0.9, R=15)
    stream = np.array([reg.step(x, y)[0] for x, y in zip(xs, ys)])
    batch = solve_path(xs, ys, variant="windowed", a=1.0, lam=0.9, R=15)
    worst = float(np.max(np.abs(stream - batch.theta)))
    assert worst <= 1e-10, f"lanes differ by {worst:.2e}"
    return f"max lane gap {worst:.1e}"


def _check_tuned_windowed_regret():
    tuned = tune_parameters(0.5, d=1)
    xs, ys = generate_sequence("adversarial", 1, 2 * tuned.R, seed=13)
    rep = regret_report("windowed", {"a": tuned.a, "lam": tuned.lam,
                                     "R": tuned.R},
                        xs, ys, default_theta_grid(1), eps=0.5)
    bad = rep.violations(which="windowed")
    assert bad == 0, f"{bad} violations of the tuned bound"
    return f"R = {tuned.R}, zero violations on the adversarial stream"


def _check_block_reduction():
    xs, ys = generate_sequence("random", 1, 30, seed=17)
    data = [Observation(x=x, y=y) for x, y in zip(xs, ys)]
    rows = block_expand(data, 1.0, 0.5)
    disc = Regressor(d=1, variant="discounted", a=1.0, lam=0.5)
    disc_thetas = np.array([disc.step(x, y)[0] for x, y in zip(xs, ys)])
    fwd = Regressor(d=1, variant="forward", a=1.0)
    fwd_thetas = []
    for k, row in enumerate(rows):
        theta, _ = fwd.step(row.x, row.y)
        if k % 2 == 1:
            fwd_thetas.append(theta)
    worst = float(np.max(np.abs(np.array(fwd_thetas) - disc_thetas)))
    assert worst <= 1e-9, f"block reduction off by {worst:.2e}"
    return f"max block-end gap {worst:.1e}"


def _check_regret_constants():
    D1 = regret_constant_D1(1.0, 0.5, 1)
    assert abs(D1 - 4.0 * np.log(12.0)) < 1e-12, f"D1 = {D1}"
    D2 = regret_constant_D2(1.0, 0.5, 1)
    assert D2 == 24.0, f"D2 = {D2}"
    return "D1 = 4 ln 12, D2 = 24"


# === scores ================================================================


def _hand_transcript():
    dom = unit_box(1)
    c = np.array([[0.25], [0.25], [0.75], [0.75]])
    a = np.array([[0.0], [1.0], [1.0], [1.0]])
    return Transcript(domain=dom, forecasts=c, actions=a)


def _check_exact_score_hand_case():
    K = calibration_score(_hand_transcript())
    assert K == 0.25, f"K_T = {K}"
    return "two groups, K_T = 0.25 exactly"


def _check_indicator_reduces():
    rng = np.random.default_rng(3)
    dom = unit_box(1)
    t = Transcript(domain=dom,
                   forecasts=rng.choice([0.2, 0.5, 0.8], size=(40, 1)),
                   actions=rng.uniform(0, 1, size=(40, 1)))
    exact = calibration_score(t)
    smoothed = smoothed_score(t, SmoothingKernel.indicator())
    assert smoothed == exact, f"{smoothed} vs {exact}"
    return "indicator kernel == exact grouping"


def _check_tent_kernel_support():
    kernel = SmoothingKernel.tent(0.25)
    w = kernel.weights(np.array([[0.75, 0.5]]), np.array([[0.5, 0.5]]))
    assert w[0, 0] == 0.0, f"weight at the edge is {w[0, 0]}"
    inside = kernel.weights(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]))
    assert inside[0, 0] == 1.0
    return "tent vanishes at distance delta"


def _check_averaging_bound():
    rng = np.random.default_rng(4)
    kernel = SmoothingKernel.tent(0.5)
    worst = -np.inf
    for _ in range(5):
        f = rng.uniform(0, 1, size=(60, 1))
        resid = rng.uniform(-1, 1, size=(60, 1))
        lhs, rhs, _ = averaging_bound(f, resid, kernel, alpha=1.0)
        assert lhs <= rhs + 1e-12, f"lhs {lhs:.4f} > rhs {rhs:.4f}"
        worst = max(worst, lhs - rhs)
    return f"5 random transcripts, tightest margin {-worst:.3f}"


def _check_weak_score_constant_weight():
    t = _hand_transcript()
    w = WeightFunction(fn=lambda c: 1.0, lipschitz_bound=0.0, name="one")
    score = weak_score(t, w)
    direct = float(np.abs(np.mean(t.actions - t.forecasts)))
    assert abs(score - direct) <= 1e-15, f"{score} vs {direct}"
    return "unit weight reduces to the mean residual"


def _check_conversion_example():
    res = conversion_constants("weak_to_smooth", eps=0.01, L=4.0, m=1,
                               gamma=4.0)
    assert abs(res.eps_prime - 0.8) < 1e-12, f"eps' = {res.eps_prime}"
    return "0.01-weak -> 0.8-smooth at L=4, gamma=4"


# === forecaster ============================================================


def _check_empty_window_forecast():
    fc = weak_calibrated_forecaster()
    c = fc.next_forecast()
    assert np.all(c == 0.0), f"empty window gave {c}"
    return "empty window forecasts 0"


def _check_solver_residual_claim():
    config = desk_config()
    fc = weak_calibrated_forecaster(config, use_engine=False)
    adv = Adversary.threshold()
    play(fc, adv, 30)
    window = list(fc.window)
    b, res = solve_fixed_point(config, window)
    recomputed = float(np.linalg.norm(eval_H(config, window, b) - b))
    assert abs(res - recomputed) <= 1e-12, "claimed residual is stale"
    assert res <= config.fp_tol, f"residual {res:.2e}"
    return f"residual {res:.1e} <= {config.fp_tol:.0e}"


def _check_engine_matches_reference():
    adv = Adversary.threshold()
    t_eng = play(weak_calibrated_forecaster(), adv, 40)
    t_ref = play(weak_calibrated_forecaster(use_engine=False), adv, 40)
    assert np.array_equal(t_eng.forecasts, t_ref.forecasts), \
        "engine and reference lanes disagree"
    return "40 periods bit-identical"


def _check_grid_membership():
    config = desk_config()
    fc = weak_calibrated_forecaster(config)
    t = play(fc, Adversary.seeded_random(), 50, seed=11)
    snapped = np.array([config.grid.snap(c) for c in t.forecasts])
    assert np.array_equal(snapped, t.forecasts), "forecast off the grid"
    return "50 forecasts all on the grid"


# === calibration game ======================================================


def _check_leak_equivalence():
    fc = weak_calibrated_forecaster()
    leaky = play(fc, Adversary.threshold(mode="leaky"), 60)
    fc.reset()
    standard = play(fc, Adversary.threshold(mode="standard"), 60)
    assert np.array_equal(leaky.forecasts, standard.forecasts)
    assert np.array_equal(leaky.actions, standard.actions)
    return "leaky == standard for the deterministic forecaster"


def _check_threshold_beats_exact_calibration():
    fc = weak_calibrated_forecaster()
    t = play(fc, Adversary.threshold(), 200)
    K = calibration_score(t)
    assert K >= 0.45, f"K_T = {K:.4f}"
    return f"K_T = {K:.3f} >= 0.45"


def _check_seed_determinism():
    adv = Adversary.seeded_random()
    t1 = play(weak_calibrated_forecaster(), adv, 50, seed=7)
    t2 = play(weak_calibrated_forecaster(), adv, 50, seed=7)
    assert np.array_equal(t1.forecasts, t2.forecasts)
    assert np.array_equal(t1.actions, t2.actions)
    return "same seed, bit-identical transcript"


# === dynamics ==============================================================


def _check_nash_hand_cases():
    pd = preset_game("prisoners_dilemma")
    ok, worst = eps_nash_check(
        pd, MixedProfile.build([[0.0, 1.0], [0.0, 1.0]]), 0.0)
    assert ok and worst == 0.0, "defect/defect must be exact"
    mp = preset_game("matching_pennies")
    _, worst = eps_nash_check(
        mp, MixedProfile.build([[0.6, 0.4], [0.5, 0.5]]), 0.0)
    assert abs(worst - 0.2) < 1e-12, f"worst gap {worst}"
    return "defect/defect exact; lopsided pennies gap 0.2"


def _check_dynamic_schedule_identities():
    tuned = tune_dynamic_parameters(0.1, [2, 2])
    for name, got, want in tuned.identities():
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want)), \
            f"{name}: {got} vs {want}"
    return "eps_5 = 3 eps and eps_3 = 3 eps eps_4 hold exactly"


def _check_sample_index_cells():
    probs = np.array([0.25, 0.25, 0.5])
    got = [sample_index(probs, u) for u in (0.0, 0.25, 0.5, 0.9999)]
    assert got == [0, 1, 2, 2], f"cells {got}"
    assert sample_index(np.array([0.5, 0.0, 0.5]), 0.5) == 2
    return "cumulative cells, zero-mass actions skipped"


def _check_exhaustive_search_lock():
    res = run_exhaustive_search(preset_game("prisoners_dilemma"), T=5)
    assert res.lock_period == 1
    assert np.array_equal(res.locked.concat(), [0, 1, 0, 1])
    return "prisoner's dilemma locks on defect/defect at period 1"


def _check_dynamic_smoke():
    game = preset_game("coordination")
    config = desk_dynamic_config(game, T=120, seed=0)
    res = run_smooth_calibrated_learning(game, config)
    assert res.diagnostics["fp_fraction_fine"] == 1.0, "coarse residuals"
    sums = res.profiles[:, :2].sum(axis=1)
    assert np.max(np.abs(sums - 1.0)) <= 1e-9, "profile not a distribution"
    return f"120 periods, ne(0.3) fraction {res.ne_fraction(0.3):.2f}"


CHECKS = [
    ("geometry.projection_idempotent", _check_projection_idempotent),
    ("geometry.projection_nonexpansive", _check_projection_nonexpansive),
    ("geometry.partition_of_unity", _check_partition_of_unity),
    ("geometry.net_separation_coverage", _check_net_separation),
    ("geometry.basis_approximation", _check_basis_approximation),
    ("regression.hand_values", _check_regression_hand_values),
    ("regression.streaming_matches_batch", _check_streaming_matches_batch),
    ("regression.tuned_windowed_regret", _check_tuned_windowed_regret),
    ("regression.block_reduction", _check_block_reduction),
    ("regression.regret_constants", _check_regret_constants),
    ("scores.exact_score_hand_case", _check_exact_score_hand_case),
    ("scores.indicator_reduces_to_exact", _check_indicator_reduces),
    ("scores.tent_kernel_support", _check_tent_kernel_support),
    ("scores.averaging_bound", _check_averaging_bound),
    ("scores.weak_score_constant_weight", _check_weak_score_constant_weight),
    ("scores.conversion_example", _check_conversion_example),
    ("forecaster.empty_window", _check_empty_window_forecast),
    ("forecaster.solver_residual_claim", _check_solver_residual_claim),
    ("forecaster.engine_matches_reference", _check_engine_matches_reference),
    ("forecaster.grid_membership", _check_grid_membership),
    ("game.leak_equivalence", _check_leak_equivalence),
    ("game.threshold_beats_exact", _check_threshold_beats_exact_calibration),
    ("game.seed_determinism", _check_seed_determinism),
    ("dynamics.nash_hand_cases", _check_nash_hand_cases),
    ("dynamics.schedule_identities", _check_dynamic_schedule_identities),
    ("dynamics.sample_index_cells", _check_sample_index_cells),
    ("dynamics.exhaustive_search_lock", _check_exhaustive_search_lock),
    ("dynamics.smoke_run", _check_dynamic_smoke),
]


def run_selftest():
    """Run every check; a crash counts as a failure, not an abort."""
    results = []
    for name, fn in CHECKS:
        try:
            detail = fn() or ""
            results.append(SelfTestResult(name=name, ok=True, detail=detail))
        except AssertionError as exc:
            results.append(SelfTestResult(name=name, ok=False,
                                          detail=str(exc)))
        except Exception as exc:
            results.append(SelfTestResult(
                name=name, ok=False,
                detail=f"{type(exc).__name__}: {exc}"))
    return results
