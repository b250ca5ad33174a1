"""Game dynamics: equilibrium checks, schedules, the learning runs, the
continuous variant, and the exhaustive-search baseline."""

import numpy as np
import pytest

from smoothcal.dynamics import (ContinuousGame, FiniteGame, MixedProfile,
                                desk_continuous_config, desk_dynamic_config,
                                eps_nash_check, expected_payoff,
                                payoff_vector, preset_continuous,
                                preset_game, PRESET_GAMES, profile_grid,
                                proof_chain_report, run_continuous_dynamic,
                                run_exhaustive_search,
                                run_smooth_calibrated_learning,
                                sample_index, spot_check_quasiconcavity,
                                tune_dynamic_parameters)
from smoothcal.geometry import ConvexDomain, nu_constant
from smoothcal.scores import gamma_operational


def uniform_profile(game):
    return MixedProfile.build([np.full(k, 1.0 / k)
                               for k in game.action_counts])


# === games and profiles ====================================================


def test_preset_games_shapes():
    for name in PRESET_GAMES:
        game = preset_game(name)
        assert game.name == name
        assert game.n == 2
        assert game.m == sum(game.action_counts)
    assert preset_game("shapley").action_counts == [3, 3]
    with pytest.raises(KeyError):
        preset_game("rock_paper_scissors_lizard")


def test_game_validation():
    u = np.zeros((2, 2))
    with pytest.raises(ValueError, match="share one shape"):
        FiniteGame.build([u, np.zeros((2, 3))])
    with pytest.raises(ValueError, match="one payoff tensor per player"):
        FiniteGame.build([u])
    with pytest.raises(ValueError, match="exceeds the declared bound"):
        FiniteGame.build([[[2.0, 0.0], [0.0, 0.0]]] * 2, bound=1.0)
    auto = FiniteGame.build([[[3.0, 0.0], [0.0, 0.0]]] * 2)
    assert auto.bound == 3.0
    assert FiniteGame.build([u, u]).bound == 1.0  # zero game keeps 1


def test_mixed_profile_validation():
    with pytest.raises(ValueError, match="distribution"):
        MixedProfile.build([[0.5, 0.6]])
    with pytest.raises(ValueError, match="distribution"):
        MixedProfile.build([[-0.1, 1.1]])
    game = preset_game("matching_pennies")
    vec = np.array([0.25, 0.75, 0.5, 0.5])
    prof = MixedProfile.from_vector(game, vec)
    assert [len(p) for p in prof.parts] == [2, 2]
    np.testing.assert_array_equal(prof.concat(), vec)


def test_payoff_vector_and_expected_payoff():
    game = preset_game("matching_pennies")
    parts = uniform_profile(game).parts
    np.testing.assert_allclose(payoff_vector(game, 0, parts), [0.0, 0.0])
    assert expected_payoff(game, 0, parts) == 0.0
    # against a pure column the row payoffs are the matrix column
    parts = [np.array([0.5, 0.5]), np.array([1.0, 0.0])]
    np.testing.assert_allclose(payoff_vector(game, 0, parts), [1.0, -1.0])


# === epsilon-Nash membership ===============================================


def test_nash_check_hand_cases():
    pd = preset_game("prisoners_dilemma")
    both_defect = MixedProfile.build([[0.0, 1.0], [0.0, 1.0]])
    member, worst = eps_nash_check(pd, both_defect, 0.0)
    assert member and worst == 0.0
    both_cooperate = MixedProfile.build([[1.0, 0.0], [1.0, 0.0]])
    member, worst = eps_nash_check(pd, both_cooperate, 0.5)
    assert not member
    assert worst == pytest.approx(1.0)  # defecting gains 3 - 2

    mp = preset_game("matching_pennies")
    member, worst = eps_nash_check(mp, uniform_profile(mp), 0.0)
    assert member and worst == 0.0
    lopsided = MixedProfile.build([[0.6, 0.4], [0.5, 0.5]])
    member, worst = eps_nash_check(mp, lopsided, 0.1)
    assert not member
    assert worst == pytest.approx(0.2)
    assert eps_nash_check(mp, lopsided, 0.25)[0]

    shapley = preset_game("shapley")
    member, worst = eps_nash_check(shapley, uniform_profile(shapley), 0.0)
    assert member and worst == pytest.approx(0.0, abs=1e-15)


def test_nash_check_rejects_mismatched_profile():
    game = preset_game("matching_pennies")
    with pytest.raises(ValueError, match="dimensions"):
        eps_nash_check(game, MixedProfile.build([[1.0], [0.5, 0.5]]), 0.0)


def test_nash_check_agrees_with_mixed_deviation_grid():
    # pure deviations suffice by multilinearity: the best mixed deviation
    # on a fine grid can never beat the best pure one
    rng = np.random.default_rng(7)
    grid = np.linspace(0.0, 1.0, 101)
    for _ in range(20):
        game = FiniteGame.build(rng.uniform(-1, 1, size=(2, 2, 2)))
        parts = [rng.dirichlet(np.ones(2)) for _ in range(2)]
        prof = MixedProfile.build(parts)
        _, worst = eps_nash_check(game, prof, 0.0)
        grid_worst = 0.0
        for i in range(2):
            base = expected_payoff(game, i, parts)
            vec = payoff_vector(game, i, parts)
            gains = grid * vec[0] + (1.0 - grid) * vec[1] - base
            grid_worst = max(grid_worst, float(np.max(gains)))
        assert worst >= grid_worst - 1e-9
        assert abs(worst - grid_worst) <= 1e-9  # grid contains both corners


# === parameter schedule ====================================================


def test_dynamic_schedule_identities_exact():
    for eps, counts in ((0.1, [2, 2]), (0.25, [3, 3]), (0.5, [2, 3])):
        tuned = tune_dynamic_parameters(eps, counts)
        for name, got, want in tuned.identities():
            assert got == pytest.approx(want, rel=1e-12), name


def test_dynamic_schedule_closed_forms():
    tuned = tune_dynamic_parameters(0.1, [2, 2], U=1.0)
    m = 4
    L_g = nu_constant(m) * (np.sqrt(m) / 0.1) ** (m + 1)
    assert tuned.L_g == pytest.approx(L_g, rel=1e-12)
    assert tuned.eps_4 == pytest.approx(0.2 / (np.sqrt(m) * L_g), rel=1e-12)
    assert tuned.eps_c == tuned.eps_2 == pytest.approx(0.1 * tuned.eps_4)
    assert tuned.L_c == pytest.approx((1.0 + 2 * L_g) / (0.1 * tuned.eps_4),
                                      rel=1e-12)
    # two nondegenerate simplices of diameter sqrt(2) each
    assert tuned.gamma == pytest.approx(gamma_operational(m, 2.0), rel=1e-12)
    d = tuned.to_dict()
    assert d["eps_5"] == pytest.approx(0.3)
    assert d["eps_3"] == pytest.approx(0.3 * tuned.eps_4)
    with pytest.raises(ValueError):
        tune_dynamic_parameters(0.0, [2, 2])


# === sampling ==============================================================


def test_sample_index_cells():
    probs = np.array([0.25, 0.25, 0.5])
    assert sample_index(probs, 0.0) == 0
    assert sample_index(probs, 0.2499) == 0
    assert sample_index(probs, 0.25) == 1
    assert sample_index(probs, 0.4999) == 1
    assert sample_index(probs, 0.5) == 2
    assert sample_index(probs, 0.9999) == 2


def test_sample_index_skips_zero_mass():
    assert sample_index(np.array([0.5, 0.0, 0.5]), 0.5) == 2
    assert sample_index(np.array([1.0, 0.0, 0.0]), 0.9999) == 0


# === the learning dynamic ==================================================


def coordination_run(T=2_500, seed=0):
    game = preset_game("coordination")
    config = desk_dynamic_config(game, T=T, seed=seed)
    return game, config, run_smooth_calibrated_learning(game, config)


def test_dynamic_run_coordination():
    game, config, res = coordination_run()
    assert res.forecasts.shape == (2_500, 4)
    assert res.ne_fraction(0.3) >= 0.9
    assert res.diagnostics["fp_fraction_fine"] == 1.0
    assert res.diagnostics["invariant_checks"] == 2
    # every profile is a pair of distributions
    np.testing.assert_allclose(res.profiles[:, :2].sum(axis=1), 1.0,
                               atol=1e-9)
    snapped = np.array([config.forecaster_config.grid.snap(c)
                        for c in res.forecasts[::500]])
    np.testing.assert_array_equal(snapped, res.forecasts[::500])


def test_dynamic_run_deterministic_replay():
    _, _, first = coordination_run(T=400)
    _, _, second = coordination_run(T=400)
    np.testing.assert_array_equal(first.forecasts, second.forecasts)
    np.testing.assert_array_equal(first.actions, second.actions)
    _, _, other = coordination_run(T=400, seed=3)
    assert np.any(other.actions != first.actions)


def test_ne_fraction_monotone_in_eps():
    _, _, res = coordination_run(T=400)
    fractions = [res.ne_fraction(e) for e in (0.0, 0.1, 0.3, 1.0, 3.0)]
    assert fractions == sorted(fractions)
    assert fractions[-1] == 1.0


def test_proof_chain_report_holds():
    _, _, res = coordination_run()
    report = proof_chain_report(res)
    assert report["triangle_holds"]
    assert report["markov_holds"]
    assert report["K_T"] >= 0.0
    assert report["K_smooth"] <= report["profile_forecast_bound"]
    # the Markov bound is plain arithmetic on the same arrays
    eps_4 = res.config.constants["eps_4"]
    frac = float(np.mean(res.br_gaps > eps_4))
    assert frac == report["frac_br_gap_beyond_eps4"]
    assert frac <= float(np.mean(res.br_gaps)) / eps_4 + 1e-12


def test_dominant_action_game_locks():
    # one player, one strictly dominant action: the smooth best reply is
    # constant, so play sits on it from the first period
    game = FiniteGame.build([np.array([0.0, 1.0])])
    config = desk_dynamic_config(game, T=200, seed=0)
    res = run_smooth_calibrated_learning(game, config)
    np.testing.assert_allclose(res.profiles,
                               np.tile([0.0, 1.0], (200, 1)), atol=1e-12)
    assert res.ne_fraction(1e-9) == 1.0
    assert np.all(res.actions == 1)


def test_engine_reference_invariant_checked():
    _, _, res = coordination_run(T=2_500)
    assert res.diagnostics["invariant_checks"] == 2


# === continuous variant ====================================================


def test_quasiconcavity_spot_checks():
    assert spot_check_quasiconcavity(preset_continuous("quadratic_solo"))
    assert spot_check_quasiconcavity(preset_continuous("team_quadratic"))
    with pytest.raises(KeyError):
        preset_continuous("cournot")


def rigged_convex_game():
    dom = ConvexDomain.product([ConvexDomain.box([0.0], [1.0])])
    return ContinuousGame(payoffs=(lambda v: (v[0] - 0.5) ** 2,),
                          domain=dom, lipschitz=2.0, name="rigged")


def test_continuous_quadratic_settles_on_optimum():
    game = preset_continuous("quadratic_solo")
    config = desk_continuous_config(game, T=2_000, seed=0)
    res = run_continuous_dynamic(game, config)
    assert res.quasiconcave_ok
    assert res.pne_fraction(0.1, burn_in=100) >= 0.9
    assert abs(float(res.plays[-200:].mean()) - 0.3) <= 0.05


def test_continuous_team_coordinates():
    game = preset_continuous("team_quadratic")
    config = desk_continuous_config(game, T=2_000, seed=0)
    res = run_continuous_dynamic(game, config)
    assert res.pne_fraction(0.1, burn_in=200) >= 0.7
    late = res.plays[-200:]
    assert float(np.abs(late[:, 0] - late[:, 1]).mean()) <= 0.1


def test_continuous_warns_without_quasiconcavity():
    game = rigged_convex_game()
    config = desk_continuous_config(game, T=30, seed=0)
    with pytest.warns(RuntimeWarning, match="quasi-concavity"):
        res = run_continuous_dynamic(game, config)
    assert not res.quasiconcave_ok


# === exhaustive search =====================================================


def test_profile_grid_small_denominators():
    mp = preset_game("matching_pennies")
    grid = profile_grid(mp, max_denominator=2)
    assert len(grid) == 9
    keys = {tuple(p.concat().round(12)) for p in grid}
    assert len(keys) == 9
    # denominator-1 (pure) candidates come first
    for prof in grid[:4]:
        assert set(np.concatenate(prof.parts)) <= {0.0, 1.0}


def test_exhaustive_search_prisoners_dilemma():
    pd = preset_game("prisoners_dilemma")
    res = run_exhaustive_search(pd, T=10)
    assert res.lock_period == 1
    np.testing.assert_array_equal(res.locked.concat(), [0, 1, 0, 1])
    assert np.all(res.signals == 0)
    np.testing.assert_array_equal(res.profiles,
                                  np.tile([0, 1, 0, 1], (10, 1)))


def test_exhaustive_search_matching_pennies():
    mp = preset_game("matching_pennies")
    res = run_exhaustive_search(mp, grid=profile_grid(mp, 2), T=20)
    assert res.lock_period == 7
    np.testing.assert_allclose(res.locked.concat(), [0.5] * 4)
    assert np.any(res.signals[:6] == 1)      # someone kept searching
    assert np.all(res.signals[7:] == 0)
    np.testing.assert_allclose(res.profiles[7:], np.tile([0.5] * 4, (13, 1)))


def test_exhaustive_search_needs_an_equilibrium_on_the_grid():
    mp = preset_game("matching_pennies")
    with pytest.raises(ValueError, match="eps-equilibrium"):
        run_exhaustive_search(mp, grid=profile_grid(mp, 1), T=10)
    # loosening eps makes the first pure candidate acceptable
    res = run_exhaustive_search(mp, grid=profile_grid(mp, 1), eps=2.0, T=5)
    assert res.lock_period == 1


def test_exhaustive_search_locks_on_all_presets():
    for name in PRESET_GAMES:
        game = preset_game(name)
        res = run_exhaustive_search(game, grid=profile_grid(game, 3), T=200)
        assert res.locked is not None, name
        assert eps_nash_check(game, res.locked, 1e-9)[0], name
