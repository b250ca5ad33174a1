"""Forecaster vs. adversary game loop: traces, leak-equivalence, seeds."""

import numpy as np
import pytest

from smoothcal.forecaster import desk_config
from smoothcal.game import (Adversary, AlternatingForecaster,
                            ConstantForecaster, counter_uniform,
                            fixed_point_fraction, play,
                            weak_calibrated_forecaster)
from smoothcal.scores import SmoothingKernel, calibration_score, \
    smoothed_score, weak_score


def small_forecaster():
    return weak_calibrated_forecaster(desk_config(net_radius=0.25, R=40))


# === counter stream ========================================================


def test_counter_uniform_is_deterministic_and_keyed():
    assert counter_uniform(7, 3) == counter_uniform(7, 3)
    assert counter_uniform(7, 3) != counter_uniform(7, 4)
    assert counter_uniform(8, 3) != counter_uniform(7, 3)
    draws = np.array([counter_uniform(0, t) for t in range(2000)])
    assert np.all((draws >= 0) & (draws < 1))
    assert abs(draws.mean() - 0.5) < 0.05


# === hand traces ===========================================================


def test_alternating_vs_threshold_hand_trace():
    t = play(AlternatingForecaster(0.5001, 0.4999),
             Adversary.threshold(0.5), T=4)
    np.testing.assert_allclose(t.forecasts[:, 0],
                               [0.5001, 0.4999, 0.5001, 0.4999], atol=0)
    np.testing.assert_array_equal(t.actions[:, 0], [0.0, 1.0, 0.0, 1.0])
    assert calibration_score(t) == pytest.approx(0.5001, rel=1e-12)
    assert smoothed_score(t, SmoothingKernel.tent(0.01)) <= 0.01


def test_constant_vs_constant_is_calibrated():
    t = play(ConstantForecaster(0.3), Adversary.constant(0.3), T=25)
    assert calibration_score(t) == 0.0
    assert t.T == 25


def test_play_rejects_empty_run():
    with pytest.raises(ValueError):
        play(ConstantForecaster(0.5), Adversary.constant(0.5), T=0)


# === reproducibility and leak-equivalence ==================================


def test_seed_determinism():
    def run():
        return play(small_forecaster(), Adversary.seeded_random(), T=60,
                    seed=123)
    t1, t2 = run(), run()
    assert np.array_equal(t1.forecasts, t2.forecasts)
    assert np.array_equal(t1.actions, t2.actions)
    t3 = play(small_forecaster(), Adversary.seeded_random(), T=60, seed=124)
    assert not np.array_equal(t3.actions, t2.actions)


def test_leak_equivalence_for_deterministic_forecaster():
    # the simulating adversary in standard mode reproduces the leaky run
    leaky = play(small_forecaster(),
                 Adversary(kind="simulating_best_response", mode="leaky"),
                 T=80)
    standard = play(small_forecaster(),
                    Adversary.simulating_best_response(), T=80)
    assert np.array_equal(leaky.forecasts, standard.forecasts)
    assert np.array_equal(leaky.actions, standard.actions)


def test_adversary_validation():
    with pytest.raises(ValueError):
        Adversary(kind="clairvoyant")
    with pytest.raises(ValueError):
        Adversary(kind="threshold", mode="oracle")
    with pytest.raises(ValueError):
        Adversary.simulating_best_response(target="entropy")
    assert not Adversary.constant(0.5).needs_forecast()
    assert Adversary.threshold().needs_forecast()


# === calibration against attacks ===========================================


def test_threshold_beats_exact_calibration_not_smooth():
    t = play(small_forecaster(), Adversary.threshold(0.5), T=600)
    assert calibration_score(t) >= 0.45
    assert smoothed_score(t, SmoothingKernel.tent(0.1)) <= 0.1


def test_running_weak_attack_stays_contained():
    # the running-sum attacker milks the steady-state bias of the small
    # profile, so the score plateaus instead of decaying; containment
    # well below the trivial 0.5 is what the construction delivers here
    t = play(small_forecaster(),
             Adversary.simulating_best_response(target="running_weak"),
             T=1500)
    assert weak_score(t, lambda p: 1.0) <= 0.2


# === reaction adversaries and fixed points =================================


def test_fixed_point_fraction_identity_reaction():
    t = play(small_forecaster(), Adversary.reaction(lambda c: c), T=40)
    assert fixed_point_fraction(t, lambda c: c, tol=0.0) == 1.0


def test_forecasts_track_reaction_fixed_point():
    g = lambda c: 1.0 - c[0]
    t = play(small_forecaster(), Adversary.reaction(g), T=800)
    assert fixed_point_fraction(t, g, tol=0.1) >= 0.8
    # the unique fixed point of 1 - c is 0.5
    assert abs(t.forecasts[-200:, 0].mean() - 0.5) <= 0.05


def test_forecasts_concentrate_at_constant_reaction():
    g = lambda c: np.array([0.7])
    t = play(small_forecaster(), Adversary.reaction(g), T=800)
    assert fixed_point_fraction(t, g, tol=0.1) >= 0.8
