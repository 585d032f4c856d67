import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sustain.noise import (MIN_MC_SAMPLES, NoiseSpec, TeacherModel, gain_report, inject_noise,
                           measure_teacher_accuracy, monte_carlo_alignment, monte_carlo_teacher_agreement,
                           predicted_gain, predicted_teacher_noise)

unit = st.floats(0.0, 1.0)


def test_inject_noise_extremes():
    y = np.random.default_rng(0).integers(0, 2, size=(200, 4))
    np.testing.assert_array_equal(inject_noise(y, 1.0, seed=3), y)
    np.testing.assert_array_equal(inject_noise(y, 0.0, seed=3), 1 - y)


def test_inject_noise_rate_and_determinism():
    y = np.zeros(100_000, dtype=int)
    obs = inject_noise(y, 0.7, seed=1)
    assert abs(np.mean(obs == y) - 0.7) <= 0.005
    np.testing.assert_array_equal(obs, inject_noise(y, 0.7, seed=1))


def test_inject_noise_per_class():
    y = np.ones((50_000, 3), dtype=int)
    obs = inject_noise(y, [1.0, 0.5, 0.0], seed=2)
    rates = (obs == y).mean(axis=0)
    assert rates[0] == 1.0 and rates[2] == 0.0
    assert abs(rates[1] - 0.5) < 3 * math.sqrt(0.25 / 50_000)


@pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan")])
def test_inject_noise_rejects_bad_delta(bad):
    with pytest.raises(ValueError):
        inject_noise(np.zeros(3, dtype=int), bad)
    with pytest.raises(ValueError):
        NoiseSpec(bad)


def test_non_binary_labels_rejected():
    with pytest.raises(ValueError):
        inject_noise(np.array([0, 2]), 0.5)


def test_regime():
    assert NoiseSpec(0.3).regime() == "high"
    assert NoiseSpec(0.5).regime() == "low"
    assert NoiseSpec([0.2, 0.8]).regime() == "mixed"
    assert not NoiseSpec([0.2, 0.8]).is_uniform


def test_teacher_noise_examples():
    assert predicted_teacher_noise(0.6, 0.3) == pytest.approx(0.46, abs=1e-15)
    for e in (0.0, 0.3, 0.9):
        assert predicted_teacher_noise(e, 0.5) == pytest.approx(0.5, abs=1e-15)
    for d in (0.1, 0.4, 0.8):
        assert predicted_teacher_noise(1.0, d) == pytest.approx(d, abs=1e-15)


def test_gain_examples():
    g = predicted_gain(0.6, 0.3, 0.3)
    assert g.stated_gain == pytest.approx(0.16, abs=1e-15)
    assert g.alignment == pytest.approx(0.412, abs=1e-15)
    assert g.proof_gain == pytest.approx(0.7 * 0.16, abs=1e-15)
    assert g.improves and g.strict_improves
    for e in (0.0, 0.5, 1.0):
        for a in (0.0, 0.5, 1.0):
            g = predicted_gain(e, 0.5, a)
            assert g.stated_gain == 0.0 and abs(g.proof_gain) < 1e-15 and not g.improves
    g = predicted_gain(0.6, 0.7, 0.3)
    assert g.stated_gain < 0 and not g.improves
    with pytest.raises(ValueError):
        predicted_gain(1.2, 0.3, 0.3)


def test_default_teacher_alone_never_strictly_improves():
    g = predicted_gain(0.6, 0.3, 1.0)
    assert g.improves and not g.strict_improves and g.proof_gain == 0.0


@settings(max_examples=200, deadline=None)
@given(eps=unit, delta=unit, alpha=unit)
def test_proof_gain_identity(eps, delta, alpha):
    g = predicted_gain(eps, delta, alpha)
    assert 0.0 <= g.delta_bar <= 1.0
    assert g.proof_gain == pytest.approx((1 - alpha) * (1 - eps) * (1 - 2 * delta), abs=1e-12)
    assert g.improves == (delta < 0.5 and eps < 1.0) or g.stated_gain == 0.0


@settings(max_examples=200, deadline=None)
@given(eps=st.floats(0.0, 0.999), d1=unit, d2=unit)
def test_teacher_noise_monotonicity(eps, d1, d2):
    lo, hi = sorted((d1, d2))
    if hi - lo < 1e-6:
        return
    a, b = predicted_teacher_noise(eps, lo), predicted_teacher_noise(eps, hi)
    # slope in delta is 2*eps - 1
    if eps < 0.5:
        assert b < a
    elif eps > 0.5:
        assert b > a
    if hi < 0.5:
        assert predicted_teacher_noise(eps, hi) > hi


def test_monte_carlo_examples():
    for teacher in ("composed", "direct"):
        mc = monte_carlo_alignment(0.3, 0.6, 0.3, 100_000, seed=4, teacher=teacher)
        assert mc.within(0.412)
        assert not mc.low_sample
        assert monte_carlo_alignment(0.3, 0.6, 1.0, 100_000, seed=5, teacher=teacher).within(0.3)
        assert monte_carlo_alignment(0.3, 0.6, 0.0, 100_000, seed=6, teacher=teacher).within(0.46)
        agree = monte_carlo_teacher_agreement(0.3, 0.6, 100_000, seed=7, teacher=teacher)
        assert agree.within(0.46, binomial=0.46)


def test_low_sample_flag():
    assert monte_carlo_alignment(0.3, 0.6, 0.3, MIN_MC_SAMPLES - 1).low_sample
    assert not monte_carlo_alignment(0.3, 0.6, 0.3, MIN_MC_SAMPLES).low_sample
    with pytest.raises(ValueError):
        monte_carlo_alignment(0.3, 0.6, 0.3, 2000, teacher="nope")


def test_composed_teacher_agrees_with_observed_at_eps():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, size=100_000)
    p = TeacherModel(0.8).sample_composed(y, rng)
    assert abs(np.mean(p == y) - 0.8) < 3 * math.sqrt(0.16 / 100_000)


def test_measure_teacher_accuracy():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, size=(400, 3))
    y[:, 2] = 0
    acc = measure_teacher_accuracy(y.astype(float), y)
    assert acc[0] == acc[1] == 1.0 and math.isnan(acc[2])
    const = measure_teacher_accuracy(np.full((400, 3), 0.4999), y)
    np.testing.assert_allclose(const[:2], 1 - y[:, :2].mean(axis=0))
    y2 = rng.integers(0, 2, size=(20_000, 1))
    rand = measure_teacher_accuracy(rng.uniform(size=(20_000, 1)), y2)
    assert abs(rand[0] - 0.5) < 3 * math.sqrt(0.25 / 20_000)


def test_gain_report_rows():
    rep = gain_report([0.6, 1.0], 0.3, 0.3, n_samples=20_000, seed=1)
    rows = list(rep.rows())
    assert rows[0]["stated_gain"] == pytest.approx(0.16) and rows[0]["improves"]
    assert rows[1]["stated_gain"] == 0.0 and not rows[1]["improves"]
    assert rep.regime == "high"
    assert abs(rows[0]["empirical_alignment"] - 0.412) < 0.02
