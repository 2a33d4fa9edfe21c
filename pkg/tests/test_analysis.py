import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from rppi.analysis import (Scalogram, average_scalograms, frequency_grid, input_scalograms,
                           morlet_cwt, morlet_kernel, spectral_spread)
from rppi.runner import RunLog

DT = 0.1


def test_kernel_is_hermitian_and_normalized():
    k = morlet_kernel(2.0, DT)
    assert_allclose(k, np.conj(k[::-1]), atol=1e-15)
    # the Gaussian envelope integrates to one
    assert_allclose(np.abs(k).sum() * DT, 1.0, rtol=1e-4)


def test_sinusoid_peaks_at_its_frequency():
    t = np.arange(600) * DT
    freqs = frequency_grid(600, DT)
    s = morlet_cwt(np.cos(2 * np.pi * 0.5 * t), DT, freqs)
    mid = s.magnitudes[:, 200:400].mean(axis=1)
    best = np.argmin(np.abs(freqs - 0.5))
    assert abs(int(np.argmax(mid)) - best) <= 1
    # a unit-amplitude tone gives a magnitude close to one half
    assert_allclose(mid[best], 0.5, rtol=0.05)


def test_zero_signal_gives_zero_scalogram():
    s = morlet_cwt(np.zeros(100), DT, frequency_grid(100, DT, n=16))
    assert_array_equal(s.magnitudes, 0.0)
    assert spectral_spread(s) == 0.0


def test_two_tones_give_two_peaks():
    t = np.arange(1000) * DT
    freqs = frequency_grid(1000, DT, n=96)
    s = morlet_cwt(np.sin(2 * np.pi * 0.2 * t) + np.sin(2 * np.pi * 2.0 * t), DT, freqs)
    mid = s.magnitudes[:, 400:600].mean(axis=1)
    peaks = [i for i in range(1, len(mid) - 1) if mid[i] > mid[i - 1] and mid[i] >= mid[i + 1]]
    found = sorted(freqs[peaks][np.argsort(mid[peaks])[-2:]])
    assert abs(np.log(found[0] / 0.2)) < 0.05
    assert abs(np.log(found[1] / 2.0)) < 0.05


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_magnitude_is_absolutely_homogeneous(seed, c):
    x = np.random.default_rng(seed).standard_normal(64)
    freqs = frequency_grid(64, DT, n=8)
    a = morlet_cwt(x, DT, freqs).magnitudes
    b = morlet_cwt(-c * x, DT, freqs).magnitudes
    assert_allclose(b, c * a, rtol=1e-10, atol=1e-12)


def test_triangle_inequality_from_linearity():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(200), rng.standard_normal(200)
    freqs = frequency_grid(200, DT, n=12)
    sx, sy, sxy = (morlet_cwt(v, DT, freqs).magnitudes for v in (x, y, x + y))
    assert np.all(sxy <= sx + sy + 1e-12)


def test_time_shift_moves_interior_columns():
    x = np.zeros(400)
    x[150] = 1.0
    freqs = np.array([0.5, 1.0, 2.0])
    a = morlet_cwt(x, DT, freqs).magnitudes
    b = morlet_cwt(np.roll(x, 30), DT, freqs).magnitudes
    assert_allclose(b[:, 100:300], a[:, 70:270], atol=1e-14)


def test_frequency_grid_rules():
    g = frequency_grid(400, DT)
    assert g.size == 64
    assert_allclose([g[0], g[-1]], [2 / 40.0, 4.5])
    assert np.all(np.diff(np.log(g)) > 0)
    with pytest.raises(ValueError):
        frequency_grid(400, DT, f_max=5.0)
    with pytest.raises(ValueError):
        morlet_cwt(np.ones(50), DT, [6.0])
    with pytest.raises(ValueError):
        morlet_cwt(np.ones(3), DT, [1.0])


def test_spread_extremes():
    freqs, times = np.geomspace(0.1, 1.0, 10), np.arange(5.0)
    delta = np.zeros((10, 5))
    delta[3] = 2.0
    assert spectral_spread(Scalogram(times, freqs, delta)) == 0.0
    assert_allclose(spectral_spread(Scalogram(times, freqs, np.ones((10, 5)))), np.log(10))


def test_spread_window_and_errors():
    freqs, times = np.geomspace(0.1, 1.0, 4), np.arange(10.0)
    m = np.ones((4, 10))
    m[1:, 5:] = 0.0
    s = Scalogram(times, freqs, m)
    assert_allclose(spectral_spread(s, (0.0, 4.0)), np.log(4))
    assert spectral_spread(s, (5.0, 9.0)) == 0.0
    with pytest.raises(ValueError):
        spectral_spread(s, (20.0, 30.0))


def test_noise_spreads_wider_than_sinusoid():
    t = np.arange(400) * DT
    freqs = frequency_grid(400, DT)
    tone = morlet_cwt(np.sin(2 * np.pi * 0.5 * t), DT, freqs)
    noise = morlet_cwt(np.random.default_rng(1).standard_normal(400), DT, freqs)
    assert spectral_spread(noise, (5.0, 35.0)) > spectral_spread(tone, (5.0, 35.0))


def test_spread_is_scale_invariant():
    x = np.random.default_rng(2).standard_normal(300)
    freqs = frequency_grid(300, DT, n=20)
    assert_allclose(spectral_spread(morlet_cwt(x, DT, freqs)),
                    spectral_spread(morlet_cwt(7.5 * x, DT, freqs)), rtol=1e-12)


def test_average_scalograms():
    freqs, times = np.array([0.5, 1.0]), np.arange(3.0)
    a = Scalogram(times, freqs, np.ones((2, 3)))
    b = Scalogram(times, freqs, 3 * np.ones((2, 3)))
    assert_array_equal(average_scalograms([a, b]).magnitudes, 2.0)
    with pytest.raises(ValueError):
        average_scalograms([a, Scalogram(times + 1, freqs, np.ones((2, 3)))])
    with pytest.raises(ValueError):
        average_scalograms([])


def test_scalogram_csv_round_trip():
    s = morlet_cwt(np.random.default_rng(3).standard_normal(40), DT, np.array([0.5, 1.0, 2.0]))
    text = s.to_csv()
    assert text.splitlines()[0] == "time_s,freq_hz,magnitude"
    back = Scalogram.from_csv(text)
    assert_array_equal(back.times, s.times)
    assert_array_equal(back.frequencies, s.frequencies)
    assert_array_equal(back.magnitudes, s.magnitudes)
    assert_allclose(s.cone_of_influence, np.sqrt(2) / s.frequencies)


def test_input_scalograms_from_logs():
    logs = []
    for seed in range(2):
        u = np.random.default_rng(seed).standard_normal((50, 2))
        logs.append(RunLog(np.arange(50), u, np.zeros((50, 1)), np.zeros((50, 1)),
                           np.zeros(50), np.zeros(50)))
    out = input_scalograms(logs, DT, channel=1)
    assert len(out) == 2
    assert_array_equal(out[1].magnitudes,
                       morlet_cwt(logs[1].u[:, 1], DT, frequency_grid(50, DT)).magnitudes)
