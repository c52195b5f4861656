import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torawnet.sinc import bandpass_kernel, init_linear_scale, magnitude_response, sinc_forward, window_taps
from torawnet.tensor import Tensor, finite_diff_check


def test_linear_init_values():
    fb = init_linear_scale(128, 129, 16000)
    assert fb.f_low.data[0] == 30.0
    assert fb.f_low.data[127] == pytest.approx(7937.734375)
    np.testing.assert_allclose(np.diff(fb.f_low.data), 62.265625)
    np.testing.assert_allclose(fb.band.data, 62.265625)


def test_single_filter_covers_whole_range():
    fb = init_linear_scale(1)
    assert fb.f_low.data[0] == 30.0
    assert fb.f_low.data[0] + fb.band.data[0] == 8000.0
    f1, f2 = fb.cutoffs_hz()
    assert f1[0] == 60.0  # the 30 Hz floor is added on top of |f_low|
    assert f2[0] == 8000.0


def test_even_length_rejected():
    with pytest.raises(ValueError, match="odd"):
        init_linear_scale(4, 128)


def test_equal_cutoffs_give_zero_filter():
    f = Tensor(np.array([500.0, 2000.0]))
    g = bandpass_kernel(f, f, 33, 16000, window_taps(33))
    assert np.all(g.data == 0)


def test_center_tap_rectangular():
    fb = init_linear_scale(8, 65, window="rectangular")
    f1, f2 = fb.cutoffs_hz()
    g = fb.kernel().data[:, 0, :]
    np.testing.assert_allclose(g[:, 32], 2 * (f2 - f1) / 16000, rtol=1e-14)


def test_response_peaks_inside_band():
    fb = init_linear_scale(16, 129, window="hamming")
    f1, f2 = fb.cutoffs_hz()
    freqs, mags = magnitude_response(fb.kernel().data, 16000, n_fft=4096)
    for i in range(16):
        peak = freqs[np.argmax(mags[i])]
        assert f1[i] <= peak <= f2[i]


def test_unit_norm_rows():
    fb = init_linear_scale(16, 129, unit_norm=True)
    np.testing.assert_allclose(np.linalg.norm(fb.kernel().data[:, 0, :], axis=1), 1.0)


def test_impulse_response_is_reversed_taps():
    fb = init_linear_scale(4, 9)
    x = np.zeros((1, 1, 17))
    x[0, 0, 8] = 1.0
    y = sinc_forward(fb, Tensor(x)).data[0]
    np.testing.assert_allclose(y[:, :9], fb.kernel().data[:, 0, ::-1], atol=1e-15)


def test_output_length():
    fb = init_linear_scale(2, 129)
    assert sinc_forward(fb, Tensor(np.zeros((1, 1, 64600)))).shape == (1, 2, 64472)


def test_short_waveform_rejected():
    with pytest.raises(ValueError, match="shorter"):
        sinc_forward(init_linear_scale(2, 129), Tensor(np.zeros((1, 1, 100))))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=6))
def test_cutoffs_valid_for_any_parameters(raw):
    fb = init_linear_scale(3, 33)
    fb.f_low.data = np.array(raw[:3])
    fb.band.data = np.array(raw[3:])
    f1, f2 = fb.cutoffs_hz()
    assert np.all(f1 > 0) and np.all(f2 <= 8000) and np.all(f2 > f1)


def test_sign_flip_invariance():
    fb = init_linear_scale(8, 33)
    before = fb.kernel().data.copy()
    fb.f_low.data = -fb.f_low.data
    fb.band.data = -fb.band.data
    np.testing.assert_array_equal(fb.kernel().data, before)


def test_frozen_filterbank_is_linear():
    fb = init_linear_scale(4, 33)
    fb.freeze()
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(1, 1, 100)), rng.normal(size=(1, 1, 100))
    lhs = sinc_forward(fb, Tensor(2 * a - 3 * b)).data
    rhs = 2 * sinc_forward(fb, Tensor(a)).data - 3 * sinc_forward(fb, Tensor(b)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    assert fb.parameters() == []


@pytest.mark.parametrize("unit_norm", [False, True])
def test_gradient_wrt_cutoffs(unit_norm):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 1, 60))
    probe = rng.normal(size=(2, 3, 60 - 33 + 1))
    fb = init_linear_scale(3, 33, unit_norm=unit_norm)
    scale = 1000.0  # parameters in kHz so the relative error is on O(1) gradients

    def f(f_low, band):
        fb.f_low, fb.band = f_low * scale, band * scale
        return (sinc_forward(fb, Tensor(x)) * Tensor(probe)).sum()

    point = [np.array([0.3, 1.7, 4.1]), np.array([0.5, 0.9, 1.3])]
    assert finite_diff_check(f, point) < 1e-4
