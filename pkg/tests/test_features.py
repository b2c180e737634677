import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covid_acoustics.audio_io import AudioClip, preprocess
from covid_acoustics.errors import TooShort
from covid_acoustics.features import (
    LOG_FLOOR,
    MelFilterbank,
    append_deltas,
    build_mel_filterbank,
    deltas,
    extract_features,
    hz_to_mel,
    load_features,
    log_mel,
    mel_to_hz,
    mvn_normalize,
    n_frames_for,
    save_features,
    stft_power,
)


def periodic_hann(n):
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def direct_dft_power(frame):
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(n) / n)
    return np.abs(basis @ frame) ** 2


class TestStft:
    def test_zero_signal(self):
        p = stft_power(np.zeros(2048))
        assert p.shape == (513, 3)
        assert np.all(p == 0)

    def test_too_short(self):
        with pytest.raises(TooShort):
            stft_power(np.ones(1023))

    def test_matches_direct_dft(self):
        x = np.random.default_rng(0).normal(size=1024 + 441)
        p = stft_power(x)
        w = periodic_hann(1024)
        for j in range(2):
            frame = x[j * 441:j * 441 + 1024]
            np.testing.assert_allclose(p[:, j], direct_dft_power(frame * w), rtol=1e-9, atol=1e-9)

    def test_constant_signal(self):
        p = stft_power(np.ones(1024))[:, 0]
        w = periodic_hann(1024)
        assert p[0] == pytest.approx(w.sum() ** 2, rel=1e-12)
        # the Hann window leaks into the first neighbouring bin: |W(1)| = N/4
        assert p[1] == pytest.approx((1024 / 4) ** 2, rel=1e-12)
        assert p[2:].max() <= 1e-6 * p[0]
        np.testing.assert_allclose(p, direct_dft_power(w), rtol=1e-9, atol=1e-12)

    def test_tone_bin(self):
        f = 100 * 44100 / 1024
        x = np.sin(2 * np.pi * f * np.arange(44100) / 44100)
        p = stft_power(x)
        assert np.all(np.argmax(p, axis=0) == 100)

    @pytest.mark.parametrize("n", [1024, 1464, 1465, 1466, 44100, 100000])
    def test_frame_count(self, n):
        assert stft_power(np.ones(n)).shape[1] == (n - 1024) // 441 + 1 == n_frames_for(n)


class TestMel:
    def test_mel_formula(self):
        assert hz_to_mel(700.0) == pytest.approx(2595 * np.log10(2), abs=1e-9)
        assert hz_to_mel(700.0) == pytest.approx(781.17, abs=0.01)
        np.testing.assert_allclose(mel_to_hz(hz_to_mel([0, 100, 8000, 22050])), [0, 100, 8000, 22050])

    def test_filterbank_shape(self):
        fb = build_mel_filterbank()
        assert fb.weights.shape == (64, 513)
        assert np.all(fb.weights >= 0)
        assert np.all(fb.weights.sum(axis=1) > 0)
        assert np.all(np.diff(fb.centers_hz) > 0)

    def test_no_holes(self):
        fb = build_mel_filterbank()
        bins = np.arange(513) * 44100 / 1024
        inside = (bins >= fb.centers_hz[0]) & (bins <= fb.centers_hz[-1])
        assert np.all(fb.weights[:, inside].sum(axis=0) > 0)

    def test_centers_uniform_in_mel(self):
        fb = build_mel_filterbank()
        m = hz_to_mel(fb.centers_hz)
        np.testing.assert_allclose(np.diff(m), hz_to_mel(22050) / 65, rtol=1e-9)

    def test_triangle_spans_neighbours(self):
        fb = build_mel_filterbank()
        bins = np.arange(513) * 44100 / 1024
        for i in range(1, 63):
            nz = bins[fb.weights[i] > 0]
            assert nz.min() > fb.centers_hz[i - 1] and nz.max() < fb.centers_hz[i + 1]

    def test_log_floor(self):
        out = log_mel(np.zeros((513, 4)))
        np.testing.assert_array_equal(out, np.log(LOG_FLOOR))

    def test_doubling(self):
        p = np.random.default_rng(1).random((513, 3)) * 100
        np.testing.assert_allclose(log_mel(2 * p) - log_mel(p), np.log(2), atol=1e-9)

    def test_hand_example(self):
        fb = MelFilterbank(np.array([[0.5, 0.25]]), np.array([1.0]), 0.0, 2.0)
        out = log_mel(np.array([[4.0], [8.0]]), fb)
        assert out[0, 0] == pytest.approx(np.log(4.0 + 1e-10))


class TestDeltas:
    def test_constant(self):
        d = append_deltas(np.full((64, 20), 3.0))
        assert np.all(d[64:] == 0)

    def test_ramp(self):
        x = np.tile(np.arange(10.0), (64, 1))
        d = deltas(x)
        np.testing.assert_allclose(d[:, 2:-2], 1.0)

    def test_edge_hand_value(self):
        # first frame of a ramp: padded values [0, 0, 0, 1, 2] -> (1*(1-0) + 2*(2-0)) / 10
        d = deltas(np.arange(10.0)[None])
        assert d[0, 0] == pytest.approx(0.5)

    def test_single_frame(self):
        d = append_deltas(np.random.default_rng(0).random((64, 1)))
        assert np.all(d[64:] == 0)

    def test_delta_of_delta(self):
        x = np.random.default_rng(2).random((64, 12))
        d = append_deltas(x)
        np.testing.assert_array_equal(d[128:], deltas(deltas(x)))


class TestMvn:
    def test_two_point(self):
        np.testing.assert_allclose(mvn_normalize(np.array([[1.0, 3.0]])).values, [[-1.0, 1.0]])

    def test_constant_row(self):
        assert np.all(mvn_normalize(np.full((1, 5), 7.0)).values == 0)

    def test_random_moments(self):
        x = np.random.default_rng(3).normal(size=(192, 100)) * 5 + 2
        out = mvn_normalize(x).values
        np.testing.assert_allclose(out.mean(axis=1), 0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=1), 1, atol=1e-4)


class TestExtract:
    def test_requires_44k(self):
        with pytest.raises(ValueError):
            extract_features(AudioClip(np.ones(5000), 16000))

    def test_deterministic(self):
        x = np.random.default_rng(4).normal(size=10000)
        clip = preprocess(AudioClip(x, 44100))
        np.testing.assert_array_equal(extract_features(clip).values, extract_features(clip).values)

    @pytest.mark.parametrize("c", [2.0, 0.125, 1024.0])
    def test_scale_invariance_exact(self, c):
        x = np.random.default_rng(5).normal(size=8000)
        a = extract_features(preprocess(AudioClip(x, 44100))).values
        b = extract_features(preprocess(AudioClip(c * x, 44100))).values
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(1e-4, 1e4))
    def test_scale_invariance_any(self, c):
        x = np.random.default_rng(5).normal(size=8000)
        a = extract_features(preprocess(AudioClip(x, 44100))).values
        b = extract_features(preprocess(AudioClip(c * x, 44100))).values
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_roundtrip(self, tmp_path):
        x = np.random.default_rng(6).normal(size=9000)
        feat = extract_features(AudioClip(x / np.abs(x).max(), 44100, "r"))
        save_features(feat, tmp_path / "r.feat")
        raw = (tmp_path / "r.feat").read_bytes()
        assert raw[:4] == b"CVAF"
        assert len(raw) == 12 + 4 * 192 * feat.n_frames
        back = load_features(tmp_path / "r.feat")
        assert back.source_id == "r"
        np.testing.assert_array_equal(back.values, feat.values.astype(np.float32))
