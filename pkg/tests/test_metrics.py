import numpy as np
import pytest

from roomwalk import codec as cd
from roomwalk import metrics as M


def test_psnr_identity_caps():
    a = np.random.default_rng(0).uniform(size=(8, 8, 3))
    assert M.psnr(a, a) == 99.0


def test_psnr_closed_form():
    a = np.zeros((4, 4, 3))
    b = np.full((4, 4, 3), 0.5)
    assert M.psnr(a, b) == pytest.approx(6.0206, abs=1e-3)


def test_psnr_symmetric_and_shape_checked():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(5, 5, 3)), rng.uniform(size=(5, 5, 3))
    assert M.psnr(a, b) == M.psnr(b, a)
    with pytest.raises(M.MetricError, match="shape mismatch"):
        M.psnr(a, np.zeros((4, 5, 3)))


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(2)
    base = rng.uniform(0.3, 0.7, size=(16, 16, 3))
    values = []
    for amp in (0.01, 0.05, 0.1, 0.2):
        noisy = np.clip(base + rng.uniform(-amp, amp, size=base.shape), 0, 1)
        values.append(M.psnr(base, noisy))
    assert all(x > y for x, y in zip(values, values[1:]))


class StubCodec:
    """Feature extractor stub: mean color per frame, repeated to 3 dims."""

    def encode_features(self, frames):
        return np.asarray(frames).mean(axis=(1, 2))


def test_feature_stats_identical_frames_zero_cov():
    frame = np.full((4, 4, 3), 0.25)
    stats = M.feature_stats(np.stack([frame] * 5), StubCodec())
    np.testing.assert_allclose(stats.cov, 0.0, atol=1e-12)


def test_feature_stats_mean_is_midpoint():
    a = np.full((4, 4, 3), 0.2)
    b = np.full((4, 4, 3), 0.6)
    stats = M.feature_stats(np.stack([a, b]), StubCodec())
    np.testing.assert_allclose(stats.mean, 0.4, atol=1e-12)


def test_feature_stats_matches_two_pass_reference():
    rng = np.random.default_rng(3)
    frames = rng.uniform(size=(100, 4, 4, 3))
    stats = M.feature_stats(frames, StubCodec())
    feats = frames.mean(axis=(1, 2))
    mean_ref = feats.mean(axis=0)
    centered = feats - mean_ref
    cov_ref = centered.T @ centered / (feats.shape[0] - 1)
    np.testing.assert_allclose(stats.mean, mean_ref, atol=1e-10)
    np.testing.assert_allclose(stats.cov, cov_ref, atol=1e-10)


def test_feature_stats_permutation_invariant():
    rng = np.random.default_rng(4)
    frames = rng.uniform(size=(10, 4, 4, 3))
    s1 = M.feature_stats(frames, StubCodec())
    s2 = M.feature_stats(frames[::-1], StubCodec())
    np.testing.assert_allclose(s1.mean, s2.mean, atol=1e-12)
    np.testing.assert_allclose(s1.cov, s2.cov, atol=1e-12)


def test_feature_stats_needs_two_frames():
    with pytest.raises(M.MetricError, match="at least 2"):
        M.feature_stats(np.zeros((1, 4, 4, 3)), StubCodec())


def one_d(mu, var):
    return M.FeatureStats(np.array([mu]), np.array([[var]]))


def test_frechet_identity_zero():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(20, 3))
    cov = np.cov(a, rowvar=False)
    s = M.FeatureStats(a.mean(axis=0), cov)
    assert M.frechet(s, s) == pytest.approx(0.0, abs=1e-8)


def test_frechet_scalar_closed_forms():
    assert M.frechet(one_d(0.0, 1.0), one_d(1.0, 1.0)) == pytest.approx(1.0, abs=1e-8)
    assert M.frechet(one_d(0.0, 4.0), one_d(0.0, 1.0)) == pytest.approx(1.0, abs=1e-8)


def test_frechet_symmetric_nonnegative():
    rng = np.random.default_rng(6)
    x, y = rng.normal(size=(30, 4)), rng.normal(size=(30, 4)) + 0.5
    sx = M.FeatureStats(x.mean(axis=0), np.cov(x, rowvar=False))
    sy = M.FeatureStats(y.mean(axis=0), np.cov(y, rowvar=False))
    assert M.frechet(sx, sy) == pytest.approx(M.frechet(sy, sx), abs=1e-10)
    assert M.frechet(sx, sy) >= 0.0


def test_frechet_dimension_mismatch():
    with pytest.raises(M.MetricError, match="dimension mismatch"):
        M.frechet(one_d(0, 1), M.FeatureStats(np.zeros(2), np.eye(2)))


def test_frechet_with_real_codec_features():
    cfg = cd.CodecConfig(height=16, width=16, factor=4, d_b=4, codebook_size=16, channels=(8, 12))
    codec = cd.Codec(cfg, seed=0)
    rng = np.random.default_rng(7)
    reds = np.clip(rng.normal(0.7, 0.05, size=(12, 16, 16, 3)), 0, 1)
    blues = np.clip(rng.normal(0.3, 0.05, size=(12, 16, 16, 3)), 0, 1)
    s_red = M.feature_stats(reds, codec)
    s_blue = M.feature_stats(blues, codec)
    assert M.frechet(s_red, s_blue) > M.frechet(s_red, s_red) + 1e-6


def test_write_report(tmp_path):
    rows = [{"variant": "full", "n_frames": 10, "psnr_mean": 21.5, "frechet": 0.4}]
    path = tmp_path / "report.csv"
    M.write_report(path, rows)
    text = path.read_text().strip().splitlines()
    assert text[0] == "variant,n_frames,psnr_mean,frechet"
    assert text[1].startswith("full,10,21.5,")
