import numpy as np
import pytest

from advlab.config import ConfigError, CorpusConfig, FingerprintSpec
from advlab.datagen import (
    Dataset,
    _largest_remainder,
    gen_fake,
    gen_real,
    load_corpus,
    make_corpus,
    manifest_hash,
)


def radial_power_profile(img2d):
    """Radially averaged power spectrum and normalized frequency bins."""
    n = img2d.shape[0]
    spec = np.abs(np.fft.fft2(img2d - img2d.mean())) ** 2
    f = np.fft.fftfreq(n)
    radius = np.hypot(f[:, None], f[None, :])
    bins = np.linspace(0.0, 0.5, 33)
    prof = np.zeros(len(bins) - 1)
    centers = 0.5 * (bins[:-1] + bins[1:])
    for i in range(len(bins) - 1):
        m = (radius >= bins[i]) & (radius < bins[i + 1])
        prof[i] = spec[m].mean() if m.any() else np.nan
    return centers, prof


def fit_loglog_slope(freqs, power, lo=0.05, hi=0.4):
    m = (freqs >= lo) & (freqs <= hi) & np.isfinite(power) & (power > 0)
    x = np.log(freqs[m])
    y = np.log(power[m])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def test_gen_real_deterministic():
    a = gen_real(1234)
    b = gen_real(1234)
    assert np.array_equal(a, b)
    assert a.shape == (1, 64, 64)
    assert a.dtype == np.float32
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_gen_real_mean_pixel_band():
    means = [gen_real(s).mean() for s in range(300)]
    assert 0.35 <= float(np.mean(means)) <= 0.65


def test_gen_real_spectrum_slope():
    # least-squares log-log fit over the 0.05-0.4 band, averaged spectrum
    profs = []
    for s in range(40):
        f, p = radial_power_profile(gen_real(s)[0].astype(np.float64))
        profs.append(p)
    slope = fit_loglog_slope(f, np.mean(profs, axis=0))
    assert -2.8 <= slope <= -1.2, f"spectrum slope {slope}"


def test_gen_real_one_over_f2_within_factor_3():
    profs = []
    for s in range(40):
        f, p = radial_power_profile(gen_real(s)[0].astype(np.float64))
        profs.append(p)
    mean_prof = np.mean(profs, axis=0)
    band = (f >= 0.05) & (f <= 0.4)
    # normalize the 1/f^2 reference at the band start
    ref = mean_prof[band][0] * (f[band][0] / f[band]) ** 2
    ratio = mean_prof[band] / ref
    assert np.all(ratio < 3.0) and np.all(ratio > 1 / 3.0), ratio


def test_gen_fake_null_fingerprint_is_gen_real():
    fp = FingerprintSpec(peak_amplitude=0.0, highpass_boost=0.0)
    assert np.array_equal(gen_fake(77, fp), gen_real(77))


def test_gen_fake_deterministic():
    fp = FingerprintSpec()
    assert np.array_equal(gen_fake(9, fp), gen_fake(9, fp))


def test_gen_fake_rejects_bad_frequency():
    with pytest.raises(ConfigError, match="radius"):
        gen_fake(0, FingerprintSpec(peak_frequencies=((0.6, 0.0),)))
    with pytest.raises(ConfigError, match="radius"):
        gen_fake(0, FingerprintSpec(peak_frequencies=((0.0, 0.0),)))


def test_single_peak_shows_in_spectrum_difference():
    # averaged spectrum of fakes minus reals peaks at the fingerprint bin
    fp = FingerprintSpec(peak_frequencies=((0.25, 0.25),), peak_amplitude=0.2, highpass_boost=0.0)
    n = 64
    acc = np.zeros((n, n))
    for s in range(100):
        # paired seeds: identical bases cancel, isolating the fingerprint
        fake = gen_fake(s, fp)[0].astype(np.float64)
        real = gen_real(s)[0].astype(np.float64)
        acc += np.abs(np.fft.fft2(fake)) ** 2 - np.abs(np.fft.fft2(real)) ** 2
    shifted = np.fft.fftshift(acc)
    c = n // 2
    shifted[c, c] = -np.inf  # DC offset noise is not the fingerprint
    peak = np.unravel_index(np.argmax(shifted), shifted.shape)
    expect = 0.25 * n
    assert peak in {(c + expect, c + expect), (c - expect, c - expect)}, peak


def test_largest_remainder_matches_spec_example():
    assert _largest_remainder(10, (0.8, 0.1, 0.1)) == [8, 1, 1]


def test_make_corpus_split_arithmetic(tmp_path):
    cfg = CorpusConfig(n_real=10, n_fake=10, split=(0.8, 0.1, 0.1), seed=3)
    ds = make_corpus(cfg, tmp_path / "c")
    assert len(ds) == 20
    for split, want in (("train", 16), ("val", 2), ("test", 2)):
        x, y, _ = ds.subset(split)
        assert len(y) == want
        assert int((y == 0).sum()) == want // 2  # class balance per split

    assert ds.images.shape == (20, 64, 64, 1)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_make_corpus_deterministic_manifest(tmp_path):
    cfg = CorpusConfig(n_real=6, n_fake=6, split=(0.5, 0.25, 0.25), seed=11)
    make_corpus(cfg, tmp_path / "a")
    make_corpus(cfg, tmp_path / "b")
    assert manifest_hash(tmp_path / "a") == manifest_hash(tmp_path / "b")
    a = load_corpus(tmp_path / "a")
    b = load_corpus(tmp_path / "b")
    assert np.array_equal(a.images, b.images)


def test_make_corpus_rejects_zero_class():
    with pytest.raises(ConfigError):
        CorpusConfig(n_real=0, n_fake=5).validate()


def test_corpus_rgb_channels(tmp_path):
    cfg = CorpusConfig(n_real=2, n_fake=2, channels=3, split=(0.5, 0.25, 0.25), seed=1)
    ds = make_corpus(cfg, tmp_path / "rgb")
    assert ds.images.shape == (4, 64, 64, 3)
