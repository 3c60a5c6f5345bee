"""Procedural corpus: natural-image stand-ins vs. frequency-fingerprinted fakes.

Real images are dead-leaves disc composites plus 1/f noise, which gives
the ~1/f^2 radially averaged power spectrum of natural photographs. Fake
images run the same generator and then receive the corpus fingerprint:
sinusoidal peaks at fixed normalized frequencies and a broadband
high-frequency gain. With the fingerprint disabled the two classes are
distributionally identical, so the fingerprint is the only label signal.

Every image is a pure function of its 32-bit seed; per-image seeds are
derived from (corpus seed, class, index), so generation order (serial or
parallel) cannot change the corpus.
"""

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .atns import read_tensor, write_tensor
from .config import ConfigError, CorpusConfig, FingerprintSpec

_BASE_STREAM = 0xBA5E
_PHASE_STREAM = 0xF14E


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(e) & 0xFFFFFFFF for e in entropy])
    )


def _power_law_radii(rng, n, r_min, r_max, exponent=3.0):
    """Inverse-CDF sampling of p(r) ~ r^-exponent on [r_min, r_max]."""
    u = rng.random(n)
    a = 1.0 - exponent
    lo, hi = r_min**a, r_max**a
    return (lo + u * (hi - lo)) ** (1.0 / a)


def _one_over_f_noise(rng, side):
    """Zero-mean field with 1/f amplitude spectrum, unit std."""
    white = rng.standard_normal((side, side))
    f = np.fft.fftfreq(side)
    radius = np.hypot(f[:, None], f[None, :])
    amp = 1.0 / np.maximum(radius, 1.0 / side)
    field = np.fft.ifft2(np.fft.fft2(white) * amp).real
    return field / field.std()


def _gen_base(seed: int, side: int, channels: int) -> np.ndarray:
    """Unclipped dead-leaves + 1/f image, [C, H, W] float32-ready."""
    rng = _rng(seed, _BASE_STREAM)
    img = np.full((channels, side, side), 0.5)
    yy, xx = np.mgrid[0:side, 0:side]

    n_discs = int(rng.integers(35, 60))
    radii = _power_law_radii(rng, n_discs, 2.0, side / 2.0)
    centers = rng.random((n_discs, 2)) * side
    grays = rng.uniform(0.2, 0.8, n_discs)
    tints = rng.uniform(-0.08, 0.08, (n_discs, channels)) if channels > 1 else None
    for i in range(n_discs):
        mask = (xx - centers[i, 0]) ** 2 + (yy - centers[i, 1]) ** 2 <= radii[i] ** 2
        for c in range(channels):
            val = grays[i] + (tints[i, c] if tints is not None else 0.0)
            img[c][mask] = val

    for c in range(channels):
        img[c] += 0.08 * _one_over_f_noise(rng, side)
    return img


def gen_real(seed: int, side: int = 64, channels: int = 1) -> np.ndarray:
    """Natural-image stand-in, values in [0,1], shape [C, H, W]."""
    return np.clip(_gen_base(seed, side, channels), 0.0, 1.0).astype(np.float32)


def gen_fake(
    seed: int, fp: FingerprintSpec, side: int = 64, channels: int = 1
) -> np.ndarray:
    """Fake image: real-style base plus spectral fingerprint, [C, H, W].

    With peak_amplitude == 0 and highpass_boost == 0 the fingerprint
    branches are skipped entirely and the output is bit-identical to
    gen_real(seed).
    """
    fp.validate()
    img = _gen_base(seed, side, channels)

    if fp.peak_amplitude > 0 and fp.peak_frequencies:
        phase_rng = _rng(seed, _PHASE_STREAM)
        yy, xx = np.mgrid[0:side, 0:side]
        std = img.std(dtype=np.float64)
        pattern = np.zeros((side, side))
        for fu, fv in fp.peak_frequencies:
            phi = phase_rng.uniform(0.0, 2.0 * np.pi)
            pattern += np.cos(2.0 * np.pi * (fu * xx + fv * yy) + phi)
        img = img + fp.peak_amplitude * std * pattern[None, :, :]

    if fp.highpass_boost > 0:
        f = np.fft.fftfreq(side)
        hi = np.hypot(f[:, None], f[None, :]) > 0.35
        spec = np.fft.fft2(img, axes=(1, 2))
        spec[:, hi] *= 1.0 + fp.highpass_boost
        img = np.fft.ifft2(spec, axes=(1, 2)).real

    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# corpus assembly


def _largest_remainder(n: int, fractions) -> list:
    raw = [n * f for f in fractions]
    counts = [int(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _image_seed(corpus_seed: int, cls: int, index: int) -> int:
    ss = np.random.SeedSequence([corpus_seed & 0xFFFFFFFF, cls, index])
    return int(ss.generate_state(1)[0])


@dataclass
class Dataset:
    """In-memory corpus: channels-last images plus labels and split tags."""

    images: np.ndarray  # [N, H, W, C] float32
    labels: np.ndarray  # [N] int64, 0 = real, 1 = fake
    splits: np.ndarray  # [N] of {"train","val","test"}
    ids: np.ndarray  # [N] int64
    seeds: np.ndarray  # [N] per-image generator seeds
    root: Path

    def subset(self, split: str) -> tuple:
        m = self.splits == split
        return self.images[m], self.labels[m], self.ids[m]

    def __len__(self) -> int:
        return len(self.labels)


def make_corpus(cfg: CorpusConfig, out_dir) -> Dataset:
    """Generate, persist (ATNS1 + CSV manifest) and return the corpus."""
    cfg.validate()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)

    rows = []
    item_id = 0
    for cls, count, label in ((0, cfg.n_real, "real"), (1, cfg.n_fake, "fake")):
        counts = _largest_remainder(count, cfg.split)
        bounds = np.cumsum(counts)
        for i in range(count):
            seed = _image_seed(cfg.seed, cls, i)
            if cls == 0:
                img = gen_real(seed, cfg.image_side, cfg.channels)
            else:
                img = gen_fake(seed, cfg.fingerprint, cfg.image_side, cfg.channels)
            split = "train" if i < bounds[0] else ("val" if i < bounds[1] else "test")
            fname = f"images/{label}_{i:05d}.atns"
            write_tensor(out / fname, img)
            rows.append((item_id, fname, label, split, seed))
            item_id += 1

    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "file", "label", "split", "seed"])
        w.writerows(rows)
    return load_corpus(out)


def load_corpus(root) -> Dataset:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise ConfigError(f"no manifest.csv under {root}")
    ids, files, labels, splits, seeds = [], [], [], [], []
    with open(manifest, newline="") as f:
        for row in csv.DictReader(f):
            ids.append(int(row["id"]))
            files.append(row["file"])
            labels.append(0 if row["label"] == "real" else 1)
            splits.append(row["split"])
            seeds.append(int(row["seed"]))
    images = np.stack([read_tensor(root / p) for p in files])  # [N, C, H, W]
    images = np.ascontiguousarray(images.transpose(0, 2, 3, 1))  # channels-last
    return Dataset(
        images=images,
        labels=np.asarray(labels, dtype=np.int64),
        splits=np.asarray(splits),
        ids=np.asarray(ids, dtype=np.int64),
        seeds=np.asarray(seeds, dtype=np.int64),
        root=root,
    )


def manifest_hash(root) -> str:
    return hashlib.sha256((Path(root) / "manifest.csv").read_bytes()).hexdigest()
