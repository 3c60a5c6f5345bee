"""Training-time augmentation.

weak  = probabilistic Gaussian blur + compression proxy (8x8 block-DCT
        quantization at a random quality)
strong = weak plus random rescale with crop/pad, cutout, additive noise,
        and brightness/contrast jitter.

These run on raw numpy images outside the gradient tape (training input
pipeline only; the attacks module has its own differentiable transforms).
The compression proxy quantizes block-DCT coefficients instead of
invoking a codec. Outputs are always clipped to [0,1] and keep the input
shape.
"""

import numpy as np
from scipy.ndimage import gaussian_filter

from .kernels.numpy_impl import _resize_one

_DCT8 = None


def _dct_matrix() -> np.ndarray:
    global _DCT8
    if _DCT8 is None:
        k = np.arange(8)
        m = np.sqrt(2.0 / 8.0) * np.cos((2 * k[None, :] + 1) * k[:, None] * np.pi / 16.0)
        m[0] = np.sqrt(1.0 / 8.0)
        _DCT8 = m
    return _DCT8


def dct_quantize(img: np.ndarray, quality: float) -> np.ndarray:
    """8x8 block-DCT quantization; lower quality = coarser steps."""
    H, W, C = img.shape
    d = _dct_matrix()
    base = 0.02 + (100.0 - quality) / 100.0 * 0.10
    u = np.arange(8)
    steps = base * (1.0 + 0.5 * (u[:, None] + u[None, :]))  # coarser at high freq
    out = np.empty_like(img)
    hb, wb = H // 8, W // 8
    blocks = img.reshape(hb, 8, wb, 8, C).transpose(0, 2, 4, 1, 3)  # [hb,wb,C,8,8]
    coef = np.einsum("ij,bwcjk,lk->bwcil", d, blocks, d)
    coef = np.round(coef / steps) * steps
    rec = np.einsum("ji,bwcjk,kl->bwcil", d, coef, d)
    out = rec.transpose(0, 3, 1, 4, 2).reshape(H, W, C)
    return out.astype(img.dtype)


def _rescale_crop_pad(img: np.ndarray, factor: float) -> np.ndarray:
    H, W, C = img.shape
    nh = max(int(round(H * factor)), 8)
    scaled = _resize_one(img, nh, nh)
    if nh >= H:
        o = (nh - H) // 2
        return scaled[o : o + H, o : o + W]
    pad = H - nh
    lo = pad // 2
    return np.pad(scaled, ((lo, pad - lo), (lo, pad - lo), (0, 0)), mode="edge")


def cutout(img: np.ndarray, rng: np.random.Generator, max_frac: float = 0.25) -> np.ndarray:
    H = img.shape[0]
    side = int(rng.integers(4, max(int(H * max_frac), 5)))
    y = int(rng.integers(0, H - side + 1))
    x = int(rng.integers(0, H - side + 1))
    out = img.copy()
    out[y : y + side, x : x + side, :] = 0.5
    return out


def augment(
    image: np.ndarray,
    level: str,
    rng: np.random.Generator,
    prob_scale: float = 1.0,
) -> np.ndarray:
    """Randomly transformed copy of a [H, W, C] image in [0,1].

    prob_scale multiplies every application probability; 0 returns the
    input unchanged (bit-exact identity).
    """
    if level not in ("weak", "strong"):
        raise ValueError(f"unknown augmentation level {level!r}")
    if prob_scale <= 0:
        return image
    img = image.astype(np.float32, copy=True)

    if level == "strong" and rng.random() < 0.5 * prob_scale:
        img = _rescale_crop_pad(img, float(rng.uniform(0.75, 1.25)))

    if rng.random() < 0.5 * prob_scale:
        sigma = float(rng.uniform(0.5, 1.5))
        for c in range(img.shape[2]):
            img[:, :, c] = gaussian_filter(img[:, :, c], sigma, mode="reflect")

    if level == "strong":
        if rng.random() < 0.3 * prob_scale:
            img = cutout(img, rng)
        if rng.random() < 0.5 * prob_scale:
            img = img + rng.normal(0.0, float(rng.uniform(0.005, 0.03)), img.shape).astype(
                np.float32
            )
        if rng.random() < 0.5 * prob_scale:
            contrast = float(rng.uniform(0.9, 1.1))
            brightness = float(rng.uniform(-0.1, 0.1))
            img = (img - 0.5) * contrast + 0.5 + brightness

    if rng.random() < 0.5 * prob_scale:
        img = dct_quantize(img, float(rng.uniform(30.0, 90.0)))

    return np.clip(img, 0.0, 1.0, out=img)
