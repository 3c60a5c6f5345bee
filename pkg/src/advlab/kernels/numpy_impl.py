"""Pure-numpy kernel implementations (fallback backend).

All image arrays are channels-last: [B, H, W, C]. Per-image parameter
arrays (resize sizes, blur sigmas) allow one batched call even when every
image draws its own random transform.
"""

import numpy as np


def im2col(xp: np.ndarray, k: int, s: int) -> np.ndarray:
    """Gather k x k windows of a padded batch into GEMM-ready columns.

    xp: [B, Hp, Wp, C] -> cols [B, Ho, Wo, k, k, C] with
    Ho = (Hp-k)//s + 1, Wo = (Wp-k)//s + 1.
    """
    B, Hp, Wp, C = xp.shape
    Ho = (Hp - k) // s + 1
    Wo = (Wp - k) // s + 1
    cols = np.empty((B, Ho, Wo, k, k, C), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, :, ki, kj, :] = xp[
                :, ki : ki + (Ho - 1) * s + 1 : s, kj : kj + (Wo - 1) * s + 1 : s, :
            ]
    return cols


def col2im_add(dcols: np.ndarray, Hp: int, Wp: int, s: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add window grads back to the padded image."""
    B, Ho, Wo, k, _, C = dcols.shape
    dxp = np.zeros((B, Hp, Wp, C), dtype=dcols.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[
                :, ki : ki + (Ho - 1) * s + 1 : s, kj : kj + (Wo - 1) * s + 1 : s, :
            ] += dcols[:, :, :, ki, kj, :]
    return dxp


def maxpool2x2(x: np.ndarray):
    """2x2/stride-2 max pool. Returns (y, argmax) with argmax in 0..3.

    Ties resolve to the first position in (0,0),(0,1),(1,0),(1,1) order.
    """
    B, H, W, C = x.shape
    h, w = H // 2, W // 2
    v = x.reshape(B, h, 2, w, 2, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, h, w, 4, C)
    idx = np.argmax(v, axis=3).astype(np.uint8)
    y = np.take_along_axis(v, idx[:, :, :, None, :].astype(np.int64), axis=3)[
        :, :, :, 0, :
    ]
    return y, idx


def maxpool2x2_backward(dy: np.ndarray, idx: np.ndarray, H: int, W: int) -> np.ndarray:
    B, h, w, C = dy.shape
    dv = np.zeros((B, h, w, 4, C), dtype=dy.dtype)
    np.put_along_axis(dv, idx[:, :, :, None, :].astype(np.int64), dy[:, :, :, None, :], axis=3)
    return dv.reshape(B, h, w, 2, 2, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)


def _axis_weights(n_in: int, n_out: int, dtype):
    """Bilinear sample positions for one axis (half-pixel-center convention)."""
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    i0f = np.floor(pos)
    frac = pos - i0f
    i0 = np.clip(i0f, 0, n_in - 1).astype(np.int64)
    i1 = np.clip(i0f + 1, 0, n_in - 1).astype(np.int64)
    return i0, i1, frac.astype(dtype)


def _resize_one(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Bilinear-resize one [H, W, C] image."""
    H, W, _ = img.shape
    r0, r1, fy = _axis_weights(H, oh, img.dtype)
    c0, c1, fx = _axis_weights(W, ow, img.dtype)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[r0][:, c0] * (1 - fx) + img[r0][:, c1] * fx
    bot = img[r1][:, c0] * (1 - fx) + img[r1][:, c1] * fx
    return top * (1 - fy) + bot * fy


def _resize_adjoint_one(dy: np.ndarray, H: int, W: int) -> np.ndarray:
    """Adjoint of _resize_one: scatter [oh, ow, C] grads back to [H, W, C]."""
    oh, ow, C = dy.shape
    r0, r1, fy = _axis_weights(H, oh, dy.dtype)
    c0, c1, fx = _axis_weights(W, ow, dy.dtype)
    dx = np.zeros((H, W, C), dtype=dy.dtype)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    for rows, wy in ((r0, 1 - fy), (r1, fy)):
        for cols_, wx in ((c0, 1 - fx), (c1, fx)):
            contrib = dy * wy * wx
            # rows/cols may repeat at clamped borders, so accumulate.
            np.add.at(dx, (rows[:, None], cols_[None, :]), contrib)
    return dx


def resize_pad(x, out_side, sizes_h, sizes_w, off_y, off_x):
    """Per-image bilinear resize to (sh, sw), zero-padded into an
    out_side x out_side canvas at (oy, ox)."""
    B, H, W, C = x.shape
    out = np.zeros((B, out_side, out_side, C), dtype=x.dtype)
    for b in range(B):
        sh, sw = int(sizes_h[b]), int(sizes_w[b])
        oy, ox = int(off_y[b]), int(off_x[b])
        out[b, oy : oy + sh, ox : ox + sw, :] = _resize_one(x[b], sh, sw)
    return out


def resize_pad_backward(dy, in_h, in_w, sizes_h, sizes_w, off_y, off_x):
    B = dy.shape[0]
    C = dy.shape[3]
    dx = np.empty((B, in_h, in_w, C), dtype=dy.dtype)
    for b in range(B):
        sh, sw = int(sizes_h[b]), int(sizes_w[b])
        oy, ox = int(off_y[b]), int(off_x[b])
        dx[b] = _resize_adjoint_one(dy[b, oy : oy + sh, ox : ox + sw, :], in_h, in_w)
    return dx


def downscale_upscale(x, sizes):
    """Per-image bilinear downscale to (s, s) followed by upscale back."""
    B, H, W, C = x.shape
    out = np.empty_like(x)
    for b in range(B):
        s = int(sizes[b])
        out[b] = _resize_one(_resize_one(x[b], s, s), H, W)
    return out


def downscale_upscale_backward(dy, sizes):
    B, H, W, C = dy.shape
    dx = np.empty_like(dy)
    for b in range(B):
        s = int(sizes[b])
        dx[b] = _resize_adjoint_one(_resize_adjoint_one(dy[b], s, s), H, W)
    return dx


def _gauss_kernel(sigma: float, radius: int, dtype):
    j = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (j / max(sigma, 1e-8)) ** 2)
    return (w / w.sum()).astype(dtype)


def gaussian_blur(x, sigmas, radius: int):
    """Separable per-image Gaussian blur, zero padding at borders.

    The kernel is symmetric and padding is zero, so this operator is its
    own adjoint: the gradient of blur(x) is blur(grad).
    """
    B, H, W, C = x.shape
    out = np.empty_like(x)
    for b in range(B):
        w = _gauss_kernel(float(sigmas[b]), radius, x.dtype)
        img = x[b]
        tmp = np.zeros_like(img)
        for j in range(-radius, radius + 1):
            lo, hi = max(0, -j), min(H, H - j)
            tmp[lo:hi] += w[j + radius] * img[lo + j : hi + j]
        res = np.zeros_like(img)
        for j in range(-radius, radius + 1):
            lo, hi = max(0, -j), min(W, W - j)
            res[:, lo:hi] += w[j + radius] * tmp[:, lo + j : hi + j]
        out[b] = res
    return out
