"""Numba-jitted kernel implementations (default backend).

Same contracts as numpy_impl; see that module for shape conventions.
Kernels are serial @njit: every output element is written by exactly one
iteration, which keeps results deterministic for a fixed machine.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xp, k, s):
    B, Hp, Wp, C = xp.shape
    Ho = (Hp - k) // s + 1
    Wo = (Wp - k) // s + 1
    cols = np.empty((B, Ho, Wo, k, k, C), dtype=xp.dtype)
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                for ki in range(k):
                    for kj in range(k):
                        src_i = i * s + ki
                        src_j = j * s + kj
                        for c in range(C):
                            cols[b, i, j, ki, kj, c] = xp[b, src_i, src_j, c]
    return cols


@njit(cache=True)
def col2im_add(dcols, Hp, Wp, s):
    B, Ho, Wo, k, _, C = dcols.shape
    dxp = np.zeros((B, Hp, Wp, C), dtype=dcols.dtype)
    for b in range(B):
        for i in range(Ho):
            for j in range(Wo):
                for ki in range(k):
                    for kj in range(k):
                        src_i = i * s + ki
                        src_j = j * s + kj
                        for c in range(C):
                            dxp[b, src_i, src_j, c] += dcols[b, i, j, ki, kj, c]
    return dxp


@njit(cache=True)
def maxpool2x2(x):
    B, H, W, C = x.shape
    h, w = H // 2, W // 2
    y = np.empty((B, h, w, C), dtype=x.dtype)
    idx = np.empty((B, h, w, C), dtype=np.uint8)
    for b in range(B):
        for i in range(h):
            for j in range(w):
                for c in range(C):
                    best = x[b, 2 * i, 2 * j, c]
                    arg = np.uint8(0)
                    v = x[b, 2 * i, 2 * j + 1, c]
                    if v > best:
                        best = v
                        arg = np.uint8(1)
                    v = x[b, 2 * i + 1, 2 * j, c]
                    if v > best:
                        best = v
                        arg = np.uint8(2)
                    v = x[b, 2 * i + 1, 2 * j + 1, c]
                    if v > best:
                        best = v
                        arg = np.uint8(3)
                    y[b, i, j, c] = best
                    idx[b, i, j, c] = arg
    return y, idx


@njit(cache=True)
def maxpool2x2_backward(dy, idx, H, W):
    B, h, w, C = dy.shape
    dx = np.zeros((B, H, W, C), dtype=dy.dtype)
    for b in range(B):
        for i in range(h):
            for j in range(w):
                for c in range(C):
                    a = int(idx[b, i, j, c])
                    dx[b, 2 * i + a // 2, 2 * j + a % 2, c] = dy[b, i, j, c]
    return dx


@njit(cache=True, inline="always")
def _axis_sample(i, n_in, n_out):
    pos = (i + 0.5) * (n_in / n_out) - 0.5
    i0f = math.floor(pos)
    frac = pos - i0f
    i0 = int(i0f)
    i1 = i0 + 1
    if i0 < 0:
        i0 = 0
    elif i0 > n_in - 1:
        i0 = n_in - 1
    if i1 < 0:
        i1 = 0
    elif i1 > n_in - 1:
        i1 = n_in - 1
    return i0, i1, frac


@njit(cache=True)
def _resize_into(img, out, oh, ow, oy, ox):
    H, W, C = img.shape
    for i in range(oh):
        r0, r1, fy = _axis_sample(i, H, oh)
        for j in range(ow):
            c0, c1, fx = _axis_sample(j, W, ow)
            for c in range(C):
                top = img[r0, c0, c] * (1.0 - fx) + img[r0, c1, c] * fx
                bot = img[r1, c0, c] * (1.0 - fx) + img[r1, c1, c] * fx
                out[oy + i, ox + j, c] = top * (1.0 - fy) + bot * fy


@njit(cache=True)
def _resize_adjoint_into(dy, dx, oh, ow, oy, ox):
    H, W, C = dx.shape
    for i in range(oh):
        r0, r1, fy = _axis_sample(i, H, oh)
        for j in range(ow):
            c0, c1, fx = _axis_sample(j, W, ow)
            for c in range(C):
                g = dy[oy + i, ox + j, c]
                dx[r0, c0, c] += g * (1.0 - fy) * (1.0 - fx)
                dx[r0, c1, c] += g * (1.0 - fy) * fx
                dx[r1, c0, c] += g * fy * (1.0 - fx)
                dx[r1, c1, c] += g * fy * fx


@njit(cache=True)
def resize_pad(x, out_side, sizes_h, sizes_w, off_y, off_x):
    B, H, W, C = x.shape
    out = np.zeros((B, out_side, out_side, C), dtype=x.dtype)
    for b in range(B):
        _resize_into(
            x[b], out[b], int(sizes_h[b]), int(sizes_w[b]), int(off_y[b]), int(off_x[b])
        )
    return out


@njit(cache=True)
def resize_pad_backward(dy, in_h, in_w, sizes_h, sizes_w, off_y, off_x):
    B = dy.shape[0]
    C = dy.shape[3]
    dx = np.zeros((B, in_h, in_w, C), dtype=dy.dtype)
    for b in range(B):
        _resize_adjoint_into(
            dy[b], dx[b], int(sizes_h[b]), int(sizes_w[b]), int(off_y[b]), int(off_x[b])
        )
    return dx


@njit(cache=True)
def downscale_upscale(x, sizes):
    B, H, W, C = x.shape
    out = np.empty_like(x)
    for b in range(B):
        s = int(sizes[b])
        tmp = np.empty((s, s, C), dtype=x.dtype)
        _resize_into(x[b], tmp, s, s, 0, 0)
        _resize_into(tmp, out[b], H, W, 0, 0)
    return out


@njit(cache=True)
def downscale_upscale_backward(dy, sizes):
    B, H, W, C = dy.shape
    dx = np.zeros_like(dy)
    for b in range(B):
        s = int(sizes[b])
        tmp = np.zeros((s, s, C), dtype=dy.dtype)
        _resize_adjoint_into(dy[b], tmp, H, W, 0, 0)
        _resize_adjoint_into(tmp, dx[b], s, s, 0, 0)
    return dx


@njit(cache=True)
def gaussian_blur(x, sigmas, radius):
    B, H, W, C = x.shape
    out = np.empty_like(x)
    w = np.empty(2 * radius + 1, dtype=np.float64)
    tmp = np.empty((H, W, C), dtype=x.dtype)
    for b in range(B):
        sig = max(sigmas[b], 1e-8)
        total = 0.0
        for j in range(-radius, radius + 1):
            v = math.exp(-0.5 * (j / sig) ** 2)
            w[j + radius] = v
            total += v
        for j in range(2 * radius + 1):
            w[j] /= total
        for i in range(H):
            for jj in range(W):
                for c in range(C):
                    acc = 0.0
                    for j in range(-radius, radius + 1):
                        src = i + j
                        if 0 <= src < H:
                            acc += w[j + radius] * x[b, src, jj, c]
                    tmp[i, jj, c] = acc
        for i in range(H):
            for jj in range(W):
                for c in range(C):
                    acc = 0.0
                    for j in range(-radius, radius + 1):
                        src = jj + j
                        if 0 <= src < W:
                            acc += w[j + radius] * tmp[i, src, c]
                    out[b, i, jj, c] = acc
    return out
