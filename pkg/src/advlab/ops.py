"""Differentiable primitives.

Every op computes its forward pass eagerly on numpy arrays and, when a
Tape is active and an input is watched, records a Node whose backward
closure produces input gradients. Image ops are channels-last [B,H,W,C];
token ops are [B,N,D]. Reductions accumulate in float64 before casting
back to the working dtype.

Broadcasting is limited to bias-add semantics: the second operand of
`add` may match a suffix of the first operand's shape. Everything else
requires explicit reshape.
"""

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from . import kernels
from .tensor import Node, ShapeError, Tensor, active_tape

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, make_backward):
    """Wrap op output; register a tape node when gradients can flow.

    make_backward(want) -> backward(gout) is built lazily so saved
    context (e.g. im2col buffers) is only kept when actually needed.
    """
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None:
        want = [tape.watches(t) for t in inputs]
        if any(want):
            tape.record(Node(op, inputs, out, make_backward(want)))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# ---------------------------------------------------------------------------
# elementwise / structural


def add(x: Tensor, y: Tensor) -> Tensor:
    """x + y. y must match x's shape or a suffix of it (bias-add)."""
    x, y = _as_tensor(x), _as_tensor(y)
    if y.shape != x.shape:
        nd = y.data.ndim
        if nd and x.shape[x.data.ndim - nd :] != y.shape:
            raise ShapeError("add", f"cannot add {y.shape} to {x.shape}")
    n_lead = x.data.ndim - y.data.ndim

    def make_backward(want):
        def bwd(g):
            gx = g if want[0] else None
            gy = None
            if want[1]:
                gy = g.sum(axis=tuple(range(n_lead))) if n_lead else g
            return gx, gy

        return bwd

    return _record("add", (x, y), x.data + y.data, make_backward)


def mul(x: Tensor, y) -> Tensor:
    """Elementwise product; y may be a same-shape tensor or a scalar."""
    x, y = _as_tensor(x), _as_tensor(y)
    if y.data.ndim != 0 and y.shape != x.shape:
        raise ShapeError("mul", f"cannot multiply {x.shape} by {y.shape}")
    xd, yd = x.data, y.data

    def make_backward(want):
        def bwd(g):
            gx = g * yd if want[0] else None
            gy = None
            if want[1]:
                gy = g * xd
                if yd.ndim == 0:
                    gy = np.asarray(gy.sum(dtype=np.float64), dtype=xd.dtype)
            return gx, gy

        return bwd

    return _record("mul", (x, y), xd * yd, make_backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError("reshape", str(e)) from None
    in_shape = x.data.shape

    def make_backward(want):
        return lambda g: (g.reshape(in_shape),)

    return _record("reshape", (x,), out, make_backward)


def reduce_sum(x: Tensor) -> Tensor:
    """Sum of all elements to a scalar (float64 accumulation)."""
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)
    in_shape = x.data.shape
    dtype = x.dtype

    def make_backward(want):
        return lambda g: (np.full(in_shape, g, dtype=dtype),)

    return _record("reduce_sum", (x,), out, make_backward)


def take_rows(x: Tensor, indices) -> Tensor:
    """Select batch rows by index (gather along axis 0).

    Indices must be unique; the backward pass scatters gradients back to
    the selected rows and leaves the rest zero.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or len(np.unique(idx)) != len(idx):
        raise ShapeError("take_rows", "indices must be a 1-d unique index list")
    xd = x.data
    out = xd[idx]

    def make_backward(want):
        def bwd(g):
            dx = np.zeros_like(xd)
            dx[idx] = g
            return (dx,)

        return bwd

    return _record("take_rows", (x,), out, make_backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # relu'(0) = 0 by convention

    def make_backward(want):
        return lambda g: (g * mask,)

    return _record("relu", (x,), np.where(mask, x.data, 0), make_backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    phi = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def make_backward(want):
        def bwd(g):
            pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
            return (g * (phi + xd * pdf).astype(xd.dtype),)

        return bwd

    return _record("gelu", (x,), (xd * phi).astype(xd.dtype), make_backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis; output rows sum to 1."""
    xd = x.data
    e = np.exp(xd - xd.max(axis=-1, keepdims=True))
    y = (e / e.sum(axis=-1, keepdims=True, dtype=np.float64)).astype(xd.dtype)

    def make_backward(want):
        def bwd(g):
            dot = (g * y).sum(axis=-1, keepdims=True, dtype=np.float64).astype(xd.dtype)
            return ((g - dot) * y,)

        return bwd

    return _record("softmax", (x,), y, make_backward)


# ---------------------------------------------------------------------------
# linear algebra layers


def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x [..., Din] @ w [Din, Dout] (+ b [Dout])."""
    xd, wd = x.data, w.data
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[0]:
        raise ShapeError("dense", f"input {xd.shape} incompatible with weights {wd.shape}")
    lead = xd.shape[:-1]
    m = int(np.prod(lead)) if lead else 1
    x2 = xd.reshape(m, wd.shape[0])
    y = x2 @ wd
    if b is not None:
        if b.shape != (wd.shape[1],):
            raise ShapeError("dense", f"bias {b.shape} != ({wd.shape[1]},)")
        y = y + b.data
    out = y.reshape(*lead, wd.shape[1])
    inputs = (x, w) if b is None else (x, w, b)

    def make_backward(want):
        def bwd(g):
            g2 = g.reshape(m, wd.shape[1])
            gx = (g2 @ wd.T).reshape(xd.shape) if want[0] else None
            gw = x2.T @ g2 if want[1] else None
            if b is None:
                return gx, gw
            gb = g2.sum(axis=0, dtype=np.float64).astype(g.dtype) if want[2] else None
            return gx, gw, gb

        return bwd

    return _record("dense", inputs, out, make_backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    xd = x.data
    d = xd.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", f"affine params must be ({d},)")
    mu = xd.mean(axis=-1, keepdims=True, dtype=np.float64)
    xc = (xd - mu).astype(xd.dtype)
    var = np.mean(xc.astype(np.float64) ** 2, axis=-1, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def make_backward(want):
        def bwd(g):
            gx = None
            if want[0]:
                dxhat = g * gamma.data
                s1 = dxhat.sum(axis=-1, keepdims=True, dtype=np.float64)
                s2 = (dxhat * xhat).sum(axis=-1, keepdims=True, dtype=np.float64)
                gx = (inv / d) * (d * dxhat - s1 - xhat * s2)
                gx = gx.astype(xd.dtype)
            red = tuple(range(g.ndim - 1))
            gg = (g * xhat).sum(axis=red, dtype=np.float64).astype(xd.dtype) if want[1] else None
            gb = g.sum(axis=red, dtype=np.float64).astype(xd.dtype) if want[2] else None
            return gx, gg, gb

        return bwd

    return _record("layer_norm", (x, gamma, beta), out, make_backward)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int = 1) -> Tensor:
    """softmax(q k^T / sqrt(d)) v.

    Accepts [B, h, N, d] directly, or [B, N, D] with n_heads dividing D,
    in which case the head split/merge happens inside the primitive.
    """
    qd, kd, vd = q.data, k.data, v.data
    if qd.shape != kd.shape or qd.shape != vd.shape:
        raise ShapeError(
            "scaled_dot_product_attention",
            f"q/k/v shapes differ: {qd.shape}/{kd.shape}/{vd.shape}",
        )
    if qd.ndim == 3:
        B, N, D = qd.shape
        if D % n_heads:
            raise ShapeError(
                "scaled_dot_product_attention", f"width {D} not divisible by {n_heads} heads"
            )
        dh = D // n_heads

        def split(a):
            return np.ascontiguousarray(
                a.reshape(B, N, n_heads, dh).transpose(0, 2, 1, 3)
            )

        def merge(a):
            return np.ascontiguousarray(a.transpose(0, 2, 1, 3).reshape(B, N, D))

        q4, k4, v4 = split(qd), split(kd), split(vd)
    elif qd.ndim == 4:
        split = merge = None
        q4, k4, v4 = qd, kd, vd
    else:
        raise ShapeError(
            "scaled_dot_product_attention", f"need [B,N,D] or [B,h,N,d], got {qd.shape}"
        )

    scale = 1.0 / math.sqrt(q4.shape[-1])
    s = (q4 @ k4.swapaxes(-1, -2)) * np.asarray(scale, dtype=q4.dtype)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    a = (e / e.sum(axis=-1, keepdims=True, dtype=np.float64)).astype(q4.dtype)
    out4 = a @ v4
    out = merge(out4) if merge is not None else out4

    def make_backward(want):
        def bwd(g):
            g4 = split(g) if split is not None else g
            da = g4 @ v4.swapaxes(-1, -2)
            dv = a.swapaxes(-1, -2) @ g4 if want[2] else None
            dot = (da * a).sum(axis=-1, keepdims=True, dtype=np.float64).astype(a.dtype)
            ds = (da - dot) * a
            dq = (ds @ k4) * np.asarray(scale, dtype=a.dtype) if want[0] else None
            dk = (ds.swapaxes(-1, -2) @ q4) * np.asarray(scale, dtype=a.dtype) if want[1] else None
            if merge is not None:
                dq = merge(dq) if dq is not None else None
                dk = merge(dk) if dk is not None else None
                dv = merge(dv) if dv is not None else None
            return dq, dk, dv

        return bwd

    return _record("scaled_dot_product_attention", (q, k, v), out, make_backward)


# ---------------------------------------------------------------------------
# image layers


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution. x [B,H,W,Ci], w [k,k,Ci,Co], optional b [Co]."""
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError("conv2d", f"need 4-d input/weights, got {xd.shape}/{wd.shape}")
    kh, kw, ci, co = wd.shape
    if kh != kw:
        raise ShapeError("conv2d", "only square kernels supported")
    if xd.shape[3] != ci:
        raise ShapeError("conv2d", f"input channels {xd.shape[3]} != kernel channels {ci}")
    B, H, W, _ = xd.shape
    if padding:
        xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xp = xd
    Hp, Wp = xp.shape[1], xp.shape[2]
    if Hp < kh or Wp < kh:
        raise ShapeError("conv2d", f"kernel {kh} exceeds padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kh) // stride + 1
    cols = kernels.im2col(xp, kh, stride)
    m = B * Ho * Wo
    kk = kh * kh * ci
    y = cols.reshape(m, kk) @ wd.reshape(kk, co)
    if b is not None:
        if b.shape != (co,):
            raise ShapeError("conv2d", f"bias {b.shape} != ({co},)")
        y = y + b.data
    out = y.reshape(B, Ho, Wo, co)
    inputs = (x, w) if b is None else (x, w, b)

    def make_backward(want):
        saved_cols = cols if want[1] else None  # only keep for weight grads

        def bwd(g):
            g2 = g.reshape(m, co)
            gw = (saved_cols.reshape(m, kk).T @ g2).reshape(wd.shape) if want[1] else None
            gx = None
            if want[0]:
                dcols = (g2 @ wd.reshape(kk, co).T).reshape(B, Ho, Wo, kh, kh, ci)
                dxp = kernels.col2im_add(dcols, Hp, Wp, stride)
                gx = dxp[:, padding : padding + H, padding : padding + W, :] if padding else dxp
                gx = np.ascontiguousarray(gx)
            if b is None:
                return gx, gw
            gb = g2.sum(axis=0, dtype=np.float64).astype(g.dtype) if want[2] else None
            return gx, gw, gb

        return bwd

    return _record("conv2d", inputs, out, make_backward)


def patchify(x: Tensor, w: Tensor, b: Tensor, patch: int) -> Tensor:
    """Split [B,H,W,C] into non-overlapping patch x patch blocks and embed.

    w: [patch*patch*C, D]. Output [B, (H/patch)*(W/patch), D].
    """
    xd = x.data
    B, H, W, C = xd.shape
    if H % patch or W % patch:
        raise ShapeError("patchify", f"image side {H}x{W} not divisible by patch {patch}")
    hb, wb = H // patch, W // patch
    n = hb * wb
    pdim = patch * patch * C
    if w.data.ndim != 2 or w.shape[0] != pdim:
        raise ShapeError("patchify", f"embed weights must be ({pdim}, D), got {w.shape}")
    blocks = (
        xd.reshape(B, hb, patch, wb, patch, C)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(B, n, pdim)
    )
    d = w.shape[1]
    if b.shape != (d,):
        raise ShapeError("patchify", f"bias {b.shape} != ({d},)")
    out = blocks.reshape(B * n, pdim) @ w.data + b.data

    def make_backward(want):
        def bwd(g):
            g2 = g.reshape(B * n, d)
            gw = blocks.reshape(B * n, pdim).T @ g2 if want[1] else None
            gb = g2.sum(axis=0, dtype=np.float64).astype(g.dtype) if want[2] else None
            gx = None
            if want[0]:
                dblocks = (g2 @ w.data.T).reshape(B, hb, wb, patch, patch, C)
                gx = np.ascontiguousarray(
                    dblocks.transpose(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)
                )
            return gx, gw, gb

        return bwd

    return _record("patchify", (x, w, b), out.reshape(B, n, d), make_backward)


def global_average_pool(x: Tensor, axes=(1, 2)) -> Tensor:
    """Mean over the given (middle) axes; default collapses H,W."""
    axes = tuple(int(a) for a in axes)
    xd = x.data
    count = 1
    for a in axes:
        count *= xd.shape[a]
    out = xd.mean(axis=axes, dtype=np.float64).astype(xd.dtype)

    def make_backward(want):
        def bwd(g):
            ge = np.expand_dims(g, axes)
            return (np.broadcast_to(ge / count, xd.shape).astype(xd.dtype),)

        return bwd

    return _record("global_average_pool", (x,), out, make_backward)


def max_pool(x: Tensor) -> Tensor:
    """2x2 stride-2 max pool over [B,H,W,C] (even sides required)."""
    xd = x.data
    B, H, W, C = xd.shape
    if H % 2 or W % 2:
        raise ShapeError("max_pool", f"sides must be even, got {H}x{W}")
    y, idx = kernels.maxpool2x2(xd)

    def make_backward(want):
        return lambda g: (kernels.maxpool2x2_backward(g, idx, H, W),)

    return _record("max_pool", (x,), y, make_backward)


# ---------------------------------------------------------------------------
# loss


def binary_cross_entropy_with_logits(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Numerically stable BCE; targets are float labels in {0,1}.

    Gradients flow only to logits.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    z = logits.data
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=z.dtype)
    if t.shape != z.shape:
        raise ShapeError(
            "binary_cross_entropy_with_logits", f"targets {t.shape} != logits {z.shape}"
        )
    elem = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    total = elem.sum(dtype=np.float64)
    n = z.size
    out = np.asarray(total / n if reduction == "mean" else total, dtype=z.dtype)

    def make_backward(want):
        def bwd(g):
            sig = expit(z)
            scale = g / n if reduction == "mean" else g
            return ((sig - t) * scale,)

        return bwd

    return _record("binary_cross_entropy_with_logits", (logits,), out, make_backward)


# ---------------------------------------------------------------------------
# differentiable image transforms (used by attacks)


def resize_pad(x: Tensor, sizes_h, sizes_w, off_y, off_x, out_side: int) -> Tensor:
    """Per-image bilinear resize then zero-pad back to out_side.

    sizes/offsets are int arrays of length B (structural constants, not
    differentiated).
    """
    xd = x.data
    B, H, W, C = xd.shape
    sizes_h = np.asarray(sizes_h, dtype=np.int64)
    sizes_w = np.asarray(sizes_w, dtype=np.int64)
    off_y = np.asarray(off_y, dtype=np.int64)
    off_x = np.asarray(off_x, dtype=np.int64)
    if np.any(sizes_h + off_y > out_side) or np.any(sizes_w + off_x > out_side):
        raise ShapeError("resize_pad", "resized image exceeds output canvas")
    out = kernels.resize_pad(xd, out_side, sizes_h, sizes_w, off_y, off_x)

    def make_backward(want):
        return lambda g: (
            kernels.resize_pad_backward(g, H, W, sizes_h, sizes_w, off_y, off_x),
        )

    return _record("resize_pad", (x,), out, make_backward)


def downscale_upscale(x: Tensor, sizes) -> Tensor:
    """Per-image bilinear downscale to (s,s) and back to the input size."""
    xd = x.data
    sizes = np.asarray(sizes, dtype=np.int64)
    out = kernels.downscale_upscale(xd, sizes)

    def make_backward(want):
        return lambda g: (kernels.downscale_upscale_backward(g, sizes),)

    return _record("downscale_upscale", (x,), out, make_backward)


def gaussian_blur(x: Tensor, sigmas, radius: int = 4) -> Tensor:
    """Per-image Gaussian blur (self-adjoint: backward is the same blur)."""
    xd = x.data
    sigmas = np.asarray(sigmas, dtype=np.float64)
    out = kernels.gaussian_blur(xd, sigmas, radius)

    def make_backward(want):
        return lambda g: (kernels.gaussian_blur(g, sigmas, radius),)

    return _record("gaussian_blur", (x,), out, make_backward)
