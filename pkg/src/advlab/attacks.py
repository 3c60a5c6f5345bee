"""Gradient attacks: FGSM, PGD, DI2-FGSM, RWA and the universal attack.

All iterative attacks work in perturbation space: delta is updated and
projected onto the epsilon ball, and the adversarial image is always
clip(x + delta, 0, 1). Stored deltas are the post-projection values, so
both constraints hold by construction on every output.

Randomized attacks derive one RNG stream per image from (attack seed,
image id); results are therefore identical no matter how the campaign is
chunked or parallelized. Detector parameters are flagged non-trainable
for the duration of a gradient call and are never mutated.
"""

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import ops
from .config import AttackConfig, config_hash
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

PSNR_CAP_DB = 120.0


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(e) & 0xFFFFFFFF for e in entropy])
    )


@dataclass
class AdversarialResult:
    ids: np.ndarray  # [N] image ids
    x_adv: np.ndarray  # [N,H,W,C] = clip(x + delta)
    delta: np.ndarray  # [N,H,W,C] post-projection perturbations
    success: np.ndarray  # [N] bool, source prediction flipped
    psnr_db: np.ndarray  # [N]
    final_loss: np.ndarray  # [N] per-image BCE at x_adv
    config_hash: str = ""


@dataclass
class UniversalPerturbation:
    delta: np.ndarray  # [H,W,C]
    norm: str
    epsilon: float  # 8-bit units
    direction: str  # untargeted | real_to_fake | fake_to_real
    config_hash: str = ""


@contextmanager
def _params_detached(model):
    """Disable parameter gradients while attacking (input grads only)."""
    saved = [(t, t.requires_grad) for t in model.params.values()]
    for t, _ in saved:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in saved:
            t.requires_grad = flag


def _grad_x(model, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the summed BCE loss w.r.t. the input batch."""
    xt = Tensor(x, requires_grad=True)
    with _params_detached(model), Tape() as tape:
        logits = model.logits(xt)
        loss = ops.binary_cross_entropy_with_logits(
            logits, y.astype(x.dtype), reduction="sum"
        )
    tape.backward(loss)
    return xt.grad


def _budget(cfg: AttackConfig, image_shape) -> tuple:
    """(epsilon, alpha) in [0,1] pixel units for the configured norm."""
    if cfg.norm == "linf":
        return cfg.epsilon / 255.0, cfg.alpha / 255.0
    d = int(np.prod(image_shape))
    scale = math.sqrt(d) / 255.0
    return cfg.epsilon * scale, cfg.alpha * scale


def project(delta: np.ndarray, norm: str, eps: float) -> np.ndarray:
    """Project perturbations onto the epsilon ball (per image).

    linf clamps per coordinate; l2 rescales by eps/||delta||_2 only when
    the norm exceeds eps (interior points pass through unchanged).
    """
    if norm == "linf":
        return np.clip(delta, -eps, eps)
    if norm != "l2":
        raise ValueError(f"unknown norm {norm!r}")
    flat = delta.reshape(len(delta), -1).astype(np.float64)
    norms = np.sqrt((flat**2).sum(axis=1))
    factor = np.where(norms > eps, eps / np.maximum(norms, 1e-30), 1.0)
    return (delta * factor.reshape(-1, 1, 1, 1)).astype(delta.dtype)


def _normalize_grad(g: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return np.sign(g)
    flat = g.reshape(len(g), -1).astype(np.float64)
    norms = np.sqrt((flat**2).sum(axis=1))
    return (g / np.maximum(norms, 1e-30).reshape(-1, 1, 1, 1)).astype(g.dtype)


def psnr(x: np.ndarray, x_adv: np.ndarray):
    """PSNR in dB for [0,1] images; identical images cap at 120 dB.

    Accepts a single image or a batch (leading axis)."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_adv.shape}")
    single = x.ndim == 3
    if single:
        x, x_adv = x[None], x_adv[None]
    mse = ((x - x_adv) ** 2).reshape(len(x), -1).mean(axis=1)
    out = np.where(mse > 0, 10.0 * np.log10(1.0 / np.maximum(mse, 1e-300)), PSNR_CAP_DB)
    out = np.minimum(out, PSNR_CAP_DB)
    return float(out[0]) if single else out


def _per_image_bce(model, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    logits, _ = model.predict(x)
    z = logits.astype(np.float64)
    t = y.astype(np.float64)
    return np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))


def _finalize(model, x, y, ids, delta, cfg) -> AdversarialResult:
    x_adv = np.clip(x + delta, 0.0, 1.0).astype(np.float32)
    pred_orig = model.predict_labels(x)
    pred_adv = model.predict_labels(x_adv)
    return AdversarialResult(
        ids=np.asarray(ids, dtype=np.int64),
        x_adv=x_adv,
        delta=delta.astype(np.float32),
        success=pred_adv != pred_orig,
        psnr_db=psnr(x, x_adv),
        final_loss=_per_image_bce(model, x_adv, y),
        config_hash=config_hash(cfg),
    )


# ---------------------------------------------------------------------------
# attacks


def fgsm(model, x: np.ndarray, y: np.ndarray, cfg: AttackConfig, ids=None) -> AdversarialResult:
    """Single signed-gradient step of size epsilon."""
    x, y, ids = _canon(x, y, ids)
    eps = cfg.epsilon / 255.0
    g = _grad_x(model, x, y)
    if not g.any():
        log.warning("fgsm: gradient is identically zero (degenerate attack)")
    delta = (eps * np.sign(g)).astype(np.float32)
    return _finalize(model, x, y, ids, delta, cfg)


def _iterative(model, x, y, ids, cfg, transform_fn=None):
    """Shared PGD-style loop; transform_fn hooks per-iteration input
    diversity or loss averaging (returns grad given current adversarial)."""
    eps, alpha = _budget(cfg, x.shape[1:])
    delta = np.zeros_like(x)
    for _ in range(cfg.steps):
        xt = np.clip(x + delta, 0.0, 1.0)
        g = _grad_x(model, xt, y) if transform_fn is None else transform_fn(xt)
        delta = project(delta + alpha * _normalize_grad(g, cfg.norm), cfg.norm, eps)
    return _finalize(model, x, y, ids, delta, cfg)


def pgd(model, x, y, cfg: AttackConfig, ids=None) -> AdversarialResult:
    """Projected gradient ascent with per-step ball projection and clipping."""
    x, y, ids = _canon(x, y, ids)
    return _iterative(model, x, y, ids, cfg)


def di2_fgsm(model, x, y, cfg: AttackConfig, ids=None) -> AdversarialResult:
    """Iterative FGSM with input diversity: with probability p per
    iteration, gradients flow through a random resize + zero-pad."""
    x, y, ids = _canon(x, y, ids)
    side = x.shape[1]
    lo = int(math.ceil(0.85 * side))
    streams = [_rng(cfg.seed, int(i)) for i in ids]
    p = cfg.transform_probability

    def diverse_grad(xt):
        n = len(xt)
        sizes_h = np.full(n, side, dtype=np.int64)
        sizes_w = np.full(n, side, dtype=np.int64)
        off_y = np.zeros(n, dtype=np.int64)
        off_x = np.zeros(n, dtype=np.int64)
        any_transformed = False
        for i, rs in enumerate(streams):
            if rs.random() < p:
                any_transformed = True
                s = int(rs.integers(lo, side + 1))
                sizes_h[i] = sizes_w[i] = s
                off_y[i] = int(rs.integers(0, side - s + 1))
                off_x[i] = int(rs.integers(0, side - s + 1))
        if not any_transformed:
            return _grad_x(model, xt, y)
        xtt = Tensor(xt, requires_grad=True)
        with _params_detached(model), Tape() as tape:
            seen = ops.resize_pad(xtt, sizes_h, sizes_w, off_y, off_x, side)
            loss = ops.binary_cross_entropy_with_logits(
                model.logits(seen), y.astype(xt.dtype), reduction="sum"
            )
        tape.backward(loss)
        return xtt.grad

    return _iterative(model, x, y, ids, cfg, transform_fn=diverse_grad)


_RWA_BLUR_RADIUS = 4


def rwa(model, x, y, cfg: AttackConfig, ids=None) -> AdversarialResult:
    """Robust white-box attack: ascends a loss averaged over the identity
    plus K randomly drawn differentiable transforms per iteration."""
    x, y, ids = _canon(x, y, ids)
    side = x.shape[1]
    tset = tuple(cfg.transform_set)
    streams = [_rng(cfg.seed, int(i)) for i in ids]
    k = cfg.rwa_samples
    inv = 1.0 / (k + 1)

    def robust_grad(xt):
        n = len(xt)
        yv = y.astype(xt.dtype)
        xtt = Tensor(xt, requires_grad=True)
        with _params_detached(model), Tape() as tape:
            total = ops.binary_cross_entropy_with_logits(
                model.logits(xtt), yv, reduction="sum"
            )
            for _ in range(k):
                choices = [tset[int(rs.integers(0, len(tset)))] for rs in streams]
                buckets: dict = {}
                for i, c in enumerate(choices):
                    buckets.setdefault(c, []).append(i)
                for tname, idx_list in sorted(buckets.items()):
                    idx = np.asarray(idx_list, dtype=np.int64)
                    sub = ops.take_rows(xtt, idx) if len(idx) < n else xtt
                    if tname == "blur":
                        sig = np.array([streams[i].uniform(0.5, 1.5) for i in idx_list])
                        sub = ops.gaussian_blur(sub, sig, radius=_RWA_BLUR_RADIUS)
                    elif tname == "rescale":
                        f = [streams[i].uniform(0.7, 0.95) for i in idx_list]
                        sizes = np.maximum(np.round(np.multiply(f, side)), 8).astype(np.int64)
                        sub = ops.downscale_upscale(sub, sizes)
                    elif tname == "noise":
                        noise = np.stack(
                            [
                                streams[i]
                                .normal(0.0, streams[i].uniform(0.01, 0.03), xt.shape[1:])
                                .astype(xt.dtype)
                                for i in idx_list
                            ]
                        )
                        sub = ops.add(sub, Tensor(noise))
                    # "identity" needs no op
                    total = ops.add(
                        total,
                        ops.binary_cross_entropy_with_logits(
                            model.logits(sub), yv[idx], reduction="sum"
                        ),
                    )
            loss = ops.mul(total, inv)
        tape.backward(loss)
        return xtt.grad

    return _iterative(model, x, y, ids, cfg, transform_fn=robust_grad)


def universal(model, images, labels, cfg: AttackConfig, ids=None) -> UniversalPerturbation:
    """Accumulate one image-shaped perturbation over shuffled dataset
    passes; optionally restricted to one class (attack direction)."""
    x = np.asarray(images, dtype=np.float32)
    y = np.asarray(labels)
    if cfg.direction == "real_to_fake":
        keep = y == 0
    elif cfg.direction == "fake_to_real":
        keep = y == 1
    else:
        keep = np.ones(len(y), dtype=bool)
    x, y = x[keep], y[keep]
    if len(x) == 0:
        raise ValueError("universal attack needs a nonempty (filtered) dataset")

    eps, alpha = _budget(cfg, x.shape[1:])
    delta = np.zeros(x.shape[1:], dtype=np.float32)
    order_rng = _rng(cfg.seed, 0x0A11)
    for _ in range(cfg.n_epochs):
        for i in order_rng.permutation(len(x)):
            xi = np.clip(x[i] + delta, 0.0, 1.0)[None]
            g = _grad_x(model, xi, np.array([y[i]]))
            step = alpha * _normalize_grad(g, cfg.norm)[0]
            delta = project((delta + step)[None], cfg.norm, eps)[0]
    return UniversalPerturbation(
        delta=delta,
        norm=cfg.norm,
        epsilon=cfg.epsilon,
        direction=cfg.direction,
        config_hash=config_hash(cfg),
    )


def apply_universal(model, up: UniversalPerturbation, x, y, cfg: AttackConfig, ids=None) -> AdversarialResult:
    """Evaluate a universal perturbation on held-out images."""
    x, y, ids = _canon(x, y, ids)
    delta = np.broadcast_to(up.delta, x.shape).astype(np.float32)
    return _finalize(model, x, y, ids, delta, cfg)


def _canon(x, y, ids):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    y = np.atleast_1d(np.asarray(y))
    if ids is None:
        ids = np.arange(len(x))
    return x, y, np.asarray(ids)


_METHODS = {"fgsm": fgsm, "pgd": pgd, "di2_fgsm": di2_fgsm, "rwa": rwa}


def run_attack(model, x, y, cfg: AttackConfig, ids=None, chunk: int = 256) -> AdversarialResult:
    """Dispatch a per-image attack (universal has its own entry points).

    Images are processed in chunks to bound memory; per-image RNG streams
    make the result independent of the chunk size.
    """
    if cfg.method == "universal":
        raise ValueError("use universal()/apply_universal() for the universal attack")
    fn = _METHODS[cfg.method]
    x, y, ids = _canon(x, y, ids)
    if len(x) <= chunk:
        return fn(model, x, y, cfg, ids)
    parts = [
        fn(model, x[lo : lo + chunk], y[lo : lo + chunk], cfg, ids[lo : lo + chunk])
        for lo in range(0, len(x), chunk)
    ]
    return AdversarialResult(
        ids=np.concatenate([p.ids for p in parts]),
        x_adv=np.concatenate([p.x_adv for p in parts]),
        delta=np.concatenate([p.delta for p in parts]),
        success=np.concatenate([p.success for p in parts]),
        psnr_db=np.concatenate([p.psnr_db for p in parts]),
        final_loss=np.concatenate([p.final_loss for p in parts]),
        config_hash=config_hash(cfg),
    )
