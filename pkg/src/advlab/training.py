"""SGD-momentum training for detectors, plus rotation pretraining for
frozen-backbone slots.

Shuffling and per-sample augmentation draw from streams derived of
(train seed, epoch, corpus index), so results do not depend on batching
internals. frozen_head mode never touches backbone parameters: they are
requires_grad=False leaves and the optimizer skips them, which the tests
verify bit-for-bit.
"""

import numpy as np

from . import ops
from .analysis import auc
from .augment import augment
from .config import TrainConfig
from .datagen import Dataset, gen_real
from .models import Detector
from .tensor import Tape, Tensor


class TrainingDiverged(RuntimeError):
    pass


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(e) & 0xFFFFFFFF for e in entropy])
    )


def _sgd_step(detector: Detector, velocity: dict, tc: TrainConfig) -> None:
    for name, t in detector.params.items():
        if name in detector.frozen or t.grad is None:
            continue
        g = t.grad + tc.weight_decay * t.data
        v = velocity[name]
        v *= tc.momentum
        v -= tc.lr * g
        t.data += v
        t.grad[...] = 0.0


def _epoch_metrics(detector: Detector, x_val, y_val) -> dict:
    logits, prob = detector.predict(x_val)
    acc = float(((prob > 0.5).astype(np.int64) == y_val).mean())
    try:
        val_auc = auc(prob, y_val)
    except ValueError:  # single-class validation split
        val_auc = float("nan")
    return {"val_accuracy": acc, "val_auc": val_auc}


def train(
    detector: Detector,
    dataset: Dataset,
    tc: TrainConfig,
    augment_images: bool = True,
) -> Detector:
    """Fit the detector on the corpus train split; metrics from val split."""
    tc.validate()
    x_tr, y_tr, idx_tr = dataset.subset("train")
    x_val, y_val, _ = dataset.subset("val")
    if len(np.unique(y_tr)) < 2:
        raise ValueError("train split must contain both classes")

    level = detector.spec.augmentation
    velocity = {
        n: np.zeros_like(t.data)
        for n, t in detector.params.items()
        if n not in detector.frozen
    }
    shuffle_rng = _rng(tc.seed, 0x51F)
    loss_curve = []
    for epoch in range(tc.epochs):
        order = shuffle_rng.permutation(len(x_tr))
        epoch_loss = 0.0
        for lo in range(0, len(order), tc.batch_size):
            sel = order[lo : lo + tc.batch_size]
            if augment_images:
                xb = np.stack(
                    [
                        augment(x_tr[i], level, _rng(tc.seed, epoch, int(idx_tr[i])))
                        for i in sel
                    ]
                )
            else:
                xb = x_tr[sel]
            yb = y_tr[sel].astype(np.float32)
            with Tape() as tape:
                logits = detector.logits(Tensor(xb))
                loss = ops.binary_cross_entropy_with_logits(logits, yb)
            lval = loss.item()
            if not np.isfinite(lval):
                raise TrainingDiverged(
                    f"loss became {lval} at epoch {epoch}, batch {lo // tc.batch_size} "
                    f"(lr={tc.lr}, detector {detector.spec.id})"
                )
            tape.backward(loss)
            _sgd_step(detector, velocity, tc)
            epoch_loss += lval * len(sel)
        loss_curve.append(epoch_loss / len(order))

    detector.metrics = {
        "loss_curve": loss_curve,
        "epochs": tc.epochs,
        **_epoch_metrics(detector, x_val, y_val),
    }
    return detector


# ---------------------------------------------------------------------------
# rotation pretraining (stand-in for an externally pretrained frozen backbone)


def _rotation_bits(k: int) -> np.ndarray:
    # factor the 4-way rotation label into two binary targets
    return np.array([k in (1, 3), k in (2, 3)], dtype=np.float32)


def pretrain_rotation_backbone(
    spec_like,
    image_side: int,
    channels: int = 1,
    n_images: int = 256,
    epochs: int = 8,
    lr: float = 0.01,
    seed: int = 0,
) -> dict:
    """Train a transformer backbone to predict image rotation; return its
    parameters (everything except the rotation head)."""
    from dataclasses import replace

    base_spec = replace(spec_like, finetune="e2e", head_layers=1, backbone=None)
    det = Detector(base_spec, image_side, channels)
    # swap the binary head for a 2-bit rotation head
    d = det.params["head.fc1.w"].shape[0]
    rng = _rng(seed, 0x407)
    det.params["head.fc1.w"] = Tensor(
        (rng.standard_normal((d, 2)) * np.sqrt(1.0 / d)).astype(np.float32),
        requires_grad=True,
    )
    det.params["head.fc1.b"] = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)

    images = np.stack(
        [
            gen_real(int(_rng(seed, 0x1A6, i).integers(0, 2**31)), image_side, channels)
            .transpose(1, 2, 0)
            for i in range(n_images)
        ]
    )
    velocity = {n: np.zeros_like(t.data) for n, t in det.params.items()}
    tc = TrainConfig(epochs=1, batch_size=32, lr=lr, weight_decay=1e-4, seed=seed)
    data_rng = _rng(seed, 0xDA7A)
    for epoch in range(epochs):
        order = data_rng.permutation(n_images)
        for lo in range(0, n_images, tc.batch_size):
            sel = order[lo : lo + tc.batch_size]
            ks = data_rng.integers(0, 4, size=len(sel))
            xb = np.stack(
                [np.rot90(images[i], k, axes=(0, 1)) for i, k in zip(sel, ks)]
            )
            tb = np.stack([_rotation_bits(int(k)) for k in ks])
            with Tape() as tape:
                feat = det._backbone(Tensor(np.ascontiguousarray(xb)))
                logits = ops.dense(feat, det.params["head.fc1.w"], det.params["head.fc1.b"])
                loss = ops.binary_cross_entropy_with_logits(logits, tb)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"rotation pretraining diverged at epoch {epoch}")
            tape.backward(loss)
            _sgd_step(det, velocity, tc)

    return {
        n: t.data.copy() for n, t in det.params.items() if not n.startswith("head.")
    }
