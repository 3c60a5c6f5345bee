"""Detector architectures: a small strided CNN and a patch transformer.

Both families map [B, H, W, C] images in [0,1] to a single logit
(real-negative / fake-positive). Parameters live in an ordered dict of
named Tensors; frozen_head detectors mark every non-head parameter as
frozen so training touches only the classification head.
"""

import json
from pathlib import Path

import numpy as np

from . import ops
from .atns import read_tensor, write_tensor
from .config import DetectorSpec
from .tensor import ShapeError, Tensor

_PREDICT_CHUNK = 256


def _init_rng(seed: int):
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x1217]))


class Detector:
    """A built (possibly trained) binary detector."""

    def __init__(self, spec: DetectorSpec, image_side: int, channels: int = 1):
        spec.validate()
        self.spec = spec
        self.image_side = image_side
        self.channels = channels
        self.params: dict[str, Tensor] = {}
        self.metrics: dict = {}
        self._rng = _init_rng(spec.seed)
        if spec.family == "cnn":
            self._build_cnn()
        else:
            self._build_transformer()
        self.frozen = (
            {n for n in self.params if not n.startswith("head.")}
            if spec.finetune == "frozen_head"
            else set()
        )
        self._apply_frozen()

    def _apply_frozen(self) -> None:
        for name in self.frozen:
            t = self.params[name]
            t.requires_grad = False
            t.grad = None

    # -- construction -------------------------------------------------------

    def _param(self, name: str, shape, std: float = 0.0) -> Tensor:
        if std > 0:
            data = (self._rng.standard_normal(shape) * std).astype(np.float32)
        else:
            data = np.zeros(shape, dtype=np.float32)
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def _cnn_plan(self):
        depth, w0 = self.spec.eff_depth, self.spec.eff_width
        widths = [int(round(w)) for w in np.linspace(w0, 4 * w0, depth)]
        strides = [self.spec.first_layer_stride]
        side = self.image_side // self.spec.first_layer_stride
        for _ in range(depth - 1):
            if side > 8:
                strides.append(2)
                side //= 2
            else:
                strides.append(1)
        return widths, strides

    def _build_cnn(self):
        widths, strides = self._cnn_plan()
        cin = self.channels
        for i, (cout, _) in enumerate(zip(widths, strides)):
            self._param(f"conv{i}.w", (3, 3, cin, cout), std=np.sqrt(2.0 / (9 * cin)))
            self._param(f"conv{i}.b", (cout,))
            # channel LayerNorm per spatial position (ConvNeXt-style)
            self.params[f"conv{i}.ln.g"] = Tensor(
                np.ones(cout, dtype=np.float32), requires_grad=True
            )
            self._param(f"conv{i}.ln.b", (cout,))
            cin = cout
        self._build_head(cin)

    def _build_transformer(self):
        p = self.spec.patch_size
        d = self.spec.eff_width
        n_tokens = (self.image_side // p) ** 2
        pdim = p * p * self.channels
        self._param("embed.w", (pdim, d), std=np.sqrt(1.0 / pdim))
        self._param("embed.b", (d,))
        self.params["pos"] = Tensor(
            (self._rng.standard_normal((n_tokens, d)) * 0.02).astype(np.float32),
            requires_grad=True,
        )
        for i in range(self.spec.eff_depth):
            pre = f"block{i}."
            for nm in ("ln1", "ln2"):
                self.params[pre + nm + ".g"] = Tensor(
                    np.ones(d, dtype=np.float32), requires_grad=True
                )
                self._param(pre + nm + ".b", (d,))
            for nm in ("q", "k", "v", "proj"):
                self._param(pre + "attn." + nm + ".w", (d, d), std=np.sqrt(1.0 / d))
                self._param(pre + "attn." + nm + ".b", (d,))
            self._param(pre + "mlp.fc1.w", (d, 4 * d), std=np.sqrt(2.0 / d))
            self._param(pre + "mlp.fc1.b", (4 * d,))
            self._param(pre + "mlp.fc2.w", (4 * d, d), std=np.sqrt(1.0 / (4 * d)))
            self._param(pre + "mlp.fc2.b", (d,))
        self.params["final_ln.g"] = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
        self._param("final_ln.b", (d,))
        self._build_head(d)

    def _build_head(self, din: int):
        if self.spec.head_layers == 2:
            mid = max(din // 2, 8)
            self._param("head.fc1.w", (din, mid), std=np.sqrt(2.0 / din))
            self._param("head.fc1.b", (mid,))
            self._param("head.fc2.w", (mid, 1), std=np.sqrt(1.0 / mid))
            self._param("head.fc2.b", (1,))
        else:
            self._param("head.fc1.w", (din, 1), std=np.sqrt(1.0 / din))
            self._param("head.fc1.b", (1,))

    @property
    def n_heads(self) -> int:
        return 4

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    # -- forward -------------------------------------------------------------

    def _head(self, feat: Tensor) -> Tensor:
        p = self.params
        if self.spec.head_layers == 2:
            h = ops.relu(ops.dense(feat, p["head.fc1.w"], p["head.fc1.b"]))
            out = ops.dense(h, p["head.fc2.w"], p["head.fc2.b"])
        else:
            out = ops.dense(feat, p["head.fc1.w"], p["head.fc1.b"])
        return ops.reshape(out, (feat.shape[0],))

    def _backbone(self, x: Tensor) -> Tensor:
        p = self.params
        x = ops.add(x, Tensor(np.float32(-0.5)))  # center [0,1] pixels
        if self.spec.family == "cnn":
            widths, strides = self._cnn_plan()
            h = x
            for i, s in enumerate(strides):
                h = ops.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=s, padding=1)
                h = ops.layer_norm(h, p[f"conv{i}.ln.g"], p[f"conv{i}.ln.b"])
                h = ops.relu(h)
            return ops.global_average_pool(h, axes=(1, 2))
        tok = ops.patchify(x, p["embed.w"], p["embed.b"], self.spec.patch_size)
        tok = ops.add(tok, p["pos"])
        for i in range(self.spec.eff_depth):
            pre = f"block{i}."
            n1 = ops.layer_norm(tok, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = ops.dense(n1, p[pre + "attn.q.w"], p[pre + "attn.q.b"])
            k = ops.dense(n1, p[pre + "attn.k.w"], p[pre + "attn.k.b"])
            v = ops.dense(n1, p[pre + "attn.v.w"], p[pre + "attn.v.b"])
            att = ops.scaled_dot_product_attention(q, k, v, n_heads=self.n_heads)
            att = ops.dense(att, p[pre + "attn.proj.w"], p[pre + "attn.proj.b"])
            tok = ops.add(tok, att)
            n2 = ops.layer_norm(tok, p[pre + "ln2.g"], p[pre + "ln2.b"])
            m = ops.gelu(ops.dense(n2, p[pre + "mlp.fc1.w"], p[pre + "mlp.fc1.b"]))
            m = ops.dense(m, p[pre + "mlp.fc2.w"], p[pre + "mlp.fc2.b"])
            tok = ops.add(tok, m)
        tok = ops.layer_norm(tok, p["final_ln.g"], p["final_ln.b"])
        return ops.global_average_pool(tok, axes=(1,))

    def logits(self, x: Tensor) -> Tensor:
        """Batch [B, H, W, C] -> logits [B]. Records on the active tape."""
        if x.data.ndim != 4 or x.shape[1:] != (self.image_side, self.image_side, self.channels):
            raise ShapeError(
                "detector",
                f"expected [B,{self.image_side},{self.image_side},{self.channels}], got {tuple(x.shape)}",
            )
        return self._head(self._backbone(x))

    def predict(self, images: np.ndarray):
        """(logits, probabilities) for [N,H,W,C] or a single [H,W,C] image."""
        arr = np.asarray(images, dtype=np.float32)
        single = arr.ndim == 3
        if single:
            arr = arr[None]
        outs = []
        for lo in range(0, len(arr), _PREDICT_CHUNK):
            outs.append(self.logits(Tensor(arr[lo : lo + _PREDICT_CHUNK])).data)
        logit = np.concatenate(outs) if len(outs) > 1 else outs[0]
        prob = 1.0 / (1.0 + np.exp(-logit.astype(np.float64)))
        if single:
            return float(logit[0]), float(prob[0])
        return logit, prob

    def predict_labels(self, images: np.ndarray) -> np.ndarray:
        """Hard labels at the 0.5 threshold (1 = fake)."""
        _, prob = self.predict(images)
        return (np.asarray(prob) > 0.5).astype(np.int64)

    def trainable(self):
        return {n: t for n, t in self.params.items() if n not in self.frozen}

    # -- persistence ----------------------------------------------------------

    def save(self, out_dir, extra: dict | None = None) -> None:
        out = Path(out_dir)
        (out / "params").mkdir(parents=True, exist_ok=True)
        for name, t in self.params.items():
            write_tensor(out / "params" / (name.replace("/", "_") + ".atns"), t.data)
        sidecar = {
            "spec": {
                "id": self.spec.id,
                "family": self.spec.family,
                "augmentation": self.spec.augmentation,
                "finetune": self.spec.finetune,
                "head_layers": self.spec.head_layers,
                "depth": self.spec.depth,
                "width": self.spec.width,
                "first_layer_stride": self.spec.first_layer_stride,
                "patch_size": self.spec.patch_size,
                "seed": self.spec.seed,
                "backbone": self.spec.backbone,
            },
            "image_side": self.image_side,
            "channels": self.channels,
            "param_names": list(self.params),
            "param_count": self.param_count(),
            "metrics": self.metrics,
        }
        if extra:
            sidecar.update(extra)
        (out / "detector.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, ckpt_dir) -> "Detector":
        ckpt = Path(ckpt_dir)
        meta = json.loads((ckpt / "detector.json").read_text())
        spec = DetectorSpec(**meta["spec"])
        det = cls(spec, meta["image_side"], meta["channels"])
        for name in det.params:
            data = read_tensor(ckpt / "params" / (name.replace("/", "_") + ".atns"))
            if data.shape != det.params[name].shape:
                raise ShapeError("detector", f"checkpoint param {name} shape mismatch")
            det.params[name] = Tensor(data, requires_grad=True)
        det._apply_frozen()
        det.metrics = meta.get("metrics", {})
        return det


def build_detector(
    spec: DetectorSpec,
    image_side: int = 64,
    channels: int = 1,
    backbone_params: dict | None = None,
) -> Detector:
    """Construct an untrained detector; frozen_head specs receive their
    pretrained backbone weights here."""
    det = Detector(spec, image_side, channels)
    if spec.finetune == "frozen_head":
        if backbone_params is None:
            raise ValueError(
                f"detector {spec.id}: frozen_head build requires backbone parameters"
            )
        for name, arr in backbone_params.items():
            if name in det.params:
                if det.params[name].shape != arr.shape:
                    raise ShapeError("detector", f"backbone param {name} shape mismatch")
                det.params[name] = Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)
        det.frozen = {n for n in det.params if not n.startswith("head.")}
        det._apply_frozen()
    return det
