"""Configuration dataclasses, validation and lossless JSON round-trip.

Epsilon values are given in 8-bit units everywhere (epsilon=8 means
8/255 in [0,1] pixel scale); conversion happens once, at use sites, via
AttackConfig.eps01 / eps_l2.
"""

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FingerprintSpec:
    """Frequency-domain signature injected into fake images."""

    peak_frequencies: tuple = ((0.25, 0.0), (0.0, 0.25), (0.25, 0.25))
    peak_amplitude: float = 0.05  # fraction of image std
    highpass_boost: float = 0.15  # gain above normalized radius 0.35

    def validate(self) -> None:
        for fu, fv in self.peak_frequencies:
            r = math.hypot(fu, fv)
            if not (0.0 < r <= 0.5):
                raise ConfigError(
                    f"peak frequency ({fu},{fv}) has radius {r:.3f}, need (0, 0.5]"
                )
        if self.peak_amplitude < 0:
            raise ConfigError("peak_amplitude must be >= 0")
        if self.highpass_boost < 0:
            raise ConfigError("highpass_boost must be >= 0")


@dataclass(frozen=True)
class CorpusConfig:
    image_side: int = 64
    channels: int = 1
    n_real: int = 400
    n_fake: int = 400
    split: tuple = (0.625, 0.125, 0.25)  # train/val/test
    seed: int = 0
    fingerprint: FingerprintSpec = field(default_factory=FingerprintSpec)

    def validate(self) -> None:
        if self.image_side < 8 or self.image_side & (self.image_side - 1):
            raise ConfigError(f"image_side must be a power of two, got {self.image_side}")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.n_real <= 0 or self.n_fake <= 0:
            raise ConfigError("both classes need at least one image")
        if len(self.split) != 3 or any(f < 0 for f in self.split):
            raise ConfigError("split needs three nonnegative fractions")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions sum to {sum(self.split)}, not 1")
        self.fingerprint.validate()


@dataclass(frozen=True)
class DetectorSpec:
    id: int
    family: str  # cnn | patch_transformer
    augmentation: str = "weak"  # weak | strong
    finetune: str = "e2e"  # e2e | frozen_head
    head_layers: int = 1
    depth: int = 0  # 0 = family default
    width: int = 0  # 0 = family default
    first_layer_stride: int = 2  # cnn only
    patch_size: int = 8  # transformer only
    seed: int = 0
    backbone: Optional[str] = None  # frozen_head: checkpoint ref or "auto"

    CNN_DEFAULT_DEPTH = 6
    CNN_DEFAULT_WIDTH = 16
    VIT_DEFAULT_DEPTH = 3
    VIT_DEFAULT_WIDTH = 64

    def validate(self) -> None:
        if self.family not in ("cnn", "patch_transformer"):
            raise ConfigError(f"unknown family {self.family!r}")
        if self.augmentation not in ("weak", "strong"):
            raise ConfigError(f"unknown augmentation {self.augmentation!r}")
        if self.finetune not in ("e2e", "frozen_head"):
            raise ConfigError(f"unknown finetune mode {self.finetune!r}")
        if self.head_layers not in (1, 2):
            raise ConfigError("head_layers must be 1 or 2")
        if self.family == "cnn" and self.first_layer_stride not in (1, 2):
            raise ConfigError("first_layer_stride must be 1 or 2")
        if self.family == "patch_transformer" and self.patch_size not in (8, 16):
            raise ConfigError("patch_size must be 8 or 16")
        if self.finetune == "frozen_head" and not self.backbone:
            raise ConfigError(
                f"detector {self.id}: frozen_head requires a pretrained backbone reference"
            )

    @property
    def eff_depth(self) -> int:
        if self.depth:
            return self.depth
        return self.CNN_DEFAULT_DEPTH if self.family == "cnn" else self.VIT_DEFAULT_DEPTH

    @property
    def eff_width(self) -> int:
        if self.width:
            return self.width
        return self.CNN_DEFAULT_WIDTH if self.family == "cnn" else self.VIT_DEFAULT_WIDTH


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.01
    weight_decay: float = 1e-4
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer != "sgd_momentum":
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


ATTACK_METHODS = ("fgsm", "pgd", "di2_fgsm", "rwa", "universal")
RWA_TRANSFORMS = ("blur", "rescale", "noise")  # default set
RWA_VALID_TRANSFORMS = ("identity",) + RWA_TRANSFORMS  # registered differentiable set


@dataclass(frozen=True)
class AttackConfig:
    method: str = "pgd"
    norm: str = "linf"  # linf | l2
    epsilon: float = 8.0  # 8-bit units
    steps: int = 40
    step_size: float = 0.0  # 8-bit units; 0 = default (eps/8 linf, eps/4 l2)
    transform_probability: float = 0.5  # di2_fgsm only
    transform_set: tuple = RWA_TRANSFORMS  # rwa only
    rwa_samples: int = 4  # transforms averaged per rwa step (plus identity)
    n_epochs: int = 3  # universal only
    direction: str = "untargeted"  # universal: untargeted | real_to_fake | fake_to_real
    seed: int = 0

    def validate(self) -> None:
        if self.method not in ATTACK_METHODS:
            raise ConfigError(f"unknown attack method {self.method!r}")
        if self.norm not in ("linf", "l2"):
            raise ConfigError(f"unknown norm {self.norm!r}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.method != "fgsm":
            if self.steps < 1:
                raise ConfigError("steps must be >= 1 for iterative attacks")
            if self.step_size < 0:
                raise ConfigError("step_size must be >= 0")
        if not 0.0 <= self.transform_probability <= 1.0:
            raise ConfigError("transform_probability must be in [0, 1]")
        for t in self.transform_set:
            if t not in RWA_VALID_TRANSFORMS:
                raise ConfigError(
                    f"transform {t!r} is not a registered differentiable transform"
                )
        if self.method == "rwa" and not self.transform_set:
            raise ConfigError("rwa needs a nonempty transform_set")
        if self.method == "universal":
            if self.n_epochs < 0:
                raise ConfigError("n_epochs must be >= 0")
            if self.direction not in ("untargeted", "real_to_fake", "fake_to_real"):
                raise ConfigError(f"unknown universal direction {self.direction!r}")

    @property
    def eps01(self) -> float:
        """Epsilon in [0,1] pixel units (l-inf semantics)."""
        return self.epsilon / 255.0

    def eps_l2(self, n_pixels: int) -> float:
        """l2 budget scaled so epsilon produces PSNR comparable to l-inf."""
        return self.epsilon * math.sqrt(n_pixels) / 255.0

    @property
    def alpha(self) -> float:
        """Step size in 8-bit units (defaults: eps/8 l-inf, eps/4 l2)."""
        if self.step_size > 0:
            return self.step_size
        return self.epsilon / 8.0 if self.norm == "linf" else self.epsilon / 4.0


# ---------------------------------------------------------------------------
# experiment file


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _to_jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    return obj


def _tuplify(obj):
    if isinstance(obj, list):
        return tuple(_tuplify(v) for v in obj)
    return obj


def _from_dict(cls, d: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in d:
            continue
        v = d[f.name]
        if f.name == "fingerprint" and isinstance(v, dict):
            v = _from_dict(FingerprintSpec, v)
        elif isinstance(v, list):
            v = _tuplify(v)
        kwargs[f.name] = v
    unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown fields {sorted(unknown)}")
    return cls(**kwargs)


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig
    roster: tuple  # DetectorSpec...
    train: TrainConfig
    attacks: dict  # name -> AttackConfig
    analyses: tuple  # directive dicts
    seed: int = 0

    def validate(self) -> None:
        self.corpus.validate()
        self.train.validate()
        ids = [s.id for s in self.roster]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate detector ids in roster")
        for s in self.roster:
            s.validate()
            if s.family == "patch_transformer" and self.corpus.image_side % s.patch_size:
                raise ConfigError(
                    f"image_side {self.corpus.image_side} not divisible by patch "
                    f"size {s.patch_size} (detector {s.id})"
                )
        for name, a in self.attacks.items():
            a.validate()
        known = {"matrix", "sweep", "spectrum", "bandwidth"}
        for d in self.analyses:
            kind = d.get("kind")
            if kind not in known:
                raise ConfigError(f"unknown analysis directive kind {kind!r}")
            att = d.get("attack")
            if kind in ("matrix", "spectrum") and att not in self.attacks:
                raise ConfigError(f"analysis {kind!r} references unknown attack {att!r}")

    def to_json(self) -> str:
        payload = {
            "corpus": _to_jsonable(self.corpus),
            "roster": [_to_jsonable(s) for s in self.roster],
            "train": _to_jsonable(self.train),
            "attacks": {k: _to_jsonable(v) for k, v in self.attacks.items()},
            "analyses": _to_jsonable(list(self.analyses)),
            "seed": self.seed,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        try:
            cfg = cls(
                corpus=_from_dict(CorpusConfig, d.get("corpus", {})),
                roster=tuple(_from_dict(DetectorSpec, s) for s in d.get("roster", [])),
                train=_from_dict(TrainConfig, d.get("train", {})),
                attacks={
                    k: _from_dict(AttackConfig, v)
                    for k, v in d.get("attacks", {}).items()
                },
                analyses=tuple(d.get("analyses", [])),
                seed=int(d.get("seed", 0)),
            )
        except TypeError as e:
            raise ConfigError(str(e)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_json(f.read())


def config_hash(obj) -> str:
    """Content hash of any config dataclass (canonical JSON, sha256)."""
    return hashlib.sha256(
        json.dumps(_to_jsonable(obj), sort_keys=True).encode()
    ).hexdigest()[:16]
