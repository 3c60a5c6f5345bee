"""Evaluation metrics and frequency-domain diagnostics.

Everything here is a pure function over arrays or saved artifacts;
attack generation and file emission live in the pipeline. SAR follows
the conditioned-on-correct definition as primary (label flips among
images the target originally classified correctly) with the
unconditioned flip rate reported alongside.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


def auc(scores, labels) -> float:
    """Mann-Whitney AUC (pair counting; ties score half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("auc needs both classes present")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


@dataclass
class SarResult:
    sar: float  # flips among originally-correct (primary definition)
    sar_unconditioned: float  # flips among all images
    n_correct: int
    n: int


def sar(target, adversarial: np.ndarray, originals: np.ndarray, labels: np.ndarray) -> SarResult:
    """Success attack rate of an adversarial set against one detector."""
    if len(adversarial) == 0:
        raise ValueError("sar needs a nonempty adversarial set")
    if adversarial.shape != originals.shape:
        raise ValueError(
            f"adversarial {adversarial.shape} and originals {originals.shape} differ"
        )
    pred_orig = target.predict_labels(originals)
    pred_adv = target.predict_labels(adversarial)
    flipped = pred_adv != pred_orig
    correct = pred_orig == np.asarray(labels)
    n_correct = int(correct.sum())
    primary = float(flipped[correct].mean()) if n_correct else float("nan")
    return SarResult(
        sar=primary,
        sar_unconditioned=float(flipped.mean()),
        n_correct=n_correct,
        n=len(labels),
    )


@dataclass
class TransferMatrix:
    """S x S grid of SAR values; row = source detector, column = target."""

    source_ids: list
    sar: np.ndarray  # [S, S] primary SAR
    sar_unconditioned: np.ndarray
    n: int
    method: str = ""
    epsilon: float = 0.0

    def diagonal(self) -> np.ndarray:
        return np.diag(self.sar)


def transfer_matrix_from_sets(
    detectors: dict,
    adv_sets: dict,
    originals: np.ndarray,
    labels: np.ndarray,
    method: str = "",
    epsilon: float = 0.0,
) -> TransferMatrix:
    """Evaluate every (source, target) pair from per-source adversarial sets.

    detectors: id -> Detector; adv_sets: source id -> [N,H,W,C] images.
    Row i uses the identical adversarial set for every target column.
    """
    ids = sorted(detectors)
    if sorted(adv_sets) != ids:
        raise ValueError("adversarial sets must cover exactly the roster ids")
    s = len(ids)
    grid = np.zeros((s, s))
    grid_u = np.zeros((s, s))
    for i, src in enumerate(ids):
        adv = adv_sets[src]
        for j, tgt in enumerate(ids):
            r = sar(detectors[tgt], adv, originals, labels)
            grid[i, j] = r.sar
            grid_u[i, j] = r.sar_unconditioned
    return TransferMatrix(
        source_ids=ids,
        sar=grid,
        sar_unconditioned=grid_u,
        n=len(labels),
        method=method,
        epsilon=epsilon,
    )


def intra_cross_family_means(tm: TransferMatrix, families: dict) -> tuple:
    """(mean intra-family off-diagonal SAR, mean cross-family SAR)."""
    intra, cross = [], []
    for i, src in enumerate(tm.source_ids):
        for j, tgt in enumerate(tm.source_ids):
            if i == j:
                continue
            (intra if families[src] == families[tgt] else cross).append(tm.sar[i, j])
    return float(np.mean(intra)), float(np.mean(cross))


@dataclass
class SweepCurve:
    abscissa: list
    series: dict = field(default_factory=dict)  # name -> {"mean": [...], "std": [...]}

    def add(self, name: str, means, stds) -> None:
        if len(means) != len(self.abscissa) or len(stds) != len(self.abscissa):
            raise ValueError("series length must match abscissa")
        self.series[name] = {"mean": list(map(float, means)), "std": list(map(float, stds))}


def family_pairs(roster_families: dict, src_family: str, tgt_family: str) -> list:
    """Ordered (source, target) id pairs across/within families (source != target)."""
    pairs = [
        (i, j)
        for i in sorted(roster_families)
        for j in sorted(roster_families)
        if i != j
        and roster_families[i] == src_family
        and roster_families[j] == tgt_family
    ]
    if not pairs:
        raise ValueError(
            f"no ordered detector pairs for {src_family}->{tgt_family}; "
            "need >= 1 detector per family and >= 2 for same-family sweeps"
        )
    return pairs


def pair_sweep_stats(sar_table: dict, pairs: list, eps_list) -> tuple:
    """Per-epsilon mean and population std of SAR over detector pairs.

    sar_table: (source_id, target_id, epsilon) -> SAR value.
    """
    means, stds = [], []
    for eps in eps_list:
        vals = [sar_table[(i, j, eps)] for i, j in pairs]
        means.append(float(np.mean(vals)))
        stds.append(float(np.std(vals)))
    return means, stds


# ---------------------------------------------------------------------------
# frequency-domain diagnostics


@dataclass
class SpectrumMap:
    """fftshifted sample-averaged 2-D power spectrum of perturbations."""

    power: np.ndarray  # [N, N] float64, nonnegative
    n_samples: int
    source: str = ""

    @property
    def side(self) -> int:
        return self.power.shape[0]


def avg_power_spectrum(perturbations: np.ndarray, source: str = "") -> SpectrumMap:
    """Mean squared-modulus DFT of a set of [N,H,W] or [N,H,W,C] patterns.

    Multichannel inputs are averaged to one channel first.
    """
    arr = np.asarray(perturbations, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr.mean(axis=3)
    if arr.ndim != 3 or len(arr) == 0:
        raise ValueError("need a nonempty [N,H,W] (or [N,H,W,C]) perturbation set")
    power = np.zeros(arr.shape[1:], dtype=np.float64)
    for p in arr:
        power += np.abs(np.fft.fft2(p)) ** 2
    power /= len(arr)
    return SpectrumMap(power=np.fft.fftshift(power), n_samples=len(arr), source=source)


def _shifted_freq_radius(n: int) -> np.ndarray:
    """Normalized frequency radius (cycles/pixel) on the fftshifted grid."""
    f = np.fft.fftshift(np.fft.fftfreq(n))
    return np.hypot(f[:, None], f[None, :])


def axis_energy_ratio(spectrum: SpectrumMap, w: int = 1) -> float:
    """Cross-shape score: axial band power over off-axis power (DC excluded).

    > 1 indicates energy concentrated on the horizontal/vertical
    frequency axes, the signature of patchwise processing.
    """
    n = spectrum.side
    c = n // 2
    if w < 1:
        raise ValueError("band halfwidth must be >= 1 bin")
    if w >= c:
        raise ValueError(f"band halfwidth {w} covers the whole {n}x{n} grid")
    i = np.arange(n)
    on_axis = (np.abs(i[:, None] - c) <= w) | (np.abs(i[None, :] - c) <= w)
    axis_mask = on_axis.copy()
    axis_mask[c, c] = False  # DC excluded
    elsewhere = ~on_axis
    return float(spectrum.power[axis_mask].mean() / spectrum.power[elsewhere].mean())


def band_energy_profile(spectrum: SpectrumMap, n_annuli: int = 10) -> dict:
    """Energy fraction per normalized-frequency annulus up to 0.5.

    Corner bins beyond radius 0.5 are outside every annulus and excluded
    from the normalization; fractions over the annuli sum to 1. Also
    reports the spectral centroid over the included bins.
    """
    r = _shifted_freq_radius(spectrum.side)
    edges = np.linspace(0.0, 0.5, n_annuli + 1)
    included = r <= 0.5
    total = spectrum.power[included].sum()
    fractions = []
    for k in range(n_annuli):
        m = (r >= edges[k]) & (r < edges[k + 1]) if k < n_annuli - 1 else (
            (r >= edges[k]) & included
        )
        fractions.append(float(spectrum.power[m].sum() / total) if total > 0 else 0.0)
    centroid = float((spectrum.power[included] * r[included]).sum() / total) if total > 0 else 0.0
    return {
        "edges": [float(e) for e in edges],
        "fractions": fractions,
        "centroid": centroid,
    }


def spectral_centroid(spectrum: SpectrumMap) -> float:
    return band_energy_profile(spectrum)["centroid"]


# ---------------------------------------------------------------------------
# low-pass filtering


def lowpass(images: np.ndarray, bandwidth: float, shape: str = "ideal") -> np.ndarray:
    """Low-pass filter with cutoff = bandwidth x Nyquist.

    bandwidth is the cutoff radius as a fraction of the Nyquist
    frequency: the filter keeps DFT bins with index radius <= B*N/2.
    B >= 1 is all-pass by definition (the full Nyquist square passes,
    corners included). Output is the real part clipped to [0,1].
    """
    if not 0.0 <= bandwidth:
        raise ValueError("bandwidth must be >= 0")
    if shape not in ("ideal", "gaussian"):
        raise ValueError(f"unknown filter shape {shape!r}")
    arr = np.asarray(images, dtype=np.float32)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if bandwidth >= 1.0 and shape == "ideal":
        out = np.clip(arr, 0.0, 1.0)
        return out[0] if single else out
    n = arr.shape[1]
    fi = np.fft.fftfreq(n) * n  # signed integer frequency index
    radius = np.hypot(fi[:, None], fi[None, :])
    if shape == "ideal":
        mask = (radius <= bandwidth * n / 2.0 + 1e-9).astype(np.float64)
    else:
        sigma = max(bandwidth * n / 4.0, 1e-6)
        mask = np.exp(-0.5 * (radius / sigma) ** 2)
    spec = np.fft.fft2(arr, axes=(1, 2))
    filtered = np.fft.ifft2(spec * mask[None, :, :, None], axes=(1, 2)).real
    out = np.clip(filtered, 0.0, 1.0).astype(np.float32)
    return out[0] if single else out


def bandwidth_sweep(detectors: dict, b_values, images: np.ndarray, labels: np.ndarray) -> dict:
    """Accuracy and AUC per detector per low-pass bandwidth B.

    Returns {detector_id: {"B": [...], "accuracy": [...], "auc": [...]}}.
    """
    labels = np.asarray(labels)
    results = {
        did: {"B": list(map(float, b_values)), "accuracy": [], "auc": []}
        for did in detectors
    }
    for b in b_values:
        filtered = lowpass(images, float(b))
        for did, det in detectors.items():
            _, prob = det.predict(filtered)
            acc = float(((prob > 0.5).astype(np.int64) == labels).mean())
            results[did]["accuracy"].append(acc)
            results[did]["auc"].append(auc(prob, labels))
    return results


def plateau_bandwidth(b_values, accuracies, tolerance: float = 0.02) -> float:
    """Smallest B whose accuracy is within tolerance of the plateau.

    The plateau is the maximum accuracy over the sweep.
    """
    b_values = list(map(float, b_values))
    accuracies = list(map(float, accuracies))
    plateau = max(accuracies)
    for b, a in sorted(zip(b_values, accuracies)):
        if a >= plateau - tolerance:
            return float(b)
    return float(b_values[-1])
