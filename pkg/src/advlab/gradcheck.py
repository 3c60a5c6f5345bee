"""Finite-difference verification of backward rules.

Checks run at float64 regardless of the inputs' dtype: central
differences at h=1e-3 on a float32 forward pass would drown real
gradient defects in rounding noise, so inputs are promoted before both
the analytic and numeric passes.
"""

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class CoordinateResult:
    tensor_index: int
    coord: tuple
    analytic: float
    fd: float
    rel_err: float
    status: str  # ok | excluded_kink | nonfinite


@dataclass
class GradCheckReport:
    max_rel_err: float
    tolerance: float
    passed: bool
    checked: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    flagged: list = field(default_factory=list)

    def worst(self, k: int = 5):
        return sorted(self.checked, key=lambda c: -c.rel_err)[:k]


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-3,
    tol: float = 1e-3,
    n_sample: int = 64,
    seed: int = 0,
    kink_tol: float = 0.05,
) -> GradCheckReport:
    """Compare fn's taped gradients against central finite differences.

    fn must map the given tensors to a scalar Tensor. Up to n_sample
    coordinates are probed per input. Coordinates where the function is
    locally non-smooth (second difference blows up, e.g. relu pivoting
    at 0) are excluded; non-finite probes are flagged without raising.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    work = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]

    with Tape() as tape:
        loss = fn(*work)
    if loss.size != 1:
        raise ValueError(f"graph output must be scalar, got shape {tuple(loss.shape)}")
    tape.backward(loss)
    f0 = loss.item()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_err=0.0, tolerance=tol, passed=True)
    for ti, t in enumerate(work):
        flat = t.data.reshape(-1)
        n = flat.size
        if n <= n_sample:
            picks = np.arange(n)
        else:
            picks = rng.choice(n, size=n_sample, replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + h
            fp = float(fn(*work).data.reshape(-1)[0])
            flat[idx] = orig - h
            fm = float(fn(*work).data.reshape(-1)[0])
            flat[idx] = orig

            coord = tuple(int(c) for c in np.unravel_index(int(idx), t.data.shape))
            an = float(t.grad.reshape(-1)[idx])
            if not (np.isfinite(fp) and np.isfinite(fm)):
                report.flagged.append(
                    CoordinateResult(ti, coord, an, float("nan"), float("inf"), "nonfinite")
                )
                report.passed = False
                continue
            fd = (fp - fm) / (2 * h)
            kink = abs(fp + fm - 2 * f0) / h
            if kink > kink_tol * max(1.0, abs(an)):
                report.excluded.append(
                    CoordinateResult(ti, coord, an, fd, float("nan"), "excluded_kink")
                )
                continue
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            report.checked.append(CoordinateResult(ti, coord, an, fd, rel, "ok"))
            if rel > report.max_rel_err:
                report.max_rel_err = rel

    if report.max_rel_err > tol:
        report.passed = False
    return report
