"""Campaign evaluation metrics: SR over the attacked set, MSE/MAE/PSNR over
the successfully-attacked subset.

Set-level MSE/MAE/PSNR are means of per-image values: each image is first
reduced to its own mean, then the per-image values are averaged over the
successful subset. All accumulation is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import PixelDomain, ShapeMismatchError, Tensor


class EmptySetError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    clean: Tensor
    adversarial: Tensor
    true_label: int
    predicted_label: int
    success: bool


@dataclass
class EvalSet:
    """Records for every attacked image (all were correctly classified
    pre-attack); the successful subset drives the distortion metrics."""

    records: list[EvalRecord]
    pixel_domain: PixelDomain

    def successful(self) -> list[EvalRecord]:
        return [r for r in self.records if r.success]


@dataclass
class MetricsReport:
    sr: float
    mse: float | None
    mae: float | None
    psnr_db: float | None
    count_m: int
    count_n: int
    attacked_fraction: float | None
    psnr_excluded: int = 0  # zero-difference pairs left out of the PSNR mean

    def as_dict(self) -> dict:
        return {
            "sr": self.sr,
            "mse": self.mse,
            "mae": self.mae,
            "psnr_db": self.psnr_db,
            "count_m": self.count_m,
            "count_n": self.count_n,
            "attacked_fraction": self.attacked_fraction,
            "psnr_excluded": self.psnr_excluded,
        }


def _diff64(clean: Tensor, adversarial: Tensor) -> np.ndarray:
    if clean.shape != adversarial.shape:
        raise ShapeMismatchError(f"shape mismatch: {clean.shape} vs {adversarial.shape}")
    return np.asarray(clean, dtype=np.float64) - np.asarray(adversarial, dtype=np.float64)


def mse_single(clean: Tensor, adversarial: Tensor) -> float:
    return float(np.mean(_diff64(clean, adversarial) ** 2))


def mae_single(clean: Tensor, adversarial: Tensor) -> float:
    return float(np.mean(np.abs(_diff64(clean, adversarial))))


def psnr_single(clean: Tensor, adversarial: Tensor, domain: PixelDomain) -> float:
    """20*log10(hi / rms difference), in dB; +inf for identical pairs."""
    m = mse_single(clean, adversarial)
    if m == 0.0:
        return math.inf
    return 20.0 * math.log10(domain.hi / math.sqrt(m))


def success_rate(eval_set: EvalSet) -> float:
    if not eval_set.records:
        raise EmptySetError("success rate over an empty set")
    flipped = sum(1 for r in eval_set.records if r.predicted_label != r.true_label)
    return flipped / len(eval_set.records)


def mse(eval_set: EvalSet) -> float:
    subset = eval_set.successful()
    if not subset:
        raise EmptySetError("MSE over an empty successful subset")
    return float(np.mean([mse_single(r.clean, r.adversarial) for r in subset]))


def mae(eval_set: EvalSet) -> float:
    subset = eval_set.successful()
    if not subset:
        raise EmptySetError("MAE over an empty successful subset")
    return float(np.mean([mae_single(r.clean, r.adversarial) for r in subset]))


def psnr(eval_set: EvalSet) -> tuple[float, int]:
    """Mean per-image PSNR over the successful subset.

    Identical pairs have infinite PSNR; they are excluded from the mean and
    counted in the second return value.
    """
    subset = eval_set.successful()
    if not subset:
        raise EmptySetError("PSNR over an empty successful subset")
    values = [psnr_single(r.clean, r.adversarial, eval_set.pixel_domain) for r in subset]
    finite = [v for v in values if math.isfinite(v)]
    excluded = len(values) - len(finite)
    if not finite:
        return math.inf, excluded
    return float(np.mean(finite)), excluded


def attacked_fraction(clean: Tensor, adversarial: Tensor) -> float:
    """Fraction of elements that differ between the two tensors."""
    if clean.shape != adversarial.shape:
        raise ShapeMismatchError(f"shape mismatch: {clean.shape} vs {adversarial.shape}")
    return float(np.count_nonzero(clean != adversarial)) / clean.size


def metrics_report(eval_set: EvalSet) -> MetricsReport:
    """All four metrics plus bookkeeping counts for one campaign."""
    count_m = len(eval_set.records)
    subset = eval_set.successful()
    count_n = len(subset)
    sr = success_rate(eval_set) if count_m else 0.0
    if count_n:
        psnr_db, excluded = psnr(eval_set)
        frac = float(np.mean([attacked_fraction(r.clean, r.adversarial) for r in subset]))
        return MetricsReport(
            sr=sr,
            mse=mse(eval_set),
            mae=mae(eval_set),
            psnr_db=psnr_db if math.isfinite(psnr_db) else None,
            count_m=count_m,
            count_n=count_n,
            attacked_fraction=frac,
            psnr_excluded=excluded,
        )
    return MetricsReport(
        sr=sr, mse=None, mae=None, psnr_db=None,
        count_m=count_m, count_n=count_n, attacked_fraction=None,
    )
