"""Mis-commitment (L1) and congestion (L2) penalties for a solar subset."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .powerflow import CongestionReport

DEFAULT_L2 = 50.0


@dataclass(frozen=True)
class PenaltyConfig:
    l2_congestion_penalty: float = DEFAULT_L2
    l1_scale: float = 1.0

    def __post_init__(self):
        if not self.l1_scale > 0:
            raise ValueError("l1_scale must be positive")


@dataclass(frozen=True)
class SubsetChoice:
    """Which of the three solar units are switched off for the next interval."""

    off_pattern: tuple[bool, bool, bool]

    @property
    def n_off(self) -> int:
        return sum(self.off_pattern)

    @property
    def on_mask(self) -> np.ndarray:
        return ~np.array(self.off_pattern, dtype=bool)

    @property
    def label(self) -> str:
        off = [str(i + 1) for i, flag in enumerate(self.off_pattern) if flag]
        return "off:" + "+".join(off) if off else "all-on"


ALL_ON = SubsetChoice((False, False, False))


def subset_combinations() -> list[SubsetChoice]:
    """The seven non-empty off patterns in the order they are studied."""
    order = [(0,), (1,), (2,), (0, 1), (1, 2), (0, 2), (0, 1, 2)]
    return [SubsetChoice(tuple(i in off for i in range(3))) for off in order]


def default_candidates() -> list[SubsetChoice]:
    return [ALL_ON, *subset_combinations()]


@dataclass(frozen=True)
class SubsetEvaluation:
    choice: SubsetChoice
    l1: float
    l2: float
    total: float
    predicted_total: float = float("nan")


def compute_l1(
    predicted_mw: Sequence[float], actual_mw: Sequence[float], cfg: PenaltyConfig
) -> float:
    """Scaled sum of |predicted - actual| over the committed (ON) units."""
    predicted = np.asarray(predicted_mw, dtype=float)
    actual = np.asarray(actual_mw, dtype=float)
    if predicted.shape != actual.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {actual.shape}")
    return cfg.l1_scale * float(np.sum(np.abs(predicted - actual)))


def compute_l2(report: CongestionReport, cfg: PenaltyConfig) -> float:
    return cfg.l2_congestion_penalty if report.congested else 0.0


def evaluation(choice: SubsetChoice, l1: float, l2: float, predicted_total=float("nan")):
    return SubsetEvaluation(choice, l1, l2, l1 + l2, predicted_total)


def calibrate_l1_scale(raw_l1: Sequence[float], l2_penalty: float = DEFAULT_L2) -> float:
    """Scale so the mean scaled L1 is half the congestion penalty."""
    mean = float(np.mean(raw_l1)) if len(raw_l1) else 0.0
    return (l2_penalty / 2) / mean if mean > 0 else 1.0
