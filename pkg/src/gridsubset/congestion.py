"""Congestion classifiers (neural network and linear SVM) and their reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ml
from .grid import Network
from .scenario import (
    DEFAULT_LEVELS,
    N_FEATURES,
    CongestionRow,
    LoadLevel,
    SolarDataError,
    SolarProfile,
    gen_variant_datasets,
    predicted_profiles,
)

NN_DIMS = (N_FEATURES, 100, 2)
ACTUAL = "actual-solar"
PREDICTED = "predicted-solar"


@dataclass
class ClassifierReport:
    kind: str
    variant: str
    train_size: int
    test_size: int
    train_accuracy: float
    test_accuracy: float
    confusion: list[list[int]] = field(default_factory=lambda: [[0, 0], [0, 0]])
    curve: list[dict] = field(default_factory=list, repr=False)
    seed: int = 0
    dataset_hash: str = ""

    @property
    def precision(self) -> float:
        (_, fp), (_, tp) = self.confusion
        return tp / (tp + fp) if tp + fp else 0.0

    @property
    def recall(self) -> float:
        _, (fn, tp) = self.confusion
        return tp / (tp + fn) if tp + fn else 0.0

    def to_text(self) -> str:
        (tn, fp), (fn, tp) = self.confusion
        lines = [
            f"model={self.kind}",
            f"variant={self.variant}",
            f"seed={self.seed}",
            f"dataset_hash={self.dataset_hash}",
            f"train_size={self.train_size}",
            f"test_size={self.test_size}",
            f"train_accuracy={self.train_accuracy:.6f}",
            f"test_accuracy={self.test_accuracy:.6f}",
            f"precision_congested={self.precision:.6f}",
            f"recall_congested={self.recall:.6f}",
            f"confusion_tn={tn}",
            f"confusion_fp={fp}",
            f"confusion_fn={fn}",
            f"confusion_tp={tp}",
        ]
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray) -> list[list[int]]:
    """Rows are the true class, columns the predicted class."""
    m = [[0, 0], [0, 0]]
    for t, p in zip(np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)):
        m[t][p] += 1
    return m


def as_arrays(rows: Sequence[CongestionRow]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([r.features for r in rows], dtype=float)
    y = np.array([r.label for r in rows], dtype=int)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"congestion rows must carry {N_FEATURES} features")
    return X, y


def subsample(rows: Sequence, n: int | None, seed: int) -> list:
    """Seeded subsample to ``n`` rows preserving original order; None keeps all."""
    if n is None or n >= len(rows):
        return list(rows)
    keep = np.sort(np.random.default_rng(seed).choice(len(rows), n, replace=False))
    return [rows[i] for i in keep]


def accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    return float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))


def train_congestion_nn(
    rows: Sequence[CongestionRow],
    steps: int = 500,
    seed: int = 0,
    train_size: int = 650,
    variant: str = ACTUAL,
    learning_rate: float = 1e-3,
    batch_size: int = 32,
) -> tuple[ml.SavedModel, ClassifierReport]:
    X, y = as_arrays(rows)
    tr, te = ml.split_indices(len(X), train_size, seed)
    scaler = ml.Standardizer.fit(X[tr])
    Xtr, Xte = scaler.transform(X[tr]), scaler.transform(X[te])
    model = ml.Mlp.init(NN_DIMS, seed)

    def evaluate(m: ml.Mlp) -> dict:
        return {
            "train_acc": accuracy(y[tr], ml.predict_classes(m, Xtr)),
            "test_acc": accuracy(y[te], ml.predict_classes(m, Xte)),
        }

    curve = ml.train(
        model, Xtr, y[tr], ml.CROSS_ENTROPY, ml.AdamState(learning_rate=learning_rate),
        steps, batch_size, seed, evaluate,
    )
    pred_te = ml.predict_classes(model, Xte)
    report = ClassifierReport(
        "NN", variant, len(tr), len(te),
        train_accuracy=curve[-1]["train_acc"],
        test_accuracy=accuracy(y[te], pred_te),
        confusion=confusion_matrix(y[te], pred_te),
        curve=curve,
        seed=seed,
    )
    return ml.SavedModel(ml.CROSS_ENTROPY, model, scaler), report


def train_congestion_svm(
    rows: Sequence[CongestionRow],
    seed: int = 0,
    train_size: int = 650,
    variant: str = ACTUAL,
    lam: float = 1e-3,
    epochs: int = 20,
) -> tuple[ml.SavedModel, ClassifierReport]:
    X, y = as_arrays(rows)
    tr, te = ml.split_indices(len(X), train_size, seed)
    scaler = ml.Standardizer.fit(X[tr])
    Xtr, Xte = scaler.transform(X[tr]), scaler.transform(X[te])
    curve: list[dict] = []

    def on_epoch(epoch: int, svm: ml.LinearSvm) -> None:
        curve.append({
            "step": epoch,
            "train_loss": ml.hinge_objective(svm, Xtr, y[tr]),
            "train_acc": accuracy(y[tr], ml.svm_predict(svm, Xtr)),
            "test_acc": accuracy(y[te], ml.svm_predict(svm, Xte)),
        })

    svm = ml.svm_train(Xtr, y[tr], lam, epochs, seed, on_epoch=on_epoch)
    pred_te = ml.svm_predict(svm, Xte)
    report = ClassifierReport(
        "SVM", variant, len(tr), len(te),
        train_accuracy=accuracy(y[tr], ml.svm_predict(svm, Xtr)),
        test_accuracy=accuracy(y[te], pred_te),
        confusion=confusion_matrix(y[te], pred_te),
        curve=curve,
        seed=seed,
    )
    return ml.SavedModel(ml.SVM_HINGE, svm, scaler), report


def evaluate_model(saved: ml.SavedModel, rows: Sequence[CongestionRow]) -> dict:
    X, y = as_arrays(rows)
    pred = saved.predict(X)
    return {
        "rows": len(y),
        "accuracy": accuracy(y, pred),
        "confusion": confusion_matrix(y, pred),
        "predictions": pred,
    }


def eval_predicted_variant(
    net: Network,
    profiles: Sequence[SolarProfile],
    seed: int = 0,
    days: Sequence[int] | None = None,
    levels: Sequence[LoadLevel] = DEFAULT_LEVELS,
    n_rows: int = 750,
    train_size: int = 650,
    nn_steps: int = 800,
    jobs: int = 1,
) -> tuple[ClassifierReport, ClassifierReport]:
    """Build the predicted-solar dataset and train both classifiers on it.

    ``days`` defaults to every profile day that has history behind it.
    Returns ``(NN report, SVM report)``.
    """
    if days is None:
        days = range(1, min(p.days for p in profiles))
    days = list(days)
    if not days or min(days) < 1:
        raise SolarDataError("predicted-solar variant needs at least one prior day of history")
    _, rows = gen_variant_datasets(
        net, profiles, predicted_profiles(profiles), levels, days, n_rows, seed, jobs
    )
    return train_variant_models(rows, seed, train_size, nn_steps)


def train_variant_models(
    rows: Sequence[CongestionRow],
    seed: int = 0,
    train_size: int = 650,
    nn_steps: int = 800,
    variant: str = PREDICTED,
) -> tuple[ClassifierReport, ClassifierReport]:
    if len(rows) <= train_size:
        raise ValueError("dataset smaller than the training split")
    _, nn_report = train_congestion_nn(rows, nn_steps, seed, train_size, variant)
    _, svm_report = train_congestion_svm(rows, seed, train_size, variant)
    return nn_report, svm_report


CURVE_HEADER = ["step", "train_loss", "train_acc", "test_acc"]


def write_curve(curve: Sequence[dict], path: str | Path, header: Sequence[str] = CURVE_HEADER) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in curve:
            w.writerow([rec["step"]] + [repr(float(rec.get(k, float("nan")))) for k in header[1:]])
