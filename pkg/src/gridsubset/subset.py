"""Penalty regressor, subset selection and the brute-force simulation oracle."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ml
from .grid import Network
from .penalty import (
    PenaltyConfig,
    SubsetChoice,
    SubsetEvaluation,
    compute_l1,
    compute_l2,
    evaluation,
)
from .scenario import (
    N_FEATURES,
    LoadLevel,
    SolarProfile,
    SubsetRow,
    solar_at,
    solve_scenario,
    step_instants,
    SAMPLES_PER_DAY,
)

REGRESSOR_DIMS = (N_FEATURES, 200, 1)
SUBSET_CURVE_HEADER = ["step", "train_loss", "test_l1_proxy", "test_l2_proxy"]


def as_arrays(rows: Sequence[SubsetRow]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([r.features for r in rows], dtype=float)
    y = np.array([r.target for r in rows], dtype=float)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"subset rows must carry {N_FEATURES} features")
    return X, y


@dataclass
class RegressorReport:
    train_size: int
    test_size: int
    test_mse: float
    baseline_mse: float
    test_l1_proxy: float
    test_l2_proxy: float
    curve: list[dict]
    seed: int = 0
    dataset_hash: str = ""

    @property
    def improvement(self) -> float:
        """Fractional MSE reduction over predicting the training mean."""
        return 1.0 - self.test_mse / self.baseline_mse if self.baseline_mse > 0 else 0.0

    def to_text(self) -> str:
        return "".join(
            f"{k}={v}\n"
            for k, v in [
                ("model", "subset-regressor"),
                ("seed", self.seed),
                ("dataset_hash", self.dataset_hash),
                ("train_size", self.train_size),
                ("test_size", self.test_size),
                ("test_mse", f"{self.test_mse:.6f}"),
                ("baseline_mse", f"{self.baseline_mse:.6f}"),
                ("improvement", f"{self.improvement:.6f}"),
                ("test_l1_proxy", f"{self.test_l1_proxy:.6f}"),
                ("test_l2_proxy", f"{self.test_l2_proxy:.6f}"),
            ]
        )


def _proxies(pred: np.ndarray, rows: Sequence[SubsetRow]) -> tuple[float, float]:
    """Mean |error| on uncongested rows (L1 part) and congested rows (L2 part)."""
    target = np.array([r.target for r in rows])
    congested = np.array([r.l2 > 0 for r in rows])
    err = np.abs(pred - target)
    l1 = float(err[~congested].mean()) if np.any(~congested) else 0.0
    l2 = float(err[congested].mean()) if np.any(congested) else 0.0
    return l1, l2


def train_penalty_regressor(
    rows: Sequence[SubsetRow],
    steps: int = 2500,
    seed: int = 0,
    train_size: int = 4500,
    learning_rate: float = 1e-3,
    batch_size: int = 32,
) -> tuple[ml.SavedModel, RegressorReport]:
    """Fit the [23, 200, 1] squared-error regressor of total subset penalty."""
    X, y = as_arrays(rows)
    tr, te = ml.split_indices(len(X), train_size, seed)
    scaler = ml.Standardizer.fit(X[tr])
    Xtr, Xte = scaler.transform(X[tr]), scaler.transform(X[te])
    test_rows = [rows[i] for i in te]
    model = ml.Mlp.init(REGRESSOR_DIMS, seed)

    def evaluate(m: ml.Mlp) -> dict:
        l1, l2 = _proxies(m(Xte)[:, 0], test_rows)
        return {"test_l1_proxy": l1, "test_l2_proxy": l2}

    curve = ml.train(
        model, Xtr, y[tr], ml.SQUARED, ml.AdamState(learning_rate=learning_rate),
        steps, batch_size, seed, evaluate,
    )
    pred = model(Xte)[:, 0]
    l1, l2 = _proxies(pred, test_rows)
    report = RegressorReport(
        train_size=len(tr),
        test_size=len(te),
        test_mse=float(np.mean((pred - y[te]) ** 2)),
        baseline_mse=float(np.mean((y[tr].mean() - y[te]) ** 2)),
        test_l1_proxy=l1,
        test_l2_proxy=l2,
        curve=curve,
        seed=seed,
    )
    return ml.SavedModel(ml.SQUARED, model, scaler), report


# -- decisions --------------------------------------------------------------------

def subset_features(base_state: Sequence[float], predicted_mw: Sequence[float], choice: SubsetChoice) -> np.ndarray:
    return np.concatenate([np.asarray(base_state, float), np.where(choice.on_mask, predicted_mw, 0.0)])


def rank(scores: Sequence[float], candidates: Sequence[SubsetChoice]) -> list[int]:
    """Candidate indices ordered by score, then fewest units off, then position."""
    return sorted(range(len(candidates)), key=lambda i: (scores[i], candidates[i].n_off, i))


def score_candidates(
    model: ml.SavedModel | Callable[[np.ndarray], np.ndarray],
    base_state: Sequence[float],
    predicted_mw: Sequence[float],
    candidates: Sequence[SubsetChoice],
) -> np.ndarray:
    X = np.array([subset_features(base_state, predicted_mw, c) for c in candidates])
    if isinstance(model, ml.SavedModel):
        return np.asarray(model.predict(X), dtype=float)
    return np.asarray(model(X), dtype=float).reshape(len(candidates))


def select_subset(
    model: ml.SavedModel | Callable[[np.ndarray], np.ndarray],
    base_state: Sequence[float],
    predicted_mw: Sequence[float],
    candidates: Sequence[SubsetChoice],
) -> SubsetEvaluation:
    """Candidate with the lowest predicted total penalty.

    ``model`` is a trained regressor or any callable mapping a feature
    matrix to one score per row. The true L1/L2 fields of the result are NaN.
    """
    if not candidates:
        raise ValueError("no candidate subsets")
    scores = score_candidates(model, base_state, predicted_mw, candidates)
    best = rank(scores, candidates)[0]
    nan = float("nan")
    return SubsetEvaluation(candidates[best], nan, nan, nan, float(scores[best]))


def evaluate_choice(
    net: Network,
    load_scale: float,
    actual_mw: Sequence[float],
    predicted_mw: Sequence[float],
    choice: SubsetChoice,
    cfg: PenaltyConfig,
) -> SubsetEvaluation:
    """Simulate one pattern on next-interval solar and price it."""
    _, report = solve_scenario(net, actual_mw, load_scale, choice)
    on = choice.on_mask
    actual = np.asarray(actual_mw, float)
    predicted = np.asarray(predicted_mw, float)
    return evaluation(choice, compute_l1(predicted[on], actual[on], cfg), compute_l2(report, cfg))


def oracle_select(
    net: Network,
    load_scale: float,
    actual_mw: Sequence[float],
    predicted_mw: Sequence[float],
    candidates: Sequence[SubsetChoice],
    cfg: PenaltyConfig,
) -> list[SubsetEvaluation]:
    """Every candidate simulated and ranked by true total, best first."""
    evals = [evaluate_choice(net, load_scale, actual_mw, predicted_mw, c, cfg) for c in candidates]
    order = rank([e.total for e in evals], candidates)
    return [evals[i] for i in order]


@dataclass
class DecisionScenario:
    day: int
    instant: int
    level: LoadLevel
    base_state: np.ndarray
    actual_next: np.ndarray
    predicted_next: np.ndarray

    @property
    def clock(self) -> str:
        minutes = (self.instant % SAMPLES_PER_DAY) * 15
        return f"{minutes // 60:02d}:{minutes % 60:02d}"


def decision_scenario(
    net: Network,
    profiles: Sequence[SolarProfile],
    predicted: Sequence[SolarProfile],
    level: LoadLevel,
    t: int,
) -> DecisionScenario:
    """Base state at absolute slot ``t`` with all units on, plus t+1 solar."""
    sol, _ = solve_scenario(net, solar_at(profiles, t), level.scale)
    return DecisionScenario(
        t // SAMPLES_PER_DAY, t, level, np.asarray(sol.voltage_mag, float),
        solar_at(profiles, t + 1), solar_at(predicted, t + 1),
    )


def decision_scenarios(
    net: Network,
    profiles: Sequence[SolarProfile],
    predicted: Sequence[SolarProfile],
    level: LoadLevel,
    days: Sequence[int],
) -> list[DecisionScenario]:
    return [
        decision_scenario(net, profiles, predicted, level, t)
        for d in days for t in step_instants(d)
    ]


@dataclass
class Decision:
    scenario: DecisionScenario
    candidates: list[SubsetChoice]
    scores: np.ndarray
    chosen: SubsetEvaluation
    oracle: list[SubsetEvaluation] | None = None

    @property
    def chosen_true(self) -> SubsetEvaluation | None:
        if self.oracle is None:
            return None
        return next(e for e in self.oracle if e.choice == self.chosen.choice)

    @property
    def regret(self) -> float:
        if self.oracle is None:
            return float("nan")
        return self.chosen_true.total - self.oracle[0].total


def decide(
    model: ml.SavedModel,
    net: Network,
    scen: DecisionScenario,
    candidates: Sequence[SubsetChoice],
    cfg: PenaltyConfig | None = None,
) -> Decision:
    """Model decision for one scenario; with ``cfg`` also the oracle ranking."""
    scores = score_candidates(model, scen.base_state, scen.predicted_next, candidates)
    chosen = select_subset(model, scen.base_state, scen.predicted_next, candidates)
    oracle = None
    if cfg is not None:
        oracle = oracle_select(
            net, scen.level.scale, scen.actual_next, scen.predicted_next, candidates, cfg
        )
    return Decision(scen, list(candidates), scores, chosen, oracle)
