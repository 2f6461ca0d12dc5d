"""Solar profiles, operating points and the two labelled dataset generators."""
from __future__ import annotations

import csv
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import BusKind, Network, Source
from .penalty import (
    PenaltyConfig,
    SubsetChoice,
    ALL_ON,
    calibrate_l1_scale,
    compute_l1,
    compute_l2,
    evaluation,
    subset_combinations,
)
from .powerflow import (
    CongestionReport,
    PowerFlowSolution,
    SingularJacobianError,
    detect_congestion,
    solve_ac,
)

SAMPLES_PER_DAY = 96
STEP = timedelta(minutes=15)
DEFAULT_START = datetime(2017, 3, 1)
# First/last usable slot of a day: 05:45 and 18:15, i.e. strictly inside (05:30, 18:30).
USABLE_FIRST = 23
USABLE_LAST = 73
N_FEATURES = 23


@dataclass(frozen=True)
class LoadLevel:
    name: str
    scale: float


DEFAULT_LEVELS = (LoadLevel("Low", 0.7), LoadLevel("Medium", 1.0), LoadLevel("High", 1.3))


def level_by_name(name: str, levels: Sequence[LoadLevel] = DEFAULT_LEVELS) -> LoadLevel:
    for lv in levels:
        if lv.name.lower() == name.lower():
            return lv
    raise KeyError(f"unknown load level {name!r}")


@dataclass
class SolarProfile:
    generator: int
    samples: np.ndarray
    start: datetime = DEFAULT_START

    @property
    def days(self) -> int:
        return len(self.samples) // SAMPLES_PER_DAY

    def day(self, d: int) -> np.ndarray:
        return self.samples[d * SAMPLES_PER_DAY:(d + 1) * SAMPLES_PER_DAY]


class SolarDataError(ValueError):
    pass


# -- solar profiles -----------------------------------------------------------

def _bell() -> np.ndarray:
    hours = np.arange(SAMPLES_PER_DAY) * 0.25
    half_width = 6.75  # zero at 05:15 and 18:45
    x = (hours - 12.0) / half_width
    return np.where(np.abs(x) < 1.0, np.cos(0.5 * np.pi * x) ** 2, 0.0)


def synth_solar(
    days: int, peak_mw: Sequence[float], seed: int, noise: float = 0.03
) -> list[SolarProfile]:
    """Synthetic 15-minute solar output for each generator.

    Each day is a cosine-squared bell centred on noon, scaled by a per-day
    weather factor in [0.4, 1.0] shared by all generators (one sky over the
    site), with independent additive Gaussian noise of ``noise`` times the
    peak inside daylight. Output is clamped to [0, peak].
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    if any(p <= 0 for p in peak_mw):
        raise ValueError("peak_mw must be positive")
    rng = np.random.default_rng(seed)
    bell = _bell()
    lit = bell > 0
    factors = rng.uniform(0.4, 1.0, size=days)
    profiles = []
    for g, peak in enumerate(peak_mw):
        eps = rng.normal(0.0, noise * peak, size=(days, SAMPLES_PER_DAY))
        mw = peak * factors[:, None] * bell[None, :] + eps * lit[None, :]
        mw = np.clip(mw, 0.0, peak)
        profiles.append(SolarProfile(g, mw.reshape(-1)))
    return profiles


def write_solar_csv(profiles: Sequence[SolarProfile], path: str | Path) -> None:
    n = len(profiles[0].samples)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + [f"gen{p.generator + 1}_mw" for p in profiles])
        for k in range(n):
            ts = (profiles[0].start + k * STEP).isoformat()
            w.writerow([ts] + [repr(float(p.samples[k])) for p in profiles])


def load_solar_csv(path: str | Path) -> list[SolarProfile]:
    """Read ``timestamp,gen1_mw,gen2_mw,gen3_mw`` at strict 15-minute spacing."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SolarDataError("empty solar file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "timestamp" or len(header) < 2:
        raise SolarDataError(f"bad header {header}")
    stamps, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SolarDataError(f"line {lineno}: expected {len(header)} fields")
        try:
            stamps.append(datetime.fromisoformat(row[0].strip()))
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise SolarDataError(f"line {lineno}: {exc}") from None
    if not stamps:
        raise SolarDataError("no samples")
    for k in range(1, len(stamps)):
        if stamps[k] - stamps[k - 1] != STEP:
            raise SolarDataError(
                f"non-uniform interval between {stamps[k - 1]} and {stamps[k]}"
            )
    if stamps[0].hour or stamps[0].minute or len(stamps) % SAMPLES_PER_DAY:
        raise SolarDataError("file must cover whole days starting at 00:00")
    data = np.array(values)
    if np.any(data < 0):
        r, c = np.argwhere(data < 0)[0]
        raise SolarDataError(f"negative power {data[r, c]} MW at {stamps[r]}")
    return [SolarProfile(g, data[:, g].copy(), stamps[0]) for g in range(data.shape[1])]


def daylight_instants(day: int = 0) -> list[int]:
    """Absolute sample indices of the usable daytime slots of ``day``."""
    base = day * SAMPLES_PER_DAY
    return list(range(base + USABLE_FIRST, base + USABLE_LAST + 1))


def step_instants(day: int = 0) -> list[int]:
    """Usable slots whose successor slot is also usable (one-step jumps)."""
    return daylight_instants(day)[:-1]


def predicted_solar(history: SolarProfile, horizon_day: int) -> np.ndarray:
    """Time-of-day mean over all days before ``horizon_day``."""
    if horizon_day < 1 or history.days < 1:
        raise SolarDataError("prediction needs at least one prior day of history")
    if horizon_day > history.days:
        raise SolarDataError("history does not reach the requested day")
    past = history.samples[: horizon_day * SAMPLES_PER_DAY].reshape(horizon_day, SAMPLES_PER_DAY)
    return past.mean(axis=0)


def predicted_profiles(profiles: Sequence[SolarProfile]) -> list[SolarProfile]:
    """Day-by-day averaging forecast; day 0 has no history and is NaN."""
    out = []
    for p in profiles:
        pred = np.full_like(p.samples, np.nan, dtype=float)
        for d in range(1, p.days):
            pred[d * SAMPLES_PER_DAY:(d + 1) * SAMPLES_PER_DAY] = predicted_solar(p, d)
        out.append(SolarProfile(p.generator, pred, p.start))
    return out


def solar_at(profiles: Sequence[SolarProfile], t: int) -> np.ndarray:
    return np.array([p.samples[t] for p in profiles])


# -- operating points and solves ----------------------------------------------

def operating_point(
    net: Network,
    solar_mw: Sequence[float],
    load_scale: float,
    choice: SubsetChoice = ALL_ON,
) -> tuple[Network, np.ndarray]:
    """Network with solar status applied plus the per-bus injections (MVA).

    Online solar units are PV buses at their profile output; switched-off
    units revert their bus to PQ with no injection. Loads and the non-slack
    coal setpoints are scaled by ``load_scale``; the slack bus absorbs the rest.
    """
    solar_idx = net.solar_generators()
    if len(solar_mw) != len(solar_idx):
        raise ValueError(f"need {len(solar_idx)} solar values, got {len(solar_mw)}")
    slack = net.slack_bus
    gens = list(net.generators)
    kinds = {b.id: b.kind for b in net.buses}
    for k, gi in enumerate(solar_idx):
        g = gens[gi]
        if choice.off_pattern[k]:
            gens[gi] = dataclasses.replace(g, online=False, p_set=0.0)
            if kinds[g.bus] is BusKind.PV:
                kinds[g.bus] = BusKind.PQ
        else:
            gens[gi] = dataclasses.replace(g, online=True, p_set=float(solar_mw[k]))
    for gi, g in enumerate(gens):
        if g.source is Source.COAL and g.bus != slack:
            gens[gi] = dataclasses.replace(g, p_set=g.p_set * load_scale)
    # a bus whose generators are all offline cannot regulate voltage
    online_buses = {g.bus for g in gens if g.online}
    for bus, kind in kinds.items():
        if kind is BusKind.PV and bus not in online_buses:
            kinds[bus] = BusKind.PQ
    buses = tuple(dataclasses.replace(b, kind=kinds[b.id]) for b in net.buses)

    s = np.zeros(net.n_bus, dtype=complex)
    for g in gens:
        if g.online and g.bus != slack:
            s[g.bus] += g.p_set
    for ld in net.loads:
        s[ld.bus] -= complex(ld.p_base, ld.q_base) * load_scale
    return net.replace(buses=buses, generators=tuple(gens)), s


def _failed_solution(net: Network) -> PowerFlowSolution:
    n, m = net.n_bus, len(net.branches)
    return PowerFlowSolution(
        voltage_mag=np.ones(n), voltage_ang=np.zeros(n), branch_flow_mva=np.full(m, np.nan),
        p_slack=float("nan"), losses_mw=float("nan"), converged=False, iterations=0,
        residual=float("inf"), s_injection=np.full(n, np.nan, dtype=complex),
    )


def solve_scenario(
    net: Network, solar_mw: Sequence[float], load_scale: float, choice: SubsetChoice = ALL_ON
) -> tuple[PowerFlowSolution, CongestionReport]:
    """Solve one operating point; a singular Jacobian counts as non-converged."""
    op_net, s = operating_point(net, solar_mw, load_scale, choice)
    try:
        sol = solve_ac(op_net, s)
    except SingularJacobianError:
        sol = _failed_solution(op_net)
    return sol, detect_congestion(op_net, sol)


def _features_vm(sol: PowerFlowSolution) -> np.ndarray:
    vm = np.asarray(sol.voltage_mag, dtype=float)
    return np.where(np.isfinite(vm), vm, 1.0)


def _record(sol: PowerFlowSolution, report: CongestionReport, **keys) -> dict:
    return {
        **keys,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "congested": report.congested,
        "vm": [float(v) for v in sol.voltage_mag],
        "va": [float(v) for v in sol.voltage_ang],
        "flows_mva": [float(v) for v in sol.branch_flow_mva],
    }


def _run(fn, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (jobs * 8))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


# -- congestion dataset ---------------------------------------------------------

@dataclass
class CongestionRow:
    features: np.ndarray
    label: int

    def __post_init__(self):
        if len(self.features) != N_FEATURES:
            raise ValueError(f"congestion rows carry {N_FEATURES} features")


def _congestion_task(task):
    net, solar, scale, keys = task
    sol, rep = solve_scenario(net, solar, scale)
    return _features_vm(sol), int(rep.congested), _record(sol, rep, **keys)


def congestion_scenarios(days: Iterable[int], levels: Sequence[LoadLevel]) -> list[tuple]:
    return [(d, t, lv) for d in days for t in daylight_instants(d) for lv in levels]


def gen_congestion_dataset(
    net: Network,
    profiles: Sequence[SolarProfile],
    levels: Sequence[LoadLevel],
    days: Iterable[int],
    jobs: int = 1,
    archive: list | None = None,
) -> list[CongestionRow]:
    """One row per (day, usable instant, level): 20 |V| + 3 actual solar MW."""
    days = list(days)
    if max(days, default=-1) >= min(p.days for p in profiles):
        raise SolarDataError("solar profiles do not cover the requested days")
    tasks = [
        (net, solar_at(profiles, t), lv.scale,
         {"kind": "congestion", "day": d, "instant": t % SAMPLES_PER_DAY, "level": lv.name})
        for d, t, lv in congestion_scenarios(days, levels)
    ]
    rows = []
    for (_, solar, _, _), (vm, label, rec) in zip(tasks, _run(_congestion_task, tasks, jobs)):
        rows.append(CongestionRow(np.concatenate([vm, solar]), label))
        if archive is not None:
            archive.append(rec)
    return rows


def _variant_task(task):
    net, actual, predicted, scale, keys = task
    sol, rep = solve_scenario(net, actual, scale)
    psol, _ = solve_scenario(net, predicted, scale)
    return _features_vm(sol), _features_vm(psol), int(rep.congested), _record(sol, rep, **keys)


def gen_variant_datasets(
    net: Network,
    profiles: Sequence[SolarProfile],
    predicted: Sequence[SolarProfile],
    levels: Sequence[LoadLevel],
    days: Iterable[int],
    n_rows: int | None,
    seed: int,
    jobs: int = 1,
) -> tuple[list[CongestionRow], list[CongestionRow]]:
    """Matched actual-solar and predicted-solar congestion datasets.

    Both share scenarios and labels (from the actual-solar solve). The
    predicted rows replace the state and solar features with those of a solve
    driven by the averaging forecast, which is all an operator knows ahead
    of time. ``n_rows`` draws a seeded subsample of the scenarios.
    """
    days = list(days)
    if min(days) < 1:
        raise SolarDataError("predicted variant needs at least one prior day of history")
    scen = congestion_scenarios(days, levels)
    if n_rows is not None and n_rows < len(scen):
        keep = np.sort(np.random.default_rng(seed).choice(len(scen), n_rows, replace=False))
        scen = [scen[i] for i in keep]
    tasks = [
        (net, solar_at(profiles, t), solar_at(predicted, t), lv.scale,
         {"kind": "variant", "day": d, "instant": t % SAMPLES_PER_DAY, "level": lv.name})
        for d, t, lv in scen
    ]
    actual_rows, predicted_rows = [], []
    for task, (vm, pvm, label, _) in zip(tasks, _run(_variant_task, tasks, jobs)):
        actual_rows.append(CongestionRow(np.concatenate([vm, task[1]]), label))
        predicted_rows.append(CongestionRow(np.concatenate([pvm, task[2]]), label))
    return actual_rows, predicted_rows


# -- subset dataset -------------------------------------------------------------

@dataclass
class SubsetRow:
    features: np.ndarray
    target: float
    l1: float = 0.0
    l2: float = 0.0
    pattern: int = -1

    def __post_init__(self):
        if len(self.features) != N_FEATURES:
            raise ValueError(f"subset rows carry {N_FEATURES} features")


def _subset_task(task):
    net, base_solar, next_solar, scale, keys = task
    base_sol, base_rep = solve_scenario(net, base_solar, scale)
    out = {"base": _features_vm(base_sol), "records": [_record(base_sol, base_rep, pattern=-1, **keys)]}
    out["congested"] = []
    for p, choice in enumerate(subset_combinations()):
        sol, rep = solve_scenario(net, next_solar, scale, choice)
        out["congested"].append(rep)
        out["records"].append(_record(sol, rep, pattern=p, **keys))
    return out


def subset_scenarios(days: Iterable[int]) -> list[tuple[int, int]]:
    return [(d, t) for d in days for t in step_instants(d)]


def gen_subset_dataset(
    net: Network,
    profiles: Sequence[SolarProfile],
    predicted: Sequence[SolarProfile],
    level: LoadLevel,
    penalty_cfg: PenaltyConfig | None,
    days: Iterable[int],
    jobs: int = 1,
    archive: list | None = None,
) -> tuple[list[SubsetRow], PenaltyConfig]:
    """Seven off-patterns per usable instant, solved one step ahead.

    The base state at t has every unit on; each pattern is then applied with
    the actual t+1 solar output. Passing ``penalty_cfg=None`` calibrates
    ``l1_scale`` on this dataset. Returns the rows and the config used.
    """
    scen = subset_scenarios(days)
    tasks = [
        (net, solar_at(profiles, t), solar_at(profiles, t + 1), level.scale,
         {"kind": "subset", "day": d, "instant": t % SAMPLES_PER_DAY, "level": level.name})
        for d, t in scen
    ]
    results = _run(_subset_task, tasks, jobs)
    combos = subset_combinations()

    raw = []
    for (_, t), res in zip(scen, results):
        act, pred = solar_at(profiles, t + 1), solar_at(predicted, t + 1)
        for choice in combos:
            on = choice.on_mask
            raw.append(float(np.sum(np.abs(pred[on] - act[on]))))
    if penalty_cfg is None:
        penalty_cfg = PenaltyConfig(l1_scale=calibrate_l1_scale(raw))

    rows = []
    for (_, t), res in zip(scen, results):
        act, pred = solar_at(profiles, t + 1), solar_at(predicted, t + 1)
        if np.any(np.isnan(pred)):
            raise SolarDataError("predicted profile missing for a requested day")
        for p, (choice, rep) in enumerate(zip(combos, res["congested"])):
            on = choice.on_mask
            ev = evaluation(choice, compute_l1(pred[on], act[on], penalty_cfg), compute_l2(rep, penalty_cfg))
            features = np.concatenate([res["base"], np.where(on, pred, 0.0)])
            rows.append(SubsetRow(features, ev.total, ev.l1, ev.l2, p))
        if archive is not None:
            archive.extend(res["records"])
    return rows, penalty_cfg


# -- file formats ---------------------------------------------------------------

CONGESTION_HEADER = [f"v{i}" for i in range(1, 21)] + ["solar1", "solar2", "solar3", "label"]
SUBSET_HEADER = [f"v{i}" for i in range(1, 21)] + ["d1", "d2", "d3", "target"]


def write_congestion_csv(rows: Sequence[CongestionRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONGESTION_HEADER)
        for r in rows:
            w.writerow([repr(float(v)) for v in r.features] + [int(r.label)])


def write_subset_csv(rows: Sequence[SubsetRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUBSET_HEADER)
        for r in rows:
            w.writerow([repr(float(v)) for v in r.features] + [repr(float(r.target))])


def write_subset_components(rows: Sequence[SubsetRow], path: str | Path) -> None:
    """Per-row L1/L2 split and pattern index, aligned with the subset CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["l1", "l2", "pattern"])
        for r in rows:
            w.writerow([repr(float(r.l1)), repr(float(r.l2)), r.pattern])


def _read_table(path: str | Path, header: list[str]) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or [h.strip() for h in got] != header:
            raise ValueError(f"{path}: expected header {','.join(header)}")
        data = [[float(v) for v in row] for row in reader if row]
    if not data:
        raise ValueError(f"{path}: no rows")
    return np.array(data)


def read_congestion_csv(path: str | Path) -> list[CongestionRow]:
    data = _read_table(path, CONGESTION_HEADER)
    return [CongestionRow(r[:-1], int(r[-1])) for r in data]


def read_subset_csv(path: str | Path, components: str | Path | None = None) -> list[SubsetRow]:
    data = _read_table(path, SUBSET_HEADER)
    if components is not None and Path(components).exists():
        comp = _read_table(components, ["l1", "l2", "pattern"])
        return [SubsetRow(r[:-1], float(r[-1]), c[0], c[1], int(c[2])) for r, c in zip(data, comp)]
    # without the sidecar, a target at or above the congestion penalty is read as congested
    return [
        SubsetRow(r[:-1], float(r[-1]), *((r[-1] - 50.0, 50.0) if r[-1] >= 50.0 else (r[-1], 0.0)))
        for r in data
    ]


def write_archive(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
