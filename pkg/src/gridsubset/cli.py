"""Command-line entry point: ``gridsubset <command>``.

Exit codes: 0 success, 1 validation or user error, 2 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, ml
from .config import ConfigError, RunConfig, load_config
from .congestion import (
    ACTUAL,
    CURVE_HEADER,
    PREDICTED,
    evaluate_model,
    subsample,
    train_congestion_nn,
    train_congestion_svm,
    write_curve,
)
from .grid import (
    GridFormatError,
    GridValidationError,
    Network,
    check_invariants,
    parse_network,
    reference_grid_text,
    validate,
)
from .penalty import PenaltyConfig, default_candidates, subset_combinations
from .plot import plot_curve
from .scenario import (
    SAMPLES_PER_DAY,
    SolarDataError,
    SolarProfile,
    gen_congestion_dataset,
    gen_subset_dataset,
    gen_variant_datasets,
    load_solar_csv,
    predicted_profiles,
    read_congestion_csv,
    read_subset_csv,
    step_instants,
    synth_solar,
    write_archive,
    write_congestion_csv,
    write_solar_csv,
    write_subset_components,
    write_subset_csv,
)
from .subset import SUBSET_CURVE_HEADER, decide, decision_scenario, train_penalty_regressor


class UserError(Exception):
    """Bad input from the user; reported without a traceback, exit code 1."""


USER_ERRORS = (UserError, ConfigError, GridFormatError, GridValidationError, SolarDataError,
               ml.ModelFileError, FileNotFoundError)

CONGESTION_CSV = "congestion.csv"
VARIANT_CSV = {ACTUAL: "congestion_variant_actual.csv", PREDICTED: "congestion_variant_predicted.csv"}
METADATA = "metadata.json"


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def subset_csv_name(level: str) -> str:
    return f"subset_{level}.csv"


def subset_components_name(level: str) -> str:
    return f"subset_{level}_components.csv"


# -- shared setup -----------------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out_dir", None) is not None:
        cfg.out_dir = Path(args.out_dir)
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 0:
            raise UserError("--jobs must be >= 0")
        cfg.jobs = args.jobs
    return cfg


def _grid_text(cfg: RunConfig) -> str:
    if cfg.grid_path is None:
        return reference_grid_text()
    return Path(cfg.grid_path).read_text(encoding="utf-8")


def _network(cfg: RunConfig) -> tuple[Network, str]:
    text = _grid_text(cfg)
    return validate(parse_network(text)), sha256_text(text)


def _profiles(cfg: RunConfig) -> list[SolarProfile]:
    if cfg.solar_source == "synthetic":
        return synth_solar(cfg.total_days, cfg.peak_mw, cfg.seed, cfg.solar_noise)
    profiles = load_solar_csv(cfg.solar_source)
    if profiles[0].days < cfg.total_days:
        raise SolarDataError(
            f"solar CSV covers {profiles[0].days} days; config needs {cfg.total_days} "
            f"(history {cfg.history_days} + study {cfg.days} + holdout {cfg.holdout_days})"
        )
    return profiles


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise UserError(f"{path} not found; {hint}")
    return path


def _read_rows(reader, path: Path, *extra):
    try:
        return reader(path, *extra)
    except ValueError as exc:
        raise UserError(str(exc)) from None


def _metadata(cfg: RunConfig) -> dict:
    path = cfg.out_dir / METADATA
    if not path.exists():
        return {}
    return json.loads(path.read_text())


def _penalty_for(cfg: RunConfig, level: str) -> PenaltyConfig:
    scales = _metadata(cfg).get("l1_scale", {})
    if level in scales:
        return PenaltyConfig(cfg.l2_penalty, scales[level])
    if cfg.l1_scale is not None:
        return PenaltyConfig(cfg.l2_penalty, cfg.l1_scale)
    raise UserError(f"no l1_scale for level {level}; run gen-data first or set penalty.l1_scale")


# -- grid validate ----------------------------------------------------------------

def cmd_grid_validate(args) -> int:
    if args.path:
        text = Path(args.path).read_text(encoding="utf-8")
    else:
        text = _grid_text(_config(args))
    try:
        net = parse_network(text)
    except GridFormatError as exc:
        print(f"parse error: {exc}")
        return 1
    ok = True
    for name, problem in check_invariants(net):
        print(f"{'FAIL' if problem else 'ok  '} {name}{': ' + problem if problem else ''}")
        ok &= problem is None
    if not ok:
        return 1
    print(f"{net.n_bus} buses, {len(net.generators)} generators, "
          f"{len(net.loads)} loads, {len(net.tie_lines())} tie-lines")
    return 0


# -- gen-data ---------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    net, grid_hash = _network(cfg)
    profiles = _profiles(cfg)
    predicted = predicted_profiles(profiles)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    jobs = cfg.workers
    levels = cfg.levels
    if args.levels:
        levels = [cfg.level(name) for name in args.levels.split(",")]

    write_solar_csv(profiles, out / "solar.csv")
    archive: list[dict] = []
    rows = gen_congestion_dataset(net, profiles, cfg.levels, cfg.study_days, jobs, archive)
    write_congestion_csv(rows, out / CONGESTION_CSV)
    print(f"{CONGESTION_CSV}: {len(rows)} rows, {sum(r.label for r in rows)} congested")

    n_variant = cfg.predicted_rows if cfg.predicted_rows > 0 else None
    act_rows, pred_rows = gen_variant_datasets(
        net, profiles, predicted, cfg.levels, cfg.study_days, n_variant, cfg.seed, jobs
    )
    for variant, vrows in ((ACTUAL, act_rows), (PREDICTED, pred_rows)):
        write_congestion_csv(vrows, out / VARIANT_CSV[variant])
        print(f"{VARIANT_CSV[variant]}: {len(vrows)} rows")

    scales = {}
    for lv in levels:
        penalty = None if cfg.l1_scale is None else PenaltyConfig(cfg.l2_penalty, cfg.l1_scale)
        srows, used = gen_subset_dataset(net, profiles, predicted, lv, penalty, cfg.study_days, jobs, archive)
        scales[lv.name] = used.l1_scale
        write_subset_csv(srows, out / subset_csv_name(lv.name))
        write_subset_components(srows, out / subset_components_name(lv.name))
        print(f"{subset_csv_name(lv.name)}: {len(srows)} rows, l1_scale={used.l1_scale:.6g}")
    if args.concat_levels:
        all_rows = []
        for lv in levels:
            all_rows += read_subset_csv(out / subset_csv_name(lv.name))
        write_subset_csv(all_rows, out / "subset_all.csv")

    write_archive(archive, out / "archive.jsonl")
    files = ["solar.csv", CONGESTION_CSV, *VARIANT_CSV.values(), "archive.jsonl"]
    files += [f(lv.name) for lv in levels for f in (subset_csv_name, subset_components_name)]
    if args.concat_levels:
        files.append("subset_all.csv")
    meta = {
        "tool_version": __version__,
        "seed": cfg.seed,
        "grid_sha256": grid_hash,
        "config_sha256": sha256_text(cfg.source_text),
        "solar_source": cfg.solar_source if cfg.solar_source == "synthetic" else sha256_file(cfg.solar_source),
        "study_days": [cfg.study_days.start, cfg.study_days.stop],
        "holdout_days": [cfg.holdout.start, cfg.holdout.stop],
        "levels": {lv.name: lv.scale for lv in cfg.levels},
        "l1_scale": scales,
        "l2_penalty": cfg.l2_penalty,
        "files": {name: sha256_file(out / name) for name in files},
    }
    (out / METADATA).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(files)} data files and {METADATA} to {out}")
    return 0


# -- train ------------------------------------------------------------------------

def _provenance(cfg: RunConfig, dataset: Path) -> str:
    return (f"tool_version={__version__}\ndataset={dataset.name}\n"
            f"config_sha256={sha256_text(cfg.source_text)}\n")


def cmd_train(args) -> int:
    cfg = _config(args)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    hint = "run gen-data first"
    stem = args.which if args.variant == "full" else f"{args.which}-{args.variant}"

    if args.which == "subset":
        if args.variant != "full":
            raise UserError("--variant applies to the congestion models only")
        level = cfg.level(args.level or cfg.subset_level).name
        data = _need(out / subset_csv_name(level), hint)
        rows = _read_rows(read_subset_csv, data, out / subset_components_name(level))
        if len(rows) <= cfg.subset_train_size:
            raise UserError(f"{data.name} has {len(rows)} rows; need more than train_size={cfg.subset_train_size}")
        saved, report = train_penalty_regressor(
            rows, args.steps or cfg.subset_steps, cfg.seed, cfg.subset_train_size,
            cfg.subset_learning_rate, cfg.subset_batch_size,
        )
        header = SUBSET_CURVE_HEADER
        extra = f"level={level}\n"
    else:
        if args.variant == "full":
            data = _need(out / CONGESTION_CSV, hint)
            variant = ACTUAL
        else:
            variant = ACTUAL if args.variant == "actual" else PREDICTED
            data = _need(out / VARIANT_CSV[variant], hint)
        rows = _read_rows(read_congestion_csv, data)
        n = args.subsample if args.subsample is not None else cfg.congestion_subsample
        rows = subsample(rows, n or None, cfg.seed)
        if len(rows) <= cfg.congestion_train_size:
            raise UserError(f"{len(rows)} rows; need more than train_size={cfg.congestion_train_size}")
        if args.which == "congestion-nn":
            default_steps = cfg.nn_steps if args.variant == "full" else cfg.predicted_nn_steps
            saved, report = train_congestion_nn(
                rows, args.steps or default_steps, cfg.seed, cfg.congestion_train_size,
                variant, cfg.nn_learning_rate, cfg.nn_batch_size,
            )
        else:
            saved, report = train_congestion_svm(
                rows, cfg.seed, cfg.congestion_train_size, variant, cfg.svm_lambda, cfg.svm_epochs,
            )
        header = CURVE_HEADER
        extra = f"rows={len(rows)}\n"

    report.dataset_hash = sha256_file(data)
    ml.save_model(saved, out / f"{stem}.model")
    write_curve(report.curve, out / f"{stem}.curve.csv", header)
    text = report.to_text() + extra + _provenance(cfg, data) + \
        f"model_sha256={sha256_file(out / f'{stem}.model')}\n"
    (out / f"{stem}.report.txt").write_text(text)
    sys.stdout.write(text)
    return 0


# -- eval -------------------------------------------------------------------------

def cmd_eval(args) -> int:
    cfg = _config(args)
    try:
        saved = ml.load_model(args.model)
    except OSError as exc:
        raise UserError(f"cannot read model: {exc}") from None
    classifier = saved.kind in (ml.CROSS_ENTROPY, ml.SVM_HINGE)
    if args.data:
        data = Path(args.data)
    elif classifier:
        data = cfg.out_dir / CONGESTION_CSV
    else:
        data = cfg.out_dir / subset_csv_name(cfg.subset_level)
    _need(data, "pass --data or run gen-data first")
    rows = _read_rows(read_congestion_csv if classifier else read_subset_csv, data)
    if saved.layer_dims[0] != len(rows[0].features):
        raise UserError(f"model expects {saved.layer_dims[0]} features, {data.name} has {len(rows[0].features)}")
    if args.test_split:
        train_size = cfg.congestion_train_size if classifier else cfg.subset_train_size
        _, te = ml.split_indices(len(rows), train_size, cfg.seed)
        rows = [rows[i] for i in te]
    print(f"model={args.model}\ndataset={data.name}\nrows={len(rows)}")
    if classifier:
        res = evaluate_model(saved, rows)
        (tn, fp), (fn, tp) = res["confusion"]
        print(f"accuracy={res['accuracy']:.6f}")
        print(f"confusion_tn={tn}\nconfusion_fp={fp}\nconfusion_fn={fn}\nconfusion_tp={tp}")
    else:
        X = np.array([r.features for r in rows])
        y = np.array([r.target for r in rows])
        pred = saved.predict(X)
        print(f"mse={float(np.mean((pred - y) ** 2)):.6f}")
        print(f"mae={float(np.mean(np.abs(pred - y))):.6f}")
    return 0


# -- select -----------------------------------------------------------------------

def _parse_clock(text: str) -> int:
    try:
        hh, mm = (int(v) for v in text.split(":"))
    except ValueError:
        raise UserError(f"bad --time {text!r}; expected HH:MM") from None
    if not (0 <= hh < 24 and mm in (0, 15, 30, 45)):
        raise UserError(f"--time {text!r} must be a 15-minute mark")
    slot = hh * 4 + mm // 15
    if slot >= SAMPLES_PER_DAY - 1:
        raise UserError("--time must leave one following interval in the same day")
    return slot


def _fmt_mw(v: np.ndarray) -> str:
    return ",".join(f"{x:.3f}" for x in v)


def _decision_text(dec, with_oracle: bool) -> list[str]:
    s = dec.scenario
    lines = [
        f"scenario day={s.day} time={s.clock} level={s.level.name}",
        f"predicted_next_mw={_fmt_mw(s.predicted_next)}",
    ]
    if with_oracle:
        lines.append(f"actual_next_mw={_fmt_mw(s.actual_next)}")
    truth = {e.choice: e for e in dec.oracle} if dec.oracle else {}
    head = f"{'candidate':<10} {'predicted':>10}"
    if with_oracle:
        head += f" {'true_l1':>9} {'true_l2':>8} {'true':>9}"
    lines.append(head)
    for choice, score in zip(dec.candidates, dec.scores):
        line = f"{choice.label:<10} {score:>10.4f}"
        if with_oracle:
            e = truth[choice]
            line += f" {e.l1:>9.4f} {e.l2:>8.1f} {e.total:>9.4f}"
        lines.append(line)
    lines.append(f"chosen={dec.chosen.choice.label} predicted_total={dec.chosen.predicted_total:.4f}")
    if with_oracle:
        ranking = " ".join(f"{e.choice.label}={e.total:.4f}" for e in dec.oracle)
        lines.append(f"oracle_ranking={ranking}")
        lines.append(f"oracle_best={dec.oracle[0].choice.label} chosen_true={dec.chosen_true.total:.4f} "
                     f"regret={dec.regret:.4f}")
    return lines


def cmd_select(args) -> int:
    cfg = _config(args)
    net, _ = _network(cfg)
    model_path = Path(args.model) if args.model else cfg.out_dir / "subset.model"
    _need(model_path, "train a subset model first or pass --model")
    saved = ml.load_model(model_path)
    if saved.kind != ml.SQUARED or saved.layer_dims[0] != 23 or saved.layer_dims[-1] != 1:
        raise UserError(f"{model_path} is not a subset penalty regressor")
    level = cfg.level(args.level or cfg.subset_level)
    candidates = subset_combinations() if (args.off_only or cfg.candidates == "off-only") \
        else default_candidates()
    profiles = _profiles(cfg)
    predicted = predicted_profiles(profiles)
    oracle = args.oracle or args.sweep is not None
    penalty = _penalty_for(cfg, level.name) if oracle else None
    holdout = list(cfg.holdout) or [cfg.study_days[-1]]

    out = [f"tool_version={__version__} seed={cfg.seed} model_sha256={sha256_file(model_path)}",
           f"candidates={len(candidates)}"
           + (f" l1_scale={penalty.l1_scale:.6g} l2={penalty.l2_congestion_penalty:g}" if penalty else "")]

    def run(t: int):
        return decide(saved, net, decision_scenario(net, profiles, predicted, level, t), candidates, penalty)

    if args.sweep is not None:
        if args.sweep < 1:
            raise UserError("--sweep needs a positive count")
        instants = [t for d in holdout for t in step_instants(d)]
        if args.sweep > len(instants):
            raise UserError(f"--sweep {args.sweep} exceeds the {len(instants)} held-out scenarios")
        out.append(f"{'day':>4} {'time':>5} {'chosen':<10} {'best':<10} {'chosen_true':>11} "
                   f"{'best_true':>9} {'regret':>8}")
        regrets = []
        for t in instants[:args.sweep]:
            dec = run(t)
            regrets.append(dec.regret)
            out.append(f"{dec.scenario.day:>4} {dec.scenario.clock:>5} {dec.chosen.choice.label:<10} "
                       f"{dec.oracle[0].choice.label:<10} {dec.chosen_true.total:>11.4f} "
                       f"{dec.oracle[0].total:>9.4f} {dec.regret:>8.4f}")
        r = np.array(regrets)
        out += [
            f"scenarios={len(r)}",
            f"optimal_fraction={np.mean(r <= 1e-12):.4f}",
            f"within_l2_fraction={np.mean(r <= penalty.l2_congestion_penalty):.4f}",
            f"mean_regret={r.mean():.4f}",
            f"max_regret={r.max():.4f}",
        ]
    else:
        day = holdout[0] if args.day is None else args.day
        if not 0 <= day < profiles[0].days:
            raise UserError(f"--day {day} outside the solar series (0..{profiles[0].days - 1})")
        if np.any(np.isnan(predicted[0].day(day))):
            raise UserError(f"--day {day} has no history for the solar forecast")
        out += _decision_text(run(day * SAMPLES_PER_DAY + _parse_clock(args.time)), oracle)

    text = "\n".join(out) + "\n"
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text)
    return 0


# -- plot -------------------------------------------------------------------------

def cmd_plot(args) -> int:
    src = _need(Path(args.curve), "pass an existing curve CSV")
    try:
        plot_curve(src, args.out, args.title or "")
    except ValueError as exc:
        raise UserError(str(exc)) from None
    print(f"wrote {args.out}")
    return 0


# -- parser -----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    kw = {"default": argparse.SUPPRESS} if suppress else {"default": None}
    p.add_argument("--config", help="INI run configuration (defaults built in)", **kw)
    p.add_argument("--seed", type=int, help="override run.seed", **kw)
    p.add_argument("--out-dir", dest="out_dir", help="override run.out_dir", **kw)
    p.add_argument("--jobs", type=int, help="worker processes for generation (0 = logical cores)", **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridsubset", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gridsubset {__version__}")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    grid = sub.add_parser("grid", help="grid file utilities")
    gsub = grid.add_subparsers(dest="grid_command", required=True, parser_class=_Parser)
    gv = gsub.add_parser("validate", parents=[common], help="parse a grid file and check its invariants")
    gv.add_argument("path", nargs="?", help="grid file (default: configured or reference grid)")
    gv.set_defaults(func=cmd_grid_validate)

    gd = sub.add_parser("gen-data", parents=[common], help="generate the congestion and subset datasets")
    gd.add_argument("--levels", help="comma-separated subset levels (default: all configured)")
    gd.add_argument("--concat-levels", action="store_true", help="also write subset_all.csv")
    gd.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", parents=[common], help="train a model from generated data")
    tr.add_argument("which", choices=["congestion-nn", "congestion-svm", "subset"])
    tr.add_argument("--variant", choices=["full", "actual", "predicted"], default="full",
                    help="congestion data: full dataset or the matched actual/predicted-solar sets")
    tr.add_argument("--steps", type=int, help="override the configured step count")
    tr.add_argument("--subsample", type=int, help="seeded subsample of congestion rows (0 = all)")
    tr.add_argument("--level", help="load level of the subset dataset")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", parents=[common], help="evaluate a model file on a dataset")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", help="dataset CSV (default: the matching generated set)")
    ev.add_argument("--test-split", action="store_true", help="only the seeded held-out split")
    ev.set_defaults(func=cmd_eval)

    se = sub.add_parser("select", parents=[common], help="choose a solar subset for one step ahead")
    se.add_argument("--model", help="subset model (default: <out-dir>/subset.model)")
    se.add_argument("--day", type=int, help="day index in the solar series (default: first held-out day)")
    se.add_argument("--time", default="12:00", help="decision time HH:MM (default 12:00)")
    se.add_argument("--level", help="load level (default: subset.level)")
    se.add_argument("--oracle", action="store_true", help="also simulate every candidate")
    se.add_argument("--sweep", type=int, metavar="N", help="oracle sweep over the first N held-out scenarios")
    se.add_argument("--off-only", action="store_true", help="only the seven off-patterns, without all-on")
    se.add_argument("--output", help="also write the listing to this file")
    se.set_defaults(func=cmd_select)

    pl = sub.add_parser("plot", parents=[common], help="render a curve CSV as SVG")
    pl.add_argument("curve")
    pl.add_argument("out")
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
