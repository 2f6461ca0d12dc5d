"""Run configuration: an INI file with sections, overridable from the CLI."""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .scenario import LoadLevel

DEFAULT_CONFIG = """\
[run]
seed = 7
# study days, preceded by history_days used only to seed the solar forecast
days = 14
history_days = 7
# extra days after the study window, reserved for held-out decisions
holdout_days = 2
# worker processes for scenario generation; 0 = logical cores
jobs = 0
out_dir = out

[grid]
# empty = packaged reference grid
path =

[levels]
Low = 0.7
Medium = 1.0
High = 1.3

[solar]
# "synthetic" or the path of a timestamp,gen1_mw,gen2_mw,gen3_mw CSV
source = synthetic
peak_mw = 80, 65, 55
noise = 0.03

[penalty]
l2 = 50
# "auto" calibrates per dataset so mean scaled L1 is half of l2
l1_scale = auto

[congestion]
# 0 = full dataset, otherwise a seeded subsample of that many rows (e.g. 715)
subsample = 0
train_size = 650
nn_steps = 500
learning_rate = 0.001
batch_size = 32
svm_lambda = 0.001
svm_epochs = 20
predicted_rows = 750
predicted_nn_steps = 800

[subset]
level = Medium
train_size = 4500
steps = 2500
learning_rate = 0.001
batch_size = 32
# "all" = the seven off-patterns plus all-on; "off-only" = the seven alone
candidates = all
"""


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 7
    days: int = 14
    history_days: int = 7
    holdout_days: int = 2
    jobs: int = 0
    out_dir: Path = Path("out")
    grid_path: Path | None = None
    levels: list[LoadLevel] = field(default_factory=list)
    solar_source: str = "synthetic"
    peak_mw: list[float] = field(default_factory=lambda: [80.0, 65.0, 55.0])
    solar_noise: float = 0.03
    l2_penalty: float = 50.0
    l1_scale: float | None = None
    congestion_subsample: int = 0
    congestion_train_size: int = 650
    nn_steps: int = 500
    nn_learning_rate: float = 1e-3
    nn_batch_size: int = 32
    svm_lambda: float = 1e-3
    svm_epochs: int = 20
    predicted_rows: int = 750
    predicted_nn_steps: int = 800
    subset_level: str = "Medium"
    subset_train_size: int = 4500
    subset_steps: int = 2500
    subset_learning_rate: float = 1e-3
    subset_batch_size: int = 32
    candidates: str = "all"
    source_text: str = ""

    @property
    def study_days(self) -> range:
        return range(self.history_days, self.history_days + self.days)

    @property
    def holdout(self) -> range:
        end = self.history_days + self.days
        return range(end, end + self.holdout_days)

    @property
    def total_days(self) -> int:
        return self.history_days + self.days + self.holdout_days

    @property
    def workers(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)

    def level(self, name: str) -> LoadLevel:
        for lv in self.levels:
            if lv.name.lower() == name.lower():
                return lv
        raise ConfigError(f"unknown load level {name!r}; configured: {[lv.name for lv in self.levels]}")


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str  # keep level-name case
    cp.read_string(DEFAULT_CONFIG)
    user = configparser.ConfigParser(inline_comment_prefixes=("#",))
    user.optionxform = str
    try:
        user.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad configuration: {exc}") from None
    if user.has_section("levels"):
        # a [levels] section replaces the default set rather than extending it
        cp.remove_section("levels")
    cp.read_dict(user)
    base_dir = base_dir or Path.cwd()

    def path(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    try:
        run, solar, pen = cp["run"], cp["solar"], cp["penalty"]
        cong, sub = cp["congestion"], cp["subset"]
        levels = [LoadLevel(name, float(v)) for name, v in cp["levels"].items()]
        scale = pen.get("l1_scale").strip().lower()
        cfg = RunConfig(
            seed=run.getint("seed"),
            days=run.getint("days"),
            history_days=run.getint("history_days"),
            holdout_days=run.getint("holdout_days"),
            jobs=run.getint("jobs"),
            out_dir=path(run.get("out_dir")),
            grid_path=path(cp["grid"].get("path")) if cp["grid"].get("path", "").strip() else None,
            levels=levels,
            solar_source=solar.get("source").strip(),
            peak_mw=[float(v) for v in solar.get("peak_mw").split(",")],
            solar_noise=solar.getfloat("noise"),
            l2_penalty=pen.getfloat("l2"),
            l1_scale=None if scale == "auto" else float(scale),
            congestion_subsample=cong.getint("subsample"),
            congestion_train_size=cong.getint("train_size"),
            nn_steps=cong.getint("nn_steps"),
            nn_learning_rate=cong.getfloat("learning_rate"),
            nn_batch_size=cong.getint("batch_size"),
            svm_lambda=cong.getfloat("svm_lambda"),
            svm_epochs=cong.getint("svm_epochs"),
            predicted_rows=cong.getint("predicted_rows"),
            predicted_nn_steps=cong.getint("predicted_nn_steps"),
            subset_level=sub.get("level").strip(),
            subset_train_size=sub.getint("train_size"),
            subset_steps=sub.getint("steps"),
            subset_learning_rate=sub.getfloat("learning_rate"),
            subset_batch_size=sub.getint("batch_size"),
            candidates=sub.get("candidates").strip().lower(),
            source_text=DEFAULT_CONFIG + "\n" + text,
        )
    except (KeyError, ValueError, configparser.Error) as exc:
        raise ConfigError(f"bad configuration: {exc}") from None
    if cfg.solar_source != "synthetic":
        cfg.solar_source = str(path(cfg.solar_source))
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.days < 1 or cfg.history_days < 1 or cfg.holdout_days < 0:
        raise ConfigError("need days >= 1, history_days >= 1, holdout_days >= 0")
    if not cfg.levels:
        raise ConfigError("no load levels configured")
    scales = [lv.scale for lv in cfg.levels]
    if any(s <= 0 for s in scales):
        raise ConfigError("load level scales must be positive")
    if cfg.grid_path is not None and not cfg.grid_path.exists():
        raise ConfigError(f"grid file not found: {cfg.grid_path}")
    if cfg.solar_source != "synthetic" and not Path(cfg.solar_source).exists():
        raise ConfigError(f"solar CSV not found: {cfg.solar_source}")
    if cfg.candidates not in ("all", "off-only"):
        raise ConfigError("subset.candidates must be 'all' or 'off-only'")
    cfg.level(cfg.subset_level)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config("")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), p.parent)
