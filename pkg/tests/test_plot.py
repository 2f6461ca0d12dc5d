from __future__ import annotations

import re

import pytest

from gridsubset.plot import plot_curve, render_svg


def _write(path, header, rows):
    path.write_text(",".join(header) + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def test_point_count(tmp_path):
    src = _write(tmp_path / "c.csv", ["step", "train_loss"], [(i, 1.0 / i) for i in range(1, 501)])
    plot_curve(src, tmp_path / "c.svg")
    svg = (tmp_path / "c.svg").read_text()
    points = re.search(r'points="([^"]*)"', svg).group(1).split()
    assert len(points) == 500


def test_two_metrics_two_polylines_with_legend():
    svg = render_svg(["step", "train_acc", "test_acc"], [[1, 0.5, 0.4], [2, 0.7, 0.6]])
    assert svg.count("<polyline") == 2
    assert ">train_acc</text>" in svg and ">test_acc</text>" in svg
    assert ">step</text>" in svg


def test_nan_points_are_skipped():
    svg = render_svg(["step", "a"], [[1, 0.5], [2, float("nan")], [3, 0.7]])
    assert len(re.search(r'points="([^"]*)"', svg).group(1).split()) == 2


def test_deterministic_bytes(tmp_path):
    src = _write(tmp_path / "c.csv", ["step", "x"], [(1, 2), (2, 3)])
    plot_curve(src, tmp_path / "a.svg")
    plot_curve(src, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_empty_csv(tmp_path):
    src = tmp_path / "e.csv"
    src.write_text("step,x\n")
    with pytest.raises(ValueError):
        plot_curve(src, tmp_path / "e.svg")
