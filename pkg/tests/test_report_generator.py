import json

import numpy as np
import pandas as pd
import pytest

from core.experiments import CellResult, SweepGrid, stability_contour
from core.report_generator import (
    ReportGenerator,
    decode_pgm,
    encode_pgm,
    heatmap_figure,
    line_figure,
    neighborhood_intensity,
    rate_intensity,
)
from core.theory import OptimizerParams, SpectrumBounds, rate_report


@pytest.fixture
def small_grid():
    b = SpectrumBounds.from_condition(4.0)
    alphas = np.array([0.1, 0.5, 1.0])
    betas = np.array([-0.5, 0.0, 0.5, 0.9])
    cells = []
    for i, beta in enumerate(betas):
        row = []
        for j, alpha in enumerate(alphas):
            theory = rate_report(b, OptimizerParams(alpha, beta))
            if not theory.stable:
                row.append(CellResult(theory, diverged=True, diverged_trials=2, trials=2))
            else:
                row.append(CellResult(theory, empirical_rate=theory.rho, empirical_neighborhood=0.1 * (i + j + 1),
                                      trials=2))
        cells.append(row)
    return SweepGrid(alphas, betas, cells, b, {"Q": b.Q})


def test_pgm_header_and_orientation():
    values = np.array([[0.0, 0.5, 1.0], [1.0, 1.0, 1.0]])
    data = encode_pgm(values)
    assert data.startswith(b"P5\n3 2\n255\n")
    assert len(data) == len(b"P5\n3 2\n255\n") + 6
    # 最后一行（最大 beta）写在最上面
    assert data[len(b"P5\n3 2\n255\n"):][:3] == bytes([255, 255, 255])
    assert np.array_equal(decode_pgm(data), np.rint(values * 255).astype(np.uint8))


def test_pgm_payload_may_start_with_whitespace_bytes():
    values = np.full((2, 2), 10 / 255)
    assert np.array_equal(decode_pgm(encode_pgm(values)), np.full((2, 2), 10, dtype=np.uint8))


def test_encode_pgm_needs_2d():
    with pytest.raises(ValueError):
        encode_pgm(np.zeros(3))
    with pytest.raises(ValueError):
        decode_pgm(b"P2\n1 1\n255\n0")


def test_intensities():
    rates = np.array([[0.2, 1.5, np.nan]])
    assert np.allclose(rate_intensity(rates), [[0.8, 0.0, 0.0]])
    assert np.allclose(rate_intensity(rates, np.array([[True, False, False]])), [[0.0, 0.0, 0.0]])
    hoods = np.array([[0.0, 1.0, 2.0, np.nan]])
    assert np.allclose(neighborhood_intensity(hoods), [[1.0, 0.5, 0.0, 0.0]])


def test_write_sweep_outputs(tmp_path, small_grid):
    reporter = ReportGenerator(tmp_path)
    contour = stability_contour(small_grid)
    paths = reporter.write_sweep(small_grid, contour)
    names = {p.name for p in paths}
    assert {"grid.csv", "contour.csv", "heatmap_rate.pgm", "heatmap_var.pgm", "plots.gp"} <= names
    frame = pd.read_csv(tmp_path / "grid.csv")
    assert len(frame) == 12
    assert list(frame.columns[:8]) == ["alpha", "beta", "theory_rho", "theory_R", "theory_neighborhood",
                                      "emp_rate", "emp_neighborhood", "diverged"]
    pgm = decode_pgm((tmp_path / "heatmap_rate.pgm").read_bytes())
    assert pgm.shape == (4, 3)
    assert np.all(pgm[small_grid.diverged_mask()] == 0)


def test_csv_output_is_byte_identical(tmp_path, small_grid):
    a, b = ReportGenerator(tmp_path / "a"), ReportGenerator(tmp_path / "b")
    a.write_grid(small_grid)
    b.write_grid(small_grid)
    a.write_meta({"config": {"seed": 1}})
    b.write_meta({"config": {"seed": 1}})
    for name in ("grid.csv", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_formats_filter_outputs(tmp_path, small_grid):
    reporter = ReportGenerator(tmp_path, formats=("json",))
    assert reporter.write_grid(small_grid) is None
    assert reporter.write_pgm("x.pgm", np.zeros((2, 2))) is None
    path = reporter.write_json("doc.json", {"value": np.float64(1.5), "arr": np.arange(2)})
    assert json.loads(path.read_text()) == {"value": 1.5, "arr": [0, 1]}
    assert reporter.written == [path]


def test_trace_and_script(tmp_path):
    reporter = ReportGenerator(tmp_path)
    reporter.write_trace("run0", pd.DataFrame({"k": [0, 1], "distance": [1.0, 0.5]}))
    script = reporter.write_trace_script("traces", {"run0": ("traces/run0.csv", "2")})
    assert (tmp_path / "traces" / "run0.csv").exists()
    assert "traces/run0.csv" in script.read_text()


def test_html_report(tmp_path, small_grid):
    reporter = ReportGenerator(tmp_path)
    fig = heatmap_figure(small_grid, "theory_rho", "rho", stability_contour(small_grid))
    lines = line_figure({"a": [1.0, 0.5]}, "trace", markers={"hits": ([1], [0.5])})
    path = reporter.write_html_report("sweep", {"cells": 12}, [fig, lines])
    html = path.read_text(encoding="utf-8")
    assert "sweep" in html and "cells" in html
