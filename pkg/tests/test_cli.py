import json

import pytest

from app.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION, build_parser, main, resolve_config
from core import validation


def test_theory_nesterov_q4(tmp_path, capsys):
    code = main(["theory", "--mu", "1", "--L", "4", "--nesterov", "--out", str(tmp_path)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "rho             0.5  (stable)" in out
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["config"]["command"] == "theory"
    assert meta["results"]["rate"]["rho"] == pytest.approx(0.5)


def test_theory_divergence_factor(tmp_path, capsys):
    code = main(["theory", "--mu", "0.05", "--L", "100", "--nesterov", "--divergence-factor", "--n", "50,1000",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    results = json.loads((tmp_path / "meta.json").read_text())["results"]
    assert results["divergence_factor"]["50"] == pytest.approx(1.05678, abs=1e-4)
    assert results["divergence_factor"]["1000"] < 1
    assert "divergence factor n=50" in capsys.readouterr().out


def test_theory_unstable_parameters_still_report(tmp_path, capsys):
    code = main(["theory", "--mu", "1", "--L", "4", "--alpha", "0.9", "--beta", "0.5", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "(unstable)" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["theory", "--bogus"],
    ["theory", "--mu", "1", "--L", "4", "--alpha", "0.1", "--beta", "1.2"],
    ["theory", "--mu", "1", "--L", "4"],
    ["sweep", "--Q", "8", "--grid", "ten"],
    ["counterexample", "--preset", "fig1"],
])
def test_usage_errors(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)] if argv else argv) == EXIT_USAGE
    assert "❌" in capsys.readouterr().err


def test_validate_passes_and_fails(tmp_path, monkeypatch):
    assert main(["validate", "--suites", "closed_form,jordan_power", "--out", str(tmp_path / "ok")]) == EXIT_OK
    payload = json.loads((tmp_path / "ok" / "validation.json").read_text())
    assert [s["suite_id"] for s in payload] == ["closed_form", "jordan_power"]

    def always_fails(builder):
        builder.check("impossible", "never within tolerance", 1.0, 0.0)

    monkeypatch.setitem(validation.SUITES, "always_fails", always_fails)
    assert main(["validate", "--suites", "always_fails", "--out", str(tmp_path / "bad")]) == EXIT_VALIDATION


def test_validate_unknown_suite_is_usage_error(tmp_path):
    assert main(["validate", "--suites", "nope", "--out", str(tmp_path)]) == EXIT_USAGE


def test_runtime_errors_map_to_exit_three(tmp_path, monkeypatch):
    from app import cli
    from core.errors import ConvergenceError

    def broken(cfg, reporter):
        raise ConvergenceError("stalled", sweeps=100)

    monkeypatch.setitem(cli.COMMAND_HANDLERS, "theory", broken)
    assert main(["theory", "--Q", "4", "--nesterov", "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_config_replay(tmp_path):
    first = tmp_path / "first"
    assert main(["theory", "--Q", "16", "--L", "2", "--nesterov", "--seed", "4", "--out", str(first)]) == EXIT_OK
    second = tmp_path / "second"
    assert main(["--config", str(first / "meta.json"), "theory", "--out", str(second)]) == EXIT_OK
    a = json.loads((first / "meta.json").read_text())
    b = json.loads((second / "meta.json").read_text())
    assert a["results"] == b["results"]
    assert {k: v for k, v in a["config"].items() if k != "out"} == \
        {k: v for k, v in b["config"].items() if k != "out"}


@pytest.mark.slow
def test_small_sweep_writes_outputs(tmp_path):
    code = main(["sweep", "--Q", "8", "--d", "10", "--grid", "4x4", "--iters", "300", "--trials", "1",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    for name in ("meta.json", "grid.csv", "contour.csv", "heatmap_rate.pgm", "heatmap_var.pgm", "plots.gp",
                 "report.html"):
        assert (tmp_path / name).exists()
    results = json.loads((tmp_path / "meta.json").read_text())["results"]
    assert results["cells"] == 16
    assert results["nesterov_cell"]["theory_rho"] == pytest.approx(0.64644, abs=1e-5)


def _resolve(argv):
    return resolve_config(build_parser().parse_args(argv))


def test_logreg_defaults_without_preset():
    cfg = _resolve(["logreg"])
    assert (cfg.n_samples, cfg.d, cfg.sigma, cfg.trials) == (100, 10, 0.0, 1)
    assert cfg.grid[1] % 2 == 1
    assert cfg.iters == 1500
    explicit = _resolve(["logreg", "--d", "4", "--n-samples", "40", "--grid", "5x5"])
    assert (explicit.d, explicit.n_samples, explicit.grid) == (4, 40, (5, 5))


def test_sweep_preset_supplies_condition_number():
    cfg = _resolve(["sweep", "--preset", "fig1"])
    assert cfg.bounds().Q == pytest.approx(8.0)
    assert _resolve(["sweep", "--preset", "fig1", "--Q", "4"]).bounds().Q == pytest.approx(4.0)


@pytest.mark.parametrize("argv", [
    ["theory", "--Q", "2,8", "--nesterov"],
    ["sweep", "--Q", "2,8", "--mu", "1", "--L", "4"],
])
def test_several_condition_numbers_need_a_sweep(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_USAGE


def test_sweep_writes_one_directory_per_condition_number(tmp_path, capsys):
    code = main(["sweep", "--Q", "2,4", "--d", "4", "--grid", "3x3", "--iters", "200", "--trials", "1",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["config"]["Q"] == [2.0, 4.0]
    assert sorted(meta["results"]) == ["2", "4"]
    for q in (2.0, 4.0):
        sub = json.loads((tmp_path / f"Q{q:g}" / "meta.json").read_text())
        assert sub["config"]["Q"] == [q]
        assert sub["grid"]["Q"] == pytest.approx(q)
        assert (tmp_path / f"Q{q:g}" / "grid.csv").exists()
    assert "Q = 4" in capsys.readouterr().out


def test_rerun_with_same_seed_is_byte_identical(tmp_path):
    argv = ["sweep", "--Q", "4", "--d", "5", "--grid", "4x3", "--iters", "300", "--trials", "2", "--seed", "11",
            "--out", str(tmp_path)]
    names = ("meta.json", "grid.csv", "contour.csv", "heatmap_rate.pgm", "heatmap_var.pgm", "plots.gp")
    assert main(argv) == EXIT_OK
    first = {name: (tmp_path / name).read_bytes() for name in names}
    assert main(argv) == EXIT_OK
    assert {name: (tmp_path / name).read_bytes() for name in names} == first

    # 宽为 alpha 个数，高为 beta 个数
    header = b"P5\n4 3\n255\n"
    for name in ("heatmap_rate.pgm", "heatmap_var.pgm"):
        assert first[name].startswith(header)
        assert len(first[name]) == len(header) + 4 * 3
