"""
momlab 命令行入口
子命令：theory / sweep / counterexample / sgdfs / logreg / validate
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

# 添加项目根目录到Python路径
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import MomlabError, OutOfRegionError, UsageError
from core.experiments import (
    GridSpec,
    best_rate,
    divergence_experiment,
    heatmap_sweep,
    logreg_sweep,
    sgd_finite_sum_experiment,
    stability_contour,
)
from core.problems import logreg_problem, random_least_squares, worst_case_quadratic
from core.report_generator import ReportGenerator, heatmap_figure, line_figure
from core.run_config import COMMANDS, PRESETS, RunConfig, parse_grid, parse_list, parse_range
from core.theory import (
    OptimizerParams,
    SpectrumBounds,
    divergence_factor,
    nesterov_defaults,
    rate_report,
    sgd_finite_sum_rate,
    sgd_stochapprox_rate,
)
from core.validation import SUITES, run_validation, summarize

logger = logging.getLogger("momlab")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

DEFAULT_ITERS = {"sweep": 2000, "counterexample": 1500, "sgdfs": 1000, "logreg": 1500}


class _Parser(argparse.ArgumentParser):
    """参数错误统一转成 UsageError（退出码 1）"""

    def error(self, message):
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--mu", type=float, default=S)
    p.add_argument("--L", type=float, default=S)
    p.add_argument("--Q", type=lambda s: parse_list(s, float), default=S, help="单个值或逗号分隔列表")
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--nesterov", action="store_true", default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--iters", type=int, default=S)
    p.add_argument("--trials", type=int, default=S)
    p.add_argument("--seeds", type=int, default=S)
    p.add_argument("--grid", type=parse_grid, default=S, metavar="WxH")
    p.add_argument("--alpha-range", dest="alpha_range", type=parse_range, default=S, metavar="lo:hi")
    p.add_argument("--beta-range", dest="beta_range", type=parse_range, default=S, metavar="lo:hi")
    p.add_argument("--sigma", type=float, default=S)
    p.add_argument("--n", type=lambda s: parse_list(s, int), default=S)
    p.add_argument("--m", type=int, default=S)
    p.add_argument("--out", default=S, metavar="DIR")
    p.add_argument("--format", dest="formats", type=lambda s: parse_list(s, str), default=S)
    p.add_argument("--jobs", type=int, default=S)
    p.add_argument("--preset", choices=sorted(PRESETS), default=S)
    p.add_argument("--full-scale", dest="full_scale", action="store_true", default=S)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="momlab", description="Nesterov ASG / SGD 常数参数的速率理论与实验")
    parser.add_argument("--config", help="重放 meta.json / YAML 配置")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    theory = sub.add_parser("theory", help="闭式速率报告")
    _add_common(theory)
    theory.add_argument("--divergence-factor", dest="divergence_factor", action="store_true",
                        default=argparse.SUPPRESS)

    sweep = sub.add_parser("sweep", help="(alpha, beta) 热图扫描")
    _add_common(sweep)
    sweep.add_argument("--problem", choices=("worst_case", "least_squares"), default=argparse.SUPPRESS)
    sweep.add_argument("--d", type=int, default=argparse.SUPPRESS)

    sub_ce = sub.add_parser("counterexample", help="有限和反例的发散实验")
    _add_common(sub_ce)

    sgdfs = sub.add_parser("sgdfs", help="SGD 有限和界")
    _add_common(sgdfs)
    sgdfs.add_argument("--n-samples", dest="n_samples", type=int, default=argparse.SUPPRESS)
    sgdfs.add_argument("--interpolation", action="store_true", default=argparse.SUPPRESS)

    logreg = sub.add_parser("logreg", help="逻辑回归扫描")
    _add_common(logreg)
    logreg.add_argument("--reg", type=float, default=argparse.SUPPRESS)
    logreg.add_argument("--classes", type=int, default=argparse.SUPPRESS)
    logreg.add_argument("--n-samples", dest="n_samples", type=int, default=argparse.SUPPRESS)
    logreg.add_argument("--d", type=int, default=argparse.SUPPRESS, help="特征维数")

    validate = sub.add_parser("validate", help="数值校验套件")
    _add_common(validate)
    validate.add_argument("--suites", type=lambda s: parse_list(s, str), default=argparse.SUPPRESS,
                          help=f"逗号分隔，可选 {','.join(SUITES)}")
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    """命令行显式参数 > 预设 > 默认值；--config 时整体重放"""
    explicit: Dict[str, Any] = {k: v for k, v in vars(ns).items() if k not in ("config", "verbose", "command")}
    if ns.config:
        cfg = RunConfig.load(ns.config)
        if "out" in explicit:
            cfg = RunConfig.from_dict({**cfg.to_dict(), "out": explicit["out"]})
    else:
        if ns.command is None:
            raise UsageError(f"a subcommand is required: {', '.join(COMMANDS)}")
        try:
            cfg = RunConfig(command=ns.command, **explicit)
        except TypeError as exc:
            raise UsageError(str(exc))
        cfg = cfg.with_preset(tuple(explicit))
    if cfg.iters is None and cfg.command in DEFAULT_ITERS:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "iters": DEFAULT_ITERS[cfg.command]})
    return cfg.resolve_seed().validate()


# ---------------------------------------------------------------- 子命令


def cmd_theory(cfg: RunConfig, reporter: ReportGenerator) -> int:
    b = cfg.bounds()
    p = nesterov_defaults(b) if cfg.nesterov else OptimizerParams(cfg.alpha, cfg.beta)
    report = rate_report(b, p)
    results: Dict[str, Any] = {"bounds": b.to_dict(), "params": p.to_dict(), "rate": report.to_dict(),
                               "sgd_stochapprox_rate": sgd_stochapprox_rate(b)}
    try:
        results["sgd_finite_sum_rate"] = sgd_finite_sum_rate(b, p.alpha)
    except OutOfRegionError:
        results["sgd_finite_sum_rate"] = None
    if cfg.divergence_factor:
        results["divergence_factor"] = {str(n): divergence_factor(b, n) for n in cfg.n}

    print(f"mu = {b.mu:.6g}   L = {b.L:.6g}   Q = {b.Q:.6g}")
    print(f"alpha = {p.alpha:.6g}   beta = {p.beta:.6g}")
    print(f"rho             {report.rho:.10g}  ({report.status})")
    print(f"R               {report.spectral_norm_rate:.10g}")
    if report.stable:
        print(f"variance coeff  {report.variance_coeff:.10g}")
        print(f"C_eps estimate  {report.c_epsilon:.10g}")
    print(f"SGD rate        {results['sgd_stochapprox_rate']:.10g}")
    for n, value in results.get("divergence_factor", {}).items():
        print(f"divergence factor n={n}: {value:.10g}")
    reporter.write_meta({"config": cfg.to_dict(), "results": results})
    return EXIT_OK


def _sweep_problem(cfg: RunConfig, b: SpectrumBounds):
    if cfg.problem == "least_squares":
        q = random_least_squares(cfg.seed, n_samples=max(cfg.n_samples, cfg.d), n_features=cfg.d, Q_target=b.Q,
                                 mu_floor=b.mu)
        return q, SpectrumBounds(q.mu, q.L)
    return worst_case_quadratic(cfg.d, b.mu, b.L), b


def _grid_spec(cfg: RunConfig, b: SpectrumBounds) -> GridSpec:
    """Nesterov 默认参数落在范围内时占据最近的节点"""
    lo, hi = cfg.alpha_range or (0.01 / b.L, 1.99 / b.L)
    blo, bhi = cfg.beta_range
    p = nesterov_defaults(b)
    anchor = (p.alpha, p.beta) if lo <= p.alpha <= hi and blo <= p.beta <= bhi else None
    return GridSpec(cfg.grid[0], cfg.grid[1], (lo, hi), (blo, bhi), anchor=anchor)


def _sweep_summary(grid) -> Dict[str, Any]:
    cells = [cell for _, _, cell in grid.iter_cells()]
    return {
        "cells": len(cells),
        "diverged_cells": sum(c.diverged for c in cells),
        "failed_cells": sum(c.failure is not None for c in cells),
        "stable_cells": sum(c.theory.stable for c in cells),
    }


def _write_grid_outputs(cfg: RunConfig, reporter: ReportGenerator, grid, title: str,
                        summary: Dict[str, Any]) -> None:
    contour = stability_contour(grid)
    reporter.write_sweep(grid, contour)
    reporter.write_meta({"config": cfg.to_dict(), "results": summary, "grid": grid.meta})
    reporter.write_html_report(title, summary, [
        heatmap_figure(grid, "theory_rho", "theory rho", contour),
        heatmap_figure(grid, "emp_rate", "empirical rate", contour),
        heatmap_figure(grid, "emp_neighborhood", "empirical neighborhood / sigma", contour),
    ])


def _run_sweep(cfg: RunConfig, reporter: ReportGenerator) -> Dict[str, Any]:
    problem, b = _sweep_problem(cfg, cfg.bounds())
    reporter.write_meta({"config": cfg.to_dict()})
    grid = heatmap_sweep(problem, b, _grid_spec(cfg, b), cfg.sigma, cfg.iters, cfg.trials, cfg.seed, cfg.jobs)
    summary = _sweep_summary(grid)

    nesterov = nesterov_defaults(b)
    alphas, betas = grid.alpha_values, grid.beta_values
    j = min(range(len(alphas)), key=lambda j: abs(math.log(alphas[j] / nesterov.alpha)))
    i = min(range(len(betas)), key=lambda i: abs(betas[i] - nesterov.beta))
    summary["nesterov_cell"] = {"alpha": float(alphas[j]), "beta": float(betas[i]),
                                "theory_rho": grid.cells[i][j].theory.rho,
                                "emp_rate": grid.cells[i][j].empirical_rate}
    _write_grid_outputs(cfg, reporter, grid, f"heatmap sweep Q={b.Q:.4g}", summary)
    print(f"✅ {summary['cells']} cells, {summary['diverged_cells']} diverged, "
          f"{summary['failed_cells']} with measurement failures")
    print(f"   cell nearest Nesterov defaults: theory rho {summary['nesterov_cell']['theory_rho']:.6f}")
    return summary


def cmd_sweep(cfg: RunConfig, reporter: ReportGenerator) -> int:
    """多个 --Q 时每个 Q 写到 OUT/Q<q> 子目录，顶层 meta.json 汇总"""
    if len(cfg.Q) <= 1:
        _run_sweep(cfg, reporter)
        return EXIT_OK
    results = {}
    for q in cfg.Q:
        sub = replace(cfg, Q=[q], out=str(Path(cfg.out) / f"Q{q:g}"))
        print(f"Q = {q:g} -> {sub.out}")
        results[f"{q:g}"] = _run_sweep(sub, ReportGenerator(sub.out, sub.formats))
    reporter.write_meta({"config": cfg.to_dict(), "results": results})
    return EXIT_OK


def cmd_counterexample(cfg: RunConfig, reporter: ReportGenerator) -> int:
    b = SpectrumBounds(cfg.mu if cfg.mu is not None else 0.05, cfg.L if cfg.L is not None else 100.0)
    n_values = cfg.n or [50]
    reporter.write_meta({"config": cfg.to_dict()})
    results = divergence_experiment(n_values, b, cfg.iters, cfg.seeds, cfg.seed, cfg.jobs, cfg.m)
    traces = {}
    figures = []
    for result in results:
        for series in result.series:
            name = f"n{result.n}_seed{series.seed_index}"
            reporter.write_trace(name, series.to_frame())
            traces[name] = (f"traces/{name}.csv", "2")
        first = result.series[0]
        figures.append(line_figure({"coordinate 2": first.coord2()}, f"n={result.n}, seed 0", log_y=False,
                                   markers={"f_n sampled": (first.red_points, first.coord2()[first.red_points])}))
        mark = "⚠️" if result.divergent_count * 2 > len(result.series) else "✅"
        print(f"{mark} n={result.n}: {result.divergent_count}/{len(result.series)} seeds diverged, "
              f"growth exponent {result.mean_growth_exponent:.4f} (log factor {result.predicted_exponent:.4f})")
    reporter.write_trace_script("counterexample coordinate-2 traces", traces)
    summary = {str(r.n): r.summary() for r in results}
    reporter.write_meta({"config": cfg.to_dict(), "results": summary})
    reporter.write_html_report("finite-sum counterexample", {f"n={r.n}": f"{r.divergent_count}/{len(r.series)}"
                                                            for r in results}, figures)
    return EXIT_OK


def cmd_sgdfs(cfg: RunConfig, reporter: ReportGenerator) -> int:
    reporter.write_meta({"config": cfg.to_dict()})
    results = sgd_finite_sum_experiment(cfg.Q, seed=cfg.seed, iterations=cfg.iters, seeds=cfg.seeds,
                                        n_samples=cfg.n_samples, n_batches=cfg.n_batches, n_features=cfg.d,
                                        interpolation=cfg.interpolation)
    traces, figures, summary = {}, [], {}
    for r in results:
        name = f"sgdfs_Q{r.Q:g}"
        reporter.write_trace(name, r.to_frame())
        traces[name] = (f"traces/{name}.csv", "2")
        frame = r.to_frame()
        figures.append(line_figure({"empirical": frame["empirical"], "bound": frame["bound"]}, f"Q={r.Q:g}"))
        summary[f"{r.Q:g}"] = {"theory_rate": r.theory_rate, "fitted_rate": r.fitted_rate,
                               "sigma_star": r.sigma_star, "violations": r.violations}
        fitted = "n/a" if r.fitted_rate is None else f"{r.fitted_rate:.5f}"
        mark = "✅" if r.violations == 0 else "❌"
        print(f"{mark} Q={r.Q:g}: fitted rate {fitted} vs {r.theory_rate:.5f}, {r.violations} bound violations")
    reporter.write_trace_script("SGD finite-sum distance vs bound", traces)
    reporter.write_meta({"config": cfg.to_dict(), "results": summary})
    reporter.write_html_report("SGD finite-sum bound", {f"Q={k}": v["violations"] for k, v in summary.items()},
                               figures)
    return EXIT_OK


def cmd_logreg(cfg: RunConfig, reporter: ReportGenerator) -> int:
    problem = logreg_problem(cfg.seed, classes=cfg.classes, n_samples=cfg.n_samples, n_features=cfg.d,
                             n_informative=min(5, cfg.d), reg=cfg.reg)
    reporter.write_meta({"config": cfg.to_dict()})
    grid_spec = None
    if cfg.alpha_range is not None:
        grid_spec = GridSpec(cfg.grid[0], cfg.grid[1], tuple(cfg.alpha_range), tuple(cfg.beta_range))
    grid, b = logreg_sweep(problem, grid_spec, cfg.iters, cfg.seed, sigma=cfg.sigma,
                           trials=cfg.trials, jobs=cfg.jobs, size=tuple(cfg.grid))
    summary = _sweep_summary(grid)
    summary.update({"estimated_bounds": b.to_dict(), "best_momentum_rate": best_rate(grid, True),
                    "best_sgd_rate": best_rate(grid, False)})
    _write_grid_outputs(cfg, reporter, grid, f"logistic regression sweep Q~{b.Q:.3g}", summary)
    print(f"✅ estimated mu={b.mu:.4g} L={b.L:.4g} Q={b.Q:.4g}")
    print(f"   best rate with momentum {summary['best_momentum_rate']}, without {summary['best_sgd_rate']}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, reporter: ReportGenerator) -> int:
    results = run_validation(cfg.suites or None, cfg.seed, cfg.full_scale, cfg.jobs)
    summary = summarize(results)
    for r in results:
        print(f"{'✅' if r.passed else '❌'} {r.name}")
        for c in r.checks:
            if c.status != "passed":
                print(f"     {c.name}: {c.error_message}")
        if r.error_message:
            print(f"     {r.error_message}")
    payload = [{k: v for k, v in r.to_dict().items() if k not in ("start_time", "end_time", "duration")}
               for r in results]
    for suite in payload:
        for check in suite["checks"]:
            check.pop("duration", None)
    reporter.write_meta({"config": cfg.to_dict(), "results": summary})
    reporter.write_json("validation.json", payload)
    reporter.write_html_report("validation", summary, suites=results)
    return EXIT_OK if summary["failed"] == 0 else EXIT_VALIDATION


COMMAND_HANDLERS: Dict[str, Callable[[RunConfig, ReportGenerator], int]] = {
    "theory": cmd_theory,
    "sweep": cmd_sweep,
    "counterexample": cmd_counterexample,
    "sgdfs": cmd_sgdfs,
    "logreg": cmd_logreg,
    "validate": cmd_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(ns)
    except UsageError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_USAGE
    reporter = ReportGenerator(cfg.out, cfg.formats)
    try:
        return COMMAND_HANDLERS[cfg.command](cfg, reporter)
    except UsageError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MomlabError as exc:
        logger.error("%s failed: %s", cfg.command, exc)
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception("%s failed unexpectedly", cfg.command)
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if reporter.written:
            logger.info("outputs: %s", ", ".join(str(p) for p in reporter.written))


if __name__ == "__main__":
    sys.exit(main())
