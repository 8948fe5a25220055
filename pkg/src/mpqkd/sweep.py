"""Scenario sweeps: table/figure reproductions, method comparisons and the
Monte Carlo / decoy verification harness.

A sweep is described by a :class:`SweepSpec` (usually loaded from a strict
JSON document), expands deterministically into grid tasks, evaluates them
(optionally across worker processes) and emits fixed-header CSV rows with
10-significant-digit decimal formatting, so identical specs produce
byte-identical files.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Any, Iterable, Sequence

from .decoy import (
    bound_single_photon,
    decoy_config_for,
    decoy_key_rate,
    expected_observables,
    single_photon_z_error_yield,
    single_photon_z_yield,
)
from .model import SystemParams, key_rate, make_scenario
from .montecarlo import (
    analytic_reference,
    estimate_statistics,
    pair_clicks,
    sift_and_map,
    simulate_rounds,
)
from .optimize import OptimizationProblem, optimize_intensities, plob_bound

__all__ = [
    "SweepValidationError",
    "SweepSpec",
    "ResultRow",
    "load_spec",
    "run_sweep",
    "format_row",
    "write_rows",
    "verify_oracles",
    "CSV_COLUMNS",
]

MODES = (
    "table2",
    "table3",
    "table4",
    "table5",
    "fig3",
    "fig4",
    "fig5",
    "fig6",
    "fig7",
    "custom",
)
METHODS = ("OI", "AF", "PLOB", "fixed-intensity")
LAMBDA_LADDER = (1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e6)
# Figure sweeps stop a curve once the rate drops below this.
CURVE_CUTOFF = 1e-12
MAX_TOTAL_KM = 600.0

CSV_COLUMNS = [
    "total_km",
    "distance_a_km",
    "distance_b_km",
    "delta_km",
    "lambda",
    "e_d",
    "method",
    "mu_a",
    "mu_b",
    "rate",
    "plob",
    "plob_det",
    "p",
    "r_p",
    "r_s",
    "q_bar_11",
    "e_z",
    "y_11",
    "e_11",
    "raw_rate",
]


class SweepValidationError(ValueError):
    """A sweep specification is malformed."""


@dataclass(frozen=True)
class SweepSpec:
    """Declarative sweep description.

    Distance grids are in total communication distance (both arms).  Preset
    modes carry the corresponding table/figure parameterization; only the
    distance grid, seed, output path, worker count and Monte Carlo round
    count may be overridden for them.
    """

    mode: str = "custom"
    distance_start: float | None = None
    distance_stop: float | None = None
    distance_step: float | None = None
    delta_list: tuple[float, ...] | None = None
    lambda_list: tuple[float, ...] | None = None
    e_d_list: tuple[float, ...] | None = None
    methods: tuple[str, ...] | None = None
    mu_a: float | None = None
    mu_b: float | None = None
    out: str | None = None
    seed: int = 0
    n_rounds: int = 1_000_000
    workers: int = 1

    def __post_init__(self) -> None:
        problems: list[str] = []
        if self.mode not in MODES:
            problems.append(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.mode == "custom":
            grid = (self.distance_start, self.distance_stop, self.distance_step)
            if any(v is None for v in grid):
                problems.append("distance_start/stop/step: required for custom mode")
            elif self.distance_step <= 0 or self.distance_stop < self.distance_start:
                problems.append("distance grid: step must be > 0 and stop >= start")
            if not self.delta_list:
                problems.append("delta_list: must be nonempty")
            elif any(d < 0 for d in self.delta_list):
                problems.append("delta_list: gaps must be >= 0 km")
            if not self.lambda_list:
                problems.append("lambda_list: must be nonempty")
            elif any(not (lam == math.inf or lam >= 1) for lam in self.lambda_list):
                problems.append("lambda_list: intervals must be >= 1 or inf")
            if not self.e_d_list:
                problems.append("e_d_list: must be nonempty")
            elif any(not 0.0 <= e <= 0.5 for e in self.e_d_list):
                problems.append("e_d_list: misalignment must be in [0, 0.5]")
            if not self.methods:
                problems.append("methods: must be nonempty")
            elif any(m not in METHODS for m in self.methods):
                problems.append(f"methods: must be a subset of {METHODS}")
            if self.methods and "fixed-intensity" in self.methods:
                if self.mu_a is None or self.mu_b is None:
                    problems.append("mu_a/mu_b: required for the fixed-intensity method")
        else:
            for name in ("delta_list", "lambda_list", "e_d_list", "methods", "mu_a", "mu_b"):
                if getattr(self, name) is not None:
                    problems.append(f"{name}: not overridable in preset mode {self.mode!r}")
            if self.distance_step is not None and self.distance_step <= 0:
                problems.append("distance_step: must be > 0")
        if self.n_rounds < 1:
            problems.append("n_rounds: must be >= 1")
        if self.workers < 1:
            problems.append("workers: must be >= 1")
        if problems:
            raise SweepValidationError("; ".join(problems))


def load_spec(source: str | dict[str, Any]) -> SweepSpec:
    """Parse a spec from a JSON file path or a dict; unknown keys rejected."""
    if isinstance(source, str):
        with open(source) as handle:
            data = json.load(handle)
    else:
        data = dict(source)
    if not isinstance(data, dict):
        raise SweepValidationError("spec document must be a JSON object")
    known = {f.name for f in fields(SweepSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise SweepValidationError(f"unknown keys: {', '.join(unknown)}")
    for name in ("delta_list", "e_d_list", "methods"):
        if name in data and data[name] is not None:
            data[name] = tuple(data[name])
    if "lambda_list" in data and data["lambda_list"] is not None:
        data["lambda_list"] = tuple(_parse_interval(v) for v in data["lambda_list"])
    env_seed = os.environ.get("MPQKD_SEED")
    if env_seed is not None:
        data["seed"] = int(env_seed)
    return SweepSpec(**data)


def _parse_interval(value: Any) -> float:
    if isinstance(value, str):
        if value.lower() in ("inf", "infinite", "infinity"):
            return math.inf
        raise SweepValidationError(f"lambda_list: cannot parse interval {value!r}")
    return float(value)


@dataclass(frozen=True)
class ResultRow:
    """One evaluated sweep point."""

    total_km: float
    distance_a_km: float
    distance_b_km: float
    delta_km: float
    lam: float
    e_d: float
    method: str
    mu_a: float | None
    mu_b: float | None
    rate: float
    plob: float
    plob_det: float
    p: float | None = None
    r_p: float | None = None
    r_s: float | None = None
    q_bar_11: float | None = None
    e_z: float | None = None
    y_11: float | None = None
    e_11: float | None = None
    raw_rate: float | None = None


def _delta_ratio(delta_km: float, params: SystemParams) -> float:
    return 10.0 ** (params.alpha * delta_km / 10.0)


def _evaluate_point(task: tuple) -> ResultRow:
    """Evaluate one (geometry, interval, misalignment, method) grid point."""
    total_km, delta_km, lam, e_d, method, mu_fixed = task
    params = SystemParams(e_d=e_d)
    distance_a = (total_km - delta_km) / 2.0
    distance_b = distance_a + delta_km
    plob = plob_bound(total_km, params)
    plob_det = plob_bound(total_km, params, include_detector=True)
    base = dict(
        total_km=total_km,
        distance_a_km=distance_a,
        distance_b_km=distance_b,
        delta_km=delta_km,
        lam=lam,
        e_d=e_d,
        method=method,
        plob=plob,
        plob_det=plob_det,
    )
    if method == "PLOB":
        return ResultRow(mu_a=None, mu_b=None, rate=plob, **base)

    if method == "AF":
        problem = OptimizationProblem(distance_b, 1.0, lam, params)
        report = optimize_intensities(problem)
    elif method == "OI":
        problem = OptimizationProblem(distance_a, _delta_ratio(delta_km, params), lam, params)
        report = optimize_intensities(problem)
    elif method == "fixed-intensity":
        problem = OptimizationProblem(distance_a, _delta_ratio(delta_km, params), lam, params)
        report = None
    else:
        raise SweepValidationError(f"unknown method {method!r}")

    if report is not None:
        mu_a, mu_b = report.mu_a_star, report.mu_b_star
    else:
        mu_a, mu_b = mu_fixed
    breakdown = key_rate(problem.scenario(mu_a, mu_b))
    return ResultRow(
        mu_a=mu_a,
        mu_b=mu_b,
        rate=breakdown.rate,
        p=breakdown.p,
        r_p=breakdown.r_p,
        r_s=breakdown.r_s,
        q_bar_11=breakdown.q_bar_11,
        e_z=breakdown.e_z,
        y_11=breakdown.y_11,
        e_11=breakdown.e_11,
        raw_rate=breakdown.raw_rate,
        **base,
    )


def _table_rows(spec: SweepSpec) -> list[ResultRow]:
    params = SystemParams()
    if spec.mode == "table2":
        cells = [(0.0, 1e6), (50.0, 1e6), (100.0, 1e6)]
    elif spec.mode == "table3":
        cells = [(0.0, 1.0), (50.0, 1.0), (100.0, 1.0)]
    elif spec.mode == "table4":
        cells = [(50.0, lam) for lam in LAMBDA_LADDER]
    else:  # table5
        cells = [(0.0, lam) for lam in LAMBDA_LADDER]
    tasks = [
        (200.0 + delta_km, delta_km, lam, params.e_d, "OI", None)
        for delta_km, lam in cells
    ]
    return _evaluate_all(tasks, spec.workers)


def _grid_totals(spec: SweepSpec, delta_km: float) -> list[float]:
    start = spec.distance_start if spec.distance_start is not None else delta_km + 10.0
    stop = spec.distance_stop if spec.distance_stop is not None else MAX_TOTAL_KM
    step = spec.distance_step if spec.distance_step is not None else 5.0
    totals = []
    total = max(start, delta_km + 2.0)  # both arms must stay positive
    while total <= stop + 1e-9:
        totals.append(total)
        total += step
    return totals


def _figure_rows(spec: SweepSpec) -> list[ResultRow]:
    params_e_d = SystemParams().e_d
    if spec.mode == "fig3":
        tasks = []
        for lam in (1e6, 1.0):
            for delta_km in range(0, 151, 10):
                tasks.append((200.0 + delta_km, float(delta_km), lam, params_e_d, "OI", None))
        return _evaluate_all(tasks, spec.workers)
    if spec.mode in ("fig4", "fig5"):
        lam = 1e6 if spec.mode == "fig4" else 1.0
        curves = [(delta_km, lam, params_e_d) for delta_km in (0.0, 50.0, 100.0, 150.0)]
        methods = ("OI", "AF", "PLOB")
    elif spec.mode == "fig6":
        curves = [(50.0, lam, params_e_d) for lam in LAMBDA_LADDER]
        methods = ("OI", "PLOB")
    else:  # fig7
        curves = [
            (delta_km, 1e6, e_d)
            for e_d in (0.04, 0.12, 0.20)
            for delta_km in (0.0, 50.0, 100.0)
        ]
        methods = ("OI", "PLOB")
    rows: list[ResultRow] = []
    for delta_km, lam, e_d in curves:
        for total in _grid_totals(spec, delta_km):
            point_rows = _evaluate_all(
                [(total, delta_km, lam, e_d, m, None) for m in methods], spec.workers
            )
            rows.extend(point_rows)
            oi_rate = next(r.rate for r in point_rows if r.method == "OI")
            if oi_rate < CURVE_CUTOFF:
                break
    return rows


def _custom_rows(spec: SweepSpec) -> list[ResultRow]:
    tasks = []
    mu_fixed = (spec.mu_a, spec.mu_b)
    for delta_km in spec.delta_list:
        for lam in spec.lambda_list:
            for e_d in spec.e_d_list:
                for total in _grid_totals(spec, delta_km):
                    for method in spec.methods:
                        tasks.append((total, delta_km, lam, e_d, method, mu_fixed))
    return _evaluate_all(tasks, spec.workers)


def _evaluate_all(tasks: Sequence[tuple], workers: int) -> list[ResultRow]:
    if workers <= 1 or len(tasks) < 2:
        return [_evaluate_point(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_evaluate_point, tasks))


def run_sweep(spec: SweepSpec) -> list[ResultRow]:
    """Expand and evaluate a sweep; writes the CSV when an output path is set."""
    if spec.mode.startswith("table"):
        rows = _table_rows(spec)
    elif spec.mode.startswith("fig"):
        rows = _figure_rows(spec)
    else:
        rows = _custom_rows(spec)
    if spec.out:
        write_rows(rows, spec.out)
    return rows


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return f"{value:.10g}"


def format_row(row: ResultRow) -> str:
    """One CSV line for a result row, in the fixed column order."""
    values = (
        row.total_km,
        row.distance_a_km,
        row.distance_b_km,
        row.delta_km,
        row.lam,
        row.e_d,
        row.method,
        row.mu_a,
        row.mu_b,
        row.rate,
        row.plob,
        row.plob_det,
        row.p,
        row.r_p,
        row.r_s,
        row.q_bar_11,
        row.e_z,
        row.y_11,
        row.e_11,
        row.raw_rate,
    )
    return ",".join(_format(v) for v in values)


def write_rows(rows: Iterable[ResultRow], path: str) -> None:
    """Fixed-header CSV emission with 10-significant-digit decimals."""
    try:
        with open(path, "w", newline="") as handle:
            handle.write(",".join(CSV_COLUMNS) + "\n")
            for row in rows:
                handle.write(format_row(row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write sweep output to {path}: {exc}") from exc


def _verification_points(spec: SweepSpec, limit: int = 2) -> list[tuple[float, float, float]]:
    """(total_km, delta_km, lam) points the verification harness exercises."""
    deltas = spec.delta_list or (0.0,)
    lams = spec.lambda_list or (100.0,)
    points = []
    for delta_km in deltas[:limit]:
        totals = _grid_totals(spec, delta_km)
        lam = lams[0]
        points.append((totals[0], delta_km, lam if lam != math.inf else lam))
        if len(points) >= limit:
            break
    return points


def verify_oracles(spec: SweepSpec) -> list[dict[str, Any]]:
    """Cross-validate the analytic model against the Monte Carlo oracle and
    the decoy bounds at selected grid points.

    Statistical checks compare within 3 reference standard errors; failures
    are reported, not raised.
    """
    report: list[dict[str, Any]] = []
    for point_index, (total, delta_km, lam) in enumerate(_verification_points(spec)):
        params = SystemParams(e_d=spec.e_d_list[0] if spec.e_d_list else 0.04)
        distance_a = (total - delta_km) / 2.0
        problem = OptimizationProblem(distance_a, _delta_ratio(delta_km, params), lam, params)
        optimum = optimize_intensities(problem)
        scenario = problem.scenario(optimum.mu_a_star, optimum.mu_b_star)
        label = f"point{point_index}(total={total:g},gap={delta_km:g},lam={lam:g})"

        rounds = simulate_rounds(scenario, spec.n_rounds, spec.seed, stream=point_index)
        pairs = sift_and_map(pair_clicks(rounds, scenario.lam), scenario, seed=spec.seed)
        stats = estimate_statistics(pairs, rounds, scenario)
        reference = analytic_reference(scenario)
        for name, estimate in (
            ("p", stats.p_hat),
            ("r_p", stats.r_p_hat),
            ("r_s", stats.r_s_hat),
        ):
            if estimate is None:
                report.append(
                    {"check": f"{label}:{name}", "passed": False, "deviation": math.inf}
                )
                continue
            ref = reference[name]
            band = 3.0 * math.sqrt(max(ref * (1.0 - ref), 1e-300) / estimate.denominator)
            deviation = abs(estimate.value - ref)
            report.append(
                {"check": f"{label}:{name}", "passed": deviation <= band, "deviation": deviation}
            )
        if scenario.params.p_d == 0.0 and stats.e_z_hat is not None:
            report.append(
                {
                    "check": f"{label}:e_z_zero",
                    "passed": stats.e_z_hat.value == 0.0,
                    "deviation": stats.e_z_hat.value,
                }
            )

        decoy_scenario = make_scenario(
            scenario.link_a.distance_km,
            scenario.link_b.distance_km,
            scenario.mu_a,
            scenario.mu_b,
            scenario.lam,
            params,
            nu_a=scenario.mu_a / 5.0,
            nu_b=scenario.mu_b / 5.0,
        )
        config = decoy_config_for(decoy_scenario)
        bounds = bound_single_photon(
            expected_observables(decoy_scenario, config), config
        )
        true_m = single_photon_z_yield(decoy_scenario)
        true_e = single_photon_z_error_yield(decoy_scenario)
        breakdown = key_rate(decoy_scenario)
        decoy_rate = decoy_key_rate(
            bounds, breakdown.r_p * breakdown.r_s, breakdown.e_z, params
        )
        report.append(
            {
                "check": f"{label}:decoy_bracket",
                "passed": bounds.m_z_11_lower <= true_m * (1 + 1e-9)
                and bounds.e_z_11_upper >= true_e * (1 - 1e-9),
                "deviation": max(bounds.m_z_11_lower - true_m, true_e - bounds.e_z_11_upper),
            }
        )
        report.append(
            {
                "check": f"{label}:decoy_rate_bounded",
                "passed": decoy_rate <= breakdown.rate + 1e-12,
                "deviation": decoy_rate - breakdown.rate,
            }
        )
    return report
