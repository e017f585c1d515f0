"""
Analysis - Marginal Emissions Metrics, Scenario Runs and Reports

Comparison metrics between marginal emissions estimates, the end-to-end
scenario pipeline (load, validate, dispatch, differentiate, compare) and the
CSV/JSON report files consumed by the dashboard and external plotting tools.

Report files written by write_report():
    lme.csv          dynamic rates, one row per period, columns node_0..node_{n-1} (tCO2/MWh)
    lme_static.csv   static-approximation rates, same layout (when enabled)
    lmp.csv          nodal prices, same layout ($/MWh)
    dispatch.csv     device outputs, one column per device (MW)
    report.json      everything above plus emissions, metrics and solver statistics

Author: Claire Namusoke
Date: October 2026
"""

import json
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from canonical_qp import dump_triplets
from dispatch_solver import SolverOptions, dispatch, duality_gap, nodal_prices, require_optimal
from grid_model import (
    DEFAULT_REG,
    DEFAULT_VOLL,
    DemandSchedule,
    GridModelError,
    Network,
    StaticGenerator,
    load_demand,
    load_network,
    truncate_horizon,
    validate_demand,
    validate_network,
)
from implicit_diff import (
    DEFAULT_FD_EPS,
    LmeOptions,
    compute_lmes,
    finite_difference_lmes,
    static_approximation,
)

DEFAULT_DAY_LEN = 24
HISTORICAL_EPS = 0.5     # MWh, guard of the historical difference ratio
JITTER_MW = 1e-6
FLOAT_FORMAT = "%.17g"
REPORT_TABLES = ("lme", "lme_static", "lmp", "dispatch", "report")


class MetricError(ValueError):
    """Raised when a comparison metric is undefined for its inputs."""


class ScenarioError(RuntimeError):
    """
    Raised when a scenario cannot run.

    `kind` is "data" for invalid inputs and "solver" for numerical failures.
    """

    def __init__(self, message: str, kind: str = "data"):
        super().__init__(message)
        self.kind = kind


# =========================================================
# Metrics
# =========================================================

def rms_deviation(lme_static: np.ndarray, lme_dynamic: np.ndarray, day_len: int = DEFAULT_DAY_LEN,
                  normalize: bool = True) -> Tuple[np.ndarray, float]:
    """
    Root-mean-square gap between static and dynamic rates per node and day.

    Args:
        lme_static (ndarray): T x n static-approximation rates
        lme_dynamic (ndarray): T x n dynamic rates
        day_len (int): Periods per window; must divide T
        normalize (bool): Divide by the median of |lme_dynamic| over all entries

    Returns:
        Tuple: (days x n matrix of window RMS values, their mean)

    Raises:
        MetricError: on shape mismatch, a day length not dividing T, or a zero median
    """
    s = np.asarray(lme_static, dtype=float)
    d = np.asarray(lme_dynamic, dtype=float)
    if s.ndim == 1:
        s, d = s[:, None], d.reshape(-1, 1)
    if s.shape != d.shape:
        raise MetricError(f"shape mismatch: static {s.shape} vs dynamic {d.shape}")
    T, n = s.shape
    if day_len < 1 or T % day_len:
        raise MetricError(f"day length {day_len} does not divide the horizon {T}")

    diff = (s - d).reshape(T // day_len, day_len, n)
    per_window = np.sqrt(np.mean(diff ** 2, axis=1))
    if normalize:
        median = float(np.quantile(np.abs(d), 0.5, method="lower"))
        if median == 0.0:
            raise MetricError(
                "median |dynamic LME| is zero, the normalized deviation is undefined; "
                "report the absolute deviation instead (normalize=False)"
            )
        per_window = per_window / median
    return per_window, float(per_window.mean())


def historical_lme_series(dE, dd, eps: float = HISTORICAL_EPS) -> np.ndarray:
    """Ratio of emissions changes to demand changes, dE / (dd + eps)."""
    dE, dd = np.asarray(dE, dtype=float), np.asarray(dd, dtype=float)
    if dE.shape != dd.shape:
        raise MetricError(f"length mismatch: {dE.shape} vs {dd.shape}")
    if not eps > 0:
        raise MetricError(f"eps must be positive, got {eps}")
    return dE / (dd + eps)


def normalized_abs_error(est, truth) -> np.ndarray:
    """|est - truth| scaled by the mean absolute value of truth."""
    est, truth = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise MetricError(f"length mismatch: {est.shape} vs {truth.shape}")
    scale = float(np.mean(np.abs(truth))) if truth.size else 0.0
    if scale == 0.0:
        raise MetricError("truth is all zero, normalized error is undefined")
    return np.abs(est - truth) / scale


def merit_order_lmes(net: Network, demand: DemandSchedule) -> np.ndarray:
    """
    Marginal emissions from the merit order, ignoring the transmission network.

    In each period generators are loaded to their minimum output and the rest
    of the demand is filled in ascending order of linear cost; the rate of the
    generator that serves the next unit of demand is reported at every node.

    Args:
        net (Network): Network of static generators only
        demand (DemandSchedule): Demand over the horizon

    Returns:
        ndarray: T x n matrix in tCO2/MWh
    """
    gens = list(net.devices)
    if any(type(dev) is not StaticGenerator for dev in gens):
        raise MetricError("merit order needs a network of static generators only")
    order = sorted(range(len(gens)), key=lambda j: gens[j].cost_lin)
    out = np.zeros((net.horizon, net.n_nodes))
    for t in range(net.horizon):
        residual = float(demand.values[t].sum()) - sum(float(g.g_min[t]) for g in gens)
        marginal = None
        for j in order:
            room = float(gens[j].g_max[t] - gens[j].g_min[t])
            if room <= 0:
                continue
            if residual < room:
                marginal = j
                break
            residual -= room
        if marginal is None:
            raise MetricError(f"demand in period {t} exceeds total capacity")
        out[t, :] = gens[marginal].emis_rate
    return out


def smooth_series(values, window_fraction: float = 0.2) -> pd.DataFrame:
    """
    Centered rolling mean with an interquartile band.

    Args:
        values: 1-D series
        window_fraction (float): Window length as a fraction of the series length

    Returns:
        DataFrame: columns mean, q25, q75
    """
    if not 0 < window_fraction <= 1:
        raise MetricError(f"window fraction must be in (0, 1], got {window_fraction}")
    series = pd.Series(np.asarray(values, dtype=float))
    window = max(1, int(round(window_fraction * len(series))))
    roll = series.rolling(window=window, center=True, min_periods=1)
    return pd.DataFrame({"mean": roll.mean(), "q25": roll.quantile(0.25), "q75": roll.quantile(0.75)})


def line_flows(net: Network, demand: DemandSchedule, G: np.ndarray) -> np.ndarray:
    """Line flows F (B g_t - d_t) per period, T x m in MW."""
    injections = np.zeros((net.horizon, net.n_nodes))
    np.add.at(injections.T, net.device_nodes, np.asarray(G).T)
    return (injections - demand.values) @ net.ptdf.T


# =========================================================
# Scenario
# =========================================================

@dataclass
class ScenarioConfig:
    network: str
    demand: str
    out_dir: Optional[str] = None
    horizon: Optional[int] = None
    tol: float = 1e-8
    reg: float = DEFAULT_REG
    voll: float = DEFAULT_VOLL
    seed: int = 0
    uc_mode: str = "heuristic_rounding"
    jitter: bool = False
    static: bool = True
    fd_check: bool = False
    fd_eps: float = DEFAULT_FD_EPS
    day_len: int = DEFAULT_DAY_LEN
    smoothing: Optional[float] = None
    lme_form: str = "reduced"
    degenerate_policy: str = "one_sided"
    dump_qp: Optional[str] = None
    workers: int = 1
    verbose: bool = False

    def solver_options(self) -> SolverOptions:
        return SolverOptions(tol=self.tol, reg=self.reg, voll=self.voll, uc_mode=self.uc_mode,
                             workers=self.workers, verbose=self.verbose)

    def lme_options(self) -> LmeOptions:
        return LmeOptions(reg=self.reg, form=self.lme_form, degenerate_policy=self.degenerate_policy,
                          solver=self.solver_options())


@dataclass(eq=False)
class ScenarioReport:
    device_names: List[str]
    n_nodes: int
    horizon: int
    period_hours: float
    dispatch: np.ndarray
    lmp: np.ndarray
    flows: np.ndarray
    emissions_total: float
    emissions_per_period: np.ndarray
    lme_dynamic: np.ndarray
    lme_static: Optional[np.ndarray] = None
    lme_smoothed: Optional[np.ndarray] = None
    metrics: Dict = field(default_factory=dict)
    solver_stats: Dict = field(default_factory=dict)
    degenerate: Dict = field(default_factory=dict)
    commitment: Dict[str, List[bool]] = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> Dict:
        def mat(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "device_names": list(self.device_names),
            "n_nodes": self.n_nodes,
            "horizon": self.horizon,
            "period_hours": self.period_hours,
            "seed": self.seed,
            "dispatch": mat(self.dispatch),
            "lmp": mat(self.lmp),
            "flows": mat(self.flows),
            "emissions": {"total": self.emissions_total, "per_period": mat(self.emissions_per_period)},
            "lme_dynamic": mat(self.lme_dynamic),
            "lme_static": mat(self.lme_static),
            "lme_smoothed": mat(self.lme_smoothed),
            "metrics": self.metrics,
            "solver_stats": self.solver_stats,
            "degenerate": self.degenerate,
            "commitment": self.commitment,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ScenarioReport":
        def mat(key):
            value = data.get(key)
            return None if value is None else np.array(value, dtype=float)

        n = int(data["n_nodes"])
        return cls(
            device_names=list(data["device_names"]),
            n_nodes=n,
            horizon=int(data["horizon"]),
            period_hours=float(data["period_hours"]),
            dispatch=mat("dispatch"),
            lmp=mat("lmp"),
            flows=mat("flows"),
            emissions_total=float(data["emissions"]["total"]),
            emissions_per_period=np.array(data["emissions"]["per_period"], dtype=float),
            lme_dynamic=mat("lme_dynamic"),
            lme_static=mat("lme_static"),
            lme_smoothed=mat("lme_smoothed"),
            metrics=data.get("metrics", {}),
            solver_stats=data.get("solver_stats", {}),
            degenerate=data.get("degenerate", {}),
            commitment=data.get("commitment", {}),
            seed=int(data.get("seed", 0)),
        )


def _load_inputs(config: ScenarioConfig) -> Tuple[Network, DemandSchedule]:
    try:
        net = load_network(config.network)
        demand = load_demand(config.demand, n_nodes=net.n_nodes)
    except (GridModelError, OSError) as e:
        raise ScenarioError(str(e), kind="data") from e

    report = validate_network(net)
    if report.ok:
        report = validate_demand(net, demand)
    if not report.ok:
        details = "\n  ".join(report.violations)
        raise ScenarioError(f"{config.network}: invalid input\n  {details}", kind="data")

    if config.horizon is not None:
        try:
            net, demand = truncate_horizon(net, demand, config.horizon)
        except GridModelError as e:
            raise ScenarioError(str(e), kind="data") from e

    if config.jitter:
        rng = np.random.default_rng(config.seed)
        noise = rng.uniform(-JITTER_MW, JITTER_MW, size=demand.values.shape)
        jittered = demand.values + noise
        # noise never pushes a withdrawal below zero or flips the sign of an injection
        jittered = np.where(demand.values >= 0.0, np.maximum(jittered, 0.0), jittered)
        demand = DemandSchedule(jittered)
    return net, demand


def run_scenario(config: ScenarioConfig) -> ScenarioReport:
    """
    Run the full pipeline for one network and demand file.

    validate -> augment -> commit -> solve -> marginal emissions
    -> static approximation -> metrics

    Args:
        config (ScenarioConfig): Input paths and options

    Returns:
        ScenarioReport: dispatch, prices, rates and diagnostics

    Raises:
        ScenarioError: with kind "data" or "solver"
    """
    net, demand = _load_inputs(config)
    solver_opts = config.solver_options()
    lme_opts = config.lme_options()

    started = time.perf_counter()
    try:
        result = dispatch(net, demand, solver_opts)
        require_optimal(result.solution, f"dispatch of {config.network}")
    except (GridModelError, ValueError) as e:
        raise ScenarioError(str(e), kind="data") from e
    except RuntimeError as e:
        raise ScenarioError(str(e), kind="solver") from e
    dispatch_time = time.perf_counter() - started

    if config.dump_qp:
        dump_triplets(result.pqp, config.dump_qp)

    sol, pqp = result.solution, result.pqp
    try:
        started = time.perf_counter()
        dynamic = compute_lmes(pqp, demand, sol, lme_opts)
        lme_time = time.perf_counter() - started
        static = static_approximation(result.network, demand, sol, lme_opts, pqp) if config.static else None
    except RuntimeError as e:
        raise ScenarioError(str(e), kind="solver") from e

    G = pqp.layout.scatter_outputs(sol.x)
    metrics: Dict = {}
    if static is not None:
        # horizons shorter than a day form a single window
        day_len = min(config.day_len, net.horizon)
        try:
            per_window, mean = rms_deviation(static.lme, dynamic.lme, day_len)
            metrics["rms_deviation_normalized"] = mean
        except MetricError as e:
            if "median" not in str(e):
                raise ScenarioError(str(e), kind="data") from e
            if config.verbose:
                print(f"⚠️  {e}")
            per_window, mean = rms_deviation(static.lme, dynamic.lme, day_len, normalize=False)
            metrics["rms_deviation_normalized"] = None
            metrics["rms_deviation_absolute"] = mean
        metrics["rms_per_node_per_day"] = per_window.tolist()

    if config.fd_check:
        try:
            fd = finite_difference_lmes(net, demand, config.fd_eps, solver_opts, workers=config.workers)
        except RuntimeError as e:
            raise ScenarioError(str(e), kind="solver") from e
        metrics["fd_max_gap"] = float(np.max(np.abs(fd - dynamic.lme) / (1.0 + np.abs(fd))))

    smoothed = None
    if config.smoothing is not None:
        smoothed = np.column_stack([
            smooth_series(dynamic.lme[:, i], config.smoothing)["mean"].to_numpy()
            for i in range(net.n_nodes)
        ])

    return ScenarioReport(
        device_names=list(result.network.device_names),
        n_nodes=net.n_nodes,
        horizon=net.horizon,
        period_hours=net.period_hours,
        dispatch=G,
        lmp=nodal_prices(pqp, sol),
        flows=line_flows(result.network, demand, G),
        emissions_total=dynamic.emissions_total,
        emissions_per_period=dynamic.emissions_per_period,
        lme_dynamic=dynamic.lme,
        lme_static=None if static is None else static.lme,
        lme_smoothed=smoothed,
        metrics=metrics,
        solver_stats={
            "iterations": sol.iterations,
            "polished": sol.polished,
            "residuals": sol.residuals.as_dict(),
            "duality_gap": duality_gap(result.instance, sol),
            "wall_time": dispatch_time,
            "lme_time": lme_time,
            "condition_estimate": dynamic.condition_estimate,
            "lme_method": dynamic.method,
            "simultaneous_storage": list(result.simultaneous_storage),
        },
        degenerate={
            "dynamic": dynamic.degenerate,
            "static": None if static is None else static.degenerate,
        },
        commitment={name: np.asarray(on).tolist() for name, on in result.commitment.items()},
        seed=config.seed,
    )


# =========================================================
# Report files
# =========================================================

def _node_frame(values: np.ndarray, n_nodes: int) -> pd.DataFrame:
    df = pd.DataFrame(np.asarray(values).reshape(-1, n_nodes), columns=[f"node_{i}" for i in range(n_nodes)])
    df.index.name = "period"
    return df


def write_report(report: ScenarioReport, out_dir: str, tables=REPORT_TABLES) -> bool:
    """
    Save CSV tables and report.json into out_dir.

    Args:
        tables: subset of REPORT_TABLES to write

    Returns:
        bool: True if every file was written
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
        if "lme" in tables:
            _node_frame(report.lme_dynamic, report.n_nodes).to_csv(
                os.path.join(out_dir, "lme.csv"), float_format=FLOAT_FORMAT)
        if "lme_static" in tables and report.lme_static is not None:
            _node_frame(report.lme_static, report.n_nodes).to_csv(
                os.path.join(out_dir, "lme_static.csv"), float_format=FLOAT_FORMAT)
        if "lmp" in tables:
            _node_frame(report.lmp, report.n_nodes).to_csv(
                os.path.join(out_dir, "lmp.csv"), float_format=FLOAT_FORMAT)
        if "dispatch" in tables:
            dispatch_df = pd.DataFrame(report.dispatch, columns=report.device_names)
            dispatch_df.index.name = "period"
            dispatch_df.to_csv(os.path.join(out_dir, "dispatch.csv"), float_format=FLOAT_FORMAT)
        if "report" in tables:
            with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
                json.dump(report.to_dict(), f, indent=2)
        return True
    except OSError as e:
        print(f"✗ Error writing report to {out_dir}: {e}")
        return False


def read_report(out_dir: str) -> ScenarioReport:
    """Load a report written by write_report()."""
    path = os.path.join(out_dir, "report.json")
    with open(path, "r", encoding="utf-8") as f:
        return ScenarioReport.from_dict(json.load(f))


def read_lme_csv(path: str) -> pd.DataFrame:
    """Load an lme.csv / lme_static.csv / lmp.csv table indexed by period."""
    return pd.read_csv(path, index_col="period")
