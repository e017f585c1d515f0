"""
Grid Model - Networks, Devices and Demand Schedules

This module holds the typed description of a transmission network used by the
dynamic dispatch problem: nodes, lines and their power transfer distribution
factors (PTDF), the devices connected to each node, and the nodal demand
schedule over the horizon.

It also reads and writes the two input formats of the toolkit:
- Network JSON (nodes, lines or PTDF, tagged device list, horizon)
- Demand CSV (header node_0..node_{n-1}, one row per period, MW)

Author: Claire Namusoke
Date: October 2026
Units: MW, MWh, tCO2, $
"""

import json
import os
from dataclasses import dataclass, field, replace
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sps
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu


# Defaults used by ensure_feasible_and_unique
DEFAULT_VOLL = 10_000.0      # $/MWh, cost of the curtailment (slack) generator
DEFAULT_REG = 1e-6           # $/MW^2h, quadratic regularization
DEFAULT_MIN_OUTPUT_FRACTION = 0.4

TERMINAL_KINDS = ("free", "equal_to_initial", "fixed")


class GridModelError(ValueError):
    """Raised when network or demand data cannot be read or built."""


class NetworkDisconnectedError(GridModelError):
    """Raised by compute_ptdf when some nodes cannot reach the slack node."""

    def __init__(self, isolated: Sequence[int], slack: int):
        self.isolated = list(isolated)
        self.slack = slack
        super().__init__(
            f"network is disconnected: nodes {self.isolated} are not connected to slack node {slack}"
        )


def _frozen_vector(values, length: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """Copy values into a read-only float vector, broadcasting scalars to `length`."""
    arr = np.array(values, dtype=float)
    if arr.ndim == 0:
        if length is None:
            raise GridModelError(f"{name}: scalar given but no horizon to broadcast to")
        arr = np.full(length, float(arr))
    arr = arr.reshape(-1)
    arr.setflags(write=False)
    return arr


# =========================================================
# Domain types
# =========================================================

@dataclass(frozen=True)
class Line:
    """Transmission line between two nodes (susceptance in per-unit, rating in MW)."""
    from_node: int
    to_node: int
    susceptance: float
    rating: float


@dataclass(frozen=True)
class TerminalPolicy:
    """Condition on the final storage state of charge.

    kind is one of "free", "equal_to_initial" or "fixed" (then `value` in MWh).
    """
    kind: str = "free"
    value: Optional[float] = None


@dataclass(frozen=True, eq=False, kw_only=True)
class StaticGenerator:
    """Generator with per-period output bounds and cost a*g^2 + b*g per period."""
    name: str
    node: int
    g_min: np.ndarray
    g_max: np.ndarray
    cost_quad: float = 0.0
    cost_lin: float = 0.0
    emis_rate: float = 0.0
    is_slack: bool = False

    def __post_init__(self):
        object.__setattr__(self, "g_min", _frozen_vector(self.g_min, name=f"{self.name}.g_min"))
        object.__setattr__(self, "g_max", _frozen_vector(self.g_max, name=f"{self.name}.g_max"))


@dataclass(frozen=True, eq=False, kw_only=True)
class RampGenerator(StaticGenerator):
    """Static generator whose output may change by at most `ramp` MW between periods."""
    ramp: float


@dataclass(frozen=True, eq=False, kw_only=True)
class UCGenerator(StaticGenerator):
    """Generator that is either off (output 0) or on with output >= min_output_fraction * g_max.

    `commitment` is an optional fixed on/off vector of length T; when it is None
    the commitment is chosen by dispatch_solver.solve_uc.
    """
    min_output_fraction: float = DEFAULT_MIN_OUTPUT_FRACTION
    commitment: Optional[np.ndarray] = None

    def __post_init__(self):
        super().__post_init__()
        if self.commitment is not None:
            arr = np.array(self.commitment, dtype=bool).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, "commitment", arr)


@dataclass(frozen=True, eq=False, kw_only=True)
class Storage:
    """Storage device (battery, pumped hydro).

    Output g_t = discharge_t - charge_t is positive when injecting. The state of
    charge follows s_t = s_{t-1} + eta * charge_t - discharge_t / eta.
    `cost_quad` penalizes the output and the internal states quadratically.
    """
    name: str
    node: int
    capacity: float
    power: float
    efficiency: float = 1.0
    initial_soc: float = 0.0
    terminal_soc_policy: TerminalPolicy = field(default_factory=TerminalPolicy)
    cost_quad: float = 0.0

    # storage emits nothing; shares the attribute read by emissions and static_network
    emis_rate: ClassVar[float] = 0.0


Device = Union[StaticGenerator, RampGenerator, UCGenerator, Storage]


def device_kind(device: Device) -> str:
    """Tag used in the network JSON for each device variant."""
    if isinstance(device, Storage):
        return "storage"
    if isinstance(device, UCGenerator):
        return "uc"
    if isinstance(device, RampGenerator):
        return "ramp"
    return "static"


def is_dynamic(device: Device) -> bool:
    """True for devices whose constraints couple periods (storage, ramping)."""
    return isinstance(device, (Storage, RampGenerator))


@dataclass(frozen=True, eq=False)
class Network:
    """Physical system of the dispatch problem.

    ptdf is m x n: entry (l, i) is the flow on line l caused by 1 MW injected at
    node i and withdrawn at the slack node. Device locations are the `node`
    attribute of each device.
    """
    n_nodes: int
    lines: Tuple[Line, ...]
    ptdf: np.ndarray
    line_limits: np.ndarray
    devices: Tuple[Device, ...]
    horizon: int
    period_hours: float = 1.0
    slack: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "devices", tuple(self.devices))
        ptdf = np.array(self.ptdf, dtype=float)
        if ptdf.size == 0:
            ptdf = ptdf.reshape(0, self.n_nodes)
        ptdf.setflags(write=False)
        object.__setattr__(self, "ptdf", ptdf)
        object.__setattr__(self, "line_limits", _frozen_vector(self.line_limits, name="line_limits"))
        if self.slack is None:
            object.__setattr__(self, "slack", self.n_nodes - 1)

    @property
    def n_lines(self) -> int:
        return self.ptdf.shape[0]

    @property
    def device_nodes(self) -> np.ndarray:
        """Per-device node index (the device-to-node map B)."""
        return np.array([d.node for d in self.devices], dtype=int)

    @property
    def device_names(self) -> List[str]:
        return [d.name for d in self.devices]

    def incidence(self) -> sps.csr_matrix:
        """Node-by-device 0/1 matrix B."""
        k = len(self.devices)
        return sps.csr_matrix(
            (np.ones(k), (self.device_nodes, np.arange(k))), shape=(self.n_nodes, k)
        )


@dataclass(frozen=True, eq=False)
class DemandSchedule:
    """Nodal demand, T x n in MW (row t is d_t)."""
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def vec(self) -> np.ndarray:
        """Stacked demand vector D, index t * n + i."""
        return self.values.reshape(-1).copy()

    @classmethod
    def from_vec(cls, vec: np.ndarray, n_nodes: int) -> "DemandSchedule":
        return cls(np.asarray(vec, dtype=float).reshape(-1, n_nodes))


@dataclass
class ValidationReport:
    """List of invariant violations; empty when the network is well-formed."""
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str):
        self.violations.append(message)


@dataclass(frozen=True)
class AugmentOptions:
    voll: float = DEFAULT_VOLL
    reg: float = DEFAULT_REG


# =========================================================
# Validation
# =========================================================

def _check_generator(dev: StaticGenerator, T: int, report: ValidationReport):
    tag = f"device '{dev.name}'"
    if dev.g_min.shape != (T,) or dev.g_max.shape != (T,):
        report.add(f"{tag}: g_min/g_max must have length T={T}")
        return
    if np.any(np.isnan(dev.g_min)) or np.any(np.isnan(dev.g_max)):
        report.add(f"{tag}: g_min/g_max contain NaN")
    if np.any(dev.g_min > dev.g_max):
        report.add(f"{tag}: g_min exceeds g_max in some period")
    if not dev.cost_quad >= 0:
        report.add(f"{tag}: cost_quad must be >= 0 (got {dev.cost_quad})")
    if not np.isfinite(dev.cost_lin):
        report.add(f"{tag}: cost_lin must be finite")
    if not np.isfinite(dev.emis_rate):
        report.add(f"{tag}: emis_rate must be finite")
    if isinstance(dev, RampGenerator) and not dev.ramp > 0:
        report.add(f"{tag}: ramp must be > 0 (got {dev.ramp})")
    if isinstance(dev, UCGenerator):
        if not 0 < dev.min_output_fraction <= 1:
            report.add(f"{tag}: min_output_fraction must be in (0, 1] (got {dev.min_output_fraction})")
        if dev.commitment is not None and dev.commitment.shape != (T,):
            report.add(f"{tag}: commitment must have length T={T}")


def _check_storage(dev: Storage, report: ValidationReport):
    tag = f"device '{dev.name}'"
    if not 0 < dev.efficiency <= 1:
        report.add(f"{tag}: efficiency must be in (0, 1] (got {dev.efficiency})")
    if not dev.capacity > 0:
        report.add(f"{tag}: capacity must be > 0 (got {dev.capacity})")
    if not dev.power > 0:
        report.add(f"{tag}: power must be > 0 (got {dev.power})")
    if not 0 <= dev.initial_soc <= dev.capacity:
        report.add(f"{tag}: initial_soc must be in [0, capacity] (got {dev.initial_soc})")
    if not dev.cost_quad >= 0:
        report.add(f"{tag}: cost_quad must be >= 0 (got {dev.cost_quad})")
    policy = dev.terminal_soc_policy
    if policy.kind not in TERMINAL_KINDS:
        report.add(f"{tag}: unknown terminal_soc_policy '{policy.kind}'")
    elif policy.kind == "fixed" and (policy.value is None or not 0 <= policy.value <= dev.capacity):
        report.add(f"{tag}: fixed terminal state of charge must be in [0, capacity]")


def validate_network(net: Network) -> ValidationReport:
    """
    Check a network against the type invariants.

    Violations are returned as data; this function never raises for bad
    networks and has no side effects.

    Args:
        net (Network): Network to check

    Returns:
        ValidationReport: empty iff the network is well-formed
    """
    report = ValidationReport()
    n, T = net.n_nodes, net.horizon

    if n < 1:
        report.add("n_nodes must be >= 1")
    if T < 1:
        report.add(f"horizon T must be >= 1 (got {T})")
    if not net.period_hours > 0:
        report.add(f"period_hours must be > 0 (got {net.period_hours})")
    if not 0 <= net.slack < max(n, 1):
        report.add(f"slack node {net.slack} is outside [0, {n})")

    m = net.line_limits.shape[0]
    if net.ptdf.shape != (m, n):
        report.add(f"ptdf has shape {net.ptdf.shape}, expected ({m}, {n})")
    elif m > 0 and 0 <= net.slack < n and np.any(net.ptdf[:, net.slack] != 0):
        report.add(f"ptdf column of slack node {net.slack} must be all zeros")
    if np.any(~np.isfinite(net.line_limits)) or np.any(net.line_limits <= 0):
        report.add("line limits u_max must be strictly positive and finite")

    for idx, line in enumerate(net.lines):
        if line.from_node == line.to_node:
            report.add(f"line {idx}: from_node equals to_node ({line.from_node})")
        for end in (line.from_node, line.to_node):
            if not 0 <= end < n:
                report.add(f"line {idx}: node index {end} outside node bounds [0, {n})")
        if not line.susceptance > 0:
            report.add(f"line {idx}: susceptance must be > 0")
        if not line.rating > 0:
            report.add(f"line {idx}: rating must be > 0")

    seen = set()
    for dev in net.devices:
        if dev.name in seen:
            report.add(f"device name '{dev.name}' is used more than once")
        seen.add(dev.name)
        if not 0 <= dev.node < n:
            report.add(f"device '{dev.name}': node index {dev.node} outside node bounds [0, {n})")
        if isinstance(dev, Storage):
            _check_storage(dev, report)
        else:
            _check_generator(dev, T, report)

    return report


def validate_demand(net: Network, demand: DemandSchedule) -> ValidationReport:
    """Check that a demand schedule is finite and matches the network dimensions."""
    report = ValidationReport()
    if demand.values.shape != (net.horizon, net.n_nodes):
        report.add(
            f"demand has shape {demand.values.shape}, expected ({net.horizon}, {net.n_nodes})"
        )
    if not np.all(np.isfinite(demand.values)):
        report.add("demand contains non-finite entries")
    return report


# =========================================================
# PTDF
# =========================================================

def compute_ptdf(lines: Sequence[Line], n_nodes: int, slack: Optional[int] = None) -> np.ndarray:
    """
    Compute the power transfer distribution factors of a network.

    Entry (l, i) is the flow on line l (positive from from_node to to_node)
    when 1 MW is injected at node i and withdrawn at the slack node. Uses the
    susceptance-weighted Laplacian with the slack row and column removed.

    Args:
        lines (list): Lines of the network
        n_nodes (int): Number of nodes
        slack (int): Slack node index (default: last node)

    Returns:
        ndarray: m x n PTDF matrix, slack column exactly zero

    Raises:
        NetworkDisconnectedError: if some nodes cannot reach the slack node
    """
    slack = n_nodes - 1 if slack is None else slack
    m = len(lines)
    if m == 0:
        if n_nodes > 1:
            raise NetworkDisconnectedError([i for i in range(n_nodes) if i != slack], slack)
        return np.zeros((0, n_nodes))

    rows = np.repeat(np.arange(m), 2)
    cols = np.array([[l.from_node, l.to_node] for l in lines]).reshape(-1)
    signs = np.tile([1.0, -1.0], m)
    K = sps.csr_matrix((signs, (rows, cols)), shape=(m, n_nodes))

    adjacency = (abs(K).T @ abs(K)).tocsr()
    _, labels = connected_components(adjacency, directed=False)
    isolated = np.flatnonzero(labels != labels[slack])
    if isolated.size:
        raise NetworkDisconnectedError(isolated.tolist(), slack)

    b = sps.diags(np.array([l.susceptance for l in lines], dtype=float))
    laplacian = (K.T @ b @ K).tocsc()
    keep = np.array([i for i in range(n_nodes) if i != slack], dtype=int)

    ptdf = np.zeros((m, n_nodes))
    if keep.size:
        reduced = laplacian[keep][:, keep].tocsc()
        theta = splu(reduced).solve(np.eye(keep.size))
        ptdf[:, keep] = (b @ K[:, keep]) @ theta
    return ptdf


# =========================================================
# Feasibility and uniqueness augmentation
# =========================================================

def ensure_feasible_and_unique(net: Network, opts: Optional[AugmentOptions] = None) -> Network:
    """
    Return a copy of the network that always has a unique optimal dispatch.

    Adds a curtailment (slack) generator with unlimited capacity, linear cost
    `voll` and zero emissions at every node that does not have one yet, and
    raises every quadratic cost coefficient to at least `reg`. Applying it
    twice gives the same network as applying it once.
    """
    opts = opts or AugmentOptions()
    devices = [replace(d, cost_quad=max(d.cost_quad, opts.reg)) for d in net.devices]

    covered = {d.node for d in devices if isinstance(d, StaticGenerator) and d.is_slack}
    for node in range(net.n_nodes):
        if node in covered:
            continue
        devices.append(StaticGenerator(
            name=f"slack_{node}",
            node=node,
            g_min=np.zeros(net.horizon),
            g_max=np.full(net.horizon, np.inf),
            cost_quad=opts.reg,
            cost_lin=opts.voll,
            emis_rate=0.0,
            is_slack=True,
        ))
    return replace(net, devices=tuple(devices))


def truncate_horizon(net: Network, demand: DemandSchedule, horizon: int) -> Tuple[Network, DemandSchedule]:
    """Keep only the first `horizon` periods of a network and its demand."""
    if not 1 <= horizon <= net.horizon:
        raise GridModelError(f"horizon must be in [1, {net.horizon}] (got {horizon})")
    devices = []
    for dev in net.devices:
        if isinstance(dev, Storage):
            devices.append(dev)
            continue
        changes = {"g_min": dev.g_min[:horizon], "g_max": dev.g_max[:horizon]}
        if isinstance(dev, UCGenerator) and dev.commitment is not None:
            changes["commitment"] = dev.commitment[:horizon]
        devices.append(replace(dev, **changes))
    return (
        replace(net, devices=tuple(devices), horizon=horizon),
        DemandSchedule(demand.values[:horizon]),
    )


# =========================================================
# Network JSON
# =========================================================

def _parse_bound(value, T: int, name: str, unbounded: float = np.inf) -> np.ndarray:
    # null stands for an unbounded side
    if value is None:
        return np.full(T, unbounded)
    if isinstance(value, list):
        return np.array([unbounded if v is None else float(v) for v in value])
    return _frozen_vector(value, T, name)


def _parse_device(raw: Dict, T: int, where: str) -> Device:
    kind = raw.get("type", "static")
    try:
        common = {"name": str(raw["name"]), "node": int(raw["node"])}
        if kind == "storage":
            term = raw.get("terminal_soc", {"kind": "free"})
            if isinstance(term, str):
                term = {"kind": term}
            elif isinstance(term, (int, float)):
                term = {"kind": "fixed", "value": float(term)}
            return Storage(
                **common,
                capacity=float(raw["capacity"]),
                power=float(raw["power"]),
                efficiency=float(raw.get("efficiency", 1.0)),
                initial_soc=float(raw.get("initial_soc", 0.0)),
                terminal_soc_policy=TerminalPolicy(term.get("kind", "free"), term.get("value")),
                cost_quad=float(raw.get("cost_quad", 0.0)),
            )
        gen = dict(
            common,
            g_min=_parse_bound(raw.get("g_min", 0.0), T, f"{where}.g_min", -np.inf),
            g_max=_parse_bound(raw["g_max"], T, f"{where}.g_max"),
            cost_quad=float(raw.get("cost_quad", 0.0)),
            cost_lin=float(raw.get("cost_lin", 0.0)),
            emis_rate=float(raw.get("emis_rate", 0.0)),
        )
        if kind == "static":
            return StaticGenerator(**gen, is_slack=bool(raw.get("is_slack", False)))
        if kind == "ramp":
            return RampGenerator(**gen, ramp=float(raw["ramp"]))
        if kind == "uc":
            commitment = raw.get("commitment")
            return UCGenerator(
                **gen,
                min_output_fraction=float(raw.get("min_output_fraction", DEFAULT_MIN_OUTPUT_FRACTION)),
                commitment=None if commitment is None else [bool(c) for c in commitment],
            )
    except KeyError as e:
        raise GridModelError(f"{where}: missing key {e}") from e
    except (TypeError, ValueError) as e:
        raise GridModelError(f"{where}: {e}") from e
    raise GridModelError(f"{where}: unknown device type '{kind}'")


def network_from_dict(data: Dict, source: str = "<network>") -> Network:
    """Build a Network from the parsed JSON document."""
    try:
        n = int(data["n_nodes"])
        T = int(data["horizon"])
    except KeyError as e:
        raise GridModelError(f"{source}: missing key {e}") from e

    slack = int(data.get("slack", n - 1))
    lines = []
    for idx, raw in enumerate(data.get("lines", [])):
        try:
            lines.append(Line(int(raw["from"]), int(raw["to"]),
                              float(raw.get("susceptance", 1.0)), float(raw["rating"])))
        except KeyError as e:
            raise GridModelError(f"{source}: lines[{idx}]: missing key {e}") from e

    if data.get("ptdf") is not None:
        ptdf = np.array(data["ptdf"], dtype=float).reshape(-1, n)
        limits = data.get("line_limits", [l.rating for l in lines])
    else:
        try:
            ptdf = compute_ptdf(lines, n, slack)
        except NetworkDisconnectedError as e:
            raise GridModelError(f"{source}: {e}") from e
        limits = [l.rating for l in lines]

    devices = [
        _parse_device(raw, T, f"{source}: devices[{idx}]")
        for idx, raw in enumerate(data.get("devices", []))
    ]
    return Network(
        n_nodes=n,
        lines=tuple(lines),
        ptdf=ptdf,
        line_limits=np.array(limits, dtype=float),
        devices=tuple(devices),
        horizon=T,
        period_hours=float(data.get("period_hours", 1.0)),
        slack=slack,
    )


def load_network(path: str) -> Network:
    """
    Load a network from its JSON description.

    Args:
        path (str): Path to the network JSON file

    Returns:
        Network: Parsed network (not validated; see validate_network)

    Raises:
        GridModelError: if the file is missing, not JSON, or lacks required keys
    """
    if not os.path.exists(path):
        raise GridModelError(f"network file not found: '{path}'")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise GridModelError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    return network_from_dict(data, source=path)


def _bound_to_json(values: np.ndarray) -> List:
    return [None if np.isinf(v) else float(v) for v in values]


def network_to_dict(net: Network) -> Dict:
    """Inverse of network_from_dict (PTDF is always written explicitly)."""
    devices = []
    for dev in net.devices:
        raw = {"type": device_kind(dev), "name": dev.name, "node": dev.node, "cost_quad": dev.cost_quad}
        if isinstance(dev, Storage):
            raw.update(capacity=dev.capacity, power=dev.power, efficiency=dev.efficiency,
                       initial_soc=dev.initial_soc,
                       terminal_soc={"kind": dev.terminal_soc_policy.kind,
                                     "value": dev.terminal_soc_policy.value})
        else:
            raw.update(g_min=_bound_to_json(dev.g_min), g_max=_bound_to_json(dev.g_max),
                       cost_lin=dev.cost_lin, emis_rate=dev.emis_rate)
            if dev.is_slack:
                raw["is_slack"] = True
            if isinstance(dev, RampGenerator):
                raw["ramp"] = dev.ramp
            if isinstance(dev, UCGenerator):
                raw["min_output_fraction"] = dev.min_output_fraction
                if dev.commitment is not None:
                    raw["commitment"] = [int(c) for c in dev.commitment]
        devices.append(raw)
    return {
        "n_nodes": net.n_nodes,
        "slack": net.slack,
        "horizon": net.horizon,
        "period_hours": net.period_hours,
        "lines": [{"from": l.from_node, "to": l.to_node, "susceptance": l.susceptance,
                   "rating": l.rating} for l in net.lines],
        "ptdf": net.ptdf.tolist(),
        "line_limits": net.line_limits.tolist(),
        "devices": devices,
    }


def save_network(net: Network, path: str) -> bool:
    """Save a network to JSON. Returns True if successful."""
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(network_to_dict(net), f, indent=2)
        return True
    except OSError as e:
        print(f"✗ Error saving network: {e}")
        return False


# =========================================================
# Demand CSV
# =========================================================

def load_demand(path: str, n_nodes: Optional[int] = None) -> DemandSchedule:
    """
    Load a demand schedule from CSV (header node_0..node_{n-1}, MW).

    Args:
        path (str): Path to the demand CSV file
        n_nodes (int): Expected number of nodes (optional)

    Returns:
        DemandSchedule: T x n demand

    Raises:
        GridModelError: with file and line context on malformed input
    """
    if not os.path.exists(path):
        raise GridModelError(f"demand file not found: '{path}'")
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise GridModelError(f"{path}: cannot parse demand CSV ({e})") from e
    n = n_nodes if n_nodes is not None else df.shape[1]
    expected = [f"node_{i}" for i in range(n)]
    if list(df.columns) != expected:
        raise GridModelError(f"{path}:1: header must be {','.join(expected)} (got {','.join(map(str, df.columns))})")

    values = df.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, col = bad[0]
        raise GridModelError(
            f"{path}:{row + 2}: non-numeric or non-finite value in column {expected[col]}"
        )
    return DemandSchedule(values)


def demand_frame(demand: DemandSchedule) -> pd.DataFrame:
    return pd.DataFrame(demand.values, columns=[f"node_{i}" for i in range(demand.n_nodes)])


def save_demand(demand: DemandSchedule, path: str) -> bool:
    """Save a demand schedule to CSV. Returns True if successful."""
    try:
        demand_frame(demand).to_csv(path, index=False, float_format="%.17g")
        return True
    except OSError as e:
        print(f"✗ Error saving demand: {e}")
        return False
