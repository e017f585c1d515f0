"""
Canonical QP - Lowering a Network to a Parametric Quadratic Program

This module turns a network and its horizon into one standard-form convex QP

    minimize    1/2 x'Hx + q'x
    subject to  A_eq x  = b_eq0 + B_D vec(D)
                A_in x <= h_in0 + H_D vec(D)

whose right-hand sides are affine in the stacked demand vector D (index
t * n + i). A VariableLayout keeps the map from QP variables back to devices
and periods.

Row order is fixed so multiplier indices are stable across runs:
equalities  = balance rows (one per period), then device blocks in device order
inequalities = flow rows (per period, per line: F(Bg - d) <= u then F(d - Bg) <= u),
               then device blocks in device order

Author: Claire Namusoke
Date: October 2026
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sps

from grid_model import (
    DemandSchedule,
    Network,
    RampGenerator,
    Storage,
    UCGenerator,
)


class QPAssemblyError(ValueError):
    """Raised when a network cannot be lowered to a QP or dimensions mismatch."""


class UnresolvedCommitmentError(QPAssemblyError):
    """Raised when a UC generator reaches assembly without a fixed commitment."""


# =========================================================
# Layout
# =========================================================

@dataclass(frozen=True)
class DeviceSlices:
    """Primal slices of one device; storage devices also own soc/charge/discharge."""
    output: slice
    soc: Optional[slice] = None
    charge: Optional[slice] = None
    discharge: Optional[slice] = None

    def all(self) -> List[slice]:
        return [s for s in (self.output, self.soc, self.charge, self.discharge) if s is not None]


@dataclass(frozen=True)
class VariableLayout:
    devices: Tuple[DeviceSlices, ...]
    names: Tuple[str, ...]
    horizon: int
    n_x: int

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    def output_index(self, device: int, t: int) -> int:
        """Primal index of the output of `device` in period `t`."""
        return self.devices[device].output.start + t

    def output_indices(self) -> np.ndarray:
        """T x k array of primal indices of every device output."""
        idx = np.empty((self.horizon, self.n_devices), dtype=int)
        for j, sl in enumerate(self.devices):
            idx[:, j] = np.arange(sl.output.start, sl.output.stop)
        return idx

    def scatter_outputs(self, x: np.ndarray) -> np.ndarray:
        """Device schedule G (T x k) read from a primal vector."""
        return np.asarray(x)[self.output_indices()]

    def gather_outputs(self, G: np.ndarray) -> np.ndarray:
        """Primal vector holding G on the output coordinates and zeros elsewhere."""
        x = np.zeros(self.n_x)
        x[self.output_indices()] = G
        return x


def build_layout(net: Network) -> VariableLayout:
    T = net.horizon
    offset = 0
    slices = []

    def take():
        nonlocal offset
        sl = slice(offset, offset + T)
        offset += T
        return sl

    for dev in net.devices:
        if isinstance(dev, Storage):
            slices.append(DeviceSlices(output=take(), soc=take(), charge=take(), discharge=take()))
        else:
            slices.append(DeviceSlices(output=take()))
    return VariableLayout(tuple(slices), tuple(net.device_names), T, offset)


# =========================================================
# Parametric QP
# =========================================================

@dataclass(frozen=True, eq=False)
class ParametricQP:
    H: sps.csc_matrix
    q: np.ndarray
    A_eq: sps.csr_matrix
    b_eq0: np.ndarray
    B_D: sps.csr_matrix
    A_in: sps.csr_matrix
    h_in0: np.ndarray
    H_D: sps.csr_matrix
    layout: VariableLayout
    emis_vec: np.ndarray
    n_nodes: int
    horizon: int
    period_hours: float
    eq_labels: Tuple[str, ...]
    in_labels: Tuple[str, ...]

    @property
    def n_x(self) -> int:
        return self.layout.n_x

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_in(self) -> int:
        return self.A_in.shape[0]

    @property
    def n_demand(self) -> int:
        return self.horizon * self.n_nodes


@dataclass(frozen=True, eq=False)
class QPInstance:
    """
    A QP with fixed right-hand sides. Instances made by instantiate() share
    their matrices with the ParametricQP they came from.
    """
    H: sps.spmatrix
    q: np.ndarray
    A_eq: sps.spmatrix
    b_eq: np.ndarray
    A_in: sps.spmatrix
    h_in: np.ndarray
    demand: Optional[np.ndarray] = None
    pqp: Optional[ParametricQP] = None

    @property
    def n_x(self) -> int:
        return self.H.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_in(self) -> int:
        return self.A_in.shape[0]


class _Rows:
    """Accumulates sparse rows with a constant and a demand-dependent right-hand side."""

    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.d_rows, self.d_cols, self.d_vals = [], [], []
        self.rhs: List[float] = []
        self.labels: List[str] = []

    def add(self, cols, vals, rhs: float, label: str, d_cols=(), d_vals=()):
        r = len(self.rhs)
        cols = np.atleast_1d(cols)
        self.rows.append(np.full(cols.size, r))
        self.cols.append(cols)
        self.vals.append(np.broadcast_to(np.asarray(vals, dtype=float), cols.shape))
        d_cols = np.atleast_1d(np.asarray(d_cols, dtype=int))
        if d_cols.size:
            self.d_rows.append(np.full(d_cols.size, r))
            self.d_cols.append(d_cols)
            self.d_vals.append(np.broadcast_to(np.asarray(d_vals, dtype=float), d_cols.shape))
        self.rhs.append(float(rhs))
        self.labels.append(label)

    def add_block(self, rows, cols, vals, rhs, labels, d_rows=None, d_cols=None, d_vals=None):
        """Append several rows at once; `rows` and `d_rows` are local (0-based) row ids."""
        base = len(self.rhs)
        self.rows.append(np.asarray(rows) + base)
        self.cols.append(np.asarray(cols))
        self.vals.append(np.asarray(vals, dtype=float))
        if d_rows is not None and len(d_rows):
            self.d_rows.append(np.asarray(d_rows) + base)
            self.d_cols.append(np.asarray(d_cols))
            self.d_vals.append(np.asarray(d_vals, dtype=float))
        self.rhs.extend(float(v) for v in rhs)
        self.labels.extend(labels)

    def build(self, n_x: int, n_demand: int):
        n = len(self.rhs)

        def cat(parts, dtype):
            return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

        A = sps.csr_matrix(
            (cat(self.vals, float), (cat(self.rows, int), cat(self.cols, int))), shape=(n, n_x)
        )
        M = sps.csr_matrix(
            (cat(self.d_vals, float), (cat(self.d_rows, int), cat(self.d_cols, int))),
            shape=(n, n_demand),
        )
        return A, np.array(self.rhs, dtype=float), M, tuple(self.labels)


def _generator_bounds(dev) -> Tuple[np.ndarray, np.ndarray]:
    """Effective per-period bounds, with the UC commitment applied."""
    lo, hi = np.array(dev.g_min, dtype=float), np.array(dev.g_max, dtype=float)
    if isinstance(dev, UCGenerator):
        if dev.commitment is None:
            raise UnresolvedCommitmentError(
                f"UC generator '{dev.name}' has no fixed commitment; resolve it with dispatch_solver.solve_uc"
            )
        on = np.asarray(dev.commitment, dtype=bool)
        lo = np.where(on, np.maximum(lo, dev.min_output_fraction * hi), 0.0)
        hi = np.where(on, hi, 0.0)
    return lo, hi


def assemble(net: Network) -> ParametricQP:
    """
    Lower a validated, augmented network to its parametric QP.

    Args:
        net (Network): Network whose UC generators all have a fixed commitment

    Returns:
        ParametricQP: matrices of the dispatch problem, affine in demand

    Raises:
        UnresolvedCommitmentError: if a UC generator has no commitment vector
    """
    T, n = net.horizon, net.n_nodes
    layout = build_layout(net)
    n_x, n_d = layout.n_x, T * n
    out_idx = layout.output_indices()

    # costs are $/MWh, so the per-period objective carries period_hours
    hrs = net.period_hours
    h_diag = np.zeros(n_x)
    q = np.zeros(n_x)
    emis = np.zeros(n_x)
    for dev, sl in zip(net.devices, layout.devices):
        for part in sl.all():
            h_diag[part] = 2.0 * dev.cost_quad * hrs
        if not isinstance(dev, Storage):
            q[sl.output] = dev.cost_lin * hrs
            emis[sl.output] = dev.emis_rate
    H = sps.diags(h_diag).tocsc()

    eq, ineq = _Rows(), _Rows()

    # power balance: 1'g_t = 1'd_t
    for t in range(T):
        eq.add(out_idx[t], 1.0, 0.0, f"balance[t={t}]",
               d_cols=np.arange(t * n, (t + 1) * n), d_vals=1.0)

    # line limits in both directions
    m = net.n_lines
    if m:
        FB = net.ptdf[:, net.device_nodes]  # m x k
        r_fb, c_fb = np.nonzero(FB)
        r_f, c_f = np.nonzero(net.ptdf)
        for t in range(T):
            labels = []
            for l in range(m):
                labels += [f"flow+[l={l},t={t}]", f"flow-[l={l},t={t}]"]
            rows = np.concatenate([2 * r_fb, 2 * r_fb + 1])
            cols = np.concatenate([out_idx[t, c_fb], out_idx[t, c_fb]])
            vals = np.concatenate([FB[r_fb, c_fb], -FB[r_fb, c_fb]])
            d_rows = np.concatenate([2 * r_f, 2 * r_f + 1])
            d_cols = np.concatenate([t * n + c_f, t * n + c_f])
            d_vals = np.concatenate([net.ptdf[r_f, c_f], -net.ptdf[r_f, c_f]])
            ineq.add_block(rows, cols, vals, np.repeat(net.line_limits, 2), labels,
                           d_rows, d_cols, d_vals)

    for dev, sl in zip(net.devices, layout.devices):
        if isinstance(dev, Storage):
            _storage_rows(dev, sl, T, eq, ineq)
        else:
            _generator_rows(dev, sl, T, eq, ineq)

    A_eq, b_eq0, B_D, eq_labels = eq.build(n_x, n_d)
    A_in, h_in0, H_D, in_labels = ineq.build(n_x, n_d)
    return ParametricQP(
        H=H, q=q, A_eq=A_eq, b_eq0=b_eq0, B_D=B_D, A_in=A_in, h_in0=h_in0, H_D=H_D,
        layout=layout, emis_vec=emis, n_nodes=n, horizon=T, period_hours=net.period_hours,
        eq_labels=eq_labels, in_labels=in_labels,
    )


def _generator_rows(dev, sl: DeviceSlices, T: int, eq: _Rows, ineq: _Rows):
    lo, hi = _generator_bounds(dev)
    for t in range(T):
        col = sl.output.start + t
        if lo[t] == hi[t]:
            eq.add(col, 1.0, lo[t], f"{dev.name}.pin[t={t}]")
            continue
        if np.isfinite(lo[t]):
            ineq.add(col, -1.0, -lo[t], f"{dev.name}.min[t={t}]")
        if np.isfinite(hi[t]):
            ineq.add(col, 1.0, hi[t], f"{dev.name}.max[t={t}]")
    if isinstance(dev, RampGenerator):
        for t in range(T - 1):
            a, b = sl.output.start + t, sl.output.start + t + 1
            ineq.add([b, a], [1.0, -1.0], dev.ramp, f"{dev.name}.ramp_up[t={t}]")
            ineq.add([a, b], [1.0, -1.0], dev.ramp, f"{dev.name}.ramp_down[t={t}]")


def _storage_rows(dev: Storage, sl: DeviceSlices, T: int, eq: _Rows, ineq: _Rows):
    eta = dev.efficiency
    s, c, d, g = sl.soc.start, sl.charge.start, sl.discharge.start, sl.output.start

    # s_t - s_{t-1} - eta c_t + d_t / eta = 0, with s_0 folded into the first row
    for t in range(T):
        if t == 0:
            eq.add([s, c, d], [1.0, -eta, 1.0 / eta], dev.initial_soc, f"{dev.name}.soc[t=0]")
        else:
            eq.add([s + t, s + t - 1, c + t, d + t], [1.0, -1.0, -eta, 1.0 / eta], 0.0,
                   f"{dev.name}.soc[t={t}]")
    for t in range(T):
        eq.add([g + t, d + t, c + t], [1.0, -1.0, 1.0], 0.0, f"{dev.name}.split[t={t}]")

    policy = dev.terminal_soc_policy
    if policy.kind == "equal_to_initial":
        eq.add(s + T - 1, 1.0, dev.initial_soc, f"{dev.name}.terminal")
    elif policy.kind == "fixed":
        eq.add(s + T - 1, 1.0, float(policy.value), f"{dev.name}.terminal")

    for t in range(T):
        for start, upper, tag in ((s, dev.capacity, "soc"), (c, dev.power, "charge"),
                                  (d, dev.power, "discharge")):
            ineq.add(start + t, -1.0, 0.0, f"{dev.name}.{tag}_min[t={t}]")
            ineq.add(start + t, 1.0, upper, f"{dev.name}.{tag}_max[t={t}]")


def instantiate(pqp: ParametricQP, demand: Union[DemandSchedule, np.ndarray]) -> QPInstance:
    """
    Fix the demand of a parametric QP.

    Args:
        pqp (ParametricQP): Parametric problem
        demand: DemandSchedule or stacked vector of length T * n

    Returns:
        QPInstance: b_eq = b_eq0 + B_D D, h_in = h_in0 + H_D D

    Raises:
        QPAssemblyError: on dimension mismatch
    """
    D = demand.vec() if isinstance(demand, DemandSchedule) else np.asarray(demand, dtype=float).reshape(-1)
    if D.shape != (pqp.n_demand,):
        raise QPAssemblyError(
            f"demand has {D.size} entries, expected T*n = {pqp.horizon}*{pqp.n_nodes} = {pqp.n_demand}"
        )
    return QPInstance(
        H=pqp.H, q=pqp.q, A_eq=pqp.A_eq, b_eq=pqp.b_eq0 + pqp.B_D @ D,
        A_in=pqp.A_in, h_in=pqp.h_in0 + pqp.H_D @ D, demand=D, pqp=pqp,
    )


def _write_triplets(f, tag: str, M):
    coo = sps.coo_matrix(M)
    for i, j, v in zip(coo.row, coo.col, coo.data):
        f.write(f"{tag} {i} {j} {v:.17g}\n")


def _write_vector(f, tag: str, v: np.ndarray):
    for i in np.flatnonzero(v):
        f.write(f"{tag} {i} {v[i]:.17g}\n")


def dump_triplets(pqp: ParametricQP, path: str) -> bool:
    """
    Write the QP in a sparse triplet text format for external cross-checks.

    One entry per line: `<block> <row> <col> <value>` for matrices (H, Aeq,
    BD, Ain, HD) and `<block> <index> <value>` for vectors (q, beq0, hin0,
    emis). Zero entries are omitted. The first line is
    `dims <n_x> <n_eq> <n_in> <n_demand>`.
    """
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"dims {pqp.n_x} {pqp.n_eq} {pqp.n_in} {pqp.n_demand}\n")
            _write_triplets(f, "H", pqp.H)
            _write_vector(f, "q", pqp.q)
            _write_triplets(f, "Aeq", pqp.A_eq)
            _write_vector(f, "beq0", pqp.b_eq0)
            _write_triplets(f, "BD", pqp.B_D)
            _write_triplets(f, "Ain", pqp.A_in)
            _write_vector(f, "hin0", pqp.h_in0)
            _write_triplets(f, "HD", pqp.H_D)
            _write_vector(f, "emis", pqp.emis_vec)
        return True
    except OSError as e:
        print(f"✗ Error writing QP dump: {e}")
        return False
