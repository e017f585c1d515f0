"""
Implicit Differentiation - Locational Marginal Emissions from the KKT System

The optimal dispatch x*(D) is an implicit function of demand through the KKT
conditions K(D, x) = 0. Where the KKT Jacobian J_x K is nonsingular,

    dx*/dD = -(J_x K)^{-1} J_D K

and the marginal emissions rates are the gradient of total emissions
E(D) = sum_t c'g_t * period_hours. Only that gradient is needed, so a single
transposed (adjoint) solve J_x K' w = v replaces the full Jacobian.

At degenerate points (binding rows with zero multiplier, or dependent active
rows) the gradient may not exist. These are flagged, and the rates reported
are the upward one-sided derivatives by default.

Author: Claire Namusoke
Date: October 2026
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sps
from scipy.optimize import linprog
from scipy.sparse.linalg import LinearOperator, lsqr, onenormest, splu

from canonical_qp import ParametricQP, QPInstance, assemble, instantiate
from dispatch_solver import (
    PrimalDualSolution,
    SolverOptions,
    solve,
    solve_uc,
    uncommitted_uc,
    with_commitment,
)
from grid_model import (
    DEFAULT_REG,
    DemandSchedule,
    Network,
    RampGenerator,
    StaticGenerator,
    Storage,
    ensure_feasible_and_unique,
)

DEGENERATE_POLICIES = ("one_sided", "pseudo")
JACOBIAN_FORMS = ("reduced", "full")
DEFAULT_FD_EPS = 1e-3    # MW
FD_SOLVER_TOL = 1e-10


class LmeError(RuntimeError):
    """Raised when marginal emissions cannot be computed."""


class KKTSingularError(LmeError):
    """Raised when the KKT Jacobian is singular; `rows` names the dependent constraints."""

    def __init__(self, rows: List[str], condition: float = np.inf):
        self.rows = list(rows)
        self.condition = condition
        shown = ", ".join(self.rows[:8]) + (" ..." if len(self.rows) > 8 else "")
        super().__init__(f"KKT Jacobian is singular (cond ~ {condition:.2e}); dependent rows: {shown or 'none found'}")


@dataclass
class LmeOptions:
    """
    Attributes:
        tau_s: slack threshold for a binding row; default 1e-6 * (1 + |x|_inf)
        tau_lam: multiplier threshold for a strongly active row; default 1e-2 * reg
        reg: cost regularization used to size the default tau_lam
        form: "reduced" active-set Jacobian or "full" complementarity form
        degenerate_policy: "one_sided" (upward derivatives) or "pseudo" (least squares)
        singular_cond: condition estimate above which J_x counts as singular
        refine_steps: iterative refinement steps of the adjoint solve
        solver: options of the auxiliary QP solves used by the one-sided policy
    """
    tau_s: Optional[float] = None
    tau_lam: Optional[float] = None
    reg: float = DEFAULT_REG
    form: str = "reduced"
    degenerate_policy: str = "one_sided"
    singular_cond: float = 1e14
    refine_steps: int = 2
    solver: Optional[SolverOptions] = None

    def __post_init__(self):
        if self.form not in JACOBIAN_FORMS:
            raise ValueError(f"form must be one of {JACOBIAN_FORMS}, got '{self.form}'")
        if self.degenerate_policy not in DEGENERATE_POLICIES:
            raise ValueError(f"degenerate_policy must be one of {DEGENERATE_POLICIES}, got '{self.degenerate_policy}'")


@dataclass(frozen=True)
class ActiveSet:
    """
    Partition of the inequality rows at a solution.

    active: slack <= tau_s and lam > tau_lam
    degenerate: slack <= tau_s and lam <= tau_lam
    inactive: slack > tau_s

    `binding` (active plus degenerate) is the set of rows with small slack.
    """
    active: np.ndarray
    inactive: np.ndarray
    degenerate: np.ndarray
    tau_s: float
    tau_lam: float

    @property
    def binding(self) -> np.ndarray:
        return np.union1d(self.active, self.degenerate)

    @property
    def is_degenerate(self) -> bool:
        return self.degenerate.size > 0


@dataclass(frozen=True, eq=False)
class KKTJacobians:
    """J_x K (square) and J_D K of the KKT system, with the labels of the constraint rows."""
    Jx: sps.csc_matrix
    JD: sps.csc_matrix
    form: str
    n_x: int
    constraint_rows: sps.csr_matrix
    labels: Tuple[str, ...]

    def __iter__(self) -> Iterator:
        return iter((self.Jx, self.JD))


@dataclass(eq=False)
class LmeResult:
    lme: np.ndarray                       # T x n, tCO2/MWh
    emissions_total: float                # tCO2
    emissions_per_period: np.ndarray      # T
    degenerate: bool
    condition_estimate: float
    method: str = "adjoint"
    adjoint_residual: float = 0.0
    active_set: Optional[ActiveSet] = None


# =========================================================
# Emissions and active set
# =========================================================

def emissions(pqp: ParametricQP, sol: PrimalDualSolution) -> Tuple[float, np.ndarray]:
    """
    Total and per-period emissions of a dispatch.

    Returns:
        Tuple: (total tCO2, length-T vector of per-period tCO2)
    """
    per_mw = pqp.emis_vec * sol.x
    per_period = per_mw[pqp.layout.output_indices()].sum(axis=1) * pqp.period_hours
    return float(per_period.sum()), per_period


def _lme_options(opts: Optional[LmeOptions]) -> LmeOptions:
    return opts if opts is not None else LmeOptions()


def classify_active_set(pqp: ParametricQP, demand, sol: PrimalDualSolution,
                        tau_s: Optional[float] = None, tau_lam: Optional[float] = None,
                        reg: float = DEFAULT_REG) -> ActiveSet:
    """
    Split inequality rows into active, inactive and degenerate.

    The multiplier threshold is tied to the cost regularization rather than
    to 1e-6 * (1 + scale). On an active row the regularization alone can hold
    the multiplier near reg, and a scale-based threshold at or above reg would
    report such a row as degenerate.

    Args:
        pqp (ParametricQP): Parametric problem
        demand: DemandSchedule or stacked vector
        sol (PrimalDualSolution): Optimal solution
        tau_s (float): Slack threshold, default 1e-6 * (1 + |x|_inf)
        tau_lam (float): Multiplier threshold, default 1e-2 * reg

    Returns:
        ActiveSet: the partition with the thresholds used
    """
    inst = instantiate(pqp, demand)
    if tau_s is None:
        tau_s = 1e-6 * (1.0 + (np.max(np.abs(sol.x)) if sol.x.size else 0.0))
    if tau_lam is None:
        tau_lam = 1e-2 * reg
    slack = inst.h_in - inst.A_in @ sol.x
    binding = slack <= tau_s
    strong = sol.lam > tau_lam
    return ActiveSet(
        active=np.flatnonzero(binding & strong),
        inactive=np.flatnonzero(~binding),
        degenerate=np.flatnonzero(binding & ~strong),
        tau_s=float(tau_s),
        tau_lam=float(tau_lam),
    )


# =========================================================
# KKT Jacobians
# =========================================================

def build_kkt_jacobians(pqp: ParametricQP, demand, sol: PrimalDualSolution, aset: ActiveSet,
                        form: str = "reduced", rows: Optional[np.ndarray] = None) -> KKTJacobians:
    """
    Jacobians of the KKT system with respect to the unknowns and to demand.

    The reduced form keeps only the active inequality rows A:
        Jx = [[H, A_eq', A_A'], [A_eq, 0, 0], [A_A, 0, 0]]
        JD = [[0], [-B_D], [-H_D,A]]
    The full form differentiates complementarity lam * (A_in x - h_in) = 0
    over every inequality row.

    Args:
        rows (ndarray): Inequality rows for the reduced form, default aset.active

    Returns:
        KKTJacobians: iterable as (Jx, JD)
    """
    n_x, n_eq, n_d = pqp.n_x, pqp.n_eq, pqp.n_demand
    inst = instantiate(pqp, demand)

    if form == "reduced":
        idx = aset.active if rows is None else np.asarray(rows, dtype=int)
        A_a = pqp.A_in[idx]
        C = sps.vstack([pqp.A_eq, A_a]).tocsr()
        n_c = C.shape[0]
        Jx = sps.bmat([[pqp.H, C.T], [C, sps.csc_matrix((n_c, n_c))]], format="csc")
        JD = sps.vstack([sps.csr_matrix((n_x, n_d)), -pqp.B_D, -pqp.H_D[idx]]).tocsc()
        labels = tuple(pqp.eq_labels) + tuple(pqp.in_labels[i] for i in idx)
    elif form == "full":
        lam = sps.diags(sol.lam)
        slack = sps.diags(inst.A_in @ sol.x - inst.h_in)
        Jx = sps.bmat([
            [pqp.H, pqp.A_eq.T, pqp.A_in.T],
            [pqp.A_eq, sps.csc_matrix((n_eq, n_eq)), sps.csc_matrix((n_eq, pqp.n_in))],
            [lam @ pqp.A_in, sps.csc_matrix((pqp.n_in, n_eq)), slack],
        ], format="csc")
        JD = sps.vstack([sps.csr_matrix((n_x, n_d)), -pqp.B_D, -(lam @ pqp.H_D)]).tocsc()
        C = sps.vstack([pqp.A_eq, pqp.A_in[aset.binding]]).tocsr()
        labels = tuple(pqp.eq_labels) + tuple(pqp.in_labels[i] for i in aset.binding)
    else:
        raise ValueError(f"form must be one of {JACOBIAN_FORMS}, got '{form}'")
    return KKTJacobians(Jx=Jx, JD=JD, form=form, n_x=n_x, constraint_rows=C, labels=labels)


def dependent_rows(C: sps.spmatrix, labels, rtol: float = 1e-10) -> List[str]:
    """Labels of constraint rows that are linear combinations of earlier pivots."""
    if C.shape[0] == 0:
        return []
    R, P = scipy.linalg.qr(C.toarray().T, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * diag.max())) if diag.size and diag.max() > 0 else 0
    return [labels[p] for p in P[rank:]]


class _JacobianFactor:
    """Sparse LU of J_x with a 1-norm condition estimate."""

    def __init__(self, jac: KKTJacobians, singular_cond: float):
        self.jac = jac
        try:
            self.lu = splu(jac.Jx)
        except RuntimeError:
            raise KKTSingularError(dependent_rows(jac.constraint_rows, jac.labels))
        n = jac.Jx.shape[0]
        inv = LinearOperator((n, n), matvec=self.lu.solve,
                             rmatvec=lambda y: self.lu.solve(y, trans="T"), dtype=float)
        self.condition = float(onenormest(jac.Jx) * onenormest(inv))
        if not np.isfinite(self.condition) or self.condition > singular_cond:
            raise KKTSingularError(dependent_rows(jac.constraint_rows, jac.labels), self.condition)

    def solve_transposed(self, v: np.ndarray, refine_steps: int) -> np.ndarray:
        w = self.lu.solve(v, trans="T")
        JxT = self.jac.Jx.T
        for _ in range(refine_steps):
            w = w + self.lu.solve(v - JxT @ w, trans="T")
        return w

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(rhs)


def _adjoint_rhs(pqp: ParametricQP, jac: KKTJacobians) -> np.ndarray:
    v = np.zeros(jac.Jx.shape[0])
    v[:pqp.n_x] = pqp.emis_vec * pqp.period_hours
    return v


# =========================================================
# Marginal emissions
# =========================================================

def compute_lmes(pqp: ParametricQP, demand, sol: PrimalDualSolution,
                 opts: Optional[LmeOptions] = None) -> LmeResult:
    """
    Locational marginal emissions rates by one adjoint solve of the KKT system.

    Args:
        pqp (ParametricQP): Parametric problem of the committed network
        demand: DemandSchedule or stacked vector
        sol (PrimalDualSolution): Optimal solution at that demand
        opts (LmeOptions): Thresholds, Jacobian form and degenerate policy

    Returns:
        LmeResult: T x n rates in tCO2/MWh with emissions and diagnostics.
        At degenerate points `degenerate` is True and the rates follow
        opts.degenerate_policy.
    """
    opts = _lme_options(opts)
    require_optimal_lme(sol)
    total, per_period = emissions(pqp, sol)
    aset = classify_active_set(pqp, demand, sol, opts.tau_s, opts.tau_lam, opts.reg)
    hrs = pqp.period_hours

    jac = build_kkt_jacobians(pqp, demand, sol, aset, opts.form)
    v = _adjoint_rhs(pqp, jac)
    degenerate = aset.is_degenerate
    lme, condition, residual, method = None, np.inf, np.inf, "adjoint"
    try:
        factor = _JacobianFactor(jac, opts.singular_cond)
        condition = factor.condition
        w = factor.solve_transposed(v, opts.refine_steps)
        residual = float(np.max(np.abs(jac.Jx.T @ w - v))) if v.size else 0.0
        lme = -(jac.JD.T @ w) / hrs
    except KKTSingularError as e:
        degenerate = True
        condition = e.condition

    if degenerate and opts.degenerate_policy == "one_sided":
        lme = directional_lmes(pqp, demand, sol, opts, aset).reshape(-1)
        method = "one_sided"
    elif lme is None:
        # least-squares solution of the singular adjoint system over the binding rows
        jac_b = build_kkt_jacobians(pqp, demand, sol, aset, "reduced", rows=aset.binding)
        v_b = _adjoint_rhs(pqp, jac_b)
        w = lsqr(jac_b.Jx.T, v_b, atol=1e-14, btol=1e-14, iter_lim=50 * jac_b.Jx.shape[0])[0]
        residual = float(np.max(np.abs(jac_b.Jx.T @ w - v_b))) if v_b.size else 0.0
        lme = -(jac_b.JD.T @ w) / hrs
        method = "pseudo"

    return LmeResult(
        lme=np.asarray(lme).reshape(pqp.horizon, pqp.n_nodes),
        emissions_total=total,
        emissions_per_period=per_period,
        degenerate=degenerate,
        condition_estimate=condition,
        method=method,
        adjoint_residual=residual,
        active_set=aset,
    )


def require_optimal_lme(sol: PrimalDualSolution):
    if not sol.optimal:
        raise LmeError(f"marginal emissions need an optimal dispatch, solver status is '{sol.status}'")


def directional_lmes(pqp: ParametricQP, demand, sol: PrimalDualSolution,
                     opts: Optional[LmeOptions] = None, aset: Optional[ActiveSet] = None) -> np.ndarray:
    """
    Upward one-sided marginal emissions rates, defined at degenerate points too.

    For each unit demand increase e the first-order response dx solves the
    linear program min (Hx + q)'dx over the linearized binding constraints
    (A_eq dx = B_D e, A_B dx <= H_D,B e). Among its optimal solutions the one
    of least curvature dx'H dx is the directional derivative of x*.

    Returns:
        ndarray: T x n rates in tCO2/MWh
    """
    opts = _lme_options(opts)
    require_optimal_lme(sol)
    if aset is None:
        aset = classify_active_set(pqp, demand, sol, opts.tau_s, opts.tau_lam, opts.reg)
    solver_opts = opts.solver or SolverOptions()
    B = aset.binding
    A_b = pqp.A_in[B]
    grad = pqp.H @ sol.x + pqp.q
    B_D, H_Db = pqp.B_D.tocsc(), pqp.H_D[B].tocsc()

    lme = np.zeros(pqp.n_demand)
    for col in range(pqp.n_demand):
        b_eq = B_D[:, col].toarray().ravel()
        h_b = H_Db[:, col].toarray().ravel()
        lp = linprog(grad, A_ub=A_b if B.size else None, b_ub=h_b if B.size else None,
                     A_eq=pqp.A_eq, b_eq=b_eq, bounds=(None, None), method="highs")
        if lp.status != 0:
            raise LmeError(f"directional program for demand index {col} failed: {lp.message}")
        face = lp.fun + 1e-7 * (1.0 + abs(lp.fun))
        face_qp = QPInstance(
            H=pqp.H, q=np.zeros(pqp.n_x), A_eq=pqp.A_eq, b_eq=b_eq,
            A_in=sps.vstack([A_b, sps.csr_matrix(grad)]).tocsr(),
            h_in=np.concatenate([h_b, [face]]),
        )
        dsol = solve(face_qp, solver_opts)
        dx = dsol.x if dsol.optimal else lp.x
        lme[col] = pqp.emis_vec @ dx
    return lme.reshape(pqp.horizon, pqp.n_nodes)


def solution_jacobian(pqp: ParametricQP, demand, sol: PrimalDualSolution,
                      opts: Optional[LmeOptions] = None) -> np.ndarray:
    """
    Full primal sensitivity dx*/dD (N_x x T*n) by one forward solve per demand entry.

    Raises:
        KKTSingularError: when the Jacobian is singular
    """
    opts = _lme_options(opts)
    require_optimal_lme(sol)
    aset = classify_active_set(pqp, demand, sol, opts.tau_s, opts.tau_lam, opts.reg)
    jac = build_kkt_jacobians(pqp, demand, sol, aset, opts.form)
    factor = _JacobianFactor(jac, opts.singular_cond)
    Z = factor.solve(-jac.JD.toarray())
    return Z[:pqp.n_x]


# =========================================================
# Static approximation and finite-difference oracle
# =========================================================

def static_network(net: Network, G: np.ndarray) -> Network:
    """
    Pin every dynamic device at its schedule G[:, j].

    Storage and ramp-limited generators become fixed-output static generators,
    which removes all coupling between periods.
    """
    devices = []
    for j, dev in enumerate(net.devices):
        if isinstance(dev, (Storage, RampGenerator)):
            dev = StaticGenerator(
                name=dev.name, node=dev.node, g_min=G[:, j].copy(), g_max=G[:, j].copy(),
                cost_quad=dev.cost_quad,
                cost_lin=0.0 if isinstance(dev, Storage) else dev.cost_lin,
                emis_rate=dev.emis_rate,
            )
        devices.append(dev)
    return replace(net, devices=tuple(devices))


def static_approximation(net: Network, demand, sol: PrimalDualSolution,
                         opts: Optional[LmeOptions] = None,
                         pqp: Optional[ParametricQP] = None) -> LmeResult:
    """
    Marginal emissions with dynamic devices held at their optimal schedules.

    Args:
        net (Network): The committed network that `sol` solves
        demand: DemandSchedule or stacked vector
        sol (PrimalDualSolution): Optimal dynamic dispatch
        opts (LmeOptions): Options passed to compute_lmes
        pqp (ParametricQP): QP of `net`, assembled when omitted

    Returns:
        LmeResult: rates of the period-separable restriction

    Raises:
        LmeError: if the pinned problem cannot be re-solved to its pinned schedule
    """
    opts = _lme_options(opts)
    require_optimal_lme(sol)
    pqp = pqp if pqp is not None else assemble(net)
    G = pqp.layout.scatter_outputs(sol.x)

    s_net = static_network(net, G)
    s_pqp = assemble(s_net)
    solver_opts = opts.solver or SolverOptions()
    s_sol = solve(instantiate(s_pqp, demand), solver_opts)
    if not s_sol.optimal:
        raise LmeError(f"static restriction did not re-solve (status '{s_sol.status}')")

    G_static = s_pqp.layout.scatter_outputs(s_sol.x)
    pinned = [j for j, dev in enumerate(net.devices) if isinstance(dev, (Storage, RampGenerator))]
    if pinned:
        drift = float(np.max(np.abs(G_static[:, pinned] - G[:, pinned])))
        if drift > max(solver_opts.tol, 1e-6):
            raise LmeError(f"pinned schedules drifted by {drift:.2e} MW in the static re-solve")
    return compute_lmes(s_pqp, demand, s_sol, opts)


def _committed(net: Network, demand: DemandSchedule, opts: SolverOptions) -> Network:
    net = ensure_feasible_and_unique(net, opts.augment_options())
    if uncommitted_uc(net):
        commitment, _ = solve_uc(net, demand, opts)
        net = with_commitment(net, commitment)
    return net


def finite_difference_lmes(net: Network, demand: DemandSchedule, eps: float = DEFAULT_FD_EPS,
                           opts: Optional[SolverOptions] = None, workers: int = 1) -> np.ndarray:
    """
    Central-difference marginal emissions, one pair of full re-solves per demand entry.

    The network is augmented and its commitment fixed at the base demand, so
    the oracle differentiates the same convex restriction as compute_lmes.

    Args:
        net (Network): Network to dispatch
        demand (DemandSchedule): Base demand
        eps (float): Perturbation in MW
        opts (SolverOptions): Solver settings; tol is tightened to 1e-10
        workers (int): Threads for the perturbation solves

    Returns:
        ndarray: T x n rates in tCO2/MWh

    Raises:
        LmeError: naming the perturbation whose re-solve was not optimal
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = opts or SolverOptions()
    opts = replace(base, tol=min(base.tol, FD_SOLVER_TOL))
    net = _committed(net, demand, opts)
    pqp = assemble(net)
    D = demand.vec()
    T, n = demand.horizon, demand.n_nodes

    def emissions_at(col: int, sign: float) -> float:
        Dp = D.copy()
        Dp[col] += sign * eps
        sol = solve(instantiate(pqp, Dp), opts)
        if not sol.optimal:
            t, i = divmod(col, n)
            raise LmeError(
                f"re-solve with demand[t={t}, node={i}] {'+' if sign > 0 else '-'}{eps:g} MW "
                f"ended with status '{sol.status}'"
            )
        return emissions(pqp, sol)[0]

    def column(col: int) -> float:
        return (emissions_at(col, 1.0) - emissions_at(col, -1.0)) / (2.0 * eps * pqp.period_hours)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(column, range(T * n)))
    else:
        values = [column(col) for col in range(T * n)]
    return np.array(values).reshape(T, n)
