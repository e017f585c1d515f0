"""
Dispatch Solver - Primal-Dual Interior Point Method for the Dispatch QP

Solves the instantiated dispatch QP to a primal-dual optimum whose four KKT
residual blocks (stationarity, equality, inequality, complementarity) are
certified against the requested tolerance, and resolves unit-commitment
binaries by fixing them and solving the convex restriction.

Multiplier convention: Hx + q + A_eq'nu + A_in'lam = 0 with lam >= 0.
Balance rows read +1'g_t = 1'd_t, so the system price is -nu_t.

Author: Claire Namusoke
Date: October 2026
"""

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sps
from scipy.optimize import linprog
from scipy.sparse.linalg import splu

from canonical_qp import ParametricQP, QPInstance, assemble, instantiate
from grid_model import (
    DEFAULT_REG,
    DEFAULT_VOLL,
    AugmentOptions,
    DemandSchedule,
    Network,
    StaticGenerator,
    UCGenerator,
    ensure_feasible_and_unique,
)

UC_MODES = ("fixed", "heuristic_rounding", "exhaustive")


class SolverError(RuntimeError):
    """Raised when a dispatch cannot be produced or a solution is not optimal."""


@dataclass
class SolverOptions:
    """
    Interior point and unit-commitment settings.

    Attributes:
        tol: bound on every KKT residual block for status "optimal"
        max_iter: interior point iteration cap
        reg, voll: augmentation parameters used by dispatch()
        uc_mode: "fixed", "heuristic_rounding" or "exhaustive"
        exhaustive_limit: largest T * #UC accepted by exhaustive enumeration
        workers: threads used to enumerate commitment patterns
        kkt_reg: static regularization of the Newton system
        refine_steps: iterative refinement steps after each factorized solve
        polish: try an active-set polish once the barrier parameter is small
        polish_mu: barrier level at which polishing starts
        overlap_tol: largest charge and discharge a storage device may carry in the same period (MW)
        verbose: print one line per iteration
    """
    tol: float = 1e-8
    max_iter: int = 100
    reg: float = DEFAULT_REG
    voll: float = DEFAULT_VOLL
    uc_mode: str = "heuristic_rounding"
    exhaustive_limit: int = 20
    workers: int = 1
    kkt_reg: float = 1e-10
    refine_steps: int = 3
    polish: bool = True
    polish_mu: float = 1e-6
    overlap_tol: float = 1e-6
    verbose: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.uc_mode not in UC_MODES:
            raise ValueError(f"uc_mode must be one of {UC_MODES}, got '{self.uc_mode}'")

    def augment_options(self) -> AugmentOptions:
        return AugmentOptions(voll=self.voll, reg=self.reg)


@dataclass(frozen=True)
class KKTResiduals:
    stationarity: float
    primal_eq: float
    primal_in: float
    comp_slack: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_in, self.comp_slack)

    def within(self, tol: float) -> bool:
        return self.max() <= tol

    def as_dict(self) -> Dict[str, float]:
        return {
            "stationarity": self.stationarity,
            "primal_eq": self.primal_eq,
            "primal_in": self.primal_in,
            "comp_slack": self.comp_slack,
        }


@dataclass(eq=False)
class PrimalDualSolution:
    x: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    status: str
    residuals: KKTResiduals
    iterations: int = 0
    polished: bool = False
    wall_time: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True, eq=False)
class DispatchResult:
    """Dispatch of a network with every commitment fixed."""
    network: Network
    pqp: ParametricQP
    instance: QPInstance
    solution: PrimalDualSolution
    commitment: Dict[str, np.ndarray] = field(default_factory=dict)
    simultaneous_storage: Tuple[str, ...] = ()


# =========================================================
# Residuals and objective values
# =========================================================

def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _residuals(inst: QPInstance, x: np.ndarray, nu: np.ndarray, lam: np.ndarray) -> KKTResiduals:
    slack = inst.A_in @ x - inst.h_in
    return KKTResiduals(
        stationarity=_inf_norm(inst.H @ x + inst.q + inst.A_eq.T @ nu + inst.A_in.T @ lam),
        primal_eq=_inf_norm(inst.A_eq @ x - inst.b_eq),
        primal_in=float(max(0.0, slack.max())) if slack.size else 0.0,
        comp_slack=_inf_norm(lam * slack),
    )


def kkt_residuals(pqp: ParametricQP, demand, sol: PrimalDualSolution) -> KKTResiduals:
    """
    Recompute the four KKT residual blocks of a solution from scratch.

    Args:
        pqp (ParametricQP): Parametric problem
        demand: DemandSchedule or stacked demand vector
        sol (PrimalDualSolution): Candidate primal-dual point

    Returns:
        KKTResiduals: infinity norms of each block
    """
    inst = instantiate(pqp, demand)
    if sol.x.shape != (pqp.n_x,) or sol.nu.shape != (pqp.n_eq,) or sol.lam.shape != (pqp.n_in,):
        raise ValueError("solution dimensions do not match the QP")
    return _residuals(inst, sol.x, sol.nu, sol.lam)


def objective(inst: QPInstance, x: np.ndarray) -> float:
    return float(0.5 * x @ (inst.H @ x) + inst.q @ x)


def dual_objective(inst: QPInstance, sol: PrimalDualSolution) -> float:
    x = sol.x
    return float(-0.5 * x @ (inst.H @ x) - inst.b_eq @ sol.nu - inst.h_in @ sol.lam)


def duality_gap(inst: QPInstance, sol: PrimalDualSolution) -> float:
    """Primal minus dual objective; near zero at an optimum."""
    return objective(inst, sol.x) - dual_objective(inst, sol)


def nodal_prices(pqp: ParametricQP, sol: PrimalDualSolution) -> np.ndarray:
    """
    Locational marginal prices, the sensitivity of optimal cost to demand.

    Returns:
        ndarray: T x n matrix in $/MWh
    """
    grad = -(pqp.B_D.T @ sol.nu + pqp.H_D.T @ sol.lam) / pqp.period_hours
    return grad.reshape(pqp.horizon, pqp.n_nodes)


def storage_overlap(pqp: ParametricQP, sol: PrimalDualSolution) -> Dict[str, np.ndarray]:
    """Per storage device, min(charge, discharge) in every period (MW)."""
    overlap = {}
    for name, sl in zip(pqp.layout.names, pqp.layout.devices):
        if sl.charge is None:
            continue
        overlap[name] = np.minimum(sol.x[sl.charge], sol.x[sl.discharge])
    return overlap


def simultaneous_storage(pqp: ParametricQP, sol: PrimalDualSolution, tol: float) -> Tuple[str, ...]:
    """Names of storage devices that charge and discharge by more than `tol` in one period."""
    return tuple(name for name, ov in storage_overlap(pqp, sol).items() if ov.size and ov.max() > tol)


def require_optimal(sol: PrimalDualSolution, context: str):
    if not sol.optimal:
        raise SolverError(
            f"{context}: solver status '{sol.status}' after {sol.iterations} iterations "
            f"(max residual {sol.residuals.max():.2e})"
        )


# =========================================================
# Linear algebra
# =========================================================

class _RegularizedKKT:
    """
    LU factorization of [[K11 + dI, A'], [A, -dI]] used to solve the
    unregularized system [[K11, A'], [A, 0]] by iterative refinement.
    """

    def __init__(self, K11, A, delta: float, refine_steps: int):
        n, m = K11.shape[0], A.shape[0]
        self.n = n
        self.K = sps.bmat([[K11, A.T], [A, sps.csc_matrix((m, m))]], format="csc")
        shift = np.concatenate([np.full(n, delta), np.full(m, -delta)])
        self.lu = splu((self.K + sps.diags(shift)).tocsc())
        self.refine_steps = refine_steps

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        sol = self.lu.solve(rhs)
        for _ in range(self.refine_steps):
            sol = sol + self.lu.solve(rhs - self.K @ sol)
        return sol


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _is_feasible(inst: QPInstance) -> bool:
    """Phase-one check with HiGHS; True when the constraint set is nonempty."""
    res = linprog(
        np.zeros(inst.n_x),
        A_ub=inst.A_in if inst.A_in.shape[0] else None,
        b_ub=inst.h_in if inst.A_in.shape[0] else None,
        A_eq=inst.A_eq if inst.A_eq.shape[0] else None,
        b_eq=inst.b_eq if inst.A_eq.shape[0] else None,
        bounds=(None, None),
        method="highs",
    )
    return res.status != 2


# =========================================================
# Interior point method
# =========================================================

def _initial_point(inst: QPInstance, opts: SolverOptions):
    """Least-squares start shifted into the positive orthant."""
    n, me = inst.n_x, inst.n_eq
    C, h = inst.A_in, inst.h_in
    kkt = _RegularizedKKT((inst.H + C.T @ C).tocsc(), inst.A_eq, opts.kkt_reg, opts.refine_steps)
    sol = kkt.solve(np.concatenate([-inst.q + C.T @ h, inst.b_eq]))
    x, nu = sol[:n], sol[n:n + me]
    w = h - C @ x
    lam = -w.copy()
    w = w + max(0.0, 1.0 - w.min())
    lam = lam + max(0.0, 1.0 - lam.min())
    return x, nu, w, lam


def _polish(inst: QPInstance, x: np.ndarray, w: np.ndarray, lam: np.ndarray, opts: SolverOptions):
    """
    Solve the equality-constrained KKT system on the guessed active set.

    Returns (x, nu, lam) when the result satisfies every KKT block within
    tol, otherwise None.
    """
    n, me = inst.n_x, inst.n_eq
    active = np.flatnonzero(w < lam)
    C_a = inst.A_in[active]
    A = sps.vstack([inst.A_eq, C_a]).tocsr()
    try:
        kkt = _RegularizedKKT(inst.H.tocsc(), A, opts.kkt_reg, opts.refine_steps + 5)
    except RuntimeError:
        return None
    sol = kkt.solve(np.concatenate([-inst.q, inst.b_eq, inst.h_in[active]]))
    if not np.all(np.isfinite(sol)):
        return None
    x_p, nu_p, lam_a = sol[:n], sol[n:n + me], sol[n + me:]
    if lam_a.size and lam_a.min() < -opts.tol:
        return None
    lam_p = np.zeros(inst.n_in)
    lam_p[active] = np.maximum(lam_a, 0.0)
    if not _residuals(inst, x_p, nu_p, lam_p).within(opts.tol):
        return None
    return x_p, nu_p, lam_p


def _solve_equality_qp(inst: QPInstance, opts: SolverOptions, start: float) -> PrimalDualSolution:
    n = inst.n_x
    kkt = _RegularizedKKT(inst.H.tocsc(), inst.A_eq, opts.kkt_reg, opts.refine_steps + 5)
    sol = kkt.solve(np.concatenate([-inst.q, inst.b_eq]))
    x, nu, lam = sol[:n], sol[n:], np.zeros(0)
    res = _residuals(inst, x, nu, lam)
    status = "optimal" if res.within(opts.tol) else "numerical"
    return PrimalDualSolution(x, nu, lam, status, res, 1, False, time.perf_counter() - start)


def solve(inst: QPInstance, opts: Optional[SolverOptions] = None) -> PrimalDualSolution:
    """
    Solve a dispatch QP with a Mehrotra predictor-corrector interior point method.

    Each iteration factorizes the reduced Newton system
        [[H + A_in' diag(lam/w) A_in, A_eq'], [A_eq, 0]]
    once with a sparse LU and reuses it for the predictor and corrector
    directions. Once the barrier parameter is small the active set is guessed
    from w < lam and the KKT system on that set is solved exactly; the polished
    point is kept only if it passes every residual check.

    Args:
        inst (QPInstance): Problem at a fixed demand
        opts (SolverOptions): Tolerance and iteration settings

    Returns:
        PrimalDualSolution: status "optimal" when all four residuals are <= tol,
        otherwise the best iterate with status "infeasible" or "numerical"
    """
    opts = opts or SolverOptions()
    start = time.perf_counter()
    if inst.n_in == 0:
        return _solve_equality_qp(inst, opts, start)

    H, q, A, b, C, h = inst.H, inst.q, inst.A_eq, inst.b_eq, inst.A_in, inst.h_in
    n, me, mi = inst.n_x, inst.n_eq, inst.n_in
    x, nu, w, lam = _initial_point(inst, opts)

    if opts.verbose:
        print(f"📊 Interior point: {n} variables, {me} equalities, {mi} inequalities")

    best = None
    iteration = 0
    for iteration in range(1, opts.max_iter + 1):
        res = _residuals(inst, x, nu, lam)
        if best is None or res.max() < best[3].max():
            best = (x.copy(), nu.copy(), lam.copy(), res)
        mu = float(w @ lam) / mi

        if res.within(opts.tol) or (opts.polish and mu <= opts.polish_mu):
            polished = _polish(inst, x, w, lam, opts) if opts.polish else None
            if polished is not None:
                x_p, nu_p, lam_p = polished
                if opts.verbose:
                    print(f"✓ Polished active set at iteration {iteration}")
                return PrimalDualSolution(x_p, nu_p, lam_p, "optimal", _residuals(inst, x_p, nu_p, lam_p),
                                          iteration, True, time.perf_counter() - start)
            if res.within(opts.tol):
                return PrimalDualSolution(x, nu, lam, "optimal", res, iteration, False,
                                          time.perf_counter() - start)

        r_d = H @ x + q + A.T @ nu + C.T @ lam
        r_p = A @ x - b
        r_i = C @ x + w - h

        try:
            kkt = _RegularizedKKT((H + C.T @ sps.diags(lam / w) @ C).tocsc(), A,
                                  opts.kkt_reg, opts.refine_steps)
        except RuntimeError as e:
            if opts.verbose:
                print(f"✗ Newton system factorization failed: {e}")
            break

        def direction(r_c):
            rhs = np.concatenate([-r_d + C.T @ ((r_c - lam * r_i) / w), -r_p])
            sol = kkt.solve(rhs)
            dx, dnu = sol[:n], sol[n:]
            dlam = (-r_c + lam * r_i + lam * (C @ dx)) / w
            dw = -r_i - C @ dx
            return dx, dnu, dw, dlam

        # predictor
        dx, dnu, dw, dlam = direction(w * lam)
        a_aff = min(_max_step(w, dw), _max_step(lam, dlam))
        mu_aff = float((w + a_aff * dw) @ (lam + a_aff * dlam)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector
        dx, dnu, dw, dlam = direction(w * lam + dw * dlam - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(w, dw), _max_step(lam, dlam)))

        x = x + alpha * dx
        nu = nu + alpha * dnu
        w = w + alpha * dw
        lam = lam + alpha * dlam

        if opts.verbose:
            print(f"  it {iteration:3d}  mu={mu:.3e}  stat={res.stationarity:.2e}  "
                  f"eq={res.primal_eq:.2e}  in={res.primal_in:.2e}  comp={res.comp_slack:.2e}  "
                  f"step={alpha:.3f}")

        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))) or np.max(lam) > 1e14:
            break

    res = _residuals(inst, x, nu, lam) if np.all(np.isfinite(x)) else best[3]
    if np.all(np.isfinite(x)) and res.within(opts.tol):
        return PrimalDualSolution(x, nu, lam, "optimal", res, iteration, False, time.perf_counter() - start)

    x, nu, lam, res = best
    status = "numerical" if _is_feasible(inst) else "infeasible"
    if opts.verbose:
        print(f"⚠️  Interior point stopped with status '{status}' (max residual {res.max():.2e})")
    return PrimalDualSolution(x, nu, lam, status, res, iteration, False, time.perf_counter() - start)


# =========================================================
# Unit commitment
# =========================================================

def uncommitted_uc(net: Network) -> List[UCGenerator]:
    return [d for d in net.devices if isinstance(d, UCGenerator) and d.commitment is None]


def with_commitment(net: Network, commitment: Dict[str, np.ndarray]) -> Network:
    """Copy of the network with the given UC devices' commitment fixed."""
    devices = []
    for dev in net.devices:
        if isinstance(dev, UCGenerator) and dev.name in commitment:
            on = np.asarray(commitment[dev.name], dtype=bool)
            if on.shape != (net.horizon,):
                raise ValueError(f"commitment for '{dev.name}' must have length {net.horizon}")
            dev = replace(dev, commitment=on)
        devices.append(dev)
    return replace(net, devices=tuple(devices))


def _relaxed(net: Network) -> Network:
    """UC devices replaced by static generators with box [0, g_max]."""
    devices = []
    for dev in net.devices:
        if isinstance(dev, UCGenerator) and dev.commitment is None:
            dev = StaticGenerator(
                name=dev.name, node=dev.node, g_min=np.zeros(net.horizon), g_max=dev.g_max,
                cost_quad=dev.cost_quad, cost_lin=dev.cost_lin, emis_rate=dev.emis_rate,
            )
        devices.append(dev)
    return replace(net, devices=tuple(devices))


def _solve_pattern(net: Network, demand: DemandSchedule, commitment: Dict[str, np.ndarray],
                   opts: SolverOptions):
    inst = instantiate(assemble(with_commitment(net, commitment)), demand)
    if not _is_feasible(inst):
        return None
    sol = solve(inst, opts)
    if not sol.optimal:
        if opts.verbose:
            print(f"⚠️  Skipping commitment pattern: solver status '{sol.status}'")
        return None
    return objective(inst, sol.x), sol


def solve_uc(net: Network, demand: DemandSchedule,
             opts: Optional[SolverOptions] = None) -> Tuple[Dict[str, np.ndarray], PrimalDualSolution]:
    """
    Choose on/off schedules for the uncommitted UC generators and solve the restriction.

    Args:
        net (Network): Network with at least one UC generator lacking a commitment
        demand (DemandSchedule): Demand over the horizon
        opts (SolverOptions): uc_mode selects exhaustive or heuristic_rounding

    Returns:
        Tuple: (commitment by device name, solution of the convex restriction)

    Raises:
        SolverError: when enumeration exceeds exhaustive_limit or nothing is feasible
    """
    opts = opts or SolverOptions()
    uc = uncommitted_uc(net)
    T = net.horizon
    if not uc:
        raise SolverError("solve_uc called on a network without uncommitted UC generators")

    if opts.uc_mode == "exhaustive":
        n_bits = T * len(uc)
        if n_bits > opts.exhaustive_limit:
            raise SolverError(
                f"exhaustive commitment search over {n_bits} binaries exceeds the limit of "
                f"{opts.exhaustive_limit}; use uc_mode='heuristic_rounding'"
            )
        patterns = []
        for bits in itertools.product((False, True), repeat=n_bits):
            grid = np.array(bits, dtype=bool).reshape(len(uc), T)
            patterns.append({dev.name: grid[j] for j, dev in enumerate(uc)})

        if opts.workers > 1:
            with ThreadPoolExecutor(max_workers=opts.workers) as pool:
                outcomes = list(pool.map(lambda p: _solve_pattern(net, demand, p, opts), patterns))
        else:
            outcomes = [_solve_pattern(net, demand, p, opts) for p in patterns]

        best_idx, best_cost = None, np.inf
        for idx, outcome in enumerate(outcomes):
            if outcome is not None and outcome[0] < best_cost:
                best_idx, best_cost = idx, outcome[0]
        if best_idx is None:
            raise SolverError(f"no feasible commitment among {len(patterns)} patterns")
        if opts.verbose:
            print(f"✓ Exhaustive commitment: pattern {best_idx} of {len(patterns)}, cost {best_cost:,.4f}")
        return patterns[best_idx], outcomes[best_idx][1]

    if opts.uc_mode == "heuristic_rounding":
        pqp = assemble(_relaxed(net))
        sol = solve(instantiate(pqp, demand), opts)
        require_optimal(sol, "continuous relaxation")
        G = pqp.layout.scatter_outputs(sol.x)
        names = net.device_names

        def rounded(scale: float) -> Dict[str, np.ndarray]:
            out = {}
            for dev in uc:
                g_max = np.asarray(dev.g_max)
                out[dev.name] = (G[:, names.index(dev.name)] >= scale * dev.min_output_fraction * g_max) & (g_max > 0)
            return out

        # a unit rounded on below its minimum output can make the restriction
        # infeasible; then only units already at their minimum stay committed
        for scale in (0.5, 1.0):
            commitment = rounded(scale)
            sol = solve(instantiate(assemble(with_commitment(net, commitment)), demand), opts)
            if sol.status != "infeasible":
                break
            if opts.verbose:
                print(f"⚠️  Rounded commitment at {scale:.1f} x minimum output is infeasible")
        return commitment, sol

    raise SolverError("uc_mode 'fixed' requires every UC generator to carry a commitment")


def dispatch(net: Network, demand: DemandSchedule, opts: Optional[SolverOptions] = None,
             augment: bool = True) -> DispatchResult:
    """
    Augment, resolve commitments and solve a network's dispatch.

    Args:
        net (Network): Validated network
        demand (DemandSchedule): Demand over the horizon
        opts (SolverOptions): Solver and UC settings
        augment (bool): Add slack generators and cost regularization first

    Returns:
        DispatchResult: committed network, its QP, the instance and the solution
    """
    opts = opts or SolverOptions()
    if augment:
        net = ensure_feasible_and_unique(net, opts.augment_options())
    commitment: Dict[str, np.ndarray] = {}
    sol = None
    if uncommitted_uc(net) and opts.uc_mode != "fixed":
        commitment, sol = solve_uc(net, demand, opts)
        net = with_commitment(net, commitment)
    pqp = assemble(net)
    inst = instantiate(pqp, demand)
    if sol is None:
        sol = solve(inst, opts)
    overlapping = simultaneous_storage(pqp, sol, opts.overlap_tol) if sol.optimal else ()
    if overlapping and opts.verbose:
        print(f"⚠️  Simultaneous charge and discharge in: {', '.join(overlapping)}")
    return DispatchResult(network=net, pqp=pqp, instance=inst, solution=sol, commitment=commitment,
                          simultaneous_storage=overlapping)
