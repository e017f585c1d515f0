"""
Dispatch solver - Test Suite.

Proves:
 Group 1 - Worked examples
   1. One generator serving 5 MW: x = 5, price = linear cost, box multipliers 0
   2. Bundled toy example: gas (0, 0), solar (2, 0), battery (-1, 1)
   3. Demand 12 over caps (10, 10), costs (1, 2): dispatch (10, 2), cap multiplier > 0

 Group 2 - KKT contract
   4. All four residuals within tol and a vanishing duality gap
   5. kkt_residuals flags a perturbed primal point
   6. With zero multipliers complementarity is zero and stationarity is |Hx + q + A_eq'nu|
   7. Infeasible problems (no augmentation) report status "infeasible"

 Group 3 - Properties
   8. Single-node price equals the marginal generator's cost
   9. Repeated solves are bit-for-bit identical
  10. Optimal cost never decreases when any demand entry increases

 Group 4 - Unit commitment
  11. Only feasible commitment is chosen when no alternative exists
  12. Zero demand leaves the UC unit off
  13. Exhaustive search matches brute-force enumeration of all patterns
  14. Exhaustive search refuses more than 20 binaries
  15. Heuristic rounding falls back to full minimum output when the first rounding is infeasible

 Group 5 - Storage diagnostics
  16. A lossy battery never charges and discharges in the same period
  17. A point with overlapping charge and discharge is flagged
"""

import itertools
from dataclasses import replace

import numpy as np
import pytest

from canonical_qp import assemble, instantiate
from conftest import data_path, demand_of, gen, single_node
from dispatch_solver import (
    SolverError,
    SolverOptions,
    dispatch,
    duality_gap,
    kkt_residuals,
    nodal_prices,
    objective,
    solve,
    solve_uc,
    simultaneous_storage,
    storage_overlap,
    with_commitment,
)
from grid_model import (
    DemandSchedule,
    UCGenerator,
    ensure_feasible_and_unique,
    load_demand,
    load_network,
)

TOL = 1e-8


def _outputs(result):
    return result.pqp.layout.scatter_outputs(result.solution.x)


# ═══════════════════════════════════════════════════════════════════════════════
# Group 1 - Worked examples
# ═══════════════════════════════════════════════════════════════════════════════


def test_single_generator_interior_optimum():
    net = single_node([gen("g", g_max=10.0, cost_lin=1.0)])
    pqp = assemble(net)
    sol = solve(instantiate(pqp, [5.0]))
    assert sol.optimal, sol.status
    assert sol.x[0] == pytest.approx(5.0, abs=1e-6)
    assert nodal_prices(pqp, sol)[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert np.all(np.abs(sol.lam) <= 1e-6)


def test_single_generator_augmented_price():
    net = single_node([gen("g", g_max=10.0, cost_lin=1.0)])
    result = dispatch(net, demand_of(5.0))
    assert result.solution.optimal
    # marginal cost b + 2 a g with a = reg
    expected = 1.0 + 2 * SolverOptions().reg * 5.0
    assert nodal_prices(result.pqp, result.solution)[0, 0] == pytest.approx(expected, abs=1e-6)


def test_toy_dispatch(toy_network, toy_demand):
    result = dispatch(toy_network, toy_demand)
    assert result.solution.optimal
    G = _outputs(result)
    np.testing.assert_allclose(G[:, 0], [0.0, 0.0], atol=1e-4)
    np.testing.assert_allclose(G[:, 1], [2.0, 0.0], atol=1e-4)
    np.testing.assert_allclose(G[:, 2], [-1.0, 1.0], atol=1e-4)


def test_two_generators_cap_binds():
    net = single_node([gen("g1", g_max=10.0, cost_lin=1.0), gen("g2", g_max=10.0, cost_lin=2.0)])
    result = dispatch(net, demand_of(12.0))
    G = _outputs(result)
    np.testing.assert_allclose(G[0, :2], [10.0, 2.0], atol=1e-6)
    row = result.pqp.in_labels.index("g1.max[t=0]")
    assert result.solution.lam[row] > 0.5


# ═══════════════════════════════════════════════════════════════════════════════
# Group 2 - KKT contract
# ═══════════════════════════════════════════════════════════════════════════════


def test_residuals_and_duality_gap(three_bus):
    net, demand = three_bus
    result = dispatch(net, demand)
    sol = result.solution
    assert sol.optimal
    res = kkt_residuals(result.pqp, demand, sol)
    assert res.within(TOL), res.as_dict()
    assert sol.lam.min() >= -1e-9
    primal = objective(result.instance, sol.x)
    assert abs(duality_gap(result.instance, sol)) <= 1e-6 * (1 + abs(primal))


def test_residuals_detect_perturbation(three_bus):
    net, demand = three_bus
    result = dispatch(net, demand)
    sol = result.solution
    x = sol.x.copy()
    x[0] += 1.0
    perturbed = type(sol)(x, sol.nu, sol.lam, sol.status, sol.residuals)
    res = kkt_residuals(result.pqp, demand, perturbed)
    reg = SolverOptions().reg
    assert res.stationarity >= 2 * reg - TOL or res.primal_eq > 0.5


def test_residuals_with_zero_multipliers():
    net = single_node([gen("g", g_max=10.0, cost_lin=1.0, cost_quad=0.5)])
    pqp = assemble(net)
    sol = solve(instantiate(pqp, [4.0]))
    zero = type(sol)(sol.x, np.zeros_like(sol.nu), np.zeros_like(sol.lam), "optimal", sol.residuals)
    res = kkt_residuals(pqp, [4.0], zero)
    assert res.comp_slack == 0.0
    expected = np.max(np.abs(pqp.H @ sol.x + pqp.q))
    assert res.stationarity == pytest.approx(expected)


def test_infeasible_without_augmentation():
    net = single_node([gen("g", g_max=10.0, cost_lin=1.0)])
    sol = solve(instantiate(assemble(net), [20.0]), SolverOptions(max_iter=40))
    assert sol.status == "infeasible"


# ═══════════════════════════════════════════════════════════════════════════════
# Group 3 - Properties
# ═══════════════════════════════════════════════════════════════════════════════


@pytest.mark.parametrize("load, marginal_cost", [(5.0, 1.0), (15.0, 2.0), (25.0, 4.0)])
def test_price_matches_merit_order(load, marginal_cost):
    net = single_node([gen("a", g_max=10.0, cost_lin=1.0), gen("b", g_max=10.0, cost_lin=2.0),
                       gen("c", g_max=10.0, cost_lin=4.0)])
    result = dispatch(net, demand_of(load))
    price = nodal_prices(result.pqp, result.solution)[0, 0]
    assert price == pytest.approx(marginal_cost, abs=1e-4)
    assert -result.solution.nu[0] == pytest.approx(marginal_cost, abs=1e-4)


def test_determinism(three_bus):
    net, demand = three_bus
    a = dispatch(net, demand).solution
    b = dispatch(net, demand).solution
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.nu, b.nu)


def test_monotone_cost(three_bus):
    net, demand = three_bus
    base = dispatch(net, demand)
    base_cost = objective(base.instance, base.solution.x)
    for t in range(demand.horizon):
        for i in range(demand.n_nodes):
            values = demand.values.copy()
            values[t, i] += 0.5
            up = dispatch(net, DemandSchedule(values))
            assert objective(up.instance, up.solution.x) >= base_cost - 1e-7


# ═══════════════════════════════════════════════════════════════════════════════
# Group 4 - Unit commitment
# ═══════════════════════════════════════════════════════════════════════════════


def _coal(T=2):
    return UCGenerator(name="coal", node=0, g_min=np.zeros(T), g_max=np.full(T, 10.0),
                       cost_lin=1.0, emis_rate=1.0, min_output_fraction=0.4)


@pytest.mark.parametrize("mode", ["heuristic_rounding", "exhaustive"])
def test_uc_only_feasible_commitment(mode):
    net = ensure_feasible_and_unique(single_node([_coal()], T=2))
    commitment, sol = solve_uc(net, demand_of(5.0, 5.0), SolverOptions(uc_mode=mode))
    assert commitment["coal"].tolist() == [True, True]
    assert sol.optimal
    np.testing.assert_allclose(sol.x[:2], [5.0, 5.0], atol=1e-6)


@pytest.mark.parametrize("mode", ["heuristic_rounding", "exhaustive"])
def test_uc_zero_demand_stays_off(mode):
    coal = UCGenerator(name="coal", node=0, g_min=np.zeros(2), g_max=np.full(2, 10.0),
                       cost_lin=5.0, emis_rate=1.0)
    net = ensure_feasible_and_unique(single_node([coal, gen("gas", cost_lin=1.0, T=2)], T=2))
    commitment, _ = solve_uc(net, demand_of(0.0, 0.0), SolverOptions(uc_mode=mode))
    assert commitment["coal"].tolist() == [False, False]


def test_uc_exhaustive_matches_brute_force():
    net = ensure_feasible_and_unique(load_network(data_path("uc_two_period_network.json")))
    demand = load_demand(data_path("uc_two_period_demand.csv"), n_nodes=1)
    commitment, sol = solve_uc(net, demand, SolverOptions(uc_mode="exhaustive"))

    best, best_cost = None, np.inf
    for bits in itertools.product((False, True), repeat=2):
        inst = instantiate(assemble(with_commitment(net, {"coal": np.array(bits)})), demand)
        trial = solve(inst, SolverOptions(max_iter=60))
        if trial.optimal and objective(inst, trial.x) < best_cost:
            best, best_cost = bits, objective(inst, trial.x)

    assert tuple(commitment["coal"].tolist()) == best == (False, True)
    pqp = assemble(with_commitment(net, commitment))
    G = pqp.layout.scatter_outputs(sol.x)
    np.testing.assert_allclose(G[:, 0], [0.0, 9.0], atol=1e-6)
    np.testing.assert_allclose(G[:, 1], [3.0, 0.0], atol=1e-6)


def test_uc_exhaustive_guard():
    net = ensure_feasible_and_unique(single_node([_coal(T=21)], T=21))
    with pytest.raises(SolverError, match="exceeds the limit"):
        solve_uc(net, DemandSchedule(np.full((21, 1), 5.0)), SolverOptions(uc_mode="exhaustive"))


def test_uc_heuristic_repair():
    net = ensure_feasible_and_unique(load_network(data_path("uc_two_period_network.json")))
    demand = load_demand(data_path("uc_two_period_demand.csv"), n_nodes=1)
    # relaxation runs coal at (3, 9); 3 MW clears half the 4 MW minimum but not the minimum itself
    commitment, sol = solve_uc(net, demand, SolverOptions(uc_mode="heuristic_rounding"))
    assert commitment["coal"].tolist() == [False, True]
    assert sol.optimal


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(uc_mode="branch_and_bound")


# ═══════════════════════════════════════════════════════════════════════════════
# Group 5 - Storage diagnostics
# ═══════════════════════════════════════════════════════════════════════════════


def test_lossy_battery_has_no_overlap(three_bus):
    net, demand = three_bus
    assert net.devices[3].efficiency < 1.0
    result = dispatch(net, demand)
    assert result.solution.optimal
    assert result.simultaneous_storage == ()
    overlap = storage_overlap(result.pqp, result.solution)
    assert list(overlap) == ["battery"]
    assert overlap["battery"].max() <= SolverOptions().overlap_tol


def test_overlap_is_flagged(three_bus):
    net, demand = three_bus
    result = dispatch(net, demand)
    battery = result.pqp.layout.devices[3]
    x = result.solution.x.copy()
    x[battery.charge.start] += 0.5
    x[battery.discharge.start] += 0.5
    cycled = replace(result.solution, x=x)
    assert storage_overlap(result.pqp, cycled)["battery"][0] >= 0.5 - 1e-6
    assert simultaneous_storage(result.pqp, cycled, tol=1e-6) == ("battery",)
