"""
Implicit differentiation - Test Suite.

Proves:
 Group 1 - Worked examples
   1. Bundled toy example: dynamic rates (0, 0), static rates (0, 500), zero emissions
   2. min x^2/2 s.t. x = d: Jx = [[1, 1], [1, 0]], JD = [0, -1]', dx/dd = 1
   3. Two generators (costs 1, 2; emissions 0.5, 1.0): rate 0.5 at 5 MW, 1.0 at 12 MW
   4. Merit-order sweep across three breakpoints matches the marginal unit's rate

 Group 2 - Active set and emissions
   5. Interior generator rows are inactive, a saturated cap row is active
   6. A hand-built tie (binding rows, zero multipliers) is listed degenerate
   7. emissions() sums c * G * period_hours per period

 Group 3 - Numerical contracts
   8. Adjoint residual is tiny relative to the right-hand side
   9. Reduced and full complementarity Jacobians give the same solution Jacobian
  10. Uncongested networks have the same rate at every node
  11. E(D + delta) - E(D) matches <rates, delta> for small delta

 Group 4 - Degenerate and singular points
  12. Parallel binding lines make J_x singular; the error names a flow row
  13. compute_lmes never raises at singular points: flagged one-sided rates
  14. The least-squares policy returns finite flagged rates

 Group 5 - Static approximation and oracles
  15. Without dynamic devices static and dynamic rates are identical
  16. A lossless interior battery equalizes rates across periods
  17. Finite differences match the analytic single-generator rate
  18. Finite differences match compute_lmes over 100 random instances (slow)
"""

import numpy as np
import pytest

from canonical_qp import assemble, instantiate
from conftest import demand_of, gen, single_node
from dispatch_solver import PrimalDualSolution, SolverOptions, dispatch, kkt_residuals, solve
from grid_model import (
    DemandSchedule,
    Line,
    Network,
    Storage,
    TerminalPolicy,
    compute_ptdf,
)
from implicit_diff import (
    KKTSingularError,
    LmeError,
    LmeOptions,
    build_kkt_jacobians,
    classify_active_set,
    compute_lmes,
    emissions,
    finite_difference_lmes,
    solution_jacobian,
    static_approximation,
)
from synthetic import random_case


def _lmes(net, demand, opts=None):
    result = dispatch(net, demand)
    assert result.solution.optimal, result.solution.status
    return result, compute_lmes(result.pqp, demand, result.solution, opts)


def _merit_pair():
    return single_node([
        gen("cheap", g_max=10.0, cost_lin=1.0, emis=0.5),
        gen("dear", g_max=10.0, cost_lin=2.0, emis=1.0),
    ])


def _first_nondegenerate(**case_kwargs):
    for seed in range(20):
        net, demand = random_case(seed, **case_kwargs)
        result, lme = _lmes(net, demand)
        if not lme.degenerate:
            return result, demand, lme
    pytest.fail("no non-degenerate instance among 20 seeds")


# ═══════════════════════════════════════════════════════════════════════════════
# Group 1 - Worked examples
# ═══════════════════════════════════════════════════════════════════════════════


def test_toy_dynamic_and_static_rates(toy_network, toy_demand):
    result, lme = _lmes(toy_network, toy_demand)
    np.testing.assert_allclose(lme.lme[:, 0], [0.0, 0.0], atol=1e-3)
    assert lme.emissions_total == pytest.approx(0.0, abs=1e-3)

    static = static_approximation(result.network, toy_demand, result.solution, pqp=result.pqp)
    np.testing.assert_allclose(static.lme[:, 0], [0.0, 500.0], atol=1e-3)


def test_scalar_qp_jacobian():
    x_gen = gen("x", g_min=-np.inf, g_max=np.inf, cost_quad=0.5, emis=0.7)
    pqp = assemble(single_node([x_gen]))
    assert pqp.n_in == 0
    sol = solve(instantiate(pqp, [3.0]))
    assert sol.optimal
    aset = classify_active_set(pqp, [3.0], sol)
    Jx, JD = build_kkt_jacobians(pqp, [3.0], sol, aset)
    np.testing.assert_array_equal(Jx.toarray(), [[1.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(JD.toarray(), [[0.0], [-1.0]])
    np.testing.assert_allclose(solution_jacobian(pqp, [3.0], sol), [[1.0]], atol=1e-12)
    assert compute_lmes(pqp, [3.0], sol).lme[0, 0] == pytest.approx(0.7, abs=1e-12)


@pytest.mark.parametrize("load, rate", [(5.0, 0.5), (12.0, 1.0)])
def test_two_generator_rates(load, rate):
    _, lme = _lmes(_merit_pair(), demand_of(load))
    assert not lme.degenerate
    assert lme.lme[0, 0] == pytest.approx(rate, abs=1e-6)


@pytest.mark.parametrize("load, rate", [(5.0, 0.5), (15.0, 1.0), (25.0, 0.3), (35.0, 0.0)])
def test_merit_order_sweep(load, rate):
    net = single_node([
        gen("a", g_max=10.0, cost_lin=1.0, emis=0.5),
        gen("b", g_max=10.0, cost_lin=2.0, emis=1.0),
        gen("c", g_max=10.0, cost_lin=4.0, emis=0.3),
    ])
    _, lme = _lmes(net, demand_of(load))
    assert lme.lme[0, 0] == pytest.approx(rate, abs=1e-6)


# ═══════════════════════════════════════════════════════════════════════════════
# Group 2 - Active set and emissions
# ═══════════════════════════════════════════════════════════════════════════════


def test_active_set_interior_and_cap():
    result = dispatch(_merit_pair(), demand_of(12.0))
    aset = classify_active_set(result.pqp, demand_of(12.0), result.solution)
    labels = result.pqp.in_labels
    active = {labels[i] for i in aset.active}
    inactive = {labels[i] for i in aset.inactive}
    assert "cheap.max[t=0]" in active
    assert {"dear.min[t=0]", "dear.max[t=0]"} <= inactive
    assert not aset.is_degenerate


def test_tie_is_degenerate():
    # equal costs, first unit at its cap, second at zero, price 1, all multipliers zero
    net = single_node([gen("a", g_max=10.0, cost_lin=1.0), gen("b", g_max=10.0, cost_lin=1.0)])
    pqp = assemble(net)
    x = np.array([10.0, 0.0])
    nu = np.array([-1.0])
    lam = np.zeros(pqp.n_in)
    sol = PrimalDualSolution(x, nu, lam, "optimal", None)
    assert kkt_residuals(pqp, [10.0], sol).within(1e-12)
    aset = classify_active_set(pqp, [10.0], sol)
    degenerate = {pqp.in_labels[i] for i in aset.degenerate}
    assert degenerate == {"a.max[t=0]", "b.min[t=0]"}
    assert aset.active.size == 0


def test_emissions_per_period():
    pqp = assemble(single_node([gen("g", emis=0.5, T=2)], T=2))
    sol = PrimalDualSolution(np.array([5.0, 5.0]), np.zeros(2), np.zeros(pqp.n_in), "optimal", None)
    total, per_period = emissions(pqp, sol)
    np.testing.assert_allclose(per_period, [2.5, 2.5])
    assert total == pytest.approx(5.0)

    clean = assemble(single_node([gen("g", emis=0.0, T=2)], T=2))
    assert emissions(clean, sol)[0] == 0.0


# ═══════════════════════════════════════════════════════════════════════════════
# Group 3 - Numerical contracts
# ═══════════════════════════════════════════════════════════════════════════════


def test_adjoint_residual(three_bus):
    net, demand = three_bus
    result, lme = _lmes(net, demand)
    if lme.method == "adjoint":
        scale = np.max(np.abs(result.pqp.emis_vec))
        assert lme.adjoint_residual <= 1e-8 * scale
    assert np.isfinite(lme.condition_estimate) or lme.degenerate


def test_reduced_and_full_forms_agree():
    result, demand, _ = _first_nondegenerate(n_nodes=2, n_gens=3, horizon=2)
    reduced = solution_jacobian(result.pqp, demand, result.solution, LmeOptions(form="reduced"))
    full = solution_jacobian(result.pqp, demand, result.solution, LmeOptions(form="full"))
    np.testing.assert_allclose(full, reduced, atol=1e-8)

    rates = compute_lmes(result.pqp, demand, result.solution, LmeOptions(form="full")).lme
    expected = compute_lmes(result.pqp, demand, result.solution).lme
    np.testing.assert_allclose(rates, expected, atol=1e-8)


def test_uncongested_rates_are_uniform():
    net, demand = random_case(4, n_nodes=4, n_gens=5, horizon=2, rating=(1e5, 2e5))
    _, lme = _lmes(net, demand)
    for t in range(net.horizon):
        np.testing.assert_allclose(lme.lme[t], lme.lme[t, 0], atol=1e-8)


def test_first_order_consistency():
    result, demand, lme = _first_nondegenerate(n_nodes=3, n_gens=4, horizon=3)
    pqp = result.pqp
    base = emissions(pqp, result.solution)[0]
    delta = np.random.default_rng(7).uniform(-1e-4, 1e-4, size=pqp.n_demand)
    moved = solve(instantiate(pqp, demand.vec() + delta), SolverOptions(tol=1e-10))
    assert moved.optimal
    change = emissions(pqp, moved)[0] - base
    assert change == pytest.approx(lme.lme.reshape(-1) @ delta, abs=1e-7)


# ═══════════════════════════════════════════════════════════════════════════════
# Group 4 - Degenerate and singular points
# ═══════════════════════════════════════════════════════════════════════════════


def _parallel_lines():
    lines = [Line(0, 1, 1.0, 5.0), Line(0, 1, 1.0, 5.0)]
    devices = [gen("cheap", node=0, g_max=50.0, cost_lin=1.0, emis=1.0),
               gen("dear", node=1, g_max=50.0, cost_lin=5.0, emis=0.2)]
    net = Network(n_nodes=2, lines=tuple(lines), ptdf=compute_ptdf(lines, 2),
                  line_limits=[5.0, 5.0], devices=tuple(devices), horizon=1)
    return net, DemandSchedule(np.array([[0.0, 20.0]]))


def test_parallel_lines_singular_error():
    net, demand = _parallel_lines()
    result = dispatch(net, demand)
    G = result.pqp.layout.scatter_outputs(result.solution.x)
    np.testing.assert_allclose(G[0, :2], [10.0, 10.0], atol=1e-6)
    with pytest.raises(KKTSingularError) as info:
        solution_jacobian(result.pqp, demand, result.solution)
    assert any(row.startswith("flow+[l=") for row in info.value.rows)
    assert isinstance(info.value, LmeError)


def test_singular_point_returns_one_sided_rates():
    net, demand = _parallel_lines()
    _, lme = _lmes(net, demand)
    assert lme.degenerate
    assert lme.method == "one_sided"
    np.testing.assert_allclose(lme.lme[0], [1.0, 0.2], atol=1e-4)


def test_pseudo_policy_is_flagged_and_finite():
    net, demand = _parallel_lines()
    _, lme = _lmes(net, demand, LmeOptions(degenerate_policy="pseudo"))
    assert lme.degenerate
    assert lme.method == "pseudo"
    assert np.all(np.isfinite(lme.lme))


def test_lme_options_validation():
    with pytest.raises(ValueError):
        LmeOptions(form="dense")
    with pytest.raises(ValueError):
        LmeOptions(degenerate_policy="flag")


# ═══════════════════════════════════════════════════════════════════════════════
# Group 5 - Static approximation and oracles
# ═══════════════════════════════════════════════════════════════════════════════


def test_static_equals_dynamic_without_coupling():
    result, lme = _lmes(_merit_pair(), demand_of(5.0))
    static = static_approximation(result.network, demand_of(5.0), result.solution, pqp=result.pqp)
    np.testing.assert_allclose(static.lme, lme.lme, atol=1e-10)


def test_storage_transport_equalizes_rates():
    battery = Storage(name="battery", node=0, capacity=10.0, power=10.0, efficiency=1.0,
                      initial_soc=5.0, terminal_soc_policy=TerminalPolicy("equal_to_initial"))
    net = single_node([gen("g", g_max=50.0, cost_lin=1.0, cost_quad=0.5, emis=0.8, T=2), battery], T=2)
    demand = demand_of(2.0, 6.0)
    result, lme = _lmes(net, demand)
    G = result.pqp.layout.scatter_outputs(result.solution.x)
    np.testing.assert_allclose(G[:, 0], [4.0, 4.0], atol=1e-3)
    assert not lme.degenerate
    np.testing.assert_allclose(lme.lme[:, 0], [0.8, 0.8], atol=1e-4)
    fd = finite_difference_lmes(net, demand)
    np.testing.assert_allclose(lme.lme, fd, atol=1e-4 * (1 + np.max(np.abs(fd))))


def test_finite_difference_single_generator():
    net = single_node([gen("g", g_max=100.0, cost_lin=2.0, cost_quad=0.1, emis=0.6, T=2)], T=2)
    fd = finite_difference_lmes(net, demand_of(10.0, 20.0))
    np.testing.assert_allclose(fd[:, 0], [0.6, 0.6], atol=1e-6)


def test_finite_difference_rejects_bad_step(toy_network, toy_demand):
    with pytest.raises(ValueError):
        finite_difference_lmes(toy_network, toy_demand, eps=0.0)


def test_toy_finite_difference(toy_network, toy_demand):
    np.testing.assert_allclose(finite_difference_lmes(toy_network, toy_demand), [[0.0], [0.0]], atol=1e-3)


@pytest.mark.slow
def test_finite_difference_oracle_random_instances():
    flagged, failures = 0, []
    seeds = range(100)
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        net, demand = random_case(seed, n_nodes=int(rng.integers(1, 6)), n_gens=int(rng.integers(2, 7)),
                                  horizon=int(rng.integers(1, 7)))
        _, lme = _lmes(net, demand)
        if lme.degenerate:
            flagged += 1
            continue
        fd = finite_difference_lmes(net, demand)
        gap = np.max(np.abs(fd - lme.lme) / (1 + np.abs(fd)))
        if gap > 1e-4:
            failures.append((seed, gap))
    print(f"\n📊 Degenerate instances: {flagged} of {len(seeds)}")
    assert flagged <= 10, f"{flagged} degenerate instances"
    assert len(failures) <= 0.05 * len(seeds), failures
