"""
Synthetic Networks - Seeded Test Systems for the Marginal Emissions Toolkit

Generates reproducible random networks and demand schedules:
- random_case: small meshed networks for gradient checks
- scale_case: a 60-node, 100-line, 40-generator day for timing checks
- storage_case: a 3-node day with solar, gas, coal and batteries

Every generator takes a seed; identical seeds give identical networks.

Author: Claire Namusoke
Date: October 2026
"""

from typing import List, Optional, Tuple

import numpy as np

from grid_model import (
    DemandSchedule,
    Line,
    Network,
    RampGenerator,
    StaticGenerator,
    Storage,
    TerminalPolicy,
    compute_ptdf,
)


def _random_lines(rng: np.random.Generator, n_nodes: int, n_lines: int,
                  rating: Tuple[float, float]) -> List[Line]:
    """Random spanning tree plus extra random edges (parallel lines allowed)."""
    if n_nodes > 1 and n_lines < n_nodes - 1:
        raise ValueError(f"{n_lines} lines cannot connect {n_nodes} nodes")
    order = rng.permutation(n_nodes)
    pairs = [(int(order[i]), int(order[rng.integers(0, i)])) for i in range(1, n_nodes)]
    while len(pairs) < n_lines:
        a, b = rng.choice(n_nodes, size=2, replace=False)
        pairs.append((int(a), int(b)))
    return [
        Line(a, b, float(rng.uniform(1.0, 10.0)), float(rng.uniform(*rating)))
        for a, b in pairs
    ]


def _network(n_nodes: int, lines: List[Line], devices, horizon: int) -> Network:
    return Network(
        n_nodes=n_nodes,
        lines=tuple(lines),
        ptdf=compute_ptdf(lines, n_nodes),
        line_limits=np.array([l.rating for l in lines]),
        devices=tuple(devices),
        horizon=horizon,
    )


def random_case(seed: int, n_nodes: int = 3, n_gens: int = 4, horizon: int = 3,
                n_lines: Optional[int] = None, n_storage: int = 0, n_ramp: int = 0,
                rating: Tuple[float, float] = (5.0, 15.0)) -> Tuple[Network, DemandSchedule]:
    """
    Small random network with strictly convex generator costs.

    Quadratic cost coefficients are drawn from [1e-3, 1] and linear costs from
    [5, 50] $/MWh, so cost ties have probability zero. The last n_ramp
    generators are ramp-limited and n_storage batteries start half full.

    Returns:
        Tuple: (network, demand schedule)
    """
    rng = np.random.default_rng(seed)
    n_lines = n_nodes if n_lines is None else n_lines
    n_lines = 0 if n_nodes == 1 else max(n_lines, n_nodes - 1)
    lines = _random_lines(rng, n_nodes, n_lines, rating)

    devices = []
    for j in range(n_gens):
        node = int(rng.integers(0, n_nodes))
        g_max = np.full(horizon, float(rng.uniform(5.0, 20.0)))
        common = dict(
            name=f"gen_{j}", node=node, g_min=np.zeros(horizon), g_max=g_max,
            cost_quad=float(rng.uniform(1e-3, 1.0)), cost_lin=float(rng.uniform(5.0, 50.0)),
            emis_rate=float(rng.uniform(0.0, 1.2)),
        )
        if j >= n_gens - n_ramp:
            devices.append(RampGenerator(**common, ramp=float(rng.uniform(2.0, 6.0))))
        else:
            devices.append(StaticGenerator(**common))
    for s in range(n_storage):
        capacity = float(rng.uniform(5.0, 15.0))
        devices.append(Storage(
            name=f"battery_{s}", node=int(rng.integers(0, n_nodes)), capacity=capacity,
            power=float(rng.uniform(2.0, 5.0)), efficiency=float(rng.uniform(0.85, 1.0)),
            initial_soc=capacity / 2, cost_quad=float(rng.uniform(1e-3, 1e-2)),
        ))

    total_cap = sum(float(d.g_max[0]) for d in devices if not isinstance(d, Storage))
    demand = rng.uniform(0.1, 0.6, size=(horizon, n_nodes)) * total_cap / n_nodes
    return _network(n_nodes, lines, devices, horizon), DemandSchedule(demand)


def _daily_profile(horizon: int, low: float, high: float) -> np.ndarray:
    hours = np.arange(horizon) % 24
    shape = 0.5 - 0.5 * np.cos(2 * np.pi * (hours - 4) / 24)
    return low + (high - low) * shape


def scale_case(seed: int = 0, n_nodes: int = 60, n_lines: int = 100, n_gens: int = 40,
               horizon: int = 24) -> Tuple[Network, DemandSchedule]:
    """Day-long dispatch on a mid-size meshed network."""
    rng = np.random.default_rng(seed)
    lines = _random_lines(rng, n_nodes, n_lines, (40.0, 120.0))
    devices = []
    for j in range(n_gens):
        g_max = np.full(horizon, float(rng.uniform(20.0, 80.0)))
        devices.append(StaticGenerator(
            name=f"gen_{j}", node=int(rng.integers(0, n_nodes)), g_min=np.zeros(horizon), g_max=g_max,
            cost_quad=float(rng.uniform(1e-3, 0.1)), cost_lin=float(rng.uniform(5.0, 60.0)),
            emis_rate=float(rng.uniform(0.0, 1.2)),
        ))
    total_cap = sum(float(d.g_max[0]) for d in devices)
    weights = rng.uniform(0.5, 1.5, size=n_nodes)
    weights /= weights.sum()
    level = _daily_profile(horizon, 0.3, 0.7) * total_cap
    demand = np.outer(level, weights)
    return _network(n_nodes, lines, devices, horizon), DemandSchedule(demand)


def storage_case(seed: int = 0, with_storage: bool = True,
                 horizon: int = 24) -> Tuple[Network, DemandSchedule]:
    """
    Three nodes in a ring with solar at node 0, gas at node 1 and coal at node 2.

    Midday solar exceeds midday demand, so batteries shift cheap clean energy
    into the evening. With with_storage=False the same system has no
    batteries and no coupling between periods.
    """
    rng = np.random.default_rng(seed)
    lines = [Line(0, 1, 5.0, 60.0), Line(1, 2, 5.0, 60.0), Line(2, 0, 5.0, 60.0)]
    hours = np.arange(horizon) % 24
    solar = np.clip(np.sin(np.pi * (hours - 6) / 12), 0.0, None) * 80.0
    devices = [
        StaticGenerator(name="solar", node=0, g_min=np.zeros(horizon), g_max=solar,
                        cost_quad=1e-3, cost_lin=0.5, emis_rate=0.0),
        StaticGenerator(name="gas", node=1, g_min=np.zeros(horizon), g_max=np.full(horizon, 60.0),
                        cost_quad=0.02, cost_lin=35.0, emis_rate=0.45),
        StaticGenerator(name="coal", node=2, g_min=np.zeros(horizon), g_max=np.full(horizon, 60.0),
                        cost_quad=0.01, cost_lin=25.0, emis_rate=1.0),
    ]
    if with_storage:
        devices += [
            Storage(name="battery_0", node=0, capacity=120.0, power=30.0, efficiency=0.95,
                    initial_soc=20.0, terminal_soc_policy=TerminalPolicy("equal_to_initial"),
                    cost_quad=1e-3),
            Storage(name="battery_2", node=2, capacity=60.0, power=20.0, efficiency=0.9,
                    initial_soc=10.0, terminal_soc_policy=TerminalPolicy("equal_to_initial"),
                    cost_quad=1e-3),
        ]
    base = _daily_profile(horizon, 25.0, 45.0)
    noise = rng.uniform(0.95, 1.05, size=(horizon, 3))
    demand = base[:, None] * np.array([0.8, 1.0, 1.2])[None, :] * noise
    return _network(3, lines, devices, horizon), DemandSchedule(demand)
