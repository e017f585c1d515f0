"""Shared fixtures for the marginal emissions test suite."""

import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from grid_model import (
    DemandSchedule,
    Network,
    StaticGenerator,
    load_demand,
    load_network,
)

DATA_DIR = os.path.join(_ROOT, "data")


def data_path(name: str) -> str:
    return os.path.join(DATA_DIR, name)


def gen(name, node=0, g_max=10.0, cost_lin=0.0, cost_quad=0.0, emis=0.0, T=1, g_min=0.0):
    """Static generator with constant bounds over T periods."""
    return StaticGenerator(
        name=name, node=node, g_min=np.full(T, g_min, dtype=float), g_max=np.full(T, g_max, dtype=float),
        cost_quad=cost_quad, cost_lin=cost_lin, emis_rate=emis,
    )


def single_node(devices, T=1) -> Network:
    return Network(n_nodes=1, lines=(), ptdf=np.zeros((0, 1)), line_limits=np.zeros(0),
                   devices=tuple(devices), horizon=T)


def demand_of(*rows) -> DemandSchedule:
    return DemandSchedule(np.array(rows, dtype=float).reshape(len(rows), -1))


@pytest.fixture
def toy_network():
    return load_network(data_path("toy_network.json"))


@pytest.fixture
def toy_demand():
    return load_demand(data_path("toy_demand.csv"), n_nodes=1)


@pytest.fixture
def three_bus():
    net = load_network(data_path("three_bus_network.json"))
    return net, load_demand(data_path("three_bus_demand.csv"), n_nodes=net.n_nodes)
