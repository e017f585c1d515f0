"""
Dashboard figure helpers - Test Suite.

Proves:
  1. node_long_frame melts a T x n matrix into Period / Node / value rows
  2. lme_figure draws dynamic, static and (optionally) the rolling band
  3. deviation_figure refuses reports without static rates
"""

import numpy as np
import pytest

pytest.importorskip("streamlit")
pytest.importorskip("plotly")

from analysis import ScenarioReport
from dashboard import deviation_figure, dispatch_figure, lme_figure, node_long_frame, price_figure


def _report(with_static=True):
    T, n = 6, 2
    lme = np.linspace(0.1, 1.2, T * n).reshape(T, n)
    return ScenarioReport(
        device_names=["coal", "battery"], n_nodes=n, horizon=T, period_hours=1.0,
        dispatch=np.ones((T, 2)), lmp=np.full((T, n), 20.0), flows=np.zeros((T, 1)),
        emissions_total=6.0, emissions_per_period=np.ones(T), lme_dynamic=lme,
        lme_static=lme + 0.1 if with_static else None,
    )


def test_node_long_frame():
    df = node_long_frame(np.array([[1.0, 2.0], [3.0, 4.0]]), "LME")
    assert list(df.columns) == ["Period", "Node", "LME"]
    assert len(df) == 4
    assert df.loc[(df["Period"] == 1) & (df["Node"] == "node_0"), "LME"].item() == 3.0


def test_lme_figure_traces():
    assert len(lme_figure(_report(), node=0).data) == 2
    assert len(lme_figure(_report(), node=1, window_fraction=0.5).data) == 5
    assert len(lme_figure(_report(with_static=False), node=0).data) == 1


def test_other_figures():
    assert len(dispatch_figure(_report()).data) == 2
    assert len(price_figure(_report()).data) == 2
    assert len(deviation_figure(_report()).data) == 1
    with pytest.raises(ValueError):
        deviation_figure(_report(with_static=False))
