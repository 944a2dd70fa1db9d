import numpy as np
import pytest

from app.lab.quadrature import gauss_legendre, integrate, panel_rule, uniform_edges


def test_rule_is_read_only():
    nodes, weights = gauss_legendre(8)
    with pytest.raises(ValueError):
        nodes[0] = 0.0
    assert weights.sum() == pytest.approx(2.0)


def test_panel_rule_polynomial_exact():
    nodes, weights = panel_rule(np.array([0.0, 0.5, 2.0]), 4)
    assert np.sum(nodes ** 7 * weights) == pytest.approx(2.0 ** 8 / 8, rel=1e-13)


def test_uniform_edges_include_breakpoints():
    edges = uniform_edges(0.0, 1.0, 0.25, breakpoints=(0.1, 2.0))
    assert 0.1 in edges and 2.0 not in edges
    assert edges[0] == 0.0 and edges[-1] == 1.0
    assert np.all(np.diff(edges) > 0)


def test_integrate_in_batches():
    edges = uniform_edges(0.0, np.pi, 0.1)
    assert integrate(np.sin, edges, n=8, batch=7) == pytest.approx(2.0, rel=1e-13)
