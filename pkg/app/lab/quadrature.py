# app/lab/quadrature.py

from functools import lru_cache
from typing import Callable

import numpy as np


@lru_cache(maxsize=16)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point rule on [-1, 1]"""
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def panel_rule(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Composite Gauss-Legendre rule over consecutive panels

    Args:
        edges: Increasing panel boundaries (length P + 1)
        n: Nodes per panel

    Returns:
        Flattened nodes and weights, panel by panel
    """
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(n)
    half = 0.5 * np.diff(edges)[:, None]
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    return (mid + half * x).ravel(), (half * w).ravel()


def uniform_edges(a: float, b: float, width: float, breakpoints=()) -> np.ndarray:
    """Panels of at most `width` on [a, b], with extra boundaries at breakpoints"""
    n = max(int(np.ceil((b - a) / width)), 1)
    edges = np.linspace(a, b, n + 1)
    extra = [p for p in breakpoints if a < p < b]
    if extra:
        edges = np.unique(np.concatenate([edges, extra]))
    return edges


def integrate(fn: Callable[[np.ndarray], np.ndarray], edges: np.ndarray, n: int = 32, batch: int = 1 << 16):
    """Sum of fn over a composite rule, evaluated in batches of nodes"""
    nodes, weights = panel_rule(edges, n)
    total = 0.0
    for start in range(0, nodes.size, batch):
        sl = slice(start, start + batch)
        total = total + np.sum(fn(nodes[sl]) * weights[sl])
    return total
