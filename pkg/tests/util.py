"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from srforge.expr_core import (
    BINARY_TOKENS,
    GENERATIVE_TOKENS,
    LEAF_TOKENS,
    UNARY_TOKENS,
    Node,
)


def random_tree(rng: np.random.Generator, max_nodes: int = 12) -> Node:
    """Random valid tree, independent of the production sampler.

    Grows top-down with a node budget; once the committed size reaches the
    budget only leaves are drawn, so the result has at most max_nodes + 1
    nodes.
    """
    def grow(budget: int) -> tuple[Node, int]:
        if budget <= 1:
            return Node(rng.choice(LEAF_TOKENS)), 1
        kind = rng.integers(0, 3)
        if kind == 0:
            return Node(rng.choice(LEAF_TOKENS)), 1
        if kind == 1:
            child, used = grow(budget - 1)
            return Node(rng.choice(UNARY_TOKENS), (child,)), used + 1
        left, used_l = grow((budget - 1) // 2)
        right, used_r = grow(budget - 1 - used_l)
        return Node(rng.choice(BINARY_TOKENS), (left, right)), used_l + used_r + 1

    return grow(max_nodes)[0]


def tree_strategy(max_leaves: int = 8) -> st.SearchStrategy[Node]:
    """Hypothesis strategy over valid trees."""
    leaves = st.sampled_from(LEAF_TOKENS).map(Node)
    return st.recursive(
        leaves,
        lambda children: st.one_of(
            st.tuples(st.sampled_from(UNARY_TOKENS), children).map(
                lambda p: Node(p[0], (p[1],))
            ),
            st.tuples(st.sampled_from(BINARY_TOKENS), children, children).map(
                lambda p: Node(p[0], (p[1], p[2]))
            ),
        ),
        max_leaves=max_leaves,
    )


def token_strategy() -> st.SearchStrategy[str]:
    return st.sampled_from(GENERATIVE_TOKENS)


def fd_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the scalar f() wrt x, perturbing x
    in place element by element; the step scales with the magnitude."""
    grad = np.zeros(x.shape, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = float(x[i])
        step = h * max(1.0, abs(orig))
        x[i] = orig + step
        fp = float(f())
        x[i] = orig - step
        fm = float(f())
        x[i] = orig
        grad[i] = (fp - fm) / (2.0 * step)
        it.iternext()
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Norm-relative disagreement between two gradient arrays.

    The denominator floor sits above finite-difference roundoff noise so
    parameters whose true gradient is exactly zero (for example a
    key-projection bias under softmax shift invariance) compare noise
    against noise instead of dividing by it; any genuinely wrong
    gradient still produces an O(1) relative error.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
