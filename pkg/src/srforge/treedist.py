"""Ordered tree edit distance (Zhang & Shasha) over expression trees.

Edit operations are node insertion, deletion, and relabeling, all at
unit cost; relabeling is free iff the token kinds are equal, so C only
matches C and x1 only matches x1.  The normalized form divides by the
ground-truth node count and clamps at 1.

Trees are compared exactly as given: callers that want order-insensitive
comparison should pass both sides through simplify() first.
"""

from __future__ import annotations

from dataclasses import dataclass

from .expr_core import Node


@dataclass(frozen=True)
class LabeledOrderedTree:
    """Post-order view of a tree: labels[k] is the token of post-order
    node k (1-based), lml[k] the post-order index of its leftmost leaf
    descendant, keyroots the nodes with no proper ancestor sharing
    their leftmost leaf."""

    labels: tuple[str, ...]
    lml: tuple[int, ...]
    keyroots: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.labels) - 1

    @classmethod
    def from_expr(cls, tree: Node) -> "LabeledOrderedTree":
        labels: list[str] = [""]  # 1-based
        lml: list[int] = [0]
        # iterative post-order with explicit leftmost-leaf propagation
        stack: list[tuple[Node, bool]] = [(tree, False)]
        first_leaf: dict[int, int] = {}
        while stack:
            node, expanded = stack.pop()
            if not expanded:
                stack.append((node, True))
                for child in reversed(node.children):
                    stack.append((child, False))
            else:
                index = len(labels)
                if node.children:
                    # children were numbered already; the leftmost leaf of
                    # the first child is this node's leftmost leaf
                    first = first_leaf.pop(id(node.children[0]))
                    for child in node.children[1:]:
                        first_leaf.pop(id(child))
                else:
                    first = index
                labels.append(node.token)
                lml.append(first)
                first_leaf[id(node)] = first
        seen: dict[int, int] = {}
        for k in range(1, len(labels)):
            seen[lml[k]] = k  # last (highest post-order) wins
        keyroots = tuple(sorted(seen.values()))
        return cls(tuple(labels), tuple(lml), keyroots)


def ted(a: Node, b: Node) -> int:
    """Minimum unit-cost edit script turning a into b."""
    ta = LabeledOrderedTree.from_expr(a)
    tb = LabeledOrderedTree.from_expr(b)
    n, m = ta.size, tb.size
    td = [[0] * (m + 1) for _ in range(n + 1)]
    for i in ta.keyroots:
        for j in tb.keyroots:
            _forest_distance(i, j, ta, tb, td)
    return td[n][m]


def _forest_distance(i: int, j: int, ta: LabeledOrderedTree, tb: LabeledOrderedTree, td: list[list[int]]) -> None:
    li, lj = ta.lml[i], tb.lml[j]
    ioff, joff = li - 1, lj - 1
    fd = [[0] * (j - joff + 1) for _ in range(i - ioff + 1)]
    for x in range(li, i + 1):
        fd[x - ioff][0] = fd[x - 1 - ioff][0] + 1
    for y in range(lj, j + 1):
        fd[0][y - joff] = fd[0][y - 1 - joff] + 1
    for x in range(li, i + 1):
        for y in range(lj, j + 1):
            if ta.lml[x] == li and tb.lml[y] == lj:
                relabel = 0 if ta.labels[x] == tb.labels[y] else 1
                fd[x - ioff][y - joff] = min(
                    fd[x - 1 - ioff][y - joff] + 1,
                    fd[x - ioff][y - 1 - joff] + 1,
                    fd[x - 1 - ioff][y - 1 - joff] + relabel,
                )
                td[x][y] = fd[x - ioff][y - joff]
            else:
                fd[x - ioff][y - joff] = min(
                    fd[x - 1 - ioff][y - joff] + 1,
                    fd[x - ioff][y - 1 - joff] + 1,
                    fd[ta.lml[x] - 1 - ioff][tb.lml[y] - 1 - joff] + td[x][y],
                )


def normalized_ted(pred: Node, truth: Node) -> float:
    """min(1, edit distance / truth node count); 0 iff trees identical."""
    return min(1.0, ted(pred, truth) / truth.node_count())
