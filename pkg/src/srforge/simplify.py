"""Deterministic canonical rewriting of expression trees.

A fixed rule set is applied bottom-up to a fixpoint:

  1. constant folding: any maximal subtree whose leaves are all C
     collapses to a single C;
  2. involution elimination: neg(neg(u)) -> u, inv(inv(u)) -> u;
  3. inverse pairs: log(exp(u)) -> u, exp(log(u)) -> u, sq(sqrt(u)) -> u
     (sqrt(sq(u)) is NOT rewritten: it only holds for u >= 0);
  4. commutative canonical ordering: children of add/mul sorted by
     (node count, pre-order token-id sequence);
  5. neg hoisting out of mul: mul(neg(a), b) -> neg(mul(a, b)), from
     either child, with an even number of negs cancelling.

Every rule strictly decreases a well-founded measure: rules 1-3 shrink
the node count, rule 5 lowers the summed mul-ancestor depth of neg
nodes, rule 4 removes ordering violations.  Rewriting therefore
terminates, and the result is idempotent under re-simplification.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .expr_core import CONSTANT_TOKEN, VARIABLE_TOKENS, VOCAB, Node, preorder_serialize

_C_LEAF = Node(CONSTANT_TOKEN)

_INVERSE_PAIRS = {"log": "exp", "exp": "log", "sq": "sqrt"}


def _sort_key(node: Node) -> tuple[int, tuple[int, ...]]:
    return node.node_count(), tuple(VOCAB.id_of(t) for t in preorder_serialize(node))


def _fold_constants(node: Node) -> Optional[Node]:
    if node.children and all(c == _C_LEAF for c in node.children):
        return _C_LEAF
    return None


def _eliminate_involution(node: Node) -> Optional[Node]:
    if node.token in ("neg", "inv") and node.children[0].token == node.token:
        return node.children[0].children[0]
    return None


def _cancel_inverse_pair(node: Node) -> Optional[Node]:
    inner = _INVERSE_PAIRS.get(node.token)
    if inner is not None and node.children[0].token == inner:
        return node.children[0].children[0]
    return None


def _hoist_neg_from_mul(node: Node) -> Optional[Node]:
    if node.token != "mul" or not any(c.token == "neg" for c in node.children):
        return None
    parity = sum(c.token == "neg" for c in node.children) % 2
    stripped = tuple(c.children[0] if c.token == "neg" else c for c in node.children)
    product = _apply_local(Node("mul", stripped))
    return Node("neg", (product,)) if parity else product


def _order_commutative(node: Node) -> Optional[Node]:
    if node.token not in ("add", "mul"):
        return None
    ordered = tuple(sorted(node.children, key=_sort_key))
    if ordered == node.children:
        return None
    return Node(node.token, ordered)


@dataclass(frozen=True)
class RewriteRule:
    """A local rewrite; apply() assumes the node's children are already
    in normal form and returns None when the rule does not match."""

    name: str
    apply: Callable[[Node], Optional[Node]]


RULES: tuple[RewriteRule, ...] = (
    RewriteRule("constant-folding", _fold_constants),
    RewriteRule("involution", _eliminate_involution),
    RewriteRule("inverse-pair", _cancel_inverse_pair),
    RewriteRule("neg-hoist", _hoist_neg_from_mul),
    RewriteRule("commutative-order", _order_commutative),
)

_MAX_LOCAL_STEPS = 1000


def _apply_local(node: Node) -> Node:
    for _ in range(_MAX_LOCAL_STEPS):
        for rule in RULES:
            rewritten = rule.apply(node)
            if rewritten is not None:
                node = rewritten
                break
        else:
            return node
    raise AssertionError("rewrite did not reach a local fixpoint")


def _normalize(node: Node) -> Node:
    if not node.children:
        return node
    children = tuple(_normalize(c) for c in node.children)
    return _apply_local(Node(node.token, children))


def simplify(tree: Node) -> Node:
    """Rewrite to the canonical fixpoint of the rule set; idempotent."""
    current = _normalize(tree)
    for _ in range(8):
        again = _normalize(current)
        if again == current:
            return current
        current = again
    raise AssertionError("simplify did not stabilize")


def canonical_key(tree: Node) -> str:
    """Dedup key: the pre-order token text; equal keys iff equal trees."""
    return " ".join(preorder_serialize(tree))


REJECT_SINGLE_LEAF = "single-leaf"
REJECT_NO_CONSTANT = "no-constant"
REJECT_NO_VARIABLE = "no-variable"
REJECT_TOO_LONG = "too-long"

MAX_SKELETON_TOKENS = 30


def validate_skeleton(tree: Node, max_tokens: int = MAX_SKELETON_TOKENS) -> Optional[str]:
    """None if the (simplified) tree is a usable skeleton, else the
    rejection reason: a bare leaf, no C, no variable, or too many tokens."""
    tokens = preorder_serialize(tree)
    if len(tokens) == 1:
        return REJECT_SINGLE_LEAF
    if CONSTANT_TOKEN not in tokens:
        return REJECT_NO_CONSTANT
    if not any(t in VARIABLE_TOKENS for t in tokens):
        return REJECT_NO_VARIABLE
    if len(tokens) > max_tokens:
        return REJECT_TOO_LONG
    return None
