"""Expression trees over a fixed 20-token vocabulary.

Tokens are plain strings.  The 18 generative tokens build equation
skeletons (binary add/mul, nine unary operators, the constant
placeholder C and the variables x1..x6); SOS and PAD exist only for
sequence modelling and never appear inside a tree.

Trees are immutable and all functions here are pure.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np

PAD = "PAD"
SOS = "SOS"

BINARY_TOKENS = ("add", "mul")
UNARY_TOKENS = ("sin", "cos", "log", "exp", "neg", "inv", "sq", "cb", "sqrt")
CONSTANT_TOKEN = "C"
VARIABLE_TOKENS = ("x1", "x2", "x3", "x4", "x5", "x6")
LEAF_TOKENS = (CONSTANT_TOKEN,) + VARIABLE_TOKENS
GENERATIVE_TOKENS = BINARY_TOKENS + UNARY_TOKENS + LEAF_TOKENS

_ARITY = {t: 2 for t in BINARY_TOKENS}
_ARITY.update({t: 1 for t in UNARY_TOKENS})
_ARITY.update({t: 0 for t in LEAF_TOKENS})


class ExprError(Exception):
    """Base class for expression-level failures."""


class InvalidTokenError(ExprError):
    pass


class SequenceParseError(ExprError):
    """Pre-order token sequence does not encode exactly one tree."""


class InfixSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvalDomainError(ExprError):
    """log/sqrt outside their domain, or division by zero."""


class EvalNonFiniteError(ExprError):
    """Evaluation produced inf or NaN."""


def token_arity(token: str) -> int:
    """Child count required by a generative token (0, 1 or 2)."""
    try:
        return _ARITY[token]
    except KeyError:
        raise InvalidTokenError(f"not a generative token: {token!r}") from None


@dataclass(frozen=True)
class Node:
    """One tree node: a generative token plus exactly arity(token) children."""

    token: str
    children: tuple["Node", ...] = ()

    def __post_init__(self):
        need = token_arity(self.token)
        if len(self.children) != need:
            raise InvalidTokenError(
                f"{self.token} takes {need} children, got {len(self.children)}"
            )

    def node_count(self) -> int:
        return 1 + sum(c.node_count() for c in self.children)

    def __repr__(self):  # compact, e.g. add(mul(C, x1), x2)
        if not self.children:
            return self.token
        return f"{self.token}({', '.join(map(repr, self.children))})"


def leaf(token: str) -> Node:
    return Node(token)


def preorder_serialize(tree: Node) -> list[str]:
    """Depth-first, node before children, children left to right."""
    out: list[str] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        out.append(node.token)
        stack.extend(reversed(node.children))
    return out


def preorder_parse(seq: list[str]) -> Node:
    """Inverse of :func:`preorder_serialize`; rejects deficits and surpluses."""
    pos = 0

    def build() -> Node:
        nonlocal pos
        if pos >= len(seq):
            raise SequenceParseError(
                f"sequence ended with an incomplete tree (length {len(seq)})"
            )
        token = seq[pos]
        if token not in _ARITY:
            raise InvalidTokenError(f"not a generative token: {token!r}")
        pos += 1
        children = tuple(build() for _ in range(_ARITY[token]))
        return Node(token, children)

    tree = build()
    if pos != len(seq):
        raise SequenceParseError(
            f"tree complete after {pos} tokens but sequence has {len(seq)}"
        )
    return tree


class PrefixStatus(enum.Enum):
    COMPLETE = "complete"
    NEEDS_MORE = "needs_more"
    INVALID = "invalid"


def prefix_status(seq: list[str]) -> PrefixStatus:
    """Classify a token sequence as a pre-order prefix.

    Total function: unknown tokens or SOS/PAD anywhere make it INVALID,
    as does any token after the tree has already completed.
    """
    deficit = 1
    for token in seq:
        if token not in _ARITY or deficit == 0:
            return PrefixStatus.INVALID
        deficit += _ARITY[token] - 1
    return PrefixStatus.COMPLETE if deficit == 0 else PrefixStatus.NEEDS_MORE


def format_token_line(seq: list[str]) -> str:
    return " ".join(seq)


def parse_token_line(text: str) -> list[str]:
    tokens = text.split()
    for t in tokens:
        if t not in _ARITY and t not in (SOS, PAD):
            raise InvalidTokenError(f"unknown token name: {t!r}")
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    """The full 20-token vocabulary with a fixed token<->id bijection.

    Ids: PAD=0, SOS=1, then the generative tokens in declaration order.
    Sampling weights cover only the 18 generative tokens.
    """

    weights: dict[str, float] | None = None
    tokens: tuple[str, ...] = field(default=(PAD, SOS) + GENERATIVE_TOKENS, init=False)

    def __post_init__(self):
        assert len(self.tokens) == 20
        if self.weights is not None:
            extra = set(self.weights) - set(GENERATIVE_TOKENS)
            if extra:
                raise InvalidTokenError(f"weights for non-generative tokens: {extra}")
            missing = set(GENERATIVE_TOKENS) - set(self.weights)
            if missing:
                raise InvalidTokenError(f"missing sampling weights: {missing}")
            if any(w <= 0 for w in self.weights.values()):
                raise ValueError("sampling weights must be positive")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise InvalidTokenError(f"unknown token name: {token!r}") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise InvalidTokenError(f"token id out of range: {token_id}")
        return self.tokens[token_id]

    def encode(self, seq: list[str]) -> list[int]:
        return [self.id_of(t) for t in seq]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.token_of(i) for i in ids]


VOCAB = Vocabulary()
PAD_ID = VOCAB.id_of(PAD)
SOS_ID = VOCAB.id_of(SOS)


# ---------------------------------------------------------------------------
# Numeric evaluation
# ---------------------------------------------------------------------------

def evaluate(tree: Node, variables: dict[str, float], constants: list[float]) -> float:
    """Evaluate at a single point; constants are consumed per C leaf in
    pre-order position.  Raises on domain violations or non-finite results."""
    env = {k: np.asarray(v, dtype=np.float64) for k, v in variables.items()}
    out = evaluate_columns(tree, env, constants)
    return float(out)


def evaluate_columns(
    tree: Node, variables: dict[str, np.ndarray], constants: list[float]
) -> np.ndarray:
    """Vectorized evaluation over aligned variable arrays.

    Domain rules: log needs strictly positive input, sqrt non-negative,
    inv nonzero.  Any violating row fails the whole evaluation.
    """
    c_leaves = sum(1 for t in preorder_serialize(tree) if t == CONSTANT_TOKEN)
    if c_leaves != len(constants):
        raise ValueError(f"need {c_leaves} constants, got {len(constants)}")
    counter = [0]
    with np.errstate(all="ignore"):
        out = _eval(tree, variables, constants, counter)
    if not np.all(np.isfinite(out)):
        raise EvalNonFiniteError("evaluation produced a non-finite value")
    return out


def _eval(node, variables, constants, counter) -> np.ndarray:
    t = node.token
    if t == CONSTANT_TOKEN:
        value = constants[counter[0]]
        counter[0] += 1
        return np.asarray(value, dtype=np.float64)
    if t in VARIABLE_TOKENS:
        try:
            return np.asarray(variables[t], dtype=np.float64)
        except KeyError:
            raise EvalDomainError(f"no value supplied for variable {t}") from None
    args = [_eval(c, variables, constants, counter) for c in node.children]
    if t == "add":
        return args[0] + args[1]
    if t == "mul":
        return args[0] * args[1]
    if t == "sin":
        return np.sin(args[0])
    if t == "cos":
        return np.cos(args[0])
    if t == "log":
        if np.any(args[0] <= 0):
            raise EvalDomainError("log of a non-positive value")
        return np.log(args[0])
    if t == "exp":
        return np.exp(args[0])
    if t == "neg":
        return -args[0]
    if t == "inv":
        if np.any(args[0] == 0):
            raise EvalDomainError("division by zero")
        return 1.0 / args[0]
    if t == "sq":
        return args[0] ** 2
    if t == "cb":
        return args[0] ** 3
    if t == "sqrt":
        if np.any(args[0] < 0):
            raise EvalDomainError("sqrt of a negative value")
        return np.sqrt(args[0])
    raise InvalidTokenError(f"not an operator token: {t!r}")


# ---------------------------------------------------------------------------
# Infix text form
# ---------------------------------------------------------------------------
#
# Grammar (unary minus binds tighter than *, which binds tighter than +;
# ^ binds tightest; a-b is add(a, neg(b)), a/b is mul(a, inv(b)), and the
# literal 1 is allowed only as the numerator of 1/x, giving plain inv):
#
#   expr   := term (('+' | '-') term)*
#   term   := factor (('*' | '/') factor)*
#   factor := '-' factor | power
#   power  := atom ('^' ('2' | '3'))?
#   atom   := FUNC '(' expr ')' | 'C' | 'x1'..'x6' | '1' | '(' expr ')'

_TOKEN_RE = re.compile(r"\s*(?:(?P<name>[A-Za-z][A-Za-z0-9]*)|(?P<num>\d+(?:\.\d+)?)|(?P<op>[-+*/^()]))")
_FUNCS = {"sin", "cos", "log", "exp", "sqrt"}

_ONE = object()  # sentinel for the literal 1 in "1/x"


def _lex(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise InfixSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return tokens


class _InfixParser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _lex(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, "", len(self.text))

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, pos = self.next()
        if kind != "op" or text != op:
            raise InfixSyntaxError(f"expected {op!r}, found {text!r}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind is not None:
            raise InfixSyntaxError(f"trailing input {text!r}", pos)
        if node is _ONE:
            raise InfixSyntaxError("literal 1 is only allowed as 1/x", 0)
        return node

    def expr(self):
        left = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.next()
                right = self.term()
                right = Node("neg", (right,)) if text == "-" else right
                left = Node("add", (left, right))
            else:
                return left

    def term(self):
        left = self.factor()
        while True:
            kind, text, pos = self.peek()
            if kind == "op" and text in "*/":
                self.next()
                right = self.factor()
                if right is _ONE:
                    raise InfixSyntaxError("literal 1 is only allowed as 1/x", pos)
                if left is _ONE:
                    if text != "/":
                        raise InfixSyntaxError("literal 1 is only allowed as 1/x", pos)
                    left = Node("inv", (right,))
                elif text == "*":
                    left = Node("mul", (left, right))
                else:
                    left = Node("mul", (left, Node("inv", (right,))))
            else:
                return left

    def factor(self):
        kind, text, pos = self.peek()
        if kind == "op" and text == "-":
            self.next()
            inner = self.factor()
            if inner is _ONE:
                raise InfixSyntaxError("literal 1 is only allowed as 1/x", pos)
            return Node("neg", (inner,))
        return self.power()

    def power(self):
        base = self.atom()
        kind, text, pos = self.peek()
        if kind == "op" and text == "^":
            self.next()
            if base is _ONE:
                raise InfixSyntaxError("literal 1 is only allowed as 1/x", pos)
            kind, text, pos = self.next()
            if kind != "num" or text not in ("2", "3"):
                raise InfixSyntaxError("only exponents 2 and 3 are supported", pos)
            return Node("sq" if text == "2" else "cb", (base,))
        return base

    def atom(self):
        kind, text, pos = self.next()
        if kind == "op" and text == "(":
            inner = self.expr()
            self.expect_op(")")
            return inner
        if kind == "num":
            if text == "1":
                return _ONE
            raise InfixSyntaxError("numeric constants must be written as C", pos)
        if kind == "name":
            if text in _FUNCS:
                self.expect_op("(")
                inner = self.expr()
                self.expect_op(")")
                return Node(text, (inner,))
            if text in LEAF_TOKENS:
                return Node(text)
            raise InfixSyntaxError(f"unknown identifier {text!r}", pos)
        raise InfixSyntaxError(f"expected an expression, found {text!r}", pos)


def parse_infix(text: str) -> Node:
    """Parse the infix grammar above into a tree."""
    return _InfixParser(text).parse()


# rendering precedence levels
_P_ADD, _P_MUL, _P_UNARY, _P_POW, _P_ATOM = 1, 2, 3, 4, 5


def _render(node: Node) -> tuple[str, int]:
    t = node.token
    if t in LEAF_TOKENS:
        return t, _P_ATOM
    if t == "add":
        a, b = node.children
        if b.token == "neg":
            return f"{_wrap(a, _P_ADD)} - {_wrap(b.children[0], _P_MUL)}", _P_ADD
        return f"{_wrap(a, _P_ADD)} + {_wrap(b, _P_MUL)}", _P_ADD
    if t == "mul":
        a, b = node.children
        if b.token == "inv":
            return f"{_wrap(a, _P_MUL)}/{_wrap(b.children[0], _P_UNARY)}", _P_MUL
        return f"{_wrap(a, _P_MUL)}*{_wrap(b, _P_UNARY)}", _P_MUL
    if t == "neg":
        return f"-{_wrap(node.children[0], _P_UNARY)}", _P_UNARY
    if t == "inv":
        return f"1/{_wrap(node.children[0], _P_UNARY)}", _P_MUL
    if t == "sq":
        return f"{_wrap(node.children[0], _P_ATOM)}^2", _P_POW
    if t == "cb":
        return f"{_wrap(node.children[0], _P_ATOM)}^3", _P_POW
    return f"{t}({_render(node.children[0])[0]})", _P_ATOM


def _wrap(node: Node, min_prec: int) -> str:
    text, prec = _render(node)
    return f"({text})" if prec < min_prec else text


def print_infix(tree: Node) -> str:
    """Render a tree in the infix grammar; parse_infix(print_infix(t)) == t."""
    return _render(tree)[0]
