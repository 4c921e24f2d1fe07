"""Expression trees for surrogate losses.

A tree is built from three leaf kinds -- ``p`` (logits), ``q`` (one-hot labels)
and real constants -- and the twelve primitives of :class:`OpKind`. Trees are
immutable; genetic operators build new trees and share unchanged subtrees.

Text form is a parenthesised prefix expression::

    (exp (neg (max (softmax (add p (mul 2 (softmax (mul 5 p))))))))

``(div a b)`` and ``(sub a b)`` are accepted as sugar for ``(mul a (inv b))``
and ``(add a (neg b))``.
"""
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ArityError, ParseError, ShapeError, UnknownOperatorError
from .numerics import ALL_OPS, GAMMA, OpKind, apply_op, quiet, vjp

MAX_DEPTH = 25


@dataclass(frozen=True)
class Leaf:
    name: str
    value: float = 0.0

    def __post_init__(self):
        if self.name not in ("p", "q", "const"):
            raise ValueError(f"unknown leaf {self.name!r}")

    @property
    def depth(self):
        return 1

    @property
    def size(self):
        return 1

    @property
    def has_p(self):
        return self.name == "p"


@dataclass(frozen=True)
class Op:
    kind: OpKind
    children: tuple
    depth: int = field(init=False, compare=False, repr=False)
    size: int = field(init=False, compare=False, repr=False)
    has_p: bool = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        children = tuple(self.children)
        if len(children) != self.kind.arity:
            raise ArityError(f"{self.kind.value} takes {self.kind.arity} operand(s), got {len(children)}")
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "depth", 1 + max(c.depth for c in children))
        object.__setattr__(self, "size", 1 + sum(c.size for c in children))
        object.__setattr__(self, "has_p", any(c.has_p for c in children))


P = Leaf("p")
Q = Leaf("q")


def Const(value):
    return Leaf("const", float(value))


ZERO = Const(0.0)
ONE = Const(1.0)
GP_LEAVES = (P, Q, ZERO, ONE)


def op(kind, *children):
    if isinstance(kind, str):
        kind = OpKind(kind)
    return Op(kind, children)


def depth(tree):
    return tree.depth


def size(tree):
    return tree.size


# --------------------------------------------------------------------------
# evaluation context

@dataclass(frozen=True)
class EvalContext:
    """Logits ``p`` and one-hot labels ``q``, both (N, C)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        if self.p.shape != self.q.shape or self.p.ndim != 2:
            raise ShapeError(f"p {self.p.shape} and q {self.q.shape} must be equal 2-D shapes")

    @property
    def n(self):
        return self.p.shape[0]

    @property
    def labels(self):
        return np.argmax(self.q, axis=1)


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    q = np.zeros((labels.shape[0], num_classes))
    q[np.arange(labels.shape[0]), labels] = 1.0
    return q


def make_context(p, labels):
    p = np.asarray(p, dtype=np.float64)
    return EvalContext(p, one_hot(labels, p.shape[1]))


# --------------------------------------------------------------------------
# evaluation and gradient

def _leaf_value(leaf, ctx):
    if leaf.name == "p":
        return ctx.p
    if leaf.name == "q":
        return ctx.q
    return np.full((ctx.n, 1), leaf.value)


def _record(tree, ctx, gamma, tape, path):
    """Post-order forward pass; appends (node, child_slots, value) to tape."""
    if isinstance(tree, Leaf):
        tape.append((tree, (), _leaf_value(tree, ctx)))
        return len(tape) - 1
    slots = tuple(_record(c, ctx, gamma, tape, path + (i,)) for i, c in enumerate(tree.children))
    args = [tape[s][2] for s in slots]
    try:
        value = apply_op(tree.kind, *args, gamma=gamma)
    except ShapeError as exc:
        where = "root" if not path else "root." + ".".join(map(str, path))
        err = ShapeError(f"{exc} in subtree {where}: {to_text(tree)}")
        err.path = path
        raise err from exc
    tape.append((tree, slots, value))
    return len(tape) - 1


def eval_tree(tree, ctx, gamma=GAMMA):
    """Evaluate ``tree`` on a context, returning an (N, C) or (N, 1) array."""
    if isinstance(tree, Leaf):
        return _leaf_value(tree, ctx)
    tape = []
    with quiet():
        _record(tree, ctx, gamma, tape, ())
    return tape[-1][2]


def scalarize(o):
    """Mean over rows of the row sums."""
    with quiet():
        return float(np.mean(np.sum(o, axis=1)))


def value_and_grad(tree, ctx, gamma=GAMMA, reduction="mean"):
    """Return ``(scalar loss, d loss / d p)``.

    With ``reduction="sum"`` the gradient is that of ``N * loss``; each row
    then depends only on its own sample, independent of batch size.
    """
    tape = []
    with quiet():
        _record(tree, ctx, gamma, tape, ())
        out = tape[-1][2]
        loss = scalarize(out)
        grad_p = np.zeros_like(ctx.p)
        if not tree.has_p:
            return loss, grad_p
        fill = 1.0 / ctx.n if reduction == "mean" else 1.0
        grads = [None] * len(tape)
        grads[-1] = np.full(out.shape, fill)
        for idx in range(len(tape) - 1, -1, -1):
            node, slots, value = tape[idx]
            g = grads[idx]
            if g is None or not node.has_p:
                continue
            if isinstance(node, Leaf):
                grad_p += g
                continue
            ins = tuple(tape[s][2] for s in slots)
            parts = vjp(node.kind, ins, g, gamma=gamma, output=value)
            for s, child, part in zip(slots, node.children, parts):
                if not child.has_p:
                    continue
                grads[s] = part if grads[s] is None else grads[s] + part
    return loss, grad_p


def grad_wrt_p(tree, ctx, gamma=GAMMA):
    return value_and_grad(tree, ctx, gamma)[1]


# --------------------------------------------------------------------------
# text form

_SUGAR = {"div": 2, "sub": 2}
_OP_NAMES = {k.value: k for k in ALL_OPS}
_TOKEN = re.compile(r"\s*(?:(\()|(\))|([^\s()]+))")
_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf|nan")


def _format_const(v):
    if v != v or v in (float("inf"), float("-inf")):
        return repr(v)
    if v == 0.0:
        return "-0" if np.signbit(v) else "0"
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def to_text(tree):
    """Render a tree in the prefix grammar; inverse of :func:`parse`."""
    if isinstance(tree, Leaf):
        return tree.name if tree.name != "const" else _format_const(tree.value)
    return "(" + tree.kind.value + " " + " ".join(to_text(c) for c in tree.children) + ")"


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if not m:
            break
        start = m.start(m.lastindex)
        tokens.append((m.group(m.lastindex), start))
        pos = m.end()
    rest = source[pos:]
    if rest.strip():
        raise ParseError("unexpected input", pos)
    return tokens


def parse(source):
    """Parse one expression. Raises ParseError / ArityError with positions."""
    tokens = _tokenize(source)
    if not tokens:
        raise ParseError("empty expression", 0)
    tree, i = _parse_at(tokens, 0, len(source))
    if i != len(tokens):
        raise ParseError(f"trailing token {tokens[i][0]!r}", tokens[i][1])
    return tree


def _parse_at(tokens, i, end):
    if i >= len(tokens):
        raise ParseError("unexpected end of input", end)
    tok, pos = tokens[i]
    if tok == ")":
        raise ParseError("unexpected ')'", pos)
    if tok != "(":
        if tok == "p":
            return P, i + 1
        if tok == "q":
            return Q, i + 1
        if _NUMBER.fullmatch(tok):
            return Const(float(tok)), i + 1
        raise ParseError(f"unknown symbol {tok!r}", pos)
    if i + 1 >= len(tokens):
        raise ParseError("unexpected end of input", end)
    name, name_pos = tokens[i + 1]
    if name in ("(", ")"):
        raise ParseError("expected operator name", name_pos)
    if name not in _OP_NAMES and name not in _SUGAR:
        raise UnknownOperatorError(f"unknown operator {name!r}", name_pos)
    j = i + 2
    args = []
    while True:
        if j >= len(tokens):
            raise ParseError(f"unclosed '(' for {name}", pos)
        if tokens[j][0] == ")":
            j += 1
            break
        child, j = _parse_at(tokens, j, end)
        args.append(child)
    arity = _SUGAR.get(name) or _OP_NAMES[name].arity
    if len(args) != arity:
        raise ArityError(f"{name} takes {arity} operand(s), got {len(args)} (at position {name_pos})")
    if name == "div":
        return Op(OpKind.MUL, (args[0], Op(OpKind.INV, (args[1],)))), j
    if name == "sub":
        return Op(OpKind.ADD, (args[0], Op(OpKind.NEG, (args[1],)))), j
    return Op(_OP_NAMES[name], tuple(args)), j


def load_expr(path):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def save_expr(tree, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_text(tree) + "\n")


# --------------------------------------------------------------------------
# structure helpers for genetic operators

def iter_paths(tree, path=()):
    """Yield (path, subtree) pairs in pre-order; a path is a tuple of child indices."""
    yield path, tree
    if isinstance(tree, Op):
        for i, c in enumerate(tree.children):
            yield from iter_paths(c, path + (i,))


def subtree_at(tree, path):
    for i in path:
        tree = tree.children[i]
    return tree


def replace_at(tree, path, new):
    if not path:
        return new
    head, rest = path[0], path[1:]
    children = list(tree.children)
    children[head] = replace_at(children[head], rest, new)
    return Op(tree.kind, tuple(children))


def path_depth(path):
    """Depth (1-based) of the node at ``path``."""
    return len(path) + 1


# --------------------------------------------------------------------------
# random generation

def random_tree(rng, min_depth, max_depth, method="grow"):
    """Random GP tree over leaves {p, q, 0, 1} and all twelve primitives.

    ``full`` puts every leaf at exactly ``max_depth``. ``grow`` forces
    operators above ``min_depth`` and otherwise picks uniformly among the 16
    primitives, so branches may end early.
    """
    if not 1 <= min_depth <= max_depth <= MAX_DEPTH:
        raise ValueError(f"need 1 <= min_depth <= max_depth <= {MAX_DEPTH}, got {min_depth}, {max_depth}")
    if method not in ("full", "grow"):
        raise ValueError(f"method must be 'full' or 'grow', got {method!r}")
    n_leaves, n_ops = len(GP_LEAVES), len(ALL_OPS)

    def build(d):
        if d == max_depth:
            return GP_LEAVES[rng.integers(n_leaves)]
        if method == "full" or d < min_depth:
            kind = ALL_OPS[rng.integers(n_ops)]
        else:
            pick = rng.integers(n_leaves + n_ops)
            if pick < n_leaves:
                return GP_LEAVES[pick]
            kind = ALL_OPS[pick - n_leaves]
        return Op(kind, tuple(build(d + 1) for _ in range(kind.arity)))

    return build(1)


# --------------------------------------------------------------------------
# simplification

def width(tree):
    """Static column count of a subtree's value: 'C' or 1."""
    if isinstance(tree, Leaf):
        return 1 if tree.name == "const" else "C"
    if tree.kind.reduces:
        return 1
    ws = [width(c) for c in tree.children]
    return "C" if "C" in ws else 1


def _is_const(t, value=None):
    return isinstance(t, Leaf) and t.name == "const" and (value is None or t.value == value)


def _fold(tree, gamma):
    args = [np.array([[c.value]]) for c in tree.children]
    with quiet():
        out = apply_op(tree.kind, *args, gamma=gamma)
    v = float(out[0, 0])
    if not np.isfinite(v):
        return tree
    return Const(v)


def _rewrite(tree, gamma):
    if isinstance(tree, Leaf):
        return tree
    children = tuple(_rewrite(c, gamma) for c in tree.children)
    if any(new is not old for new, old in zip(children, tree.children)):
        tree = Op(tree.kind, children)
    k = tree.kind
    if all(_is_const(c) for c in children):
        return _fold(tree, gamma)
    if k is OpKind.ADD:
        a, b = children
        if _is_const(b, 0.0):
            return a
        if _is_const(a, 0.0):
            return b
    elif k is OpKind.MUL:
        a, b = children
        if _is_const(b, 1.0):
            return a
        if _is_const(a, 1.0):
            return b
        # x * 0 -> 0 only when x is a column; otherwise the shape would change
        if (_is_const(b, 0.0) and width(a) == 1) or (_is_const(a, 0.0) and width(b) == 1):
            return ZERO
    elif k is OpKind.NEG:
        (a,) = children
        if isinstance(a, Op) and a.kind is OpKind.NEG:
            return a.children[0]
    elif k is OpKind.ABS:
        (a,) = children
        if isinstance(a, Op) and a.kind is OpKind.NEG:
            return Op(OpKind.ABS, (a.children[0],))
    elif k is OpKind.SQUARE:
        (a,) = children
        if isinstance(a, Op) and a.kind is OpKind.NEG:
            return Op(OpKind.SQUARE, (a.children[0],))
    elif k in (OpKind.MAX, OpKind.SUM):
        (a,) = children
        if width(a) == 1:
            return a
    return tree


def simplify(tree, gamma=GAMMA):
    """Apply value-preserving rewrites until nothing changes."""
    # identity, not equality: a NaN constant never compares equal to itself
    while True:
        new = _rewrite(tree, gamma)
        if new is tree:
            return new
        tree = new


Leaf.__str__ = to_text
Op.__str__ = to_text
