"""Prefix-encoded expression trees for tree-based GP.

A tree is stored as a flat int16 array of opcodes in prefix order. Functions
come first, then the three ephemeral constants, then one opcode per input
variable (``VAR_BASE + index``). Evaluation and structural scans are compiled
with numba because they dominate the runtime of an evolutionary run.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np

MAX_DEPTH = 17

ADD, SUB, MUL, AQ, SIN, COS, NEG = range(7)
ERC_NEG, ERC_ZERO, ERC_POS = 7, 8, 9
VAR_BASE = 10
N_FUNCTIONS = 7
ERC_CODES = (ERC_NEG, ERC_ZERO, ERC_POS)
ERC_VALUES = (-1.0, 0.0, 1.0)

_NAMES = ("add", "sub", "mul", "aq", "sin", "cos", "neg")
_NAME_TO_CODE = {name: code for code, name in enumerate(_NAMES)}
_ARITY = np.array([2, 2, 2, 2, 1, 1, 1], dtype=np.int64)


class MalformedTreeError(ValueError):
    """Raised when an opcode sequence is not a well-formed prefix tree."""


@dataclass(frozen=True)
class Primitive:
    """One node of a tree, in readable form.

    ``kind`` is one of ``var``, ``erc``, ``add``, ``sub``, ``mul``, ``aq``,
    ``sin``, ``cos``, ``neg``. ``index`` is set for variables and ``value``
    for constants.
    """

    kind: str
    index: int | None = None
    value: float | None = None

    @property
    def arity(self) -> int:
        if self.kind in ("var", "erc"):
            return 0
        return int(_ARITY[_NAME_TO_CODE[self.kind]])

    @property
    def code(self) -> int:
        if self.kind == "var":
            return VAR_BASE + int(self.index)
        if self.kind == "erc":
            return ERC_CODES[ERC_VALUES.index(float(self.value))]
        return _NAME_TO_CODE[self.kind]

    @classmethod
    def from_code(cls, code: int) -> "Primitive":
        code = int(code)
        if code >= VAR_BASE:
            return cls("var", index=code - VAR_BASE)
        if code >= ERC_NEG:
            return cls("erc", value=ERC_VALUES[code - ERC_NEG])
        return cls(_NAMES[code])


def arity(code: int) -> int:
    return int(_ARITY[code]) if code < N_FUNCTIONS else 0


def aq(a, b):
    """Analytic quotient ``a / sqrt(1 + b**2)``; works on scalars and arrays."""
    return a / np.sqrt(1.0 + np.square(b))


@numba.njit(cache=True)
def _code_arity(code):
    if code <= MUL or code == AQ:
        return 2
    if code < ERC_NEG:
        return 1
    return 0


@numba.njit(cache=True)
def _subtree_end(codes, start):
    need = 1
    i = start
    n = codes.shape[0]
    while need > 0 and i < n:
        need += _code_arity(codes[i]) - 1
        i += 1
    if need != 0:
        return -1
    return i


@numba.njit(cache=True)
def _depth(codes):
    # -1 signals a malformed sequence
    n = codes.shape[0]
    stack = np.empty(n + 1, dtype=np.int64)
    top = 0
    for i in range(n - 1, -1, -1):
        a = _code_arity(codes[i])
        if top < a:
            return -1
        d = 0
        for _ in range(a):
            top -= 1
            if stack[top] > d:
                d = stack[top]
        stack[top] = d + 1
        top += 1
    if top != 1:
        return -1
    return stack[0]


@numba.njit(cache=True)
def _eval_into(codes, start, stop, X, stack, out):
    rows = X.shape[0]
    top = 0
    for i in range(stop - 1, start - 1, -1):
        c = codes[i]
        if c >= VAR_BASE:
            col = c - VAR_BASE
            for r in range(rows):
                stack[top, r] = X[r, col]
            top += 1
        elif c >= ERC_NEG:
            v = float(c - ERC_ZERO)
            for r in range(rows):
                stack[top, r] = v
            top += 1
        elif c >= SIN:
            t = top - 1
            if c == SIN:
                for r in range(rows):
                    stack[t, r] = math.sin(stack[t, r])
            elif c == COS:
                for r in range(rows):
                    stack[t, r] = math.cos(stack[t, r])
            else:
                for r in range(rows):
                    stack[t, r] = -stack[t, r]
        else:
            # left operand sits on top of the stack
            a = top - 1
            b = top - 2
            if c == ADD:
                for r in range(rows):
                    stack[b, r] = stack[a, r] + stack[b, r]
            elif c == SUB:
                for r in range(rows):
                    stack[b, r] = stack[a, r] - stack[b, r]
            elif c == MUL:
                for r in range(rows):
                    stack[b, r] = stack[a, r] * stack[b, r]
            else:
                for r in range(rows):
                    stack[b, r] = stack[a, r] / math.sqrt(1.0 + stack[b, r] * stack[b, r])
            top -= 1
    for r in range(rows):
        out[r] = stack[0, r]


@numba.njit(cache=True)
def _eval_many(codes, offsets, X):
    n_trees = offsets.shape[0] - 1
    rows = X.shape[0]
    longest = 1
    for t in range(n_trees):
        size = offsets[t + 1] - offsets[t]
        if size > longest:
            longest = size
    stack = np.empty((longest, rows), dtype=np.float64)
    out = np.empty((n_trees, rows), dtype=np.float64)
    for t in range(n_trees):
        _eval_into(codes, offsets[t], offsets[t + 1], X, stack, out[t])
    return out


@dataclass(frozen=True, eq=False)
class ExpressionTree:
    """Immutable prefix-order tree with a cached depth (a lone leaf has depth 1)."""

    codes: np.ndarray
    depth: int = field(default=-1)

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=np.int16)
        depth = int(_depth(codes)) if codes.size else -1
        if depth < 1:
            raise MalformedTreeError(f"not a well-formed prefix sequence: {codes.tolist()}")
        if self.depth not in (-1, depth):
            raise MalformedTreeError(f"cached depth {self.depth} != actual depth {depth}")
        codes.flags.writeable = False
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "depth", depth)

    def __len__(self) -> int:
        return int(self.codes.shape[0])

    def __eq__(self, other) -> bool:
        return isinstance(other, ExpressionTree) and np.array_equal(self.codes, other.codes)

    def __hash__(self) -> int:
        return hash(self.codes.tobytes())

    @property
    def nodes(self) -> list[Primitive]:
        return [Primitive.from_code(c) for c in self.codes]

    @property
    def max_var_index(self) -> int:
        v = self.codes[self.codes >= VAR_BASE]
        return int(v.max()) - VAR_BASE if v.size else -1

    def subtree_end(self, start: int) -> int:
        return int(_subtree_end(self.codes, start))

    @classmethod
    def from_nodes(cls, nodes: Iterable[Primitive]) -> "ExpressionTree":
        return cls(np.array([p.code for p in nodes], dtype=np.int16))

    @classmethod
    def parse(cls, text: str) -> "ExpressionTree":
        """Parse the prefix string form, e.g. ``add(sin(x0), 1)``."""
        codes = []
        for tok in re.findall(r"[A-Za-z_]\w*|-?\d+(?:\.\d*)?", text):
            if tok in _NAME_TO_CODE:
                codes.append(_NAME_TO_CODE[tok])
            elif re.fullmatch(r"x\d+", tok):
                codes.append(VAR_BASE + int(tok[1:]))
            else:
                try:
                    codes.append(ERC_CODES[ERC_VALUES.index(float(tok))])
                except ValueError:
                    raise MalformedTreeError(f"unknown token {tok!r}") from None
        return cls(np.array(codes, dtype=np.int16))

    def __str__(self) -> str:
        pos = 0

        def walk() -> str:
            nonlocal pos
            c = int(self.codes[pos])
            pos += 1
            if c >= VAR_BASE:
                return f"x{c - VAR_BASE}"
            if c >= ERC_NEG:
                return str(int(ERC_VALUES[c - ERC_NEG]))
            args = ", ".join(walk() for _ in range(arity(c)))
            return f"{_NAMES[c]}({args})"

        return walk()

    def __repr__(self) -> str:
        return f"ExpressionTree({self})"


def _check_vars(trees: Sequence[ExpressionTree], X: np.ndarray) -> None:
    top = max(t.max_var_index for t in trees)
    if top >= X.shape[1]:
        raise ValueError(f"tree uses x{top} but X has {X.shape[1]} columns")


def evaluate(tree: ExpressionTree, X) -> np.ndarray:
    """Predict one value per row of ``X``. Non-finite values are passed through."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d case x dimension matrix")
    _check_vars([tree], X)
    offsets = np.array([0, len(tree)], dtype=np.int64)
    return _eval_many(tree.codes, offsets, X)[0]


def evaluate_many(trees: Sequence[ExpressionTree], X) -> np.ndarray:
    """Evaluate a batch of trees; returns a ``len(trees) x rows`` matrix."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if not trees:
        return np.empty((0, X.shape[0]))
    _check_vars(trees, X)
    sizes = np.fromiter((len(t) for t in trees), dtype=np.int64, count=len(trees))
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    codes = np.concatenate([t.codes for t in trees])
    return _eval_many(codes, offsets, X)


def _draw_leaf(rng: np.random.Generator, dims: int) -> int:
    k = int(rng.integers(dims + 3))
    return VAR_BASE + k if k < dims else ERC_CODES[k - dims]


def random_tree(
    rng: np.random.Generator, method: str, min_depth: int, max_depth: int, dims: int
) -> ExpressionTree:
    """Generate a tree with ``grow`` or ``full`` at a depth drawn from [min_depth, max_depth].

    ``full`` places every leaf at exactly the drawn depth. ``grow`` picks each
    node uniformly from functions and leaves, forcing functions above
    ``min_depth`` and leaves at the drawn depth.
    """
    if not 1 <= min_depth <= max_depth <= MAX_DEPTH:
        raise ValueError(f"need 1 <= min_depth <= max_depth <= {MAX_DEPTH}")
    if method not in ("grow", "full"):
        raise ValueError(f"unknown method {method!r}")
    if dims < 1:
        raise ValueError("dims must be positive")
    height = int(rng.integers(min_depth, max_depth + 1))
    n_leaves = dims + 3
    leaf_ratio = n_leaves / (n_leaves + N_FUNCTIONS)
    codes: list[int] = []
    pending = [1]  # depth of each node still to be generated
    while pending:
        d = pending.pop()
        if d == height:
            leaf = True
        elif method == "full" or d < min_depth:
            leaf = False
        else:
            leaf = rng.random() < leaf_ratio
        if leaf:
            codes.append(_draw_leaf(rng, dims))
        else:
            c = int(rng.integers(N_FUNCTIONS))
            codes.append(c)
            pending.extend([d + 1] * arity(c))
    return ExpressionTree(np.array(codes, dtype=np.int16))


def ramped_half_and_half(
    rng: np.random.Generator, size: int, dims: int, min_depth: int = 1, max_depth: int = 6
) -> list[ExpressionTree]:
    """Alternate grow and full, each tree drawing its own depth from the ramp."""
    return [
        random_tree(rng, "grow" if i % 2 == 0 else "full", min_depth, max_depth, dims)
        for i in range(size)
    ]


def _splice(host: np.ndarray, start: int, end: int, graft: np.ndarray) -> np.ndarray:
    return np.concatenate((host[:start], graft, host[end:]))


def subtree_crossover(
    p1: ExpressionTree, p2: ExpressionTree, rng: np.random.Generator, max_depth: int = MAX_DEPTH
) -> tuple[ExpressionTree, ExpressionTree]:
    """Exchange one uniformly chosen subtree between the parents.

    A child deeper than ``max_depth`` is replaced by its own parent.
    """
    i = int(rng.integers(len(p1)))
    j = int(rng.integers(len(p2)))
    ei = p1.subtree_end(i)
    ej = p2.subtree_end(j)
    a = p1.codes[i:ei]
    b = p2.codes[j:ej]
    c1 = _splice(p1.codes, i, ei, b)
    c2 = _splice(p2.codes, j, ej, a)
    d1 = int(_depth(c1))
    d2 = int(_depth(c2))
    child1 = ExpressionTree(c1, d1) if d1 <= max_depth else p1
    child2 = ExpressionTree(c2, d2) if d2 <= max_depth else p2
    return child1, child2


def subtree_mutation(
    t: ExpressionTree,
    rng: np.random.Generator,
    dims: int,
    max_depth: int = MAX_DEPTH,
    new_depth: int = 2,
) -> ExpressionTree:
    """Replace a uniformly chosen subtree with a fresh grow tree of depth <= ``new_depth``."""
    i = int(rng.integers(len(t)))
    graft = random_tree(rng, "grow", 1, new_depth, dims)
    codes = _splice(t.codes, i, t.subtree_end(i), graft.codes)
    d = int(_depth(codes))
    if d > max_depth:
        return t
    return ExpressionTree(codes, d)
