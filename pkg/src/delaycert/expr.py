"""Arithmetic expression DSL in which delay problems are specified.

Expressions are scalar functions of the time variable ``t`` and of
delayed-state symbols ``z<j>_<i>`` (delay block j, state component i, both
1-based), e.g. ``"-z1_1 + 0.5 * z2_1"`` or ``"sin(t) * exp(-t)"``.
Grammar, precedence and the error format are documented in GRAMMAR.md.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, EvalError, ParseError

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "log": 1,
    "abs": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
}

_NOPOS = (1, 1)


@dataclass(frozen=True)
class Num:
    value: float
    pos: tuple = field(default=_NOPOS, compare=False, repr=False)


@dataclass(frozen=True)
class TimeVar:
    pos: tuple = field(default=_NOPOS, compare=False, repr=False)


@dataclass(frozen=True)
class StateRef:
    block: int
    comp: int
    pos: tuple = field(default=_NOPOS, compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: tuple = field(default=_NOPOS, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: tuple = field(default=_NOPOS, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    pos: tuple = field(default=_NOPOS, compare=False, repr=False)


Expr = Num | TimeVar | StateRef | Neg | BinOp | Call


# ---------------------------------------------------------------------------
# lexing / parsing

_TOKEN_RE = re.compile(
    r"""(?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
      | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)

_STATE_NAME = re.compile(r"z([0-9]+)_([0-9]+)$")


@dataclass(frozen=True)
class _Token:
    kind: str  # number | ident | op | end
    text: str
    line: int
    col: int


def _lex(src):
    tokens = []
    line, col, i = 1, 1, 0
    while i < len(src):
        ch = src[i]
        if ch == "\n":
            line, col = line + 1, 1
            i += 1
            continue
        if ch in " \t\r":
            col += 1
            i += 1
            continue
        m = _TOKEN_RE.match(src, i)
        if m is None:
            raise ParseError(f"unexpected character {ch!r}", line, col)
        text = m.group()
        tokens.append(_Token(m.lastgroup, text, line, col))
        col += len(text)
        i = m.end()
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def match_op(self, *ops):
        tok = self.peek()
        if tok.kind == "op" and tok.text in ops:
            return self.advance()
        return None

    def expect_op(self, op, what):
        tok = self.match_op(op)
        if tok is None:
            bad = self.peek()
            got = repr(bad.text) if bad.kind != "end" else "end of input"
            raise ParseError(f"expected {what}, got {got}", bad.line, bad.col)
        return tok

    def expression(self):
        node = self.term()
        while True:
            tok = self.match_op("+", "-")
            if tok is None:
                return node
            node = BinOp(tok.text, node, self.term(), (tok.line, tok.col))

    def term(self):
        node = self.unary()
        while True:
            tok = self.match_op("*", "/")
            if tok is None:
                return node
            node = BinOp(tok.text, node, self.unary(), (tok.line, tok.col))

    def unary(self):
        tok = self.match_op("-")
        if tok is not None:
            return Neg(self.unary(), (tok.line, tok.col))
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.match_op("^")
        if tok is None:
            return base
        # right-associative; the exponent may carry its own unary minus
        return BinOp("^", base, self.unary(), (tok.line, tok.col))

    def atom(self):
        tok = self.advance()
        pos = (tok.line, tok.col)
        if tok.kind == "number":
            return Num(float(tok.text), pos)
        if tok.kind == "ident":
            if tok.text == "t":
                return TimeVar(pos)
            m = _STATE_NAME.match(tok.text)
            if m is not None:
                block, comp = int(m.group(1)), int(m.group(2))
                if block < 1 or comp < 1:
                    raise ParseError(
                        f"state symbol {tok.text!r} uses 1-based indices", *pos
                    )
                return StateRef(block, comp, pos)
            if tok.text in FUNCTIONS:
                return self.call(tok)
            raise ParseError(f"unknown identifier {tok.text!r}", *pos)
        if tok.kind == "op" and tok.text == "(":
            node = self.expression()
            self.expect_op(")", "')'")
            return node
        got = repr(tok.text) if tok.kind != "end" else "end of input"
        raise ParseError(f"expected a value, got {got}", *pos)

    def call(self, name_tok):
        self.expect_op("(", f"'(' after {name_tok.text!r}")
        args = [self.expression()]
        while self.match_op(","):
            args.append(self.expression())
        self.expect_op(")", "')'")
        arity = FUNCTIONS[name_tok.text]
        if len(args) != arity:
            raise ParseError(
                f"{name_tok.text} expects {arity} argument(s), got {len(args)}",
                name_tok.line,
                name_tok.col,
            )
        return Call(name_tok.text, tuple(args), (name_tok.line, name_tok.col))


def parse(src: str) -> Expr:
    """Parse a DSL expression; raises ParseError with a 1-based position."""
    tokens = _lex(src)
    if tokens[0].kind == "end":
        raise ParseError("empty expression", 1, 1)
    parser = _Parser(tokens)
    node = parser.expression()
    trailing = parser.peek()
    if trailing.kind != "end":
        raise ParseError(
            f"unexpected trailing input {trailing.text!r}", trailing.line, trailing.col
        )
    return node


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3


def to_source(node: Expr) -> str:
    """Render back to DSL source; parse(to_source(e)) == e for parsed trees."""
    return _fmt(node, 0)


def _fmt(node, parent_prec):
    if isinstance(node, Num):
        s = repr(node.value)
        return s if node.value >= 0 else f"({s})"
    if isinstance(node, TimeVar):
        return "t"
    if isinstance(node, StateRef):
        return f"z{node.block}_{node.comp}"
    if isinstance(node, Neg):
        s = f"-{_fmt(node.operand, _NEG_PREC + 1)}"
        return f"({s})" if parent_prec > _NEG_PREC else s
    if isinstance(node, BinOp):
        prec = _PREC[node.op]
        if node.op == "^":
            s = f"{_fmt(node.left, prec + 1)}^{_fmt(node.right, _NEG_PREC)}"
        else:
            s = f"{_fmt(node.left, prec)} {node.op} {_fmt(node.right, prec + 1)}"
        return f"({s})" if parent_prec > prec else s
    if isinstance(node, Call):
        return f"{node.name}({', '.join(_fmt(a, 0) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class EvalEnv:
    """Point at which an expression is evaluated: time plus m state blocks."""

    t: float
    blocks: tuple = ()


def _div(a, b):
    if b == 0.0:
        raise EvalError("division by zero")
    r = a / b
    if not math.isfinite(r) and math.isfinite(a) and math.isfinite(b):
        raise EvalError("division produced a non-finite value")
    return r


def _pow(a, b):
    try:
        return math.pow(a, b)
    except OverflowError:
        neg = a < 0 and float(b).is_integer() and int(b) % 2 == 1
        return -math.inf if neg else math.inf
    except ValueError:
        raise EvalError(f"power domain error: base {a!r}, exponent {b!r}") from None


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _log(x):
    if x <= 0.0:
        raise EvalError(f"log of non-positive value {x!r}")
    return math.log(x)


def _sqrt(x):
    if x < 0.0:
        raise EvalError(f"sqrt of negative value {x!r}")
    return math.sqrt(x)


def _sin(x):
    try:
        return math.sin(x)
    except ValueError:
        raise EvalError("sin of non-finite value") from None


def _cos(x):
    try:
        return math.cos(x)
    except ValueError:
        raise EvalError("cos of non-finite value") from None


_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "^": _pow,
}

_FUNC_IMPL = {
    "sin": _sin,
    "cos": _cos,
    "exp": _exp,
    "log": _log,
    "abs": abs,
    "sqrt": _sqrt,
    "min": min,
    "max": max,
}


def evaluate(node: Expr, env: EvalEnv) -> float:
    """Tree-walking evaluation; EvalError carries the offending node position."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, TimeVar):
        return float(env.t)
    if isinstance(node, StateRef):
        try:
            return float(env.blocks[node.block - 1][node.comp - 1])
        except (IndexError, TypeError):
            raise ContractError(
                f"state symbol z{node.block}_{node.comp} has no value in this environment"
            ) from None
    if isinstance(node, Neg):
        return -evaluate(node.operand, env)
    if isinstance(node, BinOp):
        a = evaluate(node.left, env)
        b = evaluate(node.right, env)
        try:
            return _BINOPS[node.op](a, b)
        except EvalError as e:
            raise EvalError(e.message, *node.pos) from None
    if isinstance(node, Call):
        args = [evaluate(a, env) for a in node.args]
        try:
            return _FUNC_IMPL[node.name](*args)
        except EvalError as e:
            raise EvalError(e.message, *node.pos) from None
    raise TypeError(f"not an expression node: {node!r}")


# ---------------------------------------------------------------------------
# compilation (fast path, walker-identical semantics)

_COMPILE_NS = {
    "__builtins__": {},
    "_div": _div,
    "_pow": _pow,
    "_exp": _exp,
    "_log": _log,
    "_sqrt": _sqrt,
    "_sin": _sin,
    "_cos": _cos,
    "abs": abs,
    "min": min,
    "max": max,
}

_CALL_FMT = {
    "sin": "_sin({})",
    "cos": "_cos({})",
    "exp": "_exp({})",
    "log": "_log({})",
    "abs": "abs({})",
    "sqrt": "_sqrt({})",
    "min": "min({}, {})",
    "max": "max({}, {})",
}


def _gen(node):
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, TimeVar):
        return "t"
    if isinstance(node, StateRef):
        return f"z[{node.block - 1}][{node.comp - 1}]"
    if isinstance(node, Neg):
        return f"(-{_gen(node.operand)})"
    if isinstance(node, BinOp):
        l, r = _gen(node.left), _gen(node.right)
        if node.op == "/":
            return f"_div({l}, {r})"
        if node.op == "^":
            return f"_pow({l}, {r})"
        return f"({l} {node.op} {r})"
    if isinstance(node, Call):
        return _CALL_FMT[node.name].format(*(_gen(a) for a in node.args))
    raise TypeError(f"not an expression node: {node!r}")


def compile_fn(node: Expr):
    """Compile to a fast ``f(t, z) -> float`` callable.

    Semantics match `evaluate` exactly (same helpers, same operation order);
    EvalErrors from the compiled form carry no position — re-run `evaluate`
    on the same inputs to recover one.
    """
    return eval(f"lambda t, z: {_gen(node)}", dict(_COMPILE_NS))


def state_refs(node: Expr):
    """All StateRef nodes in the tree."""
    if isinstance(node, StateRef):
        yield node
    elif isinstance(node, Neg):
        yield from state_refs(node.operand)
    elif isinstance(node, BinOp):
        yield from state_refs(node.left)
        yield from state_refs(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from state_refs(a)


def validate_refs(node: Expr, m: int, n: int):
    """Check every z-symbol against the declared shape (m delay blocks, n components)."""
    for ref in state_refs(node):
        if not (1 <= ref.block <= m and 1 <= ref.comp <= n):
            line, col = ref.pos
            raise ContractError(
                f"{line}:{col}: state symbol z{ref.block}_{ref.comp} is outside "
                f"the declared shape (m={m}, n={n})"
            )


def time_function(source: str):
    """Bind a t-only expression to a float -> float callable."""
    node = parse(source)
    validate_refs(node, 0, 0)
    fn = compile_fn(node)
    return lambda t: fn(t, ())


class ExprSystem:
    """A vector of expressions bound to a block shape: f(t, z) with z (m, n).

    Callable with ``t`` and any (m, n)-indexable ``z``; returns a float array.
    Used directly as the right-hand side of file-defined delay problems.
    """

    def __init__(self, sources, m: int, n: int):
        self.sources = tuple(str(s) for s in sources)
        self.m = int(m)
        self.n = int(n)
        self.nodes = tuple(parse(s) for s in self.sources)
        for node in self.nodes:
            validate_refs(node, self.m, self.n)
        self._fns = tuple(compile_fn(node) for node in self.nodes)

    @property
    def out_dim(self):
        return len(self._fns)

    def __call__(self, t, z):
        try:
            return np.array([fn(t, z) for fn in self._fns], dtype=float)
        except EvalError:
            # recover the node position through the walker
            env = EvalEnv(float(t), tuple(tuple(float(v) for v in row) for row in z))
            for node in self.nodes:
                evaluate(node, env)
            raise

    def __repr__(self):
        return f"ExprSystem({list(self.sources)!r}, m={self.m}, n={self.n})"


def bind_system(sources, m: int, n: int) -> ExprSystem:
    return ExprSystem(sources, m, n)


# ---------------------------------------------------------------------------
# sampled Lipschitz estimation

@dataclass(frozen=True)
class DomainBox:
    """Closed per-component box in state space used for Lipschitz sampling."""

    lows: tuple
    highs: tuple

    def __post_init__(self):
        lows = tuple(float(v) for v in self.lows)
        highs = tuple(float(v) for v in self.highs)
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        if len(lows) != len(highs) or not lows:
            raise ContractError("box lows/highs must be nonempty and equally long")
        for i, (lo, hi) in enumerate(zip(lows, highs)):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ContractError(f"box component {i + 1} is not finite")
            if lo > hi:
                raise ContractError(f"box component {i + 1} has lower {lo} > upper {hi}")

    @classmethod
    def from_pairs(cls, pairs):
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def n(self):
        return len(self.lows)

    @property
    def widths(self):
        return np.asarray(self.highs) - np.asarray(self.lows)

    def sample_blocks(self, rng, m):
        return rng.uniform(self.lows, self.highs, size=(m, self.n))

    def clip_blocks(self, z):
        return np.clip(z, self.lows, self.highs)

    def contains(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= self.lows) and np.all(x <= self.highs))


def _gap_ratio(system, t, za, zb):
    den = float(np.max(np.abs(za - zb)))
    if den == 0.0:
        return 0.0
    try:
        num = float(np.max(np.abs(system(t, za) - system(t, zb))))
    except EvalError as e:
        raise EvalError(
            f"{e.message} (sampled at t={t}, z={np.asarray(za).tolist()})", e.line, e.col
        ) from None
    return num / den


def estimate_lipschitz(system: ExprSystem, box: DomainBox, t, samples=512,
                       safety=1.25, seed=0) -> float:
    """Sampled Lipschitz modulus of f(t, .) over box^m, inflated by `safety`.

    Pair sampling yields a lower bound on the true modulus; the safety
    factor makes the figure usable as a conservative estimate, and any
    certificate relying on it is flagged as sampled-k. Each draw probes a
    far pair, a short-range pair (local slope) and an antipodal corner
    pair (exact maximizer for linear maps).
    """
    if samples < 2:
        raise ContractError("samples must be >= 2")
    if box.n != system.n:
        raise ContractError(f"box dimension {box.n} != system state dimension {system.n}")
    widths = box.widths
    if np.any(widths <= 0.0):
        raise ContractError("box is degenerate: every component needs positive width")
    rng = np.random.default_rng(seed)
    m = system.m
    lows = np.asarray(box.lows)
    highs = np.asarray(box.highs)
    best = 0.0
    for _ in range(samples):
        z1 = box.sample_blocks(rng, m)
        z2 = box.sample_blocks(rng, m)
        best = max(best, _gap_ratio(system, t, z1, z2))
        step = widths * 1e-4 * rng.standard_normal((m, box.n))
        best = max(best, _gap_ratio(system, t, z1, box.clip_blocks(z1 + step)))
        pick = rng.integers(0, 2, size=(m, box.n)).astype(bool)
        best = max(best, _gap_ratio(system, t, np.where(pick, highs, lows),
                                    np.where(pick, lows, highs)))
    return best * safety
