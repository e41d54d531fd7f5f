"""Expression trees over chart and fiber symbols, with exact derivatives.

Symbols are x1..xn (base coordinates), v1..vn or p1..pn (fiber coordinates)
and y1..ym (hypersurface parameters).  Trees are immutable.  Construction
folds constants and absorbs additive/multiplicative units, nothing more.
Every expression compiles once to a plain python function that accepts
numpy arrays (coordinate index first, optional batch axes after), so bulk
evaluation runs at numpy speed.
"""

from __future__ import annotations

import math
import re

import numpy as np

from .errors import ParseError, UnknownSymbol, ValidationError

SYMBOL_KINDS = ("x", "v", "p", "y")

_FUNC_DERIV = {}  # name -> callable(arg_expr, darg_expr) -> Expression, filled below


def _as_expr(value):
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)):
        return Const(float(value))
    raise TypeError(f"cannot coerce {value!r} to Expression")


class Expression:
    """Base node. Subclasses are Const, Sym, the arithmetic nodes and Func."""

    __slots__ = ("_fn",)

    def __add__(self, other):
        return add(self, _as_expr(other))

    def __radd__(self, other):
        return add(_as_expr(other), self)

    def __sub__(self, other):
        return sub(self, _as_expr(other))

    def __rsub__(self, other):
        return sub(_as_expr(other), self)

    def __mul__(self, other):
        return mul(self, _as_expr(other))

    def __rmul__(self, other):
        return mul(_as_expr(other), self)

    def __truediv__(self, other):
        return div(self, _as_expr(other))

    def __rtruediv__(self, other):
        return div(_as_expr(other), self)

    def __pow__(self, other):
        return power(self, _as_expr(other))

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return self.source()

    def diff(self, sym):
        raise NotImplementedError

    def source(self):
        raise NotImplementedError

    def substitute(self, mapping):
        """Replace symbols by expressions; mapping keys are Sym nodes."""
        raise NotImplementedError

    def symbols(self):
        out = set()
        self._collect(out)
        return out

    def _collect(self, out):
        pass

    def fn(self):
        """Compiled evaluator with signature f(x=None, v=None, p=None, y=None)."""
        cached = getattr(self, "_fn", None)
        if cached is None:
            src = f"def _expr_fn(x=None, v=None, p=None, y=None):\n    return {self.source()}\n"
            ns = {"np": np}
            exec(compile(src, "<nslab-expr>", "exec"), ns)
            cached = ns["_expr_fn"]
            object.__setattr__(self, "_fn", cached)
        return cached

    def evaluate(self, x=None, v=None, p=None, y=None):
        return self.fn()(x=x, v=v, p=p, y=y)

    def is_zero(self):
        return isinstance(self, Const) and self.value == 0.0


class Const(Expression):
    __slots__ = ("value",)

    def __init__(self, value):
        object.__setattr__(self, "value", float(value))

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")

    def __eq__(self, other):
        return isinstance(other, Const) and self.value == other.value

    def __hash__(self):
        return hash(("const", self.value))

    def diff(self, sym):
        return Const(0.0)

    def source(self):
        return repr(self.value)

    def substitute(self, mapping):
        return self


class Sym(Expression):
    __slots__ = ("kind", "index")

    def __init__(self, kind, index):
        if kind not in SYMBOL_KINDS:
            raise UnknownSymbol(f"unknown symbol kind {kind!r}")
        if index < 1:
            raise UnknownSymbol(f"symbol index must be >= 1, got {index}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "index", int(index))

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")

    @property
    def name(self):
        return f"{self.kind}{self.index}"

    def __eq__(self, other):
        return isinstance(other, Sym) and self.kind == other.kind and self.index == other.index

    def __hash__(self):
        return hash(("sym", self.kind, self.index))

    def diff(self, sym):
        return Const(1.0) if self == sym else Const(0.0)

    def source(self):
        return f"{self.kind}[{self.index - 1}]"

    def substitute(self, mapping):
        return mapping.get(self, self)

    def _collect(self, out):
        out.add(self)


class _Binary(Expression):
    __slots__ = ("a", "b")
    op = "?"

    def __init__(self, a, b):
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")

    def __eq__(self, other):
        return type(self) is type(other) and self.a == other.a and self.b == other.b

    def __hash__(self):
        return hash((self.op, self.a, self.b))

    def source(self):
        return f"({self.a.source()} {self.op} {self.b.source()})"

    def _collect(self, out):
        self.a._collect(out)
        self.b._collect(out)


class Add(_Binary):
    __slots__ = ()
    op = "+"

    def diff(self, sym):
        return add(self.a.diff(sym), self.b.diff(sym))

    def substitute(self, mapping):
        return add(self.a.substitute(mapping), self.b.substitute(mapping))


class Sub(_Binary):
    __slots__ = ()
    op = "-"

    def diff(self, sym):
        return sub(self.a.diff(sym), self.b.diff(sym))

    def substitute(self, mapping):
        return sub(self.a.substitute(mapping), self.b.substitute(mapping))


class Mul(_Binary):
    __slots__ = ()
    op = "*"

    def diff(self, sym):
        return add(mul(self.a.diff(sym), self.b), mul(self.a, self.b.diff(sym)))

    def substitute(self, mapping):
        return mul(self.a.substitute(mapping), self.b.substitute(mapping))


class Div(_Binary):
    __slots__ = ()
    op = "/"

    def diff(self, sym):
        da, db = self.a.diff(sym), self.b.diff(sym)
        return div(sub(mul(da, self.b), mul(self.a, db)), mul(self.b, self.b))

    def substitute(self, mapping):
        return div(self.a.substitute(mapping), self.b.substitute(mapping))


class Pow(_Binary):
    __slots__ = ()
    op = "**"

    def diff(self, sym):
        da, db = self.a.diff(sym), self.b.diff(sym)
        if isinstance(self.b, Const):
            c = self.b.value
            return mul(mul(Const(c), power(self.a, Const(c - 1.0))), da)
        # general exponent: a^b * (db*log(a) + b*da/a)
        return mul(self, add(mul(db, Func("log", self.a)),
                             div(mul(self.b, da), self.a)))

    def substitute(self, mapping):
        return power(self.a.substitute(mapping), self.b.substitute(mapping))


class Neg(Expression):
    __slots__ = ("a",)

    def __init__(self, a):
        object.__setattr__(self, "a", a)

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")

    def __eq__(self, other):
        return isinstance(other, Neg) and self.a == other.a

    def __hash__(self):
        return hash(("neg", self.a))

    def diff(self, sym):
        return neg(self.a.diff(sym))

    def source(self):
        return f"(-{self.a.source()})"

    def substitute(self, mapping):
        return neg(self.a.substitute(mapping))

    def _collect(self, out):
        self.a._collect(out)


class Func(Expression):
    __slots__ = ("name", "a")

    def __init__(self, name, a):
        if name not in _FUNC_DERIV:
            raise UnknownSymbol(f"unknown function {name!r}")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "a", a)

    def __setattr__(self, *a):
        raise AttributeError("Expression nodes are immutable")

    def __eq__(self, other):
        return isinstance(other, Func) and self.name == other.name and self.a == other.a

    def __hash__(self):
        return hash(("func", self.name, self.a))

    def diff(self, sym):
        return _FUNC_DERIV[self.name](self.a, self.a.diff(sym))

    def source(self):
        return f"np.{self.name}({self.a.source()})"

    def substitute(self, mapping):
        return func(self.name, self.a.substitute(mapping))

    def _collect(self, out):
        self.a._collect(out)


_FUNC_DERIV.update({
    "sqrt": lambda a, da: div(da, mul(Const(2.0), Func("sqrt", a))),
    "exp": lambda a, da: mul(Func("exp", a), da),
    "log": lambda a, da: div(da, a),
    "sin": lambda a, da: mul(Func("cos", a), da),
    "cos": lambda a, da: neg(mul(Func("sin", a), da)),
})

_FUNC_EVAL = {"sqrt": math.sqrt, "exp": math.exp, "log": math.log,
              "sin": math.sin, "cos": math.cos}


# ---------------------------------------------------------------------------
# folding constructors

def add(a, b):
    if a.is_zero():
        return b
    if b.is_zero():
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Add(a, b)


def sub(a, b):
    if b.is_zero():
        return a
    if a.is_zero():
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Sub(a, b)


def mul(a, b):
    if a.is_zero() or b.is_zero():
        return Const(0.0)
    if isinstance(a, Const) and a.value == 1.0:
        return b
    if isinstance(b, Const) and b.value == 1.0:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def div(a, b):
    if a.is_zero():
        return Const(0.0)
    if isinstance(b, Const) and b.value == 1.0:
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Div(a, b)


def power(a, b):
    if isinstance(b, Const):
        if b.value == 0.0:
            return Const(1.0)
        if b.value == 1.0:
            return a
        if isinstance(a, Const):
            return Const(a.value ** b.value)
    return Pow(a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def func(name, a):
    if isinstance(a, Const):
        return Const(_FUNC_EVAL[name](a.value))
    return Func(name, a)


def const(value):
    return Const(value)


def sym(kind, index):
    return Sym(kind, index)


def differentiate(expression, symbol):
    """Exact partial derivative; `symbol` is a Sym or a name like "v2"."""
    if isinstance(symbol, str):
        symbol = parse_symbol(symbol)
    if not isinstance(symbol, Sym):
        raise UnknownSymbol(f"not a symbol: {symbol!r}")
    return expression.diff(symbol)


def parse_symbol(name):
    m = re.fullmatch(r"([xvpy])([0-9]+)", name)
    if m is None:
        raise UnknownSymbol(f"unknown symbol {name!r}")
    return Sym(m.group(1), int(m.group(2)))


# ---------------------------------------------------------------------------
# parser: conventional infix grammar with ^ for power

_TOKEN_RE = re.compile(r"(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
                       r"|\d+(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
                       r"|(?P<op>[-+*/^()])")


def _line_col(text, pos):
    line = text.count("\n", 0, pos) + 1
    start = text.rfind("\n", 0, pos) + 1
    return line, pos - start + 1


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            line, col = _line_col(text, pos)
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        line, col = _line_col(text, pos)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), line, col))
        pos = m.end()
    line, col = _line_col(text, len(text))
    tokens.append(("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, value, line, col = self.next()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}, found {value!r}", line, col)

    def parse(self):
        e = self.expr()
        kind, value, line, col = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing {value!r}", line, col)
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, value, _, _ = self.peek()
            if kind == "op" and value in "+-":
                self.next()
                rhs = self.term()
                e = add(e, rhs) if value == "+" else sub(e, rhs)
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            kind, value, _, _ = self.peek()
            if kind == "op" and value in "*/":
                self.next()
                rhs = self.unary()
                e = mul(e, rhs) if value == "*" else div(e, rhs)
            else:
                return e

    def unary(self):
        kind, value, _, _ = self.peek()
        if kind == "op" and value in "+-":
            self.next()
            inner = self.unary()
            return inner if value == "+" else neg(inner)
        return self.power()

    def power(self):
        base = self.atom()
        kind, value, _, _ = self.peek()
        if kind == "op" and value == "^":
            self.next()
            exponent = self.unary()
            return power(base, exponent)
        return base

    def atom(self):
        kind, value, line, col = self.next()
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            if value in _FUNC_DERIV:
                self.expect_op("(")
                inner = self.expr()
                self.expect_op(")")
                return func(value, inner)
            if value == "pi":
                return Const(math.pi)
            try:
                return parse_symbol(value)
            except UnknownSymbol:
                raise ParseError(f"unknown name {value!r}", line, col) from None
        if kind == "op" and value == "(":
            inner = self.expr()
            self.expect_op(")")
            return inner
        raise ParseError(f"unexpected {value!r}" if value else "unexpected end of input",
                         line, col)


def parse(text):
    """Parse infix text (symbols x1.., v1.., p1.., y1..; ^ for power)."""
    if not isinstance(text, str):
        raise ParseError("expression must be a string")
    return _Parser(text).parse()


def check_symbols(expression, n, kinds, m=0, where="expression"):
    """Reject symbols outside the declared dimension or kind set."""
    for s in expression.symbols():
        if s.kind not in kinds:
            raise ValidationError(where, f"symbol {s.name} has unexpected kind")
        limit = m if s.kind == "y" else n
        if s.index > limit:
            raise ValidationError(where, f"symbol {s.name} exceeds dimension {limit}")
