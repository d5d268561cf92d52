"""A small expression language for theta-parameterized scalar functions f(x, theta).

Grammar (whitespace-insensitive)::

    expr   :=  term (('+' | '-') term)*
    term   :=  unary (('*' | '/') unary)*
    unary  :=  '-' unary | power
    power  :=  atom ('^' ['-'] integer)?
    atom   :=  number | 'x' | 'theta' | fun '(' expr ')' | '(' expr ')'
    fun    :=  'sin' | 'cos' | 'exp' | 'log'

Exponents are integer literals only.  Parsing errors carry the byte offset
and a hint for the expected token.

Taylor coefficients in x at 0 are computed by truncated-power-series
arithmetic propagated through the syntax tree: exact recurrences for
exp/sin/cos/log/division, so no symbolic blowup and no finite-difference
cancellation.  For purely polynomial expressions the coefficients stay
rational end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .odesim import ThetaGrid

FUNCTIONS = ("sin", "cos", "exp", "log")


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, expected: str):
        super().__init__(f"{message} at offset {offset} (expected {expected})")
        self.offset = offset
        self.expected = expected


class ExprDomainError(ValueError):
    """Evaluation or series expansion left the function's domain."""


# -- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class Num(Expr):
    value: Fraction


@dataclass(frozen=True)
class Var(Expr):
    name: str  # 'x' or 'theta'


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # '+', '-', '*', '/'
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Fun(Expr):
    name: str
    arg: Expr


# -- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def _fail(self, expected: str):
        self._skip_ws()
        got = self.src[self.pos] if self.pos < len(self.src) else "end of input"
        raise ExprSyntaxError(f"unexpected {got!r}", self.pos, expected)

    def parse(self) -> Expr:
        e = self.expr()
        self._skip_ws()
        if self.pos != len(self.src):
            self._fail("end of input or operator")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self._peek() in ("+", "-"):
            op = self.src[self.pos]
            self.pos += 1
            e = BinOp(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self._peek() in ("*", "/"):
            op = self.src[self.pos]
            self.pos += 1
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self._peek() == "-":
            self.pos += 1
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._peek() == "^":
            self.pos += 1
            self._skip_ws()
            sign = 1
            if self._peek() == "-":
                sign = -1
                self.pos += 1
                self._skip_ws()
            start = self.pos
            while self.pos < len(self.src) and self.src[self.pos].isdigit():
                self.pos += 1
            if self.pos == start:
                self._fail("integer exponent")
            return Pow(base, sign * int(self.src[start : self.pos]))
        return base

    def atom(self) -> Expr:
        ch = self._peek()
        if ch == "(":
            self.pos += 1
            e = self.expr()
            if self._peek() != ")":
                self._fail("')'")
            self.pos += 1
            return e
        if ch.isdigit() or ch == ".":
            return self.number()
        if ch.isalpha() or ch == "_":
            start = self.pos
            while self.pos < len(self.src) and (
                self.src[self.pos].isalnum() or self.src[self.pos] == "_"
            ):
                self.pos += 1
            name = self.src[start : self.pos]
            if name in ("x", "theta"):
                return Var(name)
            if name in FUNCTIONS:
                if self._peek() != "(":
                    self._fail("'(' after function name")
                self.pos += 1
                arg = self.expr()
                if self._peek() != ")":
                    self._fail("')'")
                self.pos += 1
                return Fun(name, arg)
            raise ExprSyntaxError(
                f"unknown identifier {name!r}", start, "x, theta, or sin/cos/exp/log"
            )
        self._fail("number, variable, function, or '('")

    def number(self) -> Num:
        start = self.pos
        seen_dot = False
        while self.pos < len(self.src):
            ch = self.src[self.pos]
            if ch.isdigit():
                self.pos += 1
            elif ch == "." and not seen_dot:
                seen_dot = True
                self.pos += 1
            else:
                break
        text = self.src[start : self.pos]
        if text in ("", "."):
            self._fail("number")
        return Num(Fraction(text))


def parse(src: str) -> Expr:
    """Parse to an AST; raises ExprSyntaxError with offset + expectation."""
    return _Parser(src).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def serialize(e: Expr) -> str:
    """Canonical text form; parse(serialize(parse(s))) == parse(s)."""
    text, _ = _serialize(e)
    return text


def _frac_text(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator)
    # literals always carry power-of-ten denominators, so this is exact
    num, den = v.numerator, v.denominator
    digits = 0
    while den % 10 == 0:
        den //= 10
        digits += 1
    while den % 2 == 0:
        den //= 2
        num *= 5
        digits += 1
    while den % 5 == 0:
        den //= 5
        num *= 2
        digits += 1
    if den != 1:
        raise ValueError(f"cannot render {v} as a finite decimal")
    s = str(num).rjust(digits + 1, "0")
    return s[:-digits] + "." + s[-digits:]


def _serialize(e: Expr) -> tuple[str, int]:
    if isinstance(e, Num):
        return _frac_text(e.value), _PREC["atom"]
    if isinstance(e, Var):
        return e.name, _PREC["atom"]
    if isinstance(e, Neg):
        inner, prec = _serialize(e.arg)
        if prec < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}", _PREC["neg"]
    if isinstance(e, Pow):
        inner, prec = _serialize(e.base)
        if prec < _PREC["atom"]:
            inner = f"({inner})"
        return f"{inner}^{e.exponent}", _PREC["^"]
    if isinstance(e, Fun):
        inner, _ = _serialize(e.arg)
        return f"{e.name}({inner})", _PREC["atom"]
    if isinstance(e, BinOp):
        lt, lp = _serialize(e.left)
        rt, rp = _serialize(e.right)
        prec = _PREC[e.op]
        if lp < prec:
            lt = f"({lt})"
        # the parser is left-associative, so an equal-precedence right child
        # needs parentheses to keep the tree shape
        if rp <= prec:
            rt = f"({rt})"
        return f"{lt} {e.op} {rt}", prec
    raise TypeError(f"not an Expr node: {e!r}")


# -- scalar evaluation ---------------------------------------------------------


def eval_expr(e: Expr, x: float, theta: float) -> float:
    if isinstance(e, Num):
        return float(e.value)
    if isinstance(e, Var):
        return float(x) if e.name == "x" else float(theta)
    if isinstance(e, Neg):
        return -eval_expr(e.arg, x, theta)
    if isinstance(e, Pow):
        base = eval_expr(e.base, x, theta)
        if e.exponent < 0 and base == 0.0:
            raise ExprDomainError("zero raised to a negative power")
        return base**e.exponent
    if isinstance(e, Fun):
        v = eval_expr(e.arg, x, theta)
        if e.name == "log":
            if v <= 0:
                raise ExprDomainError(f"log of non-positive value {v}")
            return math.log(v)
        return getattr(math, e.name)(v)
    if isinstance(e, BinOp):
        a = eval_expr(e.left, x, theta)
        b = eval_expr(e.right, x, theta)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise ExprDomainError("division by zero")
        return a / b
    raise TypeError(f"not an Expr node: {e!r}")


def eval_grid(e: Expr, grid: ThetaGrid, x: float) -> np.ndarray:
    """Pointwise values over the grid nodes; domain errors name the node."""
    out = np.empty(grid.size)
    for i, theta in enumerate(grid.nodes):
        try:
            out[i] = eval_expr(e, x, float(theta))
        except ExprDomainError as err:
            raise ExprDomainError(f"{err} (grid node {i}, theta={theta})") from err
    return out


# -- Taylor-mode series --------------------------------------------------------


@dataclass(frozen=True)
class TaylorJet:
    """Coefficients (a_0, ..., a_M) of f(x, theta) in x at x = 0, fixed theta."""

    order: int
    coeffs: tuple

    def __post_init__(self):
        if len(self.coeffs) != self.order + 1:
            raise ValueError("TaylorJet needs order+1 coefficients")

    def as_floats(self) -> np.ndarray:
        return np.array([float(c) for c in self.coeffs])


def _series_mul(a, b, M):
    exact = all(isinstance(c, Fraction) for c in a) and all(
        isinstance(c, Fraction) for c in b
    )
    if not exact:
        a = [float(c) for c in a]
        b = [float(c) for c in b]
    out = [Fraction(0) if exact else 0.0] * (M + 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j in range(0, M + 1 - i):
            if b[j] != 0:
                out[i + j] += ai * b[j]
    return out


def _series_div(a, b, M):
    if b[0] == 0:
        raise ExprDomainError("division by a series vanishing at x=0")
    exact = all(isinstance(c, Fraction) for c in a) and all(
        isinstance(c, Fraction) for c in b
    )
    if not exact:
        a = [float(c) for c in a]
        b = [float(c) for c in b]
    out = []
    for n in range(M + 1):
        acc = a[n]
        for k in range(n):
            acc -= out[k] * b[n - k]
        out.append(acc / b[0])
    return out


def _series_exp(a, M):
    a = [float(c) for c in a]
    out = [math.exp(a[0])]
    for n in range(1, M + 1):
        acc = 0.0
        for k in range(1, n + 1):
            acc += k * a[k] * out[n - k]
        out.append(acc / n)
    return out


def _series_log(a, M):
    a = [float(c) for c in a]
    if a[0] <= 0:
        raise ExprDomainError(f"log of series with non-positive value {a[0]} at x=0")
    out = [math.log(a[0])]
    for n in range(1, M + 1):
        acc = n * a[n]
        for k in range(1, n):
            acc -= k * out[k] * a[n - k]
        out.append(acc / (n * a[0]))
    return out


def _series_sincos(a, M):
    a = [float(c) for c in a]
    s = [math.sin(a[0])]
    c = [math.cos(a[0])]
    for n in range(1, M + 1):
        sa = 0.0
        ca = 0.0
        for k in range(1, n + 1):
            sa += k * a[k] * c[n - k]
            ca += k * a[k] * s[n - k]
        s.append(sa / n)
        c.append(-ca / n)
    return s, c


def _series(e: Expr, theta, M):
    if isinstance(e, Num):
        return [e.value] + [Fraction(0)] * M
    if isinstance(e, Var):
        if e.name == "theta":
            return [theta] + [Fraction(0) if isinstance(theta, Fraction) else 0.0] * M
        out = [Fraction(0)] * (M + 1)
        if M >= 1:
            out[1] = Fraction(1)
        return out
    if isinstance(e, Neg):
        return [-c for c in _series(e.arg, theta, M)]
    if isinstance(e, BinOp):
        a = _series(e.left, theta, M)
        b = _series(e.right, theta, M)
        if e.op == "+":
            return [x + y for x, y in zip(a, b)]
        if e.op == "-":
            return [x - y for x, y in zip(a, b)]
        if e.op == "*":
            return _series_mul(a, b, M)
        return _series_div(a, b, M)
    if isinstance(e, Pow):
        base = _series(e.base, theta, M)
        k = e.exponent
        if k == 0:
            one = [Fraction(1)] + [Fraction(0)] * M
            return one
        if k < 0:
            inv = _series_div([Fraction(1)] + [Fraction(0)] * M, base, M)
            base, k = inv, -k
        out = base
        for _ in range(k - 1):
            out = _series_mul(out, base, M)
        return out
    if isinstance(e, Fun):
        a = _series(e.arg, theta, M)
        if e.name == "exp":
            return _series_exp(a, M)
        if e.name == "log":
            return _series_log(a, M)
        s, c = _series_sincos(a, M)
        return s if e.name == "sin" else c
    raise TypeError(f"not an Expr node: {e!r}")


def taylor_coeffs(e: Expr, theta_value, M: int) -> TaylorJet:
    """Degree-M Taylor coefficients of x -> e(x, theta) at x = 0.

    theta_value may be a Fraction to keep a polynomial expression exact.
    """
    if M < 0:
        raise ValueError(f"Taylor order must be >= 0, got {M}")
    if isinstance(theta_value, Fraction):
        theta = theta_value
    elif isinstance(theta_value, int):
        theta = Fraction(theta_value)
    else:
        theta = float(theta_value)
    coeffs = _series(e, theta, M)
    return TaylorJet(order=M, coeffs=tuple(coeffs))


def taylor_grid(e: Expr, grid: ThetaGrid, M: int) -> np.ndarray:
    """(n_nodes, M+1) float array of Taylor coefficients per grid node."""
    out = np.empty((grid.size, M + 1))
    for i, theta in enumerate(grid.nodes):
        out[i] = taylor_coeffs(e, float(theta), M).as_floats()
    return out


def check_magnitude_bound(
    e: Expr, grid: ThetaGrid, rho: float, mu_f: float, samples: int = 65
) -> dict:
    """Sample |f(x, theta)| on [-rho/2, rho/2] x Theta against the bound mu_f.

    This is a sanity check on user-supplied analyticity constants, not a
    proof: it samples the real slice of the complex rho-neighborhood.
    """
    xs = np.linspace(-rho / 2.0, rho / 2.0, samples)
    worst = 0.0
    arg = (0.0, 0.0)
    for theta in grid.nodes:
        for x in xs:
            v = abs(eval_expr(e, float(x), float(theta)))
            if v > worst:
                worst = v
                arg = (float(x), float(theta))
    return {"ok": worst <= mu_f, "worst": worst, "at": arg, "mu_f": mu_f}
