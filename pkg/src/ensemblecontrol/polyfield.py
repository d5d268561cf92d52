"""Exact multivariate polynomials and polynomial vector fields on R^n.

Coefficients are rational (`fractions.Fraction`) throughout, so Lie-algebraic
identities -- antisymmetry, Jacobi, triangularity of bracket chains -- can be
asserted exactly rather than to a floating-point tolerance.  Floats appear
only when a polynomial is *evaluated* at a point.

A polynomial in n variables maps exponent tuples (one integer per variable)
to nonzero rational coefficients; the zero polynomial stores no terms.  Terms
iterate in graded-lexicographic order (total degree first, then exponent
vector), which keeps serialization and bracket enumeration reproducible.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Sequence

Exponent = tuple[int, ...]


class DimensionMismatch(ValueError):
    """Operands live on spaces of different dimension."""


class UnsupportedInput(ValueError):
    """Input is outside the domain an operation supports."""


def _coerce(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    return Fraction(value)


class Poly:
    """Sparse exact polynomial in ``num_vars`` variables."""

    __slots__ = ("num_vars", "_terms")

    def __init__(self, num_vars: int, terms: Mapping[Exponent, object] | None = None):
        if num_vars < 1:
            raise ValueError(f"num_vars must be positive, got {num_vars}")
        self.num_vars = int(num_vars)
        canon: dict[Exponent, Fraction] = {}
        if terms:
            for exp, coeff in terms.items():
                exp = tuple(int(e) for e in exp)
                if len(exp) != num_vars:
                    raise DimensionMismatch(
                        f"exponent {exp} has length {len(exp)}, expected {num_vars}"
                    )
                if any(e < 0 for e in exp):
                    raise ValueError(f"negative exponent in {exp}")
                c = _coerce(coeff)
                if c != 0:
                    c = canon.get(exp, Fraction(0)) + c
                    if c != 0:
                        canon[exp] = c
                    else:
                        canon.pop(exp, None)
        self._terms = canon

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, num_vars: int) -> "Poly":
        return cls(num_vars)

    @classmethod
    def constant(cls, num_vars: int, value) -> "Poly":
        return cls(num_vars, {(0,) * num_vars: value})

    @classmethod
    def variable(cls, num_vars: int, index: int) -> "Poly":
        if not 0 <= index < num_vars:
            raise ValueError(f"variable index {index} out of range for {num_vars} vars")
        exp = [0] * num_vars
        exp[index] = 1
        return cls(num_vars, {tuple(exp): 1})

    # -- structure ---------------------------------------------------------

    def items(self) -> list[tuple[Exponent, Fraction]]:
        """Terms in graded-lexicographic order, highest first."""
        return sorted(
            self._terms.items(),
            key=lambda t: (-sum(t[0]), tuple(-e for e in t[0])),
        )

    @property
    def terms(self) -> dict[Exponent, Fraction]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        if not self._terms:
            return -1
        return max(sum(e) for e in self._terms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Poly):
            return NotImplemented
        return self.num_vars == other.num_vars and self._terms == other._terms

    def __hash__(self):
        return hash((self.num_vars, frozenset(self._terms.items())))

    def __bool__(self) -> bool:
        return bool(self._terms)

    # -- arithmetic --------------------------------------------------------

    def _check_same_space(self, other: "Poly") -> None:
        if self.num_vars != other.num_vars:
            raise DimensionMismatch(
                f"polynomials in {self.num_vars} and {other.num_vars} variables"
            )

    def __add__(self, other) -> "Poly":
        if not isinstance(other, Poly):
            other = Poly.constant(self.num_vars, other)
        self._check_same_space(other)
        out = dict(self._terms)
        for exp, c in other._terms.items():
            s = out.get(exp, Fraction(0)) + c
            if s:
                out[exp] = s
            else:
                out.pop(exp, None)
        p = Poly(self.num_vars)
        p._terms = out
        return p

    def __neg__(self) -> "Poly":
        p = Poly(self.num_vars)
        p._terms = {exp: -c for exp, c in self._terms.items()}
        return p

    def __sub__(self, other) -> "Poly":
        if not isinstance(other, Poly):
            other = Poly.constant(self.num_vars, other)
        return self + (-other)

    def __mul__(self, other) -> "Poly":
        if not isinstance(other, Poly):
            c = _coerce(other)
            p = Poly(self.num_vars)
            if c:
                p._terms = {exp: v * c for exp, v in self._terms.items()}
            return p
        self._check_same_space(other)
        out: dict[Exponent, Fraction] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                exp = tuple(a + b for a, b in zip(e1, e2))
                s = out.get(exp, Fraction(0)) + c1 * c2
                if s:
                    out[exp] = s
                else:
                    out.pop(exp, None)
        p = Poly(self.num_vars)
        p._terms = out
        return p

    __rmul__ = __mul__

    def partial(self, index: int) -> "Poly":
        """Exact partial derivative with respect to variable ``index``."""
        if not 0 <= index < self.num_vars:
            raise ValueError(f"variable index {index} out of range")
        out: dict[Exponent, Fraction] = {}
        for exp, c in self._terms.items():
            k = exp[index]
            if k == 0:
                continue
            new = list(exp)
            new[index] = k - 1
            out[tuple(new)] = c * k
        p = Poly(self.num_vars)
        p._terms = out
        return p

    # -- evaluation --------------------------------------------------------

    def eval(self, x: Sequence[float]) -> float:
        """Float value at ``x`` via Horner-style per-variable factoring."""
        if len(x) != self.num_vars:
            raise DimensionMismatch(
                f"point has dimension {len(x)}, polynomial has {self.num_vars} variables"
            )
        if not self._terms:
            return 0.0
        terms = [(exp, float(c)) for exp, c in self._terms.items()]
        return _eval_factored(terms, [float(v) for v in x], 0)

    def eval_exact(self, x: Sequence) -> Fraction:
        """Exact rational value at a rational point."""
        if len(x) != self.num_vars:
            raise DimensionMismatch(
                f"point has dimension {len(x)}, polynomial has {self.num_vars} variables"
            )
        xs = [_coerce(v) for v in x]
        total = Fraction(0)
        for exp, c in self._terms.items():
            term = c
            for xi, e in zip(xs, exp):
                if e:
                    term *= xi**e
            total += term
        return total

    # -- serialization -----------------------------------------------------

    def to_text(self, var_names: Sequence[str] | None = None) -> str:
        """Canonical text form: graded-lex sum of ``coeff*x1^a1*...`` terms."""
        if not self._terms:
            return "0"
        names = var_names or [f"x{i + 1}" for i in range(self.num_vars)]
        pieces = []
        for exp, c in self.items():
            mono = "*".join(
                f"{names[i]}^{e}" if e > 1 else names[i]
                for i, e in enumerate(exp)
                if e > 0
            )
            if not mono:
                body = str(abs(c))
            elif abs(c) == 1:
                body = mono
            else:
                body = f"{abs(c)}*{mono}"
            pieces.append(("- " if c < 0 else "+ ") + body)
        first = pieces[0]
        text = ("-" + first[2:]) if first.startswith("- ") else first[2:]
        for piece in pieces[1:]:
            text += " " + piece
        return text

    def __repr__(self):
        return f"Poly({self.num_vars}, {self.to_text()!r})"


def _eval_factored(terms: list[tuple[Exponent, float]], x: list[float], k: int) -> float:
    if k == len(x):
        return sum(c for _, c in terms)
    buckets: dict[int, list[tuple[Exponent, float]]] = {}
    for exp, c in terms:
        buckets.setdefault(exp[k], []).append((exp, c))
    powers = sorted(buckets, reverse=True)
    acc = 0.0
    prev = None
    for p in powers:
        sub = _eval_factored(buckets[p], x, k + 1)
        if prev is None:
            acc = sub
        else:
            acc = acc * x[k] ** (prev - p) + sub
        prev = p
    if prev:
        acc *= x[k] ** prev
    return acc


class PolyField:
    """Polynomial vector field on R^dim: one Poly component per coordinate."""

    __slots__ = ("dim", "components")

    def __init__(self, components: Sequence[Poly]):
        comps = tuple(components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        dim = len(comps)
        for c in comps:
            if not isinstance(c, Poly):
                raise TypeError("components must be Poly instances")
            if c.num_vars != dim:
                raise DimensionMismatch(
                    f"component in {c.num_vars} variables inside a field on R^{dim}"
                )
        self.dim = dim
        self.components = comps

    @classmethod
    def zero(cls, dim: int) -> "PolyField":
        return cls([Poly.zero(dim) for _ in range(dim)])

    @classmethod
    def constant_field(cls, vector: Sequence) -> "PolyField":
        dim = len(vector)
        return cls([Poly.constant(dim, v) for v in vector])

    @classmethod
    def coordinate(cls, dim: int, index: int) -> "PolyField":
        """The unit field d/dx_index."""
        comps = [Poly.zero(dim) for _ in range(dim)]
        comps[index] = Poly.constant(dim, 1)
        return cls(comps)

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def is_constant(self) -> bool:
        return all(c.degree() <= 0 for c in self.components)

    def constant_vector(self) -> list[Fraction]:
        """Component values of a constant field."""
        if not self.is_constant():
            raise UnsupportedInput("field is not constant")
        return [c.eval_exact([0] * self.dim) for c in self.components]

    def max_degree(self) -> int:
        return max(c.degree() for c in self.components)

    def eval(self, x: Sequence[float]) -> list[float]:
        return [c.eval(x) for c in self.components]

    def jacobian(self) -> list[list[Poly]]:
        """Matrix of partials: entry [i][j] = d(component i)/d(x_j)."""
        return [
            [c.partial(j) for j in range(self.dim)] for c in self.components
        ]

    def __eq__(self, other):
        if not isinstance(other, PolyField):
            return NotImplemented
        return self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __add__(self, other: "PolyField") -> "PolyField":
        if self.dim != other.dim:
            raise DimensionMismatch(f"fields on R^{self.dim} and R^{other.dim}")
        return PolyField([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: "PolyField") -> "PolyField":
        if self.dim != other.dim:
            raise DimensionMismatch(f"fields on R^{self.dim} and R^{other.dim}")
        return PolyField([a - b for a, b in zip(self.components, other.components)])

    def __mul__(self, scalar) -> "PolyField":
        return PolyField([c * scalar for c in self.components])

    __rmul__ = __mul__

    def __neg__(self) -> "PolyField":
        return PolyField([-c for c in self.components])

    def to_text(self, var_names: Sequence[str] | None = None) -> str:
        return "(" + ", ".join(c.to_text(var_names) for c in self.components) + ")"

    def __repr__(self):
        return f"PolyField({self.to_text()!r})"


def lie_bracket(X: PolyField, Y: PolyField) -> PolyField:
    """[X, Y] = DY*X - DX*Y, exactly in rational arithmetic."""
    if X.dim != Y.dim:
        raise DimensionMismatch(f"fields on R^{X.dim} and R^{Y.dim}")
    jx = X.jacobian()
    jy = Y.jacobian()
    comps = []
    for i in range(X.dim):
        acc = Poly.zero(X.dim)
        for j in range(X.dim):
            acc = acc + jy[i][j] * X.components[j] - jx[i][j] * Y.components[j]
        comps.append(acc)
    return PolyField(comps)


def divergence(F: PolyField) -> Poly:
    """Exact trace of the Jacobian."""
    acc = Poly.zero(F.dim)
    for i in range(F.dim):
        acc = acc + F.components[i].partial(i)
    return acc


def ad_pullback_series(f: PolyField, g: PolyField, s) -> PolyField:
    """Sum_j (s ad_g)^j f / j!, the pullback of f by the time-s flow of g.

    Requires g constant: then each bracket with g drops the total degree of
    the iterate by one, so the series terminates exactly after at most
    max_degree(f) + 1 terms.
    """
    if f.dim != g.dim:
        raise DimensionMismatch(f"fields on R^{f.dim} and R^{g.dim}")
    if not g.is_constant():
        raise UnsupportedInput("ad_pullback_series needs a constant field g")
    s = _coerce(s)
    max_terms = max(f.max_degree(), 0) + 1
    result = f
    current = f
    k = 0
    factor = Fraction(1)
    while not current.is_zero():
        k += 1
        if k > max_terms:
            raise AssertionError("ad series failed to terminate; g was not constant?")
        current = lie_bracket(g, current)
        if current.is_zero():
            break
        factor *= Fraction(s, k)
        result = result + current * factor
    return result


def iterated_brackets(
    fields: Sequence[PolyField], depth: int
) -> list[tuple[tuple[int, ...], PolyField]]:
    """All right-nested brackets [f_a1,[f_a2,[...,f_aN]...]] for N <= depth.

    Exact zero fields are pruned together with their descendants (a bracket
    with an exactly-zero field is exactly zero).  Labels are index tuples
    into ``fields``; enumeration runs by depth, then lexicographically.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    fields = list(fields)
    if not fields:
        return []
    dim = fields[0].dim
    for f in fields:
        if f.dim != dim:
            raise DimensionMismatch("all fields must share the same dimension")
    joint = iterated_brackets_joint([fields], depth)
    return [(label, per[0]) for label, per in joint]


def iterated_brackets_joint(
    ensembles: Sequence[Sequence[PolyField]], depth: int
) -> list[tuple[tuple[int, ...], list[PolyField]]]:
    """Right-nested bracket words computed in parallel across member systems.

    Brackets act diagonally on a product ensemble, so each word is computed
    once per member with a shared label; a word is pruned only when it
    vanishes exactly on every member (all its extensions then vanish too).
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    ensembles = [list(tup) for tup in ensembles]
    if not ensembles or not ensembles[0]:
        return []
    arity = len(ensembles[0])
    for tup in ensembles:
        if len(tup) != arity:
            raise DimensionMismatch("all members must supply the same field arity")
    out: list[tuple[tuple[int, ...], list[PolyField]]] = []
    level = []
    for i in range(arity):
        per = [tup[i] for tup in ensembles]
        if any(not f.is_zero() for f in per):
            level.append(((i,), per))
    out.extend(level)
    for _ in range(2, depth + 1):
        nxt = []
        for i in range(arity):
            for label, per in level:
                brs = [lie_bracket(tup[i], f) for tup, f in zip(ensembles, per)]
                if any(not b.is_zero() for b in brs):
                    nxt.append(((i,) + label, brs))
        out.extend(nxt)
        level = nxt
        if not level:
            break
    return out
