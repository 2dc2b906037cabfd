"""Exact rational arithmetic helpers.

All numbers in tollcast are :class:`gmpy2.mpq` values (``Rational``). They are
kept in lowest terms with a positive denominator by GMP, which gives cheap
equality tests and bounded coefficient growth.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import gmpy2
from gmpy2 import mpq

Rational = type(mpq())

ZERO = mpq(0)
ONE = mpq(1)

_RATIONAL_RE = re.compile(r"^[+-]?(\d+(/\d+)?|\d*\.\d+|\d+\.\d*)$")


def rational(value) -> Rational:
    """Convert ``value`` to an exact rational.

    Accepts ints, mpq, :class:`fractions.Fraction` and strings of the form
    ``"p"``, ``"p/q"`` or ``"1.25"``. Floats are rejected since they would
    silently carry binary rounding error into the solvers.
    """
    if isinstance(value, Rational):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return mpq(value)
    if isinstance(value, Fraction):
        return mpq(value.numerator, value.denominator)
    if isinstance(value, str):
        return parse_rational(value)
    if isinstance(value, type(gmpy2.mpz())):
        return mpq(value)
    raise TypeError(f"cannot convert {type(value).__name__} to an exact rational")


def parse_rational(text: str) -> Rational:
    if not _RATIONAL_RE.match(text):
        raise ValueError(f"not a rational literal: {text!r}")
    if "/" in text and int(text.split("/")[1]) == 0:
        raise ValueError(f"zero denominator in {text!r}")
    if "." in text:
        q = Fraction(text)
        return mpq(q.numerator, q.denominator)
    return mpq(text)


def format_rational(q) -> str:
    """Serialize as ``"p/q"``, or ``"p"`` when the denominator is one."""
    q = rational(q)
    return str(q)


def decimal_string(q, digits: int) -> str:
    """Round-half-even decimal approximation with ``digits`` fractional digits."""
    q = rational(q)
    scale = 10**digits
    n = q * scale
    floor = gmpy2.f_div(n.numerator, n.denominator)
    rem = n - floor
    if rem > mpq(1, 2) or (rem == mpq(1, 2) and floor % 2 == 1):
        floor += 1
    sign = "-" if floor < 0 else ""
    floor = abs(int(floor))
    whole, frac = divmod(floor, scale)
    if digits == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:0{digits}d}"


def lcm_of_denominators(values) -> int:
    out = gmpy2.mpz(1)
    for v in values:
        out = gmpy2.lcm(out, rational(v).denominator)
    return int(out)


class EpsilonSquaredError(ArithmeticError):
    """Raised when a product of two perturbation terms would be formed."""


@dataclass(frozen=True)
class LexRational:
    """The number ``standard + epsilon * eps`` for an infinitesimal ``eps > 0``.

    Comparison is lexicographic, which is exactly the order in the limit
    ``eps -> 0+``. Only first-order terms are representable.
    """

    standard: Rational = ZERO
    epsilon: Rational = ZERO

    def __post_init__(self):
        object.__setattr__(self, "standard", rational(self.standard))
        object.__setattr__(self, "epsilon", rational(self.epsilon))

    @classmethod
    def lift(cls, value) -> "LexRational":
        if isinstance(value, LexRational):
            return value
        return cls(rational(value), ZERO)

    def _key(self):
        return (self.standard, self.epsilon)

    def __add__(self, other):
        o = LexRational.lift(other)
        return LexRational(self.standard + o.standard, self.epsilon + o.epsilon)

    __radd__ = __add__

    def __neg__(self):
        return LexRational(-self.standard, -self.epsilon)

    def __sub__(self, other):
        return self + (-LexRational.lift(other))

    def __rsub__(self, other):
        return LexRational.lift(other) - self

    def __mul__(self, other):
        o = LexRational.lift(other)
        if self.epsilon and o.epsilon:
            raise EpsilonSquaredError("product of two perturbation terms")
        return LexRational(
            self.standard * o.standard,
            self.standard * o.epsilon + self.epsilon * o.standard,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = LexRational.lift(other)
        if o.epsilon:
            raise EpsilonSquaredError("division by a perturbed quantity")
        return LexRational(self.standard / o.standard, self.epsilon / o.standard)

    def __eq__(self, other):
        try:
            o = LexRational.lift(other)
        except TypeError:
            return NotImplemented
        return self._key() == o._key()

    def __hash__(self):
        if not self.epsilon:
            return hash(self.standard)
        return hash(self._key())

    def __lt__(self, other):
        return self._key() < LexRational.lift(other)._key()

    def __le__(self, other):
        return self._key() <= LexRational.lift(other)._key()

    def __gt__(self, other):
        return self._key() > LexRational.lift(other)._key()

    def __ge__(self, other):
        return self._key() >= LexRational.lift(other)._key()

    def __bool__(self):
        return bool(self.standard) or bool(self.epsilon)

    def __repr__(self):
        return f"LexRational({self.standard}, {self.epsilon}ε)"


# ---------------------------------------------------------------------------
# linear algebra


@dataclass(frozen=True)
class Singular:
    """Marker returned for a singular system, with a nonzero kernel vector."""

    kernel: tuple


def _integer_row(row: Sequence) -> list:
    scale = lcm_of_denominators(row)
    return [int(v * scale) for v in row]


def solve_linear_system(A: Sequence[Sequence], b: Sequence):
    """Solve ``A x = b`` exactly with fraction-free (Bareiss) elimination.

    Returns a tuple of rationals, or :class:`Singular` carrying a kernel
    vector of ``A`` when ``A`` is singular.
    """
    n = len(A)
    if any(len(row) != n for row in A) or len(b) != n:
        raise ValueError("A must be square and match the length of b")
    if n == 0:
        return ()
    M = [_integer_row([rational(v) for v in row] + [rational(bi)]) for row, bi in zip(A, b)]
    prev = 1
    for k in range(n):
        piv = next((i for i in range(k, n) if M[i][k] != 0), None)
        if piv is None:
            return Singular(tuple(nullspace(A)[0]))
        if piv != k:
            M[k], M[piv] = M[piv], M[k]
        Mk = M[k]
        pk = Mk[k]
        for i in range(k + 1, n):
            Mi = M[i]
            f = Mi[k]
            for j in range(k + 1, n + 1):
                Mi[j] = (Mi[j] * pk - f * Mk[j]) // prev
            Mi[k] = 0
        prev = pk
    x = [ZERO] * n
    for i in range(n - 1, -1, -1):
        s = mpq(M[i][n])
        for j in range(i + 1, n):
            if M[i][j]:
                s -= M[i][j] * x[j]
        x[i] = s / M[i][i]
    return tuple(x)


def rref(rows: Sequence[Sequence], ncols: int | None = None):
    """Reduced row echelon form over the rationals.

    Returns ``(R, pivots)`` where ``R`` holds only the nonzero rows.
    """
    R = [[rational(v) for v in row] for row in rows]
    if ncols is None:
        ncols = len(R[0]) if R else 0
    pivots: list[int] = []
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(R)) if R[i][c] != 0), None)
        if piv is None:
            continue
        R[r], R[piv] = R[piv], R[r]
        Rr = R[r]
        inv = 1 / Rr[c]
        if inv != 1:
            for j in range(c, ncols):
                if Rr[j]:
                    Rr[j] *= inv
        nz = [j for j in range(c, ncols) if Rr[j]]
        for i in range(len(R)):
            if i != r:
                f = R[i][c]
                if f:
                    Ri = R[i]
                    for j in nz:
                        Ri[j] -= f * Rr[j]
        pivots.append(c)
        r += 1
        if r == len(R):
            break
    return R[:r], pivots


def nullspace(A: Sequence[Sequence]) -> list[list]:
    """Basis of the right kernel of ``A`` (one vector per free column)."""
    ncols = len(A[0]) if A else 0
    R, pivots = rref(A, ncols)
    free = [c for c in range(ncols) if c not in set(pivots)]
    basis = []
    for f in free:
        v = [ZERO] * ncols
        v[f] = ONE
        for row, p in zip(R, pivots):
            v[p] = -row[f]
        basis.append(v)
    return basis


def hadamard_bit_bound(max_abs_coeff, dimension: int) -> Rational:
    """Lower bound ``(dimension * max_abs_coeff) ** (-2 * dimension)``.

    Two distinct basic solutions of an integer system of this size with
    coefficients bounded by ``max_abs_coeff`` differ in any coordinate by at
    least this much.
    """
    mu = rational(max_abs_coeff)
    if dimension < 1:
        raise ValueError("dimension must be at least 1")
    if mu < 1:
        raise ValueError("coefficient bound must be at least 1 (scale to integers first)")
    return 1 / (dimension * mu) ** (2 * dimension)


def ceil_log2(value) -> int:
    """Smallest integer ``k`` with ``2**k >= value`` for a positive rational."""
    q = rational(value)
    if q <= 0:
        raise ValueError("ceil_log2 needs a positive argument")
    num, den = int(q.numerator), int(q.denominator)
    k = num.bit_length() - den.bit_length()
    while mpq(2) ** k < q if k >= 0 else mpq(1, 2 ** (-k)) < q:
        k += 1
    while (mpq(2) ** (k - 1) if k - 1 >= 0 else mpq(1, 2 ** (1 - k))) >= q:
        k -= 1
    return k
