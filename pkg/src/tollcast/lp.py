"""Exact linear programming by the primal simplex method.

The solver works on the bounded form ``A x - r = 0`` where every row activity
``r_i`` carries the row's bounds and every structural variable carries its own
bounds. Pivoting follows Bland's least-index rule, so results are
deterministic and the method terminates on degenerate problems.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .exact import ZERO, Rational, rational

log = logging.getLogger(__name__)

LE, EQ, GE = "<=", "=", ">="


@dataclass
class Row:
    coeffs: dict[int, Rational]
    sense: str
    rhs: Rational


@dataclass
class LinearProgram:
    """``min``/``max`` of ``objective . x`` over rows and simple variable bounds.

    ``None`` bounds are infinite. Variables default to ``x >= 0``.
    """

    objective: list[Rational] = field(default_factory=list)
    rows: list[Row] = field(default_factory=list)
    lower: list[Rational | None] = field(default_factory=list)
    upper: list[Rational | None] = field(default_factory=list)
    maximize: bool = False
    names: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.objective)

    def add_variable(self, cost=0, lower=0, upper=None, name: str | None = None) -> int:
        self.objective.append(rational(cost))
        self.lower.append(None if lower is None else rational(lower))
        self.upper.append(None if upper is None else rational(upper))
        self.names.append(name if name is not None else f"x{len(self.objective) - 1}")
        return len(self.objective) - 1

    def add_row(self, coeffs: Mapping[int, object], sense: str, rhs) -> int:
        if sense not in (LE, EQ, GE):
            raise ValueError(f"bad row sense {sense!r}")
        clean = {}
        for j, v in coeffs.items():
            if not 0 <= j < self.n:
                raise ValueError(f"row refers to unknown variable {j}")
            v = rational(v)
            if v:
                clean[j] = clean.get(j, ZERO) + v
        self.rows.append(Row({j: v for j, v in clean.items() if v}, sense, rational(rhs)))
        return len(self.rows) - 1

    def row_value(self, i: int, x: Sequence) -> Rational:
        return sum((v * x[j] for j, v in self.rows[i].coeffs.items()), ZERO)

    def value(self, x: Sequence) -> Rational:
        return sum((c * v for c, v in zip(self.objective, x) if c), ZERO)

    def is_feasible(self, x: Sequence) -> bool:
        for j, v in enumerate(x):
            if self.lower[j] is not None and v < self.lower[j]:
                return False
            if self.upper[j] is not None and v > self.upper[j]:
                return False
        for i, row in enumerate(self.rows):
            a = self.row_value(i, x)
            if (row.sense == LE and a > row.rhs) or (row.sense == GE and a < row.rhs) or (row.sense == EQ and a != row.rhs):
                return False
        return True


@dataclass(frozen=True)
class Optimal:
    x: tuple[Rational, ...]
    dual: tuple[Rational, ...]
    reduced_costs: tuple[Rational, ...]
    objective: Rational
    status = "optimal"


@dataclass(frozen=True)
class Infeasible:
    certificate: tuple[Rational, ...]
    status = "infeasible"


@dataclass(frozen=True)
class Unbounded:
    point: tuple[Rational, ...]
    ray: tuple[Rational, ...]
    status = "unbounded"


LpOutcome = Optimal | Infeasible | Unbounded


class SimplexFailure(RuntimeError):
    pass


def _row_bounds(row: Row):
    if row.sense == LE:
        return None, row.rhs
    if row.sense == GE:
        return row.rhs, None
    return row.rhs, row.rhs


class _Simplex:
    def __init__(self, lp: LinearProgram, max_pivots: int):
        self.lp = lp
        self.max_pivots = max_pivots
        n, m = lp.n, len(lp.rows)
        self.n, self.m = n, m
        self.lo: list = list(lp.lower)
        self.hi: list = list(lp.upper)
        self.val: list = []
        for j in range(n):
            lo, hi = self.lo[j], self.hi[j]
            if lo is not None and hi is not None and lo > hi:
                self.empty_box = j
            self.val.append(lo if lo is not None else (hi if hi is not None else ZERO))
        self.basis: list[int] = []
        self.T: list[dict] = []
        self.artificial: list[int] = []
        for i, row in enumerate(lp.rows):
            rlo, rhi = _row_bounds(row)
            self.lo.append(rlo)
            self.hi.append(rhi)
            act = sum((v * self.val[j] for j, v in row.coeffs.items()), ZERO)
            self.val.append(act)
        for i, row in enumerate(lp.rows):
            r = n + i
            act = self.val[r]
            rlo, rhi = self.lo[r], self.hi[r]
            if (rlo is None or act >= rlo) and (rhi is None or act <= rhi):
                # the row activity itself can start basic
                t = {j: -v for j, v in row.coeffs.items()}
                t[r] = mpq_one
                self.basis.append(r)
            else:
                target = rlo if (rlo is not None and act < rlo) else rhi
                self.val[r] = target
                resid = act - target
                sign = -1 if resid > 0 else 1
                a = len(self.val)
                self.lo.append(ZERO)
                self.hi.append(None)
                self.val.append(abs(resid))
                self.artificial.append(a)
                t = {j: sign * v for j, v in row.coeffs.items()}
                t[r] = -sign * mpq_one
                t[a] = mpq_one
                self.basis.append(a)
            self.T.append(t)
        self.N = len(self.val)
        self.pivots = 0

    # -- core ------------------------------------------------------------
    def _costs_to_d(self, cost: dict):
        d = dict(cost)
        for i, b in enumerate(self.basis):
            cb = cost.get(b)
            if cb:
                for j, v in self.T[i].items():
                    nv = d.get(j, ZERO) - cb * v
                    if nv:
                        d[j] = nv
                    else:
                        d.pop(j, None)
        for b in self.basis:
            d.pop(b, None)
        self.d = d

    def _pivot(self, r: int, q: int):
        Tr = self.T[r]
        piv = Tr[q]
        if piv != 1:
            inv = 1 / piv
            Tr = {j: v * inv for j, v in Tr.items()}
            self.T[r] = Tr
        for i, Ti in enumerate(self.T):
            if i == r:
                continue
            f = Ti.get(q)
            if not f:
                continue
            for j, v in Tr.items():
                nv = Ti.get(j, ZERO) - f * v
                if nv:
                    Ti[j] = nv
                else:
                    del Ti[j]
        f = self.d.get(q)
        if f:
            d = self.d
            for j, v in Tr.items():
                nv = d.get(j, ZERO) - f * v
                if nv:
                    d[j] = nv
                else:
                    d.pop(j, None)
        self.basis[r] = q
        self.pivots += 1
        if self.pivots > self.max_pivots:
            raise SimplexFailure("pivot limit exceeded")

    def _entering(self):
        basic = set(self.basis)
        for j in sorted(self.d):
            if j in basic:
                continue
            dj = self.d[j]
            if dj < 0 and (self.hi[j] is None or self.val[j] < self.hi[j]):
                return j, 1
            if dj > 0 and (self.lo[j] is None or self.val[j] > self.lo[j]):
                return j, -1
        return None, 0

    def run(self):
        """Iterate to optimality; returns ``None`` or the unbounded ``(q, delta)``."""
        while True:
            q, delta = self._entering()
            if q is None:
                return None
            # ratio test; leaving candidates are (limit, variable index, row or -1)
            best = None
            if delta > 0 and self.hi[q] is not None:
                best = (self.hi[q] - self.val[q], q, -1)
            elif delta < 0 and self.lo[q] is not None:
                best = (self.val[q] - self.lo[q], q, -1)
            rates = []
            for i, Ti in enumerate(self.T):
                a = Ti.get(q)
                if not a:
                    continue
                rho = -a * delta
                b = self.basis[i]
                rates.append((i, rho))
                if rho > 0 and self.hi[b] is not None:
                    cand = ((self.hi[b] - self.val[b]) / rho, b, i)
                elif rho < 0 and self.lo[b] is not None:
                    cand = ((self.val[b] - self.lo[b]) / -rho, b, i)
                else:
                    continue
                if best is None or cand[:2] < best[:2]:
                    best = cand
            if best is None:
                return q, delta
            t, leave, r = best
            if t:
                self.val[q] += delta * t
                for i, rho in rates:
                    self.val[self.basis[i]] += rho * t
            if r < 0:
                self.val[q] = self.hi[q] if delta > 0 else self.lo[q]
                log.debug("bound flip of %s", q)
                continue
            self.val[leave] = self.hi[leave] if (rates and dict(rates)[r] > 0) else self.lo[leave]
            log.debug("pivot row %d: %d leaves, %d enters, step %s", r, leave, q, t)
            self._pivot(r, q)


mpq_one = rational(1)


def solve_lp(lp: LinearProgram, max_pivots: int = 200_000) -> LpOutcome:
    """Solve ``lp`` exactly.

    ``Optimal.dual`` holds one multiplier per row with the sign convention of
    the problem's own sense (for a maximization, a binding ``<=`` row has a
    nonnegative multiplier). ``Infeasible.certificate`` is a Farkas vector
    checked by :func:`farkas_gap`; ``Unbounded.ray`` is checked by
    :func:`is_improving_ray`.
    """
    for j in range(lp.n):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo is not None and hi is not None and lo > hi:
            # an empty box is certified by the zero row combination
            return Infeasible(tuple(ZERO for _ in lp.rows))
    s = _Simplex(lp, max_pivots)
    n, m = s.n, s.m
    log.debug("simplex: %d variables, %d rows, %d artificials", n, m, len(s.artificial))
    if s.artificial:
        s._costs_to_d({a: mpq_one for a in s.artificial})
        s.run()
        infeas = sum((s.val[a] for a in s.artificial), ZERO)
        if infeas > 0:
            y = tuple(s.d.get(n + i, ZERO) for i in range(m))
            return Infeasible(y)
        basic = set(s.basis)
        for a in s.artificial:
            s.hi[a] = ZERO
            s.val[a] = ZERO
            if a not in basic:
                for Ti in s.T:
                    Ti.pop(a, None)
    sign = -1 if lp.maximize else 1
    cost = {j: sign * c for j, c in enumerate(lp.objective) if c}
    s._costs_to_d(cost)
    unb = s.run()
    x = tuple(s.val[:n])
    if unb is not None:
        q, delta = unb
        ray = [ZERO] * n
        if q < n:
            ray[q] = rational(delta)
        for i, Ti in enumerate(s.T):
            a = Ti.get(q)
            b = s.basis[i]
            if a and b < n:
                ray[b] = -a * delta
        return Unbounded(x, tuple(ray))
    y = tuple(sign * s.d.get(n + i, ZERO) for i in range(m))
    dred = tuple(sign * s.d.get(j, ZERO) for j in range(n))
    return Optimal(x, y, dred, lp.value(x))


# ---------------------------------------------------------------------------
# certificate checks (independent of the solver state)


def _reduced(lp: LinearProgram, y: Sequence) -> list:
    d = list(lp.objective)
    for yi, row in zip(y, lp.rows):
        if yi:
            for j, v in row.coeffs.items():
                d[j] -= yi * v
    return d


def dual_objective(lp: LinearProgram, y: Sequence):
    """Lagrangian dual value of the row multipliers ``y``; ``None`` if ``y`` is dual infeasible."""
    s = -1 if lp.maximize else 1
    ymin = [s * v for v in y]
    c = [s * v for v in lp.objective]
    total = ZERO
    for yi, row in zip(ymin, lp.rows):
        if (row.sense == LE and yi > 0) or (row.sense == GE and yi < 0):
            return None
        total += yi * row.rhs
    d = list(c)
    for yi, row in zip(ymin, lp.rows):
        if yi:
            for j, v in row.coeffs.items():
                d[j] -= yi * v
    for j, dj in enumerate(d):
        if dj > 0:
            if lp.lower[j] is None:
                return None
            total += dj * lp.lower[j]
        elif dj < 0:
            if lp.upper[j] is None:
                return None
            total += dj * lp.upper[j]
    return s * total


def certifies_optimal(lp: LinearProgram, out: Optimal) -> bool:
    """Primal feasibility, dual feasibility, complementary slackness, strong duality."""
    if not lp.is_feasible(out.x):
        return False
    dual = dual_objective(lp, out.dual)
    if dual is None or dual != lp.value(out.x) or out.objective != dual:
        return False
    for i, (yi, row) in enumerate(zip(out.dual, lp.rows)):
        if yi and lp.row_value(i, out.x) != row.rhs:
            return False
    s = -1 if lp.maximize else 1
    d = _reduced(lp, out.dual)
    for j, dj in enumerate(d):
        dj = s * dj
        if dj > 0 and out.x[j] != lp.lower[j]:
            return False
        if dj < 0 and out.x[j] != lp.upper[j]:
            return False
    return True


def farkas_gap(lp: LinearProgram, y: Sequence):
    """Return a positive number if ``y`` proves ``lp`` infeasible, else ``None``.

    For every point within the variable bounds and row bounds,
    ``sum_i y_i (r_i - a_i x) = 0`` would have to hold with ``r = A x``; the
    returned value is the minimum of that expression over the box, so a
    positive value rules out every feasible point.
    """
    total = ZERO
    for yi, row in zip(y, lp.rows):
        if not yi:
            continue
        lo, hi = _row_bounds(row)
        bound = lo if yi > 0 else hi
        if bound is None:
            return None
        total += yi * bound
    w = [ZERO] * lp.n
    for yi, row in zip(y, lp.rows):
        if yi:
            for j, v in row.coeffs.items():
                w[j] -= yi * v
    for j, wj in enumerate(w):
        if wj > 0:
            if lp.lower[j] is None:
                return None
            total += wj * lp.lower[j]
        elif wj < 0:
            if lp.upper[j] is None:
                return None
            total += wj * lp.upper[j]
    if any(lo is not None and hi is not None and lo > hi for lo, hi in zip(lp.lower, lp.upper)):
        return rational(1)
    return total if total > 0 else None


def is_improving_ray(lp: LinearProgram, point: Sequence, ray: Sequence) -> bool:
    """``point`` is feasible and ``point + t * ray`` stays feasible and strictly improves for ``t >= 0``."""
    if not lp.is_feasible(point):
        return False
    for j, dj in enumerate(ray):
        if (dj > 0 and lp.upper[j] is not None) or (dj < 0 and lp.lower[j] is not None):
            return False
    for i, row in enumerate(lp.rows):
        dr = lp.row_value(i, ray)
        if (row.sense == EQ and dr != 0) or (row.sense == LE and dr > 0) or (row.sense == GE and dr < 0):
            return False
    slope = lp.value(ray)
    return slope > 0 if lp.maximize else slope < 0
