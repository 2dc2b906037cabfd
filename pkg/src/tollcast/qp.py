"""Exact primal active-set method for separable group-quadratic programs.

The programs solved here have the form::

    min  sum_g h_g / 2 * L_g(z)**2 + q . z
    s.t. E z = b,  C z <= c,  z >= 0,        L_g(z) = sum of z_j over group g

which covers the Beckmann potential on a parallel-copy network (one group per
copy, summing over commodities) as well as the budget-constrained variant.
Curvatures ``h_g`` may be zero; the method then behaves like a simplex on the
flat directions.

The working set holds variable bounds ``z_j = 0`` and tight ``<=`` rows. It
is kept linearly independent together with the equality rows, so the
multipliers at every subproblem minimizer are unique. Constraints are ordered
bounds first (by variable index) then rows, and both dropping and blocking
break ties by that order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from .exact import ZERO, Rational, rref

log = logging.getLogger(__name__)


class QpFailure(RuntimeError):
    """The active-set iteration hit its guard; this indicates a solver bug."""


@dataclass
class QuadraticProgram:
    group: list[int]
    h: list[Rational]
    q: list[Rational]
    eq_rows: list[dict[int, Rational]] = field(default_factory=list)
    eq_rhs: list[Rational] = field(default_factory=list)
    le_rows: list[dict[int, Rational]] = field(default_factory=list)
    le_rhs: list[Rational] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.q)

    def loads(self, z: Sequence) -> list:
        L = [ZERO] * len(self.h)
        for j, v in enumerate(z):
            if v:
                L[self.group[j]] += v
        return L

    def gradient(self, z: Sequence) -> list:
        L = self.loads(z)
        return [self.h[self.group[j]] * L[self.group[j]] + self.q[j] for j in range(self.n)]

    def value(self, z: Sequence) -> Rational:
        L = self.loads(z)
        quad = sum((h * x * x for h, x in zip(self.h, L) if h), ZERO) / 2
        return quad + sum((c * v for c, v in zip(self.q, z) if v), ZERO)


@dataclass
class QpResult:
    z: list
    nu: list            # equality multipliers
    rho: list           # <= row multipliers, all >= 0
    eta: list           # bound multipliers, all >= 0
    free: list[int]
    active_rows: list[int]
    iterations: int


def _dot(row: dict, z: Sequence) -> Rational:
    return sum((v * z[j] for j, v in row.items()), ZERO)


def independent_rows(rows: Sequence[dict], n: int) -> list[int]:
    """Indices of a maximal linearly independent subset, kept in order."""
    basis: list[tuple[int, dict]] = []   # (pivot column, reduced row)
    keep = []
    for i, row in enumerate(rows):
        r = dict(row)
        for p, b in basis:
            f = r.get(p)
            if f:
                for j, v in b.items():
                    nv = r.get(j, ZERO) - f * v
                    if nv:
                        r[j] = nv
                    else:
                        r.pop(j, None)
        if r:
            p = min(r)
            inv = 1 / r[p]
            basis.append((p, {j: v * inv for j, v in r.items()}))
            keep.append(i)
    return keep


def _complete_free_set(rows: Sequence[dict], z: Sequence, n: int, free: list[int] | None) -> list[int]:
    """Grow ``free`` (default: the support of ``z``) until the rows restricted to it have full rank."""
    if free is None:
        free = [j for j in range(n) if z[j] != 0]
    m = len(rows)
    # column space basis by incremental elimination over row coordinates
    basis: list[tuple[int, list]] = []

    def reduce(j):
        col = [row.get(j, ZERO) for row in rows]
        for p, b in basis:
            f = col[p]
            if f:
                col = [c - f * bb for c, bb in zip(col, b)]
        return col

    def add(col):
        p = next(i for i, v in enumerate(col) if v)
        inv = 1 / col[p]
        basis.append((p, [v * inv for v in col]))

    for j in free:
        col = reduce(j)
        if any(col):
            add(col)
    chosen = set(free)
    for j in range(n):
        if len(basis) == m:
            break
        if j in chosen:
            continue
        col = reduce(j)
        if any(col):
            add(col)
            chosen.add(j)
    if len(basis) < m:
        raise QpFailure("equality rows are linearly dependent")
    return sorted(chosen)


def _null_basis(R, pivots, ncols):
    piv = set(pivots)
    out = []
    for f in range(ncols):
        if f in piv:
            continue
        v = [ZERO] * ncols
        v[f] = Rational(1)
        for row, p in zip(R, pivots):
            if row[f]:
                v[p] = -row[f]
        out.append(v)
    return out


def solve_qp(
    qp: QuadraticProgram,
    z0: Sequence,
    free: Sequence[int] | None = None,
    active_rows: Sequence[int] = (),
    max_iterations: int = 20_000,
) -> QpResult:
    """Minimize ``qp`` starting from the feasible point ``z0``.

    ``free``/``active_rows`` warm-start the working set; they must describe
    constraints that hold at ``z0``.
    """
    n = qp.n
    z = list(z0)
    keep_eq = independent_rows(qp.eq_rows, n)
    eq_rows = [qp.eq_rows[i] for i in keep_eq]
    active = list(active_rows)
    F = _complete_free_set(eq_rows + [qp.le_rows[r] for r in active], z, n, None if free is None else list(free))
    for j in range(n):
        if z[j] and j not in set(F):
            raise ValueError("warm start leaves a positive variable in the working set")
    groups_of_free: dict[int, list[int]] = {}
    it = 0
    while True:
        it += 1
        if it > max_iterations:
            raise QpFailure("active-set iteration limit reached")
        rows = eq_rows + [qp.le_rows[r] for r in active]
        m = len(rows)
        nf = len(F)
        grad = qp.gradient(z)
        A = [[row.get(j, ZERO) for j in F] for row in rows]
        R, pivots = rref(A, nf)
        if len(R) < m:
            raise QpFailure("working set lost full row rank")
        Z = _null_basis(R, pivots, nf)
        p = None
        tmax = None   # None means unbounded step
        if Z:
            groups_of_free = {}
            for pos, j in enumerate(F):
                groups_of_free.setdefault(qp.group[j], []).append(pos)
            nz = len(Z)
            M = {}
            for g, poss in groups_of_free.items():
                if qp.h[g]:
                    M[g] = [sum((Z[k][pos] for pos in poss), ZERO) for k in range(nz)]
            H = [[ZERO] * nz for _ in range(nz)]
            for g, vec in M.items():
                hg = qp.h[g]
                nzk = [k for k in range(nz) if vec[k]]
                for k in nzk:
                    hk = hg * vec[k]
                    Hk = H[k]
                    for l in nzk:
                        Hk[l] += hk * vec[l]
            gF = [grad[j] for j in F]
            r = [-sum((Zk[pos] * gF[pos] for pos in range(nf) if Zk[pos]), ZERO) for Zk in Z]
            aug = [H[k] + [r[k]] for k in range(nz)]
            RH, ph = rref(aug, nz + 1)
            if ph and ph[-1] == nz:
                # inconsistent: a zero-curvature descent direction exists
                null = _null_basis(*rref(H, nz), nz)
                d = None
                for v in null:
                    s = sum((a * b for a, b in zip(r, v)), ZERO)
                    if s:
                        d = v if s > 0 else [-x for x in v]
                        break
                if d is None:
                    raise QpFailure("no descent direction in a singular subproblem")
                w = d
            else:
                w = [ZERO] * nz
                for row, c in zip(RH, ph):
                    w[c] = row[nz]
                tmax = Rational(1)
            p = [sum((w[k] * Z[k][pos] for k in range(nz) if w[k]), ZERO) for pos in range(nf)]
            if not any(p):
                p = None
        if p is None:
            # subspace minimizer: multipliers from A_F^T mu = grad_F
            AT = [[A[i][pos] for i in range(m)] + [grad[F[pos]]] for pos in range(nf)]
            RT, pt = rref(AT, m + 1)
            if pt and pt[-1] == m:
                raise QpFailure("stationarity system is inconsistent")
            mu = [ZERO] * m
            for row, c in zip(RT, pt):
                mu[c] = row[m]
            Fset = set(F)
            eta = [ZERO] * n
            for j in range(n):
                if j in Fset:
                    continue
                s = grad[j]
                for i in range(m):
                    a = rows[i].get(j)
                    if a:
                        s -= mu[i] * a
                eta[j] = s
            rho_active = [-v for v in mu[len(eq_rows):]]
            drop = None
            for j in range(n):
                if j not in Fset and eta[j] < 0:
                    drop = ("bound", j)
                    break
            if drop is None:
                cand = [(active[k], k) for k, v in enumerate(rho_active) if v < 0]
                if cand:
                    drop = ("row", min(cand)[1])
            if drop is None:
                nu = [ZERO] * len(qp.eq_rows)
                for i, idx in enumerate(keep_eq):
                    nu[idx] = mu[i]
                rho = [ZERO] * len(qp.le_rows)
                for k, r_ in enumerate(active):
                    rho[r_] = rho_active[k]
                log.debug("qp optimal after %d iterations", it)
                return QpResult(z, nu, rho, eta, list(F), list(active), it)
            if drop[0] == "bound":
                F = sorted(F + [drop[1]])
                log.debug("release bound on %d", drop[1])
            else:
                log.debug("release row %d", active[drop[1]])
                del active[drop[1]]
            continue
        # ratio test
        best = None
        for pos, j in enumerate(F):
            if p[pos] < 0:
                cand = (z[j] / -p[pos], j)
                if best is None or cand < best:
                    best = cand
        act = set(active)
        for r_, row in enumerate(qp.le_rows):
            if r_ in act:
                continue
            delta = sum((row.get(j, ZERO) * p[pos] for pos, j in enumerate(F) if p[pos]), ZERO)
            if delta > 0:
                cand = ((qp.le_rhs[r_] - _dot(row, z)) / delta, n + r_)
                if best is None or cand < best:
                    best = cand
        if best is None and tmax is None:
            raise QpFailure("objective is unbounded below")
        if best is None or (tmax is not None and best[0] >= tmax):
            t, block = tmax, None
        else:
            t, block = best
        if t:
            for pos, j in enumerate(F):
                if p[pos]:
                    z[j] += t * p[pos]
        if block is not None:
            if block < n:
                z[block] = ZERO
                F = [j for j in F if j != block]
                log.debug("bound on %d becomes active (step %s)", block, t)
            else:
                active.append(block - n)
                log.debug("row %d becomes active (step %s)", block - n, t)
