"""Exact integer linear programming.

A small, fully deterministic solver stack used for both the per-dependence
slack problems and the global scheduling problem:

* ``solve_lp``  -- primal simplex on the LP relaxation, exact rational
  arithmetic, Bland's rule, bounded variables handled without extra rows.
* ``solve_ilp`` -- depth-first branch and bound on top of ``solve_lp``.
* ``brute_force_solve`` -- exhaustive enumeration over the integer box,
  kept as an independent oracle for the other two.

All arithmetic is exact. Values are ``gmpy2.mpq`` when gmpy2 is importable
(noticeably faster) and ``fractions.Fraction`` otherwise; both expose
``numerator``/``denominator`` and behave identically here.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

try:
    from gmpy2 import mpq as Rat
except ImportError:  # pragma: no cover
    from fractions import Fraction as Rat

ZERO = Rat(0)
ONE = Rat(1)

DEFAULT_MAX_PIVOTS = 10 ** 6
DEFAULT_BOX_LIMIT = 10 ** 6


def rat(x) -> "Rat":
    """Coerce an int/str/Fraction into the exact rational type."""
    return Rat(x)


def is_integral(x) -> bool:
    return rat(x).denominator == 1


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LinExpr:
    """A linear form: sum of coeff * var plus a rational constant.

    Zero coefficients are never stored. Instances are treated as immutable;
    all operators return fresh expressions.
    """

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: Optional[Mapping[str, object]] = None, const=0):
        cleaned = {}
        if coeffs:
            for var, c in coeffs.items():
                c = rat(c)
                if c != 0:
                    cleaned[var] = c
        self.coeffs = cleaned
        self.const = rat(const)

    @classmethod
    def term(cls, var: str, coeff=1) -> "LinExpr":
        return cls({var: coeff})

    def __add__(self, other):
        if isinstance(other, LinExpr):
            merged = dict(self.coeffs)
            for v, c in other.coeffs.items():
                merged[v] = merged.get(v, ZERO) + c
            return LinExpr(merged, self.const + other.const)
        return LinExpr(self.coeffs, self.const + rat(other))

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({v: -c for v, c in self.coeffs.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other if isinstance(other, LinExpr) else -rat(other))

    def __rsub__(self, other):
        return (-self) + rat(other)

    def __mul__(self, k):
        k = rat(k)
        return LinExpr({v: c * k for v, c in self.coeffs.items()}, self.const * k)

    __rmul__ = __mul__

    def evaluate(self, assignment: Mapping[str, object]):
        total = self.const
        for v, c in self.coeffs.items():
            total += c * rat(assignment[v])
        return total

    def variables(self) -> set:
        return set(self.coeffs)

    def canonical_str(self) -> str:
        parts = []
        for v in sorted(self.coeffs):
            c = self.coeffs[v]
            sign = "-" if c < 0 else "+"
            mag = -c if c < 0 else c
            term = v if mag == 1 else f"{mag}*{v}"
            parts.append(f"{sign} {term}")
        if self.const != 0 or not parts:
            sign = "-" if self.const < 0 else "+"
            mag = -self.const if self.const < 0 else self.const
            parts.append(f"{sign} {mag}")
        text = " ".join(parts)
        if text.startswith("+ "):
            return text[2:]
        return "-" + text[2:]

    def __repr__(self):
        return f"LinExpr({self.canonical_str()})"

    def __eq__(self, other):
        return (
            isinstance(other, LinExpr)
            and self.coeffs == other.coeffs
            and self.const == other.const
        )

    def __hash__(self):
        return hash((frozenset((v, c) for v, c in self.coeffs.items()), self.const))


@dataclass(frozen=True)
class Variable:
    name: str
    is_int: bool = True
    lower: Optional[object] = None
    upper: Optional[object] = None


LE, EQ, GE = "<=", "=", ">="


@dataclass(frozen=True)
class Constraint:
    expr: LinExpr
    rel: str  # one of LE, EQ, GE
    rhs: object

    def canonical_str(self) -> str:
        return f"{self.expr.canonical_str()} {self.rel} {rat(self.rhs)}"

    def satisfied_by(self, assignment) -> bool:
        lhs = self.expr.evaluate(assignment)
        r = rat(self.rhs)
        if self.rel == LE:
            return lhs <= r
        if self.rel == GE:
            return lhs >= r
        return lhs == r


@dataclass
class ILPProblem:
    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: LinExpr = field(default_factory=LinExpr)

    def add_variable(self, name, is_int=True, lower=None, upper=None):
        self.variables.append(Variable(name, is_int,
                                       None if lower is None else rat(lower),
                                       None if upper is None else rat(upper)))

    def add_constraint(self, expr: LinExpr, rel: str, rhs):
        if rel not in (LE, EQ, GE):
            raise ValueError(f"bad relation {rel!r}")
        self.constraints.append(Constraint(expr, rel, rat(rhs)))

    def check_wellformed(self):
        declared = {v.name for v in self.variables}
        if len(declared) != len(self.variables):
            raise ValueError("duplicate variable declaration")
        for con in self.constraints:
            missing = con.expr.variables() - declared
            if missing:
                raise ValueError(f"constraint uses undeclared variables {sorted(missing)}")
        missing = self.objective.variables() - declared
        if missing:
            raise ValueError(f"objective uses undeclared variables {sorted(missing)}")

    def satisfied_by(self, assignment) -> bool:
        return all(c.satisfied_by(assignment) for c in self.constraints)

    def canonical_str(self) -> str:
        lines = ["min: " + self.objective.canonical_str()]
        for v in self.variables:
            lo = "-inf" if v.lower is None else str(rat(v.lower))
            hi = "+inf" if v.upper is None else str(rat(v.upper))
            kind = "int" if v.is_int else "real"
            lines.append(f"var {v.name} {kind} [{lo}, {hi}]")
        for i, con in enumerate(self.constraints):
            lines.append(f"c{i}: {con.canonical_str()}")
        return "\n".join(lines) + "\n"


@dataclass
class Solution:
    status: Status
    objective: Optional[object] = None
    assignment: Optional[dict] = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


class SimplexWatchdog(RuntimeError):
    """Raised when a simplex run exceeds the anti-cycling pivot limit."""


class BoxTooLarge(ValueError):
    """Raised by brute_force_solve when the enumeration box exceeds the cap."""


_AT_LOWER, _AT_UPPER = 0, 1


class _Simplex:
    """Primal simplex in the bounded form  min c.y, A y (+slack) = b,
    0 <= y_j <= span_j.  Invariant: ``val[i]`` is the current value of the
    basic variable of row i; nonbasic variables sit at 0 or at their span.
    """

    def __init__(self, rows, rhs, spans, max_pivots):
        self.m = len(rows)
        self.n = len(spans)
        self.rows = rows            # m lists of n rationals
        self.val = rhs              # current basic values (adjusted on moves)
        self.spans = spans          # per-column span (None = unbounded above)
        self.basis = []             # filled by caller
        self.stat = [_AT_LOWER] * self.n
        self.banned = [False] * self.n
        self.max_pivots = max_pivots
        self.pivots = 0

    def reduced_costs(self, cost):
        d = list(cost)
        for i in range(self.m):
            cb = cost[self.basis[i]]
            if cb != 0:
                row = self.rows[i]
                for j in range(self.n):
                    if row[j] != 0:
                        d[j] -= cb * row[j]
        return d

    def run(self, d, allow_unbounded):
        """Iterate until optimal/unbounded. ``d`` is the reduced-cost row,
        updated in place."""
        while True:
            e = -1
            dirn = 0
            for j in range(self.n):
                if self.banned[j] or self.stat[j] is None:
                    continue
                if self.stat[j] == _AT_LOWER and d[j] < 0:
                    e, dirn = j, 1
                    break
                if self.stat[j] == _AT_UPPER and d[j] > 0:
                    e, dirn = j, -1
                    break
            if e < 0:
                return Status.OPTIMAL

            best_t = self.spans[e]      # bound-flip distance (None = +inf)
            best_row = -1
            best_target = _AT_LOWER
            for i in range(self.m):
                a = self.rows[i][e] * dirn
                if a > 0:
                    t = self.val[i] / a
                    target = _AT_LOWER
                elif a < 0:
                    ub = self.spans[self.basis[i]]
                    if ub is None:
                        continue
                    t = (ub - self.val[i]) / (-a)
                    target = _AT_UPPER
                else:
                    continue
                if best_t is None or t < best_t:
                    best_t, best_row, best_target = t, i, target
                elif t == best_t and (
                    best_row < 0 or self.basis[i] < self.basis[best_row]
                ):
                    best_row, best_target = i, target
            if best_t is None:
                if not allow_unbounded:
                    raise AssertionError("phase-1 objective cannot be unbounded")
                return Status.UNBOUNDED

            self.pivots += 1
            if self.pivots > self.max_pivots:
                raise SimplexWatchdog(
                    f"simplex exceeded {self.max_pivots} pivots")

            step = best_t
            if step != 0:
                de_move = dirn * step
                for i in range(self.m):
                    a = self.rows[i][e]
                    if a != 0:
                        self.val[i] -= a * de_move
            if best_row < 0:
                # pure bound flip
                self.stat[e] = _AT_UPPER if dirn > 0 else _AT_LOWER
                continue

            r = best_row
            leaving = self.basis[r]
            e_val = step if dirn > 0 else self.spans[e] - step
            # matrix pivot (values for other rows are already correct)
            row_r = self.rows[r]
            piv = row_r[e]
            if piv != 1:
                inv = ONE / piv
                row_r = [x * inv for x in row_r]
                self.rows[r] = row_r
            for i in range(self.m):
                if i == r:
                    continue
                f = self.rows[i][e]
                if f != 0:
                    self.rows[i] = [a - f * b for a, b in zip(self.rows[i], row_r)]
            f = d[e]
            if f != 0:
                for j in range(self.n):
                    if row_r[j] != 0:
                        d[j] -= f * row_r[j]
            self.basis[r] = e
            self.val[r] = e_val
            self.stat[e] = None       # basic
            self.stat[leaving] = best_target

    def value_of(self, j):
        if self.stat[j] == _AT_LOWER:
            return ZERO
        if self.stat[j] == _AT_UPPER:
            return self.spans[j]
        return self.val[self.basis.index(j)]


def _shift_variable(var, lo, hi):
    """Return (mode, data) describing how the original variable maps onto
    nonnegative shifted column(s):
      ('shift', l, span)   x = l + y,     0 <= y <= span (None = inf)
      ('flip',  u)         x = u - y,     y >= 0
      ('free',)            x = y+ - y-    two columns
    """
    if lo is not None:
        span = None if hi is None else hi - lo
        return ("shift", lo, span)
    if hi is not None:
        return ("flip", hi)
    return ("free",)


def solve_lp(problem: ILPProblem, max_pivots: int = DEFAULT_MAX_PIVOTS,
             _bound_overrides: Optional[dict] = None) -> Solution:
    """Exact optimum of the LP relaxation (integrality flags ignored).

    Deterministic: Bland's rule (smallest-index entering, smallest-index
    leaving on ties) guarantees termination; a pivot watchdog guards against
    implementation bugs rather than cycling.
    """
    problem.check_wellformed()
    overrides = _bound_overrides or {}

    # Column construction for shifted variables.
    col_of = {}          # var name -> (mode, columns, data)
    spans = []
    ncols = 0
    infeasible_bounds = False
    for v in problem.variables:
        lo, hi = v.lower, v.upper
        if v.name in overrides:
            olo, ohi = overrides[v.name]
            lo = olo if lo is None else (olo if olo is not None and olo > lo else lo)
            hi = ohi if hi is None else (ohi if ohi is not None and ohi < hi else hi)
        if lo is not None and hi is not None and lo > hi:
            infeasible_bounds = True
        mode = _shift_variable(v, lo, hi)
        if mode[0] == "free":
            col_of[v.name] = ("free", (ncols, ncols + 1), None)
            spans.extend([None, None])
            ncols += 2
        elif mode[0] == "shift":
            col_of[v.name] = ("shift", (ncols,), (mode[1], mode[2]))
            spans.append(mode[2])
            ncols += 1
        else:
            col_of[v.name] = ("flip", (ncols,), (mode[1],))
            spans.append(None)
            ncols += 1
    if infeasible_bounds:
        return Solution(Status.INFEASIBLE)

    # Rows in shifted coordinates.
    raw_rows = []
    for con in problem.constraints:
        coeff = [ZERO] * ncols
        shift_total = ZERO
        for name, c in con.expr.coeffs.items():
            mode, cols, data = col_of[name]
            if mode == "shift":
                coeff[cols[0]] += c
                shift_total += c * data[0]
            elif mode == "flip":
                coeff[cols[0]] -= c
                shift_total += c * data[0]
            else:
                coeff[cols[0]] += c
                coeff[cols[1]] -= c
        b = rat(con.rhs) - con.expr.const - shift_total
        raw_rows.append((coeff, con.rel, b))

    # Slack/surplus/artificial columns; ensure b >= 0 rowwise.
    rows = []
    rhs = []
    basis = []
    art_cols = []
    for coeff, rel, b in raw_rows:
        coeff = list(coeff)
        if b < 0:
            coeff = [-c for c in coeff]
            b = -b
            rel = {LE: GE, GE: LE, EQ: EQ}[rel]
        coeff.extend([ZERO] * (ncols - len(coeff)))
        if rel == LE:
            coeff.append(ONE)
            spans.append(None)
            basis_col = ncols
            ncols += 1
            is_art = False
        elif rel == GE:
            coeff.append(-ONE)
            spans.append(None)
            ncols += 1
            coeff.append(ONE)
            spans.append(None)
            basis_col = ncols
            ncols += 1
            is_art = True
        else:
            coeff.append(ONE)
            spans.append(None)
            basis_col = ncols
            ncols += 1
            is_art = True
        rows.append(coeff)
        rhs.append(b)
        basis.append(basis_col)
        if is_art:
            art_cols.append(basis_col)

    # Pad all rows to the final width.
    for row in rows:
        row.extend([ZERO] * (ncols - len(row)))

    sx = _Simplex(rows, rhs, spans, max_pivots)
    sx.basis = basis
    for b in basis:
        sx.stat[b] = None
    art_set = set(art_cols)

    # Phase 1: minimize the sum of artificials (only if any).
    if art_cols:
        cost1 = [ONE if j in art_set else ZERO for j in range(sx.n)]
        d1 = sx.reduced_costs(cost1)
        sx.run(d1, allow_unbounded=False)
        z1 = sum((sx.val[i] for i in range(sx.m) if sx.basis[i] in art_set), ZERO)
        if z1 != 0:
            return Solution(Status.INFEASIBLE)
        # Drive remaining artificials out of the basis (they sit at 0).
        for i in range(sx.m):
            if sx.basis[i] not in art_set:
                continue
            piv_col = -1
            for j in range(sx.n):
                if j in art_set or sx.stat[j] is None:
                    continue
                if sx.rows[i][j] != 0:
                    piv_col = j
                    break
            if piv_col < 0:
                continue  # redundant row; harmless to leave the artificial
            leaving = sx.basis[i]
            row_i = sx.rows[i]
            piv = row_i[piv_col]
            inv = ONE / piv
            row_i = [x * inv for x in row_i]
            sx.rows[i] = row_i
            entering_val = sx.val[i] * 0  # artificial was at 0, stays 0
            for k in range(sx.m):
                if k == i:
                    continue
                f = sx.rows[k][piv_col]
                if f != 0:
                    sx.rows[k] = [a - f * b for a, b in zip(sx.rows[k], row_i)]
            was_at_upper = sx.stat[piv_col] == _AT_UPPER
            sx.basis[i] = piv_col
            sx.val[i] = sx.spans[piv_col] if was_at_upper else entering_val
            sx.stat[piv_col] = None
            sx.stat[leaving] = _AT_LOWER
        for j in art_set:
            sx.banned[j] = True

    # Phase 2.
    cost2 = [ZERO] * sx.n
    for name, c in problem.objective.coeffs.items():
        mode, cols, data = col_of[name]
        if mode == "shift":
            cost2[cols[0]] += c
        elif mode == "flip":
            cost2[cols[0]] -= c
        else:
            cost2[cols[0]] += c
            cost2[cols[1]] -= c
    d2 = sx.reduced_costs(cost2)
    status = sx.run(d2, allow_unbounded=True)
    if status is Status.UNBOUNDED:
        return Solution(Status.UNBOUNDED)

    # Extract original-variable values.
    assignment = {}
    for v in problem.variables:
        mode, cols, data = col_of[v.name]
        if mode == "shift":
            assignment[v.name] = data[0] + sx.value_of(cols[0])
        elif mode == "flip":
            assignment[v.name] = data[0] - sx.value_of(cols[0])
        else:
            assignment[v.name] = sx.value_of(cols[0]) - sx.value_of(cols[1])
    obj = problem.objective.evaluate(assignment)
    return Solution(Status.OPTIMAL, obj, assignment)


def solve_ilp(problem: ILPProblem, max_pivots: int = DEFAULT_MAX_PIVOTS) -> Solution:
    """Exact integer optimum via depth-first branch and bound.

    Branches on the most-fractional integer variable (ties broken by lowest
    declaration index), exploring the down-branch first. Termination is
    guaranteed when every integer variable has finite bounds; callers in this
    package always ensure that.
    """
    problem.check_wellformed()
    int_vars = [v.name for v in problem.variables if v.is_int]
    var_index = {v.name: i for i, v in enumerate(problem.variables)}

    root = solve_lp(problem, max_pivots)
    if root.status is not Status.OPTIMAL:
        return Solution(root.status)

    best: Optional[Solution] = None
    stack = [{}]
    while stack:
        overrides = stack.pop()
        sol = solve_lp(problem, max_pivots, _bound_overrides=overrides) \
            if overrides else root
        if sol.status is Status.UNBOUNDED:
            return Solution(Status.UNBOUNDED)
        if sol.status is Status.INFEASIBLE:
            continue
        if best is not None and sol.objective >= best.objective:
            continue
        frac_var = None
        frac_score = None
        for name in int_vars:
            val = sol.assignment[name]
            if is_integral(val):
                continue
            f = val - (val.numerator // val.denominator)
            score = min(f, 1 - f)
            if frac_score is None or score > frac_score or (
                score == frac_score and var_index[name] < var_index[frac_var]
            ):
                frac_var, frac_score = name, score
        if frac_var is None:
            if best is None or sol.objective < best.objective:
                best = Solution(Status.OPTIMAL, sol.objective, dict(sol.assignment))
            continue
        val = sol.assignment[frac_var]
        floor_v = rat(val.numerator // val.denominator)
        lo, hi = overrides.get(frac_var, (None, None))
        down = dict(overrides)
        down[frac_var] = (lo, floor_v)
        up = dict(overrides)
        up[frac_var] = (floor_v + 1, hi)
        stack.append(up)
        stack.append(down)   # popped first: branch down first
    if best is None:
        return Solution(Status.INFEASIBLE)
    return best


def brute_force_solve(problem: ILPProblem,
                      box_limit: int = DEFAULT_BOX_LIMIT) -> Solution:
    """Exhaustive enumeration over the integer box. Test oracle.

    Requires every variable to be integer with finite bounds. Raises
    BoxTooLarge when the box exceeds ``box_limit`` points.
    """
    problem.check_wellformed()
    ranges = []
    for v in problem.variables:
        if not v.is_int:
            raise ValueError(f"brute force requires integer variables ({v.name})")
        if v.lower is None or v.upper is None:
            raise ValueError(f"brute force requires finite bounds ({v.name})")
        lo, hi = rat(v.lower), rat(v.upper)
        lo_i = -((-lo.numerator) // lo.denominator)  # ceil
        hi_i = hi.numerator // hi.denominator        # floor
        ranges.append(range(lo_i, hi_i + 1))
    size = 1
    for r in ranges:
        size *= len(r)
        if size > box_limit:
            raise BoxTooLarge(
                f"box too large: more than {box_limit} points")
    if size == 0:
        return Solution(Status.INFEASIBLE)

    names = [v.name for v in problem.variables]
    fast = _brute_force_numpy(problem, names, ranges)
    if fast is not None:
        return fast

    best_obj = None
    best_pt = None
    for point in itertools.product(*ranges):
        assignment = dict(zip(names, point))
        if not problem.satisfied_by(assignment):
            continue
        obj = problem.objective.evaluate(assignment)
        if best_obj is None or obj < best_obj:
            best_obj, best_pt = obj, assignment
    if best_obj is None:
        return Solution(Status.INFEASIBLE)
    return Solution(Status.OPTIMAL, best_obj,
                    {k: rat(v) for k, v in best_pt.items()})


def _brute_force_numpy(problem, names, ranges):
    """Vectorized enumeration when every coefficient is an integer of safe
    magnitude; returns None to fall back to the exact Python loop."""
    import numpy as np

    def int_coeffs(expr):
        out = {}
        for v, c in expr.coeffs.items():
            if c.denominator != 1 or abs(c.numerator) > 2 ** 31:
                return None
            out[v] = int(c.numerator)
        if expr.const.denominator != 1 or abs(expr.const.numerator) > 2 ** 31:
            return None
        return out, int(expr.const.numerator)

    rows = []
    for con in problem.constraints:
        got = int_coeffs(con.expr)
        if got is None or rat(con.rhs).denominator != 1:
            return None
        rows.append((got[0], got[1], con.rel, int(rat(con.rhs).numerator)))
    got = int_coeffs(problem.objective)
    if got is None:
        return None
    obj_coeffs, obj_const = got
    for r in ranges:
        if r and (abs(r.start) > 2 ** 20 or abs(r.stop) > 2 ** 20):
            return None

    grids = np.meshgrid(*[np.arange(r.start, r.stop, dtype=np.int64)
                          for r in ranges], indexing="ij")
    flat = [g.ravel() for g in grids]
    col = dict(zip(names, flat))
    npts = flat[0].size if flat else 1
    mask = np.ones(npts, dtype=bool)
    for coeffs, const, rel, rhs in rows:
        lhs = np.full(npts, const, dtype=np.int64)
        for v, c in coeffs.items():
            lhs += c * col[v]
        if rel == LE:
            mask &= lhs <= rhs
        elif rel == GE:
            mask &= lhs >= rhs
        else:
            mask &= lhs == rhs
        if not mask.any():
            return Solution(Status.INFEASIBLE)
    objv = np.full(npts, obj_const, dtype=np.int64)
    for v, c in obj_coeffs.items():
        objv += c * col[v]
    objv = np.where(mask, objv, np.iinfo(np.int64).max)
    at = int(np.argmin(objv))
    if not mask[at]:
        return Solution(Status.INFEASIBLE)
    assignment = {v: rat(int(col[v][at])) for v in names}
    return Solution(Status.OPTIMAL, rat(int(objv[at])), assignment)
