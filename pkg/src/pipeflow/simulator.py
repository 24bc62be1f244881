"""Cycle-accurate replay of a schedule.

Validity is checked against the same dependence polyhedra the scheduler
consumed, but by brute enumeration instead of optimization: every point of
every polyhedron must satisfy  start(sink instance) >= start(source
instance) + gap,  and no two accesses may share a (bank, port) in the same
cycle. Latency is measured as the last completion cycle; the sequential
baseline schedules each top-level nest in isolation and sums the spans.

Unit-coefficient equalities (the common case: address conflicts and level
prefixes) are eliminated exactly before enumeration, so the walk only
visits points of a reduced box that maps one-to-one onto the polyhedron.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .dependence import GapModel, all_dependence_problems
from .ilp import rat
from .ir import Kernel, Loop
from .scheduler import Schedule, absolute_time, schedule_kernel

DEFAULT_INSTANCE_CAP = 10 ** 7


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class DynInstance:
    sid: str
    ivs: tuple
    start: int
    end: int          # start + latency (declared latency for loads/stores)


@dataclass(frozen=True)
class Violation:
    pair: str         # "src -> snk [KIND] on array"
    src_sid: str
    src_ivs: tuple
    snk_sid: str
    snk_ivs: tuple
    required_gap: int
    actual_gap: int


@dataclass(frozen=True)
class PortConflict:
    bank: str
    port: int
    cycle: int
    instances: tuple  # ((sid, ivs), ...)


@dataclass
class VerifyReport:
    dependence_violations: list
    port_conflicts: list
    overlapped_latency: int
    sequential_latency: int
    speedup: Optional[object]       # exact rational, None when undefined
    violation_count: int = 0        # totals; the lists above may be truncated
    conflict_count: int = 0

    @property
    def ok(self) -> bool:
        return self.violation_count == 0 and self.conflict_count == 0

    def to_json(self) -> str:
        doc = {
            "dependence-violations": [
                {
                    "pair": v.pair,
                    "source": {"op": v.src_sid, "ivs": list(v.src_ivs)},
                    "sink": {"op": v.snk_sid, "ivs": list(v.snk_ivs)},
                    "required-gap": v.required_gap,
                    "actual-gap": v.actual_gap,
                }
                for v in self.dependence_violations
            ],
            "port-conflicts": [
                {
                    "bank": c.bank,
                    "port": c.port,
                    "cycle": c.cycle,
                    "instances": [{"op": sid, "ivs": list(ivs)}
                                  for sid, ivs in c.instances],
                }
                for c in self.port_conflicts
            ],
            "overlapped-latency": self.overlapped_latency,
            "sequential-latency": self.sequential_latency,
            "speedup": None if self.speedup is None else str(self.speedup),
            "dependence-violation-count": self.violation_count,
            "port-conflict-count": self.conflict_count,
        }
        return json.dumps(doc, indent=2) + "\n"


def _instance_count(kernel: Kernel) -> int:
    total = 0
    for stmt, chain in kernel.statements():
        n = 1
        for loop in chain:
            n *= loop.trip
        total += n
    return total


def enumerate_instances(kernel: Kernel, schedule: Schedule,
                        cap: int = DEFAULT_INSTANCE_CAP) -> list:
    """One DynInstance per (op, iteration vector), in program order of the
    op and row-major iteration order."""
    total = _instance_count(kernel)
    if total > cap:
        raise SimulationError(
            f"domain too large: {total} instances exceed the cap of {cap}")
    out = []
    for stmt, chain in kernel.statements():
        lat = kernel.latency_of(stmt)
        trips = [l.trip for l in chain]
        base = schedule.ops[stmt.sid]
        for loop in chain:
            base += schedule.loops[loop.iv].start
        iis = [schedule.loops[l.iv].ii for l in chain]
        starts = _kernels.instance_starts(base, iis, trips)
        idx = np.unravel_index(np.arange(starts.size), trips) if trips else None
        for k in range(starts.size):
            ivs = tuple(int(ax[k]) for ax in idx) if trips else ()
            s = int(starts[k])
            out.append(DynInstance(stmt.sid, ivs, s, s + lat))
    return out


def overlapped_latency(kernel: Kernel, schedule: Schedule) -> int:
    """Last completion cycle over all dynamic instances (0 when empty).
    Start times are increasing in every induction variable, so the last
    iteration of every loop bounds the whole space."""
    latest = 0
    for stmt, chain in kernel.statements():
        t = schedule.ops[stmt.sid]
        for loop in chain:
            ls = schedule.loops[loop.iv]
            t += ls.start + (ls.trip - 1) * ls.ii
        latest = max(latest, t + kernel.latency_of(stmt))
    return latest


def sequential_latency(kernel: Kernel, ii: dict,
                       gaps: GapModel = GapModel()) -> int:
    """No-overlap baseline: every top-level nest scheduled by itself
    (earliest start), spans summed, plus top-level op latencies."""
    total = 0
    for item in kernel.body:
        if isinstance(item, Loop):
            sub = dataclasses.replace(kernel, name=f"{kernel.name}__{item.iv}",
                                      body=(item,))
            sub_ii = {loop.iv: ii[loop.iv] for loop, _ in sub.loops()}
            sched = schedule_kernel(sub, sub_ii, gaps)
            if sched is None:
                raise SimulationError(
                    f"nest {item.iv!r} is unschedulable in isolation")
            total += overlapped_latency(sub, sched)
        else:
            total += kernel.latency_of(item)
    return total


def _reduce_problem(highs, eq_rows, ge_rows, obj, rhs):
    """Eliminate variables with +-1 coefficients in equality rows, exactly.

    Rows are (coeffs ndarray over the full variable set, rhs int) with
    semantics  coeffs @ v == rhs  /  >= rhs.  Returns the reduced system
    plus the substitution stack for witness reconstruction: entries
    (var, expr, const) meaning  v[var] = const - expr @ v  evaluated in
    reverse order.
    """
    n = highs.shape[0]
    highs = highs.copy()
    eq = [(row.copy(), int(b)) for row, b in eq_rows]
    ge = [(row.copy(), int(b)) for row, b in ge_rows]
    obj = obj.copy()
    rhs = int(rhs)
    active = np.ones(n, dtype=bool)
    subs = []

    while True:
        pick = None
        for r, (row, b) in enumerate(eq):
            cols = np.nonzero((np.abs(row) == 1) & active)[0]
            if cols.size:
                pick = (r, int(cols[0]))
                break
        if pick is None:
            break
        r, x = pick
        row, b = eq.pop(r)
        a_x = int(row[x])
        e = row * a_x          # e[x] == 1
        eb = b * a_x           # v[x] = eb - sum_{k != x} e[k] v[k]
        e[x] = 0
        subs.append((x, e.copy(), eb))
        active[x] = False

        def subst(rows):
            out = []
            for s, t in rows:
                c = int(s[x])
                if c:
                    s = s - c * e
                    s[x] = 0
                    t = t - c * eb
                out.append((s, t))
            return out

        eq = subst(eq)
        ge = subst(ge)
        c = int(obj[x])
        if c:
            obj = obj - c * e
            obj[x] = 0
            rhs = rhs - c * eb
        # bounds of the eliminated variable become inequalities
        ge.append((-e.copy(), -eb))                    # v[x] >= 0
        ge.append((e.copy(), eb - int(highs[x])))      # v[x] <= high

    keep = np.nonzero(active)[0]
    red_highs = highs[keep]
    red_eq = [(row[keep], b) for row, b in eq]
    red_ge = [(row[keep], b) for row, b in ge if row[keep].any() or b > 0]
    # constant ge rows that can never hold make the polyhedron empty
    for row, b in ge:
        if not row[keep].any() and b > 0:
            return None
    for row, b in eq:
        if not row[keep].any() and b != 0:
            return None
    red_obj = obj[keep]
    return red_highs, red_eq, red_ge, red_obj, rhs, keep, subs


def _expand_witness(point_reduced, keep, subs, n):
    full = np.zeros(n, dtype=np.int64)
    full[keep] = point_reduced
    for x, e, eb in reversed(subs):
        full[x] = eb - int(e @ full)
    return full


def verify_schedule(kernel: Kernel, schedule: Schedule,
                    gaps: GapModel = GapModel(),
                    cap: int = DEFAULT_INSTANCE_CAP,
                    max_witnesses: int = 16,
                    problems: Optional[list] = None) -> VerifyReport:
    """Replay every dependence-polyhedron point and every port's schedule.

    Violations and conflicts are collected (lists truncated to
    ``max_witnesses`` entries each; counts are exact) together with the
    overlapped/sequential latency comparison.
    """
    if _instance_count(kernel) > cap:
        raise SimulationError("domain too large for verification")
    if problems is None:
        problems = all_dependence_problems(kernel, gaps)

    violations = []
    violation_count = 0
    for dp in problems:
        names = [n for n, _ in dp.variables()]
        trips = np.array([t for _, t in dp.variables()], dtype=np.int64)
        n = trips.shape[0]
        col = {name: k for k, name in enumerate(names)}

        def as_row(coeffs, const):
            row = np.zeros(n, dtype=np.int64)
            for v, c in coeffs.items():
                row[col[v]] = c
            return row, -const  # sum + const (=|>=) 0  ->  row @ v (=|>=) -const

        eq_rows = [as_row(c, b) for c, b in dp.eq_rows()]
        ge_rows = [as_row(c, b) for c, b in dp.ge_rows()]

        obj = np.zeros(n, dtype=np.int64)
        c_src = schedule.ops[dp.pair.source.sid]
        for (name, _), loop in zip(dp.src_vars, dp.pair.source.chain):
            ls = schedule.loops[loop.iv]
            obj[col[name]] -= ls.ii
            c_src += ls.start
        c_snk = schedule.ops[dp.pair.sink.sid]
        for (name, _), loop in zip(dp.snk_vars, dp.pair.sink.chain):
            ls = schedule.loops[loop.iv]
            obj[col[name]] += ls.ii
            c_snk += ls.start
        rhs = dp.min_gap - c_snk + c_src   # violation: obj @ v < rhs

        reduced = _reduce_problem(trips - 1, eq_rows, ge_rows, obj, rhs)
        if reduced is None:
            continue
        red_highs, red_eq, red_ge, red_obj, red_rhs, keep, subs = reduced
        box = 1
        for h in red_highs:
            box *= int(h) + 1
        if box > cap:
            raise SimulationError(
                f"dependence polyhedron too large: {box} points "
                f"({dp.describe()})")
        eqA = np.array([r for r, _ in red_eq], dtype=np.int64).reshape(-1, len(red_highs))
        eqb = np.array([b for _, b in red_eq], dtype=np.int64)
        geA = np.array([r for r, _ in red_ge], dtype=np.int64).reshape(-1, len(red_highs))
        geb = np.array([b for _, b in red_ge], dtype=np.int64)
        _, nviol, wit = _kernels.gap_check(
            red_highs, eqA, eqb, geA, geb, red_obj, red_rhs, max_witnesses)
        if not nviol:
            continue
        violation_count += nviol
        for w in wit:
            if len(violations) >= max_witnesses:
                break
            full = _expand_witness(w, keep, subs, n)
            nsrc = len(dp.src_vars)
            src_ivs = tuple(int(x) for x in full[:nsrc])
            snk_ivs = tuple(int(x) for x in full[nsrc:])
            actual = (absolute_time(schedule, dp.pair.sink.sid, snk_ivs)
                      - absolute_time(schedule, dp.pair.source.sid, src_ivs))
            violations.append(Violation(
                dp.pair.describe(), dp.pair.source.sid, src_ivs,
                dp.pair.sink.sid, snk_ivs, dp.min_gap, actual))

    conflicts, conflict_count = _port_conflicts(kernel, schedule, max_witnesses)

    ovl = overlapped_latency(kernel, schedule)
    seq = sequential_latency(kernel, schedule.ii_assignment(), gaps)
    speedup = rat(seq) / rat(ovl) if ovl > 0 and seq > 0 else None
    return VerifyReport(violations, conflicts, ovl, seq, speedup,
                        violation_count, conflict_count)


def _port_conflicts(kernel: Kernel, schedule: Schedule, max_witnesses: int):
    groups = {}
    order = []
    from .dependence import access_refs

    for ref in access_refs(kernel):
        key = (ref.array, ref.port)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(ref)

    conflicts = []
    total = 0
    for key in order:
        bank, port = key
        starts_all = []
        owner = []
        linear = []
        refs = groups[key]
        for ridx, ref in enumerate(refs):
            base = schedule.ops[ref.sid]
            for loop in ref.chain:
                base += schedule.loops[loop.iv].start
            iis = [schedule.loops[l.iv].ii for l in ref.chain]
            trips = [l.trip for l in ref.chain]
            starts = _kernels.instance_starts(base, iis, trips)
            starts_all.append(starts)
            owner.append(np.full(starts.size, ridx, dtype=np.int64))
            linear.append(np.arange(starts.size, dtype=np.int64))
        starts = np.concatenate(starts_all)
        owner = np.concatenate(owner)
        linear = np.concatenate(linear)
        srt = np.lexsort((owner, linear, starts))
        starts, owner, linear = starts[srt], owner[srt], linear[srt]
        same = np.nonzero(starts[1:] == starts[:-1])[0]
        if same.size == 0:
            continue
        cycles = np.unique(starts[same])
        total += int(cycles.size)
        for cycle in cycles[: max(0, max_witnesses - len(conflicts))]:
            at = np.nonzero(starts == cycle)[0]
            insts = []
            for k in at:
                ref = refs[int(owner[k])]
                trips = [l.trip for l in ref.chain]
                ivs = (tuple(int(x) for x in
                             np.unravel_index(int(linear[k]), trips))
                       if trips else ())
                insts.append((ref.sid, ivs))
            conflicts.append(PortConflict(bank, port, int(cycle), tuple(insts)))
    return conflicts, total


def render_gantt(kernel: Kernel, schedule: Schedule, width: int = 96) -> str:
    """One row per top-level nest (plus one for any top-level ops), '#'
    marking cycles where some instance of the row is executing."""
    span = overlapped_latency(kernel, schedule)
    if span == 0:
        return "(empty schedule)\n"
    bucket = max(1, -(-span // width))
    ncols = -(-span // bucket)

    rows = []
    for item in kernel.body:
        if isinstance(item, Loop):
            label = item.iv
            stmts = [(s, c) for s, c in kernel.statements()
                     if c and c[0].iv == item.iv]
        else:
            label = "(top)"
            stmts = [(item, ())]
        if any(r[0] == label for r in rows):
            continue
        occupancy = np.zeros(span + 1, dtype=np.int64)
        for stmt, chain in stmts:
            lat = max(1, kernel.latency_of(stmt))
            base = schedule.ops[stmt.sid]
            for loop in chain:
                base += schedule.loops[loop.iv].start
            iis = [schedule.loops[l.iv].ii for l in chain]
            trips = [l.trip for l in chain]
            starts = _kernels.instance_starts(base, iis, trips)
            np.add.at(occupancy, starts, 1)
            np.add.at(occupancy, np.minimum(starts + lat, span), -1)
        active = np.cumsum(occupancy)[:span] > 0
        pad = (-len(active)) % bucket
        cells = np.pad(active, (0, pad)).reshape(ncols, bucket).any(axis=1)
        rows.append((label, "".join("#" if c else "." for c in cells)))

    label_w = max(len(r[0]) for r in rows)
    lines = [f"cycles 0..{span}  ({bucket} per column)"]
    for label, cells in rows:
        lines.append(f"{label.rjust(label_w)} |{cells}|")
    return "\n".join(lines) + "\n"
