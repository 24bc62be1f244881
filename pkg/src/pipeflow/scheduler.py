"""Schedule computation.

Per-dependence slacks come from small exact ILPs: minimize the II-weighted
iteration distance between sink and source over the dependence polyhedron,
minus the pair's gap. A finite slack bounds how far the source's
region-relative start may run ahead of the sink's:

    sum(source path) - sum(sink path) <= slack

where a path is the chain of loop start offsets below the deepest common
region plus the operation's own offset. The global scheduling ILP minimizes
the total shift-register delay (sum over SSA edges of consumer start minus
producer start minus producer latency); a second lexicographic solve pins
the delay at its optimum and minimizes the sum of all start offsets so
independent nests begin as early as possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .dependence import (
    DependenceProblem,
    GapModel,
    all_dependence_problems,
)
from .ilp import EQ, GE, LE, ILPProblem, LinExpr, Status, is_integral, solve_ilp
from .ir import Kernel, Loop


class ScheduleError(ValueError):
    """Raised for malformed inputs (not for infeasible II assignments)."""


@dataclass(frozen=True)
class SlackConstraint:
    src_path: tuple            # time-variable ids below the common region
    snk_path: tuple
    slack: int

    def describe(self) -> str:
        return (f"{' + '.join(self.src_path)} - ({' + '.join(self.snk_path)})"
                f" <= {self.slack}")


@dataclass(frozen=True)
class LoopSchedule:
    start: int
    ii: int
    trip: int


@dataclass
class Schedule:
    loops: dict                # loop id -> LoopSchedule
    ops: dict                  # stmt id -> start offset
    horizon: int
    chains: dict = field(default_factory=dict)  # stmt id -> tuple of loop ids
    delay: int = 0             # optimal shift-register delay objective

    def to_json(self) -> str:
        doc = {
            "loops": [{"id": iv, "start": ls.start, "ii": ls.ii}
                      for iv, ls in self.loops.items()],
            "ops": [{"id": sid, "start": t} for sid, t in self.ops.items()],
            "horizon": self.horizon,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str, kernel: Kernel) -> "Schedule":
        doc = json.loads(text)
        trips = {loop.iv: loop.trip for loop, _ in kernel.loops()}
        loops = {}
        for entry in doc["loops"]:
            iv = entry["id"]
            if iv not in trips:
                raise ScheduleError(f"schedule names unknown loop {iv!r}")
            loops[iv] = LoopSchedule(int(entry["start"]), int(entry["ii"]), trips[iv])
        ops = {entry["id"]: int(entry["start"]) for entry in doc["ops"]}
        sched = cls(loops, ops, int(doc["horizon"]))
        sched.attach_chains(kernel)
        return sched

    def attach_chains(self, kernel: Kernel):
        self.chains = {stmt.sid: tuple(l.iv for l in chain)
                       for stmt, chain in kernel.statements()}
        for sid in self.ops:
            if sid not in self.chains:
                raise ScheduleError(f"schedule names unknown op {sid!r}")

    def ii_assignment(self) -> dict:
        return {iv: ls.ii for iv, ls in self.loops.items()}


def absolute_time(schedule: Schedule, op: str, ivs: tuple) -> int:
    """Start cycle of the dynamic instance ``op(ivs)``: the sum over
    enclosing loops of (loop start + iv * II) plus the op's own offset."""
    chain = schedule.chains.get(op)
    if chain is None:
        raise ScheduleError(f"unknown op {op!r} (schedule has no chain info)")
    if len(ivs) != len(chain):
        raise ScheduleError(
            f"{op}: iteration vector has {len(ivs)} entries, expected {len(chain)}")
    t = schedule.ops[op]
    for loop_id, iv in zip(chain, ivs):
        ls = schedule.loops[loop_id]
        if not 0 <= iv < ls.trip:
            raise ScheduleError(f"{op}: iv {iv} out of bounds for loop {loop_id}")
        t += ls.start + iv * ls.ii
    return t


def slack_ilp(dp: DependenceProblem, ii: dict) -> ILPProblem:
    """The memory-dependence ILP: minimize the II-weighted distance from
    source to sink instance minus the gap, over the dependence polyhedron."""
    prob = ILPProblem()
    for name, trip in dp.variables():
        prob.add_variable(name, True, 0, trip - 1)
    for coeffs, const in dp.eq_rows():
        prob.add_constraint(LinExpr(coeffs, const), EQ, 0)
    for coeffs, const in dp.ge_rows():
        prob.add_constraint(LinExpr(coeffs, const), GE, 0)
    obj = {}
    for (name, _), loop in zip(dp.snk_vars, dp.pair.sink.chain):
        obj[name] = obj.get(name, 0) + _ii_of(ii, loop.iv)
    for (name, _), loop in zip(dp.src_vars, dp.pair.source.chain):
        obj[name] = obj.get(name, 0) - _ii_of(ii, loop.iv)
    prob.objective = LinExpr(obj, -dp.min_gap)
    return prob


def _ii_of(ii: dict, loop_id: str) -> int:
    try:
        v = ii[loop_id]
    except KeyError:
        raise ScheduleError(f"no initiation interval for loop {loop_id!r}")
    if v < 1:
        raise ScheduleError(f"loop {loop_id!r}: initiation interval must be >= 1")
    return int(v)


def compute_slack(dp: DependenceProblem, ii: dict) -> Optional[int]:
    """Optimum of the slack ILP, or None when the polyhedron is empty (the
    pair carries no actual dependence at this level)."""
    sol = solve_ilp(slack_ilp(dp, ii))
    if sol.status is Status.INFEASIBLE:
        return None
    assert sol.optimal and is_integral(sol.objective)
    return int(sol.objective)


def time_var(item_id: str) -> str:
    return "t_" + item_id


def _paths(dp: DependenceProblem):
    """Time-variable paths below the deepest common region for both sides."""
    d = dp.pair.common_depth()
    src = tuple(time_var(l.iv) for l in dp.pair.source.chain[d:]) \
        + (time_var(dp.pair.source.sid),)
    snk = tuple(time_var(l.iv) for l in dp.pair.sink.chain[d:]) \
        + (time_var(dp.pair.sink.sid),)
    return src, snk


def horizon(kernel: Kernel, ii: dict) -> int:
    """Finite bound on every time variable: the fully sequential schedule
    fits below it, so it never cuts off a feasible schedule."""
    h = 0
    for item in kernel.body:
        if isinstance(item, Loop):
            h += _ii_of(ii, item.iv) * item.trip
    for stmt, _ in kernel.statements():
        h += kernel.latency_of(stmt) + 1
    return h


def compute_slack_constraints(kernel: Kernel, ii: dict,
                              problems: Optional[list] = None,
                              gaps: GapModel = GapModel(),
                              dump: Optional[Callable] = None):
    """Slack per access pair (minimum over its feasible levels), deduplicated
    per (source path, sink path) keeping the tightest bound.

    Returns (constraints, feasible); ``feasible`` is False when a self pair
    (identical paths) demands a negative slack, which no schedule satisfies.
    """
    if problems is None:
        problems = all_dependence_problems(kernel, gaps)
    by_pair = {}
    order = []
    for dp in problems:
        key = (dp.pair.source.sid, dp.pair.sink.sid, dp.pair.kind)
        if key not in by_pair:
            by_pair[key] = []
            order.append(key)
        by_pair[key].append(dp)

    tightest = {}
    path_order = []
    feasible = True
    counter = 0
    for key in order:
        slacks = []
        for dp in by_pair[key]:
            if dump is not None:
                dump(f"slack_{counter:04d}", slack_ilp(dp, ii), dp.describe())
            counter += 1
            s = compute_slack(dp, ii)
            if s is not None:
                slacks.append(s)
        if not slacks:
            continue
        slack = min(slacks)
        src_path, snk_path = _paths(by_pair[key][0])
        if src_path == snk_path:
            if slack < 0:
                feasible = False
            continue
        pk = (src_path, snk_path)
        if pk not in tightest:
            tightest[pk] = slack
            path_order.append(pk)
        elif slack < tightest[pk]:
            tightest[pk] = slack
    constraints = [SlackConstraint(src, snk, tightest[(src, snk)])
                   for src, snk in path_order]
    return constraints, feasible


def ssa_edges(kernel: Kernel):
    """(producer stmt, consumer stmt) pairs within each region."""
    edges = []

    def region(items):
        defs = {}
        for item in items:
            if isinstance(item, Loop):
                region(item.body)
                continue
            for opnd in item.operands:
                if isinstance(opnd, str) and opnd in defs:
                    edges.append((defs[opnd], item))
            if item.produces_value:
                defs[item.sid] = item

    region(kernel.body)
    return edges


def build_scheduling_ilp(kernel: Kernel, ii: dict, slacks: list) -> ILPProblem:
    """Time variables for every op and loop in [0, horizon]; slack rows bound
    source paths against sink paths; SSA rows enforce producer latency. The
    objective is the total shift-register delay over SSA edges."""
    prob = ILPProblem()
    h = horizon(kernel, ii)
    for item, _chain in kernel.walk():
        name = item.iv if isinstance(item, Loop) else item.sid
        prob.add_variable(time_var(name), True, 0, h)

    for sc in slacks:
        expr = LinExpr()
        for v in sc.src_path:
            expr = expr + LinExpr.term(v)
        for v in sc.snk_path:
            expr = expr - LinExpr.term(v)
        prob.add_constraint(expr, LE, sc.slack)

    objective = LinExpr()
    for producer, consumer in ssa_edges(kernel):
        lat = kernel.latency_of(producer)
        edge = LinExpr.term(time_var(consumer.sid)) - LinExpr.term(time_var(producer.sid))
        prob.add_constraint(edge, GE, lat)
        objective = objective + edge - lat
    prob.objective = objective
    return prob


def schedule_kernel(kernel: Kernel, ii: dict,
                    gaps: GapModel = GapModel(),
                    problems: Optional[list] = None,
                    dump: Optional[Callable] = None) -> Optional[Schedule]:
    """Full pipeline for one II assignment. Returns None when the assignment
    is unachievable (the spec's infeasible outcome)."""
    for loop, _ in kernel.loops():
        _ii_of(ii, loop.iv)

    slacks, feasible = compute_slack_constraints(kernel, ii, problems, gaps, dump)
    if not feasible:
        return None
    prob = build_scheduling_ilp(kernel, ii, slacks)
    if dump is not None:
        dump("scheduling", prob, "delay-minimization pass")
    sol = solve_ilp(prob)
    if sol.status is not Status.OPTIMAL:
        return None
    delay = sol.objective
    assert is_integral(delay)

    # Lexicographic pass: pin the delay optimum, then start everything as
    # early as possible to recover maximal nest overlap.
    tie = build_scheduling_ilp(kernel, ii, slacks)
    tie.add_constraint(tie.objective, EQ, delay)
    total = LinExpr()
    for v in tie.variables:
        total = total + LinExpr.term(v.name)
    tie.objective = total
    if dump is not None:
        dump("scheduling_tiebreak", tie, "earliest-start pass")
    sol2 = solve_ilp(tie)
    assert sol2.optimal, "tie-break pass must stay feasible"

    assignment = {name: int(value) for name, value in sol2.assignment.items()}
    loops = {}
    for loop, _ in kernel.loops():
        loops[loop.iv] = LoopSchedule(assignment[time_var(loop.iv)],
                                      _ii_of(ii, loop.iv), loop.trip)
    ops = {stmt.sid: assignment[time_var(stmt.sid)]
           for stmt, _ in kernel.statements()}
    sched = Schedule(loops, ops, horizon(kernel, ii), delay=int(delay))
    sched.attach_chains(kernel)
    return sched


def sequential_span(loop: Loop, kernel: Kernel) -> int:
    """Cycles one iteration takes when everything inside runs back to back;
    used as the autotuner's upper bound (a loop can always be scheduled at
    this II, pipelining nothing)."""
    span = 0
    for item in loop.body:
        if isinstance(item, Loop):
            span += item.trip * sequential_span(item, kernel)
        else:
            span += kernel.latency_of(item) + 1
    return max(span, 1)


def autotune(kernel: Kernel, fixed: Optional[dict] = None,
             gaps: GapModel = GapModel()):
    """Binary-search the smallest feasible II for every loop without a target,
    outermost first in program order, holding already-tuned loops at their
    values and not-yet-tuned loops at their sequential-span upper bound.

    Returns (assignment, schedule). Raises ScheduleError when a loop has no
    feasible II even at its upper bound.
    """
    fixed = dict(fixed or {})
    problems = all_dependence_problems(kernel, gaps)

    assignment = {}
    tunable = []
    hi_bound = {}
    for loop, _chain in kernel.loops():
        hi_bound[loop.iv] = sequential_span(loop, kernel)
        if loop.iv in fixed:
            assignment[loop.iv] = fixed[loop.iv]
        elif loop.target_ii is not None:
            assignment[loop.iv] = loop.target_ii
        else:
            tunable.append(loop.iv)

    def feasible(candidate: dict) -> bool:
        return schedule_kernel(kernel, candidate, gaps, problems) is not None

    def current_with(loop_id, value):
        trial = {}
        for lid in hi_bound:
            if lid == loop_id:
                trial[lid] = value
            elif lid in assignment:
                trial[lid] = assignment[lid]
            else:
                trial[lid] = hi_bound[lid]
        return trial

    for loop_id in tunable:
        hi = hi_bound[loop_id]
        if not feasible(current_with(loop_id, hi)):
            raise ScheduleError(
                f"no feasible II for loop {loop_id!r} (tried up to {hi})")
        lo = 1
        while lo < hi:
            mid = (lo + hi) // 2
            if feasible(current_with(loop_id, mid)):
                hi = mid
            else:
                lo = mid + 1
        assignment[loop_id] = lo

    sched = schedule_kernel(kernel, assignment, gaps, problems)
    if sched is None:
        raise ScheduleError("autotuned assignment is not schedulable; "
                            "II interactions are not monotone for this kernel")
    return assignment, sched
