"""Dependence analysis: conflicting access pairs and their polyhedra.

For every ordered pair of accesses that can conflict (same array with a
write involved, or same port of the same bank), the pair's happens-before
relation is decomposed by dependence level: one integer polyhedron per
common-loop depth, plus a loop-independent polyhedron when the source
textually precedes the sink. The minimum of the II-weighted distance over
each polyhedron is the slack consumed by the scheduler.

Expected input is a validated kernel after apply_unroll/apply_partition:
all remaining loops are real (non-unrolled) loops and banks are plain
arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ir import Kernel, Loop, Stmt

RAW, WAR, WAW, PORT = "RAW", "WAR", "WAW", "PORT"


@dataclass(frozen=True)
class GapModel:
    """Minimum cycles a dependent sink must trail its source, per pair kind.

    The defaults capture: a store takes one cycle to land (RAW/WAW), a write
    must not hit the cycle a read samples in (WAR), and a port serves one
    access per cycle (PORT).
    """

    raw: int = 1
    war: int = 1
    waw: int = 1
    port: int = 1

    def for_kind(self, kind: str) -> int:
        return {RAW: self.raw, WAR: self.war, WAW: self.waw, PORT: self.port}[kind]


@dataclass(frozen=True)
class AccessRef:
    sid: str
    array: str
    port: int
    kind: str                 # "read" | "write"
    index: tuple              # AffineExpr per dimension
    chain: tuple              # enclosing Loop objects, outermost first
    position: int             # pre-order statement index (program order)

    @property
    def loop_ids(self) -> tuple:
        return tuple(l.iv for l in self.chain)


@dataclass(frozen=True)
class AccessPair:
    source: AccessRef
    sink: AccessRef
    kind: str                 # RAW | WAR | WAW | PORT

    def common_depth(self) -> int:
        d = 0
        for a, b in zip(self.source.chain, self.sink.chain):
            if a.iv != b.iv:
                break
            d += 1
        return d

    def describe(self) -> str:
        return f"{self.source.sid} -> {self.sink.sid} [{self.kind}] on {self.source.array}"


LOOP_INDEPENDENT = None


@dataclass(frozen=True)
class DependenceProblem:
    """One happens-before level of one access pair, as an integer polyhedron.

    Variables are the source chain's ivs followed by the sink chain's ivs
    (sink names carry a prime). Rows are (coeffs-by-name, const) with the
    semantics  sum(coeff * var) + const  == 0  (equalities) or  >= 0.
    """

    pair: AccessPair
    level: Optional[int]          # 1-based common-loop depth, None = loop-independent
    min_gap: int

    @property
    def src_vars(self) -> tuple:
        return tuple((l.iv, l.trip) for l in self.pair.source.chain)

    @property
    def snk_vars(self) -> tuple:
        return tuple((l.iv + "'", l.trip) for l in self.pair.sink.chain)

    def variables(self) -> tuple:
        """All variables as (name, trip), source side first."""
        return self.src_vars + self.snk_vars

    def address_eq_rows(self) -> list:
        if self.pair.kind == PORT:
            return []
        rows = []
        for es, ek in zip(self.pair.source.index, self.pair.sink.index):
            coeffs = {}
            for iv, c in es.terms:
                coeffs[iv] = coeffs.get(iv, 0) + c
            for iv, c in ek.terms:
                name = iv + "'"
                coeffs[name] = coeffs.get(name, 0) - c
            rows.append(({k: v for k, v in coeffs.items() if v}, es.const - ek.const))
        return rows

    def level_eq_rows(self) -> list:
        depth = (self.pair.common_depth() if self.level is LOOP_INDEPENDENT
                 else self.level - 1)
        rows = []
        for p in range(depth):
            iv = self.pair.source.chain[p].iv
            rows.append(({iv: 1, iv + "'": -1}, 0))
        return rows

    def eq_rows(self) -> list:
        return self.level_eq_rows() + self.address_eq_rows()

    def ge_rows(self) -> list:
        if self.level is LOOP_INDEPENDENT:
            return []
        iv = self.pair.source.chain[self.level - 1].iv
        return [({iv + "'": 1, iv: -1}, -1)]  # snk - src - 1 >= 0

    def describe(self) -> str:
        lvl = "loop-independent" if self.level is LOOP_INDEPENDENT else f"level={self.level}"
        return f"{self.pair.describe()} {lvl} gap={self.min_gap}"


def port_assignment(kernel: Kernel) -> dict:
    """Assign each access statement a port of its array, round-robin in
    program order per array. Deterministic and total."""
    counters = {}
    ports = {}
    for stmt, _chain in kernel.statements():
        if not stmt.is_access:
            continue
        nports = kernel.array(stmt.array).ports
        k = counters.get(stmt.array, 0)
        ports[stmt.sid] = k % nports
        counters[stmt.array] = k + 1
    return ports


def access_refs(kernel: Kernel) -> list:
    ports = port_assignment(kernel)
    refs = []
    position = 0
    for stmt, chain in kernel.statements():
        if stmt.is_access:
            refs.append(AccessRef(
                sid=stmt.sid,
                array=stmt.array,
                port=ports[stmt.sid],
                kind="write" if stmt.kind == "store" else "read",
                index=stmt.index,
                chain=chain,
                position=position,
            ))
        position += 1
    return refs


def _can_precede(src: AccessRef, snk: AccessRef) -> bool:
    """Can some dynamic instance of src run strictly before some instance of
    snk in the sequential program? True on textual precedence, or when a
    common loop with trip >= 2 separates instances."""
    if src.position < snk.position:
        return True
    for a, b in zip(src.chain, snk.chain):
        if a.iv != b.iv:
            break
        if a.trip >= 2:
            return True
    return False


def collect_access_pairs(kernel: Kernel) -> list:
    """Every ordered (source, sink) pair whose kind applies and where some
    source instance can sequentially precede some sink instance. Ordered by
    program order of the source, then of the sink; a data pair precedes the
    port pair of the same two accesses."""
    refs = access_refs(kernel)
    pairs = []
    for src in refs:
        for snk in refs:
            if src.array != snk.array:
                continue
            if not _can_precede(src, snk):
                continue
            if src.kind == "write" or snk.kind == "write":
                kind = {("write", "read"): RAW,
                        ("read", "write"): WAR,
                        ("write", "write"): WAW}[(src.kind, snk.kind)]
                pairs.append(AccessPair(src, snk, kind))
            if src.port == snk.port:
                pairs.append(AccessPair(src, snk, PORT))
    return pairs


def build_dependence_problems(pair: AccessPair,
                              gaps: GapModel = GapModel()) -> list:
    """One problem per common-loop depth 1..d, plus the loop-independent
    problem iff the source textually precedes the sink (this also covers
    disjoint nests, where d = 0 and no happens-before constraint remains)."""
    gap = gaps.for_kind(pair.kind)
    problems = [DependenceProblem(pair, level, gap)
                for level in range(1, pair.common_depth() + 1)]
    if pair.source.position < pair.sink.position:
        problems.append(DependenceProblem(pair, LOOP_INDEPENDENT, gap))
    return problems


def all_dependence_problems(kernel: Kernel,
                            gaps: GapModel = GapModel()) -> list:
    out = []
    for pair in collect_access_pairs(kernel):
        out.extend(build_dependence_problems(pair, gaps))
    return out


def dump_problems(problems) -> str:
    """Canonical text form for --dump-deps: one record per problem, sorted
    variables and integer coefficients."""
    from .ilp import LinExpr

    lines = []
    for dp in problems:
        lvl = "loop-independent" if dp.level is LOOP_INDEPENDENT else str(dp.level)
        lines.append(
            f"pair {dp.pair.source.sid} -> {dp.pair.sink.sid}"
            f" kind={dp.pair.kind} array={dp.pair.source.array}"
            f" level={lvl} gap={dp.min_gap}"
        )
        for name, trip in dp.variables():
            lines.append(f"  var {name} in [0, {trip - 1}]")
        for coeffs, const in dp.eq_rows():
            lines.append(f"  {LinExpr(coeffs, const).canonical_str()} = 0")
        for coeffs, const in dp.ge_rows():
            lines.append(f"  {LinExpr(coeffs, const).canonical_str()} >= 0")
    return "\n".join(lines) + ("\n" if lines else "")
