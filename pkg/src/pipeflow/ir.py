"""Affine-kernel intermediate representation.

A Kernel is a function-level unit: array declarations, external-op
declarations, and a body of sequenced loops and statements. Loops are
normalized at parse time to lower bound 0 and step 1 (the shift is folded
into access expressions), so iteration numbers and induction-variable
values coincide. SSA values never cross a loop boundary; loop-carried reuse
goes through arrays.

Everything here is an immutable value; the structural rewrites
(``apply_unroll``, ``apply_partition``) return fresh kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

STORAGE_KINDS = ("bram", "lut", "register")

LOAD, STORE, COMPUTE, CONST = "load", "store", "compute", "const"


class KernelError(ValueError):
    """Structural error that prevents building or rewriting a kernel."""


@dataclass(frozen=True)
class AffineExpr:
    """Sum of integer-coefficient induction-variable terms plus a constant."""

    terms: tuple = ()            # tuple of (iv name, int coeff), coeff != 0
    const: int = 0

    @classmethod
    def build(cls, pairs, const=0) -> "AffineExpr":
        acc = {}
        for iv, c in pairs:
            acc[iv] = acc.get(iv, 0) + int(c)
        terms = tuple(sorted((iv, c) for iv, c in acc.items() if c != 0))
        return cls(terms, int(const))

    @classmethod
    def constant(cls, value: int) -> "AffineExpr":
        return cls((), int(value))

    @classmethod
    def var(cls, iv: str, coeff: int = 1) -> "AffineExpr":
        return cls.build([(iv, coeff)])

    def shift_iv(self, iv: str, offset: int) -> "AffineExpr":
        """Substitute iv -> iv + offset."""
        delta = sum(c for v, c in self.terms if v == iv) * offset
        return AffineExpr(self.terms, self.const + delta)

    def substitute(self, iv: str, value: int) -> "AffineExpr":
        """Substitute iv -> concrete integer value."""
        kept = tuple((v, c) for v, c in self.terms if v != iv)
        delta = sum(c for v, c in self.terms if v == iv) * value
        return AffineExpr(kept, self.const + delta)

    def rename_iv(self, old: str, new: str) -> "AffineExpr":
        if all(v != old for v, _ in self.terms):
            return self
        return AffineExpr.build(
            [((new if v == old else v), c) for v, c in self.terms], self.const)

    def ivs(self) -> set:
        return {v for v, _ in self.terms}

    @property
    def is_const(self) -> bool:
        return not self.terms

    def evaluate(self, env) -> int:
        return self.const + sum(c * env[v] for v, c in self.terms)

    def __str__(self):
        parts = []
        for v, c in self.terms:
            if c == 1:
                parts.append(("+", v))
            elif c == -1:
                parts.append(("-", v))
            elif c < 0:
                parts.append(("-", f"{-c}*{v}"))
            else:
                parts.append(("+", f"{c}*{v}"))
        if self.const or not parts:
            parts.append(("-" if self.const < 0 else "+", str(abs(self.const))))
        out = " ".join(f"{s} {t}" for s, t in parts)
        return out[2:] if out.startswith("+ ") else "-" + out[2:]


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    scalar: str                   # opaque width tag, e.g. f32, i16
    dims: tuple                   # positive extents
    storage: str = "bram"
    ports: int = 1
    latency: int = 1              # read latency in cycles
    partition_dims: tuple = ()    # dimension indices, complete partitioning
    is_argument: bool = False

    @property
    def rank(self) -> int:
        return len(self.dims)


@dataclass(frozen=True)
class OpDef:
    name: str
    arity: int
    latency: int


@dataclass(frozen=True)
class Stmt:
    """One statement: load/store/compute/const.

    ``sid`` doubles as the SSA result name for value-producing statements;
    stores carry a synthesized id. ``operands`` entries are either SSA ids
    (str) or literal numbers (int/float as parsed text kept verbatim).
    """

    sid: str
    kind: str                     # LOAD | STORE | COMPUTE | CONST
    array: Optional[str] = None   # load/store
    index: tuple = ()             # tuple of AffineExpr, load/store
    opcode: Optional[str] = None  # compute
    operands: tuple = ()          # compute: all; store: (value,)
    literal: Optional[str] = None # const: source text of the number

    @property
    def is_access(self) -> bool:
        return self.kind in (LOAD, STORE)

    @property
    def produces_value(self) -> bool:
        return self.kind != STORE


@dataclass(frozen=True)
class Loop:
    iv: str                       # doubles as the loop id
    lower: int
    upper: int                    # exclusive; normalized kernels have lower=0
    target_ii: Optional[int] = None   # None = autotune ("?" or absent)
    unroll: bool = False
    body: tuple = ()              # Stmt | Loop

    @property
    def trip(self) -> int:
        return self.upper - self.lower


Item = Union[Stmt, Loop]


@dataclass(frozen=True)
class Kernel:
    name: str
    arrays: tuple = ()
    opdefs: tuple = ()
    body: tuple = ()

    def array(self, name: str) -> ArrayDecl:
        for a in self.arrays:
            if a.name == name:
                return a
        raise KernelError(f"unknown array {name!r}")

    def opdef(self, name: str) -> OpDef:
        for o in self.opdefs:
            if o.name == name:
                return o
        raise KernelError(f"unknown op {name!r}")

    def walk(self):
        """Yield (item, loop_chain) in program (pre-) order; loop_chain is the
        tuple of enclosing Loop objects, outermost first."""
        def go(items, chain):
            for item in items:
                yield item, chain
                if isinstance(item, Loop):
                    yield from go(item.body, chain + (item,))
        yield from go(self.body, ())

    def statements(self):
        """Yield (stmt, loop_chain) in program order."""
        for item, chain in self.walk():
            if isinstance(item, Stmt):
                yield item, chain

    def loops(self):
        for item, chain in self.walk():
            if isinstance(item, Loop):
                yield item, chain

    def stmt_chain(self, sid: str):
        for stmt, chain in self.statements():
            if stmt.sid == sid:
                return stmt, chain
        raise KernelError(f"unknown statement {sid!r}")

    def latency_of(self, stmt: Stmt) -> int:
        if stmt.kind in (LOAD, STORE):
            return self.array(stmt.array).latency
        if stmt.kind == COMPUTE:
            return self.opdef(stmt.opcode).latency
        return 0  # const


@dataclass(frozen=True)
class Diagnostic:
    where: str      # statement/loop/array id
    message: str

    def __str__(self):
        return f"{self.where}: {self.message}"


def validate_kernel(kernel: Kernel) -> list:
    """Check every structural invariant; returns diagnostics (empty = valid)."""
    diags = []
    say = lambda where, msg: diags.append(Diagnostic(where, msg))

    names = set()
    for a in kernel.arrays:
        if a.name in names:
            say(a.name, "duplicate name")
        names.add(a.name)
        if any(d <= 0 for d in a.dims):
            say(a.name, "array extents must be positive")
        if a.ports < 1:
            say(a.name, "ports must be >= 1")
        if a.latency < 0:
            say(a.name, "latency must be >= 0")
        if a.storage not in STORAGE_KINDS:
            say(a.name, f"unknown storage kind {a.storage!r}")
        bad = [d for d in a.partition_dims if not (0 <= d < a.rank)]
        if bad:
            say(a.name, f"partition dims {bad} out of range for rank {a.rank}")
    for o in kernel.opdefs:
        if o.name in names:
            say(o.name, "duplicate name")
        names.add(o.name)
        if o.latency < 0:
            say(o.name, "latency must be >= 0")
        if o.arity < 1:
            say(o.name, "arity must be >= 1")

    seen_loops = set()
    seen_sids = set()

    def visit(items, chain, region_defs):
        for item in items:
            if isinstance(item, Loop):
                if item.iv in seen_loops or item.iv in seen_sids:
                    say(item.iv, "duplicate loop id")
                seen_loops.add(item.iv)
                if item.trip <= 0:
                    say(item.iv, "empty trip count")
                if item.unroll and item.target_ii is not None:
                    say(item.iv, "unroll and pipeline(ii=...) are mutually exclusive")
                if item.target_ii is not None and item.target_ii < 1:
                    say(item.iv, "initiation interval must be positive")
                visit(item.body, chain + (item.iv,), {})
                continue
            stmt = item
            if stmt.sid in seen_sids or stmt.sid in seen_loops:
                say(stmt.sid, "duplicate statement id")
            seen_sids.add(stmt.sid)
            if stmt.is_access:
                try:
                    arr = kernel.array(stmt.array)
                except KernelError:
                    say(stmt.sid, f"unknown array {stmt.array!r}")
                    arr = None
                if arr is not None and len(stmt.index) != arr.rank:
                    say(stmt.sid,
                        f"rank mismatch: {len(stmt.index)} indices for "
                        f"rank-{arr.rank} array {arr.name!r}")
                for expr in stmt.index:
                    for iv in sorted(expr.ivs()):
                        if iv not in chain:
                            say(stmt.sid, f"index uses non-enclosing variable {iv!r}")
            if stmt.kind == COMPUTE:
                try:
                    op = kernel.opdef(stmt.opcode)
                    if len(stmt.operands) != op.arity:
                        say(stmt.sid,
                            f"arity mismatch: {stmt.opcode} takes {op.arity} operands")
                except KernelError:
                    say(stmt.sid, f"unknown opcode {stmt.opcode!r}")
            used = stmt.operands if stmt.kind != STORE else stmt.operands
            for opnd in used:
                if not isinstance(opnd, str):
                    continue
                if opnd in region_defs:
                    continue
                if opnd in seen_sids:
                    say(stmt.sid, f"ssa value {opnd!r} crosses region")
                else:
                    say(stmt.sid, f"operand {opnd!r} is not defined")
            if stmt.produces_value:
                region_defs[stmt.sid] = stmt

    visit(kernel.body, (), {})
    return diags


def _freshen(item: Item, suffix: str, renames: dict) -> Item:
    """Deep-copy an item with every defined id renamed by ``suffix`` and all
    references (operands, index ivs) rewritten via ``renames``."""
    if isinstance(item, Loop):
        new_iv = item.iv + suffix
        inner = dict(renames)
        inner[item.iv] = new_iv
        return replace(
            item,
            iv=new_iv,
            body=tuple(_freshen(it, suffix, inner) for it in item.body),
        )
    stmt = item
    new_index = []
    for expr in stmt.index:
        for old, new in renames.items():
            expr = expr.rename_iv(old, new)
        new_index.append(expr)
    new_operands = tuple(
        renames.get(o, o) if isinstance(o, str) else o for o in stmt.operands
    )
    new_sid = stmt.sid + suffix
    renames[stmt.sid] = new_sid
    return replace(stmt, sid=new_sid, index=tuple(new_index), operands=new_operands)


def apply_unroll(kernel: Kernel) -> Kernel:
    """Replace every unroll-marked loop by trip-count copies of its body with
    the induction variable substituted as a constant. Ids are freshened with
    the deterministic ``origId#iter`` scheme."""

    def subst_iv(item: Item, iv: str, value: int) -> Item:
        if isinstance(item, Loop):
            return replace(item, body=tuple(subst_iv(it, iv, value) for it in item.body))
        return replace(item, index=tuple(e.substitute(iv, value) for e in item.index))

    def expand(item: Item) -> list:
        if not isinstance(item, Loop):
            return [item]
        body = []
        for it in item.body:
            body.extend(expand(it))
        if not item.unroll:
            return [replace(item, body=tuple(body))]
        out = []
        for k in range(item.trip):
            value = item.lower + k
            renames = {}
            for it in body:
                it_k = subst_iv(it, item.iv, value)
                out.append(_freshen(it_k, f"#{k}", renames))
        return out

    new_body = []
    for item in kernel.body:
        new_body.extend(expand(item))
    return replace(kernel, body=tuple(new_body))


def bank_name(array: str, bank_index: tuple) -> str:
    return array + "".join(f"__{i}" for i in bank_index)


def apply_partition(kernel: Kernel) -> Kernel:
    """Split each partition-marked array into one bank per point of the
    partitioned dimensions; accesses are rewritten to the bank selected by
    their (necessarily constant) partition indices.

    Precondition: run after apply_unroll, so partition-dim indices are
    constants. Violations raise KernelError("non-constant partition index").
    """
    partitioned = {a.name: a for a in kernel.arrays if a.partition_dims}
    if not partitioned:
        return kernel

    import itertools

    new_arrays = []
    for a in kernel.arrays:
        if a.name not in partitioned:
            new_arrays.append(a)
            continue
        pdims = sorted(a.partition_dims)
        kept_dims = tuple(d for i, d in enumerate(a.dims) if i not in pdims)
        if not kept_dims:
            kept_dims = (1,)  # fully partitioned: rank-1 single-cell banks
        for point in itertools.product(*(range(a.dims[d]) for d in pdims)):
            new_arrays.append(replace(
                a, name=bank_name(a.name, point), dims=kept_dims, partition_dims=()))

    def rewrite(item: Item) -> Item:
        if isinstance(item, Loop):
            return replace(item, body=tuple(rewrite(it) for it in item.body))
        stmt = item
        if not stmt.is_access or stmt.array not in partitioned:
            return stmt
        a = partitioned[stmt.array]
        pdims = sorted(a.partition_dims)
        point = []
        for d in pdims:
            expr = stmt.index[d]
            if not expr.is_const:
                raise KernelError(
                    f"non-constant partition index in {stmt.sid!r}: "
                    f"{stmt.array}[..{expr}..] along dim {d}")
            point.append(expr.const)
        kept = tuple(e for i, e in enumerate(stmt.index) if i not in pdims)
        if not kept:
            kept = (AffineExpr.constant(0),)
        return replace(stmt, array=bank_name(stmt.array, tuple(point)), index=kept)

    return replace(kernel, arrays=tuple(new_arrays),
                   body=tuple(rewrite(it) for it in kernel.body))


def print_kernel(kernel: Kernel) -> str:
    """Canonical textual form; parse(print_kernel(k)) == k for normalized
    kernels. Attributes are always written explicitly."""
    out = [f"kernel {kernel.name} {{"]

    for a in kernel.arrays:
        dims = "".join(f"[{d}]" for d in a.dims)
        attrs = [f"ports={a.ports}", f"latency={a.latency}", f"storage={a.storage}"]
        if a.partition_dims:
            inner = ", ".join(f"dim={d}" for d in sorted(a.partition_dims))
            attrs.append(f"partition({inner})")
        if a.is_argument:
            attrs.append("arg")
        out.append(f"  array {a.name}: {a.scalar}{dims} {' '.join(attrs)};")
    for o in kernel.opdefs:
        out.append(f"  op {o.name} arity={o.arity} latency={o.latency};")

    def operand_str(o):
        return o if isinstance(o, str) else str(o)

    def emit(item: Item, depth: int):
        pad = "  " * depth
        if isinstance(item, Loop):
            attrs = ""
            if item.unroll:
                attrs = " unroll"
            else:
                ii = "?" if item.target_ii is None else str(item.target_ii)
                attrs = f" pipeline(ii={ii})"
            out.append(f"{pad}for {item.iv} in {item.lower}..{item.upper}{attrs} {{")
            for it in item.body:
                emit(it, depth + 1)
            out.append(f"{pad}}}")
            return
        stmt = item
        if stmt.kind == LOAD:
            idx = "".join(f"[{e}]" for e in stmt.index)
            out.append(f"{pad}{stmt.sid} = load {stmt.array}{idx};")
        elif stmt.kind == STORE:
            idx = "".join(f"[{e}]" for e in stmt.index)
            out.append(f"{pad}store {stmt.array}{idx}, {operand_str(stmt.operands[0])};")
        elif stmt.kind == COMPUTE:
            args = ", ".join(operand_str(o) for o in stmt.operands)
            out.append(f"{pad}{stmt.sid} = {stmt.opcode}({args});")
        else:
            out.append(f"{pad}{stmt.sid} = const {stmt.literal};")

    for item in kernel.body:
        emit(item, 1)
    out.append("}")
    return "\n".join(out) + "\n"
