import os
import random
from collections import Counter
from itertools import product

import pytest

from pipeflow.ir import (
    AffineExpr,
    ArrayDecl,
    Kernel,
    KernelError,
    Loop,
    OpDef,
    Stmt,
    apply_partition,
    apply_unroll,
    print_kernel,
    validate_kernel,
)
from pipeflow.parser import ParseError, ValidationError, parse_kernel

SEED = int(os.environ.get("PIPEFLOW_SEED", "0"))

CONV_1D = """
kernel conv1d {
  array acc: f32[33] ports=2 latency=1 arg;
  array img: f32[33] ports=1 latency=1 arg;
  op fadd arity=2 latency=5;
  for j in 0..32 pipeline(ii=7) {
    prev = load acc[j];
    cur  = load img[j];
    s    = fadd(prev, cur);
    store acc[j + 1], s;
  }
}
"""

MATMUL = """
kernel matmul {
  array a: f32[10][10] ports=1 latency=1 arg;
  array b: f32[10][10] ports=1 latency=1 arg;
  array c: f32[10][10] ports=2 latency=1 arg;
  op fmul arity=2 latency=4;
  op fadd arity=2 latency=5;
  for i in 0..10 pipeline(ii=?) {
    for j in 0..10 pipeline(ii=?) {
      for k in 0..10 pipeline(ii=7) {
        c0 = load c[i][j];
        a0 = load a[i][k];
        b0 = load b[k][j];
        m  = fmul(a0, b0);
        s  = fadd(c0, m);
        store c[i][j], s;
      }
    }
  }
}
"""


class TestParse:
    def test_conv_source(self):
        k = parse_kernel(CONV_1D)
        assert k.name == "conv1d"
        assert k.opdef("fadd").latency == 5
        loops = [l for l, _ in k.loops()]
        assert len(loops) == 1 and loops[0].iv == "j"
        assert loops[0].target_ii == 7 and loops[0].trip == 32
        stmts = [s for s, _ in k.statements()]
        assert [s.kind for s in stmts] == ["load", "load", "compute", "store"]
        assert str(stmts[3].index[0]) == "j + 1"

    def test_empty_kernel(self):
        k = parse_kernel("kernel k {}")
        assert k.body == () and k.arrays == ()

    def test_rank_mismatch_rejected(self):
        src = """
        kernel k {
          array a: f32[4][4];
          for i in 0..4 pipeline(ii=1) { store a[i][i][i], 0; }
        }
        """
        with pytest.raises(ValidationError, match="rank mismatch"):
            parse_kernel(src)

    def test_unknown_array(self):
        with pytest.raises(ValidationError, match="unknown array"):
            parse_kernel("kernel k { for i in 0..2 pipeline(ii=1) { x = load a[i]; store b[i], x; } }")

    def test_unknown_opcode(self):
        with pytest.raises(ValidationError, match="unknown opcode"):
            parse_kernel("kernel k { x = const 1; y = frobnicate(x); }")

    def test_syntax_error_carries_position(self):
        with pytest.raises(ParseError) as exc:
            parse_kernel("kernel k {\n  array a f32[2];\n}")
        assert exc.value.line == 2

    def test_nonconstant_bound_rejected(self):
        with pytest.raises(ParseError):
            parse_kernel("kernel k { for i in 0..n pipeline(ii=1) {} }")

    def test_lower_bound_normalized(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[12];
          for i in 2..10 pipeline(ii=1) { store a[i], 1; }
        }
        """)
        loop = k.body[0]
        assert (loop.lower, loop.upper) == (0, 8)
        store = loop.body[0]
        assert str(store.index[0]) == "i + 2"

    def test_affine_coefficients(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[40];
          for i in 0..10 pipeline(ii=1) { store a[2*i - 1 + 3], 0; }
        }
        """)
        expr = k.body[0].body[0].index[0]
        assert expr.terms == (("i", 2),) and expr.const == 2

    def test_tunable_ii(self):
        k = parse_kernel(MATMUL)
        loops = {l.iv: l for l, _ in k.loops()}
        assert loops["i"].target_ii is None
        assert loops["k"].target_ii == 7

    def test_float_literals(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[4];
          op fmul arity=2 latency=4;
          c = const 0.25;
          x = load a[0];
          y = fmul(x, 0.5);
          store a[1], y;
        }
        """)
        stmts = [s for s, _ in k.statements()]
        assert stmts[0].literal == "0.25"
        assert stmts[2].operands[1] == 0.5


class TestValidate:
    def test_wellformed_matmul(self):
        assert validate_kernel(parse_kernel(MATMUL)) == []

    def test_empty_trip_count(self):
        k = Kernel("k", body=(Loop("i", 0, 0, 1, False, ()),))
        diags = validate_kernel(k)
        assert any("empty trip count" in d.message for d in diags)

    def test_ssa_crossing_region_flagged(self):
        inner = Loop("j", 0, 2, 1, False,
                     (Stmt("store#0", "store", array="a",
                           index=(AffineExpr.var("j"),), operands=("x",)),))
        k = Kernel(
            "k",
            arrays=(ArrayDecl("a", "f32", (4,)),),
            body=(Stmt("x", "const", literal="1"), inner),
        )
        diags = validate_kernel(k)
        assert any("crosses region" in d.message for d in diags)

    def test_unroll_pipeline_exclusive(self):
        k = Kernel("k", body=(Loop("i", 0, 2, 3, True, ()),))
        diags = validate_kernel(k)
        assert any("mutually exclusive" in d.message for d in diags)


def access_multiset(kernel):
    """Multiset of (array, concrete index, kind) over all dynamic instances."""
    out = Counter()
    for stmt, chain in kernel.statements():
        if not stmt.is_access:
            continue
        loops = [l for l in chain if not l.unroll]
        unrolled = [l for l in chain if l.unroll]
        spaces = [range(l.trip) for l in loops] + [range(l.trip) for l in unrolled]
        names = [l.iv for l in loops] + [l.iv for l in unrolled]
        for point in product(*spaces):
            env = dict(zip(names, point))
            idx = tuple(e.evaluate(env) for e in stmt.index)
            out[(stmt.array, idx, stmt.kind)] += 1
    return out


class TestUnroll:
    def test_simple_substitution(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[3];
          for x in 0..3 unroll { store a[x], 0; }
        }
        """)
        u = apply_unroll(k)
        stores = [s for s, _ in u.statements()]
        assert [s.sid for s in stores] == ["store#0#0", "store#0#1", "store#0#2"]
        assert [s.index[0].const for s in stores] == [0, 1, 2]
        assert all(s.index[0].is_const for s in stores)

    def test_nested_2x2(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[2][2];
          for i in 0..4 pipeline(ii=1) {
            for x in 0..2 unroll {
              for y in 0..2 unroll {
                v = load a[x][y];
                store a[x][y], v;
              }
            }
          }
        }
        """)
        u = apply_unroll(k)
        loads = [s for s, _ in u.statements() if s.kind == "load"]
        assert len(loads) == 4
        # operand references were rewritten copy by copy
        stores = [s for s, _ in u.statements() if s.kind == "store"]
        assert {st.operands[0] for st in stores} == {ld.sid for ld in loads}

    def test_identity_without_unroll_marks(self):
        k = parse_kernel(MATMUL)
        assert apply_unroll(k) == k

    def test_access_multiset_preserved(self):
        rng = random.Random(SEED)
        for _ in range(25):
            k = _random_unrollable_kernel(rng)
            u = apply_unroll(k)
            assert validate_kernel(u) == []
            assert access_multiset(k) == access_multiset(u)


def _random_unrollable_kernel(rng):
    depth = rng.randint(1, 3)
    arr = ArrayDecl("a", "f32", (16, 16))
    ivs = ["i", "j", "k"][:depth]
    trips = [rng.randint(1, 4) for _ in ivs]
    unrolls = [rng.random() < 0.5 for _ in ivs]

    def expr(c0_range=4):
        pairs = [(iv, rng.randint(-1, 2)) for iv in ivs if rng.random() < 0.7]
        return AffineExpr.build(pairs, rng.randint(0, c0_range))

    stmts = [
        Stmt("x", "load", array="a", index=(expr(), expr())),
        Stmt("store#0", "store", array="a", index=(expr(), expr()),
             operands=("x",)),
    ]
    body = tuple(stmts)
    for iv, trip, unr in reversed(list(zip(ivs, trips, unrolls))):
        body = (Loop(iv, 0, trip, None if unr else 1, unr, body),)
    return Kernel("k", arrays=(arr,), body=body)


class TestPartition:
    def test_constant_fold_to_bank(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[4][8] partition(dim=0);
          for j in 0..8 pipeline(ii=1) {
            v = load a[2][j];
            store a[3][j], v;
          }
        }
        """)
        p = apply_partition(k)
        names = [arr.name for arr in p.arrays]
        assert names == ["a__0", "a__1", "a__2", "a__3"]
        load = next(s for s, _ in p.statements() if s.kind == "load")
        assert load.array == "a__2" and len(load.index) == 1
        assert p.array("a__2").dims == (8,)

    def test_live_iv_in_partition_dim_rejected(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[4][8] partition(dim=0);
          for i in 0..4 pipeline(ii=1) {
            for j in 0..8 pipeline(ii=1) { store a[i][j], 0; }
          }
        }
        """)
        with pytest.raises(KernelError, match="non-constant partition index"):
            apply_partition(k)

    def test_identity_without_partition(self):
        k = parse_kernel(MATMUL)
        assert apply_partition(k) == k

    def test_unroll_then_partition_bank_multiset(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[3][8] partition(dim=0);
          for j in 0..8 pipeline(ii=1) {
            for x in 0..3 unroll {
              v = load a[x][j];
              store a[x][j], v;
            }
          }
        }
        """)
        u = apply_unroll(k)
        p = apply_partition(u)
        assert validate_kernel(p) == []
        before = access_multiset(u)
        after = access_multiset(p)
        merged = Counter()
        for (bank, idx, kind), count in after.items():
            base, _, suffix = bank.partition("__")
            merged[(base, (int(suffix),) + idx, kind)] += count
        assert merged == before

    def test_fully_partitioned_array_keeps_rank_one(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[2] partition(dim=0);
          v = const 1;
          store a[1], v;
        }
        """)
        p = apply_partition(k)
        assert p.array("a__1").dims == (1,)
        store = next(s for s, _ in p.statements() if s.kind == "store")
        assert store.array == "a__1" and store.index[0].const == 0


class TestPrinter:
    @pytest.mark.parametrize("src", [CONV_1D, MATMUL, "kernel k {}"])
    def test_parse_print_parse_fixpoint(self, src):
        k1 = parse_kernel(src)
        text1 = print_kernel(k1)
        k2 = parse_kernel(text1)
        assert k1 == k2
        assert print_kernel(k2) == text1

    def test_canonical_attrs_explicit(self):
        text = print_kernel(parse_kernel("kernel k { array a: f32[2]; }"))
        assert "array a: f32[2] ports=1 latency=1 storage=bram;" in text
