import os
import random
from itertools import product

import pytest

from pipeflow.dependence import (
    PORT,
    RAW,
    WAR,
    WAW,
    GapModel,
    access_refs,
    all_dependence_problems,
    build_dependence_problems,
    collect_access_pairs,
    dump_problems,
    port_assignment,
)
from pipeflow.ir import AffineExpr, ArrayDecl, Kernel, Loop, Stmt, apply_unroll
from pipeflow.parser import parse_kernel

SEED = int(os.environ.get("PIPEFLOW_SEED", "0"))

MATMUL = """
kernel matmul {
  array a: f32[10][10] ports=1 latency=1 arg;
  array b: f32[10][10] ports=1 latency=1 arg;
  array c: f32[10][10] ports=2 latency=1 arg;
  op fmul arity=2 latency=4;
  op fadd arity=2 latency=5;
  for i in 0..10 pipeline(ii=100) {
    for j in 0..10 pipeline(ii=10) {
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

INTERLOOP = """
kernel interloop {
  array src: f32[10][10] ports=1 latency=1 arg;
  array mid: f32[10][10] ports=2 latency=1;
  array out: f32[10][10] ports=1 latency=1 arg;
  op fadd arity=2 latency=5;
  for i in 0..10 pipeline(ii=10) {
    for j in 0..10 pipeline(ii=1) {
      x = load src[i][j];
      y = fadd(x, x);
      store mid[i][j], y;
    }
  }
  for u in 0..10 pipeline(ii=10) {
    for v in 0..10 pipeline(ii=1) {
      p = load mid[u][v];
      q = fadd(p, p);
      store out[u][v], q;
    }
  }
}
"""


def pairs_by_kind(kernel, kind):
    return [(p.source.sid, p.sink.sid)
            for p in collect_access_pairs(kernel) if p.kind == kind]


class TestPortAssignment:
    def test_round_robin(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[8] ports=2;
          for i in 0..8 pipeline(ii=1) {
            x = load a[i];
            y = load a[i];
            store a[i], x;
          }
        }
        """)
        ports = port_assignment(k)
        assert ports == {"x": 0, "y": 1, "store#0": 0}

    def test_single_port(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[8];
          x = load a[0];
          y = load a[1];
          store a[2], y;
        }
        """)
        assert set(port_assignment(k).values()) == {0}

    def test_partitioned_banks_restart(self):
        from pipeflow.ir import apply_partition
        k = parse_kernel("""
        kernel k {
          array a: f32[2][8] ports=2 partition(dim=0);
          x = load a[0][3];
          y = load a[1][4];
          store a[0][5], x;
          store a[1][6], y;
        }
        """)
        ports = port_assignment(apply_partition(k))
        assert ports == {"x": 0, "y": 0, "store#0": 1, "store#1": 1}


class TestCollectPairs:
    def test_matmul_contains_paper_pairs(self):
        k = parse_kernel(MATMUL)
        raw = pairs_by_kind(k, RAW)
        war = pairs_by_kind(k, WAR)
        assert ("store#0", "c0") in raw
        assert ("c0", "store#0") in war

    def test_reads_only_no_data_pairs(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[8] ports=2;
          array o1: f32[8]; array o2: f32[8];
          for i in 0..8 pipeline(ii=1) { x = load a[i]; store o1[i], x; }
          for u in 0..8 pipeline(ii=1) { y = load a[u]; store o2[u], y; }
        }
        """)
        pairs = [p for p in collect_access_pairs(k) if p.source.array == "a"]
        assert all(p.kind == PORT for p in pairs)
        # distinct ports for x and y, so only self pairs remain
        assert {(p.source.sid, p.sink.sid) for p in pairs} == {("x", "x"), ("y", "y")}

    def test_single_store_self_pairs(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[8];
          for i in 0..8 pipeline(ii=1) { store a[i], 1; }
        }
        """)
        kinds = {p.kind for p in collect_access_pairs(k)}
        assert kinds == {WAW, PORT}

    def test_no_self_pair_without_enclosing_loop(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[8];
          store a[0], 1;
        }
        """)
        assert collect_access_pairs(k) == []

    def test_deterministic_order(self):
        k = parse_kernel(MATMUL)
        a = [(p.source.sid, p.sink.sid, p.kind) for p in collect_access_pairs(k)]
        b = [(p.source.sid, p.sink.sid, p.kind) for p in collect_access_pairs(k)]
        assert a == b
        positions = [(p.source.position, p.sink.position) for p in collect_access_pairs(k)]
        assert positions == sorted(positions)


class TestBuildProblems:
    def test_matmul_levels(self):
        k = parse_kernel(MATMUL.replace("0..10", "0..3").replace("[10][10]", "[3][3]"))
        raw = next(p for p in collect_access_pairs(k)
                   if p.kind == RAW and p.source.sid == "store#0" and p.sink.sid == "c0")
        problems = build_dependence_problems(raw)
        # three levels, no loop-independent problem (store follows load textually)
        assert [dp.level for dp in problems] == [1, 2, 3]
        # levels 1 and 2 are infeasible once the address equalities bind
        for dp, feasible in zip(problems, (False, False, True)):
            assert _polyhedron_nonempty(dp) == feasible

    def test_interloop_cross_nest_single_problem(self):
        k = parse_kernel(INTERLOOP)
        raw = next(p for p in collect_access_pairs(k)
                   if p.kind == RAW and p.source.array == "mid")
        problems = build_dependence_problems(raw)
        assert len(problems) == 1
        dp = problems[0]
        assert dp.level is None and dp.ge_rows() == []
        assert dp.eq_rows() == [({"i": 1, "u'": -1}, 0), ({"j": 1, "v'": -1}, 0)]

    def test_war_same_iteration_feasible(self):
        k = parse_kernel(MATMUL.replace("0..10", "0..3").replace("[10][10]", "[3][3]"))
        war = next(p for p in collect_access_pairs(k)
                   if p.kind == WAR and p.source.sid == "c0")
        problems = build_dependence_problems(war)
        li = [dp for dp in problems if dp.level is None]
        assert len(li) == 1
        assert _polyhedron_nonempty(li[0])

    def test_gap_model(self):
        k = parse_kernel(MATMUL)
        pair = next(p for p in collect_access_pairs(k) if p.kind == RAW)
        dp = build_dependence_problems(pair, GapModel(raw=3))[0]
        assert dp.min_gap == 3

    def test_dump_format(self):
        k = parse_kernel(INTERLOOP)
        problems = all_dependence_problems(k)
        text = dump_problems(problems)
        assert "kind=RAW array=mid level=loop-independent gap=1" in text
        assert "  var u' in [0, 9]" in text
        assert "i - u' = 0" in text


def _polyhedron_nonempty(dp, cap=200000):
    names = [n for n, _ in dp.variables()]
    trips = [t for _, t in dp.variables()]
    size = 1
    for t in trips:
        size *= t
    assert size <= cap
    for point in product(*(range(t) for t in trips)):
        env = dict(zip(names, point))
        ok = all(sum(c * env[v] for v, c in row.items()) + const == 0
                 for row, const in dp.eq_rows())
        ok = ok and all(sum(c * env[v] for v, c in row.items()) + const >= 0
                        for row, const in dp.ge_rows())
        if ok:
            return True
    return False


# --- exhaustive soundness oracle -------------------------------------------

def _stmt_paths(kernel):
    """Map sid -> list of region positions [p0, p1, ...] along its chain."""
    paths = {}

    def go(items, prefix):
        for idx, item in enumerate(items):
            if isinstance(item, Loop):
                go(item.body, prefix + [idx])
            else:
                paths[item.sid] = prefix + [idx]

    go(kernel.body, [])
    return paths


def _instances(kernel):
    """Yield (access_ref, ivs, seq_key) for every dynamic access instance."""
    paths = _stmt_paths(kernel)
    for ref in access_refs(kernel):
        path = paths[ref.sid]
        trips = [l.trip for l in ref.chain]
        for ivs in product(*(range(t) for t in trips)):
            key = []
            for p, iv in zip(path, ivs):
                key.extend([p, iv])
            key.append(path[-1])
            yield ref, ivs, tuple(key)


def _problem_contains(dp, src_ivs, snk_ivs):
    env = {}
    for (name, _), value in zip(dp.src_vars, src_ivs):
        env[name] = value
    for (name, _), value in zip(dp.snk_vars, snk_ivs):
        env[name] = value
    for row, const in dp.eq_rows():
        if sum(c * env[v] for v, c in row.items()) + const != 0:
            return False
    for row, const in dp.ge_rows():
        if sum(c * env[v] for v, c in row.items()) + const < 0:
            return False
    return True


def assert_soundness(kernel):
    """Every sequentially ordered conflicting instance pair lies in exactly
    one emitted problem of its pair; problems of a pair are disjoint."""
    pairs = collect_access_pairs(kernel)
    problems = {}
    for p in pairs:
        problems[(p.source.sid, p.sink.sid, p.kind)] = build_dependence_problems(p)

    insts = list(_instances(kernel))
    for src, src_ivs, src_key in insts:
        for snk, snk_ivs, snk_key in insts:
            if src.array != snk.array or not src_key < snk_key:
                continue
            conflicts = []
            if src.kind == "write" or snk.kind == "write":
                env_s = {l.iv: v for l, v in zip(src.chain, src_ivs)}
                env_k = {l.iv: v for l, v in zip(snk.chain, snk_ivs)}
                addr_s = tuple(e.evaluate(env_s) for e in src.index)
                addr_k = tuple(e.evaluate(env_k) for e in snk.index)
                if addr_s == addr_k:
                    kind = {("write", "read"): RAW, ("read", "write"): WAR,
                            ("write", "write"): WAW}[(src.kind, snk.kind)]
                    conflicts.append(kind)
            if src.port == snk.port:
                conflicts.append(PORT)
            for kind in conflicts:
                dps = problems.get((src.sid, snk.sid, kind))
                assert dps, (
                    f"no problems emitted for {src.sid}->{snk.sid} {kind} "
                    f"covering instances {src_ivs}->{snk_ivs}")
                hits = sum(_problem_contains(dp, src_ivs, snk_ivs) for dp in dps)
                assert hits == 1, (
                    f"{src.sid}{src_ivs} -> {snk.sid}{snk_ivs} {kind}: "
                    f"covered by {hits} problems")

    # no problem may contain a non-ordered or self pair
    for p in pairs:
        for dp in problems[(p.source.sid, p.sink.sid, p.kind)]:
            for src, src_ivs, src_key in insts:
                if src.sid != p.source.sid:
                    continue
                for snk, snk_ivs, snk_key in insts:
                    if snk.sid != p.sink.sid:
                        continue
                    if _problem_contains(dp, src_ivs, snk_ivs):
                        assert src_key < snk_key, (
                            f"problem {dp.describe()} relates non-ordered "
                            f"instances {src_ivs} -> {snk_ivs}")


class TestSoundness:
    def test_small_matmul(self):
        src = MATMUL.replace("0..10", "0..3").replace("[10][10]", "[3][3]")
        assert_soundness(parse_kernel(src))

    def test_small_interloop(self):
        src = INTERLOOP.replace("0..10", "0..3").replace("[10][10]", "[3][3]")
        assert_soundness(parse_kernel(src))

    def test_single_store_self(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[5];
          for i in 0..5 pipeline(ii=1) { store a[i], 1; }
        }
        """)
        assert_soundness(k)

    def test_nonunit_coefficients(self):
        k = parse_kernel("""
        kernel k {
          array a: f32[10] ports=2;
          array b: f32[5] ports=2;
          for i in 0..5 pipeline(ii=1) {
            x = load a[2*i];
            store b[i], x;
          }
          for u in 0..5 pipeline(ii=1) {
            y = load b[u];
            store a[u + 4], y;
          }
        }
        """)
        assert_soundness(k)

    def test_randomized_kernels(self):
        rng = random.Random(SEED)
        for trial in range(20):
            k = _random_access_kernel(rng)
            assert_soundness(k)

    def test_same_address_pair_exists_iff_noninjective(self):
        # store a[i] over i in 0..4: injective index, WAW polyhedra all empty
        inj = parse_kernel("""
        kernel k { array a: f32[8];
          for i in 0..4 pipeline(ii=1) { store a[i], 1; } }
        """)
        waw = [p for p in collect_access_pairs(inj) if p.kind == WAW]
        assert waw and not any(
            _polyhedron_nonempty(dp)
            for p in waw for dp in build_dependence_problems(p))
        # store a[0]: constant index, the level-1 polyhedron is populated
        const = parse_kernel("""
        kernel k { array a: f32[8];
          for i in 0..4 pipeline(ii=1) { store a[0], 1; } }
        """)
        waw = [p for p in collect_access_pairs(const) if p.kind == WAW]
        assert any(_polyhedron_nonempty(dp)
                   for p in waw for dp in build_dependence_problems(p))


def _random_access_kernel(rng):
    """Small random kernels: 1-2 nests depth 1-2, accesses into one shared
    array with random affine indices; bounds <= 5."""
    arr = ArrayDecl("a", "f32", (24,), ports=rng.choice([1, 2]))
    nests = []
    sid = [0]

    def expr(ivs):
        pairs = [(iv, rng.choice([-1, 1, 2])) for iv in ivs if rng.random() < 0.8]
        return AffineExpr.build(pairs, rng.randint(0, 6))

    names = iter(["i", "j", "u", "v", "w", "z"])
    for _ in range(rng.randint(1, 2)):
        depth = rng.randint(1, 2)
        ivs = [next(names) for _ in range(depth)]
        stmts = []
        prev = None
        for _ in range(rng.randint(1, 3)):
            if prev is None or rng.random() < 0.5:
                name = f"x{sid[0]}"
                sid[0] += 1
                stmts.append(Stmt(name, "load", array="a", index=(expr(ivs),)))
                prev = name
            else:
                name = f"store#{sid[0]}"
                sid[0] += 1
                stmts.append(Stmt(name, "store", array="a",
                                  index=(expr(ivs),), operands=(prev,)))
        body = tuple(stmts)
        for iv in reversed(ivs):
            body = (Loop(iv, 0, rng.randint(1, 5), 1, False, body),)
        nests.extend(body)
    return Kernel("k", arrays=(arr,), body=tuple(nests))


class TestUnrolledPipeline:
    def test_pairs_after_unroll(self):
        k = parse_kernel("""
        kernel k {
          array acc: f32[8] ports=8;
          op fadd arity=2 latency=5;
          for j in 0..6 pipeline(ii=1) {
            for x in 0..2 unroll {
              v = load acc[j + x];
              w = fadd(v, v);
              store acc[j + x], w;
            }
          }
        }
        """)
        u = apply_unroll(k)
        assert_soundness(u)
        raw = pairs_by_kind(u, RAW)
        # cross-copy reuse: the copy-1 store feeds the copy-0 load next iteration
        assert ("store#0#1", "v#0") in raw
