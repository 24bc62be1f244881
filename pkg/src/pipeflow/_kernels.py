"""Hot inner loops of the schedule verifier.

The dependence replay enumerates every integer point of a box intersected
with equality/inequality rows and checks a linear gap expression at each
point; benchmark-sized kernels produce tens of millions of points, so the
walk is compiled with numba when available. Setting ``PIPEFLOW_NO_NUMBA=1``
(or running without numba installed) selects a chunked pure-numpy twin with
identical semantics. ``scripts/bench_verify.py`` times one against the other.

Contract of both implementations:

    gap_check(highs, eqA, eqb, geA, geb, obj, rhs, max_witnesses)
      -> (points_in_polyhedron, violations, witness_matrix)

over v in box(0..highs): membership = (eqA @ v == eqb) and (geA @ v >= geb);
a member violates when obj @ v < rhs. Witnesses are the first violating
points in odometer order.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("PIPEFLOW_NO_NUMBA", "") not in ("", "0")

try:  # pragma: no cover - exercised via backend_name()
    if _FORCE_NUMPY:
        raise ImportError
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore
        def deco(fn):
            return fn
        return deco(args[0]) if args and callable(args[0]) else deco


def backend_name() -> str:
    return "numba" if _HAVE_NUMBA else "numpy"


@njit(cache=False)
def _gap_check_walk(highs, eqA, eqb, geA, geb, obj, rhs, max_witnesses):
    n = highs.shape[0]
    m_eq = eqA.shape[0]
    m_ge = geA.shape[0]
    total = np.int64(1)
    for k in range(n):
        total *= highs[k] + 1

    idx = np.zeros(n, np.int64)
    dots_eq = np.zeros(m_eq, np.int64)
    dots_ge = np.zeros(m_ge, np.int64)
    dot_obj = np.int64(0)
    witnesses = np.empty((max_witnesses, n), np.int64)

    points = np.int64(0)
    violations = np.int64(0)
    for _ in range(total):
        member = True
        for r in range(m_eq):
            if dots_eq[r] != eqb[r]:
                member = False
                break
        if member:
            for r in range(m_ge):
                if dots_ge[r] < geb[r]:
                    member = False
                    break
        if member:
            points += 1
            if dot_obj < rhs:
                if violations < max_witnesses:
                    for k in range(n):
                        witnesses[violations, k] = idx[k]
                violations += 1
        # odometer increment with incremental dot updates
        d = n - 1
        while d >= 0:
            if idx[d] < highs[d]:
                idx[d] += 1
                for r in range(m_eq):
                    dots_eq[r] += eqA[r, d]
                for r in range(m_ge):
                    dots_ge[r] += geA[r, d]
                dot_obj += obj[d]
                break
            idx[d] = 0
            for r in range(m_eq):
                dots_eq[r] -= eqA[r, d] * highs[d]
            for r in range(m_ge):
                dots_ge[r] -= geA[r, d] * highs[d]
            dot_obj -= obj[d] * highs[d]
            d -= 1
    nw = violations if violations < max_witnesses else max_witnesses
    return points, violations, witnesses[:nw].copy()


def _gap_check_numpy(highs, eqA, eqb, geA, geb, obj, rhs, max_witnesses,
                     chunk=1 << 18):
    n = highs.shape[0]
    dims = highs + 1
    total = int(np.prod(dims, dtype=np.int64))
    # strides for linear-index decode, last variable fastest (odometer order)
    strides = np.ones(n, dtype=np.int64)
    for k in range(n - 2, -1, -1):
        strides[k] = strides[k + 1] * dims[k + 1]

    points = 0
    violations = 0
    witnesses = []
    for base in range(0, total, chunk):
        lin = np.arange(base, min(base + chunk, total), dtype=np.int64)
        pts = (lin[:, None] // strides[None, :]) % dims[None, :]
        mask = np.ones(lin.shape[0], dtype=bool)
        if eqA.shape[0]:
            mask &= np.all(pts @ eqA.T == eqb[None, :], axis=1)
        if geA.shape[0]:
            mask &= np.all(pts @ geA.T >= geb[None, :], axis=1)
        points += int(mask.sum())
        if not mask.any():
            continue
        bad = mask & (pts @ obj < rhs)
        nbad = int(bad.sum())
        if nbad:
            if len(witnesses) < max_witnesses:
                take = pts[bad][: max_witnesses - len(witnesses)]
                witnesses.extend(take.tolist())
            violations += nbad
    wit = np.array(witnesses, dtype=np.int64).reshape(len(witnesses), n)
    return points, violations, wit


def gap_check(highs, eqA, eqb, geA, geb, obj, rhs, max_witnesses=16):
    """Dispatch to the compiled walk or the numpy twin. All inputs are
    integer arrays/scalars; exact by construction (int64 throughout)."""
    highs = np.ascontiguousarray(highs, dtype=np.int64)
    n = highs.shape[0]
    eqA = np.ascontiguousarray(eqA, dtype=np.int64).reshape(-1, n)
    eqb = np.ascontiguousarray(eqb, dtype=np.int64)
    geA = np.ascontiguousarray(geA, dtype=np.int64).reshape(-1, n)
    geb = np.ascontiguousarray(geb, dtype=np.int64)
    obj = np.ascontiguousarray(obj, dtype=np.int64)
    if n == 0:
        member = eqb.size == 0 or not eqb.any()
        member = member and (geb.size == 0 or bool((geb <= 0).all()))
        if not member:
            return 0, 0, np.empty((0, 0), np.int64)
        viol = 1 if 0 < rhs else 0
        return 1, viol, np.empty((viol and 1, 0), np.int64)
    if _HAVE_NUMBA:
        return _gap_check_walk(highs, eqA, eqb, geA, geb, obj,
                               np.int64(rhs), np.int64(max_witnesses))
    return _gap_check_numpy(highs, eqA, eqb, geA, geb, obj, int(rhs),
                            int(max_witnesses))


def instance_starts(base, iis, trips):
    """Start cycles of every iteration of one statement, flattened in
    row-major iteration order: base + sum(ii_k * iv_k)."""
    starts = np.full(1, base, dtype=np.int64)
    for ii_k, trip in zip(iis, trips):
        axis = np.arange(trip, dtype=np.int64) * np.int64(ii_k)
        starts = (starts[:, None] + axis[None, :]).ravel()
    return starts
