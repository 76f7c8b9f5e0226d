"""Primitive semantics: permission accounting, havoc, transfers, wildcards."""

from fractions import Fraction

from weakmem import terms as T
from weakmem.diagnostics import EXHALE_FAILURE
from weakmem.encoder import AssertCheck, Exhale
from weakmem.solver import Solver
from weakmem.speclogic import (
    EAcc, EFieldEq, EPredAcc, EPure, HeapLabel, WILDCARD, estar,
)
from weakmem.symstate import (
    ExecContext, PERM_ONE, PermExpr, SymState, exhale, inhale, run_prim,
    transfer_heap,
)
from weakmem import syntax as S


def make_ctx(classes=None):
    return ExecContext(Solver(), classes or {})


def fresh_state(ctx, locs=("a",)):
    st = SymState()
    for name in locs:
        st.env[name] = ctx.fresh_ref(name, False)
    return st


def acc(loc, fld, k, label=HeapLabel.REAL):
    return EAcc(loc, fld, Fraction(k) if k != WILDCARD else WILDCARD, label)


def points_to(loc, value, k=1):
    return estar([
        acc(loc, "val", k), acc(loc, "init", k),
        EFieldEq(loc, "val", S.EInt(value)),
        EFieldEq(loc, "init", S.TRUE_E),
    ])


def do_inhale(ctx, st, enc):
    out = inhale(ctx, st, enc)
    assert len(out) == 1
    return out[0]


def do_exhale(ctx, st, enc, expect_fail=False):
    before = len(ctx.diagnostics)
    prim = Exhale(enc, rule="test", kind=EXHALE_FAILURE)
    out = exhale(ctx, st, prim)
    failed = len(ctx.diagnostics) > before
    assert failed == expect_fail, [d.format() for d in ctx.diagnostics[before:]]
    return out


def val_perm(st, ref, fld="val", label=HeapLabel.REAL):
    return st.field_perm(ref, fld, label)


# ---------------------------------------------------------------------------
# Inhale
# ---------------------------------------------------------------------------

def test_inhale_halves_merge():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, acc("a", "val", "1/2"))
    st = do_inhale(ctx, st, acc("a", "val", "1/2"))
    assert val_perm(st, st.env["a"]) == PERM_ONE


def test_inhale_true_unchanged():
    ctx = make_ctx()
    st = fresh_state(ctx)
    chunks = dict(st.fields)
    st = do_inhale(ctx, st, EPure(S.TRUE_E))
    assert st.fields == chunks and st.path == []


def test_inhale_conflicting_values_infeasible():
    # two full points-to chunks exceed the field capacity: the path dies
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, points_to("a", 42))
    st = do_inhale(ctx, st, points_to("a", 43))
    assert ctx.solver.is_feasible(st.path) == "no"


# ---------------------------------------------------------------------------
# Exhale
# ---------------------------------------------------------------------------

def test_exhale_rational_accounting():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, acc("a", "val", 1))
    (st,) = do_exhale(ctx, st, acc("a", "val", "1/2"))
    (st,) = do_exhale(ctx, st, acc("a", "val", "1/2"))
    assert val_perm(st, st.env["a"]).is_zero
    do_exhale(ctx, st, acc("a", "val", "1/2"), expect_fail=True)


def test_exhale_true_unchanged():
    ctx = make_ctx()
    st = fresh_state(ctx)
    (st2,) = do_exhale(ctx, st, EPure(S.TRUE_E))
    assert st2.fields == st.fields


def test_init_wildcard_duplicable():
    # one Init inhale supports any number of Init exhales
    ctx = make_ctx()
    st = fresh_state(ctx, ("l",))
    st = do_inhale(ctx, st, acc("l", "init", WILDCARD))
    (st,) = do_exhale(ctx, st, acc("l", "init", WILDCARD))
    (st,) = do_exhale(ctx, st, acc("l", "init", WILDCARD))
    assert not val_perm(st, st.env["l"], "init").is_zero


def test_value_dropped_at_zero_permission():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, points_to("a", 42))
    ref = st.env["a"]
    key = st.field_key(ref, "val", HeapLabel.REAL)
    (st,) = do_exhale(ctx, st, points_to("a", 42))
    assert key not in st.fields  # chunk gone: value havoced with it


def test_exhale_value_mismatch_fails():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, points_to("a", 41))
    do_exhale(ctx, st, points_to("a", 42), expect_fail=True)


# ---------------------------------------------------------------------------
# permOf / havoc
# ---------------------------------------------------------------------------

def test_perm_of_absent_chunk_zero():
    ctx = make_ctx()
    st = fresh_state(ctx)
    assert val_perm(st, st.env["a"]).is_zero


def test_havoc_fresh_symbol_semantics():
    ctx = make_ctx({"x": "value"})
    st = fresh_state(ctx)
    from weakmem.encoder import HavocVar
    (st,) = run_prim(ctx, st, HavocVar("x"))
    x = st.env["x"]
    assert ctx.solver.assert_entailed(st.path, T.eq(x, x)).verdict == "yes"
    assert ctx.solver.assert_entailed(st.path, T.eq(x, T.ZERO)).verdict != "yes"


# ---------------------------------------------------------------------------
# Heap transfer
# ---------------------------------------------------------------------------

def test_transfer_down_to_real():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, estar([
        acc("a", "val", 1, HeapLabel.DOWN),
        EFieldEq("a", "val", S.EInt(42), HeapLabel.DOWN),
    ]))
    st = transfer_heap(ctx, st, HeapLabel.DOWN, HeapLabel.REAL)
    ref = st.env["a"]
    assert val_perm(st, ref) == PERM_ONE
    assert val_perm(st, ref, label=HeapLabel.DOWN).is_zero
    chunk = st.fields[st.field_key(ref, "val", HeapLabel.REAL)]
    assert ctx.solver.assert_entailed(st.path, T.eq(chunk.value, T.mk_int(42))).verdict == "yes"


def test_transfer_empty_identity():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, points_to("a", 1))
    before = {k: (c.perm, c.value) for k, c in st.fields.items()}
    st = transfer_heap(ctx, st, HeapLabel.DOWN, HeapLabel.REAL)
    assert {k: (c.perm, c.value) for k, c in st.fields.items()} == before


def test_transfer_merges_and_unifies_values():
    # permission addition oracle: 1/2 + 1/2 = 1, and the two values unify
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, estar([
        acc("a", "val", "1/2", HeapLabel.DOWN),
        EFieldEq("a", "val", S.EInt(7), HeapLabel.DOWN),
    ]))
    st = do_inhale(ctx, st, acc("a", "val", "1/2", HeapLabel.REAL))
    st = transfer_heap(ctx, st, HeapLabel.DOWN, HeapLabel.REAL)
    ref = st.env["a"]
    assert val_perm(st, ref) == PERM_ONE
    chunk = st.fields[st.field_key(ref, "val", HeapLabel.REAL)]
    assert ctx.solver.assert_entailed(st.path, T.eq(chunk.value, T.mk_int(7))).verdict == "yes"


# ---------------------------------------------------------------------------
# Predicate chunks: duplicability matrix and snapshot preservation
# ---------------------------------------------------------------------------

def test_acq_conjunct_not_duplicable():
    ctx = make_ctx()
    st = fresh_state(ctx, ("l",))
    st = do_inhale(ctx, st, EPredAcc("l", 0, Fraction(1), vals_empty=True))
    (st,) = do_exhale(ctx, st, EPredAcc("l", 0, Fraction(1), vals_empty=True))
    do_exhale(ctx, st, EPredAcc("l", 0, Fraction(1), vals_empty=True),
              expect_fail=True)


def test_rmw_conjunct_duplicable():
    ctx = make_ctx()
    st = fresh_state(ctx, ("l",))
    st = do_inhale(ctx, st, EPredAcc("l", 0, WILDCARD))
    (st,) = do_exhale(ctx, st, EPredAcc("l", 0, WILDCARD))
    (st,) = do_exhale(ctx, st, EPredAcc("l", 0, WILDCARD))
    assert not st.pred_perm(st.env["l"], 0, HeapLabel.REAL).is_zero


def test_reinhale_keeps_vals_read():
    # re-inhaling a held conjunct must not reset its snapshot
    ctx = make_ctx()
    st = fresh_state(ctx, ("l",))
    st = do_inhale(ctx, st, EPredAcc("l", 0, Fraction(1), vals_empty=True))
    key = st.pred_key(st.env["l"], 0, HeapLabel.REAL)
    st.preds[key].vals = (T.mk_int(1),)
    st = do_inhale(ctx, st, EPredAcc("l", 0, Fraction(1), vals_empty=True))
    assert st.preds[key].vals == (T.mk_int(1),)
    assert st.preds[key].perm == PermExpr.exact(2)


# ---------------------------------------------------------------------------
# Tmp-preferring exhale (the CAS release step)
# ---------------------------------------------------------------------------

def tmp_points_to(loc, value, k=1):
    return estar([
        acc(loc, "val", k, HeapLabel.TMP), acc(loc, "init", k, HeapLabel.TMP),
        EFieldEq(loc, "val", S.EInt(value), HeapLabel.TMP),
        EFieldEq(loc, "init", S.TRUE_E, HeapLabel.TMP),
    ])


def run_prefer_tmp(ctx, st, enc, expect_fail=False):
    from weakmem.encoder import ExhalePreferTmp
    from weakmem.symstate import exhale_prefer_tmp
    before = len(ctx.diagnostics)
    out = exhale_prefer_tmp(ctx, st, ExhalePreferTmp(enc, rule="test"))
    failed = len(ctx.diagnostics) > before
    assert failed == expect_fail, [d.format() for d in ctx.diagnostics[before:]]
    return out


def test_prefer_tmp_all_from_tmp():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, points_to("a", 7))        # real copy stays
    st = do_inhale(ctx, st, tmp_points_to("a", 7))    # tmp holds 1
    (st,) = run_prefer_tmp(ctx, st, points_to("a", 7))
    ref = st.env["a"]
    assert val_perm(st, ref, label=HeapLabel.TMP).is_zero   # min(1,1) from tmp
    assert val_perm(st, ref) == PERM_ONE                     # real untouched


def test_prefer_tmp_empty_tmp_falls_back():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, points_to("a", 7))
    (st,) = run_prefer_tmp(ctx, st, points_to("a", 7))
    assert val_perm(st, st.env["a"]).is_zero


def test_prefer_tmp_split_sources_equates_values():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, estar([
        acc("a", "val", "1/2", HeapLabel.TMP), acc("a", "init", "1/2", HeapLabel.TMP),
        EFieldEq("a", "val", S.EInt(7), HeapLabel.TMP),
        EFieldEq("a", "init", S.TRUE_E, HeapLabel.TMP),
    ]))
    st = do_inhale(ctx, st, estar([
        acc("a", "val", "1/2"), acc("a", "init", "1/2"),
        EFieldEq("a", "val", S.EInt(7)), EFieldEq("a", "init", S.TRUE_E),
    ]))
    (st,) = run_prefer_tmp(ctx, st, points_to("a", 7))
    ref = st.env["a"]
    assert val_perm(st, ref).is_zero
    assert val_perm(st, ref, label=HeapLabel.TMP).is_zero


def test_prefer_tmp_insufficient_fails():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, tmp_points_to("a", 7, "1/2"))
    run_prefer_tmp(ctx, st, points_to("a", 7), expect_fail=True)


# ---------------------------------------------------------------------------
# Assert does not consume
# ---------------------------------------------------------------------------

def test_assert_check_preserves_state():
    ctx = make_ctx()
    st = fresh_state(ctx)
    st = do_inhale(ctx, st, points_to("a", 42))
    prim = AssertCheck(points_to("a", 42), rule="test", kind=EXHALE_FAILURE)
    (st2,) = run_prim(ctx, st, prim)
    assert val_perm(st2, st2.env["a"]) == PERM_ONE
    assert not ctx.diagnostics
