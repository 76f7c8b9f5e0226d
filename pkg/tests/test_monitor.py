"""Soundness-invariant checks and assertion reconstruction."""

from fractions import Fraction

from conftest import corpus_text, pipeline, verify
from weakmem import api, encoder, symstate, terms as T
from weakmem.frontend import NA
from weakmem.monitor import check_state_invariants, reconstruct_assertion
from weakmem.solver import Solver
from weakmem.speclogic import HeapLabel
from weakmem.symstate import ExecContext, FieldChunk, PermExpr, SymState


def hand_state(perm_val, perm_init, init_value=T.TRUE):
    ctx = ExecContext(Solver(), {"a": NA})
    st = SymState()
    ref = ctx.fresh_ref("a", False)
    st.env["a"] = ref
    st.fields[st.field_key(ref, "val", HeapLabel.REAL)] = FieldChunk(
        ref, "val", HeapLabel.REAL, PermExpr.exact(perm_val), ctx.fresh_int("v"))
    st.fields[st.field_key(ref, "init", HeapLabel.REAL)] = FieldChunk(
        ref, "init", HeapLabel.REAL, PermExpr.exact(perm_init), init_value)
    return st


def test_alloc_state_has_no_violations():
    source = "proc main() requires { true } ensures { true } { alloc_na(a); }"
    chk, table, solver = pipeline(source)
    proc = chk.program.procedures[0]
    ob = encoder.build_obligations(chk, table, proc, solver)[0]
    result = symstate.run_obligation(ob, solver)
    (st,) = result.final_states
    assert check_state_invariants(st, solver, ob.var_classes) == []


def test_mismatched_permissions_flagged():
    st = hand_state(Fraction(1, 2), Fraction(1))
    violations = check_state_invariants(st, Solver(), {"a": NA})
    assert violations and "differs" in violations[0].message


def test_positive_permission_uninit_must_be_full():
    st = hand_state(Fraction(1, 2), Fraction(1, 2), init_value=T.FALSE)
    violations = check_state_invariants(st, Solver(), {"a": NA})
    assert violations and "not 1" in violations[0].message


def test_full_corpus_entry_sweep():
    opts = api.VerifyOptions(check_soundness=True)
    res = api.verify_source(corpus_text("RelAcqDblMsgPassSplit.rsl"), opts=opts)
    assert res.ok
    assert res.soundness, "boundary reports expected"
    assert all(rep.violations == [] for rep in res.soundness)


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------

def final_main_state(source_name: str):
    res = verify(corpus_text(source_name))
    assert res.ok, [d.format() for v in res.verdicts for d in v.diagnostics]
    main = res.verdict_of("main")
    (st,) = main.obligations[0].final_states
    classes = res.checked.info["main"].classes
    return st, res.solver, classes, res.table


def test_fig4_join_reconstruction():
    st, solver, classes, table = final_main_state("RelAcqDblMsgPassSplit.rsl")
    text = reconstruct_assertion(st, solver, classes, table)
    assert "a ↦¹ 43" in text
    assert "b ↦¹ 8" in text
    assert "Init(l)" in text


def test_empty_state_reconstructs_true():
    assert reconstruct_assertion(SymState(), Solver(), {}) == "true"


def test_obliterated_values_rendered():
    source = """
invariant Q(V) = V != 0 ==> a |-> 42;
proc main() requires { true } ensures { true }
{
  alloc_na(a);
  [a]_na := 42;
  alloc_acq(l, Q);
  [l]_rel := 1;
  x := [l]_acq;
}
"""
    res = verify(source)
    assert res.ok
    main = res.verdict_of("main")
    classes = res.checked.info["main"].classes
    rendered = [reconstruct_assertion(st, res.solver, classes, res.table)
                for st in main.obligations[0].final_states]
    assert any("obliterated" in text for text in rendered)


def test_reconstruction_stable_across_runs():
    a = reconstruct_assertion(*final_main_state("RelAcqDblMsgPassSplit.rsl"))
    b = reconstruct_assertion(*final_main_state("RelAcqDblMsgPassSplit.rsl"))
    assert a == b


def test_uninit_rendering():
    st, solver, classes, table = (None,) * 4
    res = verify("proc main() requires { true } ensures { true } { alloc_na(a); }")
    main = res.verdict_of("main")
    (st,) = main.obligations[0].final_states
    text = reconstruct_assertion(st, res.solver, res.checked.info["main"].classes)
    assert "Uninit(a)" in text


def test_modal_rendering():
    res = verify("""
proc main() requires { true } ensures { true }
{ alloc_na(a); [a]_na := 5; fence_rel(a |-> 5); }
""")
    main = res.verdict_of("main")
    (st,) = main.obligations[0].final_states
    text = reconstruct_assertion(st, res.solver, res.checked.info["main"].classes)
    assert "⇑" in text and "a ↦¹ 5" in text
