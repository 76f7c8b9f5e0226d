"""Solver tests: entailment, feasibility, sets, fractions, SMT emission."""

import shutil
import sys
from fractions import Fraction

import pytest

from weakmem import terms as T
from weakmem.solver import (
    ExternalSolverError, NO, Solver, SolverConfig, UNKNOWN, YES, emit_smtlib,
    run_external,
)

x = T.mk_var("x", T.INT)
y = T.mk_var("y", T.INT)


def test_entailed_disequality(solver):
    assert solver.assert_entailed([T.ne(x, T.ZERO)], T.not_(T.eq(x, T.ZERO))).verdict == YES


def test_entailed_no_with_hint(solver):
    res = solver.assert_entailed([T.eq(x, T.ONE)], T.eq(x, T.mk_int(2)))
    assert res.verdict == NO
    assert res.hint and "x" in res.hint


def brute_force_fraction_entailment(constraints, goal, denominator=64):
    """Oracle: exhaustive search for a counterexample on the 1/denominator grid.

    All constraints here are strict or non-strict linear comparisons over
    (0, 1); if a rational counterexample exists, one exists on a fine grid,
    so finding none on the grid pins the expected verdict for this query.
    """
    grid = [Fraction(n, denominator) for n in range(0, denominator + 1)]
    for w1 in grid:
        for w2 in grid:
            env = {"w1": w1, "w2": w2}
            if all(c(env) for c in constraints) and not goal(env):
                return False, (w1, w2)
    return True, None


def test_wildcard_accounting_entailment(solver):
    # expected value computed by the brute-force oracle below, then asserted
    ok, _ = brute_force_fraction_entailment(
        [lambda e: e["w1"] < 1, lambda e: e["w2"] < e["w1"],
         lambda e: e["w1"] > 0, lambda e: e["w2"] > 0],
        lambda e: e["w1"] + 0 <= 1)
    assert ok, "oracle disagrees with the pinned expectation"
    w1 = T.mk_var("w1", T.FRAC)
    w2 = T.mk_var("w2", T.FRAC)
    path = [T.lt(w1, T.ONE), T.lt(w2, w1), T.gt(w1, T.ZERO), T.gt(w2, T.ZERO)]
    assert solver.assert_entailed(path, T.le(w1, T.ONE)).verdict == YES


def test_feasibility_contradiction(solver):
    assert solver.is_feasible([T.eq(x, T.ZERO), T.ne(x, T.ZERO)]) == NO


def test_feasibility_empty(solver):
    assert solver.is_feasible([]) == YES


def test_feasibility_fraction_split(solver):
    k1 = T.mk_var("k1", T.FRAC)
    k2 = T.mk_var("k2", T.FRAC)
    assert solver.is_feasible([T.eq(T.add(k1, k2), T.ONE), T.eq(k1, k2)]) == YES


def test_integer_gap_infeasible(solver):
    assert solver.is_feasible([T.gt(x, T.ZERO), T.lt(x, T.ONE)]) == NO


def test_integer_parity_infeasible(solver):
    assert solver.is_feasible([T.eq(T.scale(2, x), T.mk_int(3))]) == NO


def test_linear_system_entailment(solver):
    path = [T.eq(T.add(x, y), T.mk_int(10)), T.eq(T.sub(x, y), T.mk_int(4))]
    assert solver.assert_entailed(path, T.eq(x, T.mk_int(7))).verdict == YES


def test_vals_read_update_pattern(solver):
    s = T.mk_var("S", T.SET)
    s2 = T.mk_var("S2", T.SET)
    path = [T.not_(T.in_set(x, s)),
            T.set_eq(s2, T.set_union(s, T.set_lit([x])))]
    assert solver.assert_entailed(path, T.in_set(x, s2)).verdict == YES


def test_membership_over_literal_set(solver):
    lit = T.set_lit([T.mk_int(1), T.mk_int(3)])
    assert solver.assert_entailed([T.eq(x, T.mk_int(3))], T.in_set(x, lit)).verdict == YES
    assert solver.assert_entailed([T.eq(x, T.mk_int(2))],
                                  T.not_(T.in_set(x, lit))).verdict == YES


def test_opaque_modulo_is_unknown(solver):
    res = solver.assert_entailed([T.eq(x, T.mk_int(8))],
                                 T.eq(T.mod_(x, T.mk_int(2)), T.ZERO))
    assert res.verdict == UNKNOWN


def test_unknown_never_yes_on_opaque_negative(solver):
    # soundness guard: an opaque-atom query cannot come back "yes" unless unsat
    res = solver.assert_entailed([], T.eq(T.bitand(x, y), T.ZERO))
    assert res.verdict in (UNKNOWN, NO)
    assert res.verdict != YES


def test_monotonicity_yes_stays_yes(solver):
    path = [T.ge(x, T.mk_int(5))]
    goal = T.ge(x, T.mk_int(3))
    assert solver.assert_entailed(path, goal).verdict == YES
    assert solver.assert_entailed(path + [T.le(y, x)], goal).verdict == YES


def test_infeasible_path_entails_anything(solver):
    assert solver.assert_entailed([T.FALSE], T.eq(x, T.mk_int(9))).verdict == YES


def test_model_value(solver):
    path = [T.eq(x, T.mk_int(41)), T.eq(y, T.add(x, T.ONE))]
    assert solver.model_value(path, y) == 42
    assert solver.model_value([T.ge(x, T.ZERO)], x) is None


# ---------------------------------------------------------------------------
# SMT-LIB emission and the external backend
# ---------------------------------------------------------------------------

def test_emit_smtlib_structure():
    script = emit_smtlib([T.ne(x, T.ZERO)], T.not_(T.eq(x, T.ZERO)))
    assert script.startswith("(set-logic")
    assert "(check-sat)" in script
    assert script.count("(assert") == 2
    assert "declare-const" in script


def test_emit_smtlib_goal_false_is_sat_shape():
    # an entailment of false from an empty path must leave the script satisfiable
    script = emit_smtlib([], T.FALSE)
    assert "(assert (not false))" in script


def test_emit_smtlib_bitwise_uses_uninterpreted():
    script = emit_smtlib([T.eq(T.bitand(x, y), T.ZERO)], T.FALSE, negate_goal=False)
    assert "declare-fun" in script


def test_emit_smtlib_fractions_real():
    w = T.mk_var("w", T.FRAC)
    script = emit_smtlib([T.lt(w, T.ONE)], T.gt(w, T.ZERO))
    assert "Real" in script


def test_external_stub_unsat():
    cmd = f"{sys.executable} -c \"print('unsat')\""
    assert run_external("(check-sat)", cmd, 5000) == "unsat"


def test_external_stub_sat():
    cmd = f"{sys.executable} -c \"print('sat')\""
    assert run_external("(check-sat)", cmd, 5000) == "sat"


def test_external_error_on_bad_exit():
    cmd = f"{sys.executable} -c \"import sys; sys.exit(3)\""
    with pytest.raises(ExternalSolverError):
        run_external("(check-sat)", cmd, 5000)


def test_external_error_on_garbage():
    cmd = f"{sys.executable} -c \"print('maybe')\""
    with pytest.raises(ExternalSolverError):
        run_external("(check-sat)", cmd, 5000)


def test_external_backend_requires_cmd():
    with pytest.raises(ValueError):
        Solver(SolverConfig(backend="external"))


def test_external_backend_resolves_unknown():
    # an always-unsat stub lets the external path upgrade unknown to yes
    cmd = f"{sys.executable} -c \"print('unsat')\""
    s = Solver(SolverConfig(backend="external", solver_cmd=cmd))
    res = s.assert_entailed([T.eq(x, T.mk_int(8))],
                            T.eq(T.mod_(x, T.mk_int(2)), T.ZERO))
    assert res.verdict == YES


HAVE_Z3 = shutil.which("z3") is not None


@pytest.mark.skipif(not HAVE_Z3, reason="no external SMT solver installed")
def test_differential_builtin_vs_external(solver):
    # on the shared fragment, every builtin "yes" must be unsat externally
    queries = [
        ([T.ne(x, T.ZERO)], T.not_(T.eq(x, T.ZERO))),
        ([T.ge(x, T.mk_int(5))], T.ge(x, T.mk_int(3))),
        ([T.eq(T.add(x, y), T.mk_int(10)), T.eq(T.sub(x, y), T.mk_int(4))],
         T.eq(x, T.mk_int(7))),
    ]
    for path, goal in queries:
        if solver.assert_entailed(path, goal).verdict == YES:
            script = emit_smtlib(path, goal)
            assert run_external(script, "z3 -in", 10000) == "unsat"
