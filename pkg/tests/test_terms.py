"""Hash-consing and canonical linear forms."""

from fractions import Fraction

from weakmem import terms as T

x = T.mk_var("tx", T.INT)
y = T.mk_var("ty", T.INT)


def test_interning_identity():
    assert T.mk_int(5) is T.mk_int(5)
    assert T.mk_var("tx", T.INT) is x
    assert T.add(x, T.ONE) is T.add(T.ONE, x)


def test_linear_normalisation():
    assert T.add(x, T.neg(x)) is T.ZERO
    assert T.sub(T.add(x, y), y) is x
    assert T.scale(2, T.scale(Fraction(1, 2), x)) is x


def test_comparison_canonical():
    assert T.eq(x, y) is T.eq(y, x)
    assert T.le(x, y) is T.le(x, y)
    # constant folding
    assert T.lt(T.ZERO, T.ONE) is T.TRUE
    assert T.eq(T.ONE, T.mk_int(2)) is T.FALSE


def test_integer_tightening():
    # x < 1 over integers becomes x <= 0
    assert T.lt(x, T.ONE) is T.le(x, T.ZERO)


def test_integer_equality_with_fraction_scales():
    # x == 1/2 over ints canonicalises to 2x - 1 == 0; deciding it is the
    # solver's job (integer branch-and-bound proves it unsat)
    from weakmem.solver import Solver
    e = T.eq(x, T.mk_frac(Fraction(1, 2)))
    assert e.kind == "eq0"
    assert Solver().is_feasible([e]) == "no"


def test_bool_structure():
    a = T.mk_var("ba", T.BOOL)
    assert T.and_(a, T.TRUE) is a
    assert T.or_(a, T.FALSE) is a
    assert T.and_(a, T.FALSE) is T.FALSE
    assert T.not_(T.not_(a)) is a


def test_ref_equality():
    r1 = T.mk_ref(1, "p")
    r2 = T.mk_ref(2, "q")
    assert T.eq_ref(r1, r1) is T.TRUE
    assert T.eq_ref(r1, r2) is T.FALSE


def test_set_flattening():
    s = T.mk_var("tS", T.SET)
    lit = T.set_lit([T.mk_int(1), T.mk_int(2)])
    u = T.set_union(s, lit)
    bases, elems = T.flatten_set(u)
    assert bases == (s,)
    assert set(elems) == {T.mk_int(1), T.mk_int(2)}
    # membership in a literal expands to equalities
    m = T.in_set(x, lit)
    assert m.kind == "or"


def test_substitute_terms():
    t = T.add(x, T.scale(2, y))
    out = T.substitute(t, {y: T.mk_int(3)})
    assert out is T.add(x, T.mk_int(6))
