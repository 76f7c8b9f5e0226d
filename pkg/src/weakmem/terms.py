"""Interned logical terms used in path conditions and solver queries.

Terms are hash-consed: structurally identical terms are the *same* Python
object, so equality is identity and terms can be used as dict keys without
deep comparisons.  Numeric terms are kept in a linear canonical form
(rational constant plus a sorted coefficient list over atoms), which makes
``x + 1`` and ``1 + x`` identical and lets the solver read off linear
constraints without re-walking trees.  Non-linear operations (general
products, modulo, bitwise) are kept as opaque atoms; the built-in solver
treats them as uninterpreted, which preserves soundness of "unsat" verdicts.

Sorts: ``int`` (program values), ``bool``, ``frac`` (permission amounts),
``ref`` (heap locations) and ``set`` (finite sets of ints).
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from math import gcd
from typing import Iterable

INT = "int"
BOOL = "bool"
FRAC = "frac"
REF = "ref"
SET = "set"

_ids = itertools.count()
_pool: dict[tuple, "Term"] = {}


class Term:
    """One interned node.  Never construct directly; use the mk_* helpers."""

    __slots__ = ("kind", "sort", "data", "args", "tid")

    def __init__(self, kind: str, sort: str, data, args: tuple["Term", ...]):
        self.kind = kind
        self.sort = sort
        self.data = data
        self.args = args
        self.tid = next(_ids)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"<{pretty(self)}>"

    def __hash__(self) -> int:
        return self.tid

    # identity equality is intentional: the pool guarantees canonicity


def _intern(kind: str, sort: str, data, args: tuple[Term, ...]) -> Term:
    key = (kind, sort, data, tuple(a.tid for a in args))
    t = _pool.get(key)
    if t is None:
        # setdefault keeps identity canonical even under concurrent misses
        t = _pool.setdefault(key, Term(kind, sort, data, args))
    return t


# ---------------------------------------------------------------------------
# Literals and variables
# ---------------------------------------------------------------------------

def mk_int(value) -> Term:
    value = Fraction(value)
    return _intern("num", INT if value.denominator == 1 else FRAC, value, ())


def mk_frac(value) -> Term:
    return _intern("num", FRAC, Fraction(value), ())


def mk_bool(value: bool) -> Term:
    return _intern("boollit", BOOL, bool(value), ())


TRUE = mk_bool(True)
FALSE = mk_bool(False)
ZERO = mk_int(0)
ONE = mk_int(1)


def mk_var(name: str, sort: str) -> Term:
    return _intern("var", sort, name, ())


def mk_ref(ref_id: int, name: str, ghost: bool = False) -> Term:
    """A concrete allocated location.  Distinct ids denote distinct locations."""
    return _intern("ref", REF, (ref_id, name, ghost), ())


def is_ghost_ref(t: Term) -> bool:
    return t.kind == "ref" and t.data[2]


def ref_name(t: Term) -> str:
    if t.kind == "ref":
        return t.data[1]
    return t.data if t.kind == "var" else pretty(t)


ANY = _intern("any", INT, None, ())  # the `_` wildcard value in assertions


# ---------------------------------------------------------------------------
# Linear arithmetic canonical form
# ---------------------------------------------------------------------------
#
# Every numeric term is either a constant ("num"), an atom (var / opaque op)
# or a "lin" node with data (const: Fraction, coeffs: tuple[(atom, Fraction)]).
# Coefficient lists are sorted by atom id and never contain zero coefficients.

def linear_parts(t: Term) -> tuple[Fraction, dict[Term, Fraction]]:
    """Decompose a numeric term into (constant, {atom: coeff})."""
    if t.kind == "num":
        return t.data, {}
    if t.kind == "lin":
        const, pairs = t.data
        return const, dict(pairs)
    return Fraction(0), {t: Fraction(1)}


def _mk_linear(const: Fraction, coeffs: dict[Term, Fraction]) -> Term:
    coeffs = {a: c for a, c in coeffs.items() if c != 0}
    if not coeffs:
        return mk_int(const) if const.denominator == 1 else mk_frac(const)
    if const == 0 and len(coeffs) == 1:
        (atom, c), = coeffs.items()
        if c == 1:
            return atom
    pairs = tuple(sorted(coeffs.items(), key=lambda ac: ac[0].tid))
    sort = INT
    if const.denominator != 1 or any(
        c.denominator != 1 or a.sort == FRAC for a, c in pairs
    ):
        sort = FRAC
    return _intern("lin", sort, (const, pairs), tuple(a for a, _ in pairs))


def add(*ts: Term) -> Term:
    const = Fraction(0)
    coeffs: dict[Term, Fraction] = {}
    for t in ts:
        c, parts = linear_parts(t)
        const += c
        for a, k in parts.items():
            coeffs[a] = coeffs.get(a, Fraction(0)) + k
    return _mk_linear(const, coeffs)


def neg(t: Term) -> Term:
    return scale(Fraction(-1), t)


def sub(a: Term, b: Term) -> Term:
    return add(a, neg(b))


def scale(k, t: Term) -> Term:
    k = Fraction(k)
    const, coeffs = linear_parts(t)
    return _mk_linear(const * k, {a: c * k for a, c in coeffs.items()})


def mul(a: Term, b: Term) -> Term:
    if a.kind == "num":
        return scale(a.data, b)
    if b.kind == "num":
        return scale(b.data, a)
    x, y = (a, b) if a.tid <= b.tid else (b, a)
    return _intern("mul", INT, None, (x, y))


def _opaque(kind: str, a: Term, b: Term) -> Term:
    return _intern(kind, INT, None, (a, b))


def mod_(a: Term, b: Term) -> Term:
    return _opaque("mod", a, b)


def div_(a: Term, b: Term) -> Term:
    return _opaque("div", a, b)


def bitand(a: Term, b: Term) -> Term:
    return _opaque("bitand", a, b)


def bitor(a: Term, b: Term) -> Term:
    return _opaque("bitor", a, b)


def bitxor(a: Term, b: Term) -> Term:
    return _opaque("bitxor", a, b)


def shl(a: Term, b: Term) -> Term:
    return _opaque("shl", a, b)


def shr(a: Term, b: Term) -> Term:
    return _opaque("shr", a, b)


OPAQUE_KINDS = frozenset({"mul", "mod", "div", "bitand", "bitor", "bitxor", "shl", "shr"})


def _int_valued(const: Fraction, coeffs: dict[Term, Fraction]) -> bool:
    return const.denominator == 1 and all(
        c.denominator == 1 and a.sort == INT for a, c in coeffs.items()
    )


def _norm_scale(const: Fraction, coeffs: dict[Term, Fraction]):
    """Scale so coefficients are integral with gcd 1 (stable canonical form)."""
    denom = const.denominator
    for c in coeffs.values():
        denom = denom * c.denominator // gcd(denom, c.denominator)
    const *= denom
    coeffs = {a: c * denom for a, c in coeffs.items()}
    g = 0
    for c in coeffs.values():
        g = gcd(g, c.numerator)
    g = gcd(g, const.numerator)
    if g > 1:
        const /= g
        coeffs = {a: c / g for a, c in coeffs.items()}
    return const, coeffs


# ---------------------------------------------------------------------------
# Comparisons: canonicalised to  t = 0,  t <= 0,  t < 0
# ---------------------------------------------------------------------------

def _cmp(kind: str, t: Term) -> Term:
    const, coeffs = linear_parts(t)
    if not coeffs:
        if kind == "eq0":
            return mk_bool(const == 0)
        if kind == "le0":
            return mk_bool(const <= 0)
        return mk_bool(const < 0)
    const, coeffs = _norm_scale(const, coeffs)
    if kind == "eq0":
        # orient: first (lowest-id) coefficient positive
        first = min(coeffs, key=lambda a: a.tid)
        if coeffs[first] < 0:
            const = -const
            coeffs = {a: -c for a, c in coeffs.items()}
        if _int_valued(Fraction(0), coeffs) and const.denominator != 1:
            return FALSE  # integer combination can never equal a non-integer
    if kind == "lt0" and _int_valued(const, coeffs):
        # integer tightening:  t < 0  <=>  t + 1 <= 0
        kind, const = "le0", const + 1
    lin = _mk_linear(const, coeffs)
    return _intern(kind, BOOL, None, (lin,))


def eq(a: Term, b: Term) -> Term:
    if a is b:
        return TRUE
    if a.sort == BOOL or b.sort == BOOL:
        return iff(a, b)
    if a.sort == REF or b.sort == REF:
        return eq_ref(a, b)
    if a.sort == SET or b.sort == SET:
        return set_eq(a, b)
    return _cmp("eq0", sub(a, b))


def ne(a: Term, b: Term) -> Term:
    return not_(eq(a, b))


def le(a: Term, b: Term) -> Term:
    return _cmp("le0", sub(a, b))


def lt(a: Term, b: Term) -> Term:
    return _cmp("lt0", sub(a, b))


def ge(a: Term, b: Term) -> Term:
    return le(b, a)


def gt(a: Term, b: Term) -> Term:
    return lt(b, a)


def eq_ref(a: Term, b: Term) -> Term:
    if a is b:
        return TRUE
    if a.kind == "ref" and b.kind == "ref":
        return mk_bool(a.data[0] == b.data[0])
    x, y = (a, b) if a.tid <= b.tid else (b, a)
    return _intern("eqref", BOOL, None, (x, y))


# ---------------------------------------------------------------------------
# Boolean structure
# ---------------------------------------------------------------------------

def and_(*ts: Term) -> Term:
    flat: list[Term] = []
    for t in ts:
        if t is TRUE:
            continue
        if t is FALSE:
            return FALSE
        if t.kind == "and":
            flat.extend(t.args)
        else:
            flat.append(t)
    uniq = sorted({t.tid: t for t in flat}.values(), key=lambda t: t.tid)
    if not uniq:
        return TRUE
    if len(uniq) == 1:
        return uniq[0]
    return _intern("and", BOOL, None, tuple(uniq))


def or_(*ts: Term) -> Term:
    flat: list[Term] = []
    for t in ts:
        if t is FALSE:
            continue
        if t is TRUE:
            return TRUE
        if t.kind == "or":
            flat.extend(t.args)
        else:
            flat.append(t)
    uniq = sorted({t.tid: t for t in flat}.values(), key=lambda t: t.tid)
    if not uniq:
        return FALSE
    if len(uniq) == 1:
        return uniq[0]
    return _intern("or", BOOL, None, tuple(uniq))


def not_(t: Term) -> Term:
    if t.kind == "boollit":
        return mk_bool(not t.data)
    if t.kind == "not":
        return t.args[0]
    return _intern("not", BOOL, None, (t,))


def implies(a: Term, b: Term) -> Term:
    return or_(not_(a), b)


def iff(a: Term, b: Term) -> Term:
    if a is b:
        return TRUE
    return or_(and_(a, b), and_(not_(a), not_(b)))


# ---------------------------------------------------------------------------
# Finite integer sets (used for the values-read snapshots)
# ---------------------------------------------------------------------------

def set_lit(elems: Iterable[Term]) -> Term:
    uniq = sorted({e.tid: e for e in elems}.values(), key=lambda t: t.tid)
    return _intern("setlit", SET, None, tuple(uniq))


EMPTY_SET = set_lit(())


def set_union(a: Term, b: Term) -> Term:
    parts: list[Term] = []
    elems: dict[int, Term] = {}

    def walk(t: Term):
        if t.kind == "setlit":
            for e in t.args:
                elems[e.tid] = e
        elif t.kind == "setunion":
            for p in t.args:
                walk(p)
        else:
            parts.append(t)

    walk(a)
    walk(b)
    lit = set_lit(elems.values())
    uniq = sorted({p.tid: p for p in parts}.values(), key=lambda t: t.tid)
    if not uniq:
        return lit
    args = tuple(uniq) + ((lit,) if lit.args else ())
    if len(args) == 1:
        return args[0]
    return _intern("setunion", SET, None, args)


def flatten_set(t: Term) -> tuple[tuple[Term, ...], tuple[Term, ...]]:
    """Split a set term into (opaque base sets, explicit elements)."""
    bases: list[Term] = []
    elems: list[Term] = []

    def walk(s: Term):
        if s.kind == "setlit":
            elems.extend(s.args)
        elif s.kind == "setunion":
            for p in s.args:
                walk(p)
        else:
            bases.append(s)

    walk(t)
    return tuple(bases), tuple(elems)


def in_set(e: Term, s: Term) -> Term:
    bases, elems = flatten_set(s)
    disjuncts = [eq(e, el) for el in elems]
    disjuncts += [_intern("inset", BOOL, None, (e, b)) for b in bases]
    return or_(*disjuncts)


def set_eq(a: Term, b: Term) -> Term:
    if a is b:
        return TRUE
    ab, ae = flatten_set(a)
    bb, be = flatten_set(b)
    if not ab and not bb and {t.tid for t in ae} == {t.tid for t in be}:
        return TRUE
    x, y = (a, b) if a.tid <= b.tid else (b, a)
    return _intern("seteq", BOOL, None, (x, y))


# ---------------------------------------------------------------------------
# Substitution and queries
# ---------------------------------------------------------------------------

def substitute(t: Term, mapping: dict[Term, Term]) -> Term:
    """Replace variables (or arbitrary atoms) by terms, bottom-up."""
    if not mapping:
        return t
    memo: dict[int, Term] = {}

    def go(u: Term) -> Term:
        if u in mapping:
            return mapping[u]
        r = memo.get(u.tid)
        if r is not None:
            return r
        if not u.args:
            memo[u.tid] = u
            return u
        new_args = tuple(go(a) for a in u.args)
        if all(x is y for x, y in zip(new_args, u.args)):
            r = u
        else:
            r = rebuild(u, new_args)
        memo[u.tid] = r
        return r

    return go(t)


def rebuild(t: Term, args: tuple[Term, ...]) -> Term:
    k = t.kind
    if k == "lin":
        const, pairs = t.data
        return add(mk_frac(const), *[scale(c, a) for a, (_, c) in zip(args, pairs)])
    if k == "eq0":
        return _cmp("eq0", args[0])
    if k == "le0":
        return _cmp("le0", args[0])
    if k == "lt0":
        return _cmp("lt0", args[0])
    if k == "and":
        return and_(*args)
    if k == "or":
        return or_(*args)
    if k == "not":
        return not_(args[0])
    if k == "eqref":
        return eq_ref(*args)
    if k == "inset":
        return in_set(args[0], args[1])
    if k == "seteq":
        return set_eq(args[0], args[1])
    if k == "setlit":
        return set_lit(args)
    if k == "setunion":
        out = args[0]
        for a in args[1:]:
            out = set_union(out, a)
        return out
    if k == "mul":
        return mul(args[0], args[1])
    if k in OPAQUE_KINDS:
        return _opaque(k, args[0], args[1])
    raise AssertionError(f"rebuild: {k}")


def free_atoms(t: Term) -> set[Term]:
    """All variable / ref / opaque leaves occurring in the term."""
    out: set[Term] = set()
    stack = [t]
    seen: set[int] = set()
    while stack:
        u = stack.pop()
        if u.tid in seen:
            continue
        seen.add(u.tid)
        if u.kind in ("var", "ref") or u.kind in OPAQUE_KINDS:
            out.add(u)
        stack.extend(u.args)
    return out


# ---------------------------------------------------------------------------
# Pretty printing (debugging, traces, SMT hints)
# ---------------------------------------------------------------------------

_OP_SYMBOL = {
    "mul": "*", "mod": "%", "div": "/", "bitand": "&", "bitor": "|",
    "bitxor": "^", "shl": "<<", "shr": ">>",
}


def pretty(t: Term) -> str:
    k = t.kind
    if k == "num":
        return str(t.data)
    if k == "boollit":
        return "true" if t.data else "false"
    if k == "var":
        return t.data
    if k == "ref":
        return f"{t.data[1]}#{t.data[0]}"
    if k == "any":
        return "_"
    if k == "lin":
        const, pairs = t.data
        bits = []
        for a, c in pairs:
            bits.append(f"{c}*{pretty(a)}" if c != 1 else pretty(a))
        if const != 0 or not bits:
            bits.append(str(const))
        return " + ".join(bits)
    if k in ("eq0", "le0", "lt0"):
        op = {"eq0": "==", "le0": "<=", "lt0": "<"}[k]
        return f"({pretty(t.args[0])} {op} 0)"
    if k == "and":
        return "(" + " && ".join(pretty(a) for a in t.args) + ")"
    if k == "or":
        return "(" + " || ".join(pretty(a) for a in t.args) + ")"
    if k == "not":
        return f"!{pretty(t.args[0])}"
    if k == "eqref":
        return f"({pretty(t.args[0])} === {pretty(t.args[1])})"
    if k == "inset":
        return f"({pretty(t.args[0])} in {pretty(t.args[1])})"
    if k == "seteq":
        return f"({pretty(t.args[0])} =s= {pretty(t.args[1])})"
    if k == "setlit":
        return "{" + ", ".join(pretty(a) for a in t.args) + "}"
    if k == "setunion":
        return " u ".join(pretty(a) for a in t.args)
    if k in _OP_SYMBOL:
        return f"({pretty(t.args[0])} {_OP_SYMBOL[k]} {pretty(t.args[1])})"
    return f"<{k}>"  # pragma: no cover
