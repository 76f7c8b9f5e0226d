"""Invariant defunctionalisation and the encoded assertion form.

Location invariants are functions from values to assertions.  Since only
finitely many appear in a program, each distinct syntactic form gets an
integer index; holding a ``Rel``/``Acq``/``RMWAcq`` resource then only needs
to mention indices.  The table records the whole-invariant index of every
form plus the indices of its top-level star conjuncts, so acquire resources
can be split along conjuncts.

The encoder works on *encoded* assertions: permission atoms, predicate atoms
and field-value constraints, each tagged with the heap it lives in (real, up,
down, or the tmp heap used inside the CAS encoding).  Carrying the heap as a
tag on each atom makes the up/down mappings bijective by construction, so
no mapping axioms are needed.  Ghost locations are immune to relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

from . import syntax as S
from .diagnostics import DOUBLE_MODALITY, Diagnostic, FrontendError, UnsupportedFeature
from .frontend import GHOST, CheckedProgram, const_fraction
from .syntax import Span, NO_SPAN


class HeapLabel(Enum):
    REAL = 0
    UP = 1
    DOWN = -1
    TMP = -3

    def __str__(self) -> str:
        return self.name.lower()


# ---------------------------------------------------------------------------
# Invariant table
# ---------------------------------------------------------------------------

@dataclass
class InvariantTable:
    """Defunctionalised invariants: index -> body over the value parameter."""

    entries: dict[int, S.Assertion] = field(default_factory=dict)
    names: dict[int, str] = field(default_factory=dict)          # display names
    whole_of: dict[S.InvRef, int] = field(default_factory=dict)
    conjuncts_of: dict[S.InvRef, tuple[int, ...]] = field(default_factory=dict)
    spans: dict[int, Span] = field(default_factory=dict)

    def whole(self, inv: S.InvRef) -> int:
        return self.whole_of[inv]

    def conjuncts(self, inv: S.InvRef) -> tuple[int, ...]:
        return self.conjuncts_of[inv]

    def body(self, idx: int) -> S.Assertion:
        return self.entries[idx]

    def all_indices(self) -> list[int]:
        return sorted(self.entries)

    def to_json(self) -> list[dict]:
        out = []
        for idx in self.all_indices():
            span = self.spans.get(idx, NO_SPAN)
            out.append({
                "index": idx,
                "name": self.names.get(idx, ""),
                "line": span.line,
                "col": span.col,
                "body": S.pp_assertion(self.entries[idx]),
            })
        return out


def build_invariant_table(checked: CheckedProgram) -> InvariantTable:
    """Index every syntactic invariant occurrence of the program.

    Occurrences are collected from allocation annotations, Acq/Rel/RMWAcq
    assertion parameters (in specs, loop invariants and fence annotations)
    and rewrite statements.  Forms are deduplicated syntactically, so the
    same named combination always maps to the same index; the star of the
    conjunct entries reassembles the whole invariant by construction.
    """
    program = checked.program
    table = InvariantTable()
    decl_of = {d.name: d for d in program.invariants}

    def ensure(inv: S.InvRef, span: Span) -> None:
        if inv in table.whole_of:
            return
        missing = [n for n in inv if n not in decl_of]
        if missing:
            raise FrontendError(Diagnostic(
                "SyntaxError", span, rule="defunctionalisation",
                message=f"unknown invariant {missing[0]!r}"))
        # index each single-name conjunct first, then the combination
        for name in inv:
            single = (name,)
            if single not in table.whole_of:
                idx = len(table.entries)
                d = decl_of[name]
                table.entries[idx] = d.body
                table.names[idx] = name
                table.spans[idx] = d.span
                table.whole_of[single] = idx
                table.conjuncts_of[single] = (idx,)
        if len(inv) > 1:
            idx = len(table.entries)
            table.entries[idx] = S.star([decl_of[n].body for n in inv])
            table.names[idx] = " && ".join(inv)
            table.spans[idx] = span
            table.whole_of[inv] = idx
            table.conjuncts_of[inv] = tuple(table.whole_of[(n,)] for n in inv)
        _assert_reassembles(table, inv)

    def scan_assertion(a: S.Assertion, span: Span) -> None:
        if isinstance(a, (S.AAcq, S.ARel, S.ARMWAcq)):
            ensure(a.inv, a.span or span)
        elif isinstance(a, S.AStar):
            for p in a.parts:
                scan_assertion(p, span)
        elif isinstance(a, S.AImplies):
            scan_assertion(a.body, span)
        elif isinstance(a, S.ACond):
            scan_assertion(a.then, span)
            scan_assertion(a.els, span)
        elif isinstance(a, (S.AUp, S.ADown)):
            scan_assertion(a.body, span)

    for proc in program.procedures:
        if proc.pre is not None:
            scan_assertion(proc.pre, proc.span)
        if proc.post is not None:
            scan_assertion(proc.post, proc.span)
        for st in S.walk_stmts(proc.body):
            if isinstance(st, S.SAllocAtomic):
                ensure(st.inv, st.span)
            elif isinstance(st, S.SRewrite):
                ensure(st.old, st.span)
                ensure(st.new, st.span)
            elif isinstance(st, S.SFenceRel):
                scan_assertion(st.assertion, st.span)
            elif isinstance(st, S.SWhile) and st.invariant is not None:
                scan_assertion(st.invariant, st.span)
            elif isinstance(st, S.SPar):
                for th in st.threads:
                    scan_assertion(th.pre, th.span)
                    scan_assertion(th.post, th.span)
    # invariant bodies may themselves mention Acq/Rel resources
    for d in program.invariants:
        scan_assertion(d.body, d.span)
    return table


def _assert_reassembles(table: InvariantTable, inv: S.InvRef) -> None:
    whole = table.entries[table.whole_of[inv]]
    parts = [table.entries[i] for i in table.conjuncts_of[inv]]
    if S.star(parts) != whole:
        raise AssertionError(
            f"conjunct entries do not reassemble invariant {' && '.join(inv)}")


# ---------------------------------------------------------------------------
# Value substitution
# ---------------------------------------------------------------------------

def substitute(q: S.Assertion, value: S.Expr) -> S.Assertion:
    """Instantiate an invariant body at a value.

    The assertion language has no binders, so plain structural replacement
    of the distinguished parameter is already capture-avoiding.
    """
    def in_expr(e: S.Expr) -> S.Expr:
        if isinstance(e, S.EInvVal):
            return value
        if isinstance(e, S.EBin):
            return S.EBin(e.op, in_expr(e.left), in_expr(e.right))
        if isinstance(e, S.EUn):
            return S.EUn(e.op, in_expr(e.operand))
        return e

    if isinstance(q, S.APure):
        return S.APure(expr=in_expr(q.expr), span=q.span)
    if isinstance(q, S.APointsTo):
        frac = in_expr(q.frac) if q.frac is not None else None
        return S.APointsTo(loc=q.loc, value=in_expr(q.value), frac=frac, span=q.span)
    if isinstance(q, S.AStar):
        return S.AStar(parts=tuple(substitute(p, value) for p in q.parts), span=q.span)
    if isinstance(q, S.AImplies):
        return S.AImplies(cond=in_expr(q.cond), body=substitute(q.body, value), span=q.span)
    if isinstance(q, S.ACond):
        return S.ACond(cond=in_expr(q.cond), then=substitute(q.then, value),
                       els=substitute(q.els, value), span=q.span)
    if isinstance(q, (S.AUninit, S.AInit, S.AAcq, S.ARel, S.ARMWAcq)):
        return q
    if isinstance(q, S.AUp):
        return S.AUp(body=substitute(q.body, value), span=q.span)
    if isinstance(q, S.ADown):
        return S.ADown(body=substitute(q.body, value), span=q.span)
    raise AssertionError(q)


# ---------------------------------------------------------------------------
# Encoded assertions
# ---------------------------------------------------------------------------

WILDCARD = "wildcard"

PermSpec = Union[Fraction, str]  # exact amount, or the WILDCARD marker

FIELD_VAL = "val"
FIELD_INIT = "init"
FIELD_REL = "rel"
FIELD_ACQ = "acq"


@dataclass(frozen=True)
class EPure:
    expr: S.Expr
    span: Span = NO_SPAN


@dataclass(frozen=True)
class EAcc:
    loc: str
    fld: str
    perm: PermSpec
    label: HeapLabel = HeapLabel.REAL
    span: Span = NO_SPAN


@dataclass(frozen=True)
class EFieldEq:
    loc: str
    fld: str
    value: S.Expr          # EAny means "no constraint"
    label: HeapLabel = HeapLabel.REAL
    span: Span = NO_SPAN


@dataclass(frozen=True)
class EPredAcc:
    """An AcqConjunct instance for one invariant conjunct."""
    loc: str
    idx: int
    perm: PermSpec          # Fraction(1) for acquire mode, WILDCARD for RMW
    label: HeapLabel = HeapLabel.REAL
    vals_empty: bool = False   # assert/assume the values-read snapshot is empty
    span: Span = NO_SPAN


@dataclass(frozen=True)
class EStar:
    parts: tuple


@dataclass(frozen=True)
class EImplies:
    cond: S.Expr
    body: "EncAssertion"
    span: Span = NO_SPAN


@dataclass(frozen=True)
class ECond:
    cond: S.Expr
    then: "EncAssertion"
    els: "EncAssertion"
    span: Span = NO_SPAN


EncAssertion = Union[EPure, EAcc, EFieldEq, EPredAcc, EStar, EImplies, ECond]

E_TRUE = EPure(S.TRUE_E)


def estar(parts: list) -> EncAssertion:
    flat: list = []
    for p in parts:
        if isinstance(p, EStar):
            flat.extend(p.parts)
        elif isinstance(p, EPure) and p.expr == S.TRUE_E:
            continue
        else:
            flat.append(p)
    if not flat:
        return E_TRUE
    if len(flat) == 1:
        return flat[0]
    return EStar(parts=tuple(flat))


# ---------------------------------------------------------------------------
# Lowering: surface assertion -> encoded assertion
# ---------------------------------------------------------------------------

@dataclass
class LowerCtx:
    table: InvariantTable
    classes: dict[str, str]          # variable classifications for this scope

    def is_ghost(self, loc: str) -> bool:
        return self.classes.get(loc) == GHOST


def lower(a: S.Assertion, ctx: LowerCtx, label: HeapLabel = HeapLabel.REAL) -> EncAssertion:
    """Encode a surface assertion; atoms on ghost locations keep the real label."""
    if isinstance(a, S.APure):
        _reject_inv_val(a.expr, a.span)
        return EPure(a.expr, a.span)
    if isinstance(a, S.APointsTo):
        k = _perm_of(a.frac, a.span)
        lbl = _loc_label(a.loc, label, ctx)
        parts = [
            EAcc(a.loc, FIELD_VAL, k, lbl, a.span),
            EAcc(a.loc, FIELD_INIT, k, lbl, a.span),
        ]
        if not isinstance(a.value, S.EAny):
            parts.append(EFieldEq(a.loc, FIELD_VAL, a.value, lbl, a.span))
        parts.append(EFieldEq(a.loc, FIELD_INIT, S.TRUE_E, lbl, a.span))
        return estar(parts)
    if isinstance(a, S.AUninit):
        lbl = _loc_label(a.loc, label, ctx)
        return estar([
            EAcc(a.loc, FIELD_VAL, Fraction(1), lbl, a.span),
            EAcc(a.loc, FIELD_INIT, Fraction(1), lbl, a.span),
            EFieldEq(a.loc, FIELD_INIT, S.FALSE_E, lbl, a.span),
        ])
    if isinstance(a, S.AInit):
        return EAcc(a.loc, FIELD_INIT, WILDCARD, _loc_label(a.loc, label, ctx), a.span)
    if isinstance(a, S.ARel):
        lbl = _loc_label(a.loc, label, ctx)
        idx = ctx.table.whole(a.inv)
        return estar([
            EAcc(a.loc, FIELD_REL, WILDCARD, lbl, a.span),
            EFieldEq(a.loc, FIELD_REL, S.EInt(idx), lbl, a.span),
        ])
    if isinstance(a, S.AAcq):
        lbl = _loc_label(a.loc, label, ctx)
        parts: list = [
            EAcc(a.loc, FIELD_ACQ, WILDCARD, lbl, a.span),
            EFieldEq(a.loc, FIELD_ACQ, S.TRUE_E, lbl, a.span),
        ]
        for i in ctx.table.conjuncts(a.inv):
            parts.append(EPredAcc(a.loc, i, Fraction(1), lbl, vals_empty=True, span=a.span))
        return estar(parts)
    if isinstance(a, S.ARMWAcq):
        lbl = _loc_label(a.loc, label, ctx)
        parts = [
            EAcc(a.loc, FIELD_ACQ, WILDCARD, lbl, a.span),
            EFieldEq(a.loc, FIELD_ACQ, S.FALSE_E, lbl, a.span),
        ]
        for i in ctx.table.conjuncts(a.inv):
            parts.append(EPredAcc(a.loc, i, WILDCARD, lbl, span=a.span))
        return estar(parts)
    if isinstance(a, S.AStar):
        return estar([lower(p, ctx, label) for p in a.parts])
    if isinstance(a, S.AImplies):
        _reject_inv_val(a.cond, a.span)
        return EImplies(a.cond, lower(a.body, ctx, label), a.span)
    if isinstance(a, S.ACond):
        _reject_inv_val(a.cond, a.span)
        return ECond(a.cond, lower(a.then, ctx, label), lower(a.els, ctx, label), a.span)
    if isinstance(a, S.AUp):
        return lower(a.body, ctx, _shift(label, HeapLabel.UP, a.span))
    if isinstance(a, S.ADown):
        return lower(a.body, ctx, _shift(label, HeapLabel.DOWN, a.span))
    raise AssertionError(a)


def _loc_label(loc: str, label: HeapLabel, ctx: LowerCtx) -> HeapLabel:
    return HeapLabel.REAL if ctx.is_ghost(loc) else label


def _shift(current: HeapLabel, target: HeapLabel, span: Span) -> HeapLabel:
    if current != HeapLabel.REAL:
        raise FrontendError(Diagnostic(
            DOUBLE_MODALITY, span, rule="assertion-encoding",
            message="nested up/down modalities are not part of the logic"))
    return target


def _perm_of(frac: Optional[S.Expr], span: Span) -> PermSpec:
    if frac is None:
        return Fraction(1)
    k = const_fraction(frac)
    if k is None:
        raise UnsupportedFeature(
            "symbolic fraction expressions (counting permissions) are outside "
            "the supported core", span)
    if not (0 < k <= 1):
        raise FrontendError(Diagnostic(
            "SyntaxError", span, rule="well-formedness",
            message=f"fraction {k} outside (0, 1]"))
    return k


def _reject_inv_val(e: S.Expr, span: Span) -> None:
    if _mentions_inv_val(e):
        raise FrontendError(Diagnostic(
            "SyntaxError", span, rule="well-formedness",
            message="the invariant value parameter is only meaningful inside "
                    "a location invariant"))


def _mentions_inv_val(e: S.Expr) -> bool:
    if isinstance(e, S.EInvVal):
        return True
    if isinstance(e, S.EBin):
        return _mentions_inv_val(e.left) or _mentions_inv_val(e.right)
    if isinstance(e, S.EUn):
        return _mentions_inv_val(e.operand)
    return False


# ---------------------------------------------------------------------------
# Relabeling (the up/down/tmp mappings)
# ---------------------------------------------------------------------------

TO_UP = {HeapLabel.REAL: HeapLabel.UP}
TO_DOWN = {HeapLabel.REAL: HeapLabel.DOWN}
TO_TMP = {HeapLabel.REAL: HeapLabel.TMP}
FROM_UP = {HeapLabel.UP: HeapLabel.REAL}
FROM_DOWN = {HeapLabel.DOWN: HeapLabel.REAL}


def relabel(a: EncAssertion, mapping: dict[HeapLabel, HeapLabel],
            ctx: LowerCtx) -> EncAssertion:
    """Apply a heap-label mapping to every location atom.

    Ghost-location atoms are left untouched (the mappings act as the identity
    on them).  Applying a mapping to an atom outside its domain means a
    modality was stacked on another one, which the logic never does.
    """
    def map_label(loc: str, label: HeapLabel, span: Span) -> HeapLabel:
        if ctx.is_ghost(loc):
            return label
        new = mapping.get(label)
        if new is None:
            raise FrontendError(Diagnostic(
                DOUBLE_MODALITY, span, rule="assertion-encoding",
                message=f"cannot relabel a {label} atom with "
                        f"{{{', '.join(str(k) + '->' + str(v) for k, v in mapping.items())}}}"))
        return new

    if isinstance(a, EPure):
        return a
    if isinstance(a, EAcc):
        return EAcc(a.loc, a.fld, a.perm, map_label(a.loc, a.label, a.span), a.span)
    if isinstance(a, EFieldEq):
        return EFieldEq(a.loc, a.fld, a.value, map_label(a.loc, a.label, a.span), a.span)
    if isinstance(a, EPredAcc):
        return EPredAcc(a.loc, a.idx, a.perm, map_label(a.loc, a.label, a.span),
                        a.vals_empty, a.span)
    if isinstance(a, EStar):
        return estar([relabel(p, mapping, ctx) for p in a.parts])
    if isinstance(a, EImplies):
        return EImplies(a.cond, relabel(a.body, mapping, ctx), a.span)
    if isinstance(a, ECond):
        return ECond(a.cond, relabel(a.then, mapping, ctx),
                     relabel(a.els, mapping, ctx), a.span)
    raise AssertionError(a)


def enc_labels(a: EncAssertion) -> set[HeapLabel]:
    """All heap labels on atoms of an encoded assertion."""
    out: set[HeapLabel] = set()
    stack = [a]
    while stack:
        x = stack.pop()
        if isinstance(x, (EAcc, EFieldEq, EPredAcc)):
            out.add(x.label)
        elif isinstance(x, EStar):
            stack.extend(x.parts)
        elif isinstance(x, EImplies):
            stack.append(x.body)
        elif isinstance(x, ECond):
            stack.extend([x.then, x.els])
    return out


def pp_enc(a: EncAssertion) -> str:
    if isinstance(a, EPure):
        return S.pp_expr(a.expr)
    if isinstance(a, EAcc):
        amt = "wildcard" if a.perm == WILDCARD else str(a.perm)
        return f"acc({a.loc}.{a.fld}, {amt})@{a.label}"
    if isinstance(a, EFieldEq):
        return f"{a.loc}.{a.fld}@{a.label} == {S.pp_expr(a.value)}"
    if isinstance(a, EPredAcc):
        amt = "wildcard" if a.perm == WILDCARD else str(a.perm)
        empty = ", valsRead == {}" if a.vals_empty else ""
        return f"acc(AcqConjunct({a.loc}, {a.idx}), {amt})@{a.label}{empty}"
    if isinstance(a, EStar):
        return " && ".join(pp_enc(p) for p in a.parts)
    if isinstance(a, EImplies):
        return f"({S.pp_expr(a.cond)} ==> {pp_enc(a.body)})"
    if isinstance(a, ECond):
        return f"({S.pp_expr(a.cond)} ? {pp_enc(a.then)} : {pp_enc(a.els)})"
    raise AssertionError(a)
