"""Translation of source statements into verification primitives.

Each statement becomes a short, state-independent sequence of primitives
(inhale, exhale, checks, havocs, branches, heap transfers).  All state
dependence lives in the primitive executor: in particular the iteration
over held invariant conjuncts is a runtime iteration over held predicate
instances rather than a static expansion over every table index, which is
equivalent because only held conjuncts pass the permission guard.

Loops take one of two shapes: with an annotated invariant they get the
standard exhale/havoc/inhale treatment (the body is verified against the
invariant alone), and annotation-free spin loops - an empty body whose
condition is a single atomic read or CAS compared against a value - are
treated as a single read or update constrained by the exit condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Callable, Optional

from . import syntax as S
from . import speclogic as L
from .diagnostics import (
    Diagnostic, FrontendError, UnsupportedFeature,
    EXHALE_FAILURE, INSUFFICIENT_PERMISSION, READ_OF_UNINITIALISED,
    UNINITIALISED, NO_REL_PERMISSION, NO_ACQ_PERMISSION,
    MISSING_RMW_PERMISSIONS, REWRITE_NOT_JUSTIFIED, REWRITE_AFTER_READ,
    MISSING_LOOP_INVARIANT, SPIN_PATTERN_RESOURCE_LEAK, DOWN_IN_LOOP_INVARIANT,
    SYNTAX_ERROR,
)
from .frontend import GHOST, NA, CheckedProgram
from .speclogic import (
    EAcc, EFieldEq, EPredAcc, EPure, EncAssertion, HeapLabel, InvariantTable,
    LowerCtx, TO_DOWN, TO_TMP, TO_UP, WILDCARD, estar, lower, relabel,
    substitute, enc_labels, FIELD_ACQ, FIELD_INIT, FIELD_REL, FIELD_VAL,
)
from .syntax import Span, NO_SPAN


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BranchCond:
    kind: str                      # expr | nondet | notread | releq
    expr: Optional[S.Expr] = None  # expr
    loc: str = ""                  # notread / releq
    idx: int = 0                   # notread / releq
    value: Optional[S.Expr] = None  # notread: the candidate value


@dataclass
class Inhale:
    enc: EncAssertion
    rule: str = ""
    span: Span = NO_SPAN


@dataclass
class Exhale:
    enc: EncAssertion
    rule: str = ""
    kind: str = EXHALE_FAILURE
    vals_kind: str = EXHALE_FAILURE      # kind for values-read emptiness failures
    bindable: frozenset = frozenset()    # logical variables open for unification
    span: Span = NO_SPAN


@dataclass
class AssertCheck:
    enc: EncAssertion
    rule: str = ""
    kind: str = EXHALE_FAILURE
    span: Span = NO_SPAN


@dataclass
class HavocVar:
    name: str
    span: Span = NO_SPAN


@dataclass
class HavocLoc:
    loc: str
    fld: str
    span: Span = NO_SPAN


@dataclass
class AssignVar:
    name: str
    # rhs: ("expr", Expr) or ("fieldval", loc, fld)
    rhs: tuple
    span: Span = NO_SPAN


@dataclass
class Branch:
    cond: BranchCond
    then: list
    els: list
    span: Span = NO_SPAN


@dataclass
class ForEachHeldConjunct:
    loc: str
    need_full: bool                      # full instance (acq) vs any positive (RMW)
    body: Callable[[int], list]
    span: Span = NO_SPAN


@dataclass
class TransferHeap:
    src: HeapLabel
    dst: HeapLabel
    rule: str = ""
    span: Span = NO_SPAN


@dataclass
class ExhalePreferTmp:
    enc: EncAssertion                    # atom labels name the fallback heap
    rule: str = ""
    kind: str = EXHALE_FAILURE
    span: Span = NO_SPAN


@dataclass
class KillBranch:
    span: Span = NO_SPAN


@dataclass
class DropAllPerms:
    span: Span = NO_SPAN


@dataclass
class NewLoc:
    var: str
    ghost: bool = False
    span: Span = NO_SPAN


@dataclass
class RecordReadValue:
    loc: str
    idx: int
    value: S.Expr
    span: Span = NO_SPAN


@dataclass
class SpinLeakCheck:
    """Reject spin loops whose discarded reads would gain resources.

    ``lowered`` maps each invariant index to its body instantiated at the
    probe variable; the executor checks, for every held conjunct, that no
    permission atom is feasibly gained for a value satisfying the continue
    condition.
    """
    loc: str
    need_full: bool
    probe: str
    cont: S.Expr                          # continue condition over the probe
    lowered: dict
    span: Span = NO_SPAN


Primitive = object


# ---------------------------------------------------------------------------
# Obligations
# ---------------------------------------------------------------------------

@dataclass
class Block:
    span: Span
    desc: str
    prims: list


@dataclass
class Obligation:
    name: str
    kind: str                  # procedure | thread
    span: Span
    blocks: list = dc_field(default_factory=list)
    var_classes: dict = dc_field(default_factory=dict)


# ---------------------------------------------------------------------------
# Encoding context
# ---------------------------------------------------------------------------

class EncodeCtx:
    def __init__(self, checked: CheckedProgram, table: InvariantTable,
                 proc_name: str, solver=None):
        self.checked = checked
        self.program = checked.program
        self.table = table
        self.proc_name = proc_name
        self.classes = checked.info[proc_name].classes
        self.lower_ctx = LowerCtx(table, self.classes)
        self.solver = solver
        self._fresh = 0
        self.extra_obligations: list[Obligation] = []
        self._thread_count = 0

    def fresh(self, hint: str) -> str:
        self._fresh += 1
        return f"${hint}{self._fresh}"

    def class_of(self, var: str) -> str:
        return self.classes.get(var, "value")

    def lower(self, a: S.Assertion, label: HeapLabel = HeapLabel.REAL) -> EncAssertion:
        return lower(a, self.lower_ctx, label)

    def inv_at(self, idx: int, value: S.Expr) -> S.Assertion:
        return substitute(self.table.body(idx), value)


def _enc_err(kind: str, span: Span, rule: str, msg: str) -> FrontendError:
    return FrontendError(Diagnostic(kind, span, rule=rule, message=msg))


# ---------------------------------------------------------------------------
# Statement encodings
# ---------------------------------------------------------------------------

def encode_stmt(st: S.Stmt, ctx: EncodeCtx) -> list:
    if isinstance(st, S.SAllocNa):
        return _alloc_nonatomic(st.var, False, st.span, ctx)
    if isinstance(st, S.SGhostAlloc):
        return _alloc_nonatomic(st.var, True, st.span, ctx)
    if isinstance(st, S.SAllocAtomic):
        return _alloc_atomic(st, ctx)
    if isinstance(st, S.SWrite):
        if st.mode == "na":
            return _nonatomic_write(st, ctx)
        if st.mode == "rlx":
            return _atomic_write(st.loc, st.value, TO_UP, "relaxed write", st.span, ctx)
        return _atomic_write(st.loc, st.value, None, "release write", st.span, ctx)
    if isinstance(st, S.SRead):
        if st.mode == "na":
            return _nonatomic_read(st, ctx)
        if st.mode == "rlx":
            return _atomic_read(st.target, st.loc, TO_DOWN, "relaxed read", st.span, ctx)
        return _atomic_read(st.target, st.loc, None, "acquire read", st.span, ctx)
    if isinstance(st, S.SFenceAcq):
        return [TransferHeap(HeapLabel.DOWN, HeapLabel.REAL, "acquire fence", st.span)]
    if isinstance(st, S.SFenceRel):
        enc = ctx.lower(st.assertion)
        return [
            Exhale(enc, rule="release fence", span=st.span),
            Inhale(relabel(enc, TO_UP, ctx.lower_ctx), rule="release fence", span=st.span),
        ]
    if isinstance(st, S.SCas):
        return _cas(st.target, st.tau, st.loc, st.expected, st.newval,
                    st.span, ctx, never_fails=False)
    if isinstance(st, S.SFaa):
        probe = S.EVar(st.target)
        newval = S.EBin("+", probe, st.delta)
        return _cas(st.target, st.tau, st.loc, probe, newval,
                    st.span, ctx, never_fails=True)
    if isinstance(st, S.SRewrite):
        return _rewrite(st, ctx)
    if isinstance(st, S.SWhile):
        return _while(st, ctx)
    if isinstance(st, S.SIf):
        return [Branch(BranchCond("expr", expr=st.cond),
                       encode_block(st.then, ctx), encode_block(st.els, ctx), st.span)]
    if isinstance(st, S.SPar):
        return _par(st, ctx)
    if isinstance(st, S.SCall):
        return _call(st, ctx)
    if isinstance(st, S.SAssign):
        return [AssignVar(st.var, ("expr", st.value), st.span)]
    if isinstance(st, S.SFree):
        return _free(st, ctx)
    if isinstance(st, S.SSkip):
        return []
    raise AssertionError(st)


def encode_block(stmts: list, ctx: EncodeCtx) -> list:
    out: list = []
    for st in stmts:
        out.extend(encode_stmt(st, ctx))
    return out


# -- allocation ---------------------------------------------------------------

def _alloc_nonatomic(var: str, ghost: bool, span: Span, ctx: EncodeCtx) -> list:
    uninit = estar([
        EAcc(var, FIELD_VAL, Fraction(1), span=span),
        EAcc(var, FIELD_INIT, Fraction(1), span=span),
        EFieldEq(var, FIELD_INIT, S.FALSE_E, span=span),
    ])
    rule = "ghost allocation" if ghost else "non-atomic allocation"
    return [NewLoc(var, ghost, span), Inhale(uninit, rule, span)]


def _alloc_atomic(st: S.SAllocAtomic, ctx: EncodeCtx) -> list:
    rel = S.ARel(loc=st.var, inv=st.inv, span=st.span)
    reader = (S.AAcq if st.kind == "acq" else S.ARMWAcq)(loc=st.var, inv=st.inv, span=st.span)
    rule = f"atomic allocation ({st.kind})"
    return [
        NewLoc(st.var, False, st.span),
        Inhale(ctx.lower(S.star([rel, reader])), rule, st.span),
    ]


# -- non-atomic accesses --------------------------------------------------------

def _nonatomic_write(st: S.SWrite, ctx: EncodeCtx) -> list:
    full = estar([
        EAcc(st.loc, FIELD_VAL, Fraction(1), span=st.span),
        EAcc(st.loc, FIELD_INIT, Fraction(1), span=st.span),
    ])
    after = estar([
        EAcc(st.loc, FIELD_VAL, Fraction(1), span=st.span),
        EAcc(st.loc, FIELD_INIT, Fraction(1), span=st.span),
        EFieldEq(st.loc, FIELD_VAL, st.value, span=st.span),
        EFieldEq(st.loc, FIELD_INIT, S.TRUE_E, span=st.span),
    ])
    rule = "non-atomic write"
    return [
        Exhale(full, rule, kind=INSUFFICIENT_PERMISSION, span=st.span),
        Inhale(after, rule, st.span),
    ]


def _nonatomic_read(st: S.SRead, ctx: EncodeCtx) -> list:
    rule = "non-atomic read"
    return [
        AssertCheck(EAcc(st.loc, FIELD_VAL, WILDCARD, span=st.span),
                    rule, kind=INSUFFICIENT_PERMISSION, span=st.span),
        AssertCheck(EFieldEq(st.loc, FIELD_INIT, S.TRUE_E, span=st.span),
                    rule, kind=READ_OF_UNINITIALISED, span=st.span),
        AssignVar(st.target, ("fieldval", st.loc, FIELD_VAL), st.span),
    ]


# -- release / relaxed writes ----------------------------------------------------

def _rel_index_chain(loc: str, make_body: Callable[[int], list],
                     indices: list[int], span: Span, rule: str) -> list:
    """Branch on the invariant index stored in the rel field."""
    chain: list = [AssertCheck(EPure(S.FALSE_E, span), rule,
                               kind=NO_REL_PERMISSION, span=span)]
    for idx in reversed(indices):
        chain = [Branch(BranchCond("releq", loc=loc, idx=idx),
                        make_body(idx), chain, span)]
    return chain


def _atomic_write(loc: str, value: S.Expr, modality: Optional[dict],
                  rule: str, span: Span, ctx: EncodeCtx) -> list:
    def body(idx: int) -> list:
        enc = ctx.lower(ctx.inv_at(idx, value))
        if modality is not None:
            enc = relabel(enc, modality, ctx.lower_ctx)
        return [Exhale(enc, rule, span=span)]

    prims: list = [
        AssertCheck(EAcc(loc, FIELD_REL, WILDCARD, span=span),
                    rule, kind=NO_REL_PERMISSION, span=span),
    ]
    prims += _rel_index_chain(loc, body, ctx.table.all_indices(), span, rule)
    prims.append(Inhale(EAcc(loc, FIELD_INIT, WILDCARD, span=span), rule, span))
    return prims


# -- acquire / relaxed reads ------------------------------------------------------

def _read_gain_body(loc: str, value: S.Expr, modality: Optional[dict],
                    rule: str, span: Span, ctx: EncodeCtx) -> Callable[[int], list]:
    def body(idx: int) -> list:
        enc = ctx.lower(ctx.inv_at(idx, value))
        if modality is not None:
            enc = relabel(enc, modality, ctx.lower_ctx)
        return [Branch(
            BranchCond("notread", loc=loc, idx=idx, value=value),
            [Inhale(enc, rule, span), RecordReadValue(loc, idx, value, span)],
            [], span)]
    return body


def _atomic_read(target: str, loc: str, modality: Optional[dict],
                 rule: str, span: Span, ctx: EncodeCtx) -> list:
    prims: list = [
        AssertCheck(EAcc(loc, FIELD_INIT, WILDCARD, span=span),
                    rule, kind=UNINITIALISED, span=span),
        AssertCheck(estar([EAcc(loc, FIELD_ACQ, WILDCARD, span=span),
                           EFieldEq(loc, FIELD_ACQ, S.TRUE_E, span=span)]),
                    rule, kind=NO_ACQ_PERMISSION, span=span),
        HavocVar(target, span),
        ForEachHeldConjunct(
            loc, need_full=True,
            body=_read_gain_body(loc, S.EVar(target), modality, rule, span, ctx),
            span=span),
    ]
    return prims


# -- compare-and-swap / fetch-update ----------------------------------------------

def _cas(target: str, tau: str, loc: str, expected: S.Expr, newval: S.Expr,
         span: Span, ctx: EncodeCtx, never_fails: bool) -> list:
    rule = "fetch-update" if never_fails else "compare-and-swap"
    write_sync = tau in ("rel", "rel_acq")
    read_sync = tau in ("acq", "rel_acq")

    def tmp_gain(idx: int) -> list:
        enc = relabel(ctx.lower(ctx.inv_at(idx, S.EVar(target))), TO_TMP, ctx.lower_ctx)
        return [Inhale(enc, rule + " read gain", span)]

    def release_body(idx: int) -> list:
        enc = ctx.lower(ctx.inv_at(idx, newval))
        if not write_sync:
            enc = relabel(enc, TO_UP, ctx.lower_ctx)
        return [ExhalePreferTmp(enc, rule + " release", span=span)]

    success: list = [
        ForEachHeldConjunct(loc, need_full=False, body=tmp_gain, span=span),
    ]
    success += _rel_index_chain(loc, release_body, ctx.table.all_indices(), span, rule)
    success.append(TransferHeap(
        HeapLabel.TMP, HeapLabel.REAL if read_sync else HeapLabel.DOWN,
        rule + " read transfer", span))

    prims: list = [
        AssertCheck(EAcc(loc, FIELD_INIT, WILDCARD, span=span),
                    rule, kind=UNINITIALISED, span=span),
        AssertCheck(estar([EAcc(loc, FIELD_ACQ, WILDCARD, span=span),
                           EFieldEq(loc, FIELD_ACQ, S.FALSE_E, span=span)]),
                    rule, kind=MISSING_RMW_PERMISSIONS, span=span),
        AssertCheck(EAcc(loc, FIELD_REL, WILDCARD, span=span),
                    rule, kind=NO_REL_PERMISSION, span=span),
        HavocVar(target, span),
    ]
    if never_fails:
        prims += success
    else:
        cond = BranchCond("expr", expr=S.EBin("==", S.EVar(target), expected))
        prims.append(Branch(cond, success, [], span))
    return prims


# -- invariant rewriting -----------------------------------------------------------

def _rewrite(st: S.SRewrite, ctx: EncodeCtx) -> list:
    rule = "invariant rewrite"
    probe = ctx.fresh("rw")
    old_at = estar([ctx.lower(ctx.inv_at(i, S.EVar(probe)))
                    for i in ctx.table.conjuncts(st.old)])
    new_at = estar([ctx.lower(ctx.inv_at(i, S.EVar(probe)))
                    for i in ctx.table.conjuncts(st.new)])
    justification = [
        DropAllPerms(st.span),
        HavocVar(probe, st.span),
        Inhale(old_at, rule + " assumption", st.span),
        Exhale(new_at, rule, kind=REWRITE_NOT_JUSTIFIED, span=st.span),
        KillBranch(st.span),
    ]
    old_insts = estar([EPredAcc(st.loc, i, Fraction(1), vals_empty=True, span=st.span)
                       for i in ctx.table.conjuncts(st.old)])
    new_insts = estar([EPredAcc(st.loc, i, Fraction(1), vals_empty=True, span=st.span)
                       for i in ctx.table.conjuncts(st.new)])
    return [
        AssertCheck(estar([EAcc(st.loc, FIELD_ACQ, WILDCARD, span=st.span),
                           EFieldEq(st.loc, FIELD_ACQ, S.TRUE_E, span=st.span)]),
                    rule, kind=NO_ACQ_PERMISSION, span=st.span),
        Branch(BranchCond("nondet"), justification, [], st.span),
        Exhale(old_insts, rule + " update", kind=EXHALE_FAILURE,
               vals_kind=REWRITE_AFTER_READ, span=st.span),
        Inhale(new_insts, rule + " update", st.span),
    ]


# -- loops ---------------------------------------------------------------------------

def _negate_cmp(op: str, lhs: S.Expr, rhs: S.Expr) -> S.Expr:
    flip = {"==": "!=", "!=": "==", "<": ">=", "<=": ">", ">": "<=", ">=": "<"}
    return S.EBin(flip[op], lhs, rhs)


def _while(st: S.SWhile, ctx: EncodeCtx) -> list:
    cond = st.cond
    if st.invariant is None:
        if not st.body and cond.kind == "read":
            return _spin_read(st, ctx)
        if not st.body and cond.kind == "cas":
            return _spin_cas(st, ctx)
        raise _enc_err(MISSING_LOOP_INVARIANT, st.span, "loop",
                       "loop needs an invariant (only empty spin loops over a "
                       "single atomic read or CAS may omit one)")
    if cond.kind != "pure":
        raise _enc_err(SYNTAX_ERROR, st.span, "loop",
                       "annotated loops need a pure condition; move the atomic "
                       "access into the loop body")
    inv_enc = ctx.lower(st.invariant)
    if HeapLabel.DOWN in enc_labels(inv_enc):
        raise _enc_err(DOWN_IN_LOOP_INVARIANT, st.span, "loop",
                       "loop invariants must not hold resources under the "
                       "down modality; insert an acquire fence first")
    targets = sorted(set(S.assigned_vars(st.body)))
    rule = "loop invariant"
    body_arm: list = [DropAllPerms(st.span)]
    body_arm += [HavocVar(v, st.span) for v in targets]
    body_arm += [
        Inhale(inv_enc, rule + " (body entry)", st.span),
        Inhale(EPure(cond.expr, st.span), rule, st.span),
    ]
    body_arm += encode_block(st.body, ctx)
    body_arm += [
        Exhale(inv_enc, rule + " maintained", span=st.span),
        KillBranch(st.span),
    ]
    exit_arm: list = [HavocVar(v, st.span) for v in targets]
    exit_arm += [
        Inhale(inv_enc, rule + " (after loop)", st.span),
        Inhale(EPure(S.EUn("!", cond.expr), st.span), rule, st.span),
    ]
    return [
        Exhale(inv_enc, rule + " on entry", span=st.span),
        Branch(BranchCond("nondet"), body_arm, exit_arm, st.span),
    ]


def _spin_read(st: S.SWhile, ctx: EncodeCtx) -> list:
    cond = st.cond
    if cond.mode == "na":
        raise _enc_err(MISSING_LOOP_INVARIANT, st.span, "spin loop",
                       "spin loops must read atomically")
    modality = TO_DOWN if cond.mode == "rlx" else None
    rule = "spin loop (" + ("relaxed" if modality else "acquire") + " read)"
    probe = ctx.fresh("spin")
    cont = S.EBin(cond.op, S.EVar(probe), cond.rhs)
    lowered = {i: ctx.lower(ctx.inv_at(i, S.EVar(probe)))
               for i in ctx.table.all_indices()}
    prims: list = [
        AssertCheck(EAcc(cond.loc, FIELD_INIT, WILDCARD, span=st.span),
                    rule, kind=UNINITIALISED, span=st.span),
        AssertCheck(estar([EAcc(cond.loc, FIELD_ACQ, WILDCARD, span=st.span),
                           EFieldEq(cond.loc, FIELD_ACQ, S.TRUE_E, span=st.span)]),
                    rule, kind=NO_ACQ_PERMISSION, span=st.span),
        SpinLeakCheck(cond.loc, True, probe, cont, lowered, st.span),
    ]
    if cond.op == "==":
        # the only discarded value is the compare constant: record it
        def record(idx: int) -> list:
            return [RecordReadValue(cond.loc, idx, cond.rhs, st.span)]
        prims.append(ForEachHeldConjunct(cond.loc, True, record, st.span))
    prims += [
        HavocVar(probe, st.span),
        ForEachHeldConjunct(
            cond.loc, need_full=True,
            body=_read_gain_body(cond.loc, S.EVar(probe), modality, rule, st.span, ctx),
            span=st.span),
        Inhale(EPure(_negate_cmp(cond.op, S.EVar(probe), cond.rhs), st.span),
               rule + " exit", st.span),
    ]
    return prims


def _spin_cas(st: S.SWhile, ctx: EncodeCtx) -> list:
    cond = st.cond
    # the exit condition must coincide with CAS success: failed attempts are
    # no-ops, so the loop reduces to one successful CAS
    exit_is_success = (cond.op == "!=" and cond.rhs == cond.expected)
    if not exit_is_success:
        raise _enc_err(SPIN_PATTERN_RESOURCE_LEAK, st.span, "spin loop (CAS)",
                       "a CAS spin loop must exit exactly when the CAS "
                       "succeeds; use an annotated loop otherwise")
    probe = ctx.fresh("spin")
    prims = _cas(probe, cond.mode, cond.loc, cond.expected, cond.newval,
                 st.span, ctx, never_fails=False)
    prims.append(Inhale(EPure(_negate_cmp(cond.op, S.EVar(probe), cond.rhs), st.span),
                        "spin loop (CAS) exit", st.span))
    return prims


# -- structured parallelism and calls ---------------------------------------------

def _par(st: S.SPar, ctx: EncodeCtx) -> list:
    prims: list = []
    for k, th in enumerate(st.threads, start=1):
        prims.append(Exhale(ctx.lower(th.pre), rule=f"thread {k} fork",
                            span=th.span))
    for k, th in enumerate(st.threads, start=1):
        prims.append(Inhale(ctx.lower(th.post), rule=f"thread {k} join",
                            span=th.span))
    for th in st.threads:
        ctx._thread_count += 1
        name = f"{ctx.proc_name}::thread{ctx._thread_count}"
        ctx.extra_obligations.append(_thread_obligation(name, th, ctx))
    return prims


def _used_vars(stmts: list) -> set[str]:
    out: set[str] = set()
    for s in S.walk_stmts(stmts):
        for attr in ("value", "expected", "newval", "delta", "cond"):
            e = getattr(s, attr, None)
            if isinstance(e, S.Expr):
                out |= S.expr_vars(e)
        if isinstance(s, S.SWhile):
            c = s.cond
            if c.kind == "pure":
                out |= S.expr_vars(c.expr)
            else:
                out.add(c.loc)
                out |= S.expr_vars(c.rhs)
                if c.kind == "cas":
                    out |= S.expr_vars(c.expected) | S.expr_vars(c.newval)
            if s.invariant is not None:
                out |= S.assertion_vars(s.invariant)
        if isinstance(s, S.SFenceRel):
            out |= S.assertion_vars(s.assertion)
        if isinstance(s, S.SPar):
            for th in s.threads:
                out |= S.assertion_vars(th.pre) | S.assertion_vars(th.post)
        if isinstance(s, S.SCall):
            for a in s.args:
                out |= S.expr_vars(a)
        for attr in ("loc", "var", "target"):
            v = getattr(s, attr, None)
            if isinstance(v, str) and v:
                out.add(v)
    return out


def _deep_assertion_vars(a: S.Assertion, ctx: EncodeCtx,
                         seen: frozenset = frozenset()) -> set[str]:
    out = S.assertion_vars(a)
    stack = [a]
    while stack:
        x = stack.pop()
        if isinstance(x, (S.AAcq, S.ARel, S.ARMWAcq)):
            for name in x.inv:
                if name not in seen:
                    decl = next((d for d in ctx.program.invariants if d.name == name), None)
                    if decl is not None:
                        out |= _deep_assertion_vars(decl.body, ctx, seen | {name})
        elif isinstance(x, S.AStar):
            stack.extend(x.parts)
        elif isinstance(x, S.AImplies):
            stack.append(x.body)
        elif isinstance(x, S.ACond):
            stack.extend([x.then, x.els])
        elif isinstance(x, (S.AUp, S.ADown)):
            stack.append(x.body)
    return out


def _thread_obligation(name: str, th: S.Thread, ctx: EncodeCtx) -> Obligation:
    free = _deep_assertion_vars(th.pre, ctx) | _deep_assertion_vars(th.post, ctx)
    free |= _used_vars(th.body)
    setup: list = [HavocVar(v, th.span) for v in sorted(free)]
    setup.append(Inhale(ctx.lower(th.pre), "thread precondition", th.span))
    ob = Obligation(name=name, kind="thread", span=th.span,
                    var_classes=dict(ctx.classes))
    ob.blocks.append(Block(th.span, "thread setup", setup))
    _encode_body_blocks(th.body, ctx, ob)
    ob.blocks.append(Block(
        th.span, "thread postcondition",
        [Exhale(ctx.lower(th.post), rule="thread postcondition", span=th.span)]))
    return ob


def _call(st: S.SCall, ctx: EncodeCtx) -> list:
    callee = next((p for p in ctx.program.procedures if p.name == st.callee), None)
    if callee is None:
        raise _enc_err(SYNTAX_ERROR, st.span, "call",
                       f"unknown procedure {st.callee!r}")
    if len(st.args) != len(callee.params):
        raise _enc_err(SYNTAX_ERROR, st.span, "call",
                       f"{st.callee!r} expects {len(callee.params)} argument(s), "
                       f"got {len(st.args)}")
    mapping: dict[str, S.Expr] = {
        p.name: a for p, a in zip(callee.params, st.args)
    }
    ret_targets: list[str] = []
    if callee.returns:
        if st.target:
            ret_targets = [st.target]
            ret_targets += [ctx.fresh("ret") for _ in callee.returns[1:]]
        else:
            ret_targets = [ctx.fresh("ret") for _ in callee.returns]
        for p, t in zip(callee.returns, ret_targets):
            mapping[p.name] = S.EVar(t)
    bound = {p.name for p in callee.params} | {p.name for p in callee.returns}
    logical = sorted(_deep_assertion_vars(callee.pre, ctx) - bound)
    fresh_logical = {v: S.EVar(ctx.fresh("log")) for v in logical}
    mapping.update(fresh_logical)
    try:
        pre_s = S.subst_assertion(callee.pre, mapping)
        post_s = S.subst_assertion(callee.post, mapping)
    except ValueError as exc:
        raise _enc_err(SYNTAX_ERROR, st.span, "call", str(exc))
    prims: list = [Exhale(
        ctx.lower(pre_s), rule=f"precondition of {st.callee}",
        bindable=frozenset(e.name for e in fresh_logical.values()), span=st.span)]
    prims += [HavocVar(t, st.span) for t in ret_targets]
    prims.append(Inhale(ctx.lower(post_s), rule=f"postcondition of {st.callee}",
                        span=st.span))
    return prims


def _free(st: S.SFree, ctx: EncodeCtx) -> list:
    cls = ctx.class_of(st.var)
    if cls not in (NA, GHOST):
        raise UnsupportedFeature("free is modelled for non-atomic and ghost "
                                 "locations only", st.span)
    full = estar([
        EAcc(st.var, FIELD_VAL, Fraction(1), span=st.span),
        EAcc(st.var, FIELD_INIT, Fraction(1), span=st.span),
    ])
    return [Exhale(full, rule="free", kind=INSUFFICIENT_PERMISSION, span=st.span)]


# ---------------------------------------------------------------------------
# Obligation assembly
# ---------------------------------------------------------------------------

def _encode_body_blocks(stmts: list, ctx: EncodeCtx, ob: Obligation) -> None:
    for st in stmts:
        ob.blocks.append(Block(st.span, _describe(st), encode_stmt(st, ctx)))


def _describe(st: S.Stmt) -> str:
    return type(st).__name__[1:].lower()


def build_obligations(checked: CheckedProgram, table: InvariantTable,
                      proc: S.Procedure, solver=None) -> list[Obligation]:
    """Encode one procedure: its own obligation plus one per forked thread."""
    ctx = EncodeCtx(checked, table, proc.name, solver)
    free = _deep_assertion_vars(proc.pre, ctx) | _deep_assertion_vars(proc.post, ctx)
    free |= _used_vars(proc.body)
    free |= {p.name for p in proc.params} | {p.name for p in proc.returns}
    setup: list = [HavocVar(v, proc.span) for v in sorted(free)]
    setup.append(Inhale(ctx.lower(proc.pre), "precondition", proc.span))
    ob = Obligation(name=proc.name, kind="procedure", span=proc.span,
                    var_classes=dict(ctx.classes))
    ob.blocks.append(Block(proc.span, "setup", setup))
    _encode_body_blocks(proc.body, ctx, ob)
    ob.blocks.append(Block(
        proc.span, "postcondition",
        [Exhale(ctx.lower(proc.post), rule="postcondition", span=proc.span)]))
    return [ob] + ctx.extra_obligations


# ---------------------------------------------------------------------------
# Primitive pretty-printing (--dump-primitives)
# ---------------------------------------------------------------------------

def pp_primitive(p, table: Optional[InvariantTable] = None, indent: int = 0) -> list[str]:
    pad = "  " * indent
    if isinstance(p, Inhale):
        return [f"{pad}inhale {L.pp_enc(p.enc)}"]
    if isinstance(p, Exhale):
        return [f"{pad}exhale {L.pp_enc(p.enc)}"]
    if isinstance(p, AssertCheck):
        return [f"{pad}assert {L.pp_enc(p.enc)}"]
    if isinstance(p, HavocVar):
        return [f"{pad}havoc {p.name}"]
    if isinstance(p, HavocLoc):
        return [f"{pad}havoc {p.loc}.{p.fld}"]
    if isinstance(p, AssignVar):
        rhs = (S.pp_expr(p.rhs[1]) if p.rhs[0] == "expr"
               else f"{p.rhs[1]}.{p.rhs[2]}")
        return [f"{pad}{p.name} := {rhs}"]
    if isinstance(p, Branch):
        c = p.cond
        if c.kind == "expr":
            cond = S.pp_expr(c.expr)
        elif c.kind == "nondet":
            cond = "*"
        elif c.kind == "notread":
            cond = f"!({S.pp_expr(c.value)} in valsRead({c.loc}, {c.idx}))"
        else:
            cond = f"{c.loc}.rel == {c.idx}"
        out = [f"{pad}branch {cond} {{"]
        for q in p.then:
            out.extend(pp_primitive(q, table, indent + 1))
        if p.els:
            out.append(f"{pad}}} else {{")
            for q in p.els:
                out.extend(pp_primitive(q, table, indent + 1))
        out.append(f"{pad}}}")
        return out
    if isinstance(p, ForEachHeldConjunct):
        guard = "== 1" if p.need_full else "> 0"
        out = [f"{pad}foreach held AcqConjunct({p.loc}, i) with perm {guard} {{"]
        indices = table.all_indices() if table else []
        for i in indices:
            out.append(f"{pad}  // i = {i}")
            for q in p.body(i):
                out.extend(pp_primitive(q, table, indent + 1))
        out.append(f"{pad}}}")
        return out
    if isinstance(p, TransferHeap):
        return [f"{pad}transfer {p.src} -> {p.dst}"]
    if isinstance(p, ExhalePreferTmp):
        return [f"{pad}exhale[tmp-first] {L.pp_enc(p.enc)}"]
    if isinstance(p, KillBranch):
        return [f"{pad}assume false // kill branch"]
    if isinstance(p, DropAllPerms):
        return [f"{pad}drop all permissions"]
    if isinstance(p, NewLoc):
        g = " (ghost)" if p.ghost else ""
        return [f"{pad}{p.var} := new(){g}"]
    if isinstance(p, RecordReadValue):
        return [f"{pad}valsRead({p.loc}, {p.idx}) += {S.pp_expr(p.value)}"]
    if isinstance(p, SpinLeakCheck):
        return [f"{pad}check spin-discarded reads of {p.loc} gain no resources"]
    raise AssertionError(p)


def dump_primitives(obligations: list[Obligation],
                    table: Optional[InvariantTable] = None) -> str:
    lines: list[str] = []
    for ob in obligations:
        lines.append(f"=== {ob.kind} {ob.name} ===")
        for blk in ob.blocks:
            lines.append(f"-- {blk.desc} @ {blk.span.line}:{blk.span.col}")
            for p in blk.prims:
                lines.extend(pp_primitive(p, table, 1))
    return "\n".join(lines) + "\n"
