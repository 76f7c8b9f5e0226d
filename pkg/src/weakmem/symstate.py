"""Symbolic verification state and the semantics of every primitive.

A state holds field chunks and predicate chunks, both keyed by heap label
and location, a path condition, and an environment binding program variables
to terms.  Permission amounts are linear expressions over wildcard tokens;
every token carries a strict positivity fact, and tokens drawn by an exhale
carry a strict upper bound by the amount held at draw time, so wildcard
remainders stay provably positive.

Exhales are two-phase, matching the check-then-remove reading of the
operation: all value and purity checks are evaluated against the state at
the start of the exhale, permission demands are summed per chunk, and only
then deducted.  Inhaling more than a full field permission is not an error
but an inconsistency: the capacity fact is assumed, so such paths become
infeasible and later obligations on them hold vacuously.

Branch exploration is depth-first with a configurable cap; a failed check
records a diagnostic and kills its path while sibling branches continue.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import Callable, Optional

from . import encoder as E
from . import syntax as S
from . import terms as T
from .diagnostics import (
    BRANCH_CAP_EXCEEDED, Diagnostic, INCOMPLETE_SOLVER,
    INSUFFICIENT_PERMISSION, SPIN_PATTERN_RESOURCE_LEAK,
)
from .frontend import ACQ, ATOMIC, GHOST, NA, RMW
from .solver import NO, Result, Solver, UNKNOWN, YES
from .speclogic import (
    EAcc, ECond, EFieldEq, EImplies, EPredAcc, EPure, EStar, HeapLabel,
    WILDCARD,
)
from .syntax import Span, NO_SPAN

FIELD_SORT = {"val": T.INT, "init": T.BOOL, "rel": T.INT, "acq": T.BOOL}


# ---------------------------------------------------------------------------
# Permission expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PermExpr:
    """const + sum of wildcard tokens, each with a rational coefficient."""

    const: Fraction = Fraction(0)
    parts: tuple = ()   # ((token, coeff), ...) sorted by token id

    @staticmethod
    def exact(k) -> "PermExpr":
        return PermExpr(Fraction(k), ())

    @staticmethod
    def token(w: T.Term) -> "PermExpr":
        return PermExpr(Fraction(0), ((w, Fraction(1)),))

    def add(self, other: "PermExpr") -> "PermExpr":
        coeffs = dict(self.parts)
        for w, c in other.parts:
            coeffs[w] = coeffs.get(w, Fraction(0)) + c
        parts = tuple(sorted(((w, c) for w, c in coeffs.items() if c != 0),
                             key=lambda wc: wc[0].tid))
        return PermExpr(self.const + other.const, parts)

    def sub(self, other: "PermExpr") -> "PermExpr":
        return self.add(other.scale(-1))

    def scale(self, k) -> "PermExpr":
        k = Fraction(k)
        return PermExpr(self.const * k, tuple((w, c * k) for w, c in self.parts))

    @property
    def is_exact(self) -> bool:
        return not self.parts

    @property
    def is_zero(self) -> bool:
        return self.const == 0 and not self.parts

    def definitely_positive(self) -> bool:
        """True if positivity follows from token positivity alone."""
        return (self.const > 0 and all(c > 0 for _, c in self.parts)) or \
               (self.const >= 0 and bool(self.parts) and all(c > 0 for _, c in self.parts))

    def term(self) -> T.Term:
        t = T.mk_frac(self.const)
        for w, c in self.parts:
            t = T.add(t, T.scale(c, w))
        return t

    def __str__(self) -> str:
        if self.is_exact:
            return str(self.const)
        bits = [str(self.const)] if self.const else []
        bits += [f"{c}*{T.pretty(w)}" if c != 1 else T.pretty(w) for w, c in self.parts]
        return " + ".join(bits)


PERM_ZERO = PermExpr.exact(0)
PERM_ONE = PermExpr.exact(1)


# ---------------------------------------------------------------------------
# Chunks and states
# ---------------------------------------------------------------------------

@dataclass
class FieldChunk:
    ref: T.Term
    fld: str
    label: HeapLabel
    perm: PermExpr
    value: T.Term


@dataclass
class PredChunk:
    ref: T.Term
    idx: int
    label: HeapLabel
    perm: PermExpr
    vals: tuple = ()    # values-read snapshot: terms, insertion-ordered


class SymState:
    """One symbolic state; cheap to clone for branching."""

    __slots__ = ("fields", "preds", "path", "env")

    def __init__(self):
        self.fields: dict[tuple, FieldChunk] = {}
        self.preds: dict[tuple, PredChunk] = {}
        self.path: list[T.Term] = []
        self.env: dict[str, T.Term] = {}

    def clone(self) -> "SymState":
        s = SymState()
        s.fields = {k: FieldChunk(c.ref, c.fld, c.label, c.perm, c.value)
                    for k, c in self.fields.items()}
        s.preds = {k: PredChunk(c.ref, c.idx, c.label, c.perm, c.vals)
                   for k, c in self.preds.items()}
        s.path = list(self.path)
        s.env = dict(self.env)
        return s

    def assume(self, fact: T.Term) -> None:
        if fact is not T.TRUE:
            self.path.append(fact)

    def field_key(self, ref: T.Term, fld: str, label: HeapLabel) -> tuple:
        return (label.value, ref.data[0], fld)

    def pred_key(self, ref: T.Term, idx: int, label: HeapLabel) -> tuple:
        return (label.value, ref.data[0], idx)

    def field_perm(self, ref: T.Term, fld: str, label: HeapLabel) -> PermExpr:
        c = self.fields.get(self.field_key(ref, fld, label))
        return c.perm if c is not None else PERM_ZERO

    def pred_perm(self, ref: T.Term, idx: int, label: HeapLabel) -> PermExpr:
        c = self.preds.get(self.pred_key(ref, idx, label))
        return c.perm if c is not None else PERM_ZERO

    def digest(self) -> str:
        bits = []
        for k in sorted(self.fields):
            c = self.fields[k]
            bits.append(f"{c.label}:{T.ref_name(c.ref)}.{c.fld}={c.perm}:{T.pretty(c.value)}")
        for k in sorted(self.preds):
            c = self.preds[k]
            vals = "{" + ",".join(T.pretty(v) for v in c.vals) + "}"
            bits.append(f"{c.label}:AcqConjunct({T.ref_name(c.ref)},{c.idx})={c.perm}:{vals}")
        return "; ".join(bits)


# ---------------------------------------------------------------------------
# Execution context
# ---------------------------------------------------------------------------

@dataclass
class ExecConfig:
    branch_cap: int = 4096
    trace: Optional[Callable] = None          # (span, text, digest) -> None
    on_boundary: Optional[Callable] = None    # (state, span, desc) -> None


class AbortObligation(Exception):
    pass


class _Fail(Exception):
    """Internal: a check failed on this path; diagnostic already recorded."""


class ExecContext:
    def __init__(self, solver: Solver, var_classes: dict[str, str],
                 config: Optional[ExecConfig] = None):
        self.solver = solver
        self.var_classes = var_classes
        self.config = config or ExecConfig()
        self.diagnostics: list[Diagnostic] = []
        self._count = itertools.count()
        self._ref_ids = itertools.count(1)
        self.branches = 0
        self.states_seen = 0

    # -- fresh symbols -------------------------------------------------------

    def fresh_int(self, hint: str) -> T.Term:
        return T.mk_var(f"{hint}!{next(self._count)}", T.INT)

    def fresh_bool(self, hint: str) -> T.Term:
        return T.mk_var(f"{hint}!{next(self._count)}", T.BOOL)

    def fresh_token(self) -> T.Term:
        return T.mk_var(f"w!{next(self._count)}", T.FRAC)

    def fresh_ref(self, name: str, ghost: bool) -> T.Term:
        return T.mk_ref(next(self._ref_ids), name, ghost)

    def fresh_for_class(self, name: str) -> T.Term:
        cls = self.var_classes.get(name)
        if cls in (NA, ACQ, RMW, ATOMIC):
            return self.fresh_ref(name, False)
        if cls == GHOST:
            return self.fresh_ref(name, True)
        return self.fresh_int(name)

    def fresh_field_value(self, fld: str) -> T.Term:
        sort = FIELD_SORT.get(fld, T.INT)
        n = next(self._count)
        return T.mk_var(f"{fld}!{n}", sort)

    # -- solver shorthands ------------------------------------------------------

    def feasible(self, state: SymState) -> bool:
        return self.solver.is_feasible(state.path) != NO

    def entailed(self, state: SymState, goal: T.Term) -> Result:
        return self.solver.assert_entailed(state.path, goal)

    # -- diagnostics ---------------------------------------------------------------

    def fail(self, state: SymState, kind: str, span: Span, rule: str,
             message: str, counter: Optional[str] = None) -> None:
        """Record a failure unless the path is infeasible, then kill the path."""
        if not self.feasible(state):
            raise _Fail()
        self.diagnostics.append(Diagnostic(kind, span, rule=rule, message=message,
                                           counter_facts=counter))
        raise _Fail()

    def fail_query(self, state: SymState, res: Result, kind: str, span: Span,
                   rule: str, message: str) -> None:
        if res.verdict == UNKNOWN:
            self.fail(state, INCOMPLETE_SOLVER, span, rule,
                      message + " (solver returned unknown)")
        self.fail(state, kind, span, rule, message, counter=res.hint)


# ---------------------------------------------------------------------------
# Expression evaluation
# ---------------------------------------------------------------------------

class EvalError(Exception):
    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


_BIN_OPS = {
    "+": T.add, "-": T.sub, "*": T.mul, "/": T.div_, "%": T.mod_,
    "&": T.bitand, "|": T.bitor, "^": T.bitxor, "<<": T.shl, ">>": T.shr,
    "==": T.eq, "!=": T.ne, "<": T.lt, "<=": T.le, ">": T.gt, ">=": T.ge,
    "&&": lambda a, b: T.and_(a, b), "||": lambda a, b: T.or_(a, b),
}


def eval_expr(state: SymState, e: S.Expr) -> T.Term:
    if isinstance(e, S.EInt):
        return T.mk_int(e.value)
    if isinstance(e, S.EBool):
        return T.mk_bool(e.value)
    if isinstance(e, S.EVar):
        t = state.env.get(e.name)
        if t is None:
            raise EvalError(f"variable {e.name!r} has no value here")
        return t
    if isinstance(e, S.EAny):
        raise EvalError("the placeholder value '_' is only allowed in points-to")
    if isinstance(e, S.EInvVal):
        raise EvalError("unsubstituted invariant value parameter")
    if isinstance(e, S.EBin):
        return _BIN_OPS[e.op](eval_expr(state, e.left), eval_expr(state, e.right))
    if isinstance(e, S.EUn):
        v = eval_expr(state, e.operand)
        return T.not_(v) if e.op == "!" else T.neg(v)
    raise AssertionError(e)


def resolve_loc(state: SymState, loc, what: str = "location") -> T.Term:
    t = state.env.get(loc) if isinstance(loc, str) else loc
    if t is None:
        raise EvalError(f"{what} {loc!r} is not bound")
    if t.sort != T.REF:
        raise EvalError(f"{what} {loc!r} does not hold a memory location")
    return t


# ---------------------------------------------------------------------------
# Inhale
# ---------------------------------------------------------------------------

def _branch_states(ctx: ExecContext, state: SymState, cond: T.Term):
    """Split on a condition; returns (then-states, else-states), pruned."""
    if cond is T.TRUE:
        return [state], []
    if cond is T.FALSE:
        return [], [state]
    ctx.branches += 1
    if ctx.branches > ctx.config.branch_cap:
        ctx.diagnostics.append(Diagnostic(
            BRANCH_CAP_EXCEEDED, NO_SPAN, rule="exploration",
            message=f"more than {ctx.config.branch_cap} branches explored"))
        raise AbortObligation()
    s_then = state.clone()
    s_then.assume(cond)
    s_else = state
    s_else.assume(T.not_(cond))
    thens = [s_then] if ctx.feasible(s_then) else []
    elses = [s_else] if ctx.feasible(s_else) else []
    return thens, elses


def inhale(ctx: ExecContext, state: SymState, enc, span: Span = NO_SPAN) -> list[SymState]:
    if isinstance(enc, EPure):
        state.assume(eval_expr(state, enc.expr))
        return [state]
    if isinstance(enc, EStar):
        states = [state]
        for part in enc.parts:
            states = [s2 for s in states for s2 in inhale(ctx, s, part, span)]
        return states
    if isinstance(enc, EImplies):
        cond = eval_expr(state, enc.cond)
        thens, elses = _branch_states(ctx, state, cond)
        out = []
        for s in thens:
            out.extend(inhale(ctx, s, enc.body, span))
        out.extend(elses)
        return out
    if isinstance(enc, ECond):
        cond = eval_expr(state, enc.cond)
        thens, elses = _branch_states(ctx, state, cond)
        out = []
        for s in thens:
            out.extend(inhale(ctx, s, enc.then, span))
        for s in elses:
            out.extend(inhale(ctx, s, enc.els, span))
        return out
    if isinstance(enc, EAcc):
        ref = resolve_loc(state, enc.loc)
        amount = _inhale_amount(ctx, state, enc.perm)
        key = state.field_key(ref, enc.fld, enc.label)
        chunk = state.fields.get(key)
        if chunk is None:
            chunk = FieldChunk(ref, enc.fld, enc.label, amount,
                               ctx.fresh_field_value(enc.fld))
            state.fields[key] = chunk
        else:
            chunk.perm = chunk.perm.add(amount)
        # field permissions cannot exceed 1: assumed, so overfull paths die
        state.assume(T.le(chunk.perm.term(), T.ONE))
        return [state]
    if isinstance(enc, EFieldEq):
        ref = resolve_loc(state, enc.loc)
        chunk = state.fields.get(state.field_key(ref, enc.fld, enc.label))
        if chunk is None:
            raise EvalError(
                f"no permission to {T.ref_name(ref)}.{enc.fld} while assuming its value")
        if not isinstance(enc.value, S.EAny):
            state.assume(T.eq(chunk.value, eval_expr(state, enc.value)))
        return [state]
    if isinstance(enc, EPredAcc):
        ref = resolve_loc(state, enc.loc)
        amount = _inhale_amount(ctx, state, enc.perm)
        key = state.pred_key(ref, enc.idx, enc.label)
        chunk = state.preds.get(key)
        if chunk is None:
            # a fresh conjunct instance starts with an empty snapshot
            state.preds[key] = PredChunk(ref, enc.idx, enc.label, amount, ())
        else:
            # re-inhaling a held conjunct must not reset the values read
            chunk.perm = chunk.perm.add(amount)
        return [state]
    raise AssertionError(enc)


def _inhale_amount(ctx: ExecContext, state: SymState, perm) -> PermExpr:
    if perm == WILDCARD:
        w = ctx.fresh_token()
        state.assume(T.lt(T.ZERO, w))
        return PermExpr.token(w)
    return PermExpr.exact(perm)


# ---------------------------------------------------------------------------
# Exhale (two-phase)
# ---------------------------------------------------------------------------

@dataclass
class _Demand:
    exact: Fraction = Fraction(0)
    wildcards: int = 0
    name: str = ""


@dataclass
class _Case:
    state: SymState
    checks: list = dc_field(default_factory=list)       # ("pure", expr, span) | ("value", key, name, expr, span)
    field_demands: dict = dc_field(default_factory=dict)
    pred_demands: dict = dc_field(default_factory=dict)
    vals_checks: list = dc_field(default_factory=list)  # (predkey, name, span)

    def split(self, state: SymState) -> "_Case":
        return _Case(state, list(self.checks),
                     {k: _Demand(d.exact, d.wildcards, d.name)
                      for k, d in self.field_demands.items()},
                     {k: _Demand(d.exact, d.wildcards, d.name)
                      for k, d in self.pred_demands.items()},
                     list(self.vals_checks))


def _collect_cases(ctx: ExecContext, case: _Case, enc, span: Span) -> list[_Case]:
    if isinstance(enc, EPure):
        case.checks.append(("pure", enc.expr, enc.span or span))
        return [case]
    if isinstance(enc, EStar):
        cases = [case]
        for part in enc.parts:
            cases = [c2 for c in cases for c2 in _collect_cases(ctx, c, part, span)]
        return cases
    if isinstance(enc, EImplies):
        cond = eval_expr(case.state, enc.cond)
        thens, elses = _branch_states(ctx, case.state, cond)
        out = []
        for s in thens:
            out.extend(_collect_cases(ctx, case.split(s), enc.body, span))
        for s in elses:
            out.append(case.split(s))
        return out
    if isinstance(enc, ECond):
        cond = eval_expr(case.state, enc.cond)
        thens, elses = _branch_states(ctx, case.state, cond)
        out = []
        for s in thens:
            out.extend(_collect_cases(ctx, case.split(s), enc.then, span))
        for s in elses:
            out.extend(_collect_cases(ctx, case.split(s), enc.els, span))
        return out
    if isinstance(enc, EAcc):
        ref = resolve_loc(case.state, enc.loc)
        key = case.state.field_key(ref, enc.fld, enc.label)
        d = case.field_demands.setdefault(
            key, _Demand(name=_atom_name(ref, enc.fld, enc.label)))
        if enc.perm == WILDCARD:
            d.wildcards += 1
        else:
            d.exact += enc.perm
        return [case]
    if isinstance(enc, EFieldEq):
        ref = resolve_loc(case.state, enc.loc)
        key = case.state.field_key(ref, enc.fld, enc.label)
        case.checks.append(("value", key, _atom_name(ref, enc.fld, enc.label),
                            enc.value, enc.span or span))
        return [case]
    if isinstance(enc, EPredAcc):
        ref = resolve_loc(case.state, enc.loc)
        key = case.state.pred_key(ref, enc.idx, enc.label)
        d = case.pred_demands.setdefault(
            key, _Demand(name=_pred_name(ref, enc.idx, enc.label)))
        if enc.perm == WILDCARD:
            d.wildcards += 1
        else:
            d.exact += enc.perm
        if enc.vals_empty:
            case.vals_checks.append((key, _pred_name(ref, enc.idx, enc.label),
                                     enc.span or span))
        return [case]
    raise AssertionError(enc)


def _atom_name(ref: T.Term, fld: str, label: HeapLabel) -> str:
    tag = "" if label == HeapLabel.REAL else f"@{label}"
    return f"{ref.data[1]}.{fld}{tag}"


def _pred_name(ref: T.Term, idx: int, label: HeapLabel) -> str:
    tag = "" if label == HeapLabel.REAL else f"@{label}"
    return f"AcqConjunct({ref.data[1]}, {idx}){tag}"


def _run_checks(ctx: ExecContext, case: _Case, prim) -> None:
    state = case.state
    for check in case.checks:
        if check[0] == "pure":
            _, expr, _span = check
            fact = eval_expr(state, expr)
            if fact is T.TRUE:
                continue
            res = ctx.entailed(state, fact)
            if res.verdict != YES:
                ctx.fail_query(state, res, prim.kind, prim.span, prim.rule,
                               f"cannot establish {S.pp_expr(expr)}")
        else:
            _, key, name, expr, _span = check
            chunk = state.fields.get(key)
            if chunk is None:
                ctx.fail(state, prim.kind, prim.span, prim.rule,
                         f"no permission to {name}")
            if isinstance(expr, S.EAny):
                continue
            if (isinstance(expr, S.EVar) and expr.name not in state.env
                    and expr.name in getattr(prim, "bindable", ())):
                state.env[expr.name] = chunk.value   # unify the logical variable
                continue
            want = eval_expr(state, expr)
            res = ctx.entailed(state, T.eq(chunk.value, want))
            if res.verdict != YES:
                ctx.fail_query(
                    state, res, prim.kind, prim.span, prim.rule,
                    f"value of {name} is not known to be {S.pp_expr(expr)}")
    for key, name, _span in case.vals_checks:
        chunk = state.preds.get(key)
        if chunk is not None and chunk.vals:
            vals = ", ".join(T.pretty(v) for v in chunk.vals)
            ctx.fail(state, prim.vals_kind if hasattr(prim, "vals_kind") else prim.kind,
                     prim.span, prim.rule,
                     f"values {{{vals}}} were already read through {name}")


def _check_demand(ctx: ExecContext, state: SymState, held: PermExpr,
                  demand: _Demand, prim, span: Span) -> None:
    name = demand.name
    if demand.exact > 0:
        if held.is_exact:
            if held.const < demand.exact:
                ctx.fail(state, prim.kind, span, prim.rule,
                         f"insufficient permission to {name}: need {demand.exact}, "
                         f"hold {held.const}")
        else:
            res = ctx.entailed(state, T.ge(held.term(), T.mk_frac(demand.exact)))
            if res.verdict != YES:
                ctx.fail_query(state, res, prim.kind, span, prim.rule,
                               f"insufficient permission to {name}: need {demand.exact}")
    if demand.wildcards > 0:
        floor = T.mk_frac(demand.exact)
        if held.is_zero:
            ctx.fail(state, prim.kind, span, prim.rule,
                     f"no permission to {name}")
        if held.is_exact and held.const > demand.exact:
            return
        res = ctx.entailed(state, T.lt(floor, held.term()))
        if res.verdict != YES:
            ctx.fail_query(state, res, prim.kind, span, prim.rule,
                           f"no spare permission to {name} for a wildcard")


def _deduct(ctx: ExecContext, state: SymState, chunk, demand: _Demand) -> PermExpr:
    """Remove the demanded amount; returns the remainder."""
    taken = PermExpr.exact(demand.exact)
    if demand.wildcards:
        tokens = []
        for _ in range(demand.wildcards):
            w = ctx.fresh_token()
            state.assume(T.lt(T.ZERO, w))
            tokens.append(w)
            taken = taken.add(PermExpr.token(w))
        # all wildcards together stay strictly below the amount held
        state.assume(T.lt(taken.term(), chunk.perm.term()))
    return chunk.perm.sub(taken)


def _apply_demands(ctx: ExecContext, case: _Case, prim, span: Span,
                   deduct: bool) -> None:
    state = case.state
    for key in sorted(case.field_demands):
        demand = case.field_demands[key]
        chunk = state.fields.get(key)
        held = chunk.perm if chunk is not None else PERM_ZERO
        if chunk is None and (demand.exact > 0 or demand.wildcards > 0):
            ctx.fail(state, prim.kind, span, prim.rule,
                     f"no permission to {demand.name}")
        _check_demand(ctx, state, held, demand, prim, span)
        if deduct and chunk is not None:
            rest = _deduct(ctx, state, chunk, demand)
            if rest.is_zero:
                del state.fields[key]   # value is havoced with the chunk
            else:
                chunk.perm = rest
    for key in sorted(case.pred_demands):
        demand = case.pred_demands[key]
        chunk = state.preds.get(key)
        held = chunk.perm if chunk is not None else PERM_ZERO
        if chunk is None and (demand.exact > 0 or demand.wildcards > 0):
            ctx.fail(state, prim.kind, span, prim.rule,
                     f"no {demand.name} instance held")
        _check_demand(ctx, state, held, demand, prim, span)
        if deduct and chunk is not None:
            rest = _deduct(ctx, state, chunk, demand)
            if rest.is_zero:
                del state.preds[key]
            else:
                chunk.perm = rest


def exhale(ctx: ExecContext, state: SymState, prim, deduct: bool = True) -> list[SymState]:
    """Execute an exhale (or a check-only assert when deduct is false)."""
    out: list[SymState] = []
    for case in _collect_cases(ctx, _Case(state), prim.enc, prim.span):
        try:
            _run_checks(ctx, case, prim)
            _apply_demands(ctx, case, prim, prim.span, deduct)
        except _Fail:
            continue
        out.append(case.state)
    return out


# ---------------------------------------------------------------------------
# Heap transfer and the CAS tmp-preferring exhale
# ---------------------------------------------------------------------------

def transfer_heap(ctx: ExecContext, state: SymState, src: HeapLabel,
                  dst: HeapLabel) -> SymState:
    """Move every chunk labeled src to dst, merging amounts and values."""
    for key in sorted(k for k in state.fields if k[0] == src.value):
        chunk = state.fields.pop(key)
        dkey = state.field_key(chunk.ref, chunk.fld, dst)
        dst_chunk = state.fields.get(dkey)
        if dst_chunk is None:
            chunk.label = dst
            state.fields[dkey] = chunk
        else:
            state.assume(T.eq(dst_chunk.value, chunk.value))
            dst_chunk.perm = dst_chunk.perm.add(chunk.perm)
            state.assume(T.le(dst_chunk.perm.term(), T.ONE))
    for key in sorted(k for k in state.preds if k[0] == src.value):
        chunk = state.preds.pop(key)
        dkey = state.pred_key(chunk.ref, chunk.idx, dst)
        dst_chunk = state.preds.get(dkey)
        if dst_chunk is None:
            chunk.label = dst
            state.preds[dkey] = chunk
        else:
            dst_chunk.perm = dst_chunk.perm.add(chunk.perm)
            merged = list(dst_chunk.vals)
            merged += [v for v in chunk.vals if v not in dst_chunk.vals]
            dst_chunk.vals = tuple(merged)
    return state


def exhale_prefer_tmp(ctx: ExecContext, state: SymState, prim) -> list[SymState]:
    """Exhale taking each permission first from the tmp heap.

    Atom labels name the fallback heap (real or up).  Value constraints are
    checked against whichever heap a portion is taken from; if a demand is
    split across both, the two values are equated.
    """
    out: list[SymState] = []
    for case in _collect_cases(ctx, _Case(state), prim.enc, prim.span):
        try:
            _apply_prefer_tmp(ctx, case, prim)
        except _Fail:
            continue
        out.append(case.state)
    return out


def _split_amounts(ctx: ExecContext, state: SymState, tmp_held: PermExpr,
                   need: Fraction, name: str, prim) -> tuple[Fraction, Fraction]:
    """How much of an exact demand comes from tmp vs. the fallback heap."""
    if tmp_held.is_exact:
        take = min(tmp_held.const, need)
        return take, need - take
    # symbolic tmp holdings (wildcard RMW conjunct bodies): ask the solver
    res = ctx.entailed(state, T.ge(tmp_held.term(), T.mk_frac(need)))
    if res.verdict == YES:
        return need, Fraction(0)
    ctx.fail(state, INCOMPLETE_SOLVER, prim.span, prim.rule,
             f"cannot split the demand on {name} between the tmp heap and its "
             "fallback")


def _take_split(ctx: ExecContext, state: SymState, store: dict, key: tuple,
                tmp_key: tuple, demand: _Demand, prim) -> tuple:
    """Split one demand between the tmp chunk and its fallback; deduct both.

    Returns (took_tmp, took_fallback, tmp_chunk, fb_chunk).
    """
    tmp_chunk = store.get(tmp_key)
    fb_chunk = store.get(key)
    tmp_held = tmp_chunk.perm if tmp_chunk is not None else PERM_ZERO
    from_tmp, from_fb = _split_amounts(ctx, state, tmp_held, demand.exact,
                                       demand.name, prim)
    wc_from_tmp = demand.wildcards if tmp_held.definitely_positive() else 0
    wc_from_fb = demand.wildcards - wc_from_tmp
    if from_fb > 0 or wc_from_fb > 0:
        if fb_chunk is None:
            ctx.fail(state, prim.kind, prim.span, prim.rule,
                     f"insufficient permission to {demand.name}: tmp heap holds "
                     f"{tmp_held} and the fallback heap holds nothing")
        _check_demand(ctx, state, fb_chunk.perm,
                      _Demand(from_fb, wc_from_fb, demand.name), prim, prim.span)
    if tmp_chunk is not None and (from_tmp > 0 or wc_from_tmp > 0):
        rest = _deduct(ctx, state, tmp_chunk, _Demand(from_tmp, wc_from_tmp))
        if rest.is_zero:
            del store[tmp_key]
        else:
            tmp_chunk.perm = rest
    if fb_chunk is not None and (from_fb > 0 or wc_from_fb > 0):
        rest = _deduct(ctx, state, fb_chunk, _Demand(from_fb, wc_from_fb))
        if rest.is_zero:
            del store[key]
        else:
            fb_chunk.perm = rest
    return (from_tmp > 0 or wc_from_tmp > 0, from_fb > 0 or wc_from_fb > 0,
            tmp_chunk, fb_chunk)


def _apply_prefer_tmp(ctx: ExecContext, case: _Case, prim) -> None:
    state = case.state
    # group value constraints by chunk; pure checks run as usual
    value_checks: dict[tuple, list] = {}
    plain_checks = []
    for check in case.checks:
        if check[0] == "value":
            value_checks.setdefault(check[1], []).append(check)
        else:
            plain_checks.append(check)
    _run_checks(ctx, _Case(state, plain_checks), prim)

    for key in sorted(set(case.field_demands) | set(value_checks)):
        demand = case.field_demands.get(key)
        if demand is None:
            demand = _Demand(name=value_checks[key][0][2])
        tmp_key = (HeapLabel.TMP.value, key[1], key[2])
        # value constraints are read from the heap each portion is taken from
        tmp_chunk_before = state.fields.get(tmp_key)
        fb_chunk_before = state.fields.get(key)
        took_tmp, took_fb, tmp_chunk, fb_chunk = _take_split(
            ctx, state, state.fields, key, tmp_key, demand, prim)
        for check in value_checks.get(key, []):
            _, _, name, expr, _span = check
            if isinstance(expr, S.EAny):
                continue
            want = eval_expr(state, expr)
            for used, chunk in ((took_tmp, tmp_chunk_before),
                                (took_fb, fb_chunk_before)):
                if used and chunk is not None:
                    res = ctx.entailed(state, T.eq(chunk.value, want))
                    if res.verdict != YES:
                        ctx.fail_query(
                            state, res, prim.kind, prim.span, prim.rule,
                            f"value of {name} is not known to be {S.pp_expr(expr)}")
        if took_tmp and took_fb:
            state.assume(T.eq(tmp_chunk_before.value, fb_chunk_before.value))

    for key in sorted(case.pred_demands):
        demand = case.pred_demands[key]
        tmp_key = (HeapLabel.TMP.value, key[1], key[2])
        _take_split(ctx, state, state.preds, key, tmp_key, demand, prim)

    for key, name, _span in case.vals_checks:
        chunk = state.preds.get(key)
        if chunk is not None and chunk.vals:
            ctx.fail(state, prim.kind, prim.span, prim.rule,
                     f"values were already read through {name}")


# ---------------------------------------------------------------------------
# Primitive dispatch
# ---------------------------------------------------------------------------

def _held_conjuncts(ctx: ExecContext, state: SymState, ref: T.Term,
                    need_full: bool) -> list[int]:
    held = []
    for key in sorted(k for k in state.preds if k[0] == HeapLabel.REAL.value
                      and k[1] == ref.data[0]):
        chunk = state.preds[key]
        if need_full:
            if chunk.perm.is_exact and chunk.perm.const >= 1:
                held.append(chunk.idx)
            elif not chunk.perm.is_exact:
                res = ctx.entailed(state, T.ge(chunk.perm.term(), T.ONE))
                if res.verdict == YES:
                    held.append(chunk.idx)
        else:
            if chunk.perm.definitely_positive():
                held.append(chunk.idx)
            elif ctx.entailed(state, T.lt(T.ZERO, chunk.perm.term())).verdict == YES:
                held.append(chunk.idx)
    return held


def _branch_cond_term(ctx: ExecContext, state: SymState, cond: E.BranchCond):
    if cond.kind == "expr":
        return eval_expr(state, cond.expr)
    if cond.kind == "nondet":
        return None
    if cond.kind == "notread":
        ref = resolve_loc(state, cond.loc)
        chunk = state.preds.get(state.pred_key(ref, cond.idx, HeapLabel.REAL))
        vals = chunk.vals if chunk is not None else ()
        x = eval_expr(state, cond.value)
        return T.not_(T.in_set(x, T.set_lit(vals)))
    if cond.kind == "releq":
        ref = resolve_loc(state, cond.loc)
        chunk = state.fields.get(state.field_key(ref, "rel", HeapLabel.REAL))
        if chunk is None:
            return T.FALSE
        return T.eq(chunk.value, T.mk_int(cond.idx))
    raise AssertionError(cond)


def run_prim(ctx: ExecContext, state: SymState, prim) -> list[SymState]:
    ctx.states_seen += 1
    if ctx.config.trace is not None:
        ctx.config.trace(getattr(prim, "span", NO_SPAN),
                         E.pp_primitive(prim)[0].strip(), state.digest())
    try:
        if isinstance(prim, E.Inhale):
            return inhale(ctx, state, prim.enc, prim.span)
        if isinstance(prim, E.Exhale):
            return exhale(ctx, state, prim, deduct=True)
        if isinstance(prim, E.AssertCheck):
            return exhale(ctx, state, prim, deduct=False)
        if isinstance(prim, E.HavocVar):
            state.env[prim.name] = ctx.fresh_for_class(prim.name)
            return [state]
        if isinstance(prim, E.HavocLoc):
            ref = resolve_loc(state, prim.loc)
            chunk = state.fields.get(state.field_key(ref, prim.fld, HeapLabel.REAL))
            if chunk is not None:
                chunk.value = ctx.fresh_field_value(prim.fld)
            return [state]
        if isinstance(prim, E.AssignVar):
            if prim.rhs[0] == "expr":
                state.env[prim.name] = eval_expr(state, prim.rhs[1])
            else:
                _, loc, fld = prim.rhs
                ref = resolve_loc(state, loc)
                chunk = state.fields.get(state.field_key(ref, fld, HeapLabel.REAL))
                if chunk is None:
                    ctx.fail(state, INSUFFICIENT_PERMISSION, prim.span, "read",
                             f"no permission to read {T.ref_name(ref)}.{fld}")
                state.env[prim.name] = chunk.value
            return [state]
        if isinstance(prim, E.Branch):
            cond = _branch_cond_term(ctx, state, prim.cond)
            if cond is None:
                ctx.branches += 1
                if ctx.branches > ctx.config.branch_cap:
                    ctx.diagnostics.append(Diagnostic(
                        BRANCH_CAP_EXCEEDED, prim.span, rule="exploration",
                        message=f"more than {ctx.config.branch_cap} branches explored"))
                    raise AbortObligation()
                thens, elses = [state.clone()], [state]
            else:
                thens, elses = _branch_states(ctx, state, cond)
            out = []
            for s in thens:
                out.extend(run_seq(ctx, s, prim.then))
            for s in elses:
                out.extend(run_seq(ctx, s, prim.els))
            return out
        if isinstance(prim, E.ForEachHeldConjunct):
            ref = resolve_loc(state, prim.loc)
            states = [state]
            for idx in _held_conjuncts(ctx, state, ref, prim.need_full):
                body = prim.body(idx)
                states = [s2 for s in states for s2 in run_seq(ctx, s, body)]
            return states
        if isinstance(prim, E.TransferHeap):
            return [transfer_heap(ctx, state, prim.src, prim.dst)]
        if isinstance(prim, E.ExhalePreferTmp):
            return exhale_prefer_tmp(ctx, state, prim)
        if isinstance(prim, E.KillBranch):
            return []
        if isinstance(prim, E.DropAllPerms):
            state.fields = {}
            state.preds = {}
            return [state]
        if isinstance(prim, E.NewLoc):
            state.env[prim.var] = ctx.fresh_ref(prim.var, prim.ghost)
            return [state]
        if isinstance(prim, E.RecordReadValue):
            ref = resolve_loc(state, prim.loc)
            chunk = state.preds.get(state.pred_key(ref, prim.idx, HeapLabel.REAL))
            if chunk is not None:
                v = eval_expr(state, prim.value)
                if v not in chunk.vals:
                    chunk.vals = chunk.vals + (v,)
            return [state]
        if isinstance(prim, E.SpinLeakCheck):
            _spin_leak_check(ctx, state, prim)
            return [state]
    except _Fail:
        return []
    except EvalError as exc:
        try:
            ctx.fail(state, INSUFFICIENT_PERMISSION, getattr(prim, "span", NO_SPAN),
                     "well-definedness", exc.message)
        except _Fail:
            return []
    raise AssertionError(prim)


def _spin_leak_check(ctx: ExecContext, state: SymState, prim) -> None:
    ref = resolve_loc(state, prim.loc)
    held = _held_conjuncts(ctx, state, ref, prim.need_full)
    if not held:
        return
    probe_state = state.clone()
    probe_state.env[prim.probe] = ctx.fresh_int(prim.probe)
    cont = eval_expr(probe_state, prim.cont)

    def walk(enc, guards: list) -> None:
        if isinstance(enc, (EAcc, EPredAcc)):
            # a ghost-free resource would be gained and then discarded
            query = probe_state.path + [cont] + guards
            if ctx.solver.is_feasible(query) != NO:
                ctx.fail(state, SPIN_PATTERN_RESOURCE_LEAK, prim.span, "spin loop",
                         "a value the spin loop discards would carry resources; "
                         "annotate the loop with an invariant instead")
        elif isinstance(enc, EStar):
            for p in enc.parts:
                walk(p, guards)
        elif isinstance(enc, EImplies):
            walk(enc.body, guards + [eval_expr(probe_state, enc.cond)])
        elif isinstance(enc, ECond):
            c = eval_expr(probe_state, enc.cond)
            walk(enc.then, guards + [c])
            walk(enc.els, guards + [T.not_(c)])

    for idx in held:
        walk(prim.lowered[idx], [])


def run_seq(ctx: ExecContext, state: SymState, prims: list) -> list[SymState]:
    states = [state]
    for prim in prims:
        states = [s2 for s in states for s2 in run_prim(ctx, s, prim)]
        if not states:
            break
    return states


# ---------------------------------------------------------------------------
# Obligation execution
# ---------------------------------------------------------------------------

@dataclass
class ObligationResult:
    name: str
    kind: str
    diagnostics: list
    final_states: list
    states_seen: int = 0

    @property
    def verified(self) -> bool:
        return not self.diagnostics


def run_obligation(ob: E.Obligation, solver: Solver,
                   config: Optional[ExecConfig] = None) -> ObligationResult:
    ctx = ExecContext(solver, ob.var_classes, config)
    states = [SymState()]
    try:
        for blk in ob.blocks:
            if ctx.config.on_boundary is not None:
                for s in states:
                    ctx.config.on_boundary(s, blk.span, blk.desc)
            next_states: list[SymState] = []
            for s in states:
                next_states.extend(run_seq(ctx, s, blk.prims))
            states = next_states
            if not states:
                break
        if ctx.config.on_boundary is not None:
            for s in states:
                ctx.config.on_boundary(s, ob.span, "final")
    except AbortObligation:
        states = []
    return ObligationResult(ob.name, ob.kind, ctx.diagnostics, states,
                            ctx.states_seen)
