"""Lexer, parser and well-formedness checks for the input language.

The concrete syntax is keyword-based, one statement per line:

    invariant Q1(V) = V != 0 ==> a |-> 42;

    proc main()
      requires { true }
      ensures  { a |-> 43 }
    {
      alloc_na(a);
      alloc_acq(l, Q1);
      [l]_rel := 0;
      ...
    }

Parsing is total: syntax problems are reported as diagnostics with source
positions and the parser resynchronises at the next statement.  ``mode_check``
classifies every variable as a non-atomic location, an atomic location
(acquire-read or RMW flavour), a ghost location or a plain value, and rejects
programs that mix classifications for one variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import syntax as S
from .diagnostics import (
    ATOMIC_ACCESS_TO_NON_ATOMIC,
    CAS_ON_ACQ_LOCATION,
    DUPLICATE_NAME,
    Diagnostic,
    MIXED_MODE_ACCESS,
    SYNTAX_ERROR,
)
from .syntax import Span

WRITE_MODES = ("na", "rel", "rlx", "rel_acq")
READ_MODES = ("na", "acq", "rlx", "rel_acq")
CAS_MODES = ("acq", "rel", "rel_acq", "rlx")

# variable classifications
NA = "na"
ACQ = "acq"
RMW = "rmw"
GHOST = "ghost"
ATOMIC = "atomic"   # atomic location used only via release writes / Rel / Init
VALUE = "value"     # plain integer variable
UNKNOWN = "unknown"

LOCATION_CLASSES = (NA, ACQ, RMW, GHOST, ATOMIC)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_PUNCT = [
    "==>", "|->", ":=", "==", "!=", "<=", ">=", "<<", ">>", "&&", "||",
    "(", ")", "{", "}", "[", "]", ",", ";", "@", "?", ":", "+", "-", "*",
    "/", "%", "&", "|", "^", "!", "<", ">", "=", "_",
]


@dataclass
class Token:
    kind: str   # name | int | punct | eof
    text: str
    line: int
    col: int

    @property
    def span(self) -> Span:
        return Span(self.line, self.col, self.line, self.col + len(self.text))


def tokenize(source: str) -> tuple[list[Token], list[Diagnostic]]:
    toks: list[Token] = []
    diags: list[Diagnostic] = []
    line, col = 1, 1
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if source.startswith("//", i):
            while i < n and source[i] != "\n":
                i += 1
            continue
        if c.isalpha() or (c == "_" and i + 1 < n and (source[i + 1].isalnum() or source[i + 1] == "_")):
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            toks.append(Token("name", source[i:j], line, col))
            col += j - i
            i = j
            continue
        if c.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            toks.append(Token("int", source[i:j], line, col))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if source.startswith(p, i):
                toks.append(Token("punct", p, line, col))
                col += len(p)
                i += len(p)
                break
        else:
            diags.append(Diagnostic(SYNTAX_ERROR, Span(line, col, line, col + 1),
                                    message=f"unexpected character {c!r}"))
            i += 1
            col += 1
    toks.append(Token("eof", "", line, col))
    return toks, diags


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _ParseError(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag


@dataclass
class _Define:
    params: list[str]
    body: S.Assertion


class Parser:
    def __init__(self, source: str):
        self.toks, self.diags = tokenize(source)
        self.pos = 0
        self.defines: dict[str, _Define] = {}
        self.inv_param: Optional[str] = None  # active invariant-declaration parameter

    # -- token helpers ------------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def at(self, text: str) -> bool:
        return self.peek().text == text and self.peek().kind in ("punct", "name")

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            return self.next()
        return None

    def expect(self, text: str) -> Token:
        if self.at(text):
            return self.next()
        t = self.peek()
        found = repr(t.text) if t.text else "end of input"
        raise _ParseError(Diagnostic(
            SYNTAX_ERROR, t.span,
            message=f"expected {text!r}, found {found}"))

    def expect_name(self) -> Token:
        t = self.peek()
        if t.kind != "name":
            found = repr(t.text) if t.text else "end of input"
            raise _ParseError(Diagnostic(
                SYNTAX_ERROR, t.span,
                message=f"expected a name, found {found}"))
        return self.next()

    def _error(self, msg: str, span: Optional[Span] = None) -> _ParseError:
        return _ParseError(Diagnostic(SYNTAX_ERROR, span or self.peek().span, message=msg))

    def _sync_stmt(self) -> None:
        depth = 0
        while True:
            t = self.peek()
            if t.kind == "eof":
                return
            if t.text == ";" and depth == 0:
                self.next()
                return
            if t.text == "{":
                depth += 1
            elif t.text == "}":
                if depth == 0:
                    return
                depth -= 1
            self.next()

    # -- program ------------------------------------------------------------

    def parse_program(self) -> S.Program:
        prog = S.Program()
        while self.peek().kind != "eof":
            try:
                if self.at("invariant"):
                    self._parse_invariant_decl(prog)
                elif self.at("define"):
                    self._parse_define()
                elif self.at("proc"):
                    prog.procedures.append(self._parse_proc())
                else:
                    t = self.peek()
                    raise self._error(
                        f"expected 'invariant', 'define' or 'proc', found {t.text!r}")
            except _ParseError as e:
                self.diags.append(e.diag)
                self._sync_stmt()
                if self.at("}"):
                    self.next()
        self._check_duplicates(prog)
        if any(p.name == "main" for p in prog.procedures):
            prog.entry = "main"
        return prog

    def _check_duplicates(self, prog: S.Program) -> None:
        seen: set[str] = set()
        for p in prog.procedures:
            if p.name in seen:
                self.diags.append(Diagnostic(
                    DUPLICATE_NAME, p.span, message=f"duplicate procedure {p.name!r}"))
            seen.add(p.name)
        seen_inv: set[str] = set()
        for d in prog.invariants:
            if d.name in seen_inv:
                self.diags.append(Diagnostic(
                    DUPLICATE_NAME, d.span, message=f"duplicate invariant {d.name!r}"))
            seen_inv.add(d.name)

    def _parse_invariant_decl(self, prog: S.Program) -> None:
        start = self.expect("invariant")
        name = self.expect_name().text
        self.expect("(")
        param = self.expect_name().text
        self.expect(")")
        self.expect("=")
        self.inv_param = param
        try:
            body = self.parse_assertion()
        finally:
            self.inv_param = None
        self.expect(";")
        prog.invariants.append(S.InvariantDecl(
            name=name, param=param, body=body, span=start.span))

    def _parse_define(self) -> None:
        self.expect("define")
        name = self.expect_name().text
        params: list[str] = []
        if self.accept("("):
            while not self.at(")"):
                params.append(self.expect_name().text)
                if not self.accept(","):
                    break
            self.expect(")")
        self.expect("=")
        body = self.parse_assertion()
        self.expect(";")
        self.defines[name] = _Define(params, body)

    def _parse_proc(self) -> S.Procedure:
        start = self.expect("proc")
        name = self.expect_name().text
        self.expect("(")
        params = self._parse_params()
        self.expect(")")
        returns: list[S.Param] = []
        if self.accept("returns"):
            self.expect("(")
            returns = self._parse_params()
            self.expect(")")
        pre, post, has_spec = self._parse_spec()
        body = self._parse_block()
        return S.Procedure(name=name, params=params, returns=returns,
                           pre=pre, post=post, body=body,
                           has_spec=has_spec, span=start.span)

    def _parse_params(self) -> list[S.Param]:
        out: list[S.Param] = []
        while self.peek().kind == "name":
            ghost = bool(self.accept("ghost"))
            out.append(S.Param(self.expect_name().text, ghost))
            if not self.accept(","):
                break
        return out

    def _parse_spec(self) -> tuple[S.Assertion, S.Assertion, bool]:
        true_a = S.APure(expr=S.TRUE_E)
        if not self.at("requires"):
            return true_a, true_a, False
        self.expect("requires")
        self.expect("{")
        pre = self.parse_assertion()
        self.expect("}")
        self.expect("ensures")
        self.expect("{")
        post = self.parse_assertion()
        self.expect("}")
        return pre, post, True

    def _parse_block(self) -> list[S.Stmt]:
        self.expect("{")
        stmts: list[S.Stmt] = []
        while not self.at("}") and self.peek().kind != "eof":
            try:
                stmts.append(self.parse_stmt())
            except _ParseError as e:
                self.diags.append(e.diag)
                self._sync_stmt()
        self.expect("}")
        return stmts

    # -- statements -----------------------------------------------------------

    def parse_stmt(self) -> S.Stmt:
        t = self.peek()
        text = t.text
        if text == "alloc_na":
            self.next()
            self.expect("(")
            var = self.expect_name().text
            self.expect(")")
            end = self.expect(";")
            return S.SAllocNa(var=var, span=self._span(t, end))
        if text in ("alloc_acq", "alloc_rmw"):
            self.next()
            self.expect("(")
            var = self.expect_name().text
            self.expect(",")
            inv = self._parse_invref()
            self.expect(")")
            end = self.expect(";")
            kind = "acq" if text == "alloc_acq" else "rmw"
            return S.SAllocAtomic(var=var, kind=kind, inv=inv, span=self._span(t, end))
        if text == "ghost_alloc":
            self.next()
            self.expect("(")
            var = self.expect_name().text
            self.expect(")")
            end = self.expect(";")
            return S.SGhostAlloc(var=var, span=self._span(t, end))
        if text == "fence_acq":
            self.next()
            end = self.expect(";")
            return S.SFenceAcq(span=self._span(t, end))
        if text == "fence_rel":
            self.next()
            self.expect("(")
            a = self.parse_assertion()
            self.expect(")")
            end = self.expect(";")
            return S.SFenceRel(assertion=a, span=self._span(t, end))
        if text == "rewrite":
            return self._parse_rewrite()
        if text == "while":
            return self._parse_while()
        if text == "if":
            return self._parse_if()
        if text == "par":
            return self._parse_par()
        if text == "call":
            self.next()
            callee = self.expect_name().text
            args = self._parse_args()
            end = self.expect(";")
            return S.SCall(target=None, callee=callee, args=args, span=self._span(t, end))
        if text == "free":
            self.next()
            self.expect("(")
            var = self.expect_name().text
            self.expect(")")
            end = self.expect(";")
            return S.SFree(var=var, span=self._span(t, end))
        if text == "skip":
            self.next()
            end = self.expect(";")
            return S.SSkip(span=self._span(t, end))
        if text == "[":
            return self._parse_write()
        if t.kind == "name":
            return self._parse_assign_like()
        raise self._error(f"expected a statement, found {text!r}")

    def _span(self, start: Token, end: Token) -> Span:
        return Span(start.line, start.col, end.line, end.col + len(end.text))

    def _parse_mode_suffix(self, allowed: tuple[str, ...], what: str) -> str:
        t = self.peek()
        if t.kind == "name" and t.text.startswith("_"):
            mode = t.text[1:]
            if mode in allowed:
                self.next()
                return mode
            raise self._error(
                f"{what} mode '_{mode}' is not allowed; expected one of "
                + ", ".join("_" + m for m in allowed), t.span)
        raise self._error(f"expected an access mode suffix after ']'", t.span)

    def _parse_write(self) -> S.Stmt:
        start = self.expect("[")
        loc = self.expect_name().text
        self.expect("]")
        mode = self._parse_mode_suffix(WRITE_MODES, "write")
        self.expect(":=")
        value = self.parse_expr()
        end = self.expect(";")
        return S.SWrite(mode=mode, loc=loc, value=value, span=self._span(start, end))

    def _parse_assign_like(self) -> S.Stmt:
        start = self.expect_name()
        target = start.text
        self.expect(":=")
        t = self.peek()
        if t.text == "[":
            self.next()
            loc = self.expect_name().text
            self.expect("]")
            mode = self._parse_mode_suffix(READ_MODES, "read")
            end = self.expect(";")
            return S.SRead(mode=mode, target=target, loc=loc, span=self._span(start, end))
        if t.kind == "name" and t.text.startswith("CAS_"):
            tau = self._tau_of(t)
            self.next()
            self.expect("(")
            loc = self.expect_name().text
            self.expect(",")
            expected = self.parse_expr()
            self.expect(",")
            newval = self.parse_expr()
            self.expect(")")
            end = self.expect(";")
            return S.SCas(target=target, tau=tau, loc=loc, expected=expected,
                          newval=newval, span=self._span(start, end))
        if t.kind == "name" and t.text.startswith("FAA_"):
            tau = self._tau_of(t)
            self.next()
            self.expect("(")
            loc = self.expect_name().text
            self.expect(",")
            delta = self.parse_expr()
            self.expect(")")
            end = self.expect(";")
            return S.SFaa(target=target, tau=tau, loc=loc, delta=delta,
                          span=self._span(start, end))
        if t.text == "call":
            self.next()
            callee = self.expect_name().text
            args = self._parse_args()
            end = self.expect(";")
            return S.SCall(target=target, callee=callee, args=args,
                           span=self._span(start, end))
        value = self.parse_expr()
        end = self.expect(";")
        return S.SAssign(var=target, value=value, span=self._span(start, end))

    def _tau_of(self, t: Token) -> str:
        tau = t.text.split("_", 1)[1]
        if tau not in CAS_MODES:
            raise self._error(f"unknown atomic update mode {t.text!r}", t.span)
        return tau

    def _parse_args(self) -> list[S.Expr]:
        self.expect("(")
        args: list[S.Expr] = []
        while not self.at(")"):
            args.append(self.parse_expr())
            if not self.accept(","):
                break
        self.expect(")")
        return args

    def _parse_rewrite(self) -> S.Stmt:
        start = self.expect("rewrite")
        self.expect("Acq")
        self.expect("(")
        loc = self.expect_name().text
        self.expect(",")
        old = self._parse_invref()
        self.expect(")")
        self.expect("to")
        self.expect("Acq")
        self.expect("(")
        loc2 = self.expect_name().text
        self.expect(",")
        new = self._parse_invref()
        self.expect(")")
        end = self.expect(";")
        if loc2 != loc:
            raise self._error(f"rewrite must target one location, got {loc!r} and {loc2!r}",
                              start.span)
        return S.SRewrite(loc=loc, old=old, new=new, span=self._span(start, end))

    def _parse_while(self) -> S.Stmt:
        start = self.expect("while")
        self.expect("(")
        cond = self._parse_loop_cond()
        self.expect(")")
        invariant = None
        if self.at("invariant"):
            self.next()
            self.expect("{")
            invariant = self.parse_assertion()
            self.expect("}")
        if self.at("{"):
            body = self._parse_block()
            end_span = self.toks[self.pos - 1]
            return S.SWhile(cond=cond, invariant=invariant, body=body,
                            span=self._span(start, end_span))
        end = self.expect(";")
        return S.SWhile(cond=cond, invariant=invariant, body=[],
                        span=self._span(start, end))

    def _parse_loop_cond(self) -> S.LoopCond:
        t = self.peek()
        if t.text == "[":
            self.next()
            loc = self.expect_name().text
            self.expect("]")
            mode = self._parse_mode_suffix(READ_MODES, "read")
            op = self._parse_cmp_op()
            rhs = self.parse_expr()
            return S.LoopCond(kind="read", mode=mode, loc=loc, op=op, rhs=rhs)
        if t.kind == "name" and t.text.startswith("CAS_"):
            tau = self._tau_of(t)
            self.next()
            self.expect("(")
            loc = self.expect_name().text
            self.expect(",")
            expected = self.parse_expr()
            self.expect(",")
            newval = self.parse_expr()
            self.expect(")")
            op = self._parse_cmp_op()
            rhs = self.parse_expr()
            return S.LoopCond(kind="cas", mode=tau, loc=loc, op=op, rhs=rhs,
                              expected=expected, newval=newval)
        return S.LoopCond(kind="pure", expr=self.parse_expr())

    def _parse_cmp_op(self) -> str:
        for op in ("==", "!=", "<=", ">=", "<", ">"):
            if self.accept(op):
                return op
        raise self._error("expected a comparison operator")

    def _parse_if(self) -> S.Stmt:
        start = self.expect("if")
        self.expect("(")
        cond = self.parse_expr()
        self.expect(")")
        then = self._parse_block()
        els: list[S.Stmt] = []
        if self.accept("else"):
            els = self._parse_block()
        end_tok = self.toks[self.pos - 1]
        return S.SIf(cond=cond, then=then, els=els, span=self._span(start, end_tok))

    def _parse_par(self) -> S.Stmt:
        start = self.expect("par")
        self.expect("{")
        threads: list[S.Thread] = []
        while self.at("thread"):
            tstart = self.next()
            pre, post, has_spec = self._parse_spec()
            body = self._parse_block()
            threads.append(S.Thread(pre=pre, post=post, body=body,
                                    has_spec=has_spec, span=tstart.span))
        end = self.expect("}")
        if not threads:
            raise self._error("par block needs at least one thread", start.span)
        return S.SPar(threads=threads, span=self._span(start, end))

    def _parse_invref(self) -> S.InvRef:
        names = [self.expect_name().text]
        while self.accept("&&"):
            names.append(self.expect_name().text)
        return tuple(names)

    # -- assertions -----------------------------------------------------------

    def parse_assertion(self) -> S.Assertion:
        parts = [self._parse_assertion_term()]
        while self.accept("&&"):
            parts.append(self._parse_assertion_term())
        return S.star(parts)

    def _parse_assertion_term(self) -> S.Assertion:
        t = self.peek()
        if t.text == "Uninit":
            return self._loc_assertion(S.AUninit)
        if t.text == "Init":
            return self._loc_assertion(S.AInit)
        if t.text in ("Acq", "Rel", "RMWAcq"):
            cls = {"Acq": S.AAcq, "Rel": S.ARel, "RMWAcq": S.ARMWAcq}[t.text]
            self.next()
            self.expect("(")
            loc = self.expect_name().text
            self.expect(",")
            inv = self._parse_invref()
            self.expect(")")
            return cls(loc=loc, inv=inv, span=t.span)
        if t.text in ("Up", "Down"):
            self.next()
            self.expect("(")
            body = self.parse_assertion()
            self.expect(")")
            return (S.AUp if t.text == "Up" else S.ADown)(body=body, span=t.span)
        if t.text == "(":
            self.next()
            inner = self.parse_assertion()
            self.expect(")")
            # "(e) == e2" and friends: the parentheses belonged to a pure
            # expression, so keep parsing at the expression level
            if isinstance(inner, S.APure):
                expr = self._continue_expr(inner.expr)
                if expr is not inner.expr:
                    inner = S.APure(expr=expr, span=t.span)
                if self.accept("==>"):
                    return S.AImplies(cond=inner.expr,
                                      body=self._parse_assertion_term(), span=t.span)
                if self.accept("?"):
                    then = self._parse_assertion_term()
                    self.expect(":")
                    els = self._parse_assertion_term()
                    return S.ACond(cond=inner.expr, then=then, els=els, span=t.span)
            return inner
        # points-to, macro use, or a pure expression (possibly ==> / ?:)
        if t.kind == "name" and self.peek(1).text == "|->":
            self.next()
            self.next()
            value = self._parse_points_to_value()
            frac = None
            if self.accept("@"):
                frac = self.parse_expr(no_bool=True)
            return S.APointsTo(loc=t.text, value=value, frac=frac, span=t.span)
        if t.kind == "name" and t.text in self.defines:
            return self._expand_define(t)
        expr = self.parse_expr(no_bool=True)
        if self.accept("==>"):
            body = self._parse_assertion_term()
            return S.AImplies(cond=expr, body=body, span=t.span)
        if self.accept("?"):
            then = self._parse_assertion_term()
            self.expect(":")
            els = self._parse_assertion_term()
            return S.ACond(cond=expr, then=then, els=els, span=t.span)
        return S.APure(expr=expr, span=t.span)

    def _parse_points_to_value(self) -> S.Expr:
        if self.at("_"):
            self.next()
            return S.EAny()
        return self.parse_expr(no_bool=True)

    def _loc_assertion(self, cls):
        t = self.next()
        self.expect("(")
        loc = self.expect_name().text
        self.expect(")")
        return cls(loc=loc, span=t.span)

    def _expand_define(self, t: Token) -> S.Assertion:
        self.next()
        d = self.defines[t.text]
        args: list[S.Expr] = []
        if d.params:
            args = self._parse_args()
        if len(args) != len(d.params):
            raise self._error(
                f"macro {t.text!r} expects {len(d.params)} argument(s), got {len(args)}",
                t.span)
        try:
            return S.subst_assertion(d.body, dict(zip(d.params, args)))
        except ValueError as exc:
            raise self._error(str(exc), t.span)

    # -- expressions ------------------------------------------------------------

    def _continue_expr(self, e: S.Expr) -> S.Expr:
        """Extend a parsed (parenthesised) expression with trailing operators."""
        while True:
            t = self.peek().text
            if t in ("*", "/", "%"):
                self.next()
                e = S.EBin(t, e, self._parse_unary(True))
            elif t in ("+", "-"):
                self.next()
                e = S.EBin(t, e, self._parse_mul(True))
            elif t in ("<<", ">>"):
                self.next()
                e = S.EBin(t, e, self._parse_add(True))
            elif t in ("&", "^", "|") and not self.at("&&"):
                self.next()
                e = S.EBin(t, e, self._parse_shift(True))
            elif t in ("==", "!=", "<=", ">=", "<", ">"):
                self.next()
                e = S.EBin(t, e, self._parse_bitor(True))
            else:
                return e

    def parse_expr(self, no_bool: bool = False) -> S.Expr:
        return self._parse_or(no_bool)

    def _parse_or(self, no_bool: bool) -> S.Expr:
        e = self._parse_and(no_bool)
        while not no_bool and self.at("||"):
            self.next()
            e = S.EBin("||", e, self._parse_and(no_bool))
        return e

    def _parse_and(self, no_bool: bool) -> S.Expr:
        e = self._parse_cmp(no_bool)
        while not no_bool and self.at("&&"):
            self.next()
            e = S.EBin("&&", e, self._parse_cmp(no_bool))
        return e

    def _parse_cmp(self, no_bool: bool) -> S.Expr:
        e = self._parse_bitor(no_bool)
        for op in ("==", "!=", "<=", ">=", "<", ">"):
            if self.at(op):
                self.next()
                return S.EBin(op, e, self._parse_bitor(no_bool))
        return e

    def _parse_bitor(self, no_bool: bool) -> S.Expr:
        e = self._parse_bitxor(no_bool)
        while self.at("|"):
            self.next()
            e = S.EBin("|", e, self._parse_bitxor(no_bool))
        return e

    def _parse_bitxor(self, no_bool: bool) -> S.Expr:
        e = self._parse_bitand(no_bool)
        while self.at("^"):
            self.next()
            e = S.EBin("^", e, self._parse_bitand(no_bool))
        return e

    def _parse_bitand(self, no_bool: bool) -> S.Expr:
        e = self._parse_shift(no_bool)
        while self.at("&") and not self.at("&&"):
            self.next()
            e = S.EBin("&", e, self._parse_shift(no_bool))
        return e

    def _parse_shift(self, no_bool: bool) -> S.Expr:
        e = self._parse_add(no_bool)
        while self.at("<<") or self.at(">>"):
            op = self.next().text
            e = S.EBin(op, e, self._parse_add(no_bool))
        return e

    def _parse_add(self, no_bool: bool) -> S.Expr:
        e = self._parse_mul(no_bool)
        while self.at("+") or self.at("-"):
            op = self.next().text
            e = S.EBin(op, e, self._parse_mul(no_bool))
        return e

    def _parse_mul(self, no_bool: bool) -> S.Expr:
        e = self._parse_unary(no_bool)
        while self.at("*") or self.at("/") or self.at("%"):
            op = self.next().text
            e = S.EBin(op, e, self._parse_unary(no_bool))
        return e

    def _parse_unary(self, no_bool: bool) -> S.Expr:
        if self.accept("-"):
            return S.EUn("-", self._parse_unary(no_bool))
        if self.accept("!"):
            return S.EUn("!", self._parse_unary(no_bool))
        return self._parse_primary(no_bool)

    def _parse_primary(self, no_bool: bool) -> S.Expr:
        t = self.peek()
        if t.kind == "int":
            self.next()
            return S.EInt(int(t.text))
        if t.text == "true":
            self.next()
            return S.EBool(True)
        if t.text == "false":
            self.next()
            return S.EBool(False)
        if t.text == "(":
            self.next()
            e = self.parse_expr(no_bool)
            self.expect(")")
            return e
        if t.kind == "name":
            self.next()
            if self.inv_param is not None and t.text == self.inv_param:
                return S.EInvVal()
            return S.EVar(t.text)
        raise self._error(f"expected an expression, found {t.text!r}")


def parse(source: str) -> tuple[S.Program, list[Diagnostic]]:
    """Parse a program.  Always returns; problems come back as diagnostics."""
    parser = Parser(source)
    program = parser.parse_program()
    return program, parser.diags


# ---------------------------------------------------------------------------
# Mode checking / classification
# ---------------------------------------------------------------------------

_ALLOC_TAGS = {"alloc_na": NA, "alloc_acq": ACQ, "alloc_rmw": RMW, "alloc_ghost": GHOST}


@dataclass
class _Evidence:
    alloc: dict[str, Span] = field(default_factory=dict)   # alloc tag -> first span
    uses: dict[str, Span] = field(default_factory=dict)    # use tag -> first span

    def add_alloc(self, tag: str, span: Span) -> None:
        self.alloc.setdefault(tag, span)

    def add_use(self, tag: str, span: Span) -> None:
        self.uses.setdefault(tag, span)


@dataclass
class ProcInfo:
    classes: dict[str, str] = field(default_factory=dict)
    declared: set[str] = field(default_factory=set)
    ghost_vars: set[str] = field(default_factory=set)

    def class_of(self, var: str) -> str:
        return self.classes.get(var, UNKNOWN)


@dataclass
class CheckedProgram:
    program: S.Program
    info: dict[str, ProcInfo]
    diagnostics: list[Diagnostic]

    @property
    def ok(self) -> bool:
        return not self.diagnostics


class _Classifier:
    def __init__(self, program: S.Program):
        self.program = program
        self.diags: list[Diagnostic] = []
        self.inv_by_name = {d.name: d for d in program.invariants}

    def run(self) -> CheckedProgram:
        info: dict[str, ProcInfo] = {}
        evidence: dict[str, dict[str, _Evidence]] = {}
        for proc in self.program.procedures:
            evidence[proc.name] = self._collect_proc(proc)
        # propagate classes through call sites (two passes suffice in practice)
        for _ in range(3):
            resolved = {
                name: {v: self._resolve(ev, report=False)[0] for v, ev in evs.items()}
                for name, evs in evidence.items()
            }
            changed = False
            for proc in self.program.procedures:
                for st in S.walk_stmts(proc.body):
                    if not isinstance(st, S.SCall):
                        continue
                    callee = next((p for p in self.program.procedures
                                   if p.name == st.callee), None)
                    if callee is None:
                        continue
                    callee_cls = resolved.get(callee.name, {})
                    for formal, actual in zip(callee.params, st.args):
                        if isinstance(actual, S.EVar):
                            tag = self._class_use_tag(callee_cls.get(formal.name, UNKNOWN))
                            if tag:
                                ev = evidence[proc.name].setdefault(actual.name, _Evidence())
                                if tag not in ev.uses:
                                    ev.add_use(tag, st.span)
                                    changed = True
                    if st.target and callee.returns:
                        tag = self._class_use_tag(
                            callee_cls.get(callee.returns[0].name, UNKNOWN))
                        if tag:
                            ev = evidence[proc.name].setdefault(st.target, _Evidence())
                            if tag not in ev.uses:
                                ev.add_use(tag, st.span)
                                changed = True
            if not changed:
                break
        for proc in self.program.procedures:
            pi = ProcInfo()
            for var, ev in sorted(evidence[proc.name].items()):
                cls, _ = self._resolve(ev, report=True, var=var)
                pi.classes[var] = cls
                if cls == GHOST:
                    pi.ghost_vars.add(var)
            pi.declared = self._declared(proc)
            self._check_declared(proc, pi)
            info[proc.name] = pi
        self._check_posts()
        self._check_fractions()
        self.diags.sort(key=lambda d: (d.span.line, d.span.col, d.kind))
        return CheckedProgram(self.program, info, self.diags)

    @staticmethod
    def _class_use_tag(cls: str) -> Optional[str]:
        return {NA: "owns", ACQ: "acq_use", RMW: "rmw_use",
                GHOST: "owns", ATOMIC: "atomic_use", VALUE: "int_use"}.get(cls)

    # -- evidence collection ---------------------------------------------------

    def _collect_proc(self, proc: S.Procedure) -> dict[str, _Evidence]:
        ev: dict[str, _Evidence] = {}

        def E(var: str) -> _Evidence:
            return ev.setdefault(var, _Evidence())

        for p in proc.params + proc.returns:
            E(p.name)
            if p.ghost:
                E(p.name).add_alloc("alloc_ghost", proc.span)

        def expr_use(e: S.Expr, span: Span) -> None:
            for v in sorted(S.expr_vars(e)):
                E(v).add_use("int_use", span)

        def assertion_use(a: S.Assertion, span: Span, seen_invs: frozenset = frozenset()) -> None:
            if isinstance(a, S.APure):
                expr_use(a.expr, span)
            elif isinstance(a, S.APointsTo):
                E(a.loc).add_use("owns", a.span or span)
                expr_use(a.value, span)
            elif isinstance(a, S.AStar):
                for p in a.parts:
                    assertion_use(p, span, seen_invs)
            elif isinstance(a, S.AImplies):
                expr_use(a.cond, span)
                assertion_use(a.body, span, seen_invs)
            elif isinstance(a, S.ACond):
                expr_use(a.cond, span)
                assertion_use(a.then, span, seen_invs)
                assertion_use(a.els, span, seen_invs)
            elif isinstance(a, S.AUninit):
                E(a.loc).add_use("owns", a.span or span)
            elif isinstance(a, S.AInit):
                E(a.loc).add_use("atomic_use", a.span or span)
            elif isinstance(a, S.AAcq):
                E(a.loc).add_use("acq_use", a.span or span)
                inv_use(a.inv, span, seen_invs)
            elif isinstance(a, S.ARel):
                E(a.loc).add_use("atomic_use", a.span or span)
                inv_use(a.inv, span, seen_invs)
            elif isinstance(a, S.ARMWAcq):
                E(a.loc).add_use("rmw_use", a.span or span)
                inv_use(a.inv, span, seen_invs)
            elif isinstance(a, (S.AUp, S.ADown)):
                assertion_use(a.body, span, seen_invs)

        def inv_use(inv: S.InvRef, span: Span, seen: frozenset) -> None:
            for name in inv:
                if name in seen:
                    continue
                decl = self.inv_by_name.get(name)
                if decl is None:
                    self.diags.append(Diagnostic(
                        SYNTAX_ERROR, span, rule="well-formedness",
                        message=f"unknown invariant {name!r}"))
                    continue
                assertion_use(decl.body, span, seen | {name})

        if proc.pre is not None:
            assertion_use(proc.pre, proc.span)
        if proc.post is not None:
            assertion_use(proc.post, proc.span)

        for st in S.walk_stmts(proc.body):
            if isinstance(st, S.SAllocNa):
                E(st.var).add_alloc("alloc_na", st.span)
            elif isinstance(st, S.SAllocAtomic):
                E(st.var).add_alloc("alloc_acq" if st.kind == "acq" else "alloc_rmw", st.span)
                inv_use(st.inv, st.span, frozenset())
            elif isinstance(st, S.SGhostAlloc):
                E(st.var).add_alloc("alloc_ghost", st.span)
            elif isinstance(st, S.SWrite):
                if st.mode == "na":
                    E(st.loc).add_use("na_access", st.span)
                else:
                    E(st.loc).add_use("atomic_use", st.span)
                expr_use(st.value, st.span)
            elif isinstance(st, S.SRead):
                if st.mode == "na":
                    E(st.loc).add_use("na_access", st.span)
                else:
                    E(st.loc).add_use("acq_use", st.span)
                E(st.target).add_use("int_use", st.span)
            elif isinstance(st, (S.SCas, S.SFaa)):
                E(st.loc).add_use("rmw_use", st.span)
                E(st.target).add_use("int_use", st.span)
                if isinstance(st, S.SCas):
                    expr_use(st.expected, st.span)
                    expr_use(st.newval, st.span)
                else:
                    expr_use(st.delta, st.span)
            elif isinstance(st, S.SRewrite):
                E(st.loc).add_use("acq_use", st.span)
                inv_use(st.old, st.span, frozenset())
                inv_use(st.new, st.span, frozenset())
            elif isinstance(st, S.SFenceRel):
                assertion_use(st.assertion, st.span)
            elif isinstance(st, S.SWhile):
                c = st.cond
                if c.kind == "pure":
                    expr_use(c.expr, st.span)
                elif c.kind == "read":
                    tag = "na_access" if c.mode == "na" else "acq_use"
                    E(c.loc).add_use(tag, st.span)
                    expr_use(c.rhs, st.span)
                else:
                    E(c.loc).add_use("rmw_use", st.span)
                    expr_use(c.expected, st.span)
                    expr_use(c.newval, st.span)
                    expr_use(c.rhs, st.span)
                if st.invariant is not None:
                    assertion_use(st.invariant, st.span)
            elif isinstance(st, S.SIf):
                expr_use(st.cond, st.span)
            elif isinstance(st, S.SPar):
                for th in st.threads:
                    assertion_use(th.pre, th.span)
                    assertion_use(th.post, th.span)
            elif isinstance(st, S.SCall):
                for a in st.args:
                    if not isinstance(a, S.EVar):
                        expr_use(a, st.span)
                    else:
                        E(a.name)
                if st.target:
                    E(st.target)
            elif isinstance(st, S.SAssign):
                E(st.var).add_use("int_use", st.span)
                expr_use(st.value, st.span)
            elif isinstance(st, S.SFree):
                E(st.var).add_use("owns", st.span)
        return ev

    # -- resolution --------------------------------------------------------------

    def _resolve(self, ev: _Evidence, report: bool, var: str = "") -> tuple[str, Optional[Span]]:
        alloc_kinds = {_ALLOC_TAGS[t] for t in ev.alloc}
        uses = ev.uses

        def diag(kind: str, span: Span, msg: str) -> None:
            if report:
                self.diags.append(Diagnostic(kind, span, rule="mode-check", message=msg))

        if len(alloc_kinds) > 1:
            span = next(iter(ev.alloc.values()))
            diag(MIXED_MODE_ACCESS, span,
                 f"location {var!r} allocated with conflicting kinds")
            return sorted(alloc_kinds)[0], span
        base = next(iter(alloc_kinds)) if alloc_kinds else None
        if base is None:
            if "rmw_use" in uses and "acq_use" in uses:
                diag(CAS_ON_ACQ_LOCATION, uses["rmw_use"],
                     f"location {var!r} used both for atomic reads and RMW updates")
                return RMW, uses["rmw_use"]
            if "rmw_use" in uses:
                base = RMW
            elif "acq_use" in uses:
                base = ACQ
            elif "atomic_use" in uses:
                base = ATOMIC
            elif "na_access" in uses or "owns" in uses:
                base = NA
            else:
                base = VALUE if "int_use" in uses else UNKNOWN
        atomic_tags = [t for t in ("acq_use", "rmw_use", "atomic_use") if t in uses]
        owning_tags = [t for t in ("na_access", "owns") if t in uses]
        if base in (NA, GHOST):
            for t in atomic_tags:
                kind = ATOMIC_ACCESS_TO_NON_ATOMIC if base == GHOST else MIXED_MODE_ACCESS
                diag(kind, uses[t], f"atomic use of {base} location {var!r}")
        if base == ACQ:
            if "rmw_use" in uses:
                diag(CAS_ON_ACQ_LOCATION, uses["rmw_use"],
                     f"RMW update of acquire-read location {var!r}")
            if "na_access" in uses:
                diag(MIXED_MODE_ACCESS, uses["na_access"],
                     f"non-atomic access to atomic location {var!r}")
        if base == RMW:
            if "acq_use" in uses:
                diag(CAS_ON_ACQ_LOCATION, uses["acq_use"],
                     f"atomic read of RMW location {var!r}")
            if "na_access" in uses:
                diag(MIXED_MODE_ACCESS, uses["na_access"],
                     f"non-atomic access to atomic location {var!r}")
        if base == ATOMIC and "na_access" in uses:
            diag(MIXED_MODE_ACCESS, uses["na_access"],
                 f"non-atomic access to atomic location {var!r}")
        if base in LOCATION_CLASSES and base not in (NA, GHOST) and "owns" in uses:
            diag(MIXED_MODE_ACCESS, uses["owns"],
                 f"points-to resource for atomic location {var!r}")
        if base in LOCATION_CLASSES and "int_use" in uses:
            diag(MIXED_MODE_ACCESS, uses["int_use"],
                 f"{var!r} used both as a location and as a value")
        return base, None

    # -- other well-formedness ----------------------------------------------------

    def _declared(self, proc: S.Procedure) -> set[str]:
        declared = {p.name for p in proc.params} | {p.name for p in proc.returns}
        declared.update(S.assigned_vars(proc.body))
        # logical variables bound by a precondition are in scope
        if proc.pre is not None:
            declared |= self._free_deep(proc.pre)
        for st in S.walk_stmts(proc.body):
            if isinstance(st, S.SPar):
                for th in st.threads:
                    declared |= self._free_deep(th.pre)
        return declared

    def _check_declared(self, proc: S.Procedure, pi: ProcInfo) -> None:
        # free variables of referenced invariants count as this scope's names
        used: set[str] = set(pi.classes)
        undeclared = sorted(v for v in used if v not in pi.declared
                            and pi.classes.get(v) not in (UNKNOWN,))
        for v in undeclared:
            self.diags.append(Diagnostic(
                SYNTAX_ERROR, proc.span, rule="well-formedness",
                message=f"variable {v!r} used in {proc.name!r} but never declared"))

    def _free_deep(self, a: S.Assertion, seen: frozenset = frozenset()) -> set[str]:
        out = S.assertion_vars(a)
        for node_inv in self._inv_refs(a):
            for name in node_inv:
                if name in seen or name not in self.inv_by_name:
                    continue
                out |= self._free_deep(self.inv_by_name[name].body, seen | {name})
        return out

    @staticmethod
    def _inv_refs(a: S.Assertion) -> list[S.InvRef]:
        out = []
        stack = [a]
        while stack:
            x = stack.pop()
            if isinstance(x, (S.AAcq, S.ARel, S.ARMWAcq)):
                out.append(x.inv)
            elif isinstance(x, S.AStar):
                stack.extend(x.parts)
            elif isinstance(x, S.AImplies):
                stack.append(x.body)
            elif isinstance(x, S.ACond):
                stack.extend([x.then, x.els])
            elif isinstance(x, (S.AUp, S.ADown)):
                stack.append(x.body)
        return out

    def _check_posts(self) -> None:
        for proc in self.program.procedures:
            if proc.pre is None or proc.post is None:
                continue
            allowed = {p.name for p in proc.params} | {p.name for p in proc.returns}
            allowed |= self._free_deep(proc.pre)
            extra = sorted(self._free_deep(proc.post) - allowed)
            if extra:
                self.diags.append(Diagnostic(
                    SYNTAX_ERROR, proc.span, rule="well-formedness",
                    message=f"postcondition of {proc.name!r} mentions "
                            f"{', '.join(repr(v) for v in extra)} not bound by "
                            "parameters, returns or the precondition"))

    def _check_fractions(self) -> None:
        def walk(a: S.Assertion, span: Span) -> None:
            if isinstance(a, S.APointsTo) and a.frac is not None:
                k = const_fraction(a.frac)
                if k is not None and not (0 < k <= 1):
                    self.diags.append(Diagnostic(
                        SYNTAX_ERROR, a.span or span, rule="well-formedness",
                        message=f"fraction {k} outside (0, 1]"))
            for child in _assertion_children(a):
                walk(child, span)

        for d in self.program.invariants:
            walk(d.body, d.span)
        for proc in self.program.procedures:
            if proc.pre is not None:
                walk(proc.pre, proc.span)
            if proc.post is not None:
                walk(proc.post, proc.span)
            for st in S.walk_stmts(proc.body):
                if isinstance(st, S.SFenceRel):
                    walk(st.assertion, st.span)
                elif isinstance(st, S.SWhile) and st.invariant is not None:
                    walk(st.invariant, st.span)
                elif isinstance(st, S.SPar):
                    for th in st.threads:
                        walk(th.pre, th.span)
                        walk(th.post, th.span)


def _assertion_children(a: S.Assertion) -> list[S.Assertion]:
    if isinstance(a, S.AStar):
        return list(a.parts)
    if isinstance(a, S.AImplies):
        return [a.body]
    if isinstance(a, S.ACond):
        return [a.then, a.els]
    if isinstance(a, (S.AUp, S.ADown)):
        return [a.body]
    return []


def const_fraction(e: S.Expr):
    """Evaluate a fraction expression to a rational, or None if symbolic."""
    from fractions import Fraction
    if isinstance(e, S.EInt):
        return Fraction(e.value)
    if isinstance(e, S.EUn) and e.op == "-":
        v = const_fraction(e.operand)
        return -v if v is not None else None
    if isinstance(e, S.EBin) and e.op in ("+", "-", "*", "/"):
        l, r = const_fraction(e.left), const_fraction(e.right)
        if l is None or r is None:
            return None
        if e.op == "+":
            return l + r
        if e.op == "-":
            return l - r
        if e.op == "*":
            return l * r
        return l / r if r != 0 else None
    return None


def mode_check(program: S.Program) -> CheckedProgram:
    """Classify every variable and report classification conflicts."""
    return _Classifier(program).run()
