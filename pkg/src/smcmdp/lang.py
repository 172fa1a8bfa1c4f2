"""Text format for models and properties: lexer, parser, printer, validator.

Model files look like::

    mdp
    const double p = 0.5;
    module walker
      x : [0..7] init 0;
      [] x<7 -> p:(x'=x+1) + 1-p:(x'=x);
      [stop] x=7 -> (x'=x);
    endmodule
    label "done" = x=7;
    rewards "steps"
      true : 1;
    endrewards

Properties are bounded LTL formulas (``X``, ``F<=k``, ``G<=k``, ``U<=k``,
``!``, ``&``, ``|``) or reward queries such as ``R{"steps"}min=? [ F<=100 done ]``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Optional

from . import bltl
from .bltl import Formula
from .expr import (COMPARE, TRUE, Binary, Call, Expr, ExprTypeError, Lit, UnknownIdentifier, Unary,
                   fold, format_value, free_vars, infer_type, substitute, to_text)
from .model import (PROB_TOL, Branch, Command, Model, Module, ProbabilityProperty, RewardProperty,
                    RewardStructure, Update, VariableDecl)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # 'error' or 'warning'
    message: str
    line: int
    col: int
    end_line: int = 0
    end_col: int = 0

    def format(self, origin: str = "<input>") -> str:
        return f"{origin}:{self.line}:{self.col}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class SourceText:
    content: str
    origin: str = "<inline>"

    @classmethod
    def from_file(cls, path) -> "SourceText":
        with open(path, encoding="utf-8") as fh:
            return cls(fh.read(), str(path))


class ParseError(Exception):
    def __init__(self, diagnostics, origin="<input>"):
        self.diagnostics = list(diagnostics)
        self.origin = origin
        super().__init__("\n".join(d.format(origin) for d in self.diagnostics))


# --------------------------------------------------------------------------
# lexer

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<str>"[^"\n]*")
  | (?P<op>\.\.|->|<=|>=|!=|=\?|[\[\](){};:,+\-*/=<>&|!'?])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list:
    out = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError([Diagnostic("error", f"unexpected character {text[pos]!r}",
                                         line, pos - line_start + 1)])
        kind = m.lastgroup
        tok_text = m.group()
        if kind != "ws":
            out.append(Token(kind, tok_text, line, pos - line_start + 1))
        for i, ch in enumerate(tok_text):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


_RELOPS = set(COMPARE)
_NOT_FORMULA_START = _RELOPS | {"+", "-", "*", "/", ")", ";", ",", "]", "&", "|", ":", "}", ""}


class _Parser:
    def __init__(self, text: str, temporal: bool = False):
        self.toks = tokenize(text)
        self.pos = 0
        self.temporal = temporal

    # token helpers
    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.peek()
        self.pos += 1
        return t

    def at(self, text: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t.text == text and t.kind in ("op", "id")

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            return self.next()
        return None

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected '{text}'")
        return self.next()

    def expect_kind(self, kind: str, what: str) -> Token:
        if self.peek().kind != kind:
            self.fail(f"expected {what}")
        return self.next()

    def fail(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.peek()
        found = "end of input" if tok.kind == "eof" else f"'{tok.text}'"
        raise ParseError([Diagnostic("error", f"{msg}, found {found}", tok.line, tok.col,
                                     tok.line, tok.col + max(len(tok.text), 1))])

    def int_literal(self, what: str) -> int:
        t = self.expect_kind("num", what)
        if not t.text.isdigit():
            self.fail(f"{what} must be an integer", t)
        return int(t.text)

    # expressions; in temporal mode boolean connectives build formulas
    def expression(self):
        return self.or_()

    def or_(self):
        left = self.and_()
        while self.at("|"):
            self.next()
            left = self._connect("|", left, self.and_())
        return left

    def and_(self):
        left = self.until()
        while self.at("&"):
            self.next()
            left = self._connect("&", left, self.until())
        return left

    def until(self):
        left = self.unary()
        while self.temporal and self.at("U") and self.at("<=", 1):
            self.next()
            self.next()
            k = self._bound()
            left = bltl.Until(k, _formula(left), _formula(self.unary()))
        return left

    def _bound(self) -> int:
        tok = self.peek()
        k = self.int_literal("step bound")
        if k <= 0:
            self.fail("temporal bound must be positive", tok)
        return k

    def _connect(self, op, left, right):
        if self.temporal:
            cls = bltl.Or if op == "|" else bltl.And
            return cls(_formula(left), _formula(right))
        return Binary(op, left, right)

    def _temporal_here(self) -> bool:
        t = self.peek()
        if not self.temporal or t.kind != "id":
            return False
        if t.text == "X":
            return self.peek(1).text not in _NOT_FORMULA_START
        if t.text in ("F", "G"):
            return (self.at("<=", 1) and self.peek(2).kind == "num"
                    and self.peek(3).text not in _NOT_FORMULA_START)
        return False

    def unary(self):
        if self.at("!"):
            self.next()
            arg = self.unary()
            if self.temporal:
                return bltl.Not(_formula(arg))
            return Unary("!", arg)
        if self._temporal_here():
            op = self.next().text
            if op == "X":
                return bltl.Next(_formula(self.unary()))
            self.next()
            k = self._bound()
            arg = _formula(self.unary())
            return bltl.Finally(k, arg) if op == "F" else bltl.Globally(k, arg)
        return self.comparison()

    def comparison(self):
        left = self.additive()
        if self.peek().kind == "op" and self.peek().text in _RELOPS:
            op = self.next().text
            left = Binary(op, _value(self, left), _value(self, self.additive()))
        return left

    def additive(self):
        left = self.multiplicative()
        while self.at("+") or self.at("-"):
            op = self.next().text
            left = Binary(op, _value(self, left), _value(self, self.multiplicative()))
        return left

    def multiplicative(self):
        left = self.negation()
        while self.at("*") or self.at("/"):
            op = self.next().text
            left = Binary(op, _value(self, left), _value(self, self.negation()))
        return left

    def negation(self):
        if self.at("-"):
            self.next()
            return Unary("-", _value(self, self.negation()))
        return self.primary()

    def primary(self):
        t = self.peek()
        if t.kind == "num":
            self.next()
            if re.fullmatch(r"\d+", t.text):
                return Lit(int(t.text))
            return Lit(float(t.text))
        if t.kind == "str":
            self.next()
            return _LabelRef(t.text[1:-1], t)
        if t.kind == "id":
            if t.text in ("true", "false"):
                self.next()
                return Lit(t.text == "true")
            if t.text in ("min", "max") and self.at("(", 1):
                self.next()
                self.next()
                args = [_value(self, self.expression())]
                while self.accept(","):
                    args.append(_value(self, self.expression()))
                self.expect(")")
                return Call(t.text, tuple(args))
            self.next()
            return _Name(t.text, t)
        if self.at("("):
            self.next()
            inner = self.expression()
            self.expect(")")
            return inner
        self.fail("expected an expression")


@dataclass(frozen=True)
class _Name(Expr):
    """Identifier not yet resolved to a variable, constant or label."""
    name: str
    tok: Token


@dataclass(frozen=True)
class _LabelRef(Expr):
    name: str
    tok: Token


def _value(p: _Parser, e):
    if isinstance(e, Formula):
        p.fail("temporal formula used as a value")
    return e


def _formula(e) -> Formula:
    return e if isinstance(e, Formula) else bltl.Atom(e)


# --------------------------------------------------------------------------
# name resolution


class _Resolver:
    """Replace parse-time names with variables, folded constants or label bodies."""

    def __init__(self, variables, constants, labels, diags):
        self.variables = variables
        self.constants = constants
        self.labels = labels
        self.diags = diags

    def expr(self, e: Expr) -> Expr:
        if isinstance(e, _Name):
            if e.name in self.variables:
                return Var(e.name)
            if e.name in self.constants:
                return Lit(self.constants[e.name])
            if e.name in self.labels:
                return self.labels[e.name]
            self.diags.append(Diagnostic("error", f"unknown identifier '{e.name}'",
                                         e.tok.line, e.tok.col, e.tok.line, e.tok.col + len(e.name)))
            return Lit(False)
        if isinstance(e, _LabelRef):
            if e.name in self.labels:
                return self.labels[e.name]
            self.diags.append(Diagnostic("error", f"unknown label \"{e.name}\"",
                                         e.tok.line, e.tok.col, e.tok.line, e.tok.col + len(e.name) + 2))
            return Lit(False)
        if isinstance(e, Unary):
            return Unary(e.op, self.expr(e.arg))
        if isinstance(e, Binary):
            return Binary(e.op, self.expr(e.left), self.expr(e.right))
        if isinstance(e, Call):
            return Call(e.func, tuple(self.expr(a) for a in e.args))
        return e

    def formula(self, f: Formula) -> Formula:
        if isinstance(f, bltl.Atom):
            return bltl.Atom(fold(self.expr(f.expr)))
        if isinstance(f, bltl.Not):
            return bltl.Not(self.formula(f.arg))
        if isinstance(f, bltl.Next):
            return bltl.Next(self.formula(f.arg))
        if isinstance(f, bltl.Finally):
            return bltl.Finally(f.k, self.formula(f.arg))
        if isinstance(f, bltl.Globally):
            return bltl.Globally(f.k, self.formula(f.arg))
        if isinstance(f, bltl.Until):
            return bltl.Until(f.k, self.formula(f.left), self.formula(f.right))
        return type(f)(self.formula(f.left), self.formula(f.right))


from .expr import Var  # noqa: E402  (kept next to its only non-expr user)


# --------------------------------------------------------------------------
# models


@dataclass
class _RawVar:
    name: str
    lo: object
    hi: object
    init: object
    is_bool: bool
    tok: Token


@dataclass
class _RawCommand:
    action: Optional[str]
    guard: object
    branches: list  # [(prob, [(var, expr, tok)])]
    tok: Token
    end: Token


def parse_model(src, constants: Optional[Mapping] = None) -> Model:
    """Parse and check a model; raises ParseError carrying every diagnostic found."""
    if isinstance(src, str):
        src = SourceText(src)
    p = _Parser(src.content)
    try:
        raw = _parse_model_syntax(p)
    except ParseError as exc:
        raise ParseError(exc.diagnostics, src.origin) from None
    diags: list = []
    model = _build_model(raw, dict(constants or {}), diags)
    if any(d.severity == "error" for d in diags):
        raise ParseError(diags, src.origin)
    return model


def _parse_model_syntax(p: _Parser) -> dict:
    raw = {"consts": [], "modules": [], "rewards": [], "labels": [], "sync": []}
    p.expect("mdp")
    while p.peek().kind != "eof":
        t = p.peek()
        if p.accept("const"):
            ctype = None
            if p.peek().text in ("int", "double", "bool") and p.peek(1).kind == "id":
                ctype = p.next().text
            name = p.expect_kind("id", "constant name")
            value = None
            if p.accept("="):
                value = p.expression()
            p.expect(";")
            raw["consts"].append((name, ctype, value))
        elif p.accept("module"):
            raw["modules"].append(_parse_module(p, t))
        elif p.accept("rewards"):
            name = p.expect_kind("str", "reward structure name").text[1:-1]
            state_items, action_items = [], []
            while not p.accept("endrewards"):
                start = p.peek()
                if p.accept("["):
                    label = p.next().text if p.peek().kind == "id" else None
                    p.expect("]")
                    guard = p.expression()
                    p.expect(":")
                    value = p.expression()
                    p.expect(";")
                    action_items.append((label, guard, value, start))
                else:
                    guard = p.expression()
                    p.expect(":")
                    value = p.expression()
                    p.expect(";")
                    state_items.append((guard, value, start))
            raw["rewards"].append((name, state_items, action_items, t))
        elif p.accept("label"):
            name_tok = p.peek()
            if name_tok.kind == "str":
                name = p.next().text[1:-1]
            else:
                name = p.expect_kind("id", "label name").text
            p.expect("=")
            body = p.expression()
            p.expect(";")
            raw["labels"].append((name, body, name_tok))
        elif p.accept("sync"):
            names = [p.expect_kind("id", "action label")]
            while p.accept(","):
                names.append(p.expect_kind("id", "action label"))
            p.expect(";")
            raw["sync"].extend(names)
        else:
            p.fail("expected 'const', 'module', 'rewards', 'label' or 'sync'")
    return raw


def _parse_module(p: _Parser, start: Token):
    name = p.expect_kind("id", "module name")
    variables, commands = [], []
    while not p.accept("endmodule"):
        t = p.peek()
        if t.kind == "id" and p.at(":", 1):
            p.next()
            p.next()
            if p.accept("bool"):
                p.expect("init")
                init = p.expression()
                p.expect(";")
                variables.append(_RawVar(t.text, Lit(0), Lit(1), init, True, t))
                continue
            p.expect("[")
            lo = p.expression()
            p.expect("..")
            hi = p.expression()
            p.expect("]")
            p.expect("init")
            init = p.expression()
            p.expect(";")
            variables.append(_RawVar(t.text, lo, hi, init, False, t))
        elif p.accept("["):
            action = p.next().text if p.peek().kind == "id" else None
            p.expect("]")
            guard = p.expression()
            p.expect("->")
            branches = _parse_branches(p)
            end = p.expect(";")
            commands.append(_RawCommand(action, guard, branches, t, end))
        elif t.kind == "eof":
            p.fail(f"module '{name.text}' is missing 'endmodule'")
        else:
            p.fail("expected a variable declaration or a command")
    return name, variables, commands, start


def _updates_start(p: _Parser) -> bool:
    if p.at("true") and p.peek(1).text in (";", "+"):
        return True
    return p.at("(") and p.peek(1).kind == "id" and p.at("'", 2)


def _parse_updates(p: _Parser) -> list:
    if p.accept("true"):
        return []
    ups = []
    while True:
        p.expect("(")
        var = p.expect_kind("id", "variable name")
        p.expect("'")
        p.expect("=")
        e = p.expression()
        p.expect(")")
        ups.append((var.text, e, var))
        if not p.accept("&"):
            return ups


def _parse_branches(p: _Parser) -> list:
    if _updates_start(p):
        return [(Lit(1), _parse_updates(p))]
    out = []
    while True:
        prob = p.expression()
        p.expect(":")
        out.append((prob, _parse_updates(p)))
        if not p.accept("+"):
            return out


def _diag(diags, severity, msg, tok, end=None):
    end = end or tok
    diags.append(Diagnostic(severity, msg, tok.line, tok.col, end.line, end.col + max(len(end.text), 1)))


def _const_value(e: Expr):
    return e.value if isinstance(e, Lit) else None


def _build_model(raw: dict, overrides: dict, diags: list) -> Model:
    seen: dict = {}

    def declare(name: str, tok: Token, what: str):
        if name in seen:
            _diag(diags, "error", f"{what} '{name}' clashes with an earlier {seen[name]}", tok)
        else:
            seen[name] = what

    # constants, in order, each folded against the earlier ones
    consts: dict = {}
    no_vars = _Resolver({}, consts, {}, diags)
    for name_tok, ctype, value in raw["consts"]:
        name = name_tok.text
        declare(name, name_tok, "constant")
        if name in overrides:
            v = overrides[name]
        elif value is None:
            _diag(diags, "error", f"constant '{name}' has no value", name_tok)
            continue
        else:
            try:
                v = _const_value(fold(no_vars.expr(value)))
            except ExprTypeError as exc:
                _diag(diags, "error", str(exc), name_tok)
                continue
            if v is None:
                _diag(diags, "error", f"constant '{name}' is not a constant expression", name_tok)
                continue
        if ctype == "int" and (isinstance(v, bool) or not float(v).is_integer()):
            _diag(diags, "error", f"constant '{name}' declared int but has value {v}", name_tok)
            continue
        if ctype == "int":
            v = int(v)
        elif ctype == "double":
            v = float(v)
        elif ctype == "bool" and not isinstance(v, bool):
            _diag(diags, "error", f"constant '{name}' declared bool but has value {v}", name_tok)
            continue
        consts[name] = v
    for name in overrides:
        if name not in consts and name not in {t.text for t, _, _ in raw["consts"]}:
            diags.append(Diagnostic("error", f"override for undeclared constant '{name}'", 1, 1))

    # variables
    owner: dict = {}
    var_decls: dict = {}
    for mod_tok, raw_vars, _, _ in raw["modules"]:
        for rv in raw_vars:
            declare(rv.name, rv.tok, "variable")
            owner[rv.name] = mod_tok.text
            bounds = []
            for part in (rv.lo, rv.hi, rv.init):
                v = _const_value(fold(no_vars.expr(part)))
                if isinstance(v, bool) and rv.is_bool:
                    v = int(v)
                if v is None or isinstance(v, bool) or not float(v).is_integer():
                    _diag(diags, "error", f"range and init of '{rv.name}' must be integer constants", rv.tok)
                    v = 0
                bounds.append(int(v))
            lo, hi, init = bounds
            if lo > hi:
                _diag(diags, "error", f"empty range [{lo}..{hi}] for '{rv.name}'", rv.tok)
            elif not lo <= init <= hi:
                _diag(diags, "error", f"init value {init} of '{rv.name}' outside [{lo}..{hi}]", rv.tok)
            var_decls[rv.name] = VariableDecl(rv.name, lo, hi, init, rv.is_bool)
    types = {n: ("bool" if d.is_bool else "int") for n, d in var_decls.items()}
    mod_names: set = set()
    for mod_tok, _, _, _ in raw["modules"]:
        if mod_tok.text in mod_names:
            _diag(diags, "error", f"duplicate module '{mod_tok.text}'", mod_tok)
        mod_names.add(mod_tok.text)

    # labels may use variables, constants and earlier labels
    labels: dict = {}
    for name, body, tok in raw["labels"]:
        if name in labels:
            _diag(diags, "error", f"duplicate label '{name}'", tok)
        res = _Resolver(var_decls, consts, labels, diags)
        e = fold(res.expr(body))
        _check_type(e, types, "bool", f"label '{name}'", tok, diags)
        labels[name] = e

    res = _Resolver(var_decls, consts, labels, diags)
    modules = []
    for mod_tok, raw_vars, raw_cmds, _ in raw["modules"]:
        commands = []
        for rc in raw_cmds:
            guard = fold(res.expr(rc.guard))
            _check_type(guard, types, "bool", "guard", rc.tok, diags)
            branches = []
            for prob, ups in rc.branches:
                pe = fold(res.expr(prob))
                _check_type(pe, types, "number", "probability", rc.tok, diags)
                updates = []
                targets = set()
                for var, e, vtok in ups:
                    e = fold(res.expr(e))
                    if var not in var_decls:
                        _diag(diags, "error", f"update of unknown variable '{var}'", vtok)
                        continue
                    if owner[var] != mod_tok.text:
                        _diag(diags, "error", f"module '{mod_tok.text}' cannot update '{var}' "
                                              f"owned by module '{owner[var]}'", vtok)
                    if var in targets:
                        _diag(diags, "error", f"variable '{var}' updated twice in one branch", vtok)
                    targets.add(var)
                    _check_type(e, types, types[var] if types[var] == "bool" else "int",
                                f"update of '{var}'", vtok, diags)
                    updates.append(Update(var, e))
                branches.append(Branch(pe, tuple(updates)))
            probs = [_const_value(b.prob) for b in branches]
            if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in probs):
                if any(v < 0 or v > 1 for v in probs) or abs(sum(probs) - 1) > PROB_TOL:
                    _diag(diags, "error", f"branch probabilities sum to {sum(probs):g}, not 1", rc.tok, rc.end)
            commands.append(Command(rc.action, guard, tuple(branches), line=rc.tok.line))
        decls = tuple(var_decls[rv.name] for rv in raw_vars if rv.name in var_decls)
        modules.append(Module(mod_tok.text, decls, tuple(commands)))

    rewards = {}
    for name, state_items, action_items, tok in raw["rewards"]:
        if name in rewards:
            _diag(diags, "error", f"duplicate reward structure \"{name}\"", tok)
        si = []
        for guard, value, itok in state_items:
            g, v = fold(res.expr(guard)), fold(res.expr(value))
            _check_type(g, types, "bool", "reward guard", itok, diags)
            _check_type(v, types, "number", "reward value", itok, diags)
            si.append((g, v))
        ai = []
        for label, guard, value, itok in action_items:
            g, v = fold(res.expr(guard)), fold(res.expr(value))
            _check_type(g, types, "bool", "reward guard", itok, diags)
            _check_type(v, types, "number", "reward value", itok, diags)
            ai.append((label, g, v))
        rewards[name] = RewardStructure(name, tuple(si), tuple(ai))

    return Model(tuple(modules), rewards, consts, labels, tuple(t.text for t in raw["sync"]))


def _check_type(e: Expr, types, want: str, what: str, tok: Token, diags) -> None:
    try:
        got = infer_type(e, types)
    except UnknownIdentifier as exc:
        _diag(diags, "error", f"{what}: {exc}", tok)
        return
    except ExprTypeError as exc:
        _diag(diags, "error", f"{what}: {exc}", tok)
        return
    ok = got == want or (want == "number" and got in ("int", "double"))
    if not ok:
        _diag(diags, "error", f"{what} has type {got}, expected {want}", tok)


# --------------------------------------------------------------------------
# properties


def parse_formula(text: str, model: Optional[Model] = None) -> Formula:
    prop = parse_property(text, model)
    if isinstance(prop, ProbabilityProperty):
        return prop.formula
    if not isinstance(prop, Formula):
        raise ParseError([Diagnostic("error", "expected a path formula, got a reward query", 1, 1)])
    return prop


def parse_property(src, model: Optional[Model] = None, default_k: Optional[int] = None):
    """Parse a BLTL formula, ``P..=? [ phi ]`` or ``R{..}..=? [ I=k | C<=k | F<=k phi ]``.

    With a model, identifiers are resolved against its variables, constants
    and labels, and the reward structure name is checked.
    """
    if isinstance(src, str):
        src = SourceText(src)
    p = _Parser(src.content, temporal=True)
    diags: list = []
    try:
        prop = _parse_property_syntax(p, default_k)
    except ParseError as exc:
        raise ParseError(exc.diagnostics, src.origin) from None
    prop = _resolve_property(prop, model, diags)
    if diags:
        raise ParseError(diags, src.origin)
    return prop


def _direction(p: _Parser, head: str) -> Optional[str]:
    if head[1:] in ("min", "max"):
        d = head[1:]
    elif p.at("min") or p.at("max"):
        d = p.next().text
    else:
        d = None
    if not (p.accept("=?") or p.accept("?")) and d is not None:
        p.fail("expected '=?'")
    return d


def _parse_property_syntax(p: _Parser, default_k):
    t = p.peek()
    if t.kind == "id" and t.text in ("P", "Pmin", "Pmax") and (p.at("[", 1) or p.at("=?", 1) or p.at("?", 1)
                                                              or p.peek(1).text in ("min", "max")):
        p.next()
        d = _direction(p, t.text)
        p.expect("[")
        f = _formula(p.expression())
        p.expect("]")
        p.expect_kind("eof", "end of property")
        return ProbabilityProperty(f, d)
    if t.kind == "id" and t.text in ("R", "Rmin", "Rmax") and (p.at("[", 1) or p.at("{", 1) or p.at("=?", 1)
                                                              or p.at("?", 1) or p.peek(1).text in ("min", "max")):
        p.next()
        name = None
        if p.accept("{"):
            name = p.expect_kind("str", "reward structure name").text[1:-1]
            p.expect("}")
        d = _direction(p, t.text)
        p.expect("[")
        kind_tok = p.expect_kind("id", "'I', 'C' or 'F'")
        kind = kind_tok.text
        target = constraint = None
        if kind == "I":
            p.expect("=")
            k = p._bound()
        elif kind == "C":
            p.expect("<=")
            k = p._bound()
        elif kind == "F":
            if p.accept("<="):
                k = p._bound()
            elif default_k is not None:
                k = default_k
            else:
                p.fail("reachability reward needs a bound 'F<=k' (or a default k)")
            target = _formula(p.expression())
        else:
            p.fail("expected 'I', 'C' or 'F'", kind_tok)
        if kind in ("I", "C") and p.accept("given"):
            constraint = _formula(p.expression())
        p.expect("]")
        p.expect_kind("eof", "end of property")
        return ("R", kind, k, name, target, constraint, d, kind_tok)
    f = _formula(p.expression())
    p.expect_kind("eof", "end of property")
    return f


def _resolve_property(prop, model: Optional[Model], diags):
    if model is None:
        res = _FreeResolver()
    else:
        res = _Resolver(model.var_index, model.constants, model.labels, diags)
    if isinstance(prop, Formula):
        f = res.formula(prop)
        _check_formula(f, model, diags)
        return f
    if isinstance(prop, ProbabilityProperty):
        f = res.formula(prop.formula)
        _check_formula(f, model, diags)
        return ProbabilityProperty(f, prop.direction)
    _, kind, k, name, target, constraint, d, tok = prop
    if target is not None:
        target = res.formula(target)
        _check_formula(target, model, diags)
        if not bltl.is_state_formula(target):
            _diag(diags, "error", "reachability target must not contain temporal operators", tok)
            target = bltl.TRUE_F
    if constraint is not None:
        constraint = res.formula(constraint)
        _check_formula(constraint, model, diags)
    if model is not None:
        if name is not None and name not in model.rewards:
            _diag(diags, "error", f"undeclared reward structure \"{name}\"", tok)
        elif name is None and len(model.rewards) != 1:
            _diag(diags, "error", "model has several (or no) reward structures; name one with R{\"..\"}", tok)
    return RewardProperty(kind, k, name, target, constraint, d)


class _FreeResolver(_Resolver):
    """Without a model every identifier is taken to be a variable."""

    def __init__(self):
        super().__init__({}, {}, {}, [])

    def expr(self, e):
        if isinstance(e, _Name):
            return Var(e.name)
        if isinstance(e, _LabelRef):
            return Var(e.name)
        return super().expr(e)


def _check_formula(f: Formula, model: Optional[Model], diags) -> None:
    if model is None:
        return
    for a in _atoms(f):
        try:
            t = infer_type(a.expr, model.types)
        except (ExprTypeError, UnknownIdentifier) as exc:
            diags.append(Diagnostic("error", f"atom '{to_text(a.expr)}': {exc}", 1, 1))
            continue
        if t != "bool":
            diags.append(Diagnostic("error", f"atom '{to_text(a.expr)}' has type {t}, expected bool", 1, 1))


def _atoms(f: Formula):
    if isinstance(f, bltl.Atom):
        yield f
    for c in bltl.children(f):
        yield from _atoms(c)


# --------------------------------------------------------------------------
# printing


def print_model(model: Model) -> str:
    lines = ["mdp", ""]
    for name, v in model.constants.items():
        ctype = "bool" if isinstance(v, bool) else "int" if isinstance(v, int) else "double"
        lines.append(f"const {ctype} {name} = {format_value(v)};")
    if model.sync_labels:
        lines.append(f"sync {', '.join(model.sync_labels)};")
    for m in model.modules:
        lines.append("")
        lines.append(f"module {m.name}")
        for v in m.variables:
            if v.is_bool:
                lines.append(f"  {v.name} : bool init {format_value(bool(v.init))};")
            else:
                lines.append(f"  {v.name} : [{v.lo}..{v.hi}] init {v.init};")
        for c in m.commands:
            lines.append(f"  [{c.action or ''}] {to_text(c.guard)} -> {_branches_text(c.branches)};")
        lines.append("endmodule")
    for name, e in model.labels.items():
        lines.append("")
        lines.append(f"label \"{name}\" = {to_text(e)};")
    for r in model.rewards.values():
        lines.append("")
        lines.append(f"rewards \"{r.name}\"")
        for g, v in r.state_items:
            lines.append(f"  {to_text(g)} : {to_text(v)};")
        for label, g, v in r.action_items:
            lines.append(f"  [{label or ''}] {to_text(g)} : {to_text(v)};")
        lines.append("endrewards")
    return "\n".join(lines) + "\n"


def _updates_text(updates) -> str:
    if not updates:
        return "true"
    return " & ".join(f"({u.var}'={to_text(u.expr)})" for u in updates)


def _branches_text(branches) -> str:
    return " + ".join(f"{to_text(b.prob, 6)}:{_updates_text(b.updates)}" for b in branches)


# --------------------------------------------------------------------------
# static validation


@dataclass(frozen=True)
class ValidationReport:
    diagnostics: tuple
    layout: tuple  # ((variable, bits), ...) in trace-vector order
    total_bits: int


def validate(model: Model) -> ValidationReport:
    diags = []
    for m in model.modules:
        for c in m.commands:
            why = _contradiction(c.guard, model)
            if why:
                diags.append(Diagnostic("warning", f"module '{m.name}': guard can never hold ({why})", c.line, 1))
    declared: dict = {}
    for m in model.modules:
        for c in m.commands:
            if c.action:
                declared.setdefault(c.action, set()).add(m.name)
    for label in model.sync_labels:
        mods = declared.get(label, set())
        if len(mods) < 2:
            where = f"only module '{next(iter(mods))}'" if mods else "no module"
            diags.append(Diagnostic("warning", f"label '{label}' must synchronise but {where} declares it", 1, 1))
    for r in model.rewards.values():
        for label, _, _ in r.action_items:
            if label is not None and label not in declared:
                diags.append(Diagnostic("warning", f"reward \"{r.name}\" refers to action '{label}' "
                                                   "that no module declares", 1, 1))
    layout = tuple((v.name, v.bit_width) for v in model.variables)
    return ValidationReport(tuple(diags), layout, sum(b for _, b in layout))


def _conjuncts(e: Expr):
    if isinstance(e, Binary) and e.op == "&":
        yield from _conjuncts(e.left)
        yield from _conjuncts(e.right)
    else:
        yield e


_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "=", "!=": "!="}


def _contradiction(guard: Expr, model: Model) -> Optional[str]:
    """Detect guards that are false by syntax alone: literal false or empty variable intervals."""
    if isinstance(guard, Lit) and guard.value is False:
        return "literally false"
    bounds = {v.name: [v.lo, v.hi] for v in model.variables if not v.is_bool}
    for c in _conjuncts(guard):
        if isinstance(c, Lit) and c.value is False:
            return "contains false"
        if not (isinstance(c, Binary) and c.op in _FLIP):
            continue
        left, op, right = c.left, c.op, c.right
        if isinstance(left, Lit) and isinstance(right, Var):
            left, op, right = right, _FLIP[op], left
        if not (isinstance(left, Var) and isinstance(right, Lit) and left.name in bounds):
            continue
        if isinstance(right.value, bool):
            continue
        b = bounds[left.name]
        v = right.value
        if op == "=":
            b[0], b[1] = max(b[0], v), min(b[1], v)
        elif op == "<":
            b[1] = min(b[1], v - 1 if float(v).is_integer() else int(v // 1))
        elif op == "<=":
            b[1] = min(b[1], int(v // 1))
        elif op == ">":
            b[0] = max(b[0], int(v // 1) + 1)
        elif op == ">=":
            b[0] = max(b[0], -int(-v // 1))
        if b[0] > b[1]:
            return f"no value of '{left.name}' satisfies it"
    return None


def load_model(path, constants: Optional[Mapping] = None) -> Model:
    return parse_model(SourceText.from_file(path), constants)


__all__ = [
    "Diagnostic", "ParseError", "SourceText", "ValidationReport", "load_model", "parse_formula",
    "parse_model", "parse_property", "print_model", "tokenize", "validate", "substitute", "free_vars",
    "TRUE",
]
