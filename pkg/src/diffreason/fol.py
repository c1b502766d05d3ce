"""Function-free first-order logic: AST, parser, printer and validation.

Knowledge bases are written in a small text format::

    # comment
    pred chair/1 @types;
    pred partOf/2;
    forall x,y: chair(x) & partOf(y,x) -> cushion(y) | armRest(y)

Precedence from tightest to loosest is ``~``, ``&``, ``|``, ``->``.
``&`` and ``|`` associate to the left, ``->`` to the right.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union


@dataclass(frozen=True)
class PredicateSig:
    name: str
    arity: int
    group: Optional[str] = None

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError(f"predicate {self.name!r} must have arity >= 1")

    def __str__(self):
        suffix = f" @{self.group}" if self.group else ""
        return f"pred {self.name}/{self.arity}{suffix}"


@dataclass(frozen=True)
class Variable:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Constant:
    """An object index inside a scene."""

    index: int

    def __str__(self):
        return f"${self.index}"


Term = Union[Variable, Constant]


class Formula:
    """Base class of all formula nodes."""

    def children(self) -> tuple["Formula", ...]:
        return ()

    def __str__(self):
        return format_formula(self)


@dataclass(frozen=True, eq=True)
class Atom(Formula):
    pred: PredicateSig
    terms: tuple[Term, ...]


@dataclass(frozen=True, eq=True)
class Not(Formula):
    child: Formula

    def children(self):
        return (self.child,)


@dataclass(frozen=True, eq=True)
class And(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, eq=True)
class Or(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, eq=True)
class Implies(Formula):
    antecedent: Formula
    consequent: Formula

    def children(self):
        return (self.antecedent, self.consequent)


@dataclass(frozen=True, eq=True)
class Forall(Formula):
    variables: tuple[str, ...]
    body: Formula

    def children(self):
        return (self.body,)


@dataclass(frozen=True)
class KnowledgeBase:
    signature: tuple[PredicateSig, ...]
    formulas: tuple[Formula, ...]

    @property
    def is_implication(self) -> tuple[bool, ...]:
        return tuple(decompose_implication(f) is not None for f in self.formulas)

    def predicate(self, name: str) -> PredicateSig:
        for p in self.signature:
            if p.name == name:
                return p
        raise KeyError(name)

    def groups(self) -> dict[str, tuple[PredicateSig, ...]]:
        """Mutual-exclusivity groups in declaration order."""
        out: dict[str, list[PredicateSig]] = {}
        for p in self.signature:
            if p.group is not None:
                out.setdefault(p.group, []).append(p)
        return {g: tuple(ps) for g, ps in out.items()}


# --------------------------------------------------------------------------
# traversal helpers

def walk(f: Formula) -> Iterator[Formula]:
    """Pre-order traversal."""
    yield f
    for c in f.children():
        yield from walk(c)


def atoms(f: Formula) -> list[Atom]:
    return [n for n in walk(f) if isinstance(n, Atom)]


def free_variables(f: Formula) -> set[str]:
    if isinstance(f, Atom):
        return {t.name for t in f.terms if isinstance(t, Variable)}
    if isinstance(f, Forall):
        return free_variables(f.body) - set(f.variables)
    out: set[str] = set()
    for c in f.children():
        out |= free_variables(c)
    return out


def prenex(f: Formula) -> tuple[tuple[str, ...], Formula]:
    """Split a formula into its quantifier prefix and body.

    A formula without a leading ``Forall`` is treated as having an empty prefix.
    """
    if isinstance(f, Forall):
        return f.variables, f.body
    return (), f


def decompose_implication(f: Formula) -> Optional[tuple[Formula, Formula]]:
    _, body = prenex(f)
    if isinstance(body, Implies):
        return body.antecedent, body.consequent
    return None


# --------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    kind: str
    formula: Optional[int]
    message: str

    def __str__(self):
        where = f"formula {self.formula}: " if self.formula is not None else ""
        return f"{where}{self.kind}: {self.message}"


def validate(kb: KnowledgeBase) -> list[Violation]:
    """Check signature and formula invariants; returns violations, never raises."""
    out: list[Violation] = []
    names: dict[str, PredicateSig] = {}
    for p in kb.signature:
        if p.name in names:
            out.append(Violation("duplicate-predicate", None, f"{p.name} declared twice"))
        names[p.name] = p
        if p.group is not None and p.arity != 1:
            out.append(Violation("group-arity", None,
                                 f"{p.name}/{p.arity} is in group @{p.group} but grouped predicates must be unary"))

    for i, f in enumerate(kb.formulas):
        variables, body = prenex(f)
        if len(set(variables)) != len(variables):
            out.append(Violation("duplicate-variable", i, f"quantifier prefix repeats a variable: {', '.join(variables)}"))
        for node in walk(body):
            if isinstance(node, Forall):
                out.append(Violation("non-prenex", i, "quantifier inside the formula body"))
                break
        used: set[str] = set()
        for a in atoms(body):
            declared = names.get(a.pred.name)
            if declared is None:
                out.append(Violation("undeclared-predicate", i, f"{a.pred.name} is not declared"))
            elif declared != a.pred:
                out.append(Violation("signature-mismatch", i, f"{a.pred.name} does not match its declaration"))
            if len(a.terms) != a.pred.arity:
                out.append(Violation("arity", i,
                                     f"{a.pred.name} takes {a.pred.arity} argument(s), got {len(a.terms)}"))
            for t in a.terms:
                if isinstance(t, Variable):
                    used.add(t.name)
                    if t.name not in variables:
                        out.append(Violation("unbound-variable", i, f"variable {t.name} is not quantified"))
        for v in variables:
            if v not in used:
                out.append(Violation("unused-variable", i, f"quantified variable {v} does not occur in the body"))
    return out


# --------------------------------------------------------------------------
# parsing

class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<arrow>->)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym>[~&|(),:;/@])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            value = m.group()
            if kind == "sym" or kind == "arrow":
                kind = value
            toks.append(_Tok(kind, value, line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.preds: dict[str, PredicateSig] = {}
        self.formulas: list[Formula] = []

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: Optional[_Tok] = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.line, tok.col)

    def expect(self, kind: str) -> _Tok:
        tok = self.tok
        if tok.kind != kind:
            found = tok.text or "end of input"
            self.error(f"expected {kind!r}, found {found!r}")
        self.i += 1
        return tok

    def accept(self, kind: str) -> Optional[_Tok]:
        if self.tok.kind == kind:
            self.i += 1
            return self.toks[self.i - 1]
        return None

    def parse_file(self) -> KnowledgeBase:
        while self.tok.kind != "eof":
            if self.tok.kind == "ident" and self.tok.text == "pred":
                self.parse_decl()
            elif self.tok.kind == "ident" and self.tok.text == "forall":
                self.formulas.append(self.parse_rule())
            else:
                self.error(f"expected 'pred' or 'forall', found {self.tok.text!r}")
        return KnowledgeBase(tuple(self.preds.values()), tuple(self.formulas))

    def parse_decl(self):
        self.i += 1
        name_tok = self.expect("ident")
        self.expect("/")
        arity_tok = self.expect("int")
        group = None
        if self.accept("@"):
            group = self.expect("ident").text
        self.accept(";")
        arity = int(arity_tok.text)
        if arity < 1:
            self.error("arity must be at least 1", arity_tok)
        if name_tok.text in self.preds:
            self.error(f"predicate {name_tok.text} declared twice", name_tok)
        if group is not None and arity != 1:
            self.error(f"grouped predicate {name_tok.text} must be unary", arity_tok)
        self.preds[name_tok.text] = PredicateSig(name_tok.text, arity, group)

    def parse_rule(self) -> Formula:
        self.i += 1
        variables = [self.expect("ident")]
        while self.accept(","):
            variables.append(self.expect("ident"))
        self.expect(":")
        seen = set()
        for v in variables:
            if v.text in seen:
                self.error(f"variable {v.text} quantified twice", v)
            seen.add(v.text)
        self.bound = seen
        self.used: set[str] = set()
        body = self.parse_expr()
        for v in variables:
            if v.text not in self.used:
                self.error(f"quantified variable {v.text} does not occur in the body", v)
        return Forall(tuple(v.text for v in variables), body)

    def parse_expr(self) -> Formula:
        left = self.parse_disj()
        if self.accept("->"):
            return Implies(left, self.parse_expr())
        return left

    def parse_disj(self) -> Formula:
        f = self.parse_conj()
        while self.accept("|"):
            f = Or(f, self.parse_conj())
        return f

    def parse_conj(self) -> Formula:
        f = self.parse_unary()
        while self.accept("&"):
            f = And(f, self.parse_unary())
        return f

    def parse_unary(self) -> Formula:
        if self.accept("~"):
            return Not(self.parse_unary())
        if self.accept("("):
            f = self.parse_expr()
            self.expect(")")
            return f
        return self.parse_atom()

    def parse_atom(self) -> Atom:
        name = self.expect("ident")
        if name.text in ("forall", "pred"):
            self.error(f"unexpected keyword {name.text!r}", name)
        self.expect("(")
        args = [self.expect("ident")]
        while self.accept(","):
            args.append(self.expect("ident"))
        self.expect(")")
        pred = self.preds.get(name.text)
        if pred is None:
            self.error(f"undeclared predicate {name.text}", name)
        if len(args) != pred.arity:
            self.error(f"arity mismatch: {name.text} takes {pred.arity} argument(s), got {len(args)}", name)
        for a in args:
            if a.text not in self.bound:
                self.error(f"unbound variable {a.text}", a)
            self.used.add(a.text)
        return Atom(pred, tuple(Variable(a.text) for a in args))


def parse_kb(source_text: str) -> KnowledgeBase:
    """Parse knowledge-base source text; raises :class:`ParseError`."""
    return _Parser(source_text).parse_file()


def load_kb(path) -> KnowledgeBase:
    with open(path, encoding="utf-8") as fh:
        return parse_kb(fh.read())


# --------------------------------------------------------------------------
# printing

_PREC = {Implies: 1, Or: 2, And: 3, Not: 4, Atom: 5}


def format_formula(f: Formula) -> str:
    if isinstance(f, Forall):
        return f"forall {','.join(f.variables)}: {format_formula(f.body)}"
    return _fmt(f)


def _fmt(f: Formula) -> str:
    if isinstance(f, Atom):
        return f"{f.pred.name}({','.join(str(t) for t in f.terms)})"
    if isinstance(f, Not):
        return "~" + _wrap(f.child, _PREC[Not])
    if isinstance(f, Forall):
        return "(" + format_formula(f) + ")"
    prec = _PREC[type(f)]
    op = {And: " & ", Or: " | ", Implies: " -> "}[type(f)]
    left, right = f.children()
    if isinstance(f, Implies):
        # right-associative
        return _wrap(left, prec + 1) + op + _wrap(right, prec)
    return _wrap(left, prec) + op + _wrap(right, prec + 1)


def _wrap(f: Formula, min_prec: int) -> str:
    text = _fmt(f)
    if isinstance(f, Forall) or _PREC[type(f)] >= min_prec:
        return text
    return f"({text})"


def format_kb(kb: KnowledgeBase) -> str:
    lines = [str(p) + ";" for p in kb.signature]
    lines += [format_formula(f) for f in kb.formulas]
    return "\n".join(lines) + "\n"
