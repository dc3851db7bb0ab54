"""Query grammar for the engine's two statement forms.

    SELECT ANY-K(<int>) FROM <table> [WHERE <pred>] [GROUP BY <attr>[, <attr>]]
    SELECT <attr>, AVG|SUM(<measure>) FROM <table> [WHERE <pred>]
        GROUP BY <attr> ESTIMATE ALPHA <float> USING HT|RATIO

Predicates are equality tests ``attr = 'value'`` combined with AND/OR and
parentheses; AND binds tighter. Parsing then printing a query yields a
canonical text whose re-parse is identical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import QueryParseError
from .predicate import And, Leaf, Or

__all__ = ["QueryAst", "parse_query", "print_query"]


@dataclass
class QueryAst:
    kind: str                    # "anyk" | "estimate"
    table: str
    k: int | None = None         # estimate queries carry no k in the text
    predicate: object = None
    group_by: tuple = ()
    aggregate: tuple | None = None   # ("AVG" | "SUM", measure)
    select_attr: str | None = None
    alpha: float | None = None
    estimator: str | None = None     # "ht" | "ratio"
    algorithm: str | None = None     # planner choice, set by the caller

    def __str__(self):
        return print_query(self)


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<anyk>ANY-K\b)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<string>'[^']*')
  | (?P<sym>[(),=])
""", re.VERBOSE | re.IGNORECASE)

_KEYWORDS = {"select", "from", "where", "group", "by", "and", "or",
             "estimate", "alpha", "using", "avg", "sum", "ht", "ratio"}


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise QueryParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            kind = m.lastgroup
            value = m.group()
            if kind == "ident" and value.lower() in _KEYWORDS:
                kind = value.lower()
            tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind, what=None):
        tok = self.next()
        if tok[0] != kind:
            raise QueryParseError(f"expected {what or kind}, found {tok[1] or 'end of input'}",
                                  tok[2])
        return tok

    def accept(self, kind):
        if self.peek()[0] == kind:
            return self.next()
        return None

    # predicate grammar: or_expr := and_expr (OR and_expr)*
    def pred(self):
        parts = [self.and_expr()]
        while self.accept("or"):
            parts.append(self.and_expr())
        return parts[0] if len(parts) == 1 else Or(*parts)

    def and_expr(self):
        parts = [self.term()]
        while self.accept("and"):
            parts.append(self.term())
        return parts[0] if len(parts) == 1 else And(*parts)

    def term(self):
        tok = self.peek()
        if tok[0] == "sym" and tok[1] == "(":
            self.next()
            inner = self.pred()
            closing = self.next()
            if closing[:2] != ("sym", ")"):
                raise QueryParseError("expected ')'", closing[2])
            return inner
        attr = self.expect("ident", "attribute name")[1]
        eq = self.next()
        if eq[:2] != ("sym", "="):
            raise QueryParseError("expected '='", eq[2])
        value = self.expect("string", "quoted value")[1]
        return Leaf(attr, value[1:-1])


def parse_query(text: str) -> QueryAst:
    """Parse a query string; raises QueryParseError with the failing position."""
    p = _Parser(text)
    p.expect("select", "SELECT")

    if p.peek()[0] == "anyk":
        p.next()
        p.expect("sym", "'('")
        tok = p.expect("number", "an integer k")
        if "." in tok[1]:
            raise QueryParseError("k must be an integer", tok[2])
        k = int(tok[1])
        closing = p.next()
        if closing[:2] != ("sym", ")"):
            raise QueryParseError("expected ')'", closing[2])
        p.expect("from", "FROM")
        table = p.expect("ident", "table name")[1]
        predicate = p.pred() if p.accept("where") else None
        group_by = ()
        if p.accept("group"):
            p.expect("by", "BY")
            attrs = [p.expect("ident", "attribute name")[1]]
            while p.peek()[:2] == ("sym", ","):
                p.next()
                attrs.append(p.expect("ident", "attribute name")[1])
            group_by = tuple(attrs)
        p.expect("eof", "end of query")
        return QueryAst("anyk", table, k=k, predicate=predicate, group_by=group_by)

    select_attr = p.expect("ident", "attribute name")[1]
    comma = p.next()
    if comma[:2] != ("sym", ","):
        raise QueryParseError("expected ',' after the grouping attribute", comma[2])
    agg_tok = p.next()
    if agg_tok[0] not in ("avg", "sum"):
        raise QueryParseError("expected AVG or SUM", agg_tok[2])
    p.expect("sym", "'('")
    measure = p.expect("ident", "measure name")[1]
    closing = p.next()
    if closing[:2] != ("sym", ")"):
        raise QueryParseError("expected ')'", closing[2])
    p.expect("from", "FROM")
    table = p.expect("ident", "table name")[1]
    predicate = p.pred() if p.accept("where") else None
    p.expect("group", "GROUP BY")
    p.expect("by", "BY")
    group_attr = p.expect("ident", "attribute name")[1]
    if group_attr != select_attr:
        raise QueryParseError(
            f"GROUP BY attribute {group_attr!r} must match the selected attribute"
            f" {select_attr!r}", p.tokens[p.i - 1][2])
    p.expect("estimate", "ESTIMATE")
    p.expect("alpha", "ALPHA")
    alpha = float(p.expect("number", "a fraction")[1])
    p.expect("using", "USING")
    est_tok = p.next()
    if est_tok[0] not in ("ht", "ratio"):
        raise QueryParseError("expected HT or RATIO", est_tok[2])
    p.expect("eof", "end of query")
    return QueryAst("estimate", table, predicate=predicate,
                    group_by=(group_attr,), aggregate=(agg_tok[1].upper(), measure),
                    select_attr=select_attr, alpha=alpha, estimator=est_tok[0])


def _print_pred(pred, parent=None) -> str:
    if isinstance(pred, Leaf):
        return f"{pred.attr} = '{pred.value}'"
    if isinstance(pred, And):
        text = " AND ".join(_print_pred(c, And) for c in pred.children)
        return text
    text = " OR ".join(_print_pred(c, Or) for c in pred.children)
    if parent is And:
        return f"({text})"
    return text


def print_query(ast: QueryAst) -> str:
    """Canonical text form; parsing it again reproduces the AST."""
    if ast.kind == "anyk":
        out = f"SELECT ANY-K({ast.k}) FROM {ast.table}"
        if ast.predicate is not None:
            out += f" WHERE {_print_pred(ast.predicate)}"
        if ast.group_by:
            out += " GROUP BY " + ", ".join(ast.group_by)
        return out
    agg, measure = ast.aggregate
    out = f"SELECT {ast.select_attr}, {agg}({measure}) FROM {ast.table}"
    if ast.predicate is not None:
        out += f" WHERE {_print_pred(ast.predicate)}"
    out += f" GROUP BY {ast.group_by[0]}"
    out += f" ESTIMATE ALPHA {ast.alpha:g} USING {ast.estimator.upper()}"
    return out
