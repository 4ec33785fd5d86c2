"""Mini classified-advertisement (ClassAd) expression language.

An ad is an ordered map of attribute name -> expression.  Requests and
resource advertisements are both ads; an expression in one ad may refer to
attributes of the other through the ``other.`` scope.  Evaluation is total:
type mismatches produce the ``error`` value and missing attributes produce
``undefined`` instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Optional, Tuple, Union


# ---------------------------------------------------------------------------
# Values


class _Singleton:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance


class Undefined(_Singleton):
    """Result of referencing a missing attribute."""

    def __repr__(self):
        return "undefined"


class EvalError(_Singleton):
    """Result of an ill-typed operation.  Evaluation never raises."""

    def __repr__(self):
        return "error"


UNDEFINED = Undefined()
ERROR = EvalError()

# Integers, reals, text, booleans and lists are plain Python values; the two
# sentinels above complete the value domain.
Value = Union[int, float, str, bool, tuple, Undefined, EvalError]


def is_number(v: Value) -> bool:
    # bool is an int subclass but is not a ClassAd number
    return isinstance(v, (int, float)) and not isinstance(v, bool)


# ---------------------------------------------------------------------------
# Expressions


class Scope(Enum):
    SELF = "self"
    OTHER = "other"
    BARE = ""


@dataclass(frozen=True)
class Literal:
    value: Value


@dataclass(frozen=True)
class AttrRef:
    scope: Scope
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple["Expr", ...]


@dataclass(frozen=True)
class ListExpr:
    items: Tuple["Expr", ...]


Expr = Union[Literal, AttrRef, Unary, Binary, Call, ListExpr]


# ---------------------------------------------------------------------------
# Errors


class ClassAdError(Exception):
    pass


class ClassAdSyntaxError(ClassAdError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class DuplicateAttributeError(ClassAdError):
    def __init__(self, name: str):
        super().__init__(f"duplicate attribute: {name!r}")
        self.name = name


# ---------------------------------------------------------------------------
# Ads


class ClassAd:
    """Ordered attribute -> expression map with case-insensitive names."""

    def __init__(self, attrs: Iterable[Tuple[str, Expr]] = ()):
        self._attrs: dict[str, Tuple[str, Expr]] = {}
        for name, expr in attrs:
            self._set(name, expr)

    def _set(self, name: str, expr: Expr) -> None:
        key = name.lower()
        if key in self._attrs:
            raise DuplicateAttributeError(name)
        # A requirements attribute given as a quoted string holds an
        # expression; unwrap it so it can be evaluated against another ad.
        if key == "requirements" and isinstance(expr, Literal) and isinstance(expr.value, str):
            expr = parse_expr(expr.value)
        self._attrs[key] = (name, expr)

    def get(self, name: str) -> Optional[Expr]:
        entry = self._attrs.get(name.lower())
        return entry[1] if entry else None

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._attrs

    def __iter__(self) -> Iterator[Tuple[str, Expr]]:
        return iter(self._attrs.values())

    def __len__(self) -> int:
        return len(self._attrs)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(orig for orig, _ in self._attrs.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClassAd):
            return NotImplemented
        mine = [(k, e) for k, (_, e) in self._attrs.items()]
        theirs = [(k, e) for k, (_, e) in other._attrs.items()]
        return mine == theirs

    def __repr__(self):
        return f"ClassAd({self.names})"


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    rank: float
    resource_name: str


# ---------------------------------------------------------------------------
# Lexer

_OPERATORS = (
    "&&", "||", "==", "!=", "<=", ">=",
    "&", "|", "<", ">", "!", "+", "-", "*", "/",
    "(", ")", "[", "]", "{", "}", ";", ",", "=", ".",
)

_SUFFIX = {"k": 2**10, "m": 2**20, "g": 2**30}

_ESCAPES = {"\\": "\\", '"': '"', "'": "'", "n": "\n", "t": "\t", "r": "\r"}


@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT NUMBER STRING OP EOF
    text: str
    value: Value
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def err(msg, ln=None, cl=None):
        raise ClassAdSyntaxError(msg, ln or line, cl or col)

    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c.isspace():
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            is_real = False
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                is_real = True
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    is_real = True
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            mult = 1
            if j < n and text[j].lower() in _SUFFIX:
                mult = _SUFFIX[text[j].lower()]
                j += 1
            if j < n and (text[j].isalnum() or text[j] == "_"):
                err("malformed number literal", start_line, start_col)
            raw = text[i:j].rstrip("KMGkmg")
            value: Value = (float(raw) if is_real else int(raw)) * mult
            tokens.append(_Token("NUMBER", text[i:j], value, start_line, start_col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("IDENT", text[i:j], text[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        if c in "'\"":
            quote = c
            j = i + 1
            out = []
            while True:
                if j >= n:
                    err("unterminated string", start_line, start_col)
                ch = text[j]
                if ch == quote:
                    j += 1
                    break
                if ch == "\\":
                    if j + 1 >= n or text[j + 1] not in _ESCAPES:
                        err("bad escape in string", line, start_col)
                    out.append(_ESCAPES[text[j + 1]])
                    j += 2
                    continue
                out.append(ch)
                j += 1
            raw = text[i:j]
            tokens.append(_Token("STRING", raw, "".join(out), start_line, start_col))
            # strings may span lines; keep positions accurate past them
            newlines = raw.count("\n")
            if newlines:
                line += newlines
                col = len(raw) - raw.rfind("\n")
            else:
                col += len(raw)
            i = j
            continue
        for op in _OPERATORS:
            if text.startswith(op, i):
                tokens.append(_Token("OP", op, op, start_line, start_col))
                i += len(op)
                col += len(op)
                break
        else:
            err(f"unexpected character {c!r}")
    tokens.append(_Token("EOF", "", None, line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser

_KEYWORD_VALUES = {
    "true": True,
    "false": False,
    "undefined": UNDEFINED,
    "error": ERROR,
}


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.cur
        self.pos += 1
        return tok

    def expect(self, op: str) -> _Token:
        tok = self.cur
        if tok.kind != "OP" or tok.text != op:
            self.fail(f"expected {op!r}, found {tok.text or 'end of input'!r}")
        return self.advance()

    def fail(self, msg: str):
        raise ClassAdSyntaxError(msg, self.cur.line, self.cur.col)

    def at_op(self, *ops: str) -> bool:
        return self.cur.kind == "OP" and self.cur.text in ops

    # grammar: '[' (IDENT '=' expr ';')* ']'
    def parse_ad(self) -> ClassAd:
        self.expect("[")
        attrs: list[Tuple[str, Expr]] = []
        seen: set[str] = set()
        while not self.at_op("]"):
            tok = self.cur
            if tok.kind != "IDENT":
                self.fail(f"expected attribute name, found {tok.text or 'end of input'!r}")
            name = self.advance().text
            if name.lower() in seen:
                raise DuplicateAttributeError(name)
            seen.add(name.lower())
            self.expect("=")
            expr = self.parse_or()
            self.expect(";")
            attrs.append((name, expr))
        self.expect("]")
        if self.cur.kind != "EOF":
            self.fail("trailing input after ad")
        return ClassAd(attrs)

    def parse_only_expr(self) -> Expr:
        expr = self.parse_or()
        if self.cur.kind != "EOF":
            self.fail("trailing input after expression")
        return expr

    def parse_or(self) -> Expr:
        expr = self.parse_and()
        while self.at_op("||", "|"):
            self.advance()
            expr = Binary("||", expr, self.parse_and())
        return expr

    def parse_and(self) -> Expr:
        expr = self.parse_cmp()
        while self.at_op("&&", "&"):
            self.advance()
            expr = Binary("&&", expr, self.parse_cmp())
        return expr

    def parse_cmp(self) -> Expr:
        expr = self.parse_add()
        while self.at_op("==", "!=", "<", "<=", ">", ">="):
            op = self.advance().text
            expr = Binary(op, expr, self.parse_add())
        return expr

    def parse_add(self) -> Expr:
        expr = self.parse_mul()
        while self.at_op("+", "-"):
            op = self.advance().text
            expr = Binary(op, expr, self.parse_mul())
        return expr

    def parse_mul(self) -> Expr:
        expr = self.parse_unary()
        while self.at_op("*", "/"):
            op = self.advance().text
            expr = Binary(op, expr, self.parse_unary())
        return expr

    def parse_unary(self) -> Expr:
        if self.at_op("!", "-", "+"):
            op = self.advance().text
            return Unary(op, self.parse_unary())
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.cur
        if tok.kind == "NUMBER":
            self.advance()
            return Literal(tok.value)
        if tok.kind == "STRING":
            self.advance()
            return Literal(tok.value)
        if self.at_op("("):
            self.advance()
            expr = self.parse_or()
            self.expect(")")
            return expr
        if self.at_op("{"):
            self.advance()
            items: list[Expr] = []
            if not self.at_op("}"):
                items.append(self.parse_or())
                while self.at_op(","):
                    self.advance()
                    items.append(self.parse_or())
            self.expect("}")
            return ListExpr(tuple(items))
        if tok.kind == "IDENT":
            self.advance()
            lowered = tok.text.lower()
            if lowered in _KEYWORD_VALUES and not self.at_op("(", "."):
                return Literal(_KEYWORD_VALUES[lowered])
            if lowered in ("self", "other") and self.at_op("."):
                self.advance()
                name_tok = self.cur
                if name_tok.kind != "IDENT":
                    self.fail("expected attribute name after '.'")
                self.advance()
                scope = Scope.SELF if lowered == "self" else Scope.OTHER
                return AttrRef(scope, name_tok.text)
            if self.at_op("."):
                self.fail(f"unknown scope {tok.text!r} (only self/other may be dotted)")
            if self.at_op("("):
                self.advance()
                args: list[Expr] = []
                if not self.at_op(")"):
                    args.append(self.parse_or())
                    while self.at_op(","):
                        self.advance()
                        args.append(self.parse_or())
                self.expect(")")
                return Call(tok.text, tuple(args))
            return AttrRef(Scope.BARE, tok.text)
        self.fail(f"unexpected token {tok.text or 'end of input'!r}")


def parse_ad(text: str) -> ClassAd:
    """Parse ad source text of the form ``[ name = expr; ... ]``."""
    return _Parser(text).parse_ad()


def parse_expr(text: str) -> Expr:
    """Parse a bare expression (as found inside a requirements string)."""
    return _Parser(text).parse_only_expr()


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(expr: Expr, self_ad: ClassAd, other_ad: Optional[ClassAd] = None) -> Value:
    """Evaluate ``expr`` with attribute lookups against the two ads.

    ``other.x`` resolves in other_ad; ``self.x`` and bare names resolve in
    self_ad.  Never raises: missing attributes yield undefined, ill-typed
    operations and reference cycles yield error.
    """
    return _eval(expr, self_ad, other_ad, frozenset())


def _eval(expr: Expr, self_ad, other_ad, active: frozenset) -> Value:
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, ListExpr):
        return tuple(_eval(item, self_ad, other_ad, active) for item in expr.items)
    if isinstance(expr, AttrRef):
        return _resolve(expr, self_ad, other_ad, active)
    if isinstance(expr, Unary):
        return _apply_unary(expr.op, _eval(expr.operand, self_ad, other_ad, active))
    if isinstance(expr, Binary):
        return _apply_binary(expr, self_ad, other_ad, active)
    if isinstance(expr, Call):
        return _apply_call(expr, self_ad, other_ad, active)
    return ERROR


def _resolve(ref: AttrRef, self_ad, other_ad, active: frozenset) -> Value:
    if ref.scope is Scope.OTHER:
        ad, me, other = other_ad, other_ad, self_ad
    else:
        ad, me, other = self_ad, self_ad, other_ad
    if ad is None:
        return UNDEFINED
    target = ad.get(ref.name)
    if target is None:
        return UNDEFINED
    key = (id(ad), ref.name.lower())
    if key in active:
        return ERROR
    return _eval(target, me, other, active | {key})


def _apply_unary(op: str, v: Value) -> Value:
    if op == "!":
        if v is True:
            return False
        if v is False:
            return True
        if v is UNDEFINED:
            return UNDEFINED
        return ERROR
    if v is ERROR:
        return ERROR
    if v is UNDEFINED:
        return UNDEFINED
    if not is_number(v):
        return ERROR
    return -v if op == "-" else v


def _apply_binary(expr: Binary, self_ad, other_ad, active) -> Value:
    op = expr.op
    if op in ("&&", "||"):
        a = _eval(expr.lhs, self_ad, other_ad, active)
        # short-circuit on the dominating operand
        if op == "&&" and a is False:
            return False
        if op == "||" and a is True:
            return True
        b = _eval(expr.rhs, self_ad, other_ad, active)
        return _logic(op, a, b)
    a = _eval(expr.lhs, self_ad, other_ad, active)
    b = _eval(expr.rhs, self_ad, other_ad, active)
    if op in ("==", "!=", "<", "<=", ">", ">="):
        return _compare(op, a, b)
    return _arith(op, a, b)


def _tristate(v: Value) -> Value:
    if v is True or v is False or v is UNDEFINED:
        return v
    return ERROR


def _logic(op: str, a: Value, b: Value) -> Value:
    a, b = _tristate(a), _tristate(b)
    if op == "&&":
        if a is False or b is False:
            return False
        if a is ERROR or b is ERROR:
            return ERROR
        if a is UNDEFINED or b is UNDEFINED:
            return UNDEFINED
        return True
    if a is True or b is True:
        return True
    if a is ERROR or b is ERROR:
        return ERROR
    if a is UNDEFINED or b is UNDEFINED:
        return UNDEFINED
    return False


def _normalize(v: Value) -> Value:
    if isinstance(v, str):
        return v.casefold()
    if isinstance(v, tuple):
        return tuple(_normalize(x) for x in v)
    return v


def _compare(op: str, a: Value, b: Value) -> Value:
    if a is ERROR or b is ERROR:
        return ERROR
    if a is UNDEFINED or b is UNDEFINED:
        return UNDEFINED
    if is_number(a) and is_number(b):
        pass
    elif isinstance(a, str) and isinstance(b, str):
        a, b = a.casefold(), b.casefold()
    elif isinstance(a, bool) and isinstance(b, bool) and op in ("==", "!="):
        pass
    elif isinstance(a, tuple) and isinstance(b, tuple) and op in ("==", "!="):
        a, b = _normalize(a), _normalize(b)
    else:
        return ERROR
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def _arith(op: str, a: Value, b: Value) -> Value:
    if a is ERROR or b is ERROR:
        return ERROR
    if a is UNDEFINED or b is UNDEFINED:
        return UNDEFINED
    if not (is_number(a) and is_number(b)):
        return ERROR
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if b == 0:
        return ERROR
    return a / b


def _apply_call(expr: Call, self_ad, other_ad, active) -> Value:
    if expr.name.lower() != "include":
        return ERROR
    if len(expr.args) != 2:
        return ERROR
    haystack = _eval(expr.args[0], self_ad, other_ad, active)
    needles = _eval(expr.args[1], self_ad, other_ad, active)
    for v in (haystack, needles):
        if v is ERROR:
            return ERROR
        if v is UNDEFINED:
            return UNDEFINED
    if not (isinstance(haystack, tuple) and isinstance(needles, tuple)):
        return ERROR
    pool = {_normalize(x) for x in haystack}
    return all(_normalize(x) in pool for x in needles)


# ---------------------------------------------------------------------------
# Matching


def check_requirements(request: ClassAd, resource: ClassAd) -> bool:
    """True iff the request's requirements hold against the resource and,
    symmetrically, the resource's requirements (if any) hold against the
    request.  Undefined and error collapse to a non-match.
    """
    req = request.get("requirements")
    if req is None:
        raise ValueError("request ad has no requirements attribute")
    if evaluate(req, request, resource) is not True:
        return False
    counter = resource.get("requirements")
    if counter is not None and evaluate(counter, resource, request) is not True:
        return False
    return True


def compute_rank(request: ClassAd, resource: ClassAd) -> float:
    """Numeric match quality: request.rank evaluated against the resource.

    A missing, undefined, erroneous or non-numeric rank scores 0.0.
    """
    expr = request.get("rank")
    if expr is None:
        return 0.0
    v = evaluate(expr, request, resource)
    if not is_number(v) or not math.isfinite(v):
        return 0.0
    return float(v)


# ---------------------------------------------------------------------------
# Printing

_STRING_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r"}


def _quote(s: str) -> str:
    return '"' + "".join(_STRING_ESCAPES.get(c, c) for c in s) + '"'


def print_value(v: Value) -> str:
    if v is True:
        return "true"
    if v is False:
        return "false"
    if v is UNDEFINED:
        return "undefined"
    if v is ERROR:
        return "error"
    if isinstance(v, str):
        return _quote(v)
    if isinstance(v, tuple):
        return "{" + ", ".join(print_value(x) for x in v) + "}"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def print_expr(expr: Expr) -> str:
    if isinstance(expr, Literal):
        return print_value(expr.value)
    if isinstance(expr, AttrRef):
        prefix = expr.scope.value
        return f"{prefix}.{expr.name}" if prefix else expr.name
    if isinstance(expr, Unary):
        return f"({expr.op}{print_expr(expr.operand)})"
    if isinstance(expr, Binary):
        op = {"&": "&&", "|": "||"}.get(expr.op, expr.op)
        return f"({print_expr(expr.lhs)} {op} {print_expr(expr.rhs)})"
    if isinstance(expr, Call):
        return f"{expr.name}({', '.join(print_expr(a) for a in expr.args)})"
    if isinstance(expr, ListExpr):
        return "{" + ", ".join(print_expr(i) for i in expr.items) + "}"
    raise TypeError(f"not an expression: {expr!r}")


def print_ad(ad: ClassAd) -> str:
    """Canonical form: one attribute per line, double-quoted strings."""
    lines = ["["]
    for name, expr in ad:
        lines.append(f"  {name} = {print_expr(expr)};")
    lines.append("]")
    return "\n".join(lines)
