"""Tiny arithmetic expression language for user-supplied radial functions.

Grammar: ``+ - * / ^``, parentheses, functions ``sqrt``, ``exp``, ``log``,
``pow``, the variable ``r``, and numeric literals (including scientific
notation).  Expressions evaluate vectorized over numpy arrays and can be
differentiated symbolically, so a config file fully determines both U(r)
and dU/dr without any derivative ever being approximated.
"""

from __future__ import annotations

import math
import re

import numpy as np


class ExpressionError(ValueError):
    pass


_TOKEN_RE = re.compile(r"""
    (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^(),])
  | (?P<ws>\s+)
""", re.VERBOSE)

_FUNCTIONS = {"sqrt": 1, "exp": 1, "log": 1, "pow": 2}


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionError("unexpected character %r at position %d" % (text[pos], pos))
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        if m.lastgroup == "num":
            tokens.append(("num", float(m.group())))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group()))
        else:
            op = m.group()
            tokens.append(("op", "^" if op == "**" else op))
    tokens.append(("end", None))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None, value=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise ExpressionError("expected %s, got %r" % (kind, tok[1]))
        if value is not None and tok[1] != value:
            raise ExpressionError("expected %r, got %r" % (value, tok[1]))
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ExpressionError("trailing input after expression: %r" % (self.peek()[1],))
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = _add(node, rhs) if op == "+" else _sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = _mul(node, rhs) if op == "*" else _div(node, rhs)
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return _neg(self.unary())
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            # right-associative; exponent may itself be signed
            expo = self.unary()
            return _pow(base, expo)
        return base

    def atom(self):
        kind, value = self.peek()
        if kind == "num":
            self.take()
            return ("num", value)
        if kind == "name":
            self.take()
            if value == "r":
                return ("var",)
            if value in _FUNCTIONS:
                self.take("op", "(")
                args = [self.expr()]
                while self.peek() == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.take("op", ")")
                if len(args) != _FUNCTIONS[value]:
                    raise ExpressionError("%s takes %d argument(s)" % (value, _FUNCTIONS[value]))
                if value == "pow":
                    return _pow(args[0], args[1])
                return ("call", value, args[0])
            raise ExpressionError("unknown name %r (only 'r' and %s)" %
                                  (value, sorted(_FUNCTIONS)))
        if (kind, value) == ("op", "("):
            self.take()
            node = self.expr()
            self.take("op", ")")
            return node
        raise ExpressionError("unexpected token %r" % (value,))


# -- constant-folding node constructors -------------------------------------

def _is_num(node, value=None):
    return node[0] == "num" and (value is None or node[1] == value)


def _add(l, r):
    if _is_num(l) and _is_num(r):
        return ("num", l[1] + r[1])
    if _is_num(l, 0.0):
        return r
    if _is_num(r, 0.0):
        return l
    return ("add", l, r)


def _sub(l, r):
    if _is_num(l) and _is_num(r):
        return ("num", l[1] - r[1])
    if _is_num(r, 0.0):
        return l
    return ("sub", l, r)


def _mul(l, r):
    if _is_num(l) and _is_num(r):
        return ("num", l[1] * r[1])
    if _is_num(l, 0.0) or _is_num(r, 0.0):
        return ("num", 0.0)
    if _is_num(l, 1.0):
        return r
    if _is_num(r, 1.0):
        return l
    return ("mul", l, r)


def _div(l, r):
    if _is_num(r) and r[1] == 0.0:
        raise ExpressionError("division by constant zero")
    if _is_num(l) and _is_num(r):
        return ("num", l[1] / r[1])
    if _is_num(l, 0.0):
        return ("num", 0.0)
    if _is_num(r, 1.0):
        return l
    return ("div", l, r)


def _neg(x):
    if _is_num(x):
        return ("num", -x[1])
    return ("neg", x)


def _pow(b, e):
    if _is_num(b) and _is_num(e):
        return ("num", b[1] ** e[1])
    if _is_num(e, 1.0):
        return b
    if _is_num(e, 0.0):
        return ("num", 1.0)
    return ("pow", b, e)


def _evaluate(node, r):
    tag = node[0]
    if tag == "num":
        return node[1]
    if tag == "var":
        return r
    if tag == "neg":
        return -_evaluate(node[1], r)
    if tag == "add":
        return _evaluate(node[1], r) + _evaluate(node[2], r)
    if tag == "sub":
        return _evaluate(node[1], r) - _evaluate(node[2], r)
    if tag == "mul":
        return _evaluate(node[1], r) * _evaluate(node[2], r)
    if tag == "div":
        return _evaluate(node[1], r) / _evaluate(node[2], r)
    if tag == "pow":
        return _evaluate(node[1], r) ** _evaluate(node[2], r)
    if tag == "call":
        arg = _evaluate(node[2], r)
        if node[1] == "sqrt":
            return np.sqrt(arg)
        if node[1] == "exp":
            return np.exp(arg)
        if node[1] == "log":
            return np.log(arg)
    raise ExpressionError("bad node %r" % (tag,))


def _derivative(node):
    tag = node[0]
    if tag == "num":
        return ("num", 0.0)
    if tag == "var":
        return ("num", 1.0)
    if tag == "neg":
        return _neg(_derivative(node[1]))
    if tag == "add":
        return _add(_derivative(node[1]), _derivative(node[2]))
    if tag == "sub":
        return _sub(_derivative(node[1]), _derivative(node[2]))
    if tag == "mul":
        l, r = node[1], node[2]
        return _add(_mul(_derivative(l), r), _mul(l, _derivative(r)))
    if tag == "div":
        l, r = node[1], node[2]
        num = _sub(_mul(_derivative(l), r), _mul(l, _derivative(r)))
        return _div(num, _pow(r, ("num", 2.0)))
    if tag == "pow":
        b, e = node[1], node[2]
        db = _derivative(b)
        if _is_num(e):
            # e * b^(e-1) * b'
            return _mul(_mul(e, _pow(b, ("num", e[1] - 1.0))), db)
        de = _derivative(e)
        # b^e * (e' log b + e b'/b)
        inner = _add(_mul(de, ("call", "log", b)), _mul(e, _div(db, b)))
        return _mul(node, inner)
    if tag == "call":
        name, arg = node[1], node[2]
        da = _derivative(arg)
        if name == "sqrt":
            return _div(da, _mul(("num", 2.0), node))
        if name == "exp":
            return _mul(node, da)
        if name == "log":
            return _div(da, arg)
    raise ExpressionError("cannot differentiate node %r" % (tag,))


def _to_text(node):
    tag = node[0]
    if tag == "num":
        return repr(node[1])
    if tag == "var":
        return "r"
    if tag == "neg":
        return "(-%s)" % _to_text(node[1])
    if tag in ("add", "sub", "mul", "div", "pow"):
        op = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}[tag]
        return "(%s %s %s)" % (_to_text(node[1]), op, _to_text(node[2]))
    if tag == "call":
        return "%s(%s)" % (node[1], _to_text(node[2]))
    raise ExpressionError("bad node %r" % (tag,))


class Expression:
    """A parsed radial expression: callable on scalars or numpy arrays."""

    def __init__(self, source):
        if isinstance(source, str):
            self.node = _Parser(_tokenize(source)).parse()
            self.source = source
        else:
            self.node = source
            self.source = _to_text(source)

    def __call__(self, r):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = _evaluate(self.node, np.asarray(r, dtype=float) if not np.isscalar(r) else r)
        return out

    def derivative(self) -> "Expression":
        return Expression(_derivative(self.node))

    def __repr__(self):
        return "Expression(%r)" % (self.source,)


def parse_expression(text: str) -> Expression:
    return Expression(text)


def check_derivative_consistency(fn, dfn, points, rel_tol=1e-6):
    """Central finite differences of fn vs dfn at the given points.

    Returns (ok, worst_point, worst_err).  Points where both estimates are
    tiny compared to the function scale are accepted.
    """
    worst = (None, 0.0)
    scale = max(1.0, float(np.max(np.abs([fn(p) for p in points]))))
    for p in points:
        h = 1e-6 * max(1.0, abs(p))
        fd = (fn(p + h) - fn(p - h)) / (2.0 * h)
        an = dfn(p)
        denom = max(abs(an), abs(fd), 1e-9 * scale / max(1.0, abs(p)) + 1e-12)
        err = abs(fd - an) / denom
        if err > worst[1]:
            worst = (p, err)
    ok = worst[1] <= rel_tol or worst[0] is None
    return ok, worst[0], worst[1]
