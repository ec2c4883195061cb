"""A small expression language for maps, one-forms and charts.

Grammar (Python syntax, whitelisted)::

    expr   := number | name | const | expr op expr | -expr | +expr
            | func "(" expr ")" | "(" expr ")"
    op     := + | - | * | / | **
    func   := sin | cos | tan | exp | log | sqrt | tanh | sinh | cosh | atan
    const  := pi | e

Names must belong to the variable list supplied by the caller, typically
``x1, x2, ...`` for points and ``z1, ...`` for chart coordinates.
Expressions are converted to sympy so that derivatives are exact.
"""
from __future__ import annotations

import ast

import sympy as sp

from .errors import ParseError

FUNCS = {
    "sin": sp.sin, "cos": sp.cos, "tan": sp.tan, "exp": sp.exp, "log": sp.log,
    "sqrt": sp.sqrt, "tanh": sp.tanh, "sinh": sp.sinh, "cosh": sp.cosh, "atan": sp.atan,
}
CONSTS = {"pi": sp.pi, "e": sp.E}


def _convert(node, names: dict):
    if isinstance(node, ast.Expression):
        return _convert(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return sp.Float(node.value) if isinstance(node.value, float) else sp.Integer(node.value)
    if isinstance(node, ast.Name):
        if node.id in names:
            return names[node.id]
        if node.id in CONSTS:
            return CONSTS[node.id]
        raise ParseError(f"unknown name '{node.id}'")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _convert(node.operand, names)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        a = _convert(node.left, names)
        b = _convert(node.right, names)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        if isinstance(node.op, ast.Div):
            return a / b
        if isinstance(node.op, ast.Pow):
            return a ** b
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        if node.func.id not in FUNCS:
            raise ParseError(f"unknown function '{node.func.id}'")
        if len(node.args) != 1:
            raise ParseError(f"{node.func.id} takes one argument")
        return FUNCS[node.func.id](_convert(node.args[0], names))
    raise ParseError(f"unsupported syntax: {ast.dump(node)[:60]}")


def parse_expr(text, variables) -> sp.Expr:
    """Parse one expression over the given variable names."""
    if isinstance(text, (int, float)):
        return sp.Float(text)
    if not isinstance(text, str):
        raise ParseError(f"expression must be a string, got {type(text).__name__}")
    names = {v: sp.Symbol(v, real=True) for v in variables}
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"cannot parse '{text}': {exc.msg}") from exc
    return _convert(tree, names)


def parse_matrix(rows, variables) -> list[list[sp.Expr]]:
    """Parse a nested list of expressions (vectors become one-column matrices)."""
    if not isinstance(rows, list) or not rows:
        raise ParseError("expected a non-empty list of expressions")
    if not isinstance(rows[0], list):
        rows = [[r] for r in rows]
    width = len(rows[0])
    out = []
    for r in rows:
        if not isinstance(r, list) or len(r) != width:
            raise ParseError("ragged expression matrix")
        out.append([parse_expr(c, variables) for c in r])
    return out


def symbols(prefix: str, n: int):
    return [sp.Symbol(f"{prefix}{k + 1}", real=True) for k in range(n)]


def names(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{k + 1}" for k in range(n)]
