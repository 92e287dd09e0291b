"""Tiny safe arithmetic-expression compiler for config-file coefficients.

Metric coefficients in config files may be constants or expressions in the
chart coordinates (``q1``, ``q2`` on tori; ``u``, ``v`` on surfaces of
revolution).  Only a whitelist of names and operators is accepted, so config
files cannot execute arbitrary code.  Compiled expressions are plain Python
callables evaluating with ``math`` functions (scalar) and are cheap enough to
sit inside ODE right-hand sides.
"""

from __future__ import annotations

import ast
import math
from typing import Callable

from .errors import ValidationError

_FUNCS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "sinh": math.sinh,
    "cosh": math.cosh,
    "tanh": math.tanh,
    "atan": math.atan,
    "abs": abs,
}

_CONSTS = {"pi": math.pi, "e": math.e, "tau": math.tau}

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.Mod)
_ALLOWED_UNARY = (ast.UAdd, ast.USub)


def _check(node: ast.AST, variables: tuple[str, ...], source: str) -> None:
    if isinstance(node, ast.Expression):
        _check(node.body, variables, source)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
        _check(node.left, variables, source)
        _check(node.right, variables, source)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _ALLOWED_UNARY):
        _check(node.operand, variables, source)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            raise ValidationError(
                f"expression {source!r}: only {sorted(_FUNCS)} may be called"
            )
        if node.keywords:
            raise ValidationError(f"expression {source!r}: no keyword arguments")
        for arg in node.args:
            _check(arg, variables, source)
    elif isinstance(node, ast.Name):
        if node.id not in variables and node.id not in _CONSTS:
            raise ValidationError(
                f"expression {source!r}: unknown name {node.id!r}; "
                f"allowed variables are {list(variables)}"
            )
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ValidationError(f"expression {source!r}: non-numeric constant")
    else:
        raise ValidationError(
            f"expression {source!r}: disallowed syntax {type(node).__name__}"
        )


def compile_expression(source: str | float, variables: tuple[str, ...]) -> Callable[..., float]:
    """Compile ``source`` into ``f(*values)`` over the named ``variables``.

    Numeric input is wrapped as a constant function.  Raises
    :class:`ValidationError` for syntax errors or names/calls outside the
    whitelist.
    """
    if isinstance(source, (int, float)):
        const = float(source)
        func = lambda *args: const  # noqa: E731
        func.is_constant = True
        func.source = repr(const)
        return func
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"expression {source!r}: {exc.msg}") from None
    _check(tree, variables, source)
    code = compile(tree, f"<expr {source!r}>", "eval")
    namespace = dict(_FUNCS, **_CONSTS)

    def func(*args: float) -> float:
        local = dict(zip(variables, args))
        return float(eval(code, {"__builtins__": {}, **namespace}, local))

    free = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} & set(variables)
    func.is_constant = not free
    func.source = source
    return func
