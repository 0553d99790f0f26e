"""Tiny vectorised arithmetic expressions for boundary profiles.

Grammar: numbers, the variables ``x`` (or ``x1``, ``x2`` for two-variable
profiles), ``pi``, the operators ``+ - * / ^`` and the functions ``abs``,
``min``, ``max``, ``sqrt`` and ``floor``.  ``^`` is exponentiation.

>>> f = compile_profile("0.5 + 0.1*abs(x - 0.5)^0.5")
>>> float(f(np.array([0.5])))
0.5
"""

from __future__ import annotations

import ast
from typing import Callable

import numpy as np

__all__ = ["ExpressionError", "compile_profile"]


class ExpressionError(ValueError):
    pass


_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}

_FUNCS = {
    "abs": (np.abs, 1),
    "sqrt": (np.sqrt, 1),
    "floor": (np.floor, 1),
    "min": (np.minimum, 2),
    "max": (np.maximum, 2),
}

_CONSTS = {"pi": np.pi}


def _build(node, variables):
    if isinstance(node, ast.Expression):
        return _build(node.body, variables)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        value = float(node.value)
        return lambda env: value
    if isinstance(node, ast.Name):
        if node.id in variables:
            name = node.id
            return lambda env: env[name]
        if node.id in _CONSTS:
            value = _CONSTS[node.id]
            return lambda env: value
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _build(node.operand, variables)
        if isinstance(node.op, ast.USub):
            return lambda env: -inner(env)
        return inner
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        left = _build(node.left, variables)
        right = _build(node.right, variables)
        return lambda env: op(left(env), right(env))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        if node.func.id not in _FUNCS or node.keywords:
            raise ExpressionError(f"unsupported function {ast.unparse(node.func)!r}")
        fn, arity = _FUNCS[node.func.id]
        if len(node.args) != arity:
            raise ExpressionError(f"{node.func.id} takes {arity} argument(s)")
        args = [_build(a, variables) for a in node.args]
        return lambda env: fn(*(a(env) for a in args))
    raise ExpressionError(f"unsupported syntax: {ast.unparse(node)!r}")


def compile_profile(text: str, nvars: int = 1) -> Callable[..., np.ndarray]:
    """Compile ``text`` into a numpy-vectorised function of ``nvars`` arrays."""
    if nvars not in (1, 2):
        raise ExpressionError("profiles take one or two variables")
    source = text.replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse profile {text!r}: {exc.msg}") from None
    names = ("x",) if nvars == 1 else ("x1", "x2")
    fn = _build(tree, set(names) | ({"x1"} if nvars == 1 else set()))

    def profile(*coords):
        env = {name: np.asarray(c, dtype=float) for name, c in zip(names, coords)}
        if nvars == 1:
            env["x1"] = env["x"]
        out = fn(env)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(coords[0])).copy()

    profile.source = text
    return profile
