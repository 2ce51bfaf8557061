"""A small arithmetic expression language for source terms.

Only numbers, the variables ``x``, ``y``, ``r``, the constants ``pi`` and
``e``, the operators ``+ - * / **`` and the functions ``sin cos exp log sqrt
abs`` are accepted.  Expressions are parsed with :mod:`ast` and evaluated by
walking the tree, so no Python code is ever executed.
"""

from __future__ import annotations

import ast
import operator

import numpy as np

from .errors import DataError

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_CONSTANTS = {"pi": np.pi, "e": np.e}
VARIABLES = ("x", "y", "r")
_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


class Expression:
    """Parsed source expression, callable on numpy arrays.

    >>> Expression("pi**2 * sin(pi*x)**3")(x=np.array([0.5]))
    array([9.8696044])
    """

    def __init__(self, text: str):
        self.text = text.strip()
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise DataError(f"cannot parse expression {text!r}: {exc.msg}") from None
        self._tree = tree.body
        self.variables = frozenset(self._check(self._tree))

    def _check(self, node) -> set[str]:
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise DataError(f"unsupported literal {node.value!r} in {self.text!r}")
            return set()
        if isinstance(node, ast.Name):
            if node.id in _CONSTANTS:
                return set()
            if node.id in VARIABLES:
                return {node.id}
            raise DataError(f"unknown name {node.id!r} in {self.text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return self._check(node.left) | self._check(node.right)
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return self._check(node.operand)
        if isinstance(node, ast.Call):
            if (
                not isinstance(node.func, ast.Name)
                or node.func.id not in _FUNCTIONS
                or len(node.args) != 1
                or node.keywords
            ):
                raise DataError(f"unsupported function call in {self.text!r}")
            return self._check(node.args[0])
        raise DataError(f"unsupported syntax {type(node).__name__} in {self.text!r}")

    def __call__(self, **env: np.ndarray) -> np.ndarray:
        missing = self.variables - env.keys()
        if missing:
            raise DataError(
                f"expression {self.text!r} uses {sorted(missing)} "
                f"but only {sorted(env)} are defined on this grid"
            )
        shape = np.shape(next(iter(env.values()))) if env else ()
        with np.errstate(all="ignore"):
            value = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return _CONSTANTS[node.id] if node.id in _CONSTANTS else env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, env))
        return _FUNCTIONS[node.func.id](self._eval(node.args[0], env))

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Expression) and other.text == self.text

    def __hash__(self) -> int:
        return hash(self.text)
