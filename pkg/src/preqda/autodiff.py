"""Minimal reverse-mode automatic differentiation on numpy arrays.

The engine records vector-level primitives (whole affine maps, activations,
row norms, ...) on an append-only tape and replays them backwards to obtain
exact gradients of a scalar output with respect to a flat parameter vector.
It supports exactly the primitive set needed to differentiate energy-score
losses of the forecasting network; it is not a general-purpose autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UnsupportedPrimitiveError(ValueError):
    pass


class NonFiniteValueError(FloatingPointError):
    pass


@dataclass
class _Node:
    op: str
    value: np.ndarray
    parents: tuple[int, ...]
    aux: tuple = ()


@dataclass
class Tape:
    """Append-only record of primitive operations.

    Parents of node i always have indices < i, so a single reverse sweep
    over the node list visits every node exactly once.
    """

    nodes: list[_Node] = field(default_factory=list)
    check_finite: bool = True

    def _push(self, op: str, value, parents: tuple[int, ...], aux: tuple = ()) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteValueError(
                f"non-finite value at tape node {len(self.nodes)} (op={op})"
            )
        self.nodes.append(_Node(op, value, parents, aux))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> "Var":
        return self._push("leaf", value, ())

    def constant(self, value) -> "Var":
        return self._push("const", value, ())

    def backward(self, out: "Var") -> dict[int, np.ndarray]:
        """Adjoints of a scalar output w.r.t. every tape node."""
        if out.value.shape != ():
            raise ValueError("backward expects a scalar output node")
        adj: dict[int, np.ndarray] = {out.index: np.asarray(1.0)}
        for i in range(out.index, -1, -1):
            if i not in adj:
                continue
            node = self.nodes[i]
            g = adj[i]
            for j, pg in zip(node.parents, _vjp(node, g, self)):
                if pg is None:
                    continue
                if j in adj:
                    adj[j] = adj[j] + pg
                else:
                    adj[j] = pg
        return adj


@dataclass(frozen=True)
class Var:
    tape: Tape
    index: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    # -- shape plumbing ----------------------------------------------------

    def segment(self, start: int, stop: int) -> "Var":
        return self.tape._push(
            "segment", self.value[start:stop], (self.index,), (start, stop, self.value.shape)
        )

    def reshape(self, shape) -> "Var":
        return self.tape._push(
            "reshape", self.value.reshape(shape), (self.index,), (self.value.shape,)
        )

    def gather_rows(self, idx: np.ndarray) -> "Var":
        idx = np.asarray(idx)
        return self.tape._push("gather", self.value[idx], (self.index,), (idx, self.value.shape))

    def concat_cols(self, other: "Var") -> "Var":
        v = np.concatenate([self.value, other.value], axis=1)
        return self.tape._push(
            "concat", v, (self.index, other.index), (self.value.shape[1],)
        )

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other: "Var") -> "Var":
        return self.tape._push("add", self.value + other.value,
                               (self.index, other.index),
                               (self.value.shape, other.value.shape))

    def __sub__(self, other: "Var") -> "Var":
        return self.tape._push("sub", self.value - other.value,
                               (self.index, other.index),
                               (self.value.shape, other.value.shape))

    def __mul__(self, other: "Var") -> "Var":
        return self.tape._push("mul", self.value * other.value,
                               (self.index, other.index),
                               (self.value.shape, other.value.shape))

    def scale(self, c: float) -> "Var":
        return self.tape._push("scale", self.value * c, (self.index,), (c,))

    def add_const(self, c) -> "Var":
        return self.tape._push("addc", self.value + np.asarray(c), (self.index,))

    def matmul(self, w: "Var") -> "Var":
        return self.tape._push("matmul", self.value @ w.value, (self.index, w.index))

    def add_bias(self, b: "Var") -> "Var":
        # (B, d) + (d,) broadcast
        return self.tape._push("bias", self.value + b.value, (self.index, b.index))

    # -- nonlinearities -----------------------------------------------------

    def tanh(self) -> "Var":
        return self.tape._push("tanh", np.tanh(self.value), (self.index,))

    def sigmoid(self) -> "Var":
        v = 1.0 / (1.0 + np.exp(-self.value))
        return self.tape._push("sigmoid", v, (self.index,))

    def row_norm(self) -> "Var":
        """Euclidean norm of each row of a (B, d) array -> (B,)."""
        v = np.sqrt(np.sum(self.value * self.value, axis=1))
        return self.tape._push("rownorm", v, (self.index,))

    def abs_power(self, beta: float) -> "Var":
        """Elementwise x^beta for nonnegative x, beta in (0, 2).

        beta = 1 short-circuits to the identity; otherwise the base is
        clamped at 1e-12 so the backward factor beta * x^(beta-1) stays finite.
        """
        if not 0.0 < beta < 2.0:
            raise UnsupportedPrimitiveError(f"abs_power requires beta in (0,2), got {beta}")
        if beta == 1.0:
            return self
        base = np.maximum(self.value, 1e-12)
        return self.tape._push("abspow", base ** beta, (self.index,), (beta, base))

    def weighted_sum(self, w: np.ndarray) -> "Var":
        w = np.asarray(w, dtype=np.float64)
        return self.tape._push("wsum", float(self.value @ w), (self.index,), (w,))

    def sum(self) -> "Var":
        return self.tape._push("sum", float(np.sum(self.value)), (self.index,),
                               (self.value.shape,))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _vjp(node: _Node, g: np.ndarray, tape: Tape):
    op = node.op
    if op in ("leaf", "const"):
        return ()
    vals = [tape.nodes[j].value for j in node.parents]
    if op == "segment":
        start, stop, shape = node.aux
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)
    if op == "reshape":
        (shape,) = node.aux
        return (np.asarray(g).reshape(shape),)
    if op == "gather":
        idx, shape = node.aux
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)
    if op == "concat":
        (split,) = node.aux
        return (g[:, :split], g[:, split:])
    if op == "add":
        sa, sb = node.aux
        return (_unbroadcast(g, sa), _unbroadcast(g, sb))
    if op == "sub":
        sa, sb = node.aux
        return (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    if op == "mul":
        sa, sb = node.aux
        return (_unbroadcast(g * vals[1], sa), _unbroadcast(g * vals[0], sb))
    if op == "scale":
        return (g * node.aux[0],)
    if op == "addc":
        return (g,)
    if op == "matmul":
        x, w = vals
        return (g @ w.T, x.T @ g)
    if op == "bias":
        return (g, g.sum(axis=0))
    if op == "tanh":
        return (g * (1.0 - node.value * node.value),)
    if op == "sigmoid":
        return (g * node.value * (1.0 - node.value),)
    if op == "rownorm":
        (x,) = vals
        # zero subgradient where the norm vanishes
        safe = np.where(node.value > 0.0, node.value, 1.0)
        return ((g / safe * np.where(node.value > 0.0, 1.0, 0.0))[:, None] * x,)
    if op == "abspow":
        beta, base = node.aux
        return (g * beta * base ** (beta - 1.0),)
    if op == "wsum":
        (w,) = node.aux
        return (g * w,)
    if op == "sum":
        (shape,) = node.aux
        return (np.broadcast_to(np.asarray(g), shape).copy(),)
    raise UnsupportedPrimitiveError(f"unsupported primitive in backward pass: {op}")


def forward_backward(program, params: np.ndarray, *inputs) -> tuple[float, np.ndarray]:
    """Evaluate a scalar program and its gradient w.r.t. the parameter vector.

    ``program(tape, theta, *inputs) -> Var`` must build its computation from
    the tape primitives above, with ``theta`` the leaf holding ``params``.
    """
    params = np.asarray(params, dtype=np.float64)
    if not np.all(np.isfinite(params)):
        raise NonFiniteValueError("non-finite entry in parameter vector")
    tape = Tape()
    theta = tape.leaf(params)
    out = program(tape, theta, *inputs)
    adj = tape.backward(out)
    grad = adj.get(theta.index, np.zeros_like(params))
    return float(out.value), np.asarray(grad)


def grad_check(program, params: np.ndarray, *inputs, step: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences."""
    if step <= 0:
        raise ValueError("step must be positive")
    params = np.asarray(params, dtype=np.float64)
    _, grad = forward_backward(program, params, *inputs)
    worst = 0.0
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] += step
        hi, _ = forward_backward(program, bumped, *inputs)
        bumped[i] -= 2 * step
        lo, _ = forward_backward(program, bumped, *inputs)
        fd = (hi - lo) / (2 * step)
        err = abs(grad[i] - fd) / max(1.0, abs(grad[i]))
        worst = max(worst, err)
    return worst
