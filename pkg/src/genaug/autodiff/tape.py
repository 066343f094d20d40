"""Tape-based reverse-mode differentiation of scalar losses.

One Tape records one loss evaluation; backward may be run several times on
the same tape against different output nodes (used for per-token gradients).
A tape is confined to a single thread; independent tapes may run in
parallel.
"""

import numpy as np

from .tensor import ParameterSet


class UnsupportedPrimitiveError(ValueError):
    """Backward reached a primitive with no registered gradient rule."""

    def __init__(self, op: str):
        super().__init__(f"unsupported primitive in graph: {op!r}")
        self.op = op


# op name -> rule(node, grad_out) -> iterable of (input_position, grad)
BACKWARD_RULES: dict = {}


def backward_rule(name: str):
    def register(fn):
        BACKWARD_RULES[name] = fn
        return fn

    return register


class Node:
    __slots__ = ("op", "inputs", "saved")

    def __init__(self, op, inputs, saved):
        self.op = op
        self.inputs = inputs  # tuple of node indices (None for constants)
        self.saved = saved


class Var:
    """Handle to a node's value on a tape."""

    __slots__ = ("tape", "idx", "data")

    def __init__(self, tape, idx, data):
        self.tape = tape
        self.idx = idx
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.data.shape})"


class Tape:
    def __init__(self):
        self._nodes: list[Node] = []
        self._values: list[np.ndarray] = []
        self._named: dict[str, Var] = {}

    def record(self, op: str, out: np.ndarray, inputs, saved=()) -> Var:
        idx = len(self._nodes)
        self._nodes.append(Node(op, tuple(inputs), saved))
        self._values.append(out)
        return Var(self, idx, out)

    def leaf(self, data: np.ndarray, name: str | None = None) -> Var:
        if name is not None and name in self._named:
            return self._named[name]
        v = self.record("leaf", np.asarray(data, dtype=np.float64), ())
        if name is not None:
            self._named[name] = v
        return v

    def watch(self, params: ParameterSet) -> dict:
        """Bind a ParameterSet to this tape.

        Trainable tensors become named leaves; frozen tensors are exposed as
        plain arrays, so no gradient is ever recorded for them.
        """
        view = {}
        for n in params.names():
            if params.is_trainable(n):
                view[n] = self.leaf(params.data(n), name=n)
            else:
                view[n] = params.data(n)
        return view

    def gradients(self, out: Var, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        """Reverse sweep from ``out``; returns node-index -> gradient.

        ``seed`` is the gradient of the final objective w.r.t. ``out``;
        omitted it defaults to 1.0, which requires ``out`` to be scalar.
        """
        if out.tape is not self:
            raise ValueError("variable does not belong to this tape")
        if seed is None:
            if out.data.size != 1:
                raise ValueError(
                    f"non-scalar loss of shape {out.data.shape}; backward needs a scalar"
                )
            seed = np.ones_like(out.data)
        grads: dict[int, np.ndarray] = {out.idx: np.asarray(seed, dtype=np.float64)}
        for idx in range(out.idx, -1, -1):
            g = grads.pop(idx, None)
            if g is None:
                continue
            node = self._nodes[idx]
            if node.op == "leaf":
                grads[idx] = g  # keep leaf grads
                continue
            rule = BACKWARD_RULES.get(node.op)
            if rule is None:
                raise UnsupportedPrimitiveError(node.op)
            for pos, gin in rule(node, g):
                if gin is None:
                    continue
                src = node.inputs[pos]
                if src is None:
                    continue
                if src in grads:
                    grads[src] = grads[src] + gin
                else:
                    grads[src] = gin
        return grads

    def param_gradients(self, out: Var, params: ParameterSet,
                        seed: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Gradient per trainable tensor of a watched ParameterSet."""
        leaf_grads = self.gradients(out, seed=seed)
        result = {}
        for n in params.trainable_names():
            v = self._named.get(n)
            if v is None:
                result[n] = np.zeros(params[n].shape)
            else:
                g = leaf_grads.get(v.idx)
                result[n] = np.zeros(params[n].shape) if g is None else g
        return result


def backward_gradients(loss: Var, params: ParameterSet) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss node for every trainable tensor in params."""
    return loss.tape.param_gradients(loss, params)
