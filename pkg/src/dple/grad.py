"""Reverse-mode automatic differentiation over dense float64 tensors.

Define-by-run: every differentiable primitive executed through a Tape
appends one entry (output node, input nodes, backward closure), and
``Tape.backward`` walks the entries in reverse, accumulating gradients
into the ``grad`` slot of leaf tensors that require them. A tape is
single-owner state and is rebuilt for every training step; independent
tapes may run in parallel.

Primitive surface (the ``record`` tags): add, sub, mul, matmul, concat,
slice, mean_all, relu, tanh, l2_normalize, scale, softmax, reshape,
softmax_ce. All arithmetic is float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, UsageError

Array = np.ndarray


class Tensor:
    """Dense float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    if g.shape != shape:
        g = g.reshape(shape)
    return g


def _swap(a: Array) -> Array:
    return a.swapaxes(-1, -2)


class Tape:
    """Ordered record of primitive ops; topological by construction."""

    def __init__(self):
        # entries: (output tensor, input tensors, vjp closure)
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()

    def __len__(self) -> int:
        return len(self._entries)

    def _emit(self, out_data: Array, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
        needs = any(t.requires_grad for t in inputs)
        out = Tensor(out_data, requires_grad=needs)
        if needs:
            self._entries.append((out, inputs, vjp))
            self._produced.add(id(out))
        return out

    # -- primitives ---------------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            out = a.data + b.data
        except ValueError as exc:
            raise DimensionError(f"add: {a.shape} vs {b.shape}") from exc

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._emit(out, (a, b), vjp)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            out = a.data - b.data
        except ValueError as exc:
            raise DimensionError(f"sub: {a.shape} vs {b.shape}") from exc

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return self._emit(out, (a, b), vjp)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            out = a.data * b.data
        except ValueError as exc:
            raise DimensionError(f"mul: {a.shape} vs {b.shape}") from exc
        ad, bd = a.data, b.data

        def vjp(g):
            return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

        return self._emit(out, (a, b), vjp)

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)

        def vjp(g):
            return (g * c,)

        return self._emit(a.data * c, (a,), vjp)

    def matmul(self, a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise DimensionError("matmul expects operands of rank >= 2")
        ad, bd = a.data, b.data
        try:
            out = ad @ (_swap(bd) if transpose_b else bd)
        except ValueError as exc:
            raise DimensionError(f"matmul: {a.shape} x {b.shape}") from exc

        def vjp(g):
            if transpose_b:
                ga = g @ bd
                gb = _swap(g) @ ad
            else:
                ga = g @ _swap(bd)
                gb = _swap(ad) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return self._emit(out, (a, b), vjp)

    def concat(self, parts: Sequence[Tensor], axis: int = 0) -> Tensor:
        if not parts:
            raise UsageError("concat of zero tensors")
        datas = [p.data for p in parts]
        try:
            out = np.concatenate(datas, axis=axis)
        except ValueError as exc:
            raise DimensionError("concat: incompatible shapes") from exc
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def vjp(g):
            gs = []
            for lo, hi in zip(offsets[:-1], offsets[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(lo), int(hi))
                gs.append(g[tuple(idx)])
            return tuple(gs)

        return self._emit(out, tuple(parts), vjp)

    def slice(self, a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
        n = a.data.shape[axis]
        if not (0 <= start <= stop <= n):
            raise DimensionError(f"slice [{start}:{stop}] out of range for axis size {n}")
        idx = [slice(None)] * a.data.ndim
        idx[axis] = slice(start, stop)
        idx = tuple(idx)
        in_shape = a.data.shape

        def vjp(g):
            full = np.zeros(in_shape, dtype=np.float64)
            full[idx] = g
            return (full,)

        return self._emit(a.data[idx].copy(), (a,), vjp)

    def mean_all(self, a: Tensor) -> Tensor:
        size = a.data.size
        if size == 0:
            raise DimensionError("mean_all of an empty tensor")
        shape = a.data.shape

        def vjp(g):
            return (np.full(shape, float(g) / size),)

        return self._emit(np.asarray(a.data.mean()), (a,), vjp)

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0.0

        def vjp(g):
            return (g * mask,)

        return self._emit(np.where(mask, a.data, 0.0), (a,), vjp)

    def tanh(self, a: Tensor) -> Tensor:
        out = np.tanh(a.data)

        def vjp(g):
            return (g * (1.0 - out * out),)

        return self._emit(out, (a,), vjp)

    def l2_normalize(self, a: Tensor) -> Tensor:
        """Normalize along the last axis; zero-norm rows are a numeric error."""
        norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
        if np.any(norm == 0.0):
            raise NumericError("l2_normalize: zero-norm row")
        out = a.data / norm

        def vjp(g):
            return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / norm,)

        return self._emit(out, (a,), vjp)

    def softmax(self, a: Tensor) -> Tensor:
        """Row softmax along the last axis (max-subtraction stabilized)."""
        z = a.data - a.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=-1, keepdims=True)

        def vjp(g):
            return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

        return self._emit(out, (a,), vjp)

    def reshape(self, a: Tensor, shape) -> Tensor:
        in_shape = a.data.shape
        try:
            out = a.data.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"reshape {in_shape} -> {shape}") from exc

        def vjp(g):
            return (g.reshape(in_shape),)

        return self._emit(out, (a,), vjp)

    def softmax_ce(self, logits: Tensor, labels) -> Tensor:
        """Fused softmax + cross-entropy, mean over the batch.

        logits: [batch, classes]; labels: int array-like of length batch.
        """
        if logits.data.ndim != 2:
            raise DimensionError("softmax_ce expects [batch, classes] logits")
        labels = np.asarray(labels, dtype=np.intp)
        nb, nc = logits.data.shape
        if labels.shape != (nb,):
            raise DimensionError("softmax_ce: labels length must match batch")
        if np.any(labels < 0) or np.any(labels >= nc):
            raise UsageError("softmax_ce: label out of range")
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - lse
        loss = -logp[np.arange(nb), labels].mean()
        p = np.exp(logp)

        def vjp(g):
            gl = p.copy()
            gl[np.arange(nb), labels] -= 1.0
            return (gl * (float(g) / nb),)

        return self._emit(np.asarray(loss), (logits,), vjp)

    # -- dispatch + backward ------------------------------------------------

    _OPS = (
        "add", "sub", "mul", "matmul", "concat", "slice", "mean_all",
        "relu", "tanh", "l2_normalize", "scale", "softmax", "reshape",
        "softmax_ce",
    )

    def record(self, op: str, *inputs, **params) -> Tensor:
        """Run one primitive by tag and append it to the tape."""
        if op not in self._OPS:
            raise UsageError(f"unknown primitive tag {op!r}")
        return getattr(self, op)(*inputs, **params)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad leaf reachable from loss."""
        if loss.data.shape != ():
            raise UsageError("backward expects a scalar loss")
        pending: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
        for out, inputs, vjp in reversed(self._entries):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                if id(t) in self._produced:
                    acc = pending.get(id(t))
                    pending[id(t)] = gi if acc is None else acc + gi
                else:
                    t.grad = gi if t.grad is None else t.grad + gi


def finite_diff_check(fn: Callable[[Tape], Tensor], params: Sequence[Tensor],
                      step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the loss on a fresh tape from the current parameter
    values (it closes over ``params``). The central-difference side never
    touches the tape's backward pass, so it is an independent oracle.
    Error metric per coordinate: |analytic - numeric| / max(1, |analytic|).
    """
    report = finite_diff_report(fn, [("p", p) for p in params], step=step)
    return max(err for err, _ in report.values()) if report else 0.0


def finite_diff_report(fn: Callable[[Tape], Tensor],
                       named_params: Sequence[tuple[str, Tensor]],
                       step: float = 1e-5) -> dict[str, tuple[float, tuple]]:
    """Per-group finite-difference check; returns {name: (max rel err, argmax coord)}."""
    if step <= 0:
        raise UsageError("finite_diff step must be > 0")
    tape = Tape()
    loss = fn(tape)
    if not np.isfinite(loss.data):
        raise NumericError("finite_diff: non-finite loss")
    params = [p for _, p in named_params]
    for p in params:
        p.grad = None
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    out: dict[str, tuple[float, tuple]] = {}
    for (name, p), ana in zip(named_params, analytic):
        flat = p.data.ravel()
        worst, where = 0.0, ()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp = float(fn(Tape()).data)
            flat[i] = old - step
            lm = float(fn(Tape()).data)
            flat[i] = old
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError("finite_diff: non-finite perturbed loss")
            num = (lp - lm) / (2.0 * step)
            a = float(ana.ravel()[i])
            rel = abs(a - num) / max(1.0, abs(a))
            if rel > worst:
                worst, where = rel, np.unravel_index(i, p.data.shape)
        out[name] = (worst, where)
    return out
