"""Dense tensors with tape-based reverse-mode differentiation.

The op set is exactly what the flow, its training loop and the input-gradient
analysis need. Rules kept deliberately strict:

- binary ops require identical shapes and dtypes (no implicit broadcasting),
- gradients are recorded only while a Graph is active (``with Graph(): ...``),
  so inference runs with zero bookkeeping,
- one backward pass per graph, no higher-order derivatives.

A graph and the tensors recorded on it belong to a single thread; independent
graphs may run concurrently and frozen tensors are freely shareable.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable

import numpy as np

from . import _kernels

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_local = threading.local()


def _graph_stack() -> list:
    stack = getattr(_local, "graphs", None)
    if stack is None:
        stack = []
        _local.graphs = stack
    return stack


def active_graph() -> "Graph | None":
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """Multi-dimensional real array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "graph")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if arr.dtype not in FLOAT_DTYPES:
                arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.graph: Graph | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


class Graph:
    """Execution tape: ops are recorded in call order and replayed in exact
    reverse order by backward()."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _graph_stack().pop()
        assert popped is self, "graphs must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self._records)


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...],
          make_backward: Callable[[], Callable]) -> Tensor:
    """Wrap an op result; record it when a graph is active and grads flow."""
    graph = active_graph()
    if graph is None or not any(t.requires_grad for t in inputs):
        return Tensor(out_data, dtype=out_data.dtype)
    out = Tensor(out_data, requires_grad=True, dtype=out_data.dtype)
    out.graph = graph
    graph._records.append((out, inputs, make_backward()))
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad with d(loss)/d(tensor) for every tensor recorded with
    requires_grad on the loss's graph. One shot per graph."""
    if not isinstance(loss, Tensor) or loss.shape != ():
        raise ValueError("backward requires a scalar Tensor")
    graph = loss.graph
    if graph is None:
        raise RuntimeError("loss was not recorded on any graph "
                           "(run the forward pass inside `with Graph():`)")
    if graph._consumed:
        raise RuntimeError("backward was already called on this graph")
    graph._consumed = True

    pending: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    settled: dict[int, np.ndarray] = {}
    for out, inputs, bwd in reversed(graph._records):
        grad_out = pending.pop(id(out), None)
        if grad_out is None:
            continue
        settled[id(out)] = grad_out
        for tens, grad in zip(inputs, bwd(grad_out)):
            if grad is None or not tens.requires_grad:
                continue
            prev = pending.get(id(tens))
            pending[id(tens)] = grad if prev is None else prev + grad
    settled.update(pending)  # leaves are never popped

    seen: set[int] = set()
    for out, inputs, _ in graph._records:
        for tens in (out, *inputs):
            if id(tens) in seen or not tens.requires_grad:
                continue
            seen.add(id(tens))
            grad = settled.get(id(tens))
            if grad is None:
                grad = np.zeros_like(tens.data)
            tens.grad = grad if tens.grad is None else tens.grad + grad


def _check_pair(a: Tensor, b: Tensor, name: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{name}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{name}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda: lambda go: (go, go))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda: lambda go: (go, -go))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda: lambda go: (go * bd, go * ad))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _emit(out, (x,), lambda: lambda go: (go * out,))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(x.data * x.dtype.type(c), (x,), lambda: lambda go: (go * c,))


def arctan(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(np.arctan(xd), (x,), lambda: lambda go: (go / (1.0 + xd * xd),))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def make():
        mask = x.data > 0  # zero gradient at exactly 0
        return lambda go: (go * mask,)

    return _emit(out, (x,), make)


# ---------------------------------------------------------------------------
# reductions


def sum_squares(x: Tensor) -> Tensor:
    xd = x.data
    out = np.asarray(np.sum(xd * xd), dtype=x.dtype)
    return _emit(out, (x,), lambda: lambda go: (go * 2.0 * xd,))


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(np.sum(x.data), dtype=x.dtype)
    shape, dt = x.data.shape, x.dtype
    return _emit(out, (x,), lambda: lambda go: (np.full(shape, go, dtype=dt),))


# ---------------------------------------------------------------------------
# structural ops (channel axis is -2, time axis is -1)


def _as_batched(arr: np.ndarray) -> np.ndarray:
    return arr[None] if arr.ndim == 2 else arr


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Same-padded dilated convolution along time.

    x is (C_in, T) or (B, C_in, T); weight (C_out, C_in, K); bias (C_out,).
    """
    if x.ndim not in (2, 3):
        raise ValueError(f"conv1d: input must be (C_in, T) or (B, C_in, T), got {x.shape}")
    if weight.ndim != 3:
        raise ValueError(f"conv1d: weight must be (C_out, C_in, K), got {weight.shape}")
    if x.shape[-2] != weight.shape[1]:
        raise ValueError(f"conv1d: input has {x.shape[-2]} channels, "
                         f"weight expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"conv1d: bias shape {bias.shape} does not match "
                         f"C_out={weight.shape[0]}")
    if x.dtype != weight.dtype or x.dtype != bias.dtype:
        raise ValueError("conv1d: mixed dtypes")
    if not isinstance(dilation, int) or dilation < 1:
        raise ValueError(f"conv1d: dilation must be a positive integer, got {dilation}")

    xb = _as_batched(x.data)
    out = _kernels.conv1d_forward(xb, weight.data, bias.data, dilation)
    if x.ndim == 2:
        out = out[0]

    def make():
        need_gx = x.requires_grad

        def bwd(go):
            gx, gw, gb = _kernels.conv1d_backward(
                xb, weight.data, dilation, _as_batched(go), need_input_grad=need_gx)
            if gx is not None and x.ndim == 2:
                gx = gx[0]
            return gx, gw, gb

        return bwd

    return _emit(out, (x, weight, bias), make)


def permute_channels(x: Tensor, perm: np.ndarray) -> Tensor:
    out = np.ascontiguousarray(x.data[..., perm, :])

    def make():
        def bwd(go):
            gx = np.empty_like(go)
            gx[..., perm, :] = go
            return (gx,)

        return bwd

    return _emit(out, (x,), make)


def slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    out = x.data[..., lo:hi, :]

    def make():
        shape, dt = x.data.shape, x.dtype

        def bwd(go):
            gx = np.zeros(shape, dtype=dt)
            gx[..., lo:hi, :] = go
            return (gx,)

        return bwd

    return _emit(out, (x,), make)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[:-2] != b.data.shape[:-2] or a.data.shape[-1] != b.data.shape[-1]:
        raise ValueError(f"concat_channels: incompatible shapes {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError("concat_channels: dtype mismatch")
    na = a.data.shape[-2]
    out = np.concatenate([a.data, b.data], axis=-2)
    return _emit(out, (a, b),
                 lambda: lambda go: (go[..., :na, :], go[..., na:, :]))


def swap_time_channels(x: Tensor) -> Tensor:
    """Transpose the trailing (time, channel) axes; used to move between the
    time-major sample layout and the channel-major convolution layout."""
    out = np.ascontiguousarray(x.data.swapaxes(-1, -2))
    return _emit(out, (x,),
                 lambda: lambda go: (np.ascontiguousarray(go.swapaxes(-1, -2)),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.ascontiguousarray(x.data).reshape(shape)
    orig = x.data.shape
    return _emit(out, (x,), lambda: lambda go: (go.reshape(orig),))


# ---------------------------------------------------------------------------
# gradient verification


def gradcheck(f: Callable[..., Tensor], inputs: Iterable[Tensor],
              h: float = 1e-5) -> dict:
    """Compare analytic gradients of the scalar f(*inputs) against central
    finite differences.

    Returns {"per_input": [max relative error per tensor], "max": overall}.
    The relative error of a tensor is max|analytic - numeric| over entries,
    divided by max(|numeric|) (with a tiny floor for all-zero gradients).
    Requires float64 inputs; float32 has no headroom below the tolerances
    this is used to enforce.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("gradcheck requires float64 inputs")

    saved = [t.grad for t in inputs]
    for t in inputs:
        t.grad = None
    with Graph():
        loss = f(*inputs)
        if loss.shape != ():
            raise ValueError("gradcheck: f must return a scalar")
        backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]
    for t, g in zip(inputs, saved):
        t.grad = g

    per_input = []
    for t, ana in zip(inputs, analytic):
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)  # view; perturbed in place below
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(*inputs).data)
            flat[i] = orig - h
            f_minus = float(f(*inputs).data)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
        numeric = numeric.reshape(t.data.shape)
        denom = max(float(np.max(np.abs(numeric))), 1e-12)
        per_input.append(float(np.max(np.abs(ana - numeric))) / denom)
    return {"per_input": per_input, "max": max(per_input) if per_input else 0.0}
