"""Dense tensors with a recorded forward pass and reverse-mode gradients.

A ``Tape`` collects one op node per primitive call while it is active;
``backward`` replays the nodes in reverse and accumulates gradients into
``Tensor.grad``. Without an active tape every op is a plain numpy forward
pass, which is what evaluation and finite-difference probing use.

Training runs in float32; verification (gradient checking) runs in float64
by constructing the inputs as float64 arrays. Ops never change dtype on
their own beyond numpy promotion rules.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN or Inf."""


class TapeError(RuntimeError):
    """Raised on tape misuse (double backward, non-scalar loss, ...)."""


_FLOAT_KINDS = (np.float32, np.float64)

_debug_nan = False


def set_debug_nan(flag: bool) -> None:
    """Enable NaN/Inf detection on every op output (slow; for debugging)."""
    global _debug_nan
    _debug_nan = bool(flag)


def debug_nan_enabled() -> bool:
    return _debug_nan


class Tensor:
    """A dense float array, optionally tracked for gradients.

    ``data`` is always a float32 or float64 numpy array. ``grad`` is filled
    by ``backward`` and has the same shape and dtype as ``data``; it
    accumulates across backward calls until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.type not in _FLOAT_KINDS:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> None:
        """Convert in place; used to move a model into verification mode."""
        self.data = self.data.astype(dtype)
        if self.grad is not None:
            self.grad = self.grad.astype(dtype)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # Arithmetic sugar; implementations live in ops.py and are attached there
    # to avoid a circular import.


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of op nodes from one forward pass.

    Nodes are appended in execution order, so the list is topologically
    sorted by construction and ``backward`` visits each node exactly once
    in reverse. A tape can be consumed by backward only once.
    """

    __slots__ = ("nodes", "watched", "consumed")

    def __init__(self):
        self.nodes: list[tuple] = []  # (out, inputs, backward_fn, op_name)
        self.watched: list[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def watch(self, *tensors: Tensor) -> None:
        """Guarantee these tensors receive a gradient (zeros if unused)."""
        self.watched.extend(tensors)

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(tape: Tape, loss: Tensor, params=None) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` for every tracked tensor.

    ``loss`` must be a scalar recorded on ``tape``. Watched or ``params``
    tensors that the loss does not depend on get an exact-zero gradient.
    """
    if tape.consumed:
        raise TapeError("backward called twice on a consumed record")
    if loss.data.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    hold = {id(loss): loss}

    for out, inputs, bwd, op_name in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        hold.pop(id(out), None)
        if g is None:
            continue
        _accumulate(out, g)
        for inp, gi in zip(inputs, bwd(g)):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.data.shape:
                raise ShapeError(
                    f"{op_name}: gradient shape {gi.shape} does not match "
                    f"input shape {inp.data.shape}"
                )
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                hold[key] = inp

    # Whatever is left belongs to leaf tensors (parameters, inputs).
    for key, g in grads.items():
        _accumulate(hold[key], g)

    for p in list(tape.watched) + (list(params) if params is not None else []):
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if g.base is not None else g
    else:
        t.grad = t.grad + g


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.type not in _FLOAT_KINDS:
        arr = arr.astype(np.float32)
    return Tensor(arr)
