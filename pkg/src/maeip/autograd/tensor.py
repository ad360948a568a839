"""Dense tensor and the reverse-mode differentiation tape."""

from __future__ import annotations

import contextvars
import itertools
import logging
import os
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, TapeError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32

# A vector-Jacobian product: upstream gradient -> one gradient (or None) per parent
BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_node_ids = itertools.count(1)


@dataclass(eq=False)
class Node:
    """One recorded operation on the tape.

    The closure in ``backward`` holds the saved activations; it is dropped once
    the node has been traversed so a second backward pass is detected.
    """

    op: str
    parents: tuple[Tensor, ...]
    backward: BackwardFn | None
    id: int = field(default_factory=lambda: next(_node_ids))

    @property
    def released(self) -> bool:
        return self.backward is None


class Tensor:
    """Dense N-dimensional float array participating in a differentiation tape.

    Image-like data is laid out N, C, H, W. Tensors are treated as immutable
    after construction; only ``grad`` is written, by ``backward``.
    """

    def __init__(
        self,
        data: object,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: np.dtype | type | None = None,
    ) -> None:
        """Wrap array data.

        Args:
            data: Anything ``numpy.asarray`` accepts
            requires_grad: Mark as a leaf whose gradient is accumulated
            name: Optional hierarchical name (parameters use it for checkpoints)
            dtype: Force a dtype; non-float input defaults to 32-bit
        """
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad: bool = requires_grad
        self.grad: np.ndarray | None = None
        self.name: str | None = name
        self.node: Node | None = None

    # --- convenience ---
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def tape_id(self) -> int | None:
        return self.node.id if self.node is not None else None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data, name=self.name)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{req}{nm})"

    # --- operators route through the op library ---
    def __add__(self, other: Tensor | float) -> Tensor:
        from .ops import elementwise

        return elementwise("add", self, other)

    def __sub__(self, other: Tensor | float) -> Tensor:
        from .ops import elementwise

        return elementwise("sub", self, other)

    def __mul__(self, other: Tensor | float) -> Tensor:
        from .ops import elementwise

        return elementwise("mul", self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        from .ops import matmul

        return matmul(self, other)

    def __neg__(self) -> Tensor:
        from .ops import elementwise

        return elementwise("scale", self, -1.0)


def grad_enabled() -> bool:
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them on the tape."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def _debug_checks() -> bool:
    return os.environ.get("MAEIP_DEBUG") == "1" or logging.getLogger("maeip").isEnabledFor(logging.DEBUG)


def make_result(
    data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str
) -> Tensor:
    """Wrap an op's output and record it on the tape when any parent needs a gradient."""
    out = Tensor(data)
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(op, tuple(parents), backward)
    if _debug_checks() and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError(f"{op} produced NaN/Inf from finite inputs")
    return out


@dataclass
class Tape:
    """Topologically ordered record of the operations reachable from one output."""

    nodes: list[Node]

    @classmethod
    def from_output(cls, out: Tensor) -> Tape:
        if out.node is None:
            return cls([])
        order: list[Node] = []
        seen: set[int] = set()
        stack: list[tuple[Node, bool]] = [(out.node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in seen:
                continue
            seen.add(node.id)
            stack.append((node, True))
            for parent in node.parents:
                if parent.node is not None and parent.node.id not in seen:
                    stack.append((parent.node, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Populate ``grad`` on every leaf reachable from a scalar loss.

    Args:
        loss: Single-element tensor produced on the active tape

    Returns:
        The traversed tape, in forward (topological) order

    Raises:
        TapeError: If the loss is not scalar, is detached, or its tape was
            already consumed by an earlier backward call
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss.node is None:
        if not loss.requires_grad:
            raise TapeError("loss is not attached to an active tape")
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return Tape([])
    if loss.node.released:
        raise TapeError("tape already consumed; run a new forward pass before backward")

    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {loss.node.id: seed}
    for node in reversed(tape.nodes):
        upstream = grads.pop(node.id, None)
        vjp = node.backward
        node.backward = None
        if upstream is None or vjp is None:
            continue
        for parent, g in zip(node.parents, vjp(upstream)):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                raise ShapeError(f"{node.op}: gradient shape {g.shape} != operand shape {parent.shape}")
            if parent.node is not None:
                key = parent.node.id
                grads[key] = g if key not in grads else grads[key] + g
            else:
                parent.grad = g.copy() if parent.grad is None else parent.grad + g
    logger.debug("backward visited %d nodes", len(tape))
    return tape


def zero_grad(tensors: dict[str, Tensor] | Sequence[Tensor]) -> None:
    """Drop accumulated gradients."""
    values = tensors.values() if isinstance(tensors, dict) else tensors
    for t in values:
        t.grad = None
