"""Instrumented multiply-accumulate counting for conv2d/matmul calls."""

from __future__ import annotations

import contextvars
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field


@dataclass
class MacCounter:
    """MAC tallies keyed by the scope active when each primitive ran."""

    totals: dict[str, int] = field(default_factory=dict)
    calls: int = 0

    def add(self, category: str, macs: int) -> None:
        self.totals[category] = self.totals.get(category, 0) + int(macs)
        self.calls += 1

    @property
    def total(self) -> int:
        return sum(self.totals.values())


_counter: contextvars.ContextVar[MacCounter | None] = contextvars.ContextVar("mac_counter", default=None)
_scope: contextvars.ContextVar[str] = contextvars.ContextVar("mac_scope", default="other")


@contextmanager
def counting_macs() -> Iterator[MacCounter]:
    """Tally every conv2d/matmul/linear call made inside the block."""
    counter = MacCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


@contextmanager
def mac_scope(category: str) -> Iterator[None]:
    """Attribute the MACs of enclosed primitives to ``category``."""
    token = _scope.set(category)
    try:
        yield
    finally:
        _scope.reset(token)


def tally(macs: int) -> None:
    counter = _counter.get()
    if counter is not None:
        counter.add(_scope.get(), macs)
