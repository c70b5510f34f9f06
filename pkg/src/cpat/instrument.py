"""Per-invocation operation counters.

Kernels call :func:`record_macs` / :func:`record_call`; the numbers land in the
innermost active :class:`OpCounter`.  Counters live in a ``ContextVar`` so two
threads (or two commands) never share one.
"""
from __future__ import annotations

import contextlib
from collections import Counter
from contextvars import ContextVar
from dataclasses import dataclass, field


class InstrumentationError(RuntimeError):
    pass


@dataclass
class OpCounter:
    macs: Counter = field(default_factory=Counter)  # component -> MACs
    calls: Counter = field(default_factory=Counter)  # op name -> invocations

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())


_counter: ContextVar[OpCounter | None] = ContextVar("cpat_counter", default=None)
_scope: ContextVar[tuple[str, ...]] = ContextVar("cpat_scope", default=())
_enabled: ContextVar[bool] = ContextVar("cpat_instrumented", default=True)


@contextlib.contextmanager
def counting():
    """Collect op counts for everything executed inside the block."""
    if not _enabled.get():
        raise InstrumentationError("instrumentation is disabled in this context")
    counter = OpCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


@contextlib.contextmanager
def disabled():
    token = _enabled.set(False)
    c_token = _counter.set(None)
    try:
        yield
    finally:
        _counter.reset(c_token)
        _enabled.reset(token)


@contextlib.contextmanager
def component(name: str):
    """Attribute MACs recorded inside the block to ``name`` (nested with '/')."""
    token = _scope.set(_scope.get() + (name,))
    try:
        yield
    finally:
        _scope.reset(token)


def record_macs(n: int) -> None:
    c = _counter.get()
    if c is not None:
        c.macs["/".join(_scope.get()) or "other"] += int(n)


def record_call(op: str) -> None:
    c = _counter.get()
    if c is not None:
        c.calls[op] += 1
