"""Time-ordered event queue and the text event log."""

from __future__ import annotations

import heapq
import itertools
from typing import Callable, Optional, TextIO


class EventQueue:
    """Callbacks ordered by (tick, insertion sequence)."""

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()

    def __len__(self):
        return len(self._heap)

    def push(self, tick: int, fn: Callable, *args) -> None:
        heapq.heappush(self._heap, (tick, next(self._seq), fn, args))

    def peek_tick(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def pop_due(self, now: int):
        """Yield every event scheduled at or before ``now``, including ones pushed meanwhile."""
        heap = self._heap
        while heap and heap[0][0] <= now:
            tick, _, fn, args = heapq.heappop(heap)
            yield tick, fn, args


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


class EventLog:
    """One ``key=value`` line per protocol or lifecycle event."""

    def __init__(self, stream: Optional[TextIO] = None, keep: bool = True):
        self.stream = stream
        self.keep = keep
        self.lines: list[str] = []

    def _emit(self, line: str) -> None:
        if self.keep:
            self.lines.append(line)
        if self.stream is not None:
            self.stream.write(line + "\n")

    def event(self, tick: int, kind: str, node: str, /, **detail) -> None:
        body = ",".join(f"{k}={_fmt(v)}" for k, v in detail.items())
        self._emit(f"tick={tick} event={kind} node={node} detail={body}")

    def agent(self, tick: int, kind: str, agent: str, /, **detail) -> None:
        extra = "".join(f" {k}={_fmt(v)}" for k, v in detail.items())
        self._emit(f"tick={tick} event={kind} agent={agent}{extra}")
