"""Constant-delay FIFO links between controller, plant and sensor."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Generic, TypeVar

from .errors import ConfigurationError, ProtocolError

T = TypeVar("T")


@dataclass(frozen=True)
class Packet(Generic[T]):
    payload: T
    send_step: int
    deliver_step: int


class DelayChannel(Generic[T]):
    """Delivers each payload exactly ``delay`` steps after it was pushed.

    At most one push per step is allowed, so a constant delay can never
    reorder packets and at most ``delay + 1`` are in flight.
    """

    def __init__(self, delay: int):
        if isinstance(delay, bool) or not isinstance(delay, int) or delay < 0:
            raise ConfigurationError(f"delay must be a nonnegative integer, got {delay!r}")
        self.delay = delay
        self._queue: deque[Packet[T]] = deque()
        self._last_push: int | None = None

    def push(self, payload: T, current_step: int) -> None:
        if self._last_push is not None and current_step <= self._last_push:
            raise ProtocolError(
                f"push at step {current_step} after a push at step {self._last_push}"
            )
        self._last_push = current_step
        self._queue.append(Packet(payload, current_step, current_step + self.delay))

    def pop(self, current_step: int) -> T | None:
        """Payload due at ``current_step``, or ``None``. Overdue packets are an error."""
        if not self._queue:
            return None
        head = self._queue[0]
        if head.deliver_step < current_step:
            raise ProtocolError(
                f"packet due at step {head.deliver_step} was not collected before step {current_step}"
            )
        if head.deliver_step > current_step:
            return None
        self._queue.popleft()
        return head.payload

    def __len__(self):
        return len(self._queue)
