from __future__ import annotations


class ClockError(RuntimeError):
    pass


class VirtualClock:
    """Microsecond virtual time; only ever moves forward."""

    def __init__(self, start: int = 0) -> None:
        self._now = start

    @property
    def now(self) -> int:
        return self._now

    def advance_to(self, t: int) -> None:
        if t < self._now:
            raise ClockError(f"cannot move clock back from {self._now} to {t}")
        self._now = t

    def reset(self) -> None:
        self._now = 0
