"""Effect records protocol handlers hand back to the engine."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Unicast:
    to: int
    packet: object
    bits: int


@dataclass(frozen=True)
class Broadcast:
    packet: object
    bits: int


@dataclass(frozen=True)
class StartTimer:
    delay: float
    kind: str
    payload: tuple
