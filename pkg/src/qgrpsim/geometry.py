"""Planar geometry for geographic forwarding decisions."""

from __future__ import annotations

import math
from dataclasses import dataclass


class DegeneratePositionError(ValueError):
    """An angle was requested for coincident positions."""


@dataclass(frozen=True)
class Position:
    """A point in the 2-D deployment field, in meters."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"position coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class GeoContext:
    """The three positions a forwarding decision looks at."""

    self_pos: Position
    neighbor_pos: Position
    sink_pos: Position


def distance(a: Position, b: Position) -> float:
    """Euclidean distance between two positions, in meters."""
    return math.hypot(b.x - a.x, b.y - a.y)


def deviation_angle(ctx: GeoContext) -> float:
    """Angle in [0, pi] between the sink direction and the neighbor direction.

    Zero means the neighbor sits exactly on the straight line from the
    deciding node toward the sink; pi means it lies in the opposite
    direction.
    """
    sx = ctx.sink_pos.x - ctx.self_pos.x
    sy = ctx.sink_pos.y - ctx.self_pos.y
    nx = ctx.neighbor_pos.x - ctx.self_pos.x
    ny = ctx.neighbor_pos.y - ctx.self_pos.y
    if sx == 0.0 and sy == 0.0:
        raise DegeneratePositionError("deciding node and sink coincide")
    if nx == 0.0 and ny == 0.0:
        raise DegeneratePositionError("neighbor coincides with deciding node")
    dot = sx * nx + sy * ny
    cross = sx * ny - sy * nx
    return math.atan2(abs(cross), dot)


def is_forward_progress(ctx: GeoContext) -> bool:
    """True when the neighbor deviates at most pi/2 from the sink direction.

    Evaluated through the dot-product sign, which is the same predicate in
    exact arithmetic but does not round away near-perpendicular cases the
    way the angle itself can.
    """
    sx = ctx.sink_pos.x - ctx.self_pos.x
    sy = ctx.sink_pos.y - ctx.self_pos.y
    nx = ctx.neighbor_pos.x - ctx.self_pos.x
    ny = ctx.neighbor_pos.y - ctx.self_pos.y
    if sx == 0.0 and sy == 0.0:
        raise DegeneratePositionError("deciding node and sink coincide")
    if nx == 0.0 and ny == 0.0:
        raise DegeneratePositionError("neighbor coincides with deciding node")
    return sx * nx + sy * ny >= 0.0
