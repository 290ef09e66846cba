"""Passive per-link available-bandwidth estimation.

Combines locally observed channel idle time, the peer's reported idle
time, and the analytical collision/backoff model into one derated
capacity figure per neighbor.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dcf import CollisionTable, DcfParams, lookup_p_c
from .geometry import Position, distance


@dataclass(frozen=True)
class ChannelObservation:
    """Idle-time observations for both ends of a link over one window."""

    window: float
    local_idle_fraction: float
    peer_idle_fraction: float

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError(f"window must be positive, got {self.window}")
        for name in ("local_idle_fraction", "peer_idle_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class LinkEstimate:
    peer: int
    available_bandwidth: float
    p_c_used: float
    last_update: float


@dataclass
class NeighborRecord:
    """What a node remembers about a neighbor from its last hello."""

    position: Position
    residual_energy: float
    idle_fraction: float
    last_heard: float
    seq: int


def estimate_bandwidth(
    obs: ChannelObservation, p_c: float, b_no: float, backoff_overhead: float
) -> float:
    """Available bandwidth on a link, in bit/s.

    The nominal capacity is derated multiplicatively by both ends' idle
    fractions, the collision probability, and the expected backoff
    overhead; the result always lies in [0, b_no].
    """
    if not 0.0 <= p_c <= 1.0:
        raise ValueError(f"p_c must lie in [0, 1], got {p_c}")
    if not 0.0 <= backoff_overhead <= 1.0:
        raise ValueError(f"backoff_overhead must lie in [0, 1], got {backoff_overhead}")
    if b_no <= 0:
        raise ValueError(f"b_no must be positive, got {b_no}")
    return (
        b_no
        * obs.local_idle_fraction
        * obs.peer_idle_fraction
        * (1.0 - p_c)
        * (1.0 - backoff_overhead)
    )


def mean_backoff_slots(p_c: float, params: DcfParams) -> float:
    """Expected backoff slots spent per delivered frame, over all retry stages."""
    if not 0.0 <= p_c < 1.0:
        raise ValueError(f"p_c must lie in [0, 1), got {p_c}")
    total = 0.0
    for stage in range(params.backoff_stages + 1):
        cw = min(params.cw_min * (1 << stage), params.cw_max)
        total += (p_c**stage) * (cw - 1) / 2.0
    return total


def average_backoff_overhead(p_c: float, params: DcfParams) -> float:
    """Fraction of airtime lost to backoff at the given collision probability.

    Monotone increasing in p_c; p_c = 1 is rejected because the retry
    series diverges.
    """
    backoff_time = mean_backoff_slots(p_c, params) * params.virtual_slot
    return backoff_time / (params.payload_duration + backoff_time)


def refresh_estimates(
    now: float,
    local_idle_fraction: float,
    neighbors: dict[int, NeighborRecord],
    self_position: Position,
    table: CollisionTable,
    density: float,
    b_no: float,
    params: DcfParams,
    expiry: float,
    window: float = 1.0,
) -> dict[int, LinkEstimate]:
    """Rebuild the per-neighbor estimates from current hello records.

    Neighbors whose last hello is older than expiry seconds are dropped
    from the estimate set.  The density is in nodes per 1e6 m^2, matching
    the table axis.
    """
    estimates: dict[int, LinkEstimate] = {}
    for peer, rec in neighbors.items():
        if now - rec.last_heard > expiry:
            continue
        p_c = lookup_p_c(table, density, distance(self_position, rec.position))
        overhead = average_backoff_overhead(p_c, params)
        obs = ChannelObservation(window, local_idle_fraction, rec.idle_fraction)
        estimates[peer] = LinkEstimate(peer, estimate_bandwidth(obs, p_c, b_no, overhead), p_c, now)
    return estimates
