"""Analytical 802.11 DCF contention model.

Couples the per-virtual-slot transmission attempt probability with the
conditional collision probability through a two-equation nonlinear fixed
point, precomputes a density x distance collision grid off-line, and
serves runtime queries by one-dimensional inverse-distance interpolation
between the two nearest stored configurations.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from bisect import bisect_left
from dataclasses import dataclass

_SINGULAR_EPS = 1e-12
_DAMPING = 0.5


class SingularDenominatorError(ArithmeticError):
    """The attempt-probability denominator vanished (removable singularity)."""


class ConvergenceError(RuntimeError):
    """The fixed-point solver failed to reach the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class DcfParams:
    """Contention-window and geometry parameters of the channel model.

    payload_duration is the airtime of a protocol header plus payload,
    virtual_slot the duration of one contention slot, both in seconds.
    The radii describe the sender carrier-sense disk and the disk the
    receiver silences when it transmits, in meters.
    """

    cw_min: int = 32
    cw_max: int = 1024
    payload_duration: float = 4e-3
    virtual_slot: float = 50e-6
    carrier_sense_radius: float = 550.0
    interference_radius: float = 250.0

    def __post_init__(self):
        if self.cw_min < 1:
            raise ValueError(f"cw_min must be >= 1, got {self.cw_min}")
        if self.cw_max < self.cw_min:
            raise ValueError(f"cw_max must be >= cw_min, got {self.cw_max} < {self.cw_min}")
        ratio, rem = divmod(self.cw_max, self.cw_min)
        if rem != 0 or ratio & (ratio - 1):
            raise ValueError(f"cw_max/cw_min must be a power of 2, got {self.cw_max}/{self.cw_min}")
        if self.payload_duration <= 0 or self.virtual_slot <= 0:
            raise ValueError("payload_duration and virtual_slot must be positive")
        if self.carrier_sense_radius <= 0 or self.interference_radius <= 0:
            raise ValueError("carrier-sense and interference radii must be positive")

    @property
    def backoff_stages(self) -> int:
        """Number of window doublings from cw_min up to cw_max."""
        return (self.cw_max // self.cw_min).bit_length() - 1


@dataclass(frozen=True)
class RegionCounts:
    """Expected node counts in the contention regions around a link.

    n_cs_and_in counts nodes inside both the sender's carrier-sense disk
    and the receiver's interference disk; n_cs_minus_in counts nodes the
    sender hears but the receiver does not silence. Expected counts are
    real-valued and used directly as exponents.
    """

    n_cs_and_in: float
    n_cs_minus_in: float

    def __post_init__(self):
        if self.n_cs_and_in < 0 or self.n_cs_minus_in < 0:
            raise ValueError("region counts must be non-negative")


@dataclass(frozen=True)
class FixedPointSolution:
    p_a: float
    p_c: float
    residual: float
    iterations: int


def attempt_probability_detail(p_c: float, params: DcfParams) -> tuple[float, bool]:
    """Attempt probability plus a flag telling whether clamping to [0, 1] fired."""
    if not 0.0 <= p_c <= 1.0:
        raise ValueError(f"p_c must lie in [0, 1], got {p_c}")
    m = params.backoff_stages
    den = (1.0 - 2.0 * p_c) * (params.cw_max + 1) + p_c * params.cw_min * (1.0 - (2.0 * p_c) ** m)
    if abs(den) < _SINGULAR_EPS:
        raise SingularDenominatorError(f"attempt-probability denominator ~0 at p_c={p_c}")
    raw = (2.0 - 4.0 * p_c) / den
    value = min(1.0, max(0.0, raw))
    return value, value != raw


def attempt_probability(p_c: float, params: DcfParams) -> float:
    """Per-virtual-slot transmission attempt probability at the given collision probability."""
    value, _ = attempt_probability_detail(p_c, params)
    return value


def collision_probability(
    p_a: float, counts: RegionCounts, params: DcfParams, reduced: bool = True
) -> float:
    """Conditional collision probability seen by a sender attempting with p_a.

    With reduced=True the receiver-silenced disk is assumed covered by the
    sender's carrier-sense disk and only the overlap count matters.  The
    full form additionally exposes the sender-only region, weighted by the
    payload-to-slot duration ratio.
    """
    if not 0.0 <= p_a <= 1.0:
        raise ValueError(f"p_a must lie in [0, 1], got {p_a}")
    exponent = counts.n_cs_and_in
    if not reduced:
        exponent += counts.n_cs_minus_in * params.payload_duration / params.virtual_slot
    if exponent == 0.0:
        return 0.0
    return 1.0 - (1.0 - p_a) ** exponent


def lens_area(r1: float, r2: float, d: float) -> float:
    """Intersection area of two disks with radii r1, r2 at center separation d."""
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        r = min(r1, r2)
        return math.pi * r * r
    d1 = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d)
    d2 = d - d1
    a1 = r1 * r1 * math.acos(max(-1.0, min(1.0, d1 / r1)))
    a1 -= d1 * math.sqrt(max(0.0, r1 * r1 - d1 * d1))
    a2 = r2 * r2 * math.acos(max(-1.0, min(1.0, d2 / r2)))
    a2 -= d2 * math.sqrt(max(0.0, r2 * r2 - d2 * d2))
    return a1 + a2


def region_counts(density: float, sender_receiver_distance: float, params: DcfParams) -> RegionCounts:
    """Expected region populations for a link, from node density in nodes per m^2."""
    if density < 0:
        raise ValueError(f"density must be non-negative, got {density}")
    if sender_receiver_distance < 0:
        raise ValueError(f"distance must be non-negative, got {sender_receiver_distance}")
    lens = lens_area(params.carrier_sense_radius, params.interference_radius, sender_receiver_distance)
    cs_area = math.pi * params.carrier_sense_radius**2
    return RegionCounts(density * lens, density * max(0.0, cs_area - lens))


def _coupled_map(p_c: float, counts: RegionCounts, params: DcfParams, reduced: bool) -> float:
    """One application of the coupled system: p_c -> attempt -> collision."""
    try:
        p_a = attempt_probability(p_c, params)
    except SingularDenominatorError:
        # Removable singularity; step around it deterministically.
        nudge = 1e-9 if p_c <= 0.5 else -1e-9
        p_a = attempt_probability(p_c + nudge, params)
    return collision_probability(p_a, counts, params, reduced)


def solve_fixed_point(
    counts: RegionCounts,
    params: DcfParams,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    reduced: bool = True,
) -> FixedPointSolution:
    """Solve p_c = g(p_c) for the coupled attempt/collision system.

    Runs a damped fixed-point iteration and falls back to bisection of
    g(p) - p on [0, 1] when damping stalls.  Deterministic for identical
    inputs.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")

    def g(p: float) -> float:
        return _coupled_map(p, counts, params, reduced)

    p = 0.0
    iterations = 0
    residual = math.inf
    budget = max(1, max_iter - 70)  # leave room for the bisection fallback
    while iterations < budget:
        iterations += 1
        target = g(p)
        residual = abs(target - p)
        if residual <= tol:
            return FixedPointSolution(attempt_probability(p, params), p, residual, iterations)
        p = (1.0 - _DAMPING) * p + _DAMPING * target
        p = min(1.0, max(0.0, p))

    # Bisection on h(p) = g(p) - p; h(0) >= 0 and h(1) <= 0 always bracket.
    lo, hi = 0.0, 1.0
    h_lo = g(lo) - lo
    if h_lo <= tol:
        p = lo if abs(h_lo) <= tol else p
    for _ in range(64):
        iterations += 1
        if iterations >= max_iter:
            break
        mid = 0.5 * (lo + hi)
        h_mid = g(mid) - mid
        if h_mid == 0.0:
            lo = hi = mid
            break
        if (h_mid > 0.0) == (h_lo > 0.0):
            lo, h_lo = mid, h_mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    p = 0.5 * (lo + hi)
    residual = abs(g(p) - p)
    if residual > tol:
        raise ConvergenceError(
            f"fixed point not reached after {iterations} iterations (residual {residual:.3e})",
            residual,
            iterations,
        )
    return FixedPointSolution(attempt_probability(p, params), p, residual, iterations)


@dataclass(frozen=True)
class CollisionTable:
    """Precomputed collision probabilities over density and distance axes.

    Densities are node counts per 1e6 m^2, distances in meters.  The grid
    is indexed [density_row][distance_column] and immutable once built.
    """

    densities: tuple[float, ...]
    distances: tuple[float, ...]
    p_c_grid: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if not self.densities or not self.distances:
            raise ValueError("table axes must be non-empty")
        if any(b <= a for a, b in zip(self.densities, self.densities[1:])):
            raise ValueError("density axis must be strictly increasing")
        if any(b <= a for a, b in zip(self.distances, self.distances[1:])):
            raise ValueError("distance axis must be strictly increasing")
        if len(self.p_c_grid) != len(self.densities) or any(
            len(row) != len(self.distances) for row in self.p_c_grid
        ):
            raise ValueError("grid shape does not match the axes")
        for row in self.p_c_grid:
            for value in row:
                if not 0.0 <= value <= 1.0:
                    raise ValueError(f"grid entries must lie in [0, 1], got {value}")


def build_table(
    densities: list[float] | tuple[float, ...],
    distances: list[float] | tuple[float, ...],
    params: DcfParams,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    reduced: bool = True,
) -> CollisionTable:
    """Solve the fixed point for every axis combination.

    Density axis values are node counts per 1e6 m^2.
    """
    grid = []
    for density in densities:
        row = []
        for dist in distances:
            counts = region_counts(density / 1e6, dist, params)
            try:
                row.append(solve_fixed_point(counts, params, tol, max_iter, reduced).p_c)
            except (ConvergenceError, SingularDenominatorError) as exc:
                raise ConvergenceError(
                    f"cell (density={density}, distance={dist}): {exc}",
                    getattr(exc, "residual", math.nan),
                    getattr(exc, "iterations", 0),
                ) from exc
        grid.append(tuple(row))
    return CollisionTable(tuple(float(d) for d in densities), tuple(float(d) for d in distances), tuple(grid))


def _nearest_index(axis: tuple[float, ...], value: float) -> int:
    """Index of the axis entry nearest to value; ties go to the lower entry."""
    i = bisect_left(axis, value)
    if i == 0:
        return 0
    if i == len(axis):
        return len(axis) - 1
    return i - 1 if value - axis[i - 1] <= axis[i] - value else i


def lookup_p_c(table: CollisionTable, density: float, distance: float) -> float:
    """Collision probability for a configuration, interpolated from the table.

    The density is snapped to the nearest stored row; along the distance
    axis the two nearest stored configurations are combined by
    inverse-distance weighting.  Queries beyond the axis range clamp to
    the boundary configuration.
    """
    row = table.p_c_grid[_nearest_index(table.densities, density)]
    dist_axis = table.distances
    if distance <= dist_axis[0]:
        return row[0]
    if distance >= dist_axis[-1]:
        return row[-1]
    hi = bisect_left(dist_axis, distance)
    if dist_axis[hi] == distance:
        return row[hi]
    lo = hi - 1
    w_lo = (dist_axis[hi] - distance) / (dist_axis[hi] - dist_axis[lo])
    return w_lo * row[lo] + (1.0 - w_lo) * row[hi]


def table_to_csv_text(table: CollisionTable) -> str:
    """Render the table as CSV with 6 decimal places per probability."""
    lines = ["density,distance_m,p_c"]
    for i, density in enumerate(table.densities):
        for j, dist in enumerate(table.distances):
            lines.append(f"{density:g},{dist:g},{table.p_c_grid[i][j]:.6f}")
    return "\n".join(lines) + "\n"


def write_table_csv(table: CollisionTable, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(table_to_csv_text(table))


def read_table_csv(path) -> CollisionTable:
    """Read a table written by write_table_csv back into memory."""
    cells: dict[tuple[float, float], float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            cells[(float(rec["density"]), float(rec["distance_m"]))] = float(rec["p_c"])
    densities = tuple(sorted({k[0] for k in cells}))
    distances = tuple(sorted({k[1] for k in cells}))
    try:
        grid = tuple(tuple(cells[(den, dist)] for dist in distances) for den in densities)
    except KeyError as exc:
        raise ValueError(f"table file is missing cell {exc.args[0]}") from exc
    return CollisionTable(densities, distances, grid)


# Reference operating points for the contention model: collision
# probabilities for four field densities (nodes per 1e6 m^2) and four
# sender-receiver separations (m).  Shipped as calibration targets.
REFERENCE_DENSITIES = (90.0, 100.0, 110.0, 120.0)
REFERENCE_DISTANCES = (100.0, 150.0, 200.0, 250.0)
REFERENCE_PC = (
    (0.1444, 0.2535, 0.3319, 0.3910),
    (0.1781, 0.2727, 0.3436, 0.4062),
    (0.1781, 0.2727, 0.3544, 0.4198),
    (0.1781, 0.2898, 0.3739, 0.4323),
)


def reference_table() -> CollisionTable:
    """The shipped reference grid as a lookup table."""
    return CollisionTable(REFERENCE_DENSITIES, REFERENCE_DISTANCES, REFERENCE_PC)


@dataclass(frozen=True)
class CalibrationResult:
    radius: float
    table: CollisionTable
    deviations: tuple[tuple[float, ...], ...]
    max_abs_deviation: float
    sse: float


def fit_carrier_sense_radius(
    base: DcfParams,
    densities: tuple[float, ...] = REFERENCE_DENSITIES,
    distances: tuple[float, ...] = REFERENCE_DISTANCES,
    targets: tuple[tuple[float, ...], ...] = REFERENCE_PC,
    reduced: bool = False,
    lo: float = 60.0,
    hi: float = 600.0,
) -> CalibrationResult:
    """Least-squares fit of the carrier-sense radius against a target grid.

    Scans candidate radii coarsely, then refines around the best candidate
    by golden-section search.  The single fitted scalar is the only free
    parameter; all other contention parameters stay at their configured
    values.  The full (non-reduced) collision form is the default here
    because only its sender-only exponent makes the solved probabilities
    grow with distance the way the targets do.
    """

    def sse_at(radius: float) -> float:
        params = dataclasses.replace(base, carrier_sense_radius=radius)
        table = build_table(densities, distances, params, reduced=reduced)
        return sum(
            (table.p_c_grid[i][j] - targets[i][j]) ** 2
            for i in range(len(densities))
            for j in range(len(distances))
        )

    step = 2.0
    best_r = lo
    best_sse = math.inf
    r = lo
    while r <= hi:
        s = sse_at(r)
        if s < best_sse:
            best_r, best_sse = r, s
        r += step

    a, b = max(lo, best_r - step), min(hi, best_r + step)
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = sse_at(c), sse_at(d)
    while b - a > 1e-3:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = sse_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = sse_at(d)
    radius = 0.5 * (a + b)

    params = dataclasses.replace(base, carrier_sense_radius=radius)
    table = build_table(densities, distances, params, reduced=reduced)
    deviations = tuple(
        tuple(table.p_c_grid[i][j] - targets[i][j] for j in range(len(distances)))
        for i in range(len(densities))
    )
    max_dev = max(abs(v) for row in deviations for v in row)
    return CalibrationResult(radius, table, deviations, max_dev, sse_at(radius))
