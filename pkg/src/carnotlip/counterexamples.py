"""
Counterexample witnesses outside the Carnot setting.

Snowflaked interval
    [0, 1] with distance |s - t|^{1/2}. The quadrant-subdivision curve F of
    the unit square is Lipschitz from it, preserves Lebesgue measure, and
    identifies points a quarter apart, so it is biLipschitz on no set of
    positive measure.

Grushin plane
    R^2 with length element dx^2 + x^{-2} dy^2. The segment S of the y-axis
    between 0 and 1 is a snowflaked interval up to a constant, and the curve
    extends from S to a Lipschitz map of a neighbourhood U_eps of S.

The curve is the limit of the iterated function system T_0..T_3 below
(entry corner (0, 0), exit corner (1, 0)); at finite depth it is evaluated as
the polygon through the cell corners, or through the cell centers when a
point strictly inside each cell is needed.
"""

import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import optimize as spo
from scipy.spatial import cKDTree

from .cache import CacheManager
from .cantor import BoxDimension
from .maps import DomainError
from .reports import AuditReport
from .utils import MC_SIGMA_BAND, log_slope_fit, make_rng, parallel_map

logger = logging.getLogger(__name__)


# T_q(x) = A_q x + b_q, in curve order
HILBERT_MAPS: Tuple[Tuple[Tuple[Tuple[float, float], Tuple[float, float]], Tuple[float, float]], ...] = (
    (((0.0, 0.5), (0.5, 0.0)), (0.0, 0.0)),
    (((0.5, 0.0), (0.0, 0.5)), (0.0, 0.5)),
    (((0.5, 0.0), (0.0, 0.5)), (0.5, 0.5)),
    (((0.0, -0.5), (-0.5, 0.0)), (1.0, 0.5)),
)

# Quadrant (x >= 1/2, y >= 1/2) -> index of the map whose image it is
_QUADRANT_ORDER = {(0, 0): 0, (0, 1): 1, (1, 1): 2, (1, 0): 3}

# Length charged for a segment that meets the Grushin axis without being horizontal
_AXIS_PENALTY = 1e6

DEFAULT_CURVE_DEPTH = 12

CurveFn = Callable[[np.ndarray], np.ndarray]


class NoCollisionError(ValueError):
    """Raised when no pair of far-apart parameters with close images exists."""


@dataclass(frozen=True)
class SnowflakePoint:
    """A parameter s in [0, 1] under the distance |s - t|^{1/2}."""
    s: float

    def __post_init__(self):
        if not 0.0 <= self.s <= 1.0:
            raise DomainError(f"snowflake points lie in [0, 1], got {self.s}")

    def distance(self, other: 'SnowflakePoint') -> float:
        return float(np.sqrt(abs(self.s - other.s)))


@dataclass(frozen=True)
class GrushinPoint:
    """A point (x, y) of the Grushin plane."""
    x: float
    y: float

    @property
    def on_axis(self) -> bool:
        return self.x == 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


# ----------------------------------------------------------------------
# space-filling curve
# ----------------------------------------------------------------------
def _tables(maps: Optional[Sequence[Any]]) -> Tuple[np.ndarray, np.ndarray]:
    maps = HILBERT_MAPS if maps is None else maps
    if len(maps) != 4:
        raise ValueError(f"an orientation table needs four maps, got {len(maps)}")
    A = np.array([np.asarray(a, dtype=float) for a, _ in maps])
    b = np.array([np.asarray(v, dtype=float) for _, v in maps])
    return A, b


def _quadrant_digits(s: np.ndarray, depth: int) -> Tuple[np.ndarray, np.ndarray]:
    r = s.astype(float).copy()
    quads = np.empty((len(r), depth), dtype=int)
    for k in range(depth):
        q = np.minimum(np.floor(4.0 * r), 3).astype(int)
        quads[:, k] = q
        r = 4.0 * r - q
    return quads, r


def space_filling_curve(
    s: Any,
    depth: int = DEFAULT_CURVE_DEPTH,
    maps: Optional[Sequence[Any]] = None,
    centered: bool = False
) -> np.ndarray:
    """
    Evaluate the quadrant-subdivision curve.

    Args:
        s: Parameter(s) in [0, 1]
        depth: Subdivision depth
        maps: Orientation table (``HILBERT_MAPS`` by default)
        centered: Send every parameter in a depth-``depth`` interval to the
            center of its cell instead of walking the polygon

    Returns:
        (N, 2) points (or (2,) for a scalar parameter)

    Raises:
        DomainError: If a parameter lies outside [0, 1]

    Example:
        >>> space_filling_curve(0.0).tolist()
        [0.0, 0.0]
        >>> space_filling_curve(0.5, 4).tolist()
        [0.5, 0.5]
    """
    arr = np.asarray(s, dtype=float)
    single = arr.ndim == 0
    flat = arr.reshape(-1)
    if np.any((flat < 0) | (flat > 1)) or not np.all(np.isfinite(flat)):
        raise DomainError("curve parameters must lie in [0, 1]")
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    A, b = _tables(maps)
    quads, rest = _quadrant_digits(flat, depth)
    if centered:
        x = np.full((len(flat), 2), 0.5)
    else:
        x = np.column_stack([rest, np.zeros_like(rest)])
    for k in range(depth - 1, -1, -1):
        q = quads[:, k]
        x = np.einsum('nij,nj->ni', A[q], x) + b[q]
    return x[0] if single else x


def cell_index(s: Any, depth: int, maps: Optional[Sequence[Any]] = None) -> np.ndarray:
    """Integer coordinates (i, j) of the depth-``depth`` cell visited at s, shape (N, 2)."""
    side = 2 ** depth
    pts = space_filling_curve(np.atleast_1d(np.asarray(s, dtype=float)), depth, maps,
                              centered=True)
    return np.clip(np.floor(pts * side), 0, side - 1).astype(np.int64)


def hilbert_index(x: Any, y: Any, order: int) -> np.ndarray:
    """
    Position along the curve of the cells (x, y) of the 2^order grid.

    Inverse of ``cell_index`` on the interval midpoints: the cell visited by
    [k 4^-order, (k + 1) 4^-order] has index k.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    side = 2 ** order
    if np.any((x < 0) | (x >= side) | (y < 0) | (y >= side)):
        raise ValueError(f"cell coordinates must lie in [0, {side})")
    A, b = _tables(None)
    A_inv = np.linalg.inv(A)
    p = np.column_stack([(x + 0.5) / side, (y + 0.5) / side])
    index = np.zeros(len(p), dtype=np.int64)
    lookup = np.zeros((2, 2), dtype=int)
    for (qx, qy), q in _QUADRANT_ORDER.items():
        lookup[qx, qy] = q
    for _ in range(order):
        q = lookup[(p[:, 0] >= 0.5).astype(int), (p[:, 1] >= 0.5).astype(int)]
        p = np.einsum('nij,nj->ni', A_inv[q], p - b[q])
        index = 4 * index + q
    return index


def cell_visit_check(depth: int, maps: Optional[Sequence[Any]] = None) -> AuditReport:
    """
    Exact check that the 4^depth dyadic parameter intervals visit every
    depth-``depth`` cell exactly once.
    """
    if depth < 0:
        raise ValueError(f"depth must be >= 0, got {depth}")
    n = 4 ** depth
    k = np.arange(n)
    cells = cell_index((k + 0.5) / n, depth, maps)
    flat = cells[:, 0] * 2 ** depth + cells[:, 1]
    visits = np.bincount(flat, minlength=n)
    passed = bool(np.all(visits == 1))
    metrics: Dict[str, Any] = {'depth': depth, 'cells': n,
                               'min_visits': int(visits.min()), 'max_visits': int(visits.max())}
    if maps is None and depth > 0:
        roundtrip = bool(np.array_equal(hilbert_index(cells[:, 0], cells[:, 1], depth), k))
        metrics['index_roundtrip'] = roundtrip
        passed = passed and roundtrip
    missing = np.flatnonzero(visits != 1)[:20]
    violations = [{'cell': [int(c // 2 ** depth), int(c % 2 ** depth)], 'visits': int(visits[c])}
                  for c in missing]
    return AuditReport('cell_visits', passed, metrics, violations)


def measure_preservation_check(
    depth: int,
    samples: int = 100_000,
    seed: int = 0,
    maps: Optional[Sequence[Any]] = None,
    curve: Optional[CurveFn] = None
) -> AuditReport:
    """
    Monte Carlo check that every depth-``depth`` cell has preimage measure
    4^-depth.

    Parameters are stratified uniform samples; cell counts are compared with
    the binomial expectation within the 3 sigma band.

    Args:
        depth: Cell depth
        samples: Number of parameters
        seed: Sampling seed
        maps: Orientation table for the built-in curve
        curve: Any callable s -> (N, 2) in the unit square, replacing the
            built-in curve
    """
    n_cells = 4 ** depth
    if depth == 0:
        return AuditReport('measure_preservation', True,
                           {'depth': 0, 'cells': 1, 'max_abs_z': 0.0, 'samples': samples})
    rng = make_rng(seed, 90)
    s = (np.arange(samples) + rng.random(samples)) / samples
    side = 2 ** depth
    if curve is None:
        cells = cell_index(s, depth, maps)
    else:
        pts = np.asarray(curve(s), dtype=float)
        cells = np.clip(np.floor(pts * side), 0, side - 1).astype(np.int64)
    counts = np.bincount(cells[:, 0] * side + cells[:, 1], minlength=n_cells)
    p = 1.0 / n_cells
    expected = samples * p
    sigma = np.sqrt(samples * p * (1 - p))
    z = (counts - expected) / sigma
    table = pd.DataFrame({'cell_x': np.arange(n_cells) // side, 'cell_y': np.arange(n_cells) % side,
                          'count': counts, 'expected': expected, 'z': z})
    bad = table[np.abs(table['z']) > MC_SIGMA_BAND]
    report = AuditReport(
        name='measure_preservation',
        passed=bad.empty,
        metrics={'depth': depth, 'cells': n_cells, 'max_abs_z': float(np.abs(z).max()),
                 'samples': samples},
        violations=bad.to_dict('records'),
        tables={'cells': table},
    )
    logger.info(f"Measure preservation at depth {depth}: max |z| = {report.metrics['max_abs_z']:.3g}")
    return report


def curve_trace(depth: int, maps: Optional[Sequence[Any]] = None) -> pd.DataFrame:
    """Polygon through the 4^depth + 1 cell corners, columns (s, x, y)."""
    s = np.arange(4 ** depth + 1) / 4 ** depth
    pts = space_filling_curve(s, depth, maps)
    return pd.DataFrame({'s': s, 'x': pts[:, 0], 'y': pts[:, 1]})


def snowflake_lipschitz(depth: int = DEFAULT_CURVE_DEPTH, pairs: int = 100_000,
                        seed: int = 0) -> AuditReport:
    """Largest |F(s) - F(t)| / |s - t|^{1/2} over seeded pairs at log-uniform gaps."""
    rng = make_rng(seed, 91)
    s = rng.random(pairs)
    gap = 10.0 ** rng.uniform(-8, 0, size=pairs) * rng.choice([-1.0, 1.0], size=pairs)
    t = np.clip(s + gap, 0.0, 1.0)
    keep = t != s
    s, t = s[keep], t[keep]
    diff = np.linalg.norm(space_filling_curve(s, depth) - space_filling_curve(t, depth), axis=1)
    ratio = diff / np.sqrt(np.abs(s - t))
    constant = float(ratio.max())
    return AuditReport('snowflake_lipschitz', bool(np.isfinite(constant)),
                       {'constant': constant, 'depth': depth, 'pairs': int(len(ratio))})


def snowflake_box_dimension(samples: int = 4 ** 7, scales: Optional[Sequence[float]] = None,
                            seed: int = 0) -> BoxDimension:
    """
    Box dimension of a sampled net of the snowflaked interval.

    A ball of radius r is an interval of length r^2, so N(r) counts the
    occupied intervals of length r^2.
    """
    scales = np.asarray(scales if scales is not None else 2.0 ** -np.arange(1, 7), dtype=float)
    if len(scales) < 4:
        raise ValueError(f"need at least four scales, got {len(scales)}")
    finest = float(scales.min()) ** 2
    if samples * finest < 1:
        logger.warning(f"{samples} samples do not resolve intervals of length {finest:.3g}")
    rng = make_rng(seed, 92)
    s = (np.arange(samples) + rng.random(samples)) / samples
    counts = np.array([len(np.unique(np.floor(s / r ** 2))) for r in scales])
    slope, intercept, residual = log_slope_fit(scales, counts)
    return BoxDimension(slope, intercept, residual, scales, counts)


@dataclass
class CollisionWitness:
    """Two parameters at least a quarter apart whose images nearly coincide."""
    s: float
    t: float
    image_s: np.ndarray
    image_t: np.ndarray
    distance: float
    depth: int

    @property
    def snowflake_distance(self) -> float:
        return float(np.sqrt(abs(self.s - self.t)))

    def to_dict(self) -> Dict[str, Any]:
        return {'s': self.s, 't': self.t, 'image_s': self.image_s.tolist(),
                'image_t': self.image_t.tolist(), 'distance': self.distance,
                'snowflake_distance': self.snowflake_distance, 'depth': self.depth}


def collision_witness(depth: int = 8, curve: Optional[CurveFn] = None,
                      search_depth: int = 8, min_gap: float = 0.25) -> CollisionWitness:
    """
    Find s, t with |s - t| >= 1/4 and |F(s) - F(t)| <= 2^{-depth+1}.

    The curve is evaluated at the dyadic corners k 4^-m (m = min(depth,
    search_depth)) and a KD-tree lists all image pairs within the tolerance.
    For depth > search_depth the best candidates are refined on finer
    dyadic grids around both parameters.

    Args:
        depth: Resolution (>= 4)
        curve: Callable s -> (N, 2); the built-in curve at ``depth`` by default
        search_depth: Resolution of the global search grid
        min_gap: Required parameter separation

    Raises:
        ValueError: If depth < 4 or depth > search_depth + 4
        NoCollisionError: If no such pair exists on the search grid
    """
    if depth < 4:
        raise ValueError(f"collision search needs depth >= 4, got {depth}")
    m = min(depth, search_depth)
    if depth - m > 4:
        raise ValueError(f"depth {depth} exceeds the refinable range {search_depth + 4}")
    curve = curve or partial(space_filling_curve, depth=depth)
    tol = 2.0 ** (-depth + 1)

    s = np.arange(4 ** m + 1) / 4 ** m
    img = np.asarray(curve(s), dtype=float)
    tree = cKDTree(img)
    pairs = tree.query_pairs(r=max(tol, 2.0 ** (-m + 1)), output_type='ndarray')
    if len(pairs):
        pairs = pairs[np.abs(s[pairs[:, 0]] - s[pairs[:, 1]]) >= min_gap]
    if not len(pairs):
        raise NoCollisionError(f"no image pairs within {tol:.3g} at parameter gap >= {min_gap}")

    dist = np.linalg.norm(img[pairs[:, 0]] - img[pairs[:, 1]], axis=1)
    order = np.lexsort((s[pairs[:, 0]], dist))
    best: Optional[CollisionWitness] = None
    for idx in order[:32]:
        i, j = pairs[idx]
        a, b, d = float(s[i]), float(s[j]), float(dist[idx])
        if depth > m:
            a, b, d = _refine_collision(curve, a, b, m, depth, min_gap)
        if d <= tol and (best is None or d < best.distance):
            lo, hi = sorted((a, b))
            both = np.asarray(curve(np.array([lo, hi])), dtype=float)
            best = CollisionWitness(lo, hi, both[0], both[1], d, depth)
        if best is not None and depth == m:
            break
    if best is None:
        raise NoCollisionError(f"no candidate refined below {tol:.3g}")
    logger.info(f"Collision witness s={best.s:.6g}, t={best.t:.6g}, distance {best.distance:.3g}")
    return best


def _refine_collision(curve: CurveFn, a: float, b: float, m: int, depth: int,
                      min_gap: float) -> Tuple[float, float, float]:
    step = 4.0 ** -depth
    width = 4.0 ** -m
    grid = np.arange(-round(width / step), round(width / step) + 1) * step
    sa = np.clip(a + grid, 0.0, 1.0)
    sb = np.clip(b + grid, 0.0, 1.0)
    ia = np.asarray(curve(sa), dtype=float)
    ib = np.asarray(curve(sb), dtype=float)
    dist = np.linalg.norm(ia[:, None, :] - ib[None, :, :], axis=2)
    dist[np.abs(sa[:, None] - sb[None, :]) < min_gap] = np.inf
    i, j = np.unravel_index(np.argmin(dist), dist.shape)
    return float(sa[i]), float(sb[j]), float(dist[i, j])


def _occupied_measure(s: np.ndarray, bins: int = 1024) -> float:
    if not len(s):
        return 0.0
    idx = np.clip(np.floor(s * bins), 0, bins - 1).astype(int)
    return float(len(np.unique(idx)) / bins)


def bilip_failure_scan(
    samples: Any,
    L_grid: Sequence[float] = (1.0, 10.0, 100.0),
    depth: int = DEFAULT_CURVE_DEPTH,
    seed: int = 0,
    witness: Optional[CollisionWitness] = None,
    neighborhood: float = 0.01,
    neighbors: int = 16,
    curve: Optional[CurveFn] = None
) -> AuditReport:
    """
    Look for pairs in A on which F fails a lower biLipschitz bound.

    For each L the scan searches (y, y') in A x A with
    |F(y) - F(y')| < |y - y'|^{1/2} / L among image-space nearest neighbours
    and among all pairs steered into the neighbourhoods of a collision
    witness. A sparse set (sampled measure < 1/2) or a set missing one of the
    witness neighbourhoods is reported, not raised.

    Args:
        samples: Sampled subset A of [0, 1]
        L_grid: Positive constants to defeat
        depth: Curve depth
        seed: Seed (used only when a witness has to be searched)
        witness: Collision witness (found at depth 8 when omitted)
        neighborhood: Radius of the witness neighbourhoods in parameter space
        neighbors: Nearest image neighbours examined per sample
        curve: Callable s -> (N, 2) replacing the built-in curve

    Returns:
        AuditReport: passed when every L is defeated; table ``pairs`` lists
        the best violating pair per L

    Raises:
        ValueError: If some L <= 0
    """
    L_grid = [float(L) for L in L_grid]
    if any(not L > 0 for L in L_grid):
        raise ValueError(f"L must be positive, got {L_grid}")
    A = np.unique(np.asarray(samples, dtype=float).ravel())
    if np.any((A < 0) | (A > 1)):
        raise DomainError("samples must lie in [0, 1]")
    curve = curve or partial(space_filling_curve, depth=depth)
    measure = _occupied_measure(A)
    sparse = measure < 0.5
    if sparse:
        logger.warning(f"Candidate set has sampled measure {measure:.3f} < 0.5")

    if witness is None:
        witness = collision_witness(8)
    near_s = A[np.abs(A - witness.s) <= neighborhood]
    near_t = A[np.abs(A - witness.t) <= neighborhood]
    escaped = not (len(near_s) and len(near_t))

    candidates = []
    if len(A) >= 2:
        img = np.asarray(curve(A), dtype=float)
        k = min(neighbors + 1, len(A))
        _, nn = cKDTree(img).query(img, k=k)
        left = np.repeat(np.arange(len(A)), k - 1)
        right = nn[:, 1:].ravel()
        candidates.append((A[left], A[right], img[left], img[right]))
        if not escaped:
            ys, yt = np.meshgrid(near_s, near_t, indexing='ij')
            ys, yt = ys.ravel(), yt.ravel()
            candidates.append((ys, yt, np.asarray(curve(ys), dtype=float),
                               np.asarray(curve(yt), dtype=float)))

    if candidates:
        y = np.concatenate([c[0] for c in candidates])
        yp = np.concatenate([c[1] for c in candidates])
        fy = np.vstack([c[2] for c in candidates])
        fyp = np.vstack([c[3] for c in candidates])
        gap = np.sqrt(np.abs(y - yp))
        image = np.linalg.norm(fy - fyp, axis=1)
        ok = gap > 0
        y, yp, gap, image = y[ok], yp[ok], gap[ok], image[ok]
        ratio = image / gap
    else:
        y = yp = gap = image = ratio = np.zeros(0)

    rows, undefeated = [], []
    best = int(np.argmin(ratio)) if len(ratio) else None
    for L in sorted(L_grid):
        if best is not None and ratio[best] < 1.0 / L:
            rows.append({'L': L, 'y': float(y[best]), 'y_prime': float(yp[best]),
                         'image_distance': float(image[best]),
                         'snowflake_distance': float(gap[best]), 'ratio': float(ratio[best])})
        else:
            undefeated.append({'L': L})

    return AuditReport(
        name='bilip_failure',
        passed=not undefeated,
        metrics={'samples': int(len(A)), 'measure': measure, 'sparse': sparse,
                 'witness_escaped': escaped,
                 'min_ratio': float(ratio.min()) if len(ratio) else float('nan'),
                 'defeated': len(rows), 'tested': len(L_grid)},
        violations=undefeated,
        tables={'pairs': pd.DataFrame(rows, columns=['L', 'y', 'y_prime', 'image_distance',
                                                     'snowflake_distance', 'ratio'])},
    )


# ----------------------------------------------------------------------
# Grushin plane
# ----------------------------------------------------------------------
def grushin_segment_length(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Exact Grushin length of straight segments a -> b, shape (N,).

    With B = |dy / dx| and u = |x| the length element is
    sqrt(u^2 + B^2) / u du, whose primitive is S - B log((B + S) / u) with
    S = sqrt(u^2 + B^2). Segments that meet the axis have infinite length
    unless they are horizontal.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    dx = b[:, 0] - a[:, 0]
    dy = b[:, 1] - a[:, 1]
    out = np.full(len(dx), np.inf)

    flat = dy == 0
    out[flat] = np.abs(dx[flat])

    upright = ~flat & (dx == 0) & (a[:, 0] != 0)
    out[upright] = np.abs(dy[upright]) / np.abs(a[upright, 0])

    slanted = ~flat & (dx != 0) & (a[:, 0] * b[:, 0] > 0)
    if slanted.any():
        B = np.abs(dy[slanted] / dx[slanted])
        u0, u1 = np.abs(a[slanted, 0]), np.abs(b[slanted, 0])

        def primitive(u):
            S = np.sqrt(u * u + B * B)
            return S - B * np.log((B + S) / u)

        out[slanted] = np.abs(primitive(u1) - primitive(u0))
    return out


def _path_length(nodes: np.ndarray) -> float:
    seg = grushin_segment_length(nodes[:-1], nodes[1:])
    return float(np.where(np.isfinite(seg), seg, _AXIS_PENALTY).sum())


def _canonical(p: np.ndarray, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """Order the endpoints, move p to height 0 and rescale by (x, y) -> (x/l, y/l^2)."""
    if tuple(q) < tuple(p):
        p, q = q, p
    shift = p[1]
    p0 = np.array([p[0], 0.0])
    q0 = np.array([q[0], q[1] - shift])
    scale = max(abs(p0[0]), abs(q0[0]), abs(q0[0] - p0[0]), np.sqrt(abs(q0[1])))
    if scale == 0:
        return p0, q0, 1.0, shift
    return (p0 / [scale, scale ** 2], q0 / [scale, scale ** 2], float(scale), float(shift))


def _assemble(z: np.ndarray, p: np.ndarray, q: np.ndarray, nodes: int) -> np.ndarray:
    pin_first, pin_last = p[0] == 0, q[0] == 0
    xs = z[:nodes]
    ys = list(z[nodes:])
    y = np.empty(nodes)
    cursor = 0
    for i in range(nodes):
        if i == 0 and pin_first:
            y[i] = p[1]
        elif i == nodes - 1 and pin_last:
            y[i] = q[1]
        else:
            y[i] = ys[cursor]
            cursor += 1
    return np.vstack([p, np.column_stack([xs, y]), q])


def _solve_start(task: Tuple[np.ndarray, np.ndarray, int, int, int]) -> Tuple[float, np.ndarray]:
    p, q, nodes, start, seed = task
    tau = np.arange(1, nodes + 1) / (nodes + 1)
    side = 1.0 if p[0] + q[0] >= 0 else -1.0
    amplitude = 0.0 if start == 0 else make_rng(seed, 80, start).uniform(0.25, 1.5)
    xs = p[0] + (q[0] - p[0]) * tau + side * amplitude * np.sin(np.pi * tau)
    ys = p[1] + (q[1] - p[1]) * tau
    keep = np.ones(nodes, dtype=bool)
    if p[0] == 0:
        keep[0] = False
    if q[0] == 0:
        keep[-1] = False
    z0 = np.concatenate([xs, ys[keep]])

    def objective(z):
        return _path_length(_assemble(z, p, q, nodes))

    if start == 0 and objective(z0) >= _AXIS_PENALTY:
        # a straight start along the axis has no admissible segment
        z0[:nodes] += side * 0.5 * np.sin(np.pi * tau)
    if start == 0 and objective(z0) < _AXIS_PENALTY and p[1] == q[1]:
        return objective(z0), _assemble(z0, p, q, nodes)
    res = spo.minimize(objective, z0, method='Powell',
                       options={'maxiter': 200 * len(z0), 'xtol': 1e-9, 'ftol': 1e-12})
    best_z = res.x if res.fun <= objective(z0) else z0
    return float(objective(best_z)), _assemble(best_z, p, q, nodes)


@dataclass
class GrushinEstimate:
    """Distance interval between two Grushin points and the best path found."""
    lower: float
    upper: float
    path: np.ndarray = field(repr=False)
    starts: int = 1

    @property
    def interval(self) -> Tuple[float, float]:
        return (self.lower, self.upper)

    def path_table(self) -> pd.DataFrame:
        return pd.DataFrame({'x': self.path[:, 0], 'y': self.path[:, 1]})

    def to_dict(self) -> Dict[str, Any]:
        return {'lower': self.lower, 'upper': self.upper, 'starts': self.starts}


def grushin_distance_estimate(
    p: Union[GrushinPoint, Sequence[float]],
    q: Union[GrushinPoint, Sequence[float]],
    budget: int = 4,
    seed: int = 0,
    nodes: int = 12,
    workers: int = 1
) -> GrushinEstimate:
    """
    Bracket the Grushin distance between p and q.

    The upper bound is the shortest polyline found by Powell searches from
    ``budget`` seeded starts (a straight start plus sine bumps of random
    amplitude); a polyline leaving an axis endpoint is held horizontal on its
    first segment. The problem is solved after the dilation
    (x, y) -> (x / l, y / l^2), which scales lengths by 1 / l, so axis
    distances scale exactly like sqrt(h). The lower bound is |x_p - x_q|.

    Args:
        p, q: Endpoints
        budget: Number of starts (>= 1); the bracket only shrinks as it grows
        seed: Seed for the start amplitudes
        nodes: Interior polyline nodes
        workers: joblib workers for the starts

    Raises:
        ValueError: If budget < 1

    Example:
        >>> grushin_distance_estimate((0, 0), (0.5, 0)).upper
        0.5
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    pa = p.as_array() if isinstance(p, GrushinPoint) else np.asarray(p, dtype=float)
    qa = q.as_array() if isinstance(q, GrushinPoint) else np.asarray(q, dtype=float)
    lower = float(abs(pa[0] - qa[0]))
    if np.array_equal(pa, qa):
        return GrushinEstimate(0.0, 0.0, np.vstack([pa, qa]), 0)

    cp, cq, scale, shift = _canonical(pa, qa)
    tasks = [(cp, cq, nodes, k, seed) for k in range(budget)]
    results = parallel_map(_solve_start, tasks, workers)
    length, path = min(results, key=lambda item: item[0])
    if length >= _AXIS_PENALTY:
        logger.warning(f"No admissible path found between {pa.tolist()} and {qa.tolist()}")
    upper = max(length * scale, lower)
    path = path * [scale, scale ** 2] + [0.0, shift]
    return GrushinEstimate(lower, float(upper), path, budget)


def grushin_axis_constant(budget: int = 4, seed: int = 0, nodes: int = 12,
                          cache: Optional[CacheManager] = None) -> float:
    """
    Measured constant c with d((0, y), (0, y')) ~ c |y - y'|^{1/2}.

    Identifies the axis segment S with the snowflaked interval up to the
    factor c.
    """
    key = f"grushin_axis:budget{budget}:seed{seed}:nodes{nodes}"
    if cache is not None:
        cached = cache.get_constant(key)
        if cached is not None:
            return cached
    value = grushin_distance_estimate((0.0, 0.0), (0.0, 1.0), budget, seed, nodes).upper
    if cache is not None:
        cache.save_constant(key, value, {'budget': budget, 'seed': seed, 'nodes': nodes})
    return value


def axis_ratio_profile(heights: Sequence[float] = (0.01, 0.04, 0.16), budget: int = 4,
                       seed: int = 0) -> AuditReport:
    """estimate(h) / sqrt(h) for axis pairs (0, 0), (0, h); passes within 20% spread."""
    ratios = np.array([grushin_distance_estimate((0.0, 0.0), (0.0, h), budget, seed).upper
                       / np.sqrt(h) for h in heights])
    spread = float((ratios.max() - ratios.min()) / ratios.mean())
    return AuditReport('grushin_axis', spread <= 0.2,
                       {'spread': spread, 'mean_ratio': float(ratios.mean())},
                       tables={'ratios': pd.DataFrame({'h': list(heights), 'ratio': ratios})})


def _check_neighbourhood(pts: np.ndarray, epsilon: float) -> None:
    inside = (np.abs(pts[:, 0]) < epsilon) & (pts[:, 1] > -epsilon) & (pts[:, 1] < 1 + epsilon)
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise DomainError(f"point {pts[bad].tolist()} is outside U_eps (eps={epsilon})")


def grushin_extension_map(
    points: Any,
    epsilon: float = 0.1,
    depth: int = 10,
    window: int = 32,
    curve: Optional[CurveFn] = None
) -> np.ndarray:
    """
    Extension of the axis curve to U_eps = (-eps, eps) x (-eps, 1 + eps).

    (x, y) goes to the average of F over parameters in [y - x^2, y + x^2]
    (clamped to [0, 1]); on the axis this is F(y) itself.

    Raises:
        DomainError: If a point lies outside U_eps
    """
    arr = np.asarray(points, dtype=float)
    single = arr.ndim == 1
    pts = arr.reshape(-1, 2)
    _check_neighbourhood(pts, epsilon)
    curve = curve or partial(space_filling_curve, depth=depth)
    offsets = (np.arange(window) + 0.5) / window * 2.0 - 1.0
    half = pts[:, 0] ** 2
    params = np.clip(pts[:, 1, None] + half[:, None] * offsets[None, :], 0.0, 1.0)
    values = np.asarray(curve(params.ravel()), dtype=float).reshape(len(pts), window, 2)
    out = values.mean(axis=1)
    return out[0] if single else out


def grushin_gauge(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """|dx| + min(|dy| / max|x|, |dy|^{1/2}), comparable to the Grushin distance."""
    dx = np.abs(p[:, 0] - q[:, 0])
    dy = np.abs(p[:, 1] - q[:, 1])
    reach = np.maximum(np.abs(p[:, 0]), np.abs(q[:, 0]))
    vertical = np.sqrt(dy)
    far = reach > 0
    vertical[far] = np.minimum(dy[far] / reach[far], vertical[far])
    return dx + vertical


def grushin_lipschitz_scan(pairs: int = 20_000, seed: int = 0, epsilon: float = 0.1,
                           depth: int = 10) -> AuditReport:
    """
    Ratio |G(p) - G(q)| / gauge(p, q) for the extension map G on seeded pairs.

    Partners are displaced by (r a, r max(|x|, r) b) with r log-uniform, which
    probes both the horizontal and the axis-dominated regimes.
    """
    rng = make_rng(seed, 93)
    inner = 0.95 * epsilon
    p = np.column_stack([rng.uniform(-inner, inner, pairs),
                         rng.uniform(-inner, 1 + inner, pairs)])
    p[rng.random(pairs) < 0.2, 0] = 0.0
    r = 10.0 ** rng.uniform(-6, -1, size=pairs)
    step = np.column_stack([r * rng.uniform(-1, 1, pairs),
                            r * np.maximum(np.abs(p[:, 0]), r) * rng.uniform(-1, 1, pairs)])
    q = p + step
    keep = (np.abs(q[:, 0]) < epsilon) & (q[:, 1] > -epsilon) & (q[:, 1] < 1 + epsilon)
    p, q = p[keep], q[keep]
    g = grushin_gauge(p, q)
    ok = g > 0
    diff = np.linalg.norm(grushin_extension_map(p[ok], epsilon, depth)
                          - grushin_extension_map(q[ok], epsilon, depth), axis=1)
    ratio = diff / g[ok]
    constant = float(ratio.max()) if len(ratio) else 0.0
    return AuditReport('grushin_lipschitz', bool(np.isfinite(constant)),
                       {'constant': constant, 'pairs': int(len(ratio)), 'depth': depth,
                        'epsilon': epsilon})


@dataclass
class CandidatePiece:
    """A sampled candidate set in U_eps with a claimed biLipschitz constant."""
    points: np.ndarray
    constant: float
    name: str = ''


def nondecomposability_audit(
    pieces: Sequence[Union[CandidatePiece, Tuple[Any, float]]],
    depth: int = 10,
    axis_tol: float = 1e-3,
    bins: int = 1024,
    match_depth: int = 5,
    seed: int = 0
) -> AuditReport:
    """
    Check how much of S a list of candidate biLipschitz pieces can claim.

    Each piece is restricted to S (points with |x| <= axis_tol, 0 <= y <= 1,
    identified with parameters s = y) and scanned for a pair violating its
    claimed constant. Refuted pieces fall back into the garbage; the
    remainder is the part of S left to the garbage, and its image is box
    counted against the full square at cell depth ``match_depth``.

    Returns:
        AuditReport: passed when the remainder image occupies at least 90% of
        the cells the full square does; table ``pieces`` has one row per piece
    """
    witness = collision_witness(8)
    covered = np.zeros(bins, dtype=bool)
    rows = []
    for i, piece in enumerate(pieces):
        if not isinstance(piece, CandidatePiece):
            piece = CandidatePiece(np.asarray(piece[0], dtype=float), float(piece[1]))
        pts = np.asarray(piece.points, dtype=float).reshape(-1, 2)
        on_axis = (np.abs(pts[:, 0]) <= axis_tol) & (pts[:, 1] >= 0) & (pts[:, 1] <= 1)
        s = pts[on_axis, 1]
        refuted = False
        if len(s) >= 2:
            scan = bilip_failure_scan(s, (piece.constant,), depth, seed, witness)
            refuted = scan.passed
        axis_measure = _occupied_measure(s, bins)
        if not refuted and len(s):
            covered[np.unique(np.clip(np.floor(s * bins), 0, bins - 1).astype(int))] = True
        rows.append({'piece': piece.name or str(i), 'constant': piece.constant,
                     'axis_samples': int(len(s)), 'axis_measure': axis_measure,
                     'refuted': refuted})

    remainder = np.flatnonzero(~covered)
    full = 4 ** match_depth
    if len(remainder):
        sub = (np.arange(4) + 0.5) / 4
        s_rem = ((remainder[:, None] + sub[None, :]) / bins).ravel()
        cells = cell_index(s_rem, depth)
        shift = depth - match_depth
        coarse = cells >> shift
        occupied = len(np.unique(coarse[:, 0] * 2 ** match_depth + coarse[:, 1]))
    else:
        occupied = 0
    ratio = occupied / full
    report = AuditReport(
        name='nondecomposability',
        passed=ratio >= 0.9,
        metrics={'pieces': len(rows), 'refuted': int(sum(r['refuted'] for r in rows)),
                 'remainder_measure': float(len(remainder) / bins),
                 'remainder_cells': int(occupied), 'full_cells': full,
                 'image_ratio': float(ratio)},
        tables={'pieces': pd.DataFrame(rows, columns=['piece', 'constant', 'axis_samples',
                                                      'axis_measure', 'refuted'])},
    )
    logger.info(f"Nondecomposability: remainder {report.metrics['remainder_measure']:.3f} of S, "
                f"image ratio {ratio:.3f}")
    return report
