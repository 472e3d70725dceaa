"""
Cantor-set maps from H_1 into R^4.

Two families of nested boxes are built side by side. In H_1 the stage-0 box
is I^0 = [-1, 1]^2 x [-lam, lam], and every box center * delta_r(I^0) is
replaced by the sixteen boxes

    center * delta_r(o_v) * delta_{r beta}(I^0),    v = 1..16,

with offsets o_v in {-.5, .5}^2 x {-.75, -.25, .25, .75} lam. In R^4 the
stage-0 box is J^0 = [-1, 1]^4 and a box c + r J^0 is replaced by the sixteen
boxes c + r ((+-.5)^4 + gamma J^0). Digit v always names the same offset on
both sides, so a label (a_1, a_2, ...) names one point of each Cantor set.

The map F sends I^0 into R^4:

* points of the Cantor set go to the point with the same label;
* the boundary of a labelled box goes to the center of the target box with
  the same label;
* in the shell between a box and its sixteen children, a collar function
  grows from 0 on the outer boundary to 1 on a child's boundary and F walks
  the segment from the parent's target center to that child's.

Evaluation is truncated at ``depth``; points still inside a depth-``depth``
box are sent to that box's target center.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .group import GroupDescriptor, group_for
from .maps import DomainError, LipschitzMapHandle
from .reports import AuditReport
from .utils import as_points, log_slope_fit, make_rng, parallel_map

logger = logging.getLogger(__name__)


H1 = GroupDescriptor.heisenberg(1)
R4 = GroupDescriptor.euclidean(4)

DIGITS = tuple(range(1, 17))

# Required value of lam (1/4 - beta^2)
LAMBDA_MARGIN = 20.0

# Thresholds of the stage-one separation audit
EDGE_SEPARATION = 6.0
STACK_SEPARATION = 14.0

# Largest image cloud built by full enumeration
MAX_CLOUD_POINTS = 2 ** 20

_SIDES = ('source', 'target')
_VERTICAL_STEPS = np.array([-0.75, -0.25, 0.25, 0.75])
_BOX_TOL = 1e-12

# Keeps the far edge of a cloud inside the last grid cell
_EDGE_PAD = 1.0 + 1e-9


class DegenerateCloudError(ValueError):
    """Raised when a point cloud has no spread to measure."""


@dataclass(frozen=True)
class CantorParams:
    """
    Parameters of the paired Cantor sets.

    Attributes:
        epsilon: Dimension deficit, 0 < epsilon < 4
        gamma: Target contraction, 16^{1/(epsilon - 4)}
        beta: Source contraction, gamma <= beta < 1/2
        lam: Vertical extent of I^0, 20 / (1/4 - beta^2)
        depth: Default evaluation depth

    Use ``from_epsilon`` to build validated parameters; the plain constructor
    accepts anything so that audits can be shown broken parameter sets.
    """
    epsilon: float
    gamma: float
    beta: float
    lam: float
    depth: int = 6

    @classmethod
    def from_epsilon(cls, epsilon: float, beta: Optional[float] = None,
                     depth: int = 6) -> 'CantorParams':
        """
        Derive gamma, beta and lam from epsilon.

        Args:
            epsilon: 0 < epsilon < 4
            beta: Source contraction in [gamma, 1/2); gamma when omitted
            depth: Default evaluation depth

        Raises:
            ValueError: If epsilon or beta is out of range

        Example:
            >>> p = CantorParams.from_epsilon(2.0)
            >>> p.gamma, round(p.lam, 6)
            (0.25, 106.666667)
        """
        epsilon = float(epsilon)
        if not 0.0 < epsilon < 4.0:
            raise ValueError(f"epsilon must lie in (0, 4), got {epsilon}")
        if depth < 0:
            raise ValueError(f"depth must be >= 0, got {depth}")
        gamma = 16.0 ** (1.0 / (epsilon - 4.0))
        if beta is None:
            beta = gamma
        beta = float(beta)
        if not (beta >= gamma * (1 - 1e-15) and beta < 0.5):
            raise ValueError(f"beta must lie in [{gamma:.6g}, 0.5), got {beta}")
        lam = LAMBDA_MARGIN / (0.25 - beta ** 2)
        return cls(epsilon, gamma, beta, lam, int(depth))

    @property
    def lambda_margin(self) -> float:
        return self.lam * (0.25 - self.beta ** 2)

    @property
    def source_dimension(self) -> float:
        """Dimension log_{1/beta} 16 of the source Cantor set."""
        return float(np.log(16.0) / np.log(1.0 / self.beta))

    @property
    def target_dimension(self) -> float:
        """Dimension log_{1/gamma} 16 = 4 - epsilon of the target Cantor set."""
        return float(np.log(16.0) / np.log(1.0 / self.gamma))

    @property
    def collar_beta(self) -> float:
        """
        Relative size of the collar boxes around each child.

        Chosen so that lam (1/4 - collar_beta^2) is half the lambda margin,
        which keeps the sixteen collars disjoint and inside the parent.
        """
        return float(np.sqrt((0.25 + self.beta ** 2) / 2.0))

    @property
    def kappa(self) -> float:
        """Collar width in gauge units."""
        return self.collar_beta / self.beta - 1.0

    @property
    def nominal_lipschitz(self) -> float:
        """Slope of the collar function times the longest spoke, 1 / (beta kappa)."""
        return 1.0 / (self.beta * self.kappa)

    def with_depth(self, depth: int) -> 'CantorParams':
        return replace(self, depth=int(depth))

    def to_dict(self) -> Dict[str, float]:
        return {'epsilon': self.epsilon, 'gamma': self.gamma, 'beta': self.beta,
                'lam': self.lam, 'depth': self.depth}


def derive_params(epsilon: float, beta: Optional[float] = None, depth: int = 6) -> CantorParams:
    """Shorthand for ``CantorParams.from_epsilon``."""
    return CantorParams.from_epsilon(epsilon, beta, depth)


@dataclass(frozen=True)
class BoxAddress:
    """
    Label of a stage-k box.

    Attributes:
        digits: Sequence of digits in 1..16 (length = stage)
        side: 'source' (boxes in H_1) or 'target' (boxes in R^4)
    """
    digits: Tuple[int, ...] = ()
    side: str = 'source'

    def __post_init__(self):
        digits = tuple(int(d) for d in self.digits)
        object.__setattr__(self, 'digits', digits)
        bad = [d for d in digits if d not in DIGITS]
        if bad:
            raise ValueError(f"digits must lie in 1..16, got {bad[0]}")
        if self.side not in _SIDES:
            raise ValueError(f"side must be one of {_SIDES}, got '{self.side}'")

    @property
    def depth(self) -> int:
        return len(self.digits)

    def child(self, digit: int) -> 'BoxAddress':
        return BoxAddress(self.digits + (digit,), self.side)

    def prefix(self, k: int) -> 'BoxAddress':
        return BoxAddress(self.digits[:k], self.side)

    def other_side(self) -> 'BoxAddress':
        return BoxAddress(self.digits, 'target' if self.side == 'source' else 'source')


@dataclass
class Box:
    """
    One labelled box.

    Source boxes are center * delta_scale(I^0), so their half-sides
    (scale, scale, lam scale^2) are measured in the translated frame.
    Target boxes are axis-parallel cubes of half-side ``scale``.
    """
    address: BoxAddress
    center: np.ndarray
    half_sides: Tuple[float, ...]
    scale: float
    lam: float = 1.0

    @property
    def side(self) -> str:
        return self.address.side

    def contains(self, points: Any) -> np.ndarray:
        """Boolean mask of points inside the closed box."""
        if self.side == 'target':
            pts = as_points(points, 4)
            return np.all(np.abs(pts - self.center) <= np.asarray(self.half_sides) + _BOX_TOL,
                          axis=1)
        pts = as_points(points, 3)
        G = group_for(H1)
        u = G.dilate(1.0 / self.scale, G.multiply(G.inverse(self.center), pts))
        return _gauge(u, self.lam) <= 1.0 + _BOX_TOL


# ----------------------------------------------------------------------
# digit tables and box geometry
# ----------------------------------------------------------------------
def source_offsets(params: CantorParams) -> np.ndarray:
    """
    Offsets o_v of the sixteen stage-one boxes, shape (16, 3).

    For digit v with code d = v - 1, bit 0 of d picks the sign of x, bit 1
    the sign of y, and d // 4 the vertical step in (-.75, -.25, .25, .75) lam.
    """
    codes = np.arange(16)
    out = np.empty((16, 3))
    out[:, 0] = np.where(codes & 1, 0.5, -0.5)
    out[:, 1] = np.where(codes & 2, 0.5, -0.5)
    out[:, 2] = _VERTICAL_STEPS[codes >> 2] * params.lam
    return out


def target_offsets() -> np.ndarray:
    """Offsets of the sixteen stage-one target boxes: bit i of v - 1 gives coordinate i."""
    codes = np.arange(16)
    return np.stack([np.where(codes & (1 << i), 0.5, -0.5) for i in range(4)], axis=1)


def _gauge(u: np.ndarray, lam: float) -> np.ndarray:
    """max(|u_1|, |u_2|, sqrt(|u_3| / lam)); I^0 is the set where this is <= 1."""
    return np.maximum(np.maximum(np.abs(u[:, 0]), np.abs(u[:, 1])),
                      np.sqrt(np.abs(u[:, 2]) / lam))


def _as_digit_array(addresses: Any) -> np.ndarray:
    if isinstance(addresses, BoxAddress):
        addresses = [addresses]
    if len(addresses) and isinstance(addresses[0], BoxAddress):
        depths = {a.depth for a in addresses}
        if len(depths) > 1:
            raise ValueError("addresses must share one depth")
        return np.array([a.digits for a in addresses], dtype=int).reshape(len(addresses), -1)
    arr = np.asarray(addresses, dtype=int)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.size and (arr.min() < 1 or arr.max() > 16):
        raise ValueError("digits must lie in 1..16")
    return arr


def source_centers(digits: Any, params: CantorParams) -> np.ndarray:
    """Centers of the source boxes with the given digit rows, shape (N, 3)."""
    digits = _as_digit_array(digits)
    G = group_for(H1)
    offsets = source_offsets(params)
    center = np.zeros((len(digits), 3))
    for k in range(digits.shape[1]):
        step = G.dilate(params.beta ** k, offsets[digits[:, k] - 1])
        center = G.multiply(center, step)
    return center


def target_centers(digits: Any, params: CantorParams) -> np.ndarray:
    """Centers of the target boxes with the given digit rows, shape (N, 4)."""
    digits = _as_digit_array(digits)
    offsets = target_offsets()
    center = np.zeros((len(digits), 4))
    for k in range(digits.shape[1]):
        center += params.gamma ** k * offsets[digits[:, k] - 1]
    return center


def source_box(address: BoxAddress, params: CantorParams) -> Box:
    """
    The box I^k with the given label.

    Example:
        >>> p = CantorParams.from_epsilon(2.0)
        >>> source_box(BoxAddress((1,)), p).center.round(4).tolist()
        [-0.5, -0.5, -80.0]
    """
    if address.side != 'source':
        address = address.other_side()
    k = address.depth
    center = source_centers([address.digits], params)[0] if k else np.zeros(3)
    scale = params.beta ** k
    return Box(address, center, (scale, scale, params.lam * scale ** 2), scale, params.lam)


def target_box(address: BoxAddress, params: CantorParams) -> Box:
    """The box J^k with the given label: half-side gamma^k."""
    if address.side != 'target':
        address = address.other_side()
    k = address.depth
    center = target_centers([address.digits], params)[0] if k else np.zeros(4)
    scale = params.gamma ** k
    return Box(address, center, (scale,) * 4, scale)


def boxes_at_stage(stage: int, params: CantorParams, side: str = 'source') -> List[Box]:
    """All 16^stage boxes of one stage, in lexicographic label order."""
    if stage < 0:
        raise ValueError(f"stage must be >= 0, got {stage}")
    build = source_box if side == 'source' else target_box
    return [build(BoxAddress(tuple(row), side), params) for row in _enumerate_digits(stage)]


def _enumerate_digits(depth: int, first: Optional[int] = None) -> np.ndarray:
    """All digit rows of a depth, optionally only those starting with ``first``."""
    if depth == 0:
        return np.zeros((1, 0), dtype=int)
    lead = 1 if first is not None else 0
    count = 16 ** (depth - lead)
    codes = np.arange(count)
    cols = [(codes // 16 ** (depth - lead - 1 - k)) % 16 + 1 for k in range(depth - lead)]
    if first is not None:
        cols.insert(0, np.full(count, first))
    return np.stack(cols, axis=1).astype(int)


# ----------------------------------------------------------------------
# addressing and evaluation
# ----------------------------------------------------------------------
def _check_domain(pts: np.ndarray, params: CantorParams) -> None:
    inside = _gauge(pts, params.lam) <= 1.0 + _BOX_TOL
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise DomainError(f"point {pts[bad].tolist()} is outside I^0")


def _walk(pts: np.ndarray, params: CantorParams,
          depth: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Descend through the nested boxes.

    Returns:
        digits: (N, depth), 0 after the point leaves the tree
        stage: (N,) index of the shell holding the point, ``depth`` if it
            stays inside a depth-``depth`` box
        nearest: (N,) code of the nearest child at the escape stage
        rho: (N,) gauge of the point relative to that child
    """
    G = group_for(H1)
    offsets = source_offsets(params)
    n = len(pts)
    digits = np.zeros((n, depth), dtype=int)
    stage = np.full(n, depth)
    nearest = np.zeros(n, dtype=int)
    rho = np.zeros(n)
    u = pts.copy()
    active = np.arange(n)

    for k in range(depth):
        if not len(active):
            break
        uu = u[active]
        gauges = np.stack([
            _gauge(G.dilate(1.0 / params.beta, G.multiply(-o, uu)), params.lam)
            for o in offsets
        ], axis=1)
        v = np.argmin(gauges, axis=1)
        r = gauges[np.arange(len(active)), v]
        inside = r <= 1.0 + _BOX_TOL

        out = active[~inside]
        stage[out] = k
        nearest[out] = v[~inside]
        rho[out] = r[~inside]

        down = active[inside]
        digits[down, k] = v[inside] + 1
        u[down] = G.dilate(1.0 / params.beta, G.multiply(-offsets[v[inside]], u[down]))
        active = down
    return digits, stage, nearest, rho


def cantor_address(p: Any, params: CantorParams,
                   depth: Optional[int] = None) -> Tuple[BoxAddress, Optional[int]]:
    """
    Label of the nested boxes that contain p.

    Args:
        p: Point of H_1
        params: Cantor parameters
        depth: Number of stages (params.depth by default)

    Returns:
        (address, escaped_at) where escaped_at is the first stage (1-based)
        at which p lies in none of the sixteen children, or None if p stays
        in the tree through ``depth``

    Example:
        >>> cantor_address([0, 0, 0], CantorParams.from_epsilon(2.0), 3)
        (BoxAddress(digits=(), side='source'), 1)
    """
    depth = params.depth if depth is None else int(depth)
    pts = as_points(p, 3).astype(float)[:1]
    if _gauge(pts, params.lam)[0] > 1.0 + _BOX_TOL:
        return BoxAddress(()), 0
    digits, stage, _, _ = _walk(pts, params, depth)
    k = int(stage[0])
    address = BoxAddress(tuple(int(d) for d in digits[0, :k]))
    return address, (None if k == depth else k + 1)


def target_address(points: Any, params: CantorParams, depth: int) -> np.ndarray:
    """
    Digits of the target boxes containing each point, shape (N, depth).

    Rows are 0 from the first stage at which the point lies in no child.
    """
    pts = as_points(points, 4)
    offsets = target_offsets()
    digits = np.zeros((len(pts), depth), dtype=int)
    center = np.zeros_like(pts)
    alive = np.ones(len(pts), dtype=bool)
    for k in range(depth):
        scale = params.gamma ** k
        rel = (pts - center) / scale
        bits = rel > 0
        code = (bits * (1 << np.arange(4))).sum(axis=1)
        inside = np.all(np.abs(rel - offsets[code]) <= params.gamma + _BOX_TOL, axis=1)
        alive &= inside
        digits[alive, k] = code[alive] + 1
        center[alive] += scale * offsets[code[alive]]
    return digits


def eval_map(points: Any, params: CantorParams, depth: Optional[int] = None) -> np.ndarray:
    """
    Evaluate F on points of I^0.

    Args:
        points: (N, 3) array or a single point
        params: Cantor parameters
        depth: Truncation depth (params.depth by default); the tail error is
            at most gamma^depth times the diameter of J^0

    Returns:
        (N, 4) images (or (4,) for a single point)

    Raises:
        DomainError: If a point lies outside I^0

    Example:
        >>> p = CantorParams.from_epsilon(2.0)
        >>> eval_map([1.0, 0.0, 0.0], p).tolist()
        [0.0, 0.0, 0.0, 0.0]
    """
    depth = params.depth if depth is None else int(depth)
    arr = np.asarray(points, dtype=float)
    single = arr.ndim == 1
    pts = as_points(arr, 3)
    _check_domain(pts, params)

    digits, stage, nearest, rho = _walk(pts, params, depth)
    offsets = target_offsets()
    out = np.zeros((len(pts), 4))
    for k in range(depth):
        known = digits[:, k] > 0
        out[known] += params.gamma ** k * offsets[digits[known, k] - 1]

    shell = stage < depth
    if shell.any():
        phi = np.clip(1.0 - (rho[shell] - 1.0) / params.kappa, 0.0, 1.0)
        spoke = params.gamma ** stage[shell]
        out[shell] += (phi * spoke)[:, None] * offsets[nearest[shell]]
    return out[0] if single else out


def cantor_points(addresses: Any, params: CantorParams) -> np.ndarray:
    """Points of the source Cantor set truncated at the address depth (box centers)."""
    return source_centers(addresses, params)


def cantor_map_handle(params: CantorParams, depth: Optional[int] = None) -> LipschitzMapHandle:
    """
    F wrapped as a map handle H_1 -> R^4 with domain I^0.

    The declared bound is the nominal 1 / (beta kappa); ``lipschitz_scan``
    measures the actual ratio.
    """
    depth = params.depth if depth is None else int(depth)
    lam = params.lam

    def func(p: np.ndarray) -> np.ndarray:
        return eval_map(p, params, depth)

    def domain(p: np.ndarray) -> np.ndarray:
        return _gauge(p, lam) <= 1.0 + _BOX_TOL

    return LipschitzMapHandle(f'cantor({params.epsilon:g})', H1, R4, func,
                              params.nominal_lipschitz, domain, 'I^0',
                              params={**params.to_dict(), 'depth': depth})


# ----------------------------------------------------------------------
# audits
# ----------------------------------------------------------------------
def _boundary_samples(rng: np.random.Generator, count: int, lam: float) -> np.ndarray:
    """Uniform points on the six faces of I^0 (face chosen uniformly)."""
    u = rng.uniform(-1.0, 1.0, size=(count, 3))
    u[:, 2] *= lam
    face = rng.integers(0, 6, size=count)
    axis, sign = face // 2, np.where(face % 2, 1.0, -1.0)
    limits = np.array([1.0, 1.0, lam])
    u[np.arange(count), axis] = sign * limits[axis]
    return u


def _stage_one_samples(params: CantorParams, codes: Sequence[int], rng: np.random.Generator,
                       count: int) -> Tuple[np.ndarray, np.ndarray]:
    G = group_for(H1)
    offsets = source_offsets(params)
    u = _boundary_samples(rng, count, params.lam)
    pick = rng.choice(np.asarray(codes), size=count)
    return G.multiply(offsets[pick], G.dilate(params.beta, u)), pick


def separation_audit(params: CantorParams, samples: int = 10_000, seed: int = 0) -> AuditReport:
    """
    Stage-one separation checks on sampled boundary points.

    * boxes with different horizontal offsets are at least 1 - 2 beta apart
      in the horizontal max norm;
    * the vertical coordinate of p^{-1} q is at least 6 in absolute value
      for p in an extreme box and q on the nearer horizontal face of I^0;
    * it is at least 14 for p, q in vertically stacked neighbours;
    * lam (1/4 - beta^2) equals the required margin of 20.

    Target boxes are checked for the 1 - 2 gamma separation as well.
    Violations are report content, never raised.
    """
    G = group_for(H1)
    rng = make_rng(seed, 60)
    offsets = source_offsets(params)
    violations: List[Dict[str, Any]] = []

    pts, pick = _stage_one_samples(params, range(16), rng, samples)
    lo = np.full((16, 2), np.inf)
    hi = np.full((16, 2), -np.inf)
    for code in range(16):
        mine = pts[pick == code, :2]
        if len(mine):
            lo[code], hi[code] = mine.min(axis=0), mine.max(axis=0)
    horizontal = np.inf
    for i in range(16):
        for j in range(i + 1, 16):
            if np.allclose(offsets[i, :2], offsets[j, :2]):
                continue
            gap = np.maximum(lo[j] - hi[i], lo[i] - hi[j]).max()
            horizontal = min(horizontal, float(gap))
    horizontal_bound = 1.0 - 2.0 * params.beta
    if horizontal < horizontal_bound - 1e-9:
        violations.append({'check': 'horizontal', 'value': horizontal, 'bound': horizontal_bound})

    edge = np.inf
    for level, face in ((0, -params.lam), (3, params.lam)):
        codes = [c for c in range(16) if c >> 2 == level]
        p, _ = _stage_one_samples(params, codes, rng, samples)
        q = np.column_stack([rng.uniform(-1, 1, samples), rng.uniform(-1, 1, samples),
                             np.full(samples, face)])
        vertical = G.multiply(G.inverse(p), q)[:, 2]
        edge = min(edge, float(np.abs(vertical).min()))
    if edge < EDGE_SEPARATION:
        violations.append({'check': 'edge', 'value': edge, 'bound': EDGE_SEPARATION})

    stack = np.inf
    for level in range(3):
        for h in range(4):
            lower, upper = level * 4 + h, (level + 1) * 4 + h
            a, _ = _stage_one_samples(params, [lower], rng, samples // 12 + 1)
            b, _ = _stage_one_samples(params, [upper], rng, samples // 12 + 1)
            vertical = G.multiply(G.inverse(a), b)[:, 2]
            stack = min(stack, float(np.abs(vertical).min()))
    if stack < STACK_SEPARATION:
        violations.append({'check': 'stack', 'value': stack, 'bound': STACK_SEPARATION})

    margin = params.lambda_margin
    if margin < LAMBDA_MARGIN * (1 - 1e-12):
        violations.append({'check': 'lambda_margin', 'value': margin, 'bound': LAMBDA_MARGIN})

    centers = target_offsets()
    gaps = [np.abs(centers[i] - centers[j]).max() - 2 * params.gamma
            for i in range(16) for j in range(i + 1, 16)]
    target_gap = float(min(gaps))
    if target_gap < 1.0 - 2.0 * params.gamma - 1e-12:
        violations.append({'check': 'target', 'value': target_gap,
                           'bound': 1.0 - 2.0 * params.gamma})

    report = AuditReport(
        name='separation',
        passed=not violations,
        metrics={'horizontal': horizontal, 'horizontal_bound': horizontal_bound,
                 'edge': edge, 'stack': stack, 'lambda_margin': margin,
                 'target': target_gap, 'samples': samples},
        violations=violations,
    )
    logger.info(f"Separation audit: {'passed' if report.passed else 'FAILED'}")
    return report


def _cloud_chunk(task: Tuple[CantorParams, int, int, int, int]) -> np.ndarray:
    params, depth, full, first, seed = task
    digits = _enumerate_digits(full, first)
    if depth > full:
        rng = make_rng(seed, 40, first)
        tail = rng.integers(1, 17, size=(len(digits), depth - full))
        digits = np.hstack([digits, tail])
    return target_centers(digits, params)


def image_cloud(params: CantorParams, depth: Optional[int] = None, seed: int = 0,
                workers: int = 1, max_points: int = MAX_CLOUD_POINTS) -> np.ndarray:
    """
    Image of the source Cantor set truncated at ``depth``.

    Every label of length ``depth`` is enumerated while 16^depth stays within
    ``max_points``; beyond that the leading digits are enumerated up to the
    largest affordable depth and the trailing digits are drawn per leading
    digit from seeded streams, one point per enumerated prefix.

    Returns:
        (N, 4) target points in label order
    """
    depth = params.depth if depth is None else int(depth)
    if depth == 0:
        return np.zeros((1, 4))
    full = enumerated_depth(depth, max_points)
    if full < depth:
        logger.info(f"Enumerating {16 ** full} prefixes of length {full}; "
                    f"digits {full + 1}..{depth} are sampled")
    tasks = [(params, depth, full, first, seed) for first in DIGITS]
    return np.vstack(parallel_map(_cloud_chunk, tasks, workers))


def enumerated_depth(depth: int, max_points: int = MAX_CLOUD_POINTS) -> int:
    """Depth up to which ``image_cloud`` enumerates every label."""
    full = depth
    while full > 1 and 16 ** full > max_points:
        full -= 1
    return full


@dataclass
class BoxDimension:
    """Box-counting fit: slope of log N(r) against log(1/r)."""
    slope: float
    intercept: float
    residual: float
    scales: np.ndarray
    counts: np.ndarray

    def table(self) -> pd.DataFrame:
        return pd.DataFrame({'scale': self.scales, 'count': self.counts})

    def to_dict(self) -> Dict[str, Any]:
        return {'slope': self.slope, 'intercept': self.intercept, 'residual': self.residual,
                'scales': self.scales.tolist(), 'counts': self.counts.tolist()}


def box_counts(cloud: np.ndarray, scales: Sequence[float],
               origin: Optional[Sequence[float]] = None) -> np.ndarray:
    """Number of grid boxes of each side length that contain a point."""
    pts = np.asarray(cloud, dtype=float)
    origin = pts.min(axis=0) if origin is None else np.asarray(origin, dtype=float)
    counts = []
    for r in scales:
        cells = np.floor((pts - origin) / r).astype(np.int64)
        counts.append(len(np.unique(cells, axis=0)))
    return np.asarray(counts)


def box_dimension_estimate(cloud: Any, scales: Optional[Sequence[float]] = None,
                           origin: Optional[Sequence[float]] = None) -> BoxDimension:
    """
    Box-counting dimension of a point cloud.

    Args:
        cloud: (N, d) points
        scales: Box side lengths (at least four); by default the cloud extent
            times 2^-1 .. 2^-6
        origin: Grid corner (the coordinatewise minimum of the cloud by default)

    Returns:
        BoxDimension with the least-squares slope and rms residual

    Raises:
        ValueError: If fewer than four scales are given
        DegenerateCloudError: If the cloud has several points but no spread
    """
    pts = np.asarray(cloud, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if scales is not None and len(scales) < 4:
        raise ValueError(f"need at least four scales, got {len(scales)}")
    if len(pts) == 1:
        scales = np.asarray(scales if scales is not None else 2.0 ** -np.arange(1, 7), float)
        return BoxDimension(0.0, 0.0, 0.0, scales, np.ones(len(scales), dtype=int))
    extent = float((pts.max(axis=0) - pts.min(axis=0)).max())
    if extent == 0.0:
        raise DegenerateCloudError(f"all {len(pts)} points coincide")
    if len(pts) < 1000:
        logger.warning(f"Box counting on only {len(pts)} points")
    if scales is None:
        scales = extent * _EDGE_PAD * 2.0 ** -np.arange(1, 7)
    scales = np.asarray(scales, dtype=float)
    if np.any(scales <= 0):
        raise ValueError("scales must be positive")
    counts = box_counts(pts, scales, origin)
    slope, intercept, residual = log_slope_fit(scales, counts)
    return BoxDimension(slope, intercept, residual, scales, counts)


def image_dimension(params: CantorParams, depth: Optional[int] = None, seed: int = 0,
                    workers: int = 1) -> BoxDimension:
    """
    Box dimension of the image cloud at scales gamma^1 .. gamma^{m-1}.

    m is the enumerated depth of the cloud, so every counted scale is
    resolved by complete labels. The grid is anchored at the corner of J^0.
    """
    depth = params.depth if depth is None else int(depth)
    cloud = image_cloud(params, depth, seed, workers)
    m = enumerated_depth(depth)
    if m < 5:
        raise ValueError(f"need an enumerated depth of at least 5, got {m}")
    scales = params.gamma ** np.arange(1, m)
    return box_dimension_estimate(cloud, scales, origin=-np.ones(4))


def occupied_box_count(cloud: Any, params: CantorParams, depth: int) -> int:
    """Number of distinct depth-``depth`` target boxes holding a cloud point."""
    digits = target_address(cloud, params, depth)
    placed = np.all(digits > 0, axis=1)
    if not placed.all():
        logger.warning(f"{int((~placed).sum())} cloud points lie outside the depth-{depth} boxes")
    if depth == 0:
        return 1 if placed.any() else 0
    return int(len(np.unique(digits[placed], axis=0)))


def _random_box_points(params: CantorParams, rng: np.random.Generator, count: int,
                       depth: int) -> Tuple[np.ndarray, np.ndarray]:
    """Points uniform in boxes of random stage < depth and random label."""
    G = group_for(H1)
    stage = rng.integers(0, max(depth, 1), size=count)
    pts = np.empty((count, 3))
    for k in np.unique(stage):
        rows = np.flatnonzero(stage == k)
        digits = rng.integers(1, 17, size=(len(rows), k))
        centers = source_centers(digits, params) if k else np.zeros((len(rows), 3))
        u = rng.uniform(-1.0, 1.0, size=(len(rows), 3))
        u[:, 2] *= params.lam
        pts[rows] = G.multiply(centers, G.dilate(params.beta ** k, u))
    return pts, stage


def _scan_block(task: Tuple[CantorParams, int, int, int, int]) -> pd.DataFrame:
    params, depth, count, seed, block = task
    G = group_for(H1)
    rng = make_rng(seed, 50, block)
    p, stage = _random_box_points(params, rng, count, depth)
    r = params.beta ** stage * 10.0 ** rng.uniform(-5, 0, size=count)
    w = rng.uniform(-1.0, 1.0, size=(count, 3))
    q = G.multiply(p, w * np.column_stack([r, r, r ** 2]))
    keep = _gauge(q, params.lam) <= 1.0
    p, q, stage = p[keep], q[keep], stage[keep]
    d = G.quasidistance(p, q)
    diff = np.linalg.norm(eval_map(p, params, depth) - eval_map(q, params, depth), axis=1)
    ok = d > 0
    return pd.DataFrame({'stage': stage[ok], 'ratio': diff[ok] / d[ok]})


def lipschitz_scan(params: CantorParams, depth: Optional[int] = None, pairs: int = 100_000,
                   seed: int = 0, workers: int = 1, block: int = 10_000) -> AuditReport:
    """
    Empirical Lipschitz ratio |F(p) - F(q)| / d(p, q).

    Base points are uniform in boxes of a random stage and label; partners
    are q = p delta_r(w) with r log-uniform below the box scale, so every
    shell is probed at every resolution. Pairs leaving I^0 are dropped.

    The ``by_stage`` table holds the largest ratio seen in boxes of each
    stage, which decays like (gamma / beta)^stage.
    """
    depth = params.depth if depth is None else int(depth)
    sizes = [block] * (pairs // block) + ([pairs % block] if pairs % block else [])
    tasks = [(params, depth, n, seed, i) for i, n in enumerate(sizes)]
    frame = pd.concat(parallel_map(_scan_block, tasks, workers), ignore_index=True)
    by_stage = frame.groupby('stage')['ratio'].agg(['count', 'max']).reset_index()
    by_stage.columns = ['stage', 'pairs', 'max_ratio']
    worst = float(frame['ratio'].max()) if len(frame) else 0.0
    return AuditReport(
        name='cantor_lipschitz',
        passed=bool(np.isfinite(worst)),
        metrics={'max_ratio': worst, 'p99_ratio': float(frame['ratio'].quantile(0.99)),
                 'nominal': params.nominal_lipschitz, 'pairs': int(len(frame)),
                 'depth': depth},
        tables={'by_stage': by_stage},
    )


def step_one_band(params: CantorParams, depth: Optional[int] = None, pairs: int = 10_000,
                  seed: int = 0) -> AuditReport:
    """
    Ratio band of the label-preserving map between the two Cantor sets.

    Compares |T(a) - T(b)| with the quasidistance of the source points for
    random label pairs of length ``depth``. With beta = gamma the band is
    bounded above and below.
    """
    depth = params.depth if depth is None else int(depth)
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    G = group_for(H1)
    rng = make_rng(seed, 70)
    a = rng.integers(1, 17, size=(pairs, depth))
    b = rng.integers(1, 17, size=(pairs, depth))
    distinct = np.any(a != b, axis=1)
    a, b = a[distinct], b[distinct]
    first = np.argmax(a != b, axis=1) + 1
    d_src = G.quasidistance(source_centers(a, params), source_centers(b, params))
    d_tgt = np.linalg.norm(target_centers(a, params) - target_centers(b, params), axis=1)
    ratio = d_tgt / d_src
    table = (pd.DataFrame({'first_difference': first, 'ratio': ratio})
             .groupby('first_difference')['ratio'].agg(['count', 'min', 'max']).reset_index())
    low, high = float(ratio.min()), float(ratio.max())
    return AuditReport(
        name='step_one_band',
        passed=bool(low > 0 and np.isfinite(high)),
        metrics={'min_ratio': low, 'max_ratio': high, 'band': high / low,
                 'pairs': int(len(ratio)), 'beta_equals_gamma': bool(
                     np.isclose(params.beta, params.gamma))},
        tables={'by_position': table},
    )
