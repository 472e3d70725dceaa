"""
Desk-scale biLipschitz decomposition of a Lipschitz map on the base cube.

The decomposition runs on a point-sample model of Q(0,0): a seeded cloud of
uniform points carries the labels, and cubes are materialized only where the
cloud touches them. Stage alpha works on cubes of scale alpha + W and

1. moves cubes whose image has small Hausdorff content to the garbage set,
2. finds semi-adjacent cube pairs whose images are close (bad pairs),
3. keeps the pairs that a Haar coefficient of the horizontal differential
   singles out (wavelet screen),
4. updates the binary labels of the points in each screened pair.

Points whose label reaches the configured cap are garbage as well; the
remaining points grouped by final label are the pieces, and each piece gets
an empirical biLipschitz constant.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .cache import CacheManager
from .dyadic import CubeAddress, DyadicMesh, ScaleError, lattice_window_indices
from .group import CarnotGroup, GroupDescriptor, group_for
from .maps import DomainError, LipschitzMapHandle
from .pansu import horizontal_field
from .reports import AuditReport
from .utils import DEFAULT_RESOLUTION, MC_SIGMA_BAND, format_bits, make_rng, parallel_map
from .wavelets import HaarPair, coefficient_ratio, cube_volume

logger = logging.getLogger(__name__)

__all__ = [
    'LipschitzMapHandle', 'DecomposeConfig', 'DecompositionError', 'LabelState',
    'DecompositionResult', 'ScreenResult', 'OverlapHistogram', 'content_estimate',
    'compute_offset', 'garbage_stage', 'bad_pairs', 'wavelet_screen', 'label_case',
    'update_labels', 'decompose', 'overlap_histogram', 'largest_piece',
    'garbage_image_fraction',
]


CONTENT_RULES = ('as_stated', 'large_content')

# Window sides of the content cover, relative to the reference side
CONTENT_SCALES = np.geomspace(1.0, 1.0 / 32.0, 16)

# Image points kept per cube for the near-pair search
_CLOUD_POINTS = 64

# Share of failed MF evaluations tolerated in a screened region
_MF_FAILURE_LIMIT = 0.10

# Multiple of machine epsilon bounding the rounding of one MF difference quotient
_QUOTIENT_ROUNDING = 16 * np.finfo(float).eps


class DecompositionError(RuntimeError):
    """Map evaluation failed during a decomposition stage."""

    def __init__(self, message: str, stage: int, scale: int):
        super().__init__(f"stage {stage} (cube scale {scale}): {message}")
        self.stage = stage
        self.scale = scale


@dataclass
class DecomposeConfig:
    """
    Parameters of a decomposition run.

    Attributes:
        delta: Garbage threshold; cubes with content <= delta E^{-k a} are garbage
        epsilon: Bad-pair tolerance (default 0.01 delta)
        K: Constant in the bad-pair inequalities
        depth: Last stage index
        n_cap: Label length at which points become garbage
        c_cal: Calibrated wavelet threshold constant (default 0.1 epsilon)
        eta: Domain dilation margin used to choose the scale offset W
        window_n: Upper end of the wavelet scale window [a - 4, a + n]
        translates: Translated families used by the wavelet screen
        points: Size of the labelled point cloud
        cube_samples: Samples per cube for content estimates
        pair_samples: Image samples per cube in the bad-pair distance test
        screen_samples: Samples per Haar coefficient in the wavelet screen
        bilip_pairs: Sample pairs per piece for biLipschitz constants
        content_rule: "as_stated" or "large_content"
        resolution: Mesh resolution scale
        seed: Root seed
        workers: Worker processes for per-cube content estimates
    """
    delta: float = 0.01
    epsilon: Optional[float] = None
    K: float = 1.0
    depth: int = 3
    n_cap: int = 8
    c_cal: Optional[float] = None
    eta: float = 1.0
    window_n: int = 4
    translates: int = 4
    points: int = 2000
    cube_samples: int = 2048
    pair_samples: int = 1000
    screen_samples: int = 512
    bilip_pairs: int = 10_000
    content_rule: str = 'large_content'
    resolution: int = DEFAULT_RESOLUTION
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.epsilon is None:
            self.epsilon = 0.01 * self.delta
        if self.c_cal is None:
            self.c_cal = 0.1 * self.epsilon
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        if self.n_cap < 1:
            raise ValueError(f"n_cap must be >= 1, got {self.n_cap}")
        if self.content_rule not in CONTENT_RULES:
            raise ValueError(
                f"content_rule must be one of {CONTENT_RULES}, got {self.content_rule!r}"
            )
        if self.points < 2:
            raise ValueError(f"points must be >= 2, got {self.points}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ----------------------------------------------------------------------
# content
# ----------------------------------------------------------------------
def _cloud_extent(G: CarnotGroup, pts: np.ndarray) -> float:
    center = pts[0]
    return float(G.quasidistance(pts, np.broadcast_to(center, pts.shape)).max())


def content_estimate(
    points: np.ndarray,
    k: float,
    scales: Optional[Sequence[float]] = None,
    descriptor: Optional[GroupDescriptor] = None,
    min_occupancy: int = 4,
    method: str = 'lattice'
) -> float:
    """
    Hausdorff k-content estimate of a sampled set.

    For each window side s the sample is covered by lattice windows of side s
    (``method="lattice"``) or by a greedy cover with quasidistance balls of
    diameter s (``method="greedy"``), contributing (cover size) * s^k. Scales
    at which occupied windows hold fewer than ``min_occupancy`` samples on
    average cannot be told apart from sampling gaps and are skipped. The
    estimate is the minimum over the remaining scales, so adding finer scales
    never increases it.

    Args:
        points: Sample of the set, shape (N, dim)
        k: Content dimension
        scales: Window sides (default: the sample extent times CONTENT_SCALES)
        descriptor: Group the points live in (default: Euclidean R^dim)
        min_occupancy: Minimum mean samples per occupied window
        method: "lattice" or "greedy"

    Returns:
        Content estimate

    Raises:
        ValueError: On an empty sample or k <= 0

    Example:
        >>> content_estimate(np.zeros((10, 2)), 4, scales=[1.0, 0.5])
        0.0625
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0 or len(pts) == 0:
        raise ValueError("content estimate needs a nonempty sample")
    if not k > 0:
        raise ValueError(f"content dimension must be positive, got {k}")
    if method not in ('lattice', 'greedy'):
        raise ValueError(f"method must be 'lattice' or 'greedy', got {method!r}")
    descriptor = descriptor or GroupDescriptor.euclidean(pts.shape[1])
    G = group_for(descriptor)
    if scales is None:
        extent = max(_cloud_extent(G, pts), 1e-300)
        scales = extent * CONTENT_SCALES
    scales = sorted((float(s) for s in scales), reverse=True)
    if not scales or scales[-1] <= 0:
        raise ValueError("scales must be positive")

    best = None
    n = len(pts)
    for s in scales:
        if method == 'lattice':
            spacing = s ** descriptor.weights.astype(float)
            keys = lattice_window_indices(G, pts, spacing)
            count = len(np.unique(keys, axis=0))
        else:
            count = _greedy_cover(G, pts, s / 2.0)
        if count > 1 and n / count < min_occupancy:
            continue
        value = count * s ** k
        best = value if best is None else min(best, value)
    if best is None:
        s = scales[0]
        best = (len(np.unique(lattice_window_indices(
            G, pts, s ** descriptor.weights.astype(float)), axis=0))) * s ** k
    return float(best)


def _greedy_cover(G: CarnotGroup, pts: np.ndarray, radius: float) -> int:
    remaining = pts
    count = 0
    while len(remaining):
        center = remaining[0]
        d = G.quasidistance(remaining, np.broadcast_to(center, remaining.shape))
        remaining = remaining[d > radius]
        count += 1
    return count


def compute_offset(eta: float, mesh: DyadicMesh, samples: int = 20_000) -> int:
    """
    Scale offset W: the smallest w >= 0 with diameter(w) <= eta * r, where r
    is the sampled inradius of Q(0,0) about the origin.
    """
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    rng = make_rng(mesh.seed, 40)
    half = 0.5 * 1.5 ** mesh.weights.astype(float)
    probe = rng.uniform(-half, half, size=(samples, mesh.dim))
    outside = ~mesh.contains(mesh.base_cube(), probe)
    if not outside.any():
        raise RuntimeError("inradius probe found no points outside Q(0,0)")
    inradius = float(mesh.group.quasinorm(probe[outside]).min())
    w = 0
    while mesh.diameter(w) > eta * inradius:
        w += 1
    logger.info(f"scale offset W={w} (inradius {inradius:.4f}, eta {eta})")
    return w


# ----------------------------------------------------------------------
# labels
# ----------------------------------------------------------------------
@dataclass
class LabelState:
    """
    Labels of the point cloud.

    Attributes:
        labels: One binary string per point
        members: Point indices of every cube that currently matters
    """
    labels: np.ndarray
    members: Dict[CubeAddress, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initial(cls, count: int) -> 'LabelState':
        """Every point starts with the leading digit 0."""
        labels = np.empty(count, dtype=object)
        labels[:] = '0'
        return cls(labels)

    def label_of(self, cube: CubeAddress) -> str:
        """
        The common label of the points in ``cube``.

        Raises:
            KeyError: If the cube holds no labelled points
            ValueError: If the labels in the cube differ
        """
        idx = self.members.get(cube)
        if idx is None or len(idx) == 0:
            raise KeyError(f"no label on cube {cube.key()}")
        values = set(self.labels[idx])
        if len(values) != 1:
            raise ValueError(f"labels on cube {cube.key()} are not constant: {sorted(values)}")
        return values.pop()


def label_case(z1: str, z2: str) -> Tuple[str, str, str]:
    """
    Apply the label rules to the labels of the longer-labelled cube (z1) and
    the other cube (z2).

    Returns:
        (case, new z1, new z2) with case in {"I", "II", "III", "IV"}

    Example:
        >>> label_case("010", "01")
        ('IV', '010', '011')
    """
    if len(z1) < len(z2):
        raise ValueError("z1 must be at least as long as z2")
    if len(z1) == len(z2):
        if z1 != z2:
            return 'I', z1, z2
        return 'II', z1 + '0', z2 + '1'
    if not z1.startswith(z2):
        return 'III', z1, z2
    digit = z1[len(z2)]
    return 'IV', z1, z2 + ('1' if digit == '0' else '0')


def update_labels(state: LabelState, pair: Tuple[CubeAddress, CubeAddress]) -> LabelState:
    """
    Label update for one screened pair (Q_m, Q'_m).

    Returns a new state; the input state is left untouched.

    Raises:
        KeyError: If either cube carries no label
    """
    qa, qb = pair
    za, zb = state.label_of(qa), state.label_of(qb)
    labels = state.labels.copy()
    if len(za) >= len(zb):
        case, new_a, new_b = label_case(za, zb)
    else:
        case, new_b, new_a = label_case(zb, za)
    labels[state.members[qa]] = new_a
    labels[state.members[qb]] = new_b
    logger.debug(f"labels {qa.key()}:{za}->{new_a} {qb.key()}:{zb}->{new_b} (case {case})")
    return LabelState(labels, state.members)


# ----------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------
@dataclass
class CubeImage:
    """Sampled image of one cube."""
    cube: CubeAddress
    image: np.ndarray
    content: float


def _cube_image(F: LipschitzMapHandle, mesh: DyadicMesh, cube: CubeAddress,
                samples: int, seed: int, index: int) -> CubeImage:
    rng = make_rng(seed, 41, cube.scale, index)
    pts = mesh.sample_cube(cube, samples, rng)
    image = F.evaluate(pts)
    side = float(mesh.E) ** -cube.scale
    content = content_estimate(image, mesh.descriptor.homogeneous_dimension,
                               scales=side * CONTENT_SCALES, descriptor=F.target)
    return CubeImage(cube, image, content)


def cube_images(F: LipschitzMapHandle, mesh: DyadicMesh, cubes: Sequence[CubeAddress],
                samples: int, seed: int = 0, workers: int = 1) -> Dict[CubeAddress, CubeImage]:
    """Sampled images and content estimates of many cubes (ordered by address)."""
    ordered = sorted(cubes)

    def work(item):
        index, cube = item
        return _cube_image(F, mesh, cube, samples, seed, index)

    results = parallel_map(work, list(enumerate(ordered)), workers)
    return {r.cube: r for r in results}


def garbage_stage(
    F: LipschitzMapHandle,
    mesh: DyadicMesh,
    cubes: Sequence[CubeAddress],
    delta: float,
    previous: Optional[Set[CubeAddress]] = None,
    samples: int = 2048,
    seed: int = 0,
    workers: int = 1,
    images: Optional[Dict[CubeAddress, CubeImage]] = None
) -> Set[CubeAddress]:
    """
    Cubes whose sampled image content is at most delta E^{-k a}, united with
    the previous stages' garbage.

    Args:
        F: Map
        mesh: Source mesh
        cubes: Cubes of the stage scale a = alpha + W
        delta: Threshold constant
        previous: Garbage of earlier stages
        images: Precomputed cube images (computed when omitted)
    """
    previous = set(previous or ())
    if images is None:
        images = cube_images(F, mesh, cubes, samples, seed, workers)
    k = mesh.descriptor.homogeneous_dimension
    out = set(previous)
    for cube in cubes:
        threshold = delta * float(mesh.E) ** (-k * cube.scale)
        if images[cube].content <= threshold:
            out.add(cube)
    logger.info(f"garbage stage: {len(out) - len(previous)} new of {len(cubes)} cubes")
    return out


def _euclidean_radius(desc: GroupDescriptor, d: float, extent: float) -> float:
    """Euclidean radius containing every point within quasidistance d."""
    if desc.step == 1:
        return float(np.sqrt(desc.dim) * d)
    nh = desc.horizontal_dim
    vertical = d * d + nh * 2.0 * extent * d
    return float(np.sqrt(nh * d * d + (desc.dim - nh) * vertical * vertical))


def _image_distance(G: CarnotGroup, a: np.ndarray, b: np.ndarray) -> float:
    pa = np.repeat(a, len(b), axis=0)
    pb = np.tile(b, (len(a), 1))
    return float(G.quasidistance(pa, pb).min())


def _content_ok(content: float, bound: float, rule: str) -> bool:
    if rule == 'as_stated':
        return content <= bound
    return content > bound


def bad_pairs(
    F: LipschitzMapHandle,
    mesh: DyadicMesh,
    cubes: Sequence[CubeAddress],
    epsilon: float,
    K: float = 1.0,
    content_rule: str = 'as_stated',
    samples: int = 1000,
    seed: int = 0,
    images: Optional[Dict[CubeAddress, CubeImage]] = None,
    max_candidates: int = 200_000
) -> List[Tuple[CubeAddress, CubeAddress]]:
    """
    Semi-adjacent pairs among ``cubes`` whose images are close.

    A pair (Q_a, Q_b) at scale alpha qualifies when both image contents pass
    the content rule against epsilon K E^{-k alpha} and the sampled image
    distance is at most epsilon K E^{-alpha}. With ``content_rule="as_stated"``
    the contents must be at most the bound; with ``"large_content"`` they must
    exceed it.

    Returns:
        Pairs (a, b) with a < b, sorted lexicographically

    Raises:
        ScaleError: If the cubes have scale below 2
    """
    if content_rule not in CONTENT_RULES:
        raise ValueError(f"content_rule must be one of {CONTENT_RULES}, got {content_rule!r}")
    cubes = sorted(set(cubes))
    if not cubes:
        return []
    alpha = cubes[0].scale
    if any(c.scale != alpha for c in cubes):
        raise ValueError("bad_pairs needs cubes of a single scale")
    if alpha < 2:
        raise ScaleError(f"semi-adjacency needs scale >= 2, got {alpha}")
    if images is None:
        images = cube_images(F, mesh, cubes, max(samples, 64), seed)

    k = mesh.descriptor.homogeneous_dimension
    content_bound = epsilon * K * float(mesh.E) ** (-k * alpha)
    distance_bound = epsilon * K * float(mesh.E) ** (-alpha)
    eligible = [c for c in cubes if _content_ok(images[c].content, content_bound, content_rule)]
    if len(eligible) < 2:
        return []

    Gt = group_for(F.target)
    rng = make_rng(seed, 42, alpha)
    clouds = []
    owners = []
    for i, cube in enumerate(eligible):
        img = images[cube].image
        pick = img if len(img) <= _CLOUD_POINTS else img[rng.choice(len(img), _CLOUD_POINTS, replace=False)]
        clouds.append(pick)
        owners.append(np.full(len(pick), i))
    cloud = np.vstack(clouds)
    owner = np.concatenate(owners)
    extent = float(np.abs(cloud[:, F.target.layer_slices[0]]).max()) if len(cloud) else 0.0
    radius = _euclidean_radius(F.target, distance_bound, extent)

    tree = cKDTree(cloud)
    near = tree.query_pairs(radius, output_type='ndarray')
    cand = np.unique(np.sort(np.stack([owner[near[:, 0]], owner[near[:, 1]]], axis=1), axis=1), axis=0) \
        if len(near) else np.zeros((0, 2), dtype=np.int64)
    cand = cand[cand[:, 0] != cand[:, 1]]
    if len(cand) > max_candidates:
        logger.warning(f"bad_pairs: {len(cand)} candidate pairs at scale {alpha}, "
                       f"keeping the first {max_candidates}")
        cand = cand[:max_candidates]

    out = []
    for i, j in cand:
        qa, qb = eligible[int(i)], eligible[int(j)]
        ia, ib = images[qa].image, images[qb].image
        m = max(1, int(np.sqrt(samples)))
        da = ia[:m] if len(ia) > m else ia
        db = ib[:m] if len(ib) > m else ib
        if _image_distance(Gt, da, db) > distance_bound:
            continue
        if mesh.is_semi_adjacent(qa, qb):
            out.append((qa, qb))
    logger.info(f"bad_pairs at scale {alpha}: {len(out)} of {len(cand)} candidates")
    return sorted(out)


# ----------------------------------------------------------------------
# wavelet screen
# ----------------------------------------------------------------------
@dataclass
class ScreenResult:
    """Outcome of the wavelet screen for one pair."""
    passed: bool
    threshold: float
    witness: Optional[Dict[str, Any]] = None
    evaluated: int = 0


def mf_field(F: LipschitzMapHandle, step: float = 1e-7):
    """
    The flattened horizontal matrix field of F, tolerant to isolated failures.

    Failed points take the mean of the successful ones; the returned
    callable records the failure rate of its last call in ``failure_rate``.
    It also keeps in ``noise_floor`` the largest rounding bound of the
    difference quotients seen since the attribute was last reset: no entry
    of a constant field can move by more than this between two points.
    """
    ht = F.target.layer_slices[0]

    def field_fn(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        try:
            values = horizontal_field(F, pts, step).reshape(len(pts), -1)
            ok = np.all(np.isfinite(values), axis=1)
        except (DomainError, ValueError):
            values = np.zeros((len(pts), F.target.horizontal_dim * F.source.horizontal_dim))
            ok = np.zeros(len(pts), dtype=bool)
            for n, p in enumerate(pts):
                try:
                    values[n] = horizontal_field(F, p[None, :], step).reshape(-1)
                    ok[n] = np.all(np.isfinite(values[n]))
                except (DomainError, ValueError):
                    pass
        field_fn.failure_rate = 1.0 - float(ok.mean()) if len(ok) else 0.0
        if ok.any():
            field_fn.noise_floor = max(field_fn.noise_floor,
                                       _quotient_noise(F, pts[ok], values[ok], step, ht))
        if ok.any() and not ok.all():
            values[~ok] = values[ok].mean(axis=0)
        elif not ok.any():
            values[:] = 0.0
        return values

    field_fn.failure_rate = 0.0
    field_fn.noise_floor = 0.0
    return field_fn


def _quotient_noise(F: LipschitzMapHandle, pts: np.ndarray, values: np.ndarray,
                    step: float, ht: slice) -> float:
    """Rounding bound of (F_h(g delta_s e_i) - F_h(g)) / s over ``pts``."""
    try:
        out = float(np.abs(F.evaluate(pts)[:, ht]).max())
    except (DomainError, ValueError):
        out = 0.0
    slope = float(np.abs(values).max())
    size = float(np.abs(pts).max()) + step
    return _QUOTIENT_ROUNDING * (out + slope * size) / step


def _candidate_pairs(mesh: DyadicMesh, pair: Tuple[CubeAddress, CubeAddress], beta: int,
                     families: Sequence[CubeAddress], rng: np.random.Generator) -> List[HaarPair]:
    qa, qb = pair
    rep_a = mesh.anchor(qa)
    rep_b = mesh.anchor(qb)
    out = []
    for family in families:
        translate = family.translate
        tscale = beta + 2 if family.is_translated else 0
        ia = mesh.addresses(rep_a, beta, translate, tscale)[0]
        ib = mesh.addresses(rep_b, beta, translate, tscale)[0]
        proto = CubeAddress(beta, tuple(int(v) for v in ia), translate, tscale)
        ca = proto
        cb = proto.with_index(ib, beta)
        if ca != cb and mesh.parent(ca) == mesh.parent(cb):
            out.append(HaarPair(ca, cb))
        # a seeded sibling of each side
        for cube in (ca, cb):
            kids = mesh.children_indices(mesh.parent(cube))
            pick = kids[int(rng.integers(len(kids)))]
            sib = cube.with_index(pick, beta)
            if sib != cube:
                out.append(HaarPair(cube, sib))
    return out


def wavelet_screen(
    F: LipschitzMapHandle,
    mesh: DyadicMesh,
    pair: Tuple[CubeAddress, CubeAddress],
    epsilon: float,
    window_n: int = 4,
    c_cal: Optional[float] = None,
    families: Optional[Sequence[CubeAddress]] = None,
    samples: int = 512,
    seed: int = 0,
    field_fn=None
) -> ScreenResult:
    """
    Look for a Haar pair at scales [a - 4, a + n] with a large MF coefficient.

    Candidate Haar pairs at each scale beta are built from the cubes that
    contain the anchors of the bad pair (and one seeded sibling of each), in
    the untranslated family and in each translated family. The pair passes
    when ratio - 3 sigma - floor reaches c_cal |Q|^{1/2} for some entry, with
    sigma the Monte Carlo error of the ratio and floor the rounding bound the
    field reports in ``noise_floor``. Constant fields never pass.

    Args:
        F: Map
        mesh: Source mesh
        pair: Bad pair (Q_a, Q_b) at scale a
        epsilon: Bad-pair tolerance (c_cal defaults to 0.1 epsilon)
        window_n: Upper end offset of the scale window
        families: Family representatives (default: untranslated only)
        samples: Samples per Haar coefficient
        field_fn: Field to screen (default: the flattened MF of F)

    Returns:
        ScreenResult with the maximizing witness

    Raises:
        ValueError: If the scale window is empty after clipping
        DecompositionError: If more than 10% of MF evaluations fail
    """
    qa, qb = pair
    a = qa.scale
    c_cal = 0.1 * epsilon if c_cal is None else c_cal
    low = max(a - 4, 1)
    high = min(a + window_n, mesh.resolution - 1)
    if low > high:
        raise ValueError(f"empty wavelet window [{a - 4}, {a + window_n}] at scale {a}")
    families = list(families) if families else [mesh.base_cube()]
    field_fn = field_fn or mf_field(F)
    threshold = c_cal * float(np.sqrt(cube_volume(mesh, a)))
    ns = F.source.horizontal_dim
    rng = make_rng(seed, 43, a)

    best: Optional[Dict[str, Any]] = None
    evaluated = 0
    for beta in range(low, high + 1):
        for f_index, family in enumerate(families):
            for h in _candidate_pairs(mesh, pair, beta, [family], rng):
                if hasattr(field_fn, 'noise_floor'):
                    field_fn.noise_floor = 0.0
                ratio, sigma = coefficient_ratio(mesh, field_fn, h, samples, seed + evaluated)
                evaluated += 1
                rate = getattr(field_fn, 'failure_rate', 0.0)
                if rate > _MF_FAILURE_LIMIT:
                    raise DecompositionError(
                        f"MF evaluation failed on {rate:.0%} of samples", -1, a)
                floor = float(getattr(field_fn, 'noise_floor', 0.0))
                ratio, sigma = np.atleast_1d(ratio), np.atleast_1d(sigma)
                score = ratio - MC_SIGMA_BAND * sigma - floor
                entry = int(np.argmax(score))
                if best is None or score[entry] > best['score']:
                    best = {'beta': beta, 'family': f_index, 'plus': h.plus_cube.key(),
                            'minus': h.minus_cube.key(), 'i': entry // ns, 'j': entry % ns,
                            'ratio': float(ratio[entry]), 'sigma': float(sigma[entry]),
                            'floor': floor, 'score': float(score[entry])}
    passed = best is not None and best['score'] >= threshold
    return ScreenResult(bool(passed), threshold, best, evaluated)


# ----------------------------------------------------------------------
# overlap accounting
# ----------------------------------------------------------------------
@dataclass
class OverlapHistogram:
    """
    phi(x) = number of screened pairs (Q, Q') with x in Q or Q', on the cloud.

    Attributes:
        phi: Per-point counts
        counts: DataFrame (phi, points)
        tails: {N: sampled measure of {phi >= N}}
        bound: Constant K' checked against N * tail(N) (None when unchecked)
        passed: N * tail(N) <= K' for every N (None without a bound)
    """
    phi: np.ndarray
    counts: pd.DataFrame
    tails: Dict[int, float]
    bound: Optional[float] = None
    passed: Optional[bool] = None

    @property
    def scaled_tails(self) -> Dict[int, float]:
        """N * tail(N) for every level."""
        return {n: n * v for n, v in self.tails.items()}

    def to_dict(self) -> Dict[str, Any]:
        return {'mean_phi': float(self.phi.mean()) if len(self.phi) else 0.0,
                'max_phi': int(self.phi.max()) if len(self.phi) else 0,
                'tails': {str(n): v for n, v in self.tails.items()},
                'scaled_tails': {str(n): v for n, v in self.scaled_tails.items()},
                'bound': self.bound,
                'bounded': self.passed}


def overlap_histogram(
    pairs: Iterable[Tuple[CubeAddress, CubeAddress]],
    points: np.ndarray,
    mesh: DyadicMesh,
    levels: Sequence[int] = (2, 4, 8),
    bound: Optional[float] = None
) -> OverlapHistogram:
    """
    Overlap counts of screened pairs on a uniform point cloud of Q(0,0).

    The sampled measure of {phi >= N} is the fraction of cloud points, since
    |Q(0,0)| = 1. With ``bound`` the tails are checked against K' / N;
    without it the scaled tails N * |{phi >= N}| are only reported.
    """
    if bound is not None and not bound > 0:
        raise ValueError(f"bound must be positive, got {bound}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    phi = np.zeros(len(pts), dtype=np.int64)
    cache: Dict[int, np.ndarray] = {}
    for qa, qb in pairs:
        idx = cache.get(qa.scale)
        if idx is None:
            idx = mesh.addresses(pts, qa.scale)
            cache[qa.scale] = idx
        inside = np.all(idx == np.array(qa.index), axis=1) | np.all(idx == np.array(qb.index), axis=1)
        phi += inside
    values, freq = np.unique(phi, return_counts=True)
    counts = pd.DataFrame({'phi': values, 'points': freq})
    tails = {int(n): float(np.mean(phi >= n)) if len(phi) else 0.0 for n in levels}
    passed = None
    if bound is not None:
        passed = all(n * tails[n] <= bound for n in tails)
    return OverlapHistogram(phi, counts, tails, bound, passed)


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------
@dataclass
class DecompositionResult:
    """
    Outcome of ``decompose``.

    Attributes:
        config: Run configuration
        offset: Scale offset W
        final_scale: depth + W
        points: Labelled point cloud
        labels: Final label per point
        garbage_mask: True for points in the garbage set
        garbage: Garbage cubes (content stages and label cap)
        pieces: label -> final-scale cubes of the piece
        piece_table: One row per piece with its biLipschitz band
        pair_table: Sampled (piece, pair, ratio) rows
        screened: Screened pairs with their stage
        overlap: Overlap histogram of the screened pairs
        stages: Stage log
    """
    config: DecomposeConfig
    offset: int
    final_scale: int
    points: np.ndarray
    labels: np.ndarray
    garbage_mask: np.ndarray
    garbage: Set[CubeAddress]
    pieces: Dict[str, Set[CubeAddress]]
    piece_table: pd.DataFrame
    pair_table: pd.DataFrame
    screened: List[Tuple[int, CubeAddress, CubeAddress]]
    overlap: OverlapHistogram
    stages: List[Dict[str, Any]]

    @property
    def garbage_fraction(self) -> float:
        return float(self.garbage_mask.mean())

    def piece_mask(self, label: str) -> np.ndarray:
        return (~self.garbage_mask) & (self.labels == label)

    def stage_table(self) -> pd.DataFrame:
        return pd.DataFrame(self.stages)

    def to_payload(self) -> Dict[str, Any]:
        return {
            'offset': self.offset,
            'final_scale': self.final_scale,
            'points': int(len(self.points)),
            'garbage_fraction': self.garbage_fraction,
            'garbage_cubes': len(self.garbage),
            'pieces': {format_bits(k): len(v) for k, v in sorted(self.pieces.items())},
            'screened_pairs': len(self.screened),
            'overlap': self.overlap.to_dict(),
            'stages': self.stages,
        }


def _piece_constants(F: LipschitzMapHandle, result_points: np.ndarray, labels: np.ndarray,
                     keep: np.ndarray, pairs: int, seed: int) -> Tuple[pd.DataFrame, pd.DataFrame]:
    Gs, Gt = group_for(F.source), group_for(F.target)
    rows, pair_rows = [], []
    for n, label in enumerate(sorted(set(labels[keep]))):
        idx = np.flatnonzero(keep & (labels == label))
        row = {'piece': label, 'points': int(len(idx)), 'measure': len(idx) / len(labels),
               'pairs': 0, 'ratio_min': float('nan'), 'ratio_max': float('nan'),
               'bilip': float('nan')}
        if len(idx) >= 2:
            rng = make_rng(seed, 44, n)
            i = rng.choice(idx, size=pairs)
            j = rng.choice(idx, size=pairs)
            ok = i != j
            i, j = i[ok], j[ok]
            p, q = result_points[i], result_points[j]
            d_src = Gs.quasidistance(p, q)
            good = d_src > 0
            p, q, i, j, d_src = p[good], q[good], i[good], j[good], d_src[good]
            ratios = Gt.quasidistance(F.evaluate(p), F.evaluate(q)) / d_src
            if len(ratios):
                lo, hi = float(ratios.min()), float(ratios.max())
                row.update({'pairs': int(len(ratios)), 'ratio_min': lo, 'ratio_max': hi,
                            'bilip': max(hi, 1.0 / lo) if lo > 0 else float('inf')})
                for a, b, r in list(zip(i, j, ratios))[:1000]:
                    pair_rows.append({'piece': label, 'i': int(a), 'j': int(b), 'ratio': float(r)})
        rows.append(row)
    columns = ['piece', 'points', 'measure', 'pairs', 'ratio_min', 'ratio_max', 'bilip']
    return (pd.DataFrame(rows, columns=columns),
            pd.DataFrame(pair_rows, columns=['piece', 'i', 'j', 'ratio']))


def decompose(
    F: LipschitzMapHandle,
    config: Optional[DecomposeConfig] = None,
    mesh: Optional[DyadicMesh] = None,
    cache: Optional[CacheManager] = None
) -> DecompositionResult:
    """
    Run the staged decomposition of F on Q(0,0).

    Args:
        F: Map handle defined on the dilated base cube
        config: Run configuration (defaults when omitted)
        mesh: Source mesh (built from the config when omitted)
        cache: Cache for the mesh diameter

    Returns:
        DecompositionResult (bit-identical for equal seeds and configs)

    Raises:
        DecompositionError: If evaluating F fails inside a stage
    """
    config = config or DecomposeConfig()
    mesh = mesh or DyadicMesh(F.source, resolution=config.resolution, seed=config.seed,
                              cache=cache)
    W = compute_offset(config.eta, mesh)
    final_scale = config.depth + W
    if final_scale > mesh.resolution:
        raise ValueError(f"depth {config.depth} + W {W} exceeds the mesh resolution "
                         f"{mesh.resolution}")

    rng = make_rng(config.seed, 45)
    points = mesh.sample_cube(mesh.base_cube(), config.points, rng)
    state = LabelState.initial(len(points))
    garbage_mask = np.zeros(len(points), dtype=bool)
    garbage: Set[CubeAddress] = set()
    screened: List[Tuple[int, CubeAddress, CubeAddress]] = []
    stages: List[Dict[str, Any]] = []
    families = mesh.translate_family(0, count=max(config.translates, 1), seed=config.seed)

    for alpha in range(config.depth + 1):
        a = alpha + W
        idx = mesh.addresses(points, a)
        live = np.flatnonzero(~garbage_mask)
        members: Dict[CubeAddress, np.ndarray] = {}
        for row_index, row in zip(live, idx[live]):
            cube = CubeAddress(a, tuple(int(v) for v in row))
            members.setdefault(cube, []).append(row_index)
        members = {c: np.array(v) for c, v in members.items()}
        cubes = sorted(members)

        try:
            images = cube_images(F, mesh, cubes, config.cube_samples,
                                 config.seed + alpha, config.workers)
        except (DomainError, ValueError) as e:
            raise DecompositionError(str(e), alpha, a) from e

        before = len(garbage)
        garbage = garbage_stage(F, mesh, cubes, config.delta, garbage, images=images)
        stage_garbage = {c for c in cubes if c in garbage}
        for cube in stage_garbage:
            garbage_mask[members[cube]] = True
        alive = [c for c in cubes if c not in garbage]

        found: List[Tuple[CubeAddress, CubeAddress]] = []
        kept: List[Tuple[CubeAddress, CubeAddress]] = []
        if a >= 2 and len(alive) >= 2:
            try:
                found = bad_pairs(F, mesh, alive, config.epsilon, config.K,
                                  config.content_rule, config.pair_samples,
                                  config.seed + alpha, images=images)
                stage_families = [CubeAddress(a, f.index, f.translate, f.translate_scale)
                                  for f in families]
                for pair in found:
                    result = wavelet_screen(F, mesh, pair, config.epsilon, config.window_n,
                                            config.c_cal, stage_families,
                                            config.screen_samples, config.seed + alpha)
                    if result.passed:
                        kept.append(pair)
            except DomainError as e:
                raise DecompositionError(str(e), alpha, a) from e
            state = LabelState(state.labels, members)
            for pair in sorted(kept):
                state = update_labels(state, pair)
                screened.append((alpha, pair[0], pair[1]))

        capped = np.array([len(z) >= config.n_cap for z in state.labels])
        newly_capped = capped & ~garbage_mask
        garbage_mask |= capped
        stage = {
            'alpha': alpha, 'scale': a, 'cubes': len(cubes),
            'garbage_new': len(garbage) - before, 'bad_pairs': len(found),
            'screened': len(kept), 'label_capped': int(newly_capped.sum()),
            'garbage_fraction': float(garbage_mask.mean()),
        }
        stages.append(stage)
        logger.info(f"stage {alpha} (scale {a}): {stage['cubes']} cubes, "
                    f"{stage['garbage_new']} garbage, {len(kept)}/{len(found)} pairs screened")

    final_idx = mesh.addresses(points, final_scale)
    pieces: Dict[str, Set[CubeAddress]] = {}
    for n in range(len(points)):
        cube = CubeAddress(final_scale, tuple(int(v) for v in final_idx[n]))
        if garbage_mask[n]:
            garbage.add(cube)
        else:
            pieces.setdefault(state.labels[n], set()).add(cube)

    piece_table, pair_table = _piece_constants(F, points, state.labels, ~garbage_mask,
                                               config.bilip_pairs, config.seed)
    overlap = overlap_histogram([(qa, qb) for _, qa, qb in screened], points, mesh)
    logger.info(f"decomposition finished: {len(pieces)} pieces, "
                f"garbage fraction {garbage_mask.mean():.4f}")
    return DecompositionResult(config, W, final_scale, points, state.labels, garbage_mask,
                               garbage, pieces, piece_table, pair_table, screened, overlap,
                               stages)


def largest_piece(result: DecompositionResult) -> Tuple[Optional[str], float]:
    """Label and sampled measure of the largest piece (None, 0.0 without pieces)."""
    if result.piece_table.empty:
        return None, 0.0
    row = result.piece_table.sort_values(['measure', 'piece'], ascending=[False, True]).iloc[0]
    return str(row['piece']), float(row['measure'])


def garbage_image_fraction(result: DecompositionResult, F: LipschitzMapHandle) -> float:
    """Content of F(garbage cloud) relative to the content of F(whole cloud)."""
    k = F.source.homogeneous_dimension
    image = F.evaluate(result.points)
    total = content_estimate(image, k, descriptor=F.target)
    if not result.garbage_mask.any() or total <= 0:
        return 0.0
    part = content_estimate(image[result.garbage_mask], k, descriptor=F.target)
    return float(min(part / total, 1.0))


def piece_separation_audit(result: DecompositionResult, mesh: DyadicMesh) -> AuditReport:
    """No finished piece meets both cubes of a screened pair."""
    violations = []
    for stage, qa, qb in result.screened:
        ia = mesh.contains(qa, result.points)
        ib = mesh.contains(qb, result.points)
        for label in result.pieces:
            mask = result.piece_mask(label)
            if (mask & ia).any() and (mask & ib).any():
                violations.append({'stage': stage, 'pair': f"{qa.key()}|{qb.key()}",
                                   'piece': format_bits(label)})
    limit = 2 ** result.config.n_cap
    passed = not violations and len(result.pieces) <= limit
    return AuditReport(
        name='piece_separation',
        passed=bool(passed),
        metrics={'pieces': len(result.pieces), 'piece_limit': limit,
                 'screened_pairs': len(result.screened)},
        violations=violations,
    )
