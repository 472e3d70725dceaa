"""
Dyadic cube meshes on H_n and R^k.

The scale-alpha lattice B_alpha has layer-j coordinates in E^{-j alpha} Z
(E = 10 by default). A lattice point y of scale alpha + 1 is a child of x of
scale alpha when y = x g with g in the half-open window

    W_alpha = {layer-j coordinates in (-E^{-j alpha}/2, E^{-j alpha}/2]}.

A cube Q(x, alpha) is the set of points whose window address at the mesh
resolution scale has x as its ancestor at scale alpha. Nesting and tiling
are then exact, and the windows themselves serve as coordinate proxies for
hull sampling and overlap tests.

Lattice points are kept as integer index vectors; parent computations on
lattice points are done in integer arithmetic.
"""

import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from .cache import CacheManager
from .group import CarnotGroup, GroupDescriptor, GroupPoint, group_for
from .reports import AuditReport
from .utils import DEFAULT_RESOLUTION, MC_SIGMA_BAND, make_rng

logger = logging.getLogger(__name__)


# Enlargement of the window that contains every tree cube
_CUBE_ENVELOPE = 1.25

# Hull samples beyond the window corners
HULL_SAMPLES = 32

# Relative slack that keeps "closer than the diameter" strict under rounding
_ADJACENCY_SLACK = 1e-9


class ScaleError(ValueError):
    """Raised when a cube scale is outside the supported range."""


@dataclass(frozen=True, order=True)
class CubeAddress:
    """
    Name of one dyadic cube Q(x, alpha), possibly in a translated family.

    Attributes:
        scale: alpha >= 0
        index: lattice coordinates of x in units of the scale-alpha spacing
        translate: lattice coordinates of the family translate tau (empty
            tuple for the untranslated family)
        translate_scale: scale of the lattice in which ``translate`` is given
    """
    scale: int
    index: Tuple[int, ...]
    translate: Tuple[int, ...] = ()
    translate_scale: int = 0

    @property
    def is_translated(self) -> bool:
        return any(self.translate)

    @property
    def family(self) -> Tuple[Tuple[int, ...], int]:
        return (self.translate, self.translate_scale)

    def with_index(self, index: Iterable[int], scale: int) -> 'CubeAddress':
        return CubeAddress(scale, tuple(int(v) for v in index),
                           self.translate, self.translate_scale)

    def key(self) -> str:
        text = f"{self.scale}:{','.join(map(str, self.index))}"
        if self.is_translated:
            text += f"@{self.translate_scale}:{','.join(map(str, self.translate))}"
        return text


@dataclass(frozen=True)
class CubeWindow:
    """Half-open coordinate ranges (-half, half] of the scale-alpha window."""
    scale: int
    half_widths: Tuple[float, ...]

    def contains(self, residuals: np.ndarray) -> np.ndarray:
        half = np.asarray(self.half_widths)
        return np.all((residuals > -half) & (residuals <= half), axis=-1)


def _ceil_div(a: np.ndarray, b: int) -> np.ndarray:
    return -((-a) // b)


class DyadicMesh:
    """
    Dyadic mesh of one descriptor.

    Args:
        descriptor: Group descriptor (heisenberg or euclidean)
        resolution: Scale at which point membership is resolved
        seed: Seed for hull samples and the diameter estimate
        cache: Optional CacheManager for the base-cube diameter
        diameter_samples: Sample count for the diameter estimate

    Example:
        >>> mesh = DyadicMesh(GroupDescriptor.heisenberg(1))
        >>> mesh.address_of(mesh.descriptor.point(0.04, -0.03, 0.007), 1).index
        (0, 0, 1)
    """

    def __init__(
        self,
        descriptor: GroupDescriptor,
        resolution: int = DEFAULT_RESOLUTION,
        seed: int = 0,
        cache: Optional[CacheManager] = None,
        diameter_samples: int = 2048
    ):
        if descriptor.step > 2:
            raise NotImplementedError("dyadic meshes need a group of step <= 2")
        if resolution < 1:
            raise ScaleError(f"resolution must be >= 1, got {resolution}")
        self.descriptor = descriptor
        self.group: CarnotGroup = group_for(descriptor)
        self.E = descriptor.scaling_base
        self.resolution = resolution
        self.seed = seed
        self.cache = cache
        self.diameter_samples = diameter_samples
        self.dim = descriptor.dim
        self.weights = descriptor.weights
        self._h = descriptor.layer_slices[0]
        self._v = descriptor.layer_slices[1] if descriptor.step == 2 else slice(0, 0)

        self._int_brackets = []
        for i, j, k, c in descriptor.structure_constants:
            half = c / 2
            if half.denominator != 1:
                raise ValueError(
                    f"structure constant {c} does not keep the lattice closed"
                )
            self._int_brackets.append((i, j, k, int(half)))

        self._unit_hull = self._build_unit_hull()
        self._diameter0: Optional[float] = None

    @property
    def int_brackets(self) -> List[Tuple[int, int, int, int]]:
        """Half structure constants (i, j, k, c/2) as integers."""
        return list(self._int_brackets)

    def __repr__(self) -> str:
        return f"DyadicMesh({self.descriptor.label}, resolution={self.resolution})"

    # ------------------------------------------------------------------
    # lattice geometry
    # ------------------------------------------------------------------
    def spacing(self, alpha: int) -> np.ndarray:
        """Lattice spacing of every coordinate at scale alpha."""
        return float(self.E) ** (-(self.weights * alpha).astype(float))

    def window(self, alpha: int) -> CubeWindow:
        return CubeWindow(alpha, tuple(0.5 * self.spacing(alpha)))

    def lattice_points(self, index: np.ndarray, alpha: int) -> np.ndarray:
        return np.asarray(index, dtype=float) * self.spacing(alpha)

    def translate_point(self, cube: CubeAddress) -> np.ndarray:
        if not cube.is_translated:
            return np.zeros(self.dim)
        return self.lattice_points(np.array(cube.translate), cube.translate_scale)

    def anchor(self, cube: CubeAddress) -> np.ndarray:
        """The group element tau * x at which the cube's window sits."""
        x = self.lattice_points(np.array(cube.index), cube.scale)
        if not cube.is_translated:
            return x
        return self.group.multiply(self.translate_point(cube), x)

    def anchor_index(self, cube: CubeAddress, unit: int) -> Tuple[int, ...]:
        """
        Exact lattice coordinates of tau * x in units of the scale-``unit``
        spacing (``unit`` must be at least the cube and translate scales).
        """
        if unit < cube.scale or (cube.is_translated and unit < cube.translate_scale):
            raise ScaleError(f"unit scale {unit} is coarser than cube {cube.key()}")
        w = self.weights.astype(np.int64)
        x = np.array([cube.index], dtype=np.int64) * self.E ** (w * (unit - cube.scale))
        if cube.is_translated:
            tau = (np.array([cube.translate], dtype=np.int64)
                   * self.E ** (w * (unit - cube.translate_scale)))
            x = tau + x + (self.int_bracket(tau, x) if self.descriptor.step == 2 else 0)
        return tuple(int(v) for v in x[0])

    def base_point(self, cube: CubeAddress) -> GroupPoint:
        """Lattice point x of the cube as a GroupPoint."""
        return GroupPoint.from_array(
            self.lattice_points(np.array(cube.index), cube.scale), self.descriptor
        )

    def base_cube(self) -> CubeAddress:
        return CubeAddress(0, tuple([0] * self.dim))

    def int_bracket(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = np.zeros(np.broadcast(a, b).shape, dtype=np.int64)
        for i, j, k, c in self._int_brackets:
            out[:, k] += c * (a[:, i] * b[:, j] - a[:, j] * b[:, i])
        return out

    # ------------------------------------------------------------------
    # addressing
    # ------------------------------------------------------------------
    def window_indices(self, points: np.ndarray, alpha: int) -> np.ndarray:
        """
        Window address of each point at scale alpha (untranslated frame).

        Raises:
            ValueError: If any point is non-finite (no covering lattice point)
        """
        return lattice_window_indices(self.group, points, self.spacing(alpha))

    def parent_indices(self, index: np.ndarray) -> np.ndarray:
        """Exact parent lattice indices of scale-(alpha+1) lattice points."""
        child = np.atleast_2d(np.asarray(index, dtype=np.int64))
        E = self.E
        out = np.zeros_like(child)
        out[:, self._h] = _ceil_div(2 * child[:, self._h] - E, 2 * E)
        if self.descriptor.step == 2:
            xh = np.zeros_like(child)
            xh[:, self._h] = out[:, self._h] * E
            v = child + self.int_bracket(-xh, child)
            out[:, self._v] = _ceil_div(2 * v[:, self._v] - E * E, 2 * E * E)
        return out

    def _frame(self, points: np.ndarray, translate: Tuple[int, ...],
               translate_scale: int) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if translate and any(translate):
            tau = self.lattice_points(np.array(translate), translate_scale)
            p = self.group.multiply(np.broadcast_to(-tau, p.shape), p)
        return p

    def addresses(
        self,
        points: np.ndarray,
        alpha: int,
        translate: Tuple[int, ...] = (),
        translate_scale: int = 0
    ) -> np.ndarray:
        """
        Cube indices at scale alpha for a batch of points, shape (N, dim).

        The window address is taken at ``max(alpha, resolution)`` and walked up
        to alpha through exact parent computations.
        """
        if alpha < 0:
            raise ScaleError(f"scale must be >= 0, got {alpha}")
        p = self._frame(points, translate, translate_scale)
        start = max(alpha, self.resolution)
        idx = self.window_indices(p, start)
        for _ in range(start - alpha):
            idx = self.parent_indices(idx)
        return idx

    def address_of(
        self,
        p: GroupPoint,
        alpha: int,
        family: Optional[CubeAddress] = None
    ) -> CubeAddress:
        """
        Address of the scale-alpha cube containing p.

        Args:
            p: Point
            alpha: Scale
            family: Any cube of the translated family to use (None for A_alpha)
        """
        translate = family.translate if family is not None else ()
        tscale = family.translate_scale if family is not None else 0
        idx = self.addresses(p.as_array().astype(float), alpha, translate, tscale)[0]
        return CubeAddress(alpha, tuple(int(v) for v in idx), translate, tscale)

    def contains(self, cube: CubeAddress, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points that lie in the cube."""
        idx = self.addresses(points, cube.scale, cube.translate, cube.translate_scale)
        return np.all(idx == np.array(cube.index), axis=1)

    def parent(self, cube: CubeAddress) -> CubeAddress:
        """
        Parent cube at scale alpha - 1.

        Raises:
            ScaleError: For scale-0 cubes
        """
        if cube.scale < 1:
            raise ScaleError("scale-0 cubes have no parent in scope")
        idx = self.parent_indices(np.array([cube.index]))[0]
        return cube.with_index(idx, cube.scale - 1)

    def ancestor(self, cube: CubeAddress, alpha: int) -> CubeAddress:
        if alpha > cube.scale or alpha < 0:
            raise ScaleError(f"no ancestor of a scale-{cube.scale} cube at {alpha}")
        while cube.scale > alpha:
            cube = self.parent(cube)
        return cube

    def child_offsets(self) -> np.ndarray:
        """Integer window offsets g (child units) of all children, shape (E^Q, dim)."""
        return _child_offsets(self.E, tuple(int(w) for w in self.weights))

    def children_indices(self, cube: CubeAddress) -> np.ndarray:
        offsets = self.child_offsets()
        x = np.array(cube.index, dtype=np.int64) * self.E ** self.weights.astype(np.int64)
        x = np.broadcast_to(x, offsets.shape)
        y = x + offsets
        if self.descriptor.step == 2:
            y = y + self.int_bracket(x, offsets)
        return y

    def children(self, cube: CubeAddress) -> List[CubeAddress]:
        """All scale-(alpha+1) cubes whose parent is ``cube``, sorted."""
        y = self.children_indices(cube)
        return sorted(cube.with_index(row, cube.scale + 1) for row in y)

    def translate_family(self, alpha: int, count: int = 256,
                         seed: Optional[int] = None) -> List[CubeAddress]:
        """
        Seeded subsample of the translated families A'_alpha.

        Translates lie on the scale-(alpha+2) lattice with horizontal
        coordinates in [-E^{-alpha}, E^{-alpha}] and vertical coordinates in
        [-E^{-2 alpha}, E^{-2 alpha}]. The identity family is always first.
        Each family is returned as its base-cube representative.

        Integer translate indices do not depend on alpha, so the families at
        different scales are dilates of each other.
        """
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        rng = make_rng(self.seed if seed is None else seed, 1)
        bound = self.E ** (2 * self.weights.astype(np.int64))
        zero = tuple([0] * self.dim)
        families = [CubeAddress(alpha, zero)]
        seen = {zero}
        attempts = 0
        while len(families) < count and attempts < 50 * count:
            attempts += 1
            tau = tuple(int(v) for v in rng.integers(-bound, bound + 1))
            if tau in seen:
                continue
            seen.add(tau)
            families.append(CubeAddress(alpha, zero, tau, alpha + 2))
        return families

    # ------------------------------------------------------------------
    # sampling
    # ------------------------------------------------------------------
    def window_points(self, cube: CubeAddress, count: int,
                      rng: np.random.Generator) -> np.ndarray:
        """Uniform samples of the cube's window tau x W_alpha."""
        half = 0.5 * self.spacing(cube.scale)
        w = rng.uniform(-half, half, size=(count, self.dim))
        return self.group.multiply(np.broadcast_to(self.anchor(cube), w.shape), w)

    def sample_cube(self, cube: CubeAddress, count: int,
                    rng: np.random.Generator, max_rounds: int = 100) -> np.ndarray:
        """Uniform samples of the tree cube by rejection from an enlarged window."""
        half = 0.5 * self.spacing(cube.scale) * _CUBE_ENVELOPE
        anchor = self.anchor(cube)
        kept: List[np.ndarray] = []
        total = 0
        for _ in range(max_rounds):
            w = rng.uniform(-half, half, size=(max(2 * count, 64), self.dim))
            p = self.group.multiply(np.broadcast_to(anchor, w.shape), w)
            p = p[self.contains(cube, p)]
            kept.append(p)
            total += len(p)
            if total >= count:
                break
        if total < count:
            raise RuntimeError(f"could not sample {count} points in cube {cube.key()}")
        return np.vstack(kept)[:count]

    def envelope_volume(self, alpha: int) -> float:
        return float(np.prod(self.spacing(alpha) * _CUBE_ENVELOPE))

    def _build_unit_hull(self) -> np.ndarray:
        corners = np.array(np.meshgrid(*([[-0.5, 0.5]] * self.dim), indexing='ij'))
        corners = corners.reshape(self.dim, -1).T
        rng = make_rng(self.seed, 2)
        extra = rng.uniform(-0.5, 0.5, size=(HULL_SAMPLES, self.dim))
        faces = rng.integers(0, self.dim, size=HULL_SAMPLES)
        signs = rng.choice([-0.5, 0.5], size=HULL_SAMPLES)
        extra[np.arange(HULL_SAMPLES), faces] = signs
        return np.vstack([corners, extra])

    def hull_points(self, cube: CubeAddress) -> np.ndarray:
        """Window corners plus seeded boundary samples, mapped onto the cube."""
        local = self.group.dilate(float(self.E) ** -cube.scale, self._unit_hull)
        return self.group.multiply(np.broadcast_to(self.anchor(cube), local.shape), local)

    # ------------------------------------------------------------------
    # metric queries
    # ------------------------------------------------------------------
    def diameter(self, alpha: int) -> float:
        """
        diam(Q(0,0)) * E^{-alpha}, with diam(Q(0,0)) the maximum quasidistance
        over sampled pairs of the base cube (estimated once, then cached).
        """
        if alpha < 0:
            raise ScaleError(f"scale must be >= 0, got {alpha}")
        return self.base_diameter() * float(self.E) ** -alpha

    def base_diameter(self) -> float:
        if self._diameter0 is not None:
            return self._diameter0
        key = (f"diameter:{self.descriptor.label}:{self.descriptor.layer_norm}:"
               f"E{self.E}:res{self.resolution}:seed{self.seed}:n{self.diameter_samples}")
        cached = self.cache.get_constant(key) if self.cache else None
        if cached is not None:
            self._diameter0 = cached
            return cached

        rng = make_rng(self.seed, 3)
        pts = self.sample_cube(self.base_cube(), self.diameter_samples, rng)
        best = 0.0
        for start in range(0, len(pts), 256):
            block = pts[start:start + 256]
            a = np.repeat(block, len(pts), axis=0)
            b = np.tile(pts, (len(block), 1))
            best = max(best, float(self.group.quasidistance(a, b).max()))
        self._diameter0 = best
        logger.info(f"Estimated diam(Q(0,0)) = {best:.6f} for {self.descriptor.label}")
        if self.cache:
            self.cache.save_constant(key, best, {'samples': self.diameter_samples,
                                                 'seed': self.seed})
        return best

    def hull_distance(self, a: CubeAddress, b: CubeAddress) -> float:
        ha, hb = self.hull_points(a), self.hull_points(b)
        pa = np.repeat(ha, len(hb), axis=0)
        pb = np.tile(hb, (len(ha), 1))
        return float(self.group.quasidistance(pa, pb).min())

    def is_adjacent(self, a: CubeAddress, b: CubeAddress) -> bool:
        """
        True iff the sampled hulls are closer than diameter(alpha).

        Coincident cubes are adjacent.

        Raises:
            ScaleError: If the scales differ
        """
        if a.scale != b.scale:
            raise ScaleError(f"adjacency needs equal scales, got {a.scale} and {b.scale}")
        if a == b:
            return True
        diam = self.diameter(a.scale)
        anchors = self.group.quasidistance(self.anchor(a), self.anchor(b))
        if anchors > 3.0 * diam:
            return False
        return self.hull_distance(a, b) < diam * (1.0 - _ADJACENCY_SLACK)

    def is_semi_adjacent(self, a: CubeAddress, b: CubeAddress) -> bool:
        """
        Not adjacent, parents not adjacent, grandparents adjacent.

        Raises:
            ScaleError: If the scales differ or are below 2
        """
        if a.scale != b.scale:
            raise ScaleError(f"semi-adjacency needs equal scales, got {a.scale} and {b.scale}")
        if a.scale < 2:
            raise ScaleError(f"semi-adjacency needs scale >= 2, got {a.scale}")
        if self.is_adjacent(a, b):
            return False
        pa, pb = self.parent(a), self.parent(b)
        if self.is_adjacent(pa, pb):
            return False
        return self.is_adjacent(self.parent(pa), self.parent(pb))

    def neighbor_indices(self, cube: CubeAddress) -> np.ndarray:
        """Lattice indices of every cube that could be adjacent to ``cube``."""
        reach = self.base_diameter() + 1.0
        radius = np.where(self.weights == 1, np.ceil(reach) + 1,
                          np.ceil(reach ** 2) + 2).astype(np.int64)
        axes = [np.arange(-r, r + 1) for r in radius]
        grid = np.array(np.meshgrid(*axes, indexing='ij')).reshape(self.dim, -1).T
        base = np.array(cube.index, dtype=np.int64)
        out = base + grid
        if self.descriptor.step == 2:
            out = out + self.int_bracket(np.broadcast_to(base, grid.shape), grid)
        return out

    def neighbor_count_audit(self, alpha: int) -> int:
        """Number of scale-alpha cubes adjacent to the cube at the origin (self included)."""
        if alpha < 0:
            raise ScaleError(f"scale must be >= 0, got {alpha}")
        center = CubeAddress(alpha, tuple([0] * self.dim))
        count = 0
        for idx in self.neighbor_indices(center):
            if self.is_adjacent(center, center.with_index(idx, alpha)):
                count += 1
        logger.info(f"neighbor count at scale {alpha}: {count}")
        return count

    # ------------------------------------------------------------------
    # audits
    # ------------------------------------------------------------------
    def tiling_audit(
        self,
        alpha: int,
        samples: int = 100_000,
        seed: int = 0,
        family: Optional[CubeAddress] = None,
        window_scale: float = 1.0
    ) -> AuditReport:
        """
        Tiling of the base cube by the scale-alpha windows and cubes.

        For each uniform sample p of the (possibly translated) base cube,
        every lattice point x near p is tried and x^{-1} p is tested against
        the half-open window directly. A sample is covered when exactly one
        lattice point takes it into the window and its scale-alpha cube
        descends from the base cube.

        Args:
            alpha: Scale of the tiles (>= 1)
            samples: Uniform samples of the base cube
            seed: Sampling seed
            family: Any cube of a translated family (None for A_alpha)
            window_scale: Factor applied to the window half-widths; any value
                other than 1 leaves gaps or overlaps
        """
        if alpha < 1:
            raise ScaleError(f"tiling audit needs alpha >= 1, got {alpha}")
        if not window_scale > 0:
            raise ValueError(f"window_scale must be positive, got {window_scale}")
        translate = family.translate if family is not None else ()
        tscale = family.translate_scale if family is not None else 0
        base = CubeAddress(0, tuple([0] * self.dim), translate, tscale)
        rng = make_rng(seed, 4, alpha)
        pts = self.sample_cube(base, samples, rng)

        local = self._frame(pts, translate, tscale)
        window = self.window_indices(local, alpha)
        tile = CubeWindow(alpha, tuple(window_scale * np.asarray(self.window(alpha).half_widths)))
        axes = [np.arange(-1, 2) if w == 1 else np.arange(-2, 3) for w in self.weights]
        steps = np.array(np.meshgrid(*axes, indexing='ij')).reshape(self.dim, -1).T
        hits = np.zeros(len(pts), dtype=np.int64)
        for step in steps:
            g = np.broadcast_to(step, window.shape)
            candidate = window + g
            if self.descriptor.step == 2:
                candidate = candidate + self.int_bracket(window, g)
            x = self.lattice_points(candidate, alpha)
            hits += tile.contains(self.group.multiply(-x, local))

        ancestors = self.addresses(pts, alpha, translate, tscale)
        for _ in range(alpha):
            ancestors = self.parent_indices(ancestors)
        descends = np.all(ancestors == 0, axis=1)
        covered = (hits == 1) & descends

        frac = float(covered.mean())
        sigma = float(np.sqrt(max(frac * (1 - frac), 1.0 / samples) / samples))
        bad = np.flatnonzero(~covered)
        violations = [
            {'sample': int(i), 'point': pts[i].tolist(), 'hits': int(hits[i]),
             'descends': bool(descends[i])}
            for i in bad[:100]
        ]
        passed = abs(1.0 - frac) <= MC_SIGMA_BAND * sigma
        logger.info(f"tiling audit alpha={alpha}: coverage={frac:.6f}")
        return AuditReport(
            name='tiling',
            passed=bool(passed),
            metrics={'alpha': alpha, 'samples': samples, 'coverage': frac,
                     'sigma': sigma, 'uncovered': int(np.sum(hits == 0)),
                     'multiply_covered': int(np.sum(hits > 1)),
                     'translated': bool(translate and any(translate)),
                     'window_scale': window_scale},
            violations=violations,
        )

    def volume_audit(self, cube: CubeAddress, samples: int = 100_000,
                     seed: int = 0) -> AuditReport:
        """Sampled Haar volume of a cube against E^{-Q alpha} vol(Q(0,0))."""
        rng = make_rng(seed, 5, cube.scale)
        half = 0.5 * self.spacing(cube.scale) * _CUBE_ENVELOPE
        w = rng.uniform(-half, half, size=(samples, self.dim))
        pts = self.group.multiply(np.broadcast_to(self.anchor(cube), w.shape), w)
        frac = float(self.contains(cube, pts).mean())
        env = self.envelope_volume(cube.scale)
        estimate = env * frac
        sigma = env * np.sqrt(max(frac * (1 - frac), 1e-300) / samples)
        exact = float(self.E) ** (-self.descriptor.homogeneous_dimension * cube.scale)
        passed = abs(estimate - exact) <= MC_SIGMA_BAND * sigma
        return AuditReport(
            name='volume',
            passed=bool(passed),
            metrics={'cube': cube.key(), 'estimate': estimate, 'sigma': float(sigma),
                     'expected': exact},
        )

    def nesting_audit(self, alpha: int, samples: int = 20_000,
                      seed: int = 0) -> AuditReport:
        """
        Children lie inside their parent.

        Tree cubes nest exactly, which is what ``passed`` reports. The share of
        child-window samples that leave the parent's window is reported as
        ``window_spill`` for information.
        """
        rng = make_rng(seed, 6, alpha)
        parent = CubeAddress(alpha, tuple([0] * self.dim))
        kids = self.children(parent)
        picks = rng.integers(0, len(kids), size=min(64, len(kids)))
        per_child = max(samples // len(picks), 1)
        inside = []
        spill = []
        for pick in picks:
            child = kids[int(pick)]
            pts = self.sample_cube(child, per_child, rng)
            inside.append(self.contains(parent, pts))
            wpts = self.window_points(child, per_child, rng)
            spill.append(np.any(self.window_indices(wpts, alpha) != 0, axis=1))
        inside = np.concatenate(inside)
        spill = np.concatenate(spill)
        return AuditReport(
            name='nesting',
            passed=bool(inside.all()),
            metrics={'alpha': alpha, 'samples': int(len(inside)),
                     'inside_fraction': float(inside.mean()),
                     'window_spill': float(spill.mean())},
        )

    def mesh_dump(self, cubes: Iterable[CubeAddress]) -> str:
        """JSON lines, one record {base, scale, translate} per cube."""
        lines = []
        for cube in cubes:
            record = {
                'base': self.lattice_points(np.array(cube.index), cube.scale).tolist(),
                'scale': cube.scale,
                'translate': self.translate_point(cube).tolist(),
            }
            lines.append(json.dumps(record, sort_keys=True))
        return "\n".join(lines)

    def cube_table(self, cubes: Iterable[CubeAddress]) -> pd.DataFrame:
        rows = [{'cube': c.key(), 'scale': c.scale,
                 'anchor': ' '.join(f'{v:.12g}' for v in self.anchor(c))}
                for c in cubes]
        return pd.DataFrame(rows, columns=['cube', 'scale', 'anchor'])


@lru_cache(maxsize=None)
def _child_offsets(E: int, weights: Tuple[int, ...]) -> np.ndarray:
    axes = []
    for w in weights:
        span = E ** w
        low = -(span // 2) + (1 if span % 2 == 0 else 0)
        axes.append(np.arange(low, low + span, dtype=np.int64))
    grid = np.array(np.meshgrid(*axes, indexing='ij'))
    out = grid.reshape(len(weights), -1).T.copy()
    out.setflags(write=False)
    return out


def lattice_window_indices(group: CarnotGroup, points: np.ndarray,
                           spacing: np.ndarray) -> np.ndarray:
    """
    Window addresses of points on the lattice with per-coordinate ``spacing``.

    The horizontal index is rounded first; the vertical index is then read
    off x^{-1} p for the horizontal lattice point x, so that x^{-1} p lies in
    the half-open window.

    Raises:
        ValueError: If any point is non-finite (no covering lattice point)
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(p)):
        raise ValueError("no covering lattice point for non-finite coordinates")
    desc = group.descriptor
    h = desc.layer_slices[0]
    idx = np.zeros(p.shape, dtype=np.int64)
    idx[:, h] = np.ceil(p[:, h] / spacing[h] - 0.5)
    if desc.step == 2:
        v = desc.layer_slices[1]
        x = np.zeros_like(p)
        x[:, h] = idx[:, h] * spacing[h]
        w = p + group.bracket_half(-x, p)
        idx[:, v] = np.ceil(w[:, v] / spacing[v] - 0.5)
    return idx
