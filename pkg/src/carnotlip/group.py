"""
Graded nilpotent groups: Heisenberg groups H_n and Euclidean groups R^k.

Points are stored in exponential coordinates, layer by layer. For H_n the
coordinates are (x_1, ..., x_{2n}, t) with z_j = x_{2j-1} + i x_{2j} and the
group law

    (z, t) * (w, s) = (z + w, t + s + Im sum_j z_j conj(w_j)).

All array operations in ``CarnotGroup`` are vectorized over a leading sample
axis; the module-level functions ``multiply``, ``inverse``, ``dilate``,
``quasidistance`` and ``cc_distance_estimate`` work on single ``GroupPoint``
values and check that descriptors agree.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.optimize as spo

from .reports import AuditReport
from .utils import SCALING_BASE, as_points, make_rng

logger = logging.getLogger(__name__)


LAYER_NORMS = ('max', 'euclidean')

# Vertical displacement produced by one unit-side square loop in a complex
# plane of H_n (signed area times the -2 of the bracket).
_LOOP_GAIN = 2.0


class DescriptorMismatchError(ValueError):
    """Raised when two points belong to different groups."""


@dataclass(frozen=True)
class GroupDescriptor:
    """
    Identifies a graded group by its layers and bracket structure.

    Structure constants are stored as tuples ``(i, j, k, c)`` with ``i < j``
    meaning ``[e_i, e_j] = c e_k`` (global basis indices, ``c`` rational).
    The bracket is antisymmetric by construction.

    Example:
        >>> h1 = GroupDescriptor.heisenberg(1)
        >>> h1.homogeneous_dimension
        4
    """
    step: int
    grading_dims: Tuple[int, ...]
    structure_constants: Tuple[Tuple[int, int, int, Fraction], ...] = ()
    scaling_base: int = SCALING_BASE
    kind: str = 'custom'
    n: int = 0
    layer_norm: str = 'max'

    def __post_init__(self):
        dims = tuple(int(d) for d in self.grading_dims)
        object.__setattr__(self, 'grading_dims', dims)
        if self.step < 1 or len(dims) != self.step:
            raise ValueError(
                f"step {self.step} does not match grading dims {dims}"
            )
        if any(d < 1 for d in dims):
            raise ValueError(f"grading dims must be positive, got {dims}")
        if self.scaling_base < 2:
            raise ValueError(f"scaling base must be >= 2, got {self.scaling_base}")
        if self.layer_norm not in LAYER_NORMS:
            raise ValueError(
                f"layer_norm must be one of {LAYER_NORMS}, got {self.layer_norm!r}"
            )

        layer_of = np.repeat(np.arange(1, self.step + 1), dims)
        constants = []
        for entry in self.structure_constants:
            i, j, k, c = entry
            c = Fraction(c)
            if not (0 <= i < j < len(layer_of)) or not (0 <= k < len(layer_of)):
                raise ValueError(f"structure constant index out of range: {entry}")
            if layer_of[k] != layer_of[i] + layer_of[j]:
                raise ValueError(
                    f"bracket [e_{i}, e_{j}] must land in layer "
                    f"{layer_of[i] + layer_of[j]}, got e_{k}"
                )
            if c != 0:
                constants.append((int(i), int(j), int(k), c))
        object.__setattr__(self, 'structure_constants', tuple(sorted(constants)))

        if self.kind == 'heisenberg':
            if self.step != 2 or dims != (2 * self.n, 1):
                raise ValueError(
                    f"heisenberg({self.n}) needs step 2 and dims (2n, 1), got {dims}"
                )
        elif self.kind == 'euclidean':
            if self.step != 1 or dims != (self.n,) or constants:
                raise ValueError(f"euclidean({self.n}) must be abelian of step 1")

    @classmethod
    def heisenberg(cls, n: int = 1, layer_norm: str = 'max') -> 'GroupDescriptor':
        """Descriptor of H_n (real dimension 2n + 1)."""
        if n < 1:
            raise ValueError(f"heisenberg needs n >= 1, got {n}")
        constants = tuple(
            (2 * l, 2 * l + 1, 2 * n, Fraction(-2)) for l in range(n)
        )
        return cls(
            step=2, grading_dims=(2 * n, 1), structure_constants=constants,
            kind='heisenberg', n=n, layer_norm=layer_norm,
        )

    @classmethod
    def euclidean(cls, k: int, layer_norm: str = 'max') -> 'GroupDescriptor':
        """Descriptor of the abelian group R^k."""
        if k < 1:
            raise ValueError(f"euclidean needs k >= 1, got {k}")
        return cls(step=1, grading_dims=(k,), kind='euclidean', n=k,
                   layer_norm=layer_norm)

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> 'GroupDescriptor':
        """
        Build a descriptor from ``{"kind": "heisenberg", "n": 1}`` or
        ``{"kind": "euclidean", "k": 3}``.
        """
        kind = data.get('kind')
        norm = data.get('layer_norm', 'max')
        if kind == 'heisenberg':
            return cls.heisenberg(int(data['n']), layer_norm=norm)
        if kind == 'euclidean':
            return cls.euclidean(int(data.get('k', data.get('n'))), layer_norm=norm)
        raise ValueError(f"Unknown group kind: {kind!r}")

    def to_json(self) -> Dict[str, Any]:
        if self.kind == 'heisenberg':
            return {'kind': 'heisenberg', 'n': self.n}
        if self.kind == 'euclidean':
            return {'kind': 'euclidean', 'k': self.n}
        raise ValueError("only heisenberg and euclidean descriptors serialize")

    @property
    def dim(self) -> int:
        return int(sum(self.grading_dims))

    @property
    def homogeneous_dimension(self) -> int:
        return int(sum((j + 1) * d for j, d in enumerate(self.grading_dims)))

    @property
    def horizontal_dim(self) -> int:
        return self.grading_dims[0]

    @property
    def layer_slices(self) -> List[slice]:
        bounds = np.concatenate([[0], np.cumsum(self.grading_dims)])
        return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]

    @property
    def weights(self) -> np.ndarray:
        """Layer index (1-based) of every coordinate."""
        return np.repeat(np.arange(1, self.step + 1), self.grading_dims)

    @property
    def label(self) -> str:
        if self.kind in ('heisenberg', 'euclidean'):
            return f"{self.kind}-{self.n}"
        return f"custom-step{self.step}-{'x'.join(map(str, self.grading_dims))}"

    def bracket_matrix(self, k: int) -> np.ndarray:
        """Antisymmetric matrix of coefficients of e_k in [e_i, e_j]."""
        mat = np.zeros((self.dim, self.dim), dtype=object)
        mat[:] = Fraction(0)
        for i, j, kk, c in self.structure_constants:
            if kk == k:
                mat[i, j] = c
                mat[j, i] = -c
        return mat

    def identity(self) -> 'GroupPoint':
        return GroupPoint(tuple([0.0] * self.dim), self)

    def point(self, *coords: Any) -> 'GroupPoint':
        """Shorthand: ``H1.point(1, 0, 0)``."""
        if len(coords) == 1 and not np.isscalar(coords[0]):
            coords = tuple(coords[0])
        return GroupPoint(tuple(coords), self)


@dataclass(frozen=True)
class GroupPoint:
    """A group element in exponential coordinates."""
    coords: Tuple[Any, ...]
    descriptor: GroupDescriptor = field(repr=False)

    def __post_init__(self):
        coords = tuple(self.coords)
        if len(coords) != self.descriptor.dim:
            raise ValueError(
                f"{self.descriptor.label} points need {self.descriptor.dim} "
                f"coordinates, got {len(coords)}"
            )
        object.__setattr__(self, 'coords', coords)

    @property
    def is_exact(self) -> bool:
        return any(isinstance(c, Fraction) for c in self.coords)

    def as_array(self) -> np.ndarray:
        if self.is_exact:
            return np.array([Fraction(c) for c in self.coords], dtype=object)
        return np.array(self.coords, dtype=float)

    @classmethod
    def from_array(cls, arr: np.ndarray, descriptor: GroupDescriptor) -> 'GroupPoint':
        if arr.dtype == object:
            return cls(tuple(arr.tolist()), descriptor)
        return cls(tuple(float(v) for v in arr), descriptor)

    def __mul__(self, other: 'GroupPoint') -> 'GroupPoint':
        return multiply(self, other)

    def inverse(self) -> 'GroupPoint':
        return inverse(self)

    def dilate(self, lam: float) -> 'GroupPoint':
        return dilate(lam, self)

    def is_identity(self) -> bool:
        return all(c == 0 for c in self.coords)


class CarnotGroup:
    """
    Vectorized arithmetic and metric structure for one descriptor.

    Every method accepts a single point of shape (dim,) or a batch of shape
    (N, dim) and returns the matching shape.

    Example:
        >>> G = CarnotGroup(GroupDescriptor.heisenberg(1))
        >>> G.multiply([1, 0, 0], [0, 1, 0])
        array([ 1.,  1., -1.])
    """

    def __init__(self, descriptor: GroupDescriptor):
        self.descriptor = descriptor
        self.dim = descriptor.dim
        self._weights = descriptor.weights
        self._slices = descriptor.layer_slices
        self._h = descriptor.layer_slices[0]
        self._constants_exact = [
            (i, j, k, c / 2) for i, j, k, c in descriptor.structure_constants
        ]
        self._constants_float = [
            (i, j, k, float(c)) for i, j, k, c in self._constants_exact
        ]

    def __repr__(self) -> str:
        return f"CarnotGroup({self.descriptor.label})"

    # ------------------------------------------------------------------
    # array plumbing
    # ------------------------------------------------------------------
    def _prep(self, p: Any) -> Tuple[np.ndarray, bool]:
        arr = np.asarray(p)
        single = arr.ndim == 1
        return as_points(arr, self.dim), single

    @staticmethod
    def _out(arr: np.ndarray, single: bool) -> np.ndarray:
        return arr[0] if single else arr

    def bracket_half(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """The BCH correction 1/2 [p, q] for step-2 groups, shape (N, dim)."""
        exact = p.dtype == object or q.dtype == object
        if exact:
            p = p.astype(object)
            q = q.astype(object)
            res = np.empty(np.broadcast(p, q).shape, dtype=object)
            res[:] = Fraction(0)
            table = self._constants_exact
        else:
            res = np.zeros(np.broadcast(p, q).shape)
            table = self._constants_float
        for i, j, k, c in table:
            res[:, k] = res[:, k] + c * (p[:, i] * q[:, j] - p[:, j] * q[:, i])
        return res

    # ------------------------------------------------------------------
    # group structure
    # ------------------------------------------------------------------
    def multiply(self, p: Any, q: Any) -> np.ndarray:
        """Group product p * q."""
        if self.descriptor.step > 2:
            raise NotImplementedError(
                f"multiplication for step {self.descriptor.step} groups is not implemented"
            )
        pa, sp = self._prep(p)
        qa, sq = self._prep(q)
        out = pa + qa
        if self.descriptor.step == 2 and self._constants_float:
            out = out + self.bracket_half(pa, qa)
        return self._out(out, sp and sq)

    def inverse(self, p: Any) -> np.ndarray:
        """Inverse element; in exponential coordinates this is negation."""
        pa, single = self._prep(p)
        return self._out(-pa, single)

    def dilate(self, lam: Any, p: Any) -> np.ndarray:
        """Dilation scaling layer j by lam**j."""
        if not lam > 0:
            raise ValueError(f"Dilation factor must be positive, got {lam}")
        pa, single = self._prep(p)
        if pa.dtype == object:
            factors = np.array([lam ** int(w) for w in self._weights], dtype=object)
        else:
            factors = float(lam) ** self._weights.astype(float)
        return self._out(pa * factors, single)

    def horizontal(self, p: Any) -> np.ndarray:
        pa, single = self._prep(p)
        return self._out(pa[:, self._h], single)

    # ------------------------------------------------------------------
    # metric structure
    # ------------------------------------------------------------------
    def layer_norms(self, p: Any) -> np.ndarray:
        """Per-layer norms ||p_j||, shape (N, step)."""
        pa, _ = self._prep(p)
        pa = pa.astype(float)
        cols = []
        for sl in self._slices:
            block = np.abs(pa[:, sl])
            if self.descriptor.layer_norm == 'max':
                cols.append(block.max(axis=1))
            else:
                cols.append(np.sqrt((block ** 2).sum(axis=1)))
        return np.stack(cols, axis=1)

    def quasinorm(self, p: Any) -> np.ndarray:
        """max_j ||p_j||^{1/j}."""
        arr = np.asarray(p)
        norms = self.layer_norms(arr)
        powers = 1.0 / np.arange(1, self.descriptor.step + 1)
        value = np.max(norms ** powers, axis=1)
        return value[0] if arr.ndim == 1 else value

    def quasidistance(self, p: Any, q: Any) -> np.ndarray:
        """d(p, q) = ||q^{-1} p||."""
        return self.quasinorm(self.multiply(self.inverse(q), p))

    def random_points(
        self,
        rng: np.random.Generator,
        count: int,
        radius: float = 1.0
    ) -> np.ndarray:
        """
        Uniform samples of the quasiball of ``radius`` about 0.

        For the max layer norm the quasiball is the coordinate box with
        layer-j half-side radius**j.
        """
        half = float(radius) ** self._weights.astype(float)
        return rng.uniform(-half, half, size=(count, self.dim))

    # ------------------------------------------------------------------
    # Carnot-Caratheodory distance
    # ------------------------------------------------------------------
    def _check_cc_kind(self):
        if self.descriptor.kind not in ('heisenberg', 'euclidean'):
            raise ValueError(
                f"CC distance estimates need a heisenberg or euclidean group, "
                f"got {self.descriptor.label}"
            )

    def cc_distance_bounds(self, p: Any, q: Any) -> Tuple[np.ndarray, np.ndarray]:
        """
        Closed-form interval for the CC distance, vectorized.

        Lower bound: max(horizontal distance, sqrt(pi |t| / 2)); a horizontal
        curve of length L from 0 to (h, t) closes with a chord into a loop of
        perimeter at most 2L, and the isoperimetric inequality bounds its
        area, hence |t|. Upper bound: the straight horizontal segment plus a
        square loop that supplies the missing vertical displacement.
        """
        self._check_cc_kind()
        w = np.asarray(self.multiply(self.inverse(q), p), dtype=float)
        single = w.ndim == 1
        w = np.atleast_2d(w)
        horizontal = np.linalg.norm(w[:, self._h], axis=1)
        if self.descriptor.kind == 'euclidean':
            lower = upper = horizontal
        else:
            t = np.abs(w[:, -1])
            lower = np.maximum(horizontal, np.sqrt(np.pi * t / 2.0))
            upper = horizontal + 2.0 * np.sqrt(2.0 * t)
        if single:
            return float(lower[0]), float(upper[0])
        return lower, upper

    def _path_upper(self, flat: np.ndarray, target_h: np.ndarray, target_t: float,
                    segments: int) -> float:
        """Length of the polyline through ``flat`` vertices plus loop closure."""
        hdim = target_h.shape[0]
        inner = flat.reshape(segments - 1, hdim)
        verts = np.vstack([np.zeros(hdim), inner, target_h])
        steps = np.diff(verts, axis=0)
        length = np.linalg.norm(steps, axis=1).sum()
        pts = np.zeros((segments, self.dim))
        inc = np.zeros((segments, self.dim))
        pts[:, self._h] = verts[:-1]
        inc[:, self._h] = steps
        vertical = self.bracket_half(pts, inc)[:, -1].sum()
        residual = abs(target_t - vertical)
        return float(length + 2.0 * np.sqrt(residual / _LOOP_GAIN) * 2.0)

    def _loop_start(self, target_h: np.ndarray, target_t: float,
                    segments: int) -> np.ndarray:
        """Regular polygon through 0 enclosing the needed area, plus drift."""
        hdim = target_h.shape[0]
        area = abs(target_t) / _LOOP_GAIN
        k = segments
        rho = np.sqrt(area / (0.5 * k * np.sin(2 * np.pi / k))) if area > 0 else 0.0
        theta = 2 * np.pi * np.arange(1, k) / k
        sign = -1.0 if target_t > 0 else 1.0
        verts = np.outer(np.arange(1, k) / k, target_h)
        verts[:, 0] += rho * (np.cos(theta) - 1.0)
        verts[:, 1] += sign * rho * np.sin(theta)
        return verts.ravel()

    def cc_distance_estimate(
        self,
        p: Any,
        q: Any,
        budget: int = 4,
        segments: int = 8,
        seed: int = 0
    ) -> Tuple[float, float]:
        """
        Interval (lower, upper) containing the CC distance between p and q.

        The upper bound is the length of an optimized piecewise-horizontal
        polyline from q to p. Each candidate is closed with a square loop that
        absorbs any vertical mismatch, so every iterate is an admissible path
        and the best value found is a valid bound. ``budget`` counts Powell
        refinement rounds; rounds restart from the best path so far, which
        makes the upper bound non-increasing in ``budget``.

        Args:
            p, q: Points (arrays of shape (dim,))
            budget: Number of refinement rounds (>= 1)
            segments: Polyline segment count
            seed: Seed for the multi-start perturbations

        Returns:
            (lower, upper)

        Raises:
            ValueError: If budget < 1

        Example:
            >>> G = CarnotGroup(GroupDescriptor.heisenberg(1))
            >>> lo, hi = G.cc_distance_estimate([0, 0, 0], [2, 0, 0])
            >>> lo == hi == 2.0
            True
        """
        if budget < 1:
            raise ValueError(f"budget must be >= 1, got {budget}")
        if segments < 4:
            raise ValueError(f"segments must be >= 4, got {segments}")
        lower, upper = self.cc_distance_bounds(np.asarray(p, dtype=float),
                                               np.asarray(q, dtype=float))
        if self.descriptor.kind == 'euclidean' or upper - lower <= 1e-15 * max(upper, 1.0):
            return lower, upper

        w = np.asarray(self.multiply(self.inverse(np.asarray(q, dtype=float)),
                                     np.asarray(p, dtype=float)), dtype=float)
        target_h = w[self._h]
        target_t = float(w[-1])

        def objective(x):
            return self._path_upper(x, target_h, target_t, segments)

        straight = np.outer(np.arange(1, segments) / segments, target_h).ravel()
        candidates = [straight, self._loop_start(target_h, target_t, segments)]
        best_x = min(candidates, key=objective)
        best = min(upper, objective(best_x))

        rng = make_rng(seed)
        scale = np.linalg.norm(target_h) + np.sqrt(abs(target_t))
        for round_index in range(budget):
            start = best_x
            if round_index > 0:
                jitter = 0.1 * scale * 0.5 ** round_index
                start = best_x + rng.normal(0.0, jitter, size=best_x.shape)
            res = spo.minimize(objective, start, method='Powell',
                               options={'maxiter': 40 * best_x.size, 'xtol': 1e-10,
                                        'ftol': 1e-12})
            if res.fun < best:
                best, best_x = float(res.fun), res.x
            logger.debug(f"cc round {round_index}: upper={best:.12g}")

        return lower, max(best, lower)

    # ------------------------------------------------------------------
    # audits
    # ------------------------------------------------------------------
    def quasi_triangle_constant(self, samples: int = 10_000, seed: int = 0) -> AuditReport:
        """
        Empirical maximum of d(p, r) / (d(p, q) + d(q, r)).

        Half of the middle points are drawn close to p at log-uniform scales
        so that the near-degenerate configurations which drive the maximum
        are represented at every sample size.
        """
        rng = make_rng(seed)
        p = self.random_points(rng, samples)
        r = self.random_points(rng, samples)
        q = self.random_points(rng, samples)
        near = rng.random(samples) < 0.5
        rho = 10.0 ** rng.uniform(-3, 0, size=samples)
        u = self.random_points(rng, samples)
        scaled = u * rho[:, None] ** self._weights.astype(float)
        q[near] = self.multiply(p[near], scaled[near])

        dpq = self.quasidistance(p, q)
        dqr = self.quasidistance(q, r)
        dpr = self.quasidistance(p, r)
        ratio = dpr / np.maximum(dpq + dqr, 1e-300)
        constant = float(ratio.max())
        return AuditReport(
            name='quasi_triangle',
            passed=bool(np.isfinite(constant)),
            metrics={'constant': constant, 'samples': samples,
                     'group': self.descriptor.label},
        )

    def comparability_band(self, samples: int = 10_000, seed: int = 0) -> AuditReport:
        """Band of upper/quasidistance and quasidistance/lower on the unit quasiball."""
        self._check_cc_kind()
        rng = make_rng(seed)
        p = self.random_points(rng, samples)
        q = self.random_points(rng, samples)
        d = self.quasidistance(p, q)
        lower, upper = self.cc_distance_bounds(p, q)
        keep = d > 1e-12
        up_ratio = upper[keep] / d[keep]
        low_ratio = d[keep] / lower[keep]
        metrics = {
            'upper_over_quasi_min': float(up_ratio.min()),
            'upper_over_quasi_max': float(up_ratio.max()),
            'quasi_over_lower_min': float(low_ratio.min()),
            'quasi_over_lower_max': float(low_ratio.max()),
            'samples': int(keep.sum()),
        }
        passed = all(np.isfinite(v) for v in metrics.values())
        return AuditReport(name='comparability', passed=passed, metrics=metrics)

    def haar_volume_check(
        self,
        g: Any,
        low: Sequence[float],
        high: Sequence[float],
        samples: int = 100_000,
        seed: int = 0
    ) -> AuditReport:
        """
        Compare the sampled volume of g * B with the flat volume of the box B.

        The translated box is enclosed in the bounding box of the images of
        the corners of B (left translation is affine in coordinates), and the
        fraction of uniform samples x with g^{-1} x in B estimates |g B|.
        """
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        g = np.asarray(g, dtype=float)
        corners = np.array(np.meshgrid(*zip(low, high), indexing='ij')).reshape(self.dim, -1).T
        images = self.multiply(np.broadcast_to(g, corners.shape), corners)
        lo, hi = images.min(axis=0), images.max(axis=0)

        rng = make_rng(seed)
        x = rng.uniform(lo, hi, size=(samples, self.dim))
        back = self.multiply(np.broadcast_to(self.inverse(g), x.shape), x)
        inside = np.all((back >= low) & (back <= high), axis=1)
        box_volume = float(np.prod(hi - lo))
        frac = inside.mean()
        estimate = box_volume * frac
        sigma = box_volume * np.sqrt(max(frac * (1 - frac), 1e-300) / samples)
        exact = float(np.prod(high - low))
        passed = abs(estimate - exact) <= 3 * sigma
        return AuditReport(
            name='haar_volume',
            passed=bool(passed),
            metrics={'estimate': estimate, 'sigma': sigma, 'exact': exact},
        )

    def property_table(self, samples: int = 10_000, seed: int = 0,
                       lambdas: Iterable[float] = (0.1, 0.5, 2.0, 10.0)) -> pd.DataFrame:
        """
        Relative residuals of the group axioms on random samples.

        Columns: property, max_relative_error.
        """
        rng = make_rng(seed)
        p, q, r = (self.random_points(rng, samples) for _ in range(3))
        scale = 1.0 + np.abs(p).max() + np.abs(q).max() + np.abs(r).max()

        def rel(a, b):
            return float(np.max(np.abs(a - b)) / scale)

        rows = [
            ('associativity', rel(self.multiply(self.multiply(p, q), r),
                                  self.multiply(p, self.multiply(q, r)))),
            ('identity', rel(self.multiply(np.zeros_like(p), p), p)),
            ('inverse', rel(self.multiply(p, self.inverse(p)), np.zeros_like(p))),
        ]
        for lam in lambdas:
            lhs = self.dilate(lam, self.multiply(p, q))
            rhs = self.multiply(self.dilate(lam, p), self.dilate(lam, q))
            norm = 1.0 + np.abs(lhs).max()
            rows.append((f'dilation_hom_{lam:g}', float(np.max(np.abs(lhs - rhs)) / norm)))
        return pd.DataFrame(rows, columns=['property', 'max_relative_error'])


@lru_cache(maxsize=None)
def group_for(descriptor: GroupDescriptor) -> CarnotGroup:
    """Shared ``CarnotGroup`` instance for a descriptor."""
    return CarnotGroup(descriptor)


def _common(p: GroupPoint, q: GroupPoint) -> GroupDescriptor:
    if p.descriptor != q.descriptor:
        raise DescriptorMismatchError(
            f"points live in different groups: {p.descriptor.label} vs {q.descriptor.label}"
        )
    return p.descriptor


def multiply(p: GroupPoint, q: GroupPoint) -> GroupPoint:
    """
    Group product of two points.

    Example:
        >>> H1 = GroupDescriptor.heisenberg(1)
        >>> multiply(H1.point(1, 0, 0), H1.point(0, 1, 0)).coords
        (1.0, 1.0, -1.0)
    """
    desc = _common(p, q)
    arr = group_for(desc).multiply(p.as_array(), q.as_array())
    return GroupPoint.from_array(arr, desc)


def inverse(p: GroupPoint) -> GroupPoint:
    """Group inverse."""
    return GroupPoint.from_array(group_for(p.descriptor).inverse(p.as_array()), p.descriptor)


def dilate(lam: Any, p: GroupPoint) -> GroupPoint:
    """Dilation delta_lam."""
    arr = group_for(p.descriptor).dilate(lam, p.as_array())
    return GroupPoint.from_array(arr, p.descriptor)


def quasidistance(p: GroupPoint, q: GroupPoint) -> float:
    """Quasidistance ||q^{-1} p||."""
    desc = _common(p, q)
    return float(group_for(desc).quasidistance(p.as_array(), q.as_array()))


def cc_distance_estimate(p: GroupPoint, q: GroupPoint, budget: int = 4,
                         seed: int = 0) -> Tuple[float, float]:
    """Interval estimate of the Carnot-Caratheodory distance."""
    desc = _common(p, q)
    return group_for(desc).cc_distance_estimate(
        p.as_array().astype(float), q.as_array().astype(float), budget=budget, seed=seed
    )
