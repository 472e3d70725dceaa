"""
Haar pairs on the dyadic mesh.

A Haar pair f_{Q,Q'} is +1 on Q, -1 on its sibling Q' and 0 elsewhere. The
spans C_beta (untranslated mesh) and C'_beta (translated families) are
represented by their spanning sets of pairs; inner products are Monte Carlo
estimates against Haar measure, and supports are compared exactly through
lattice addresses.

A *field* is any callable mapping an (N, dim) point array to an (N,) or
(N, m) array of values.
"""

import itertools
import logging
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .dyadic import CubeAddress, DyadicMesh, ScaleError
from .group import GroupPoint
from .utils import make_rng, parallel_map

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HaarPair:
    """
    Two distinct sibling cubes at a common scale beta.

    Use ``make_pair`` to build one with the sibling check.
    """
    plus_cube: CubeAddress
    minus_cube: CubeAddress

    @property
    def scale(self) -> int:
        return self.plus_cube.scale

    def key(self) -> str:
        return f"{self.plus_cube.key()}|{self.minus_cube.key()}"


@dataclass(frozen=True)
class WaveletIndex:
    """Scale and translate-family index of a spanning set S_beta."""
    beta: int
    family: int = 0

    def __post_init__(self):
        if self.beta < 1:
            raise ScaleError(f"Haar pairs need beta >= 1, got {self.beta}")
        if self.family < 0:
            raise ValueError(f"family must be >= 0, got {self.family}")


def make_pair(mesh: DyadicMesh, plus_cube: CubeAddress, minus_cube: CubeAddress) -> HaarPair:
    """
    Build a Haar pair, checking that the cubes are distinct siblings.

    Raises:
        ValueError: If the cubes coincide, differ in scale or family, or have
            different parents
    """
    if plus_cube == minus_cube:
        raise ValueError(f"Haar pair needs distinct cubes, got {plus_cube.key()} twice")
    if plus_cube.scale != minus_cube.scale or plus_cube.family != minus_cube.family:
        raise ValueError("Haar pair cubes must share scale and family")
    if mesh.parent(plus_cube) != mesh.parent(minus_cube):
        raise ValueError(f"{plus_cube.key()} and {minus_cube.key()} are not siblings")
    return HaarPair(plus_cube, minus_cube)


def sibling_pairs(mesh: DyadicMesh, parent: CubeAddress,
                  limit: Optional[int] = None) -> List[HaarPair]:
    """Haar pairs among the children of ``parent`` in lexicographic order."""
    kids = mesh.children(parent)
    pairs: Iterator[Tuple[CubeAddress, CubeAddress]] = itertools.combinations(kids, 2)
    if limit is not None:
        pairs = itertools.islice(pairs, limit)
    return [HaarPair(a, b) for a, b in pairs]


def random_sibling_pair(mesh: DyadicMesh, parent: CubeAddress,
                        rng: np.random.Generator) -> HaarPair:
    kids = mesh.children(parent)
    i, j = rng.choice(len(kids), size=2, replace=False)
    return HaarPair(kids[int(i)], kids[int(j)])


def _point_array(mesh: DyadicMesh, p) -> np.ndarray:
    if isinstance(p, GroupPoint):
        return p.as_array().astype(float)
    return np.asarray(p, dtype=float)


def eval_haar(mesh: DyadicMesh, h: HaarPair, p) -> np.ndarray:
    """
    Value of f_{Q,Q'} at p (a GroupPoint or an (N, dim) array).

    Returns:
        Integer array of values in {-1, 0, 1}; a 0-d array for a single point
    """
    pts = _point_array(mesh, p)
    single = pts.ndim == 1
    plus = mesh.contains(h.plus_cube, pts)
    minus = mesh.contains(h.minus_cube, pts)
    values = plus.astype(np.int64) - minus.astype(np.int64)
    return values[0] if single else values


def haar_field(mesh: DyadicMesh, h: HaarPair) -> Field:
    """The pair as a field callable."""
    def field(points: np.ndarray) -> np.ndarray:
        return eval_haar(mesh, h, np.atleast_2d(points)).astype(float)
    return field


def constant_field(value: float) -> Field:
    def field(points: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(points)), float(value))
    return field


def _evaluate(field: Field, points: np.ndarray) -> np.ndarray:
    values = np.asarray(field(points), dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("field returned non-finite values")
    return values


def cube_volume(mesh: DyadicMesh, alpha: int) -> float:
    """Haar volume of a scale-alpha cube, with |Q(0,0)| = 1."""
    return float(mesh.E) ** (-mesh.descriptor.homogeneous_dimension * alpha)


def inner_product(
    mesh: DyadicMesh,
    f: Field,
    g: Field,
    region: CubeAddress,
    samples: int = 100_000,
    seed: int = 0
) -> Tuple[float, float]:
    """
    Monte Carlo estimate of the Haar integral of f g over a cube.

    Args:
        mesh: Dyadic mesh
        f, g: Fields
        region: Integration cube
        samples: Uniform samples drawn in the cube
        seed: Root seed

    Returns:
        (estimate, one-sigma error)

    Raises:
        ValueError: If either field returns non-finite values

    Example:
        >>> mesh = DyadicMesh(GroupDescriptor.heisenberg(1))
        >>> inner_product(mesh, constant_field(0), constant_field(1), mesh.base_cube())
        (0.0, 0.0)
    """
    rng = make_rng(seed, 10, region.scale)
    pts = mesh.sample_cube(region, samples, rng)
    prod = _evaluate(f, pts) * _evaluate(g, pts)
    vol = cube_volume(mesh, region.scale)
    value = vol * float(prod.mean())
    sigma = vol * float(prod.std(ddof=1)) / np.sqrt(len(prod)) if len(prod) > 1 else 0.0
    return value, sigma


def haar_inner_product(
    mesh: DyadicMesh,
    field: Field,
    h: HaarPair,
    samples: int = 4096,
    seed: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    <field, f_{Q,Q'}> by stratified sampling of Q and Q'.

    Returns:
        (estimate, one-sigma error), each with the field's value shape
    """
    rng = make_rng(seed, 11)
    half = max(samples // 2, 2)
    vol = cube_volume(mesh, h.scale)
    plus = _evaluate(field, mesh.sample_cube(h.plus_cube, half, rng))
    minus = _evaluate(field, mesh.sample_cube(h.minus_cube, half, rng))
    value = vol * (plus.mean(axis=0) - minus.mean(axis=0))
    var = plus.var(axis=0, ddof=1) / half + minus.var(axis=0, ddof=1) / half
    return value, vol * np.sqrt(var)


def coefficient_ratio(
    mesh: DyadicMesh,
    field: Field,
    h: HaarPair,
    samples: int = 4096,
    seed: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    |<field, f>| / <f, f> for a Haar pair f, with propagated error.

    Coefficients are normalised by <f, f> = |Q| + |Q'| = 2 |Q| in closed
    form, so the ratio is half the difference of the field's means over Q
    and Q'. Then c f has ratio |c|, while the indicator of Q alone has
    ratio 1/2.

    Raises:
        ValueError: If the denominator vanishes
    """
    denom = 2.0 * cube_volume(mesh, h.scale)
    if denom <= 0.0:
        raise ValueError(f"pair {h.key()} has a vanishing norm")
    value, sigma = haar_inner_product(mesh, field, h, samples, seed)
    return np.abs(value) / denom, sigma / denom


def coefficient_table(
    mesh: DyadicMesh,
    fields: Dict[Tuple[int, int], Field],
    pairs: Sequence[HaarPair],
    samples: int = 4096,
    seed: int = 0,
    family: int = 0,
    workers: int = 1
) -> pd.DataFrame:
    """
    Coefficient ratios of matrix-entry fields against Haar pairs.

    Args:
        fields: {(i, j): field} for the entries of a matrix-valued map
        pairs: Haar pairs
        family: Family index written into the table

    Returns:
        DataFrame with columns beta, family, plus, minus, i, j, ratio, sigma
    """
    def row(item):
        index, pair = item
        out = []
        for (i, j), field in sorted(fields.items()):
            ratio, sigma = coefficient_ratio(mesh, field, pair, samples, seed + index)
            out.append({'beta': pair.scale, 'family': family,
                        'plus': pair.plus_cube.key(), 'minus': pair.minus_cube.key(),
                        'i': i, 'j': j, 'ratio': float(ratio), 'sigma': float(sigma)})
        return out

    rows = parallel_map(row, list(enumerate(pairs)), workers)
    columns = ['beta', 'family', 'plus', 'minus', 'i', 'j', 'ratio', 'sigma']
    return pd.DataFrame([r for chunk in rows for r in chunk], columns=columns)


# ----------------------------------------------------------------------
# support arithmetic
# ----------------------------------------------------------------------
def _unit_scale(*cubes: CubeAddress) -> int:
    return max(max(c.scale for c in cubes),
               max((c.translate_scale for c in cubes if c.is_translated), default=0))


def windows_overlap(mesh: DyadicMesh, a: CubeAddress, b: CubeAddress) -> bool:
    """
    True iff the windows of two equal-scale cubes overlap in positive measure.

    Exact: the anchors are integer lattice coordinates and the overlap
    condition is linear in the window variable, so it is decided at the
    corners of the horizontal window.
    """
    if a.scale != b.scale:
        raise ScaleError(f"overlap test needs equal scales, got {a.scale} and {b.scale}")
    unit = _unit_scale(a, b)
    xa = mesh.anchor_index(a, unit)
    xb = mesh.anchor_index(b, unit)
    E = mesh.E
    half = [Fraction(E ** (int(w) * (unit - a.scale)), 2) for w in mesh.weights]

    h_idx = range(mesh.descriptor.horizontal_dim)
    gh = [xa[i] - xb[i] for i in h_idx]
    if any(abs(gh[i]) >= 2 * half[i] for i in h_idx):
        return False
    if mesh.descriptor.step == 1:
        return True

    # g = b^{-1} a, and w ranges over the window box
    gv: Dict[int, Fraction] = {}
    coef: Dict[int, Dict[int, Fraction]] = {}
    for k in range(mesh.descriptor.horizontal_dim, mesh.dim):
        gv[k] = Fraction(xa[k] - xb[k])
        coef[k] = {}
    for i, j, k, c in mesh.int_brackets:
        gv[k] += c * (-xb[i] * xa[j] + xb[j] * xa[i])
        coef[k][j] = coef[k].get(j, 0) + c * gh[i]
        coef[k][i] = coef[k].get(i, 0) - c * gh[j]

    for k in gv:
        lo_w = [max(-half[i], -half[i] - gh[i]) for i in h_idx]
        hi_w = [min(half[i], half[i] - gh[i]) for i in h_idx]
        low = gv[k] + sum(min(coef[k].get(i, 0) * lo_w[i], coef[k].get(i, 0) * hi_w[i])
                          for i in h_idx)
        high = gv[k] + sum(max(coef[k].get(i, 0) * lo_w[i], coef[k].get(i, 0) * hi_w[i])
                           for i in h_idx)
        if not (high > -2 * half[k] and low < 2 * half[k]):
            return False
    return True


def overlapping_cubes(mesh: DyadicMesh, cube: CubeAddress,
                      family: CubeAddress) -> List[CubeAddress]:
    """Cubes of ``family`` at the same scale whose windows overlap ``cube``'s window."""
    unit = _unit_scale(cube, family)
    anchor = np.array(mesh.anchor_index(cube, unit), dtype=float)
    anchor = anchor * mesh.spacing(unit)
    local = mesh._frame(anchor, family.translate, family.translate_scale)
    start = mesh.window_indices(local, cube.scale)[0]
    axes = [np.arange(-1, 2) if w == 1 else np.arange(-3, 4) for w in mesh.weights]
    steps = np.array(np.meshgrid(*axes, indexing='ij')).reshape(mesh.dim, -1).T
    base = np.broadcast_to(start, steps.shape)
    cand = base + steps
    if mesh.descriptor.step == 2:
        cand = cand + mesh.int_bracket(base, steps)
    out = []
    for row in cand:
        other = CubeAddress(cube.scale, tuple(int(v) for v in row),
                            family.translate, family.translate_scale)
        if windows_overlap(mesh, cube, other):
            out.append(other)
    return sorted(set(out))


def overlap_count(mesh: DyadicMesh, pair: HaarPair, family: CubeAddress) -> int:
    """
    Number of Haar pairs of ``family`` at the pair's scale whose support meets
    the support of ``pair``.

    A parent with o of its m children meeting the support contributes
    C(m, 2) - C(m - o, 2) pairs.
    """
    touched: Dict[CubeAddress, set] = {}
    for cube in (pair.plus_cube, pair.minus_cube):
        for other in overlapping_cubes(mesh, cube, family):
            touched.setdefault(mesh.parent(other), set()).add(other)
    m = len(mesh.child_offsets())
    return int(sum(comb(m, 2) - comb(m - len(kids), 2) for kids in touched.values()))


def orthogonality_profile(
    mesh: DyadicMesh,
    beta: int,
    families: Optional[Sequence[CubeAddress]] = None,
    probes: int = 4,
    seed: int = 0
) -> int:
    """
    Approximate-orthogonality constant K of S_beta over the given families.

    K is the largest number of pairs g in S_beta with overlapping support
    (hence possibly nonzero <f, g>), over probe pairs f of the untranslated
    family near the origin.

    Args:
        mesh: Dyadic mesh
        beta: Scale (>= 1)
        families: Family representatives (default: the untranslated family)
        probes: Number of probe pairs f
        seed: Seed for probe selection

    Returns:
        K
    """
    table = orthogonality_table(mesh, beta, families, probes, seed)
    K = int(table.groupby('probe')['count'].sum().max())
    logger.info(f"orthogonality profile at beta={beta}: K={K}")
    return K


def orthogonality_table(
    mesh: DyadicMesh,
    beta: int,
    families: Optional[Sequence[CubeAddress]] = None,
    probes: int = 4,
    seed: int = 0
) -> pd.DataFrame:
    """Per-probe, per-family overlap counts behind ``orthogonality_profile``."""
    if beta < 1:
        raise ScaleError(f"orthogonality profile needs beta >= 1, got {beta}")
    if families is None:
        families = [CubeAddress(beta, tuple([0] * mesh.dim))]
    rng = make_rng(seed, 12)
    parent = CubeAddress(beta - 1, tuple([0] * mesh.dim))
    probe_pairs = [random_sibling_pair(mesh, parent, rng) for _ in range(probes)]

    rows = []
    for p_index, pair in enumerate(probe_pairs):
        for f_index, family in enumerate(families):
            rep = CubeAddress(beta, family.index, family.translate,
                              beta + 2 if family.is_translated else 0)
            rows.append({'probe': p_index, 'family': f_index, 'pair': pair.key(),
                         'count': overlap_count(mesh, pair, rep)})
    return pd.DataFrame(rows, columns=['probe', 'family', 'pair', 'count'])
