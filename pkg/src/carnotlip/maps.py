"""
Lipschitz map handles.

A ``LipschitzMapHandle`` wraps a vectorized function between two group
descriptors together with a declared Lipschitz bound (in the quasidistance
sense) and an optional domain. Handles are stateless and picklable as long as
the wrapped function is, so they can be evaluated from joblib workers.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from .group import GroupDescriptor, GroupPoint, group_for
from .utils import as_points, make_rng

logger = logging.getLogger(__name__)


class DomainError(ValueError):
    """Raised when a map is evaluated outside its domain."""


ArrayMap = Callable[[np.ndarray], np.ndarray]
DomainMask = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LipschitzMapHandle:
    """
    Evaluatable map between two groups.

    Attributes:
        name: Registry name or description
        source: Source group
        target: Target group
        func: Vectorized map (N, source.dim) -> (N, target.dim)
        declared_lip: Declared Lipschitz bound (inf for test maps that are
            not Lipschitz)
        domain: Optional mask of admissible points
        domain_label: Description of the domain for reports
        params: Construction parameters, serialized into run configs
    """
    name: str
    source: GroupDescriptor
    target: GroupDescriptor
    func: ArrayMap = field(repr=False)
    declared_lip: float = 1.0
    domain: Optional[DomainMask] = field(default=None, repr=False)
    domain_label: str = 'everywhere'
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.declared_lip > 0:
            raise ValueError(f"declared_lip must be positive, got {self.declared_lip}")

    def evaluate(self, points: Any) -> np.ndarray:
        """
        Evaluate on a point array.

        Raises:
            DomainError: If any point lies outside the domain
            ValueError: If the map returns non-finite values
        """
        arr = np.asarray(points)
        single = arr.ndim == 1
        pts = as_points(arr, self.source.dim).astype(float)
        if self.domain is not None:
            inside = np.asarray(self.domain(pts), dtype=bool)
            if not inside.all():
                bad = int(np.flatnonzero(~inside)[0])
                raise DomainError(
                    f"{self.name}: point {pts[bad].tolist()} is outside {self.domain_label}"
                )
        out = np.asarray(self.func(pts), dtype=float).reshape(len(pts), self.target.dim)
        if not np.all(np.isfinite(out)):
            raise ValueError(f"{self.name} returned non-finite values")
        return out[0] if single else out

    def __call__(self, p: GroupPoint) -> GroupPoint:
        if p.descriptor != self.source:
            raise ValueError(f"{self.name} expects {self.source.label} points")
        return GroupPoint.from_array(self.evaluate(p.as_array().astype(float)), self.target)

    def with_domain(self, mask: DomainMask, label: str) -> 'LipschitzMapHandle':
        return LipschitzMapHandle(self.name, self.source, self.target, self.func,
                                  self.declared_lip, mask, label, dict(self.params))

    def lipschitz_ratios(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """d(F p, F q) / d(p, q) for paired samples (pairs at distance 0 dropped)."""
        gs, gt = group_for(self.source), group_for(self.target)
        d_src = gs.quasidistance(p, q)
        keep = d_src > 0
        d_tgt = gt.quasidistance(self.evaluate(p[keep]), self.evaluate(q[keep]))
        return d_tgt / d_src[keep]

    def lipschitz_audit(self, samples: int = 10_000, radius: float = 1.0,
                        seed: int = 0, tolerance: float = 0.05) -> Dict[str, Any]:
        """Sampled Lipschitz ratios against the declared bound."""
        rng = make_rng(seed, 20)
        gs = group_for(self.source)
        p = gs.random_points(rng, samples, radius)
        q = gs.random_points(rng, samples, radius)
        ratios = self.lipschitz_ratios(p, q)
        worst = float(ratios.max()) if len(ratios) else 0.0
        return {'map': self.name, 'max_ratio': worst, 'declared_lip': self.declared_lip,
                'within_bound': bool(worst <= self.declared_lip * (1 + tolerance))}


# ----------------------------------------------------------------------
# built-in maps
# ----------------------------------------------------------------------
def identity(desc: GroupDescriptor) -> LipschitzMapHandle:
    return LipschitzMapHandle('identity', desc, desc, _identity_func, 1.0)


def _identity_func(p: np.ndarray) -> np.ndarray:
    return p.copy()


def constant(source: GroupDescriptor, value: Optional[Sequence[float]] = None,
             target: Optional[GroupDescriptor] = None) -> LipschitzMapHandle:
    """Map sending every point to ``value`` (the identity by default)."""
    target = target or source
    point = np.zeros(target.dim) if value is None else np.asarray(value, dtype=float)
    if point.shape != (target.dim,):
        raise ValueError(f"constant value must have {target.dim} coordinates")

    def func(p: np.ndarray) -> np.ndarray:
        return np.broadcast_to(point, (len(p), target.dim)).copy()

    # any positive number bounds the Lipschitz constant of a constant map
    return LipschitzMapHandle('constant', source, target, func, 1.0,
                              params={'value': point.tolist()})


def dilation(desc: GroupDescriptor, lam: float) -> LipschitzMapHandle:
    """delta_lam, which is lam-Lipschitz for the quasidistance."""
    if not lam > 0:
        raise ValueError(f"Dilation factor must be positive, got {lam}")
    G = group_for(desc)

    def func(p: np.ndarray) -> np.ndarray:
        return G.dilate(lam, p)

    return LipschitzMapHandle(f'dilation({lam:g})', desc, desc, func, float(lam),
                              params={'lambda': lam})


def conjugation(desc: GroupDescriptor) -> LipschitzMapHandle:
    """
    Complex conjugation on H_n: (x, y, t) -> (x, -y, -t) in every complex
    coordinate. An isometric automorphism.
    """
    if desc.kind != 'heisenberg':
        raise ValueError(f"conjugation needs a heisenberg group, got {desc.label}")
    signs = np.ones(desc.dim)
    signs[1:2 * desc.n:2] = -1.0
    signs[-1] = -1.0

    def func(p: np.ndarray) -> np.ndarray:
        return p * signs

    return LipschitzMapHandle('conj-automorphism', desc, desc, func, 1.0)


def horizontal_projection(desc: GroupDescriptor) -> LipschitzMapHandle:
    """pi: H_n -> R^{2n}, (z, t) -> z. 1-Lipschitz for the max layer norm."""
    if desc.kind != 'heisenberg':
        raise ValueError(f"horizontal projection needs a heisenberg group, got {desc.label}")
    target = GroupDescriptor.euclidean(desc.horizontal_dim, layer_norm=desc.layer_norm)
    h = desc.layer_slices[0]

    def func(p: np.ndarray) -> np.ndarray:
        return p[:, h].copy()

    lip = 1.0 if desc.layer_norm == 'max' else float(np.sqrt(desc.horizontal_dim))
    return LipschitzMapHandle('horizontal-projection', desc, target, func, lip)


def linear_homomorphism(
    source: GroupDescriptor,
    target: GroupDescriptor,
    psi: np.ndarray,
    vertical: Optional[np.ndarray] = None,
    declared_lip: Optional[float] = None,
    name: str = 'homomorphism'
) -> LipschitzMapHandle:
    """
    Graded linear map: horizontal block ``psi`` and vertical block ``vertical``.

    For step-2 source and target this is a homomorphism exactly when the
    vertical block intertwines the brackets; ``pansu.extend_horizontal``
    builds such blocks. Without a declared bound the sup-norm operator norms
    of the blocks are used.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (target.horizontal_dim, source.horizontal_dim):
        raise ValueError(
            f"psi must have shape {(target.horizontal_dim, source.horizontal_dim)}, "
            f"got {psi.shape}"
        )
    hs, ht = source.layer_slices[0], target.layer_slices[0]
    vs = source.layer_slices[1] if source.step == 2 else None
    vt = target.layer_slices[1] if target.step == 2 else None
    if vertical is not None:
        vertical = np.asarray(vertical, dtype=float)

    def func(p: np.ndarray) -> np.ndarray:
        out = np.zeros((len(p), target.dim))
        out[:, ht] = p[:, hs] @ psi.T
        if vt is not None and vs is not None and vertical is not None:
            out[:, vt] = p[:, vs] @ vertical.T
        return out

    if declared_lip is None:
        op = float(np.abs(psi).sum(axis=1).max()) if psi.size else 0.0
        vop = float(np.abs(vertical).sum(axis=1).max()) if vertical is not None and vertical.size else 0.0
        declared_lip = max(op, np.sqrt(vop), 1e-12)
    return LipschitzMapHandle(name, source, target, func, float(declared_lip),
                              params={'psi': psi.tolist(),
                                      'vertical': None if vertical is None else vertical.tolist()})


def oscillating(desc: GroupDescriptor) -> LipschitzMapHandle:
    """
    p -> x_1 sin(log |x_1|) into R^1: Lipschitz, with difference quotients at
    x_1 = 0 that keep oscillating as the step shrinks.
    """
    target = GroupDescriptor.euclidean(1)

    def func(p: np.ndarray) -> np.ndarray:
        x = p[:, 0]
        out = np.zeros(len(p))
        nz = x != 0
        out[nz] = x[nz] * np.sin(np.log(np.abs(x[nz])))
        return out.reshape(-1, 1)

    return LipschitzMapHandle('oscillating', desc, target, func, float(np.sqrt(2.0)))


def piecewise_constant(
    mesh: Any,
    alpha: int,
    values: Mapping[Any, Sequence[float]],
    target: Optional[GroupDescriptor] = None,
    default: Optional[Sequence[float]] = None
) -> LipschitzMapHandle:
    """
    Test map that is constant on every scale-alpha cube of ``mesh``.

    Args:
        mesh: DyadicMesh of the source
        alpha: Cube scale
        values: {CubeAddress: target point}
        target: Target group (source group by default)
        default: Value on cubes missing from ``values`` (identity by default)

    Not Lipschitz; the declared bound is infinite.
    """
    target = target or mesh.descriptor
    fallback = np.zeros(target.dim) if default is None else np.asarray(default, dtype=float)
    table = {tuple(c.index): np.asarray(v, dtype=float) for c, v in values.items()}

    def func(p: np.ndarray) -> np.ndarray:
        idx = mesh.addresses(p, alpha)
        return np.array([table.get(tuple(int(v) for v in row), fallback) for row in idx])

    return LipschitzMapHandle('piecewise-constant', mesh.descriptor, target, func,
                              float('inf'), params={'alpha': alpha, 'cubes': len(table)})


MAP_NAMES = ('identity', 'constant', 'dilation', 'conj-automorphism',
             'horizontal-projection', 'homomorphism', 'cantor')


def named_map(name: str, desc: GroupDescriptor, **params: Any) -> LipschitzMapHandle:
    """
    Look up a built-in map by name.

    Args:
        name: One of MAP_NAMES
        desc: Source group
        **params: ``lam`` for dilation, ``psi`` for homomorphism,
            ``epsilon`` for cantor

    Raises:
        ValueError: For unknown names
    """
    if name == 'identity':
        return identity(desc)
    if name == 'constant':
        return constant(desc)
    if name == 'dilation':
        return dilation(desc, float(params.get('lam', 2.0)))
    if name == 'conj-automorphism':
        return conjugation(desc)
    if name == 'horizontal-projection':
        return horizontal_projection(desc)
    if name == 'homomorphism':
        from .pansu import extend_horizontal
        psi = np.asarray(params.get('psi', np.eye(desc.horizontal_dim)), dtype=float)
        result = extend_horizontal(psi, desc, desc)
        if result.handle is None:
            raise ValueError(f"psi does not extend to a homomorphism: {result.reason}")
        return result.handle
    if name == 'cantor':
        from .cantor import CantorParams, cantor_map_handle
        return cantor_map_handle(CantorParams.from_epsilon(float(params.get('epsilon', 0.5))))
    raise ValueError(f"Unknown map '{name}'. Valid names: {', '.join(MAP_NAMES)}")
