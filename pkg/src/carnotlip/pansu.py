"""
Numerical Pansu differentials.

For a map F between graded groups the Pansu difference quotient at g in
direction g' is

    delta_{1/s} [ F(g)^{-1} F(g delta_s g') ],

and the Pansu differential is its limit as s -> 0 when it exists. This module
evaluates the quotient along a step schedule, classifies the sequence as
converged, diverged or oscillating, and builds the horizontal matrix MF from
the limits along horizontal basis directions.

It also extends horizontal linear maps to graded homomorphisms and provides a
harness for the uniqueness of homomorphisms with equal differential.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .group import GroupDescriptor, GroupPoint, group_for
from .maps import LipschitzMapHandle, linear_homomorphism
from .reports import AuditReport
from .utils import DEFAULT_STEPS, PANSU_TOLERANCE, as_points, make_rng

logger = logging.getLogger(__name__)


VERDICTS = ('converged', 'diverged', 'oscillating')

# Rounding floor of a layer-j quotient is about eps / s^j
_ROUNDING_FLOOR = 64 * np.finfo(float).eps


@dataclass
class LimitEstimate:
    """
    Difference quotients of one Pansu limit.

    Attributes:
        direction: g'
        steps: Step sizes s (decreasing)
        quotients: Quotient at every step, shape (len(steps), target dim)
        residuals: Per-layer successive differences, shape (len(steps) - 1, step)
        limit: Extrapolated limit if converged, else the last quotient
        verdict: converged | diverged | oscillating
    """
    direction: np.ndarray
    steps: np.ndarray
    quotients: np.ndarray
    residuals: np.ndarray
    limit: np.ndarray
    verdict: str

    @property
    def converged(self) -> bool:
        return self.verdict == 'converged'

    def convergence_order(self) -> float:
        """Slope of log(max residual) against log(s); nan when residuals vanish."""
        res = self.residuals.max(axis=1)
        keep = res > 0
        if keep.sum() < 2:
            return float('nan')
        s = self.steps[1:][keep]
        return float(np.polyfit(np.log(s), np.log(res[keep]), 1)[0])

    def to_dict(self) -> Dict[str, Any]:
        return {'direction': self.direction.tolist(), 'steps': self.steps.tolist(),
                'limit': self.limit.tolist(), 'residuals': self.residuals.tolist(),
                'verdict': self.verdict}


@dataclass
class DifferentialEstimate:
    """
    Horizontal matrix MF(g) with its convergence diagnostics.

    ``matrix`` has shape (target horizontal dim, source horizontal dim);
    column i is the horizontal part of the Pansu limit along e_i.
    """
    point: np.ndarray
    matrix: np.ndarray
    columns: List[LimitEstimate] = field(default_factory=list)
    verdict: str = 'converged'
    declared_lip: float = float('inf')

    @property
    def residuals(self) -> np.ndarray:
        return np.stack([c.residuals.max(axis=1) for c in self.columns], axis=1)

    @property
    def entry_ratio(self) -> float:
        """max |MF entry| / declared Lipschitz bound."""
        if not np.isfinite(self.declared_lip) or self.declared_lip <= 0:
            return float('nan')
        return float(np.abs(self.matrix).max() / self.declared_lip) if self.matrix.size else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {'point': self.point.tolist(), 'matrix': self.matrix.tolist(),
                'residuals': self.residuals.tolist(), 'verdict': self.verdict}


def _quotients(F: LipschitzMapHandle, g: np.ndarray, direction: np.ndarray,
               steps: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    Gs, Gt = group_for(F.source), group_for(F.target)
    moved = np.stack([Gs.multiply(g, Gs.dilate(s, direction)) for s in steps])
    base = F.evaluate(g)
    images = F.evaluate(moved)
    diff = Gt.multiply(np.broadcast_to(Gt.inverse(base), images.shape), images)
    quotients = np.stack([Gt.dilate(1.0 / s, row) for s, row in zip(steps, diff)])
    return quotients, base


def _classify(residuals: np.ndarray, floors: np.ndarray, quotients: np.ndarray,
              tol: float) -> str:
    last_ok = np.all(residuals[-1] <= tol + floors[-1])
    if last_ok:
        return 'converged'
    sizes = np.abs(quotients).max(axis=1)
    if sizes[-1] > 10.0 * max(sizes[0], 1.0) and np.all(np.diff(sizes[-3:]) > 0):
        return 'diverged'
    return 'oscillating'


def _extrapolate(steps: np.ndarray, quotients: np.ndarray, settled: np.ndarray) -> np.ndarray:
    """Limit of one layer from the steps whose rounding floor is below tolerance."""
    idx = np.flatnonzero(settled)
    if len(idx) == 0:
        return quotients[0]
    if len(idx) < 3:
        return quotients[idx[-1]]
    tail_s, tail_q = steps[idx[-3:]], quotients[idx[-3:]]
    limit = np.polyfit(tail_s / tail_s[-1], tail_q, 2)[-1]
    # keep the last settled quotient where the fit only amplifies rounding noise
    noisy = np.abs(limit - tail_q[-1]) > np.abs(tail_q[-1] - tail_q[-2]) + 1e-300
    return np.where(noisy, tail_q[-1], limit)


def pansu_limit(
    F: LipschitzMapHandle,
    g: Any,
    direction: Any,
    steps: Sequence[float] = DEFAULT_STEPS,
    tol: float = PANSU_TOLERANCE
) -> LimitEstimate:
    """
    Pansu difference quotients of F at g along a direction.

    Residuals are measured layer by layer relative to the quotient size; a
    layer-j residual below ``tol`` plus the rounding floor eps / s^j counts as
    settled. Converged sequences are extrapolated to s = 0 layer by layer with a
    quadratic fit through the last three steps whose rounding floor is below
    ``tol``; with fewer such steps the last of them is returned.

    Args:
        F: Map handle
        g: Base point (array or GroupPoint)
        direction: g' != 0
        steps: Decreasing step sizes (at least three)
        tol: Relative tolerance

    Returns:
        LimitEstimate (non-convergence is reported, not raised)

    Raises:
        ValueError: If the direction is 0 or fewer than three steps are given
        DomainError: If F is evaluated outside its domain

    Example:
        >>> H1 = GroupDescriptor.heisenberg(1)
        >>> est = pansu_limit(dilation(H1, 2.0), [0, 0, 0], [1, 0, 0])
        >>> est.verdict, np.allclose(est.limit, [2, 0, 0])
        ('converged', True)
    """
    g = g.as_array().astype(float) if isinstance(g, GroupPoint) else np.asarray(g, dtype=float)
    direction = (direction.as_array().astype(float) if isinstance(direction, GroupPoint)
                 else np.asarray(direction, dtype=float))
    if not np.any(direction):
        raise ValueError("Pansu limits need a nonzero direction")
    steps = np.asarray(steps, dtype=float)
    if len(steps) < 3:
        raise ValueError(f"need at least three steps, got {len(steps)}")
    if np.any(steps <= 0) or np.any(np.diff(steps) >= 0):
        raise ValueError("steps must be positive and strictly decreasing")

    quotients, base = _quotients(F, g, direction, steps)
    scale = 1.0 + np.abs(quotients).max()
    slices = F.target.layer_slices
    residuals = np.zeros((len(steps) - 1, len(slices)))
    floors = np.zeros_like(residuals)
    size = 1.0 + np.abs(base).max() + np.abs(g).max()
    for j, sl in enumerate(slices):
        delta = np.abs(np.diff(quotients[:, sl], axis=0)).max(axis=1)
        residuals[:, j] = delta / scale
        floors[:, j] = _ROUNDING_FLOOR * size ** (j + 1) / steps[1:] ** (j + 1) / scale

    verdict = _classify(residuals, floors, quotients, tol)
    if verdict == 'converged':
        limit = np.empty(quotients.shape[1])
        for j, sl in enumerate(slices):
            step_floor = _ROUNDING_FLOOR * size ** (j + 1) / steps ** (j + 1) / scale
            limit[sl] = _extrapolate(steps, quotients[:, sl], step_floor < tol)
    else:
        limit = quotients[-1]
        logger.warning(f"{F.name}: Pansu quotients at {g.tolist()} along "
                       f"{direction.tolist()} are {verdict}")
    return LimitEstimate(direction, steps, quotients, residuals, np.asarray(limit), verdict)


def horizontal_matrix(
    F: LipschitzMapHandle,
    g: Any,
    steps: Sequence[float] = DEFAULT_STEPS,
    tol: float = PANSU_TOLERANCE
) -> DifferentialEstimate:
    """
    MF(g): horizontal parts of the Pansu limits along the horizontal basis.

    Example:
        >>> H1 = GroupDescriptor.heisenberg(1)
        >>> mf = horizontal_matrix(conjugation(H1), [0.3, 0.1, 0.2]).matrix
        >>> np.allclose(mf, [[1, 0], [0, -1]])
        True
    """
    g = g.as_array().astype(float) if isinstance(g, GroupPoint) else np.asarray(g, dtype=float)
    ns, nt = F.source.horizontal_dim, F.target.horizontal_dim
    ht = F.target.layer_slices[0]
    columns = []
    matrix = np.zeros((nt, ns))
    for i in range(ns):
        e = np.zeros(F.source.dim)
        e[i] = 1.0
        est = pansu_limit(F, g, e, steps, tol)
        columns.append(est)
        matrix[:, i] = est.limit[ht]
    if all(c.converged for c in columns):
        verdict = 'converged'
    elif any(c.verdict == 'diverged' for c in columns):
        verdict = 'diverged'
    else:
        verdict = 'oscillating'
    return DifferentialEstimate(g, matrix, columns, verdict, F.declared_lip)


def horizontal_field(F: LipschitzMapHandle, points: np.ndarray,
                     step: float = 1e-6) -> np.ndarray:
    """
    Vectorized first-order MF at many points, shape (N, nt, ns).

    Uses the horizontal difference (F_h(g delta_s e_i) - F_h(g)) / s.
    """
    pts = as_points(points, F.source.dim).astype(float)
    Gs = group_for(F.source)
    ht = F.target.layer_slices[0]
    base = F.evaluate(pts)[:, ht]
    ns, nt = F.source.horizontal_dim, F.target.horizontal_dim
    out = np.zeros((len(pts), nt, ns))
    for i in range(ns):
        e = np.zeros(F.source.dim)
        e[i] = step
        moved = Gs.multiply(pts, np.broadcast_to(e, pts.shape))
        out[:, :, i] = (F.evaluate(moved)[:, ht] - base) / step
    return out


# ----------------------------------------------------------------------
# homomorphisms
# ----------------------------------------------------------------------
@dataclass
class ExtensionResult:
    """
    Outcome of extending a horizontal linear map.

    Attributes:
        handle: The homomorphism, or None if psi does not extend
        vertical_factor: Scalar c with phi(0, t) = (0, c t) (None without a
            vertical layer on both sides)
        witness: Source basis pair (i, j) violating the bracket condition
        violation: Size of that violation
        reason: Human-readable verdict
    """
    handle: Optional[LipschitzMapHandle]
    vertical_factor: Optional[float] = None
    witness: Optional[Tuple[int, int]] = None
    violation: float = 0.0
    reason: str = 'extendable'

    @property
    def extendable(self) -> bool:
        return self.handle is not None


def symplectic_matrix(desc: GroupDescriptor) -> np.ndarray:
    """omega(u, v) = u^T J v with [u, v] = -2 omega(u, v) T on H_n."""
    n = desc.horizontal_dim
    J = np.zeros((n, n))
    for i, j, k, c in desc.structure_constants:
        J[i, j] = -float(c) / 2.0
        J[j, i] = float(c) / 2.0
    return J


def extend_horizontal(
    psi: Any,
    source: GroupDescriptor,
    target: GroupDescriptor,
    tol: float = 1e-12
) -> ExtensionResult:
    """
    Extend a horizontal linear map psi to a graded homomorphism.

    - H_n -> H_m: extendable iff psi^T J_m psi = c J_n; the vertical layer is
      scaled by c (det psi for H_1 -> H_1).
    - H_n -> R^k: always extendable as psi composed with the horizontal
      projection; the vertical layer goes to 0.
    - R^k -> R^m: the linear map psi.
    - R^k -> H_n: extendable iff the image of psi is isotropic.

    Args:
        psi: Matrix of shape (target horizontal dim, source horizontal dim)
        source, target: Descriptors
        tol: Relative tolerance of the bracket condition

    Returns:
        ExtensionResult; non-extendable maps carry a witness basis pair

    Example:
        >>> H1 = GroupDescriptor.heisenberg(1)
        >>> extend_horizontal([[0, 1], [1, 0]], H1, H1).vertical_factor
        -1.0
    """
    psi = np.asarray(psi, dtype=float)
    expected = (target.horizontal_dim, source.horizontal_dim)
    if psi.shape != expected:
        raise ValueError(f"psi must have shape {expected}, got {psi.shape}")
    if source.step > 2 or target.step > 2:
        raise NotImplementedError("homomorphism extension needs groups of step <= 2")

    op_norm = float(np.abs(psi).sum(axis=1).max()) if psi.size else 0.0

    if target.step == 1:
        handle = linear_homomorphism(source, target, psi, None, max(op_norm, 1e-12),
                                     name='homomorphism')
        return ExtensionResult(handle, None)

    Jt = symplectic_matrix(target)
    M = psi.T @ Jt @ psi
    scale = max(1.0, float(np.abs(psi).max()) ** 2)

    if source.step == 1:
        violation = float(np.abs(M).max())
        if violation > tol * scale:
            i, j = np.unravel_index(int(np.argmax(np.abs(M))), M.shape)
            return ExtensionResult(None, None, (int(min(i, j)), int(max(i, j))), violation,
                                   'image of psi is not isotropic')
        handle = linear_homomorphism(source, target, psi, None, max(op_norm, 1e-12),
                                     name='homomorphism')
        return ExtensionResult(handle, None)

    Js = symplectic_matrix(source)
    c = float(M[0, 1] / Js[0, 1])
    residual = M - c * Js
    violation = float(np.abs(residual).max())
    if violation > tol * scale:
        i, j = np.unravel_index(int(np.argmax(np.abs(residual))), residual.shape)
        return ExtensionResult(None, c, (int(min(i, j)), int(max(i, j))), violation,
                               'psi does not preserve the bracket up to a scalar')
    vertical = np.array([[c]])
    lip = max(op_norm, float(np.sqrt(abs(c))), 1e-12)
    handle = linear_homomorphism(source, target, psi, vertical, lip, name='homomorphism')
    logger.debug(f"extended psi={psi.tolist()} with vertical factor {c}")
    return ExtensionResult(handle, c)


def affine_homomorphism(phi: LipschitzMapHandle, g0: Any, h0: Any) -> LipschitzMapHandle:
    """g -> h0 phi(g0^{-1} g)."""
    Gs, Gt = group_for(phi.source), group_for(phi.target)
    g0 = np.asarray(g0, dtype=float)
    h0 = np.asarray(h0, dtype=float)
    g0_inv = Gs.inverse(g0)

    def func(p: np.ndarray) -> np.ndarray:
        moved = Gs.multiply(np.broadcast_to(g0_inv, p.shape), p)
        image = phi.evaluate(moved)
        return Gt.multiply(np.broadcast_to(h0, image.shape), image)

    return LipschitzMapHandle(f'affine({phi.name})', phi.source, phi.target, func,
                              phi.declared_lip, params={'g0': g0.tolist(), 'h0': h0.tolist()})


def homomorphism_residual(phi: LipschitzMapHandle, samples: int = 10_000,
                          seed: int = 0) -> float:
    """Max |phi(pq) - phi(p) phi(q)| relative to the image size over random pairs."""
    Gs, Gt = group_for(phi.source), group_for(phi.target)
    rng = make_rng(seed, 30)
    p = Gs.random_points(rng, samples)
    q = Gs.random_points(rng, samples)
    lhs = phi.evaluate(Gs.multiply(p, q))
    rhs = Gt.multiply(phi.evaluate(p), phi.evaluate(q))
    return float(np.abs(lhs - rhs).max() / (1.0 + np.abs(lhs).max()))


def rigidity_check(
    F1: LipschitzMapHandle,
    F2: LipschitzMapHandle,
    anchor: Any,
    matrix_points: int = 100,
    value_points: int = 10_000,
    seed: int = 0,
    tol: float = 1e-9
) -> AuditReport:
    """
    Two maps with equal horizontal matrices everywhere and one equal value.

    Compares MF at ``matrix_points`` random points and the values at the
    anchor; if both agree the maps must agree everywhere, which is checked at
    ``value_points`` random points.
    """
    if F1.source != F2.source or F1.target != F2.target:
        raise ValueError("rigidity check needs maps between the same groups")
    rng = make_rng(seed, 31)
    G = group_for(F1.source)
    anchor = np.asarray(anchor, dtype=float)
    pts = G.random_points(rng, matrix_points)
    mf_gap = float(np.abs(horizontal_field(F1, pts) - horizontal_field(F2, pts)).max())
    anchor_gap = float(np.abs(F1.evaluate(anchor) - F2.evaluate(anchor)).max())
    probe = G.random_points(rng, value_points)
    value_gap = float(np.abs(F1.evaluate(probe) - F2.evaluate(probe)).max())

    premises = mf_gap <= 1e-6 and anchor_gap <= tol
    passed = (not premises) or value_gap <= tol
    return AuditReport(
        name='rigidity',
        passed=bool(passed),
        metrics={'matrix_gap': mf_gap, 'anchor_gap': anchor_gap, 'value_gap': value_gap,
                 'premises_hold': bool(premises)},
    )


def lipschitz_entry_constant(
    F: LipschitzMapHandle,
    points: int = 100,
    seed: int = 0,
    radius: float = 1.0
) -> float:
    """Largest |MF entry| / declared Lipschitz bound over random points."""
    rng = make_rng(seed, 32)
    pts = group_for(F.source).random_points(rng, points, radius)
    field_values = horizontal_field(F, pts)
    return float(np.abs(field_values).max() / F.declared_lip)
