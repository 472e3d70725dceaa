"""
Utility functions and shared constants for the carnotlip library.
"""

import logging
from typing import Any, Callable, Iterable, List, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)


# ============================================================================
# MESH AND SAMPLING CONSTANTS
# ============================================================================
# Ratio between the diameters of a dyadic parent and its children
SCALING_BASE = 10

# Default reproducibility seed
DEFAULT_SEED = 0

# Finest scale at which cube membership is resolved
DEFAULT_RESOLUTION = 6

# Monte Carlo agreement band (in standard deviations)
MC_SIGMA_BAND = 3.0

# Finite-difference step schedule for Pansu limits
DEFAULT_STEPS = tuple(10.0 ** -j for j in range(1, 7))

# Relative tolerance for converged difference quotients
PANSU_TOLERANCE = 1e-6

SeedLike = Union[int, np.random.SeedSequence, None]


def make_seed_sequence(seed: SeedLike, *keys: int) -> np.random.SeedSequence:
    """
    Build a seed sequence for a root seed and optional integer keys.

    Keys select an independent child stream, so a stage, a cube or a
    multi-start index can own its own generator without depending on how
    many other streams were drawn before it.

    Args:
        seed: Root seed (int), an existing SeedSequence, or None for DEFAULT_SEED
        *keys: Non-negative integer keys appended to the entropy

    Returns:
        numpy SeedSequence

    Example:
        >>> ss = make_seed_sequence(7, 2, 3)
        >>> rng = np.random.default_rng(ss)
    """
    if isinstance(seed, np.random.SeedSequence):
        base = seed.entropy
        extra = tuple(seed.spawn_key)
    else:
        base = DEFAULT_SEED if seed is None else int(seed)
        extra = ()
        if base < 0:
            raise ValueError(f"Seed must be non-negative, got {base}")
    key = extra + tuple(int(k) for k in keys)
    return np.random.SeedSequence(base, spawn_key=key)


def make_rng(seed: SeedLike, *keys: int) -> np.random.Generator:
    """Return a numpy Generator for ``seed`` and optional stream keys."""
    return np.random.default_rng(make_seed_sequence(seed, *keys))


def parallel_map(
    func: Callable[[Any], Any],
    items: Sequence[Any],
    workers: int = 1
) -> List[Any]:
    """
    Apply ``func`` to every item, optionally on a joblib worker pool.

    Output order always follows input order, so callers that derive
    per-item seeds from the item index get identical results for any
    worker count.

    Args:
        func: Picklable callable of one argument
        items: Items to process
        workers: Number of worker processes (1 runs inline)

    Returns:
        List of results in input order
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]

    from joblib import Parallel, delayed

    logger.debug(f"Dispatching {len(items)} items to {workers} workers")
    return Parallel(n_jobs=workers)(delayed(func)(item) for item in items)


def as_points(points: Any, dim: int, name: str = "points") -> np.ndarray:
    """
    Coerce input to a 2D point array of shape (N, dim).

    Object arrays (exact ``Fraction`` coordinates) are preserved; anything
    else becomes float64.

    Raises:
        ValueError: If the trailing dimension does not match ``dim``
    """
    arr = np.asarray(points)
    if arr.dtype != object:
        arr = arr.astype(float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(
            f"{name} must have shape (N, {dim}), got {arr.shape}"
        )
    return arr


def check_finite(values: np.ndarray, name: str = "values") -> None:
    """Raise ValueError if ``values`` contains NaN or infinity."""
    if values.dtype == object:
        return
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        raise ValueError(f"{name} contains {bad} non-finite entries")


def log_slope_fit(
    scales: Iterable[float],
    counts: Iterable[float]
) -> tuple:
    """
    Least-squares fit of log(count) against log(1/scale).

    Returns:
        (slope, intercept, rms residual)
    """
    x = np.log(1.0 / np.asarray(list(scales), dtype=float))
    y = np.log(np.asarray(list(counts), dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((slope * x + intercept - y) ** 2)))
    return float(slope), float(intercept), residual


def json_ready(value: Any) -> Any:
    """
    Convert numpy scalars/arrays, tuples and Fractions into plain JSON types.

    Floats are rounded through ``repr`` so reruns produce byte-identical text.
    """
    from fractions import Fraction

    if isinstance(value, dict):
        return {str(k): json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(v) for v in value]
    if isinstance(value, np.ndarray):
        return [json_ready(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, Fraction):
        return float(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if not np.isfinite(value):
            return None if np.isnan(value) else ("inf" if value > 0 else "-inf")
        return value
    if hasattr(value, "to_dict"):
        return json_ready(value.to_dict())
    return value


def format_bits(bits: Optional[str]) -> str:
    """Render a piece label, using a visible marker for the empty string."""
    return bits if bits else "<root>"
