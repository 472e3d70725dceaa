"""
CARNOTLIP - Lipschitz maps between Carnot groups

Numerical toolkit for Lipschitz maps on Heisenberg groups and Euclidean
spaces: group arithmetic, dyadic meshes, Haar wavelets, Pansu
differentials, a staged biLipschitz decomposer, Cantor-set maps from H_1
to R^4, and the snowflake and Grushin counterexamples.

Example usage:
    >>> from carnotlip import GroupDescriptor, group_for
    >>> G = group_for(GroupDescriptor.heisenberg(1))
    >>> float(G.quasidistance([3, 4, 9], [0, 0, 0]))
    4.0

    # Decomposition of a built-in map
    >>> from carnotlip import DecomposeConfig, decompose, named_map
    >>> F = named_map('identity', GroupDescriptor.heisenberg(1))
    >>> result = decompose(F, DecomposeConfig(depth=1, points=200))
"""

__version__ = "0.1.0"
__author__ = "carnotlip developers"
__license__ = "MIT"

from .group import (
    CarnotGroup,
    DescriptorMismatchError,
    GroupDescriptor,
    GroupPoint,
    group_for,
)
from .dyadic import CubeAddress, DyadicMesh, ScaleError
from .wavelets import HaarPair, WaveletIndex, orthogonality_profile
from .maps import DomainError, LipschitzMapHandle, named_map
from .pansu import horizontal_matrix, pansu_limit, extend_horizontal
from .decomposer import DecomposeConfig, DecompositionResult, decompose
from .cantor import CantorParams, derive_params, eval_map, DegenerateCloudError
from .counterexamples import (
    NoCollisionError,
    space_filling_curve,
    grushin_distance_estimate,
)
from .reports import AuditReport
from .config import load_settings
from .cache import CacheManager

__all__ = [
    "CarnotGroup",
    "DescriptorMismatchError",
    "GroupDescriptor",
    "GroupPoint",
    "group_for",
    "CubeAddress",
    "DyadicMesh",
    "ScaleError",
    "HaarPair",
    "WaveletIndex",
    "orthogonality_profile",
    "DomainError",
    "LipschitzMapHandle",
    "named_map",
    "horizontal_matrix",
    "pansu_limit",
    "extend_horizontal",
    "DecomposeConfig",
    "DecompositionResult",
    "decompose",
    "CantorParams",
    "derive_params",
    "eval_map",
    "DegenerateCloudError",
    "NoCollisionError",
    "space_filling_curve",
    "grushin_distance_estimate",
    "AuditReport",
    "load_settings",
    "CacheManager",
]
