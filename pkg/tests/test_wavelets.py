"""
Tests for Haar pairs and approximate orthogonality.
"""
import numpy as np
import pytest

from carnotlip.dyadic import CubeAddress, DyadicMesh, ScaleError
from carnotlip.group import GroupDescriptor
from carnotlip.utils import MC_SIGMA_BAND, make_rng
from carnotlip.wavelets import (
    WaveletIndex,
    coefficient_ratio,
    coefficient_table,
    constant_field,
    cube_volume,
    eval_haar,
    haar_field,
    inner_product,
    make_pair,
    orthogonality_profile,
    random_sibling_pair,
    sibling_pairs,
    windows_overlap,
)


@pytest.fixture(scope="module")
def mesh():
    """Shared H_1 mesh."""
    return DyadicMesh(GroupDescriptor.heisenberg(1))


class TestHaarPairs:
    """Test pair construction and evaluation."""

    def test_make_pair_siblings(self, mesh):
        """Test two children of one parent form a pair."""
        kids = mesh.children(mesh.base_cube())
        pair = make_pair(mesh, kids[0], kids[1])
        assert pair.scale == 1
        assert pair.key() == f"{kids[0].key()}|{kids[1].key()}"

    def test_make_pair_rejects_same_cube(self, mesh):
        """Test a cube cannot pair with itself."""
        kid = mesh.children(mesh.base_cube())[0]
        with pytest.raises(ValueError):
            make_pair(mesh, kid, kid)

    def test_make_pair_rejects_cousins(self, mesh):
        """Test cubes with different parents are rejected."""
        a = mesh.children(CubeAddress(1, (0, 0, 0)))[0]
        b = mesh.children(CubeAddress(1, (1, 0, 0)))[0]
        with pytest.raises(ValueError):
            make_pair(mesh, a, b)

    def test_wavelet_index_scale(self):
        """Test beta = 0 raises ScaleError."""
        with pytest.raises(ScaleError):
            WaveletIndex(0)
        assert WaveletIndex(2, 3).family == 3

    def test_eval_haar_signs(self, mesh):
        """Test f is +1 on Q, -1 on Q' and 0 elsewhere."""
        pair = random_sibling_pair(mesh, mesh.base_cube(), make_rng(1))
        rng = make_rng(2)
        plus = mesh.sample_cube(pair.plus_cube, 50, rng)
        minus = mesh.sample_cube(pair.minus_cube, 50, rng)
        assert (eval_haar(mesh, pair, plus) == 1).all()
        assert (eval_haar(mesh, pair, minus) == -1).all()
        assert eval_haar(mesh, pair, np.array([5.0, 5.0, 5.0])) == 0

    def test_sibling_pairs_limit(self, mesh):
        """Test sibling_pairs honours its limit and lexicographic order."""
        pairs = sibling_pairs(mesh, mesh.base_cube(), limit=5)
        assert len(pairs) == 5
        assert all(p.plus_cube < p.minus_cube for p in pairs)


class TestInnerProducts:
    """Test Monte Carlo inner products and coefficient ratios."""

    def test_self_inner_product_closed_form(self, mesh):
        """Test <f, f> = 2 * 10^{-4 beta} within the 3 sigma band."""
        pair = random_sibling_pair(mesh, mesh.base_cube(), make_rng(4))
        f = haar_field(mesh, pair)
        value, sigma = inner_product(mesh, f, f, mesh.base_cube(), samples=100_000, seed=0)
        expected = 2.0 * 10.0 ** -4
        assert abs(value - expected) <= MC_SIGMA_BAND * sigma

    def test_zero_field(self, mesh):
        """Test the zero field has zero inner product and zero error."""
        value, sigma = inner_product(mesh, constant_field(0), constant_field(1),
                                     mesh.base_cube(), samples=1000)
        assert value == 0.0
        assert sigma == 0.0

    def test_non_finite_field_rejected(self, mesh):
        """Test a field returning NaN raises ValueError."""
        with pytest.raises(ValueError):
            inner_product(mesh, constant_field(np.nan), constant_field(1),
                          mesh.base_cube(), samples=100)

    def test_ratio_of_pair_with_itself(self, mesh):
        """Test |<f, f>| / <f, f> = 1 exactly."""
        pair = random_sibling_pair(mesh, mesh.base_cube(), make_rng(5))
        ratio, sigma = coefficient_ratio(mesh, haar_field(mesh, pair), pair, samples=256)
        assert ratio == pytest.approx(1.0)
        assert sigma == pytest.approx(0.0)

    def test_ratio_of_constant(self, mesh):
        """Test constants have vanishing Haar coefficients."""
        pair = random_sibling_pair(mesh, mesh.base_cube(), make_rng(6))
        ratio, _ = coefficient_ratio(mesh, constant_field(3.0), pair, samples=256)
        assert ratio == 0.0

    @pytest.mark.parametrize('scale', [-2.0, 0.5, 3.0])
    def test_ratio_of_scaled_pair(self, mesh, scale):
        """Test c f has ratio |c| under the <f, f> normalisation."""
        pair = random_sibling_pair(mesh, mesh.base_cube(), make_rng(7))
        f = haar_field(mesh, pair)
        ratio, _ = coefficient_ratio(mesh, lambda pts: scale * f(pts), pair, samples=256)
        assert ratio == pytest.approx(abs(scale))

    def test_ratio_of_one_sided_indicator(self, mesh):
        """Test the indicator of the plus cube alone has ratio 1/2."""
        pair = random_sibling_pair(mesh, mesh.base_cube(), make_rng(8))
        ratio, sigma = coefficient_ratio(
            mesh, lambda pts: mesh.contains(pair.plus_cube, pts).astype(float), pair, samples=256)
        assert ratio == pytest.approx(0.5)
        assert sigma == pytest.approx(0.0)

    def test_cube_volume(self, mesh):
        """Test |Q| = E^{-Q alpha}."""
        assert cube_volume(mesh, 2) == pytest.approx(1e-8)

    def test_coefficient_table_columns(self, mesh):
        """Test the coefficient table layout."""
        pairs = sibling_pairs(mesh, mesh.base_cube(), limit=2)
        table = coefficient_table(mesh, {(0, 0): constant_field(1.0)}, pairs, samples=64)
        assert list(table.columns) == ['beta', 'family', 'plus', 'minus', 'i', 'j',
                                       'ratio', 'sigma']
        assert len(table) == 2
        assert (table['ratio'] == 0.0).all()


class TestOrthogonality:
    """Test support overlaps and the orthogonality constant."""

    def test_window_overlaps_itself(self, mesh):
        """Test a window overlaps itself."""
        cube = CubeAddress(2, (3, 1, -4))
        assert windows_overlap(mesh, cube, cube)

    def test_distant_windows(self, mesh):
        """Test windows two spacings apart do not overlap."""
        assert not windows_overlap(mesh, CubeAddress(1, (0, 0, 0)), CubeAddress(1, (2, 0, 0)))

    def test_overlap_scale_mismatch(self, mesh):
        """Test comparing different scales raises ScaleError."""
        with pytest.raises(ScaleError):
            windows_overlap(mesh, CubeAddress(1, (0, 0, 0)), CubeAddress(2, (0, 0, 0)))

    def test_constant_independent_of_scale(self, mesh):
        """Test K is identical at beta = 1 and beta = 2."""
        k1 = orthogonality_profile(mesh, 1, probes=2, seed=0)
        k2 = orthogonality_profile(mesh, 2, probes=2, seed=0)
        assert k1 == k2
        assert k1 > 0

    def test_profile_needs_positive_beta(self, mesh):
        """Test beta = 0 raises ScaleError."""
        with pytest.raises(ScaleError):
            orthogonality_profile(mesh, 0)
