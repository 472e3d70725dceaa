"""
Tests for dyadic cube meshes.
"""
import json
from unittest.mock import patch

import numpy as np
import pytest

from carnotlip.cache import CacheManager
from carnotlip.dyadic import CubeAddress, DyadicMesh, ScaleError
from carnotlip.group import GroupDescriptor
from carnotlip.utils import make_rng


H1 = GroupDescriptor.heisenberg(1)


@pytest.fixture(scope="module")
def mesh():
    """Shared H_1 mesh (the base diameter is estimated once)."""
    return DyadicMesh(H1)


class TestAddressing:
    """Test point addressing and the tree structure."""

    def test_address_of_small_point(self, mesh):
        """Test a point near the origin lands in the expected scale-1 cube."""
        cube = mesh.address_of(H1.point(0.04, -0.03, 0.007), 1)
        assert cube.scale == 1
        assert cube.index == (0, 0, 1)

    def test_origin_in_base_cube(self, mesh):
        """Test the origin belongs to Q(0, 0) at every scale."""
        for alpha in range(4):
            assert mesh.address_of(H1.identity(), alpha).index == (0, 0, 0)

    def test_children_count(self, mesh):
        """Test every H_1 cube has exactly E^Q = 10^4 children."""
        kids = mesh.children(mesh.base_cube())
        assert len(kids) == 10 ** 4
        assert len(set(kids)) == 10 ** 4

    def test_children_parent_roundtrip(self, mesh):
        """Test the parent of every child is the original cube."""
        cube = CubeAddress(1, (3, -2, 17))
        for child in mesh.children(cube)[::97]:
            assert mesh.parent(child) == cube

    def test_ancestor_walk(self, mesh):
        """Test ancestor() agrees with repeated parent()."""
        cube = mesh.address_of(H1.point(0.123, -0.456, 0.0789), 3)
        assert mesh.ancestor(cube, 1) == mesh.parent(mesh.parent(cube))

    def test_scale_zero_has_no_parent(self, mesh):
        """Test parent of a scale-0 cube raises ScaleError."""
        with pytest.raises(ScaleError):
            mesh.parent(mesh.base_cube())

    def test_negative_scale_rejected(self, mesh):
        """Test negative scales raise ScaleError."""
        with pytest.raises(ScaleError):
            mesh.addresses(np.zeros((1, 3)), -1)

    def test_non_finite_point_rejected(self, mesh):
        """Test non-finite coordinates raise ValueError."""
        with pytest.raises(ValueError):
            mesh.addresses(np.array([[np.nan, 0.0, 0.0]]), 1)

    def test_sampled_points_belong_to_cube(self, mesh):
        """Test rejection samples of a cube are contained in it."""
        cube = CubeAddress(2, (1, 4, -30))
        pts = mesh.sample_cube(cube, 500, make_rng(0))
        assert mesh.contains(cube, pts).all()

    def test_cube_key(self):
        """Test the text key of plain and translated cubes."""
        assert CubeAddress(2, (1, 0, -3)).key() == "2:1,0,-3"
        assert CubeAddress(1, (0, 0, 0), (1, 2, 3), 3).key() == "1:0,0,0@3:1,2,3"


class TestMeshAudits:
    """Test tiling, nesting, volume and neighbour audits."""

    @pytest.mark.parametrize('alpha', [1, 2])
    def test_tiling_coverage(self, mesh, alpha):
        """Test coverage = 1 within 3 sigma with 10^5 samples."""
        report = mesh.tiling_audit(alpha, samples=100_000, seed=0)
        assert report.passed
        assert report.metrics['coverage'] == pytest.approx(1.0, abs=1e-3)

    def test_tiling_translated_family(self, mesh):
        """Test a translated family tiles its base cube too."""
        family = mesh.translate_family(1, count=3, seed=0)[1]
        report = mesh.tiling_audit(1, samples=20_000, seed=1, family=family)
        assert report.passed
        assert report.metrics['translated']

    @pytest.mark.parametrize('window_scale, metric', [(0.9, 'uncovered'),
                                                      (1.1, 'multiply_covered')])
    def test_tiling_detects_missized_windows(self, mesh, window_scale, metric):
        """Test shrunk windows leave gaps and grown windows overlap."""
        report = mesh.tiling_audit(1, samples=5000, seed=0, window_scale=window_scale)
        assert not report.passed
        assert report.metrics['coverage'] < 0.95
        assert report.metrics[metric] > 0
        assert report.violations

    def test_tiling_counts_single_cover(self, mesh):
        """Test every sample lies in exactly one window at the true size."""
        report = mesh.tiling_audit(2, samples=5000, seed=2)
        assert report.metrics['uncovered'] == 0
        assert report.metrics['multiply_covered'] == 0

    def test_tiling_window_scale_checked(self, mesh):
        """Test a non-positive window scale raises ValueError."""
        with pytest.raises(ValueError):
            mesh.tiling_audit(1, samples=100, window_scale=0.0)

    def test_nesting(self, mesh):
        """Test children lie inside their parent."""
        report = mesh.nesting_audit(1, samples=5000, seed=0)
        assert report.passed
        assert report.metrics['inside_fraction'] == 1.0

    def test_volume(self, mesh):
        """Test a scale-1 cube has Haar volume E^{-Q}."""
        report = mesh.volume_audit(CubeAddress(1, (2, -1, 5)), samples=50_000, seed=0)
        assert report.passed

    def test_neighbor_count_constant(self, mesh):
        """Test the adjacent-cube count does not depend on the scale."""
        counts = {mesh.neighbor_count_audit(alpha) for alpha in (1, 2, 3)}
        assert len(counts) == 1
        assert counts.pop() > 1

    def test_diameter_ratio(self, mesh):
        """Test consecutive diameters differ by the factor E = 10."""
        assert mesh.diameter(0) / mesh.diameter(1) == pytest.approx(10.0, rel=0.01)
        assert mesh.diameter(0) > 0


class TestAdjacency:
    """Test adjacency and semi-adjacency predicates."""

    def test_cube_adjacent_to_itself(self, mesh):
        """Test coincident cubes are adjacent."""
        cube = CubeAddress(2, (0, 0, 0))
        assert mesh.is_adjacent(cube, cube)

    def test_far_cubes_not_adjacent(self, mesh):
        """Test cubes many diameters apart are not adjacent."""
        assert not mesh.is_adjacent(CubeAddress(1, (0, 0, 0)), CubeAddress(1, (40, 0, 0)))

    def test_scale_mismatch(self, mesh):
        """Test comparing different scales raises ScaleError."""
        with pytest.raises(ScaleError):
            mesh.is_adjacent(CubeAddress(1, (0, 0, 0)), CubeAddress(2, (0, 0, 0)))

    def test_semi_adjacency_needs_scale_two(self, mesh):
        """Test semi-adjacency below scale 2 raises ScaleError."""
        with pytest.raises(ScaleError):
            mesh.is_semi_adjacent(CubeAddress(1, (0, 0, 0)), CubeAddress(1, (5, 0, 0)))

    def test_adjacent_cubes_not_semi_adjacent(self, mesh):
        """Test adjacent cubes are never semi-adjacent."""
        a = CubeAddress(2, (0, 0, 0))
        assert not mesh.is_semi_adjacent(a, a)


class TestFamiliesAndDump:
    """Test translated families, dumps and the diameter cache."""

    def test_translate_family_identity_first(self, mesh):
        """Test the untranslated family comes first and counts are honoured."""
        families = mesh.translate_family(2, count=8, seed=3)
        assert len(families) == 8
        assert not families[0].is_translated
        assert all(f.is_translated for f in families[1:])
        assert all(f.translate_scale == 4 for f in families[1:])

    def test_translate_family_reproducible(self, mesh):
        """Test equal seeds give equal families."""
        assert mesh.translate_family(1, 5, seed=9) == mesh.translate_family(1, 5, seed=9)

    def test_translate_family_count_validated(self, mesh):
        """Test count < 1 raises ValueError."""
        with pytest.raises(ValueError):
            mesh.translate_family(1, count=0)

    def test_mesh_dump_json_lines(self, mesh):
        """Test mesh_dump writes one JSON record per cube."""
        cubes = [CubeAddress(1, (1, 0, 0)), CubeAddress(1, (0, 0, 0), (1, 1, 1), 3)]
        lines = mesh.mesh_dump(cubes).splitlines()
        assert len(lines) == 2
        first = json.loads(lines[0])
        assert first['scale'] == 1
        assert first['base'] == pytest.approx([0.1, 0.0, 0.0])
        assert json.loads(lines[1])['translate'] == pytest.approx([1e-3, 1e-3, 1e-6])

    def test_base_diameter_cached(self, tmp_path):
        """Test a second mesh reads the base diameter from the cache."""
        cache = CacheManager(str(tmp_path / "c"))
        first = DyadicMesh(H1, cache=cache, diameter_samples=256).base_diameter()
        second_mesh = DyadicMesh(H1, cache=cache, diameter_samples=256)
        with patch.object(second_mesh, 'sample_cube') as mock_sample:
            assert second_mesh.base_diameter() == first
            mock_sample.assert_not_called()

    def test_step_three_rejected(self):
        """Test meshes need step <= 2."""
        with pytest.raises(NotImplementedError):
            DyadicMesh(GroupDescriptor(step=3, grading_dims=(2, 1, 1)))

    def test_euclidean_children(self):
        """Test R^2 cubes have E^2 children."""
        mesh = DyadicMesh(GroupDescriptor.euclidean(2))
        assert len(mesh.children(mesh.base_cube())) == 100
