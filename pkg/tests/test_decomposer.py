"""
Tests for the staged decomposition into biLipschitz pieces.
"""
import numpy as np
import pytest

from carnotlip.decomposer import (
    DecomposeConfig,
    LabelState,
    bad_pairs,
    content_estimate,
    decompose,
    garbage_image_fraction,
    label_case,
    largest_piece,
    mf_field,
    overlap_histogram,
    piece_separation_audit,
    update_labels,
    wavelet_screen,
)
from carnotlip.dyadic import CubeAddress, DyadicMesh, ScaleError
from carnotlip.group import GroupDescriptor
from carnotlip.maps import (
    conjugation,
    constant,
    dilation,
    horizontal_projection,
    identity,
    oscillating,
)
from carnotlip.wavelets import HaarPair, haar_field


H1 = GroupDescriptor.heisenberg(1)


def small_config(**overrides):
    """A decomposition config small enough for unit tests."""
    params = dict(depth=1, points=400, cube_samples=512, pair_samples=256,
                  screen_samples=128, bilip_pairs=2000, translates=2, seed=0)
    params.update(overrides)
    return DecomposeConfig(**params)


@pytest.fixture(scope="module")
def mesh():
    """Shared H_1 mesh."""
    return DyadicMesh(H1)


@pytest.fixture(scope="module")
def identity_result(mesh):
    """Decomposition of the identity map."""
    return decompose(identity(H1), small_config(), mesh=mesh)


class TestDecomposeConfig:
    """Test configuration defaults and validation."""

    def test_derived_defaults(self):
        """Test epsilon and c_cal derive from delta."""
        config = DecomposeConfig(delta=0.02)
        assert config.epsilon == pytest.approx(2e-4)
        assert config.c_cal == pytest.approx(2e-5)
        assert config.content_rule == 'large_content'

    @pytest.mark.parametrize('overrides', [
        {'delta': 0.0},
        {'epsilon': 2.0},
        {'depth': -1},
        {'n_cap': 0},
        {'content_rule': 'strict'},
        {'points': 1},
    ])
    def test_invalid_values(self, overrides):
        """Test invalid parameters raise ValueError."""
        with pytest.raises(ValueError):
            DecomposeConfig(**overrides)

    def test_to_dict(self):
        """Test the config serializes every field."""
        data = DecomposeConfig().to_dict()
        assert data['delta'] == 0.01
        assert 'window_n' in data


class TestContent:
    """Test Hausdorff content estimates."""

    def test_single_point_content(self):
        """Test a repeated point has content of one window at the finest scale."""
        assert content_estimate(np.zeros((10, 2)), 4, scales=[1.0, 0.5]) == 0.0625

    def test_content_rejects_empty(self):
        """Test an empty sample raises ValueError."""
        with pytest.raises(ValueError):
            content_estimate(np.zeros((0, 2)), 2)

    def test_content_rejects_bad_dimension(self):
        """Test k <= 0 raises ValueError."""
        with pytest.raises(ValueError):
            content_estimate(np.zeros((3, 2)), 0)

    def test_square_content_near_area(self):
        """Test a uniform sample of the unit square has 2-content close to 1."""
        pts = np.random.default_rng(0).uniform(0, 1, size=(20_000, 2))
        assert content_estimate(pts, 2) == pytest.approx(1.0, rel=0.3)

    def test_greedy_method(self):
        """Test the greedy cover gives a positive estimate."""
        pts = np.random.default_rng(1).uniform(0, 1, size=(2000, 2))
        assert content_estimate(pts, 2, method='greedy') > 0


class TestLabels:
    """Test the label rules."""

    @pytest.mark.parametrize('z1, z2, expected', [
        ('01', '00', ('I', '01', '00')),
        ('01', '01', ('II', '010', '011')),
        ('010', '1', ('III', '010', '1')),
        ('010', '01', ('IV', '010', '011')),
        ('011', '01', ('IV', '011', '010')),
    ])
    def test_label_cases(self, z1, z2, expected):
        """Test each of the four cases."""
        assert label_case(z1, z2) == expected

    def test_label_case_order_checked(self):
        """Test z1 shorter than z2 raises ValueError."""
        with pytest.raises(ValueError):
            label_case('0', '00')

    def test_initial_labels(self):
        """Test every point starts with label 0."""
        assert set(LabelState.initial(5).labels) == {'0'}

    def test_update_splits_equal_labels(self):
        """Test equal labels on a pair get distinct extensions."""
        qa, qb = CubeAddress(2, (0, 0, 0)), CubeAddress(2, (5, 0, 0))
        state = LabelState(LabelState.initial(4).labels,
                           {qa: np.array([0, 1]), qb: np.array([2, 3])})
        new = update_labels(state, (qa, qb))
        assert list(new.labels) == ['00', '00', '01', '01']
        assert list(state.labels) == ['0'] * 4

    def test_update_needs_labels(self):
        """Test a cube without points raises KeyError."""
        state = LabelState.initial(2)
        with pytest.raises(KeyError):
            update_labels(state, (CubeAddress(2, (0, 0, 0)), CubeAddress(2, (1, 0, 0))))


class TestBadPairs:
    """Test bad-pair detection."""

    def test_scale_below_two(self, mesh):
        """Test scale-1 cubes raise ScaleError."""
        cubes = [CubeAddress(1, (0, 0, 0)), CubeAddress(1, (3, 0, 0))]
        with pytest.raises(ScaleError):
            bad_pairs(identity(H1), mesh, cubes, 0.01)

    def test_mixed_scales(self, mesh):
        """Test cubes of different scales raise ValueError."""
        cubes = [CubeAddress(2, (0, 0, 0)), CubeAddress(3, (3, 0, 0))]
        with pytest.raises(ValueError):
            bad_pairs(identity(H1), mesh, cubes, 0.01)

    def test_constant_map_collapses_semi_adjacent_cubes(self, mesh):
        """Test every semi-adjacent pair is bad for a constant map."""
        cubes = [CubeAddress(2, (k, 0, 0)) for k in range(0, 30, 3)]
        found = bad_pairs(constant(H1), mesh, cubes, 0.5, content_rule='as_stated',
                          samples=64)
        expected = sorted((a, b) for i, a in enumerate(cubes) for b in cubes[i + 1:]
                          if mesh.is_semi_adjacent(a, b))
        assert found == expected

    def test_identity_has_no_bad_pairs(self, mesh):
        """Test an isometry never brings separated cubes close."""
        cubes = [CubeAddress(2, (k, 0, 0)) for k in range(0, 30, 3)]
        assert bad_pairs(identity(H1), mesh, cubes, 0.5, content_rule='large_content',
                         samples=64) == []


class TestDecompose:
    """Test full decomposition runs."""

    def test_identity_single_piece(self, identity_result):
        """Test the identity yields one piece covering almost everything."""
        label, measure = largest_piece(identity_result)
        assert label == '0'
        assert measure >= 0.99
        assert identity_result.garbage_fraction <= 0.01

    def test_identity_piece_isometric(self, identity_result):
        """Test the piece biLipschitz constant of the identity is 1."""
        row = identity_result.piece_table.iloc[0]
        assert row['bilip'] == pytest.approx(1.0)

    def test_identity_separation(self, identity_result, mesh):
        """Test no piece meets both cubes of a screened pair."""
        assert piece_separation_audit(identity_result, mesh).passed

    def test_stage_log(self, identity_result):
        """Test one stage row per alpha."""
        table = identity_result.stage_table()
        assert list(table['alpha']) == [0, 1]
        assert identity_result.final_scale == 1 + identity_result.offset

    def test_payload(self, identity_result):
        """Test the payload reports pieces by label."""
        payload = identity_result.to_payload()
        assert payload['pieces'].keys() == {'0'}
        assert payload['screened_pairs'] == 0

    def test_constant_map_all_garbage(self, mesh):
        """Test a constant map sends every cube to the garbage set."""
        result = decompose(constant(H1), small_config(points=100), mesh=mesh)
        assert result.garbage_fraction == 1.0
        assert result.pieces == {}
        assert largest_piece(result) == (None, 0.0)

    def test_projection_mostly_garbage(self, mesh):
        """Test the projection to the plane is garbage once delta exceeds its content."""
        result = decompose(horizontal_projection(H1), small_config(delta=0.1, points=100),
                           mesh=mesh)
        assert result.garbage_fraction >= 0.9
        assert garbage_image_fraction(result, horizontal_projection(H1)) <= 1.0

    def test_dilation_constant(self, mesh):
        """Test a dilation gives one piece with biLipschitz constant lam."""
        result = decompose(dilation(H1, 2.0), small_config(points=100), mesh=mesh)
        assert result.piece_table['bilip'].iloc[0] == pytest.approx(2.0)

    def test_reproducible(self, mesh):
        """Test equal seeds and configs give identical labels."""
        first = decompose(identity(H1), small_config(points=100), mesh=mesh)
        second = decompose(identity(H1), small_config(points=100), mesh=mesh)
        assert np.array_equal(first.points, second.points)
        assert list(first.labels) == list(second.labels)
        assert np.array_equal(first.garbage_mask, second.garbage_mask)

    def test_depth_beyond_resolution(self, mesh):
        """Test depth + W above the mesh resolution raises ValueError."""
        with pytest.raises(ValueError):
            decompose(identity(H1), small_config(depth=10), mesh=mesh)


def _address(mesh, point, a):
    """Scale-a cube holding ``point``."""
    idx = mesh.addresses(np.asarray([point], dtype=float), a)[0]
    return CubeAddress(a, tuple(int(v) for v in idx))


def _nearby_pair(mesh, a):
    """Two scale-a cubes holding points 0.6 E^{-a} apart along x."""
    p = np.array([0.01, 0.01, 0.001])
    q = p + np.array([0.6 * 10.0 ** -a, 0.0, 0.0])
    return _address(mesh, p, a), _address(mesh, q, a)


class TestWaveletScreen:
    """Test the Haar screen applied to bad pairs."""

    @pytest.mark.parametrize('a', [2, 3, 4])
    @pytest.mark.parametrize('F', [identity(H1), dilation(H1, 2.0), conjugation(H1)],
                             ids=['identity', 'dilation', 'conjugation'])
    def test_constant_field_never_passes(self, mesh, F, a):
        """Test maps with a constant MF are rejected at every scale."""
        result = wavelet_screen(F, mesh, _nearby_pair(mesh, a), DecomposeConfig().epsilon,
                                samples=128)
        assert not result.passed
        assert result.evaluated > 0
        assert result.witness['score'] < result.threshold
        assert result.witness['ratio'] <= result.witness['floor']

    def test_mf_field_reports_rounding(self):
        """Test the identity MF stays within its reported rounding floor."""
        field_fn = mf_field(identity(H1))
        pts = np.random.default_rng(3).uniform(-0.5, 0.5, size=(200, 3))
        values = field_fn(pts)
        assert field_fn.noise_floor > 0
        assert np.abs(values - [1.0, 0.0, 0.0, 1.0]).max() <= field_fn.noise_floor
        field_fn.noise_floor = 0.0
        field_fn(pts[:1])
        assert field_fn.noise_floor > 0

    def test_haar_field_passes_with_its_pair(self, mesh):
        """Test a field equal to one Haar function is found with that pair as witness."""
        qa = CubeAddress(2, (0, 0, 0))
        parent = mesh.parent(qa)
        for qb in mesh.children(parent):
            partner = _address(mesh, mesh.anchor(qb), 2)
            if partner != qa and mesh.parent(partner) == parent:
                break
        else:
            pytest.fail("no sibling anchor found")
        h = HaarPair(qa, partner)
        result = wavelet_screen(identity(H1), mesh, (qa, qb), DecomposeConfig().epsilon,
                                samples=128, field_fn=haar_field(mesh, h))
        assert result.passed
        assert result.witness['beta'] == 2
        assert result.witness['plus'] == qa.key()
        assert result.witness['minus'] == partner.key()
        assert result.witness['ratio'] == pytest.approx(1.0)

    def test_empty_window(self, mesh):
        """Test a window that clips to nothing raises ValueError."""
        with pytest.raises(ValueError):
            wavelet_screen(identity(H1), mesh, _nearby_pair(mesh, 2), 1e-4, window_n=-10)


class TestDeepDecompose:
    """Test decompositions run to depth 3."""

    @pytest.fixture(scope="class")
    def deep_identity(self, mesh):
        """Depth-3 decomposition of the identity."""
        return decompose(identity(H1), small_config(depth=3, points=200), mesh=mesh)

    def test_identity_one_piece(self, deep_identity):
        """Test the identity keeps one piece of measure at least 0.99."""
        label, measure = largest_piece(deep_identity)
        assert label == '0'
        assert measure >= 0.99
        assert len(deep_identity.pieces) == 1
        assert list(deep_identity.stage_table()['alpha']) == [0, 1, 2, 3]

    def test_identity_bilip(self, deep_identity):
        """Test the identity piece has biLipschitz constant at most 1.05."""
        assert deep_identity.piece_table['bilip'].iloc[0] <= 1.05

    def test_projection_default_delta(self, mesh):
        """Test the projection to the plane is garbage at the default delta."""
        result = decompose(horizontal_projection(H1),
                           small_config(depth=3, points=100, cube_samples=2048), mesh=mesh)
        assert result.config.delta == 0.01
        assert result.garbage_fraction >= 0.99

    def test_screened_pairs_are_separated(self, mesh):
        """Test pieces of a map with screened pairs never meet both cubes of a pair."""
        config = small_config(depth=3, points=40, delta=1e-7, epsilon=0.5,
                              content_rule='as_stated', screen_samples=64, translates=1)
        result = decompose(oscillating(H1), config, mesh=mesh)
        assert result.screened
        assert len(result.pieces) >= 2
        assert len(result.pieces) <= 2 ** config.n_cap
        report = piece_separation_audit(result, mesh)
        assert report.passed


class TestOverlap:
    """Test the overlap histogram."""

    def test_no_pairs(self, mesh):
        """Test an empty pair list gives phi = 0 everywhere."""
        pts = np.zeros((10, 3))
        hist = overlap_histogram([], pts, mesh, bound=1.0)
        assert hist.passed
        assert (hist.phi == 0).all()
        assert hist.to_dict()['scaled_tails'] == {'2': 0.0, '4': 0.0, '8': 0.0}

    def test_unchecked_without_bound(self, mesh):
        """Test the tails are only reported when no bound is given."""
        hist = overlap_histogram([], np.zeros((4, 3)), mesh)
        assert hist.passed is None
        assert hist.to_dict()['bounded'] is None

    def test_pair_counts_points(self, mesh):
        """Test points inside one cube of a pair count once."""
        pts = np.array([[0.0, 0.0, 0.0], [0.51, 0.0, 0.0], [0.0, 0.0, 0.0]])
        idx = mesh.addresses(pts, 1)
        qa, qb = CubeAddress(1, tuple(int(v) for v in idx[0])), CubeAddress(1, tuple(int(v) for v in idx[1]))
        hist = overlap_histogram([(qa, qb)], pts, mesh)
        assert list(hist.phi) == [1, 1, 1]

    def test_repeated_pair_covers_m_times(self, mesh):
        """Test a cube listed in M pairs has phi = M on its points."""
        pts = np.array([[0.0, 0.0, 0.0], [0.01, -0.02, 0.001], [0.4, 0.3, 0.1]])
        qa = _address(mesh, pts[0], 1)
        qb = _address(mesh, [-0.3, 0.2, 0.0], 1)
        assert _address(mesh, pts[1], 1) == qa
        hist = overlap_histogram([(qa, qb)] * 5, pts, mesh)
        assert list(hist.phi) == [5, 5, 0]
        assert hist.tails[4] == pytest.approx(2 / 3)
        assert hist.tails[8] == 0.0
        assert hist.scaled_tails[4] == pytest.approx(8 / 3)

    def test_bound_can_fail(self, mesh):
        """Test heavy overlap breaks a K' / N tail bound."""
        pts = np.zeros((4, 3))
        qa, qb = _address(mesh, pts[0], 1), _address(mesh, [-0.3, 0.2, 0.0], 1)
        hist = overlap_histogram([(qa, qb)] * 8, pts, mesh, bound=2.0)
        assert hist.passed is False
        assert overlap_histogram([(qa, qb)] * 8, pts, mesh, bound=8.0).passed

    def test_bound_checked(self, mesh):
        """Test a non-positive bound raises ValueError."""
        with pytest.raises(ValueError):
            overlap_histogram([], np.zeros((2, 3)), mesh, bound=0.0)
