"""
Tests for Pansu difference quotients, differentials and homomorphism extension.
"""
import numpy as np
import pytest

from carnotlip.group import GroupDescriptor
from carnotlip.maps import conjugation, constant, dilation, identity, oscillating
from carnotlip.pansu import (
    affine_homomorphism,
    extend_horizontal,
    homomorphism_residual,
    horizontal_field,
    horizontal_matrix,
    lipschitz_entry_constant,
    pansu_limit,
    rigidity_check,
    symplectic_matrix,
)


H1 = GroupDescriptor.heisenberg(1)
H2 = GroupDescriptor.heisenberg(2)
R2 = GroupDescriptor.euclidean(2)
BASE = [0.3, -0.2, 0.15]


class TestPansuLimit:
    """Test single-direction limits and their verdicts."""

    def test_identity_converges(self):
        """Test the identity quotient is the direction itself."""
        est = pansu_limit(identity(H1), BASE, [1, 0, 0])
        assert est.converged
        assert np.allclose(est.limit, [1, 0, 0], atol=1e-6)

    @pytest.mark.parametrize('base', [[0.3, -0.2, 0.15], [1.0, 2.0, 0.5]])
    def test_identity_vertical_limit_is_zero(self, base):
        """Test rounding in the small steps does not leak into the vertical limit."""
        est = pansu_limit(identity(H1), base, [1, 0, 0])
        assert est.converged
        assert abs(est.limit[2]) < 1e-6
        assert est.limit[:2] == pytest.approx([1.0, 0.0], abs=1e-6)

    def test_dilation_vertical_direction(self):
        """Test delta_2 scales a vertical direction by 4."""
        est = pansu_limit(dilation(H1, 2.0), BASE, [0, 0, 1])
        assert est.verdict == 'converged'
        assert np.allclose(est.limit, [0, 0, 4], atol=1e-5)

    def test_oscillating_map(self):
        """Test x sin(log |x|) is flagged as oscillating at x = 0."""
        est = pansu_limit(oscillating(H1), [0, 0, 0], [1, 0, 0])
        assert est.verdict == 'oscillating'
        assert not est.converged

    def test_zero_direction_rejected(self):
        """Test a zero direction raises ValueError."""
        with pytest.raises(ValueError):
            pansu_limit(identity(H1), BASE, [0, 0, 0])

    def test_step_schedule_validated(self):
        """Test too few or increasing steps raise ValueError."""
        with pytest.raises(ValueError):
            pansu_limit(identity(H1), BASE, [1, 0, 0], steps=[0.1, 0.01])
        with pytest.raises(ValueError):
            pansu_limit(identity(H1), BASE, [1, 0, 0], steps=[0.01, 0.1, 0.001])

    def test_to_dict(self):
        """Test the serialized estimate carries the verdict."""
        data = pansu_limit(identity(H1), BASE, [0, 1, 0]).to_dict()
        assert data['verdict'] == 'converged'


class TestHorizontalMatrix:
    """Test MF for known maps."""

    def test_identity_matrix(self):
        """Test MF(identity) = I."""
        mf = horizontal_matrix(identity(H1), BASE)
        assert mf.verdict == 'converged'
        assert np.allclose(mf.matrix, np.eye(2), atol=1e-6)

    @pytest.mark.parametrize('lam', [0.5, 2.0, 3.0])
    def test_dilation_matrix(self, lam):
        """Test MF(delta_lam) = lam I."""
        mf = horizontal_matrix(dilation(H1, lam), BASE)
        assert np.allclose(mf.matrix, lam * np.eye(2), atol=1e-6)

    def test_conjugation_matrix(self):
        """Test MF(conj) = diag(1, -1)."""
        mf = horizontal_matrix(conjugation(H1), BASE)
        assert np.allclose(mf.matrix, [[1, 0], [0, -1]], atol=1e-6)

    def test_constant_matrix(self):
        """Test a constant map has MF = 0."""
        mf = horizontal_matrix(constant(H1, [1.0, 1.0, 1.0]), BASE)
        assert np.allclose(mf.matrix, 0.0)

    def test_entries_bounded_by_lipschitz(self):
        """Test |MF entries| never exceed the declared bound."""
        assert lipschitz_entry_constant(dilation(H1, 2.0)) <= 1.0 + 1e-6

    def test_field_matches_matrix(self):
        """Test the vectorized field agrees with the limit for a homomorphism."""
        field_values = horizontal_field(conjugation(H1), np.array([BASE]))
        assert np.allclose(field_values[0], [[1, 0], [0, -1]], atol=1e-6)


class TestExtension:
    """Test extension of horizontal linear maps."""

    def test_symplectic_matrix(self):
        """Test J is antisymmetric with unit entries on H_1."""
        J = symplectic_matrix(H1)
        assert np.allclose(J, -J.T)
        assert abs(J[0, 1]) == 1.0

    def test_rotation_extends(self):
        """Test a rotation extends with vertical factor 1."""
        c, s = np.cos(0.7), np.sin(0.7)
        result = extend_horizontal([[c, -s], [s, c]], H1, H1)
        assert result.extendable
        assert result.vertical_factor == pytest.approx(1.0)
        assert homomorphism_residual(result.handle, samples=2000) < 1e-12

    def test_swap_reverses_orientation(self):
        """Test swapping x and y gives vertical factor -1."""
        result = extend_horizontal([[0, 1], [1, 0]], H1, H1)
        assert result.vertical_factor == -1.0
        assert homomorphism_residual(result.handle, samples=2000) < 1e-12

    def test_non_symplectic_witness(self):
        """Test a map scaling one complex line only is not extendable."""
        result = extend_horizontal(np.diag([1.0, 1.0, 2.0, 1.0]), H2, H2)
        assert not result.extendable
        assert result.witness is not None
        assert result.violation > 0

    def test_extension_into_euclidean(self):
        """Test maps into R^k kill the vertical layer."""
        result = extend_horizontal(np.eye(2), H1, R2)
        assert result.extendable
        assert result.handle.evaluate([1.0, 2.0, 5.0]).tolist() == [1.0, 2.0]

    def test_shape_checked(self):
        """Test psi of the wrong shape raises ValueError."""
        with pytest.raises(ValueError):
            extend_horizontal(np.eye(3), H1, H1)


class TestRigidity:
    """Test the uniqueness harness for homomorphisms."""

    def test_equal_maps_agree(self):
        """Test two equal affine homomorphisms pass."""
        phi = extend_horizontal([[0, -1], [1, 0]], H1, H1).handle
        F1 = affine_homomorphism(phi, [0, 0, 0], [1.0, 2.0, 0.5])
        F2 = affine_homomorphism(phi, [0, 0, 0], [1.0, 2.0, 0.5])
        report = rigidity_check(F1, F2, [0, 0, 0], value_points=2000)
        assert report.passed
        assert report.metrics['premises_hold']

    def test_different_anchor_value(self):
        """Test maps differing at the anchor fail the premises but not the check."""
        phi = identity(H1)
        F1 = affine_homomorphism(phi, [0, 0, 0], [0, 0, 0])
        F2 = affine_homomorphism(phi, [0, 0, 0], [0, 0, 1.0])
        report = rigidity_check(F1, F2, [0, 0, 0], value_points=2000)
        assert not report.metrics['premises_hold']
        assert report.passed

    def test_group_mismatch(self):
        """Test maps between different groups are rejected."""
        with pytest.raises(ValueError):
            rigidity_check(identity(H1), identity(H2), [0, 0, 0])

    def test_affine_sends_anchor(self):
        """Test g0 is sent to h0."""
        F = affine_homomorphism(conjugation(H1), [1.0, 0.0, 0.0], [0.0, 0.0, 2.0])
        assert np.allclose(F.evaluate([1.0, 0.0, 0.0]), [0.0, 0.0, 2.0])