"""
Tests for map handles and the built-in maps.
"""
import numpy as np
import pytest

from carnotlip.group import GroupDescriptor, group_for
from carnotlip.maps import (
    MAP_NAMES,
    DomainError,
    LipschitzMapHandle,
    conjugation,
    constant,
    dilation,
    horizontal_projection,
    identity,
    linear_homomorphism,
    named_map,
)


H1 = GroupDescriptor.heisenberg(1)
H2 = GroupDescriptor.heisenberg(2)


class TestLipschitzMapHandle:
    """Test evaluation, domains and validation."""

    def test_identity_evaluates(self):
        """Test the identity returns its input."""
        pts = np.array([[1.0, 2.0, 3.0], [-0.5, 0.0, 4.0]])
        assert np.array_equal(identity(H1).evaluate(pts), pts)

    def test_single_point(self):
        """Test a 1-d array evaluates to a 1-d array."""
        out = dilation(H1, 2.0).evaluate([1.0, 1.0, 1.0])
        assert out.tolist() == [2.0, 2.0, 4.0]

    def test_call_on_group_point(self):
        """Test calling a handle on a GroupPoint."""
        image = conjugation(H1)(H1.point(1, 2, 3))
        assert image.coords == (1.0, -2.0, -3.0)

    def test_call_rejects_other_group(self):
        """Test points of another group are rejected."""
        with pytest.raises(ValueError):
            identity(H1)(H2.identity())

    def test_domain_enforced(self):
        """Test evaluation outside the domain raises DomainError."""
        F = identity(H1).with_domain(lambda p: p[:, 0] >= 0, 'x >= 0')
        F.evaluate([[1.0, 0.0, 0.0]])
        with pytest.raises(DomainError, match='x >= 0'):
            F.evaluate([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])

    def test_domain_error_is_value_error(self):
        """Test DomainError subclasses ValueError."""
        assert issubclass(DomainError, ValueError)

    @pytest.mark.parametrize('lip', [0.0, -1.0])
    def test_declared_lip_positive(self, lip):
        """Test non-positive declared bounds are rejected."""
        with pytest.raises(ValueError):
            LipschitzMapHandle('bad', H1, H1, lambda p: p, lip)

    def test_non_finite_output(self):
        """Test non-finite images raise ValueError."""
        F = LipschitzMapHandle('nan', H1, H1, lambda p: p * np.nan)
        with pytest.raises(ValueError, match='non-finite'):
            F.evaluate([[1.0, 0.0, 0.0]])


class TestBuiltins:
    """Test the built-in maps."""

    def test_constant_map(self):
        """Test the constant map ignores its input."""
        F = constant(H1, [1.0, 2.0, 3.0])
        out = F.evaluate(np.random.default_rng(0).normal(size=(5, 3)))
        assert (out == [1.0, 2.0, 3.0]).all()

    def test_constant_value_checked(self):
        """Test the constant value needs target.dim coordinates."""
        with pytest.raises(ValueError):
            constant(H1, [1.0, 2.0])

    def test_dilation_rejects_nonpositive(self):
        """Test lam <= 0 raises ValueError."""
        with pytest.raises(ValueError):
            dilation(H1, 0.0)

    def test_conjugation_needs_heisenberg(self):
        """Test conjugation on R^k is rejected."""
        with pytest.raises(ValueError):
            conjugation(GroupDescriptor.euclidean(2))

    def test_conjugation_is_automorphism(self):
        """Test conj(pq) = conj(p) conj(q)."""
        G = group_for(H2)
        rng = np.random.default_rng(1)
        p, q = G.random_points(rng, 200), G.random_points(rng, 200)
        F = conjugation(H2)
        assert np.allclose(F.evaluate(G.multiply(p, q)),
                           G.multiply(F.evaluate(p), F.evaluate(q)), atol=1e-12)

    def test_projection_target(self):
        """Test the projection lands in R^{2n}."""
        F = horizontal_projection(H2)
        assert F.target == GroupDescriptor.euclidean(4)
        assert F.evaluate([1, 2, 3, 4, 5]).tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_linear_homomorphism_shape(self):
        """Test psi of the wrong shape is rejected."""
        with pytest.raises(ValueError):
            linear_homomorphism(H1, H1, np.eye(3))

    @pytest.mark.parametrize('F', [identity(H1), dilation(H1, 3.0), conjugation(H1),
                                   horizontal_projection(H1)])
    def test_lipschitz_audit_within_bound(self, F):
        """Test sampled ratios respect the declared bound."""
        result = F.lipschitz_audit(samples=5000, seed=0)
        assert result['within_bound']
        assert result['max_ratio'] > 0


class TestNamedMap:
    """Test the registry lookup."""

    @pytest.mark.parametrize('name', [n for n in MAP_NAMES if n != 'cantor'])
    def test_every_name_resolves(self, name):
        """Test each registered name builds a handle on H_1."""
        assert named_map(name, H1).source == H1

    def test_dilation_parameter(self):
        """Test lam is forwarded to the dilation."""
        assert named_map('dilation', H1, lam=5.0).declared_lip == 5.0

    def test_cantor_map(self):
        """Test the cantor map uses its own source group."""
        F = named_map('cantor', H1, epsilon=0.5)
        assert F.name.startswith('cantor')

    def test_non_extendable_psi(self):
        """Test a psi that breaks the bracket is rejected."""
        with pytest.raises(ValueError, match='extend'):
            named_map('homomorphism', H2, psi=np.diag([1.0, 1.0, 2.0, 1.0]))

    def test_unknown_name(self):
        """Test unknown names raise ValueError listing valid names."""
        with pytest.raises(ValueError, match='identity'):
            named_map('nope', H1)
