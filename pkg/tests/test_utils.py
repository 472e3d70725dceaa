"""
Tests for utility functions.
"""
from fractions import Fraction

import numpy as np
import pytest

from carnotlip.utils import (
    as_points,
    check_finite,
    format_bits,
    json_ready,
    log_slope_fit,
    make_rng,
    make_seed_sequence,
    parallel_map,
)


class TestSeeds:
    """Test seeded random streams."""

    def test_same_keys_same_stream(self):
        """Test equal seeds and keys give equal draws."""
        assert make_rng(7, 1, 2).random() == make_rng(7, 1, 2).random()

    def test_keys_select_independent_streams(self):
        """Test different keys give different draws."""
        assert make_rng(7, 1).random() != make_rng(7, 2).random()

    def test_none_uses_default(self):
        """Test None falls back to the default seed."""
        assert make_rng(None).random() == make_rng(0).random()

    def test_negative_seed_rejected(self):
        """Test negative seeds raise ValueError."""
        with pytest.raises(ValueError):
            make_seed_sequence(-1)

    def test_sequence_input_extends_key(self):
        """Test keys append to an existing seed sequence."""
        ss = make_seed_sequence(3, 4)
        assert make_seed_sequence(ss, 5).spawn_key == (4, 5)


class TestParallelMap:
    """Test ordered mapping."""

    def test_inline(self):
        """Test one worker maps inline in order."""
        assert parallel_map(abs, [-1, 2, -3]) == [1, 2, 3]

    def test_workers_keep_order(self):
        """Test several workers return results in input order."""
        assert parallel_map(abs, list(range(-5, 5)), workers=2) == [abs(i) for i in range(-5, 5)]

    def test_invalid_workers(self):
        """Test workers < 1 raises ValueError."""
        with pytest.raises(ValueError):
            parallel_map(abs, [1], workers=0)


class TestArrays:
    """Test array helpers."""

    def test_as_points_reshapes(self):
        """Test a single point becomes a (1, dim) array."""
        assert as_points([1, 2, 3], 3).shape == (1, 3)

    def test_as_points_dimension(self):
        """Test a mismatched dimension raises ValueError."""
        with pytest.raises(ValueError, match='shape'):
            as_points(np.zeros((4, 2)), 3)

    def test_as_points_keeps_fractions(self):
        """Test object arrays of Fractions stay exact."""
        arr = as_points(np.array([Fraction(1, 3), Fraction(0), Fraction(1)], dtype=object), 3)
        assert arr.dtype == object
        assert arr[0, 0] == Fraction(1, 3)

    def test_check_finite(self):
        """Test NaN and infinity are rejected."""
        check_finite(np.array([1.0, 2.0]))
        with pytest.raises(ValueError, match='2 non-finite'):
            check_finite(np.array([np.nan, np.inf, 1.0]))

    def test_log_slope_fit(self):
        """Test counts r^-2 give slope 2 with zero residual."""
        scales = 2.0 ** -np.arange(1, 6)
        slope, _, residual = log_slope_fit(scales, scales ** -2)
        assert slope == pytest.approx(2.0)
        assert residual == pytest.approx(0.0, abs=1e-12)


class TestSerialization:
    """Test JSON conversion and labels."""

    def test_json_ready_numpy(self):
        """Test numpy values become plain Python types."""
        data = json_ready({'a': np.float64(1.5), 'b': np.arange(3), 'c': (np.int64(2), True)})
        assert data == {'a': 1.5, 'b': [0, 1, 2], 'c': [2, True]}
        assert type(data['b'][0]) is int

    def test_json_ready_non_finite(self):
        """Test infinities become strings and NaN becomes None."""
        assert json_ready([float('inf'), float('-inf'), float('nan')]) == ['inf', '-inf', None]

    def test_json_ready_fraction(self):
        """Test Fractions become floats."""
        assert json_ready(Fraction(1, 4)) == 0.25

    def test_format_bits(self):
        """Test the empty label is shown as <root>."""
        assert format_bits('') == '<root>'
        assert format_bits(None) == '<root>'
        assert format_bits('0110') == '0110'
