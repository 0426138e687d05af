"""Tests for the truncated Hardy space model."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dilatin.DataTypes import GenSpec
from dilatin.Modules.Generators import gen_poly_of_one
from dilatin.Modules.HardySpace import (
    TruncatedHardy,
    apply_shift,
    brehmer_dilation,
    canonical_dilation,
    const_op,
    embed_coeff,
    mult_op,
    partial_gram_sum,
    shift,
    truncation_tail_bound,
)
from dilatin.Modules.LinAlg import adjoint, spectral_norm
from dilatin.Modules.ManualException import DimensionMismatch, IndexOutOfRange, NotIsometric, NotPSD
from dilatin.Modules.OperatorTuple import OperatorTuple, SubsetMask, defect

JORDAN = np.array([[0, 1], [0, 0]], dtype=complex)


def commuting_tuple(n=3, cap=0.5, seed=0):
    return gen_poly_of_one(GenSpec(seed=seed, n=n, d=3, radius_cap=cap, require_class=False)).t


class TestTruncatedHardy:
    """Tests for the index layout."""

    def test_sizes(self):
        """Test block and coordinate counts."""
        space = TruncatedHardy(vars=2, degree=3, coeff_dim=2)
        assert space.blocks == 16
        assert space.total_dim == 32
        assert space.multi_indices.shape == (16, 2)

    def test_last_variable_runs_fastest(self):
        """Test b(k) = k_1 (N+1) + k_2 for two variables."""
        space = TruncatedHardy(vars=2, degree=2, coeff_dim=1)
        assert space.block_of((1, 0)) == 3
        assert space.block_of((0, 2)) == 2
        assert tuple(space.multi_indices[5]) == (1, 2)

    def test_block_outside_truncation(self):
        """Test a degree above N is rejected."""
        with pytest.raises(IndexOutOfRange):
            TruncatedHardy(vars=1, degree=2, coeff_dim=1).block_of((3,))

    def test_invalid_truncation(self):
        """Test degree 0 is rejected."""
        with pytest.raises(DimensionMismatch):
            TruncatedHardy(vars=1, degree=0, coeff_dim=1)

    def test_trusted_rows(self):
        """Test the trusted window drops blocks at the top degree."""
        space = TruncatedHardy(vars=2, degree=2, coeff_dim=1)
        assert len(space.trusted(1)) == 4
        assert len(space.trusted(1, variables=[1])) == 6

    def test_zero_variables(self):
        """Test a Hardy space in no variables is the coefficient space itself."""
        space = TruncatedHardy(vars=0, degree=4, coeff_dim=3)
        assert space.blocks == 1
        assert space.total_dim == 3


class TestShifts:
    """Tests for the coordinate shifts and multipliers."""

    def test_shift_moves_constant(self):
        """Test S_1 moves the z_2 coefficient to z_1 z_2."""
        space = TruncatedHardy(vars=2, degree=2, coeff_dim=1)
        x = np.zeros((space.total_dim, 1))
        x[space.block_of((0, 1))] = 1.0
        image = shift(space, 1).matrix @ x
        assert image[space.block_of((1, 1)), 0] == 1.0
        assert np.abs(image).sum() == 1.0

    def test_shift_annihilates_top_degree(self):
        """Test blocks with k_i = N are sent to zero."""
        space = TruncatedHardy(vars=1, degree=2, coeff_dim=1)
        x = np.zeros((3, 1))
        x[2] = 1.0
        assert np.abs(shift(space, 1).matrix @ x).sum() == 0.0

    def test_shifts_commute(self):
        """Test S_1 S_2 = S_2 S_1."""
        space = TruncatedHardy(vars=2, degree=3, coeff_dim=2)
        s1, s2 = shift(space, 1).matrix, shift(space, 2).matrix
        assert_allclose(s1 @ s2, s2 @ s1)

    def test_shift_isometric_below_top(self):
        """Test S_i* S_i = I on coordinates with k_i < N."""
        space = TruncatedHardy(vars=2, degree=3, coeff_dim=2)
        s = shift(space, 2).matrix
        rows = space.trusted(1, variables=[2])
        assert_allclose((adjoint(s) @ s)[np.ix_(rows, rows)], np.eye(len(rows)))

    def test_apply_shift_matches_matrix(self):
        """Test the reshaping shift agrees with the explicit matrix, powers included."""
        space = TruncatedHardy(vars=3, degree=2, coeff_dim=2)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(space.total_dim, 3)) + 0j
        s = shift(space, 2).matrix
        assert_allclose(apply_shift(space, 2, x), s @ x)
        assert_allclose(apply_shift(space, 2, x, power=2), s @ s @ x)
        assert_allclose(apply_shift(space, 2, x, power=3), 0.0)

    def test_shift_variable_out_of_range(self):
        """Test shifting in a missing variable is rejected."""
        with pytest.raises(IndexOutOfRange):
            shift(TruncatedHardy(vars=1, degree=2, coeff_dim=1), 2)

    def test_mult_op_symbol(self):
        """Test M_{A0 + z_1 A1} on a constant function."""
        space = TruncatedHardy(vars=1, degree=2, coeff_dim=2)
        a0 = np.array([[1, 2], [3, 4]], dtype=complex)
        a1 = np.array([[0, 1], [1, 0]], dtype=complex)
        x = np.zeros((6, 1), dtype=complex)
        x[:2, 0] = [1, -1]
        image = mult_op(space, a0, a1).matrix @ x
        assert_allclose(image[:2, 0], a0 @ [1, -1])
        assert_allclose(image[2:4, 0], a1 @ [1, -1])
        assert_allclose(image[4:, 0], 0.0)

    def test_const_op_size_check(self):
        """Test a coefficient of the wrong size is rejected."""
        with pytest.raises(DimensionMismatch):
            const_op(TruncatedHardy(vars=1, degree=2, coeff_dim=2), np.eye(3))

    def test_embed_coeff_requires_isometry(self):
        """Test I (x) Gamma needs an isometric Gamma."""
        space = TruncatedHardy(vars=1, degree=2, coeff_dim=2)
        with pytest.raises(NotIsometric):
            embed_coeff(space, np.array([[1.0], [1.0]]))

        embedded = embed_coeff(space, np.array([[1.0], [0.0]]))
        assert embedded.matrix.shape == (6, 3)
        assert embedded.source.coeff_dim == 1


class TestCanonicalDilation:
    """Tests for the canonical dilation map."""

    def test_gram_is_partial_sum(self):
        """Test Pi* Pi equals the box-truncated sum of T^k D T^{*k}."""
        t = commuting_tuple(2, cap=0.6, seed=1)
        full = SubsetMask.full(2)
        data = defect(t, full)
        space = TruncatedHardy(vars=2, degree=5, coeff_dim=data.rank)
        pi = canonical_dilation(t, full, space)
        assert_allclose(adjoint(pi) @ pi, partial_gram_sum(t, data.delta, 5), atol=1e-12)

    def test_intertwines_below_top(self):
        """Test S_i* Pi = Pi T_i* on rows with k_i < N."""
        t = commuting_tuple(2, cap=0.6, seed=1)
        full = SubsetMask.full(2)
        space = TruncatedHardy(vars=2, degree=4, coeff_dim=defect(t, full).rank)
        pi = canonical_dilation(t, full, space)
        for i in (1, 2):
            rows = space.trusted(1, variables=[i])
            lhs = adjoint(shift(space, i).matrix) @ pi
            assert_allclose(lhs[rows], (pi @ adjoint(t[i]))[rows], atol=1e-12)

    def test_space_mismatch(self):
        """Test a space of the wrong coefficient dimension is rejected."""
        t = commuting_tuple(2, cap=0.6)
        full = SubsetMask.full(2)
        space = TruncatedHardy(vars=2, degree=3, coeff_dim=defect(t, full).rank + 1)
        with pytest.raises(DimensionMismatch):
            canonical_dilation(t, full, space)


class TestBrehmerDilation:
    """Tests for the direct dilation of pure Brehmer tuples."""

    def test_residuals_within_tail_bound(self):
        """Test isometry defect and compression residuals stay under the geometric tail."""
        t = commuting_tuple(3, cap=0.3, seed=2)
        dilation = brehmer_dilation(t, degree=6, window=3)
        assert dilation.isometry_defect <= 3 * truncation_tail_bound(t, 6)
        assert dilation.max_residual <= 3 * truncation_tail_bound(t, 3)
        assert sum(dilation.worst_index) <= 3

    def test_tail_bound_uses_operator_norm(self):
        """Test a nilpotent of norm 1/2 has spectral radius 0 but a tail bound of n (1/4)^(depth+1)."""
        t = OperatorTuple((0.5 * JORDAN, 0.5 * JORDAN))
        assert truncation_tail_bound(t, 0) == pytest.approx(2 * 0.25)
        assert truncation_tail_bound(t, 2) == pytest.approx(2 * 0.25**3)

    def test_window_zero_is_isometry_check(self):
        """Test k = 0 alone compares Pi* Pi with I."""
        t = commuting_tuple(2, cap=0.3, seed=2)
        dilation = brehmer_dilation(t, degree=5, window=0)
        assert dilation.max_residual == pytest.approx(
            spectral_norm(adjoint(dilation.pi) @ dilation.pi - np.eye(t.dim)), abs=1e-15
        )

    def test_rejects_non_szego(self):
        """Test the Jordan pair has no canonical dilation."""
        with pytest.raises(NotPSD):
            brehmer_dilation(OperatorTuple((JORDAN, JORDAN)), degree=3)
