"""Tests for operator tuples, defects and the positivity classes."""

import os
import tempfile

import numpy as np
import pytest
from loguru import logger
from numpy.testing import assert_allclose

from dilatin.Modules.LinAlg import adjoint, spectral_norm
from dilatin.Modules.ManualException import DimensionMismatch, IndexOutOfRange, ParseError, PreconditionViolated
from dilatin.Modules.OperatorTuple import (
    OperatorTuple,
    SubsetMask,
    check_defect_identity,
    class_bnpq,
    defect,
    defect_bruteforce,
    defect_delta,
    dump_tuple,
    hat,
    hat1_swapped,
    hat1n,
    is_brehmer,
    is_pure,
    is_szego,
    load_tuple,
    reindex_pq,
    subset_product,
    tuple_from_json,
    tuple_to_json,
    validate_tuple,
)

JORDAN = np.array([[0, 1], [0, 0]], dtype=complex)


def commuting_tuple(n=3, d=3, cap=0.5, seed=0):
    """Polynomials in one random matrix, each scaled to norm ``cap``."""
    rng = np.random.default_rng(seed)
    a = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2 * d)
    ops = []
    for _ in range(n):
        c = rng.normal(size=3) + 1j * rng.normal(size=3)
        op = c[0] * np.eye(d) + c[1] * a + c[2] * a @ a
        ops.append(cap * op / np.linalg.norm(op, 2))
    return OperatorTuple(tuple(ops))


class TestSubsetMask:
    """Tests for the bitmask subset type."""

    def test_of_and_indices(self):
        """Test construction from indices and iteration order."""
        subset = SubsetMask.of(3, 1)
        assert subset.indices() == [1, 3]
        assert 1 in subset
        assert 2 not in subset
        assert len(subset) == 2
        assert str(subset) == "{1,3}"

    def test_full_and_complement(self):
        """Test full set, complement and removal."""
        full = SubsetMask.full(4)
        assert full.indices() == [1, 2, 3, 4]
        assert SubsetMask.of(2).complement(4).indices() == [1, 3, 4]
        assert full.without(4).max_index() == 3

    def test_all_subsets(self):
        """Test all subsets of {1..3} are listed once, starting with the empty set."""
        subsets = SubsetMask.all_subsets(3)
        assert len(subsets) == 8
        assert len(subsets[0]) == 0

    def test_rejects_zero_index(self):
        """Test indices start at 1."""
        with pytest.raises(IndexOutOfRange):
            SubsetMask.of(0)


class TestOperatorTuple:
    """Tests for tuple construction and access."""

    def test_one_based_access(self):
        """Test T[1] is the first operator."""
        t = OperatorTuple((np.eye(2), 2 * np.eye(2)))
        assert_allclose(t[2], 2 * np.eye(2))
        assert t.n == 2
        assert t.dim == 2

    def test_index_out_of_range(self):
        """Test T[0] and T[n+1] are rejected."""
        t = OperatorTuple((np.eye(2),))
        with pytest.raises(IndexOutOfRange):
            t[0]
        with pytest.raises(IndexOutOfRange):
            t[2]

    def test_shape_mismatch(self):
        """Test operators of different sizes are rejected."""
        with pytest.raises(DimensionMismatch):
            OperatorTuple((np.eye(2), np.eye(3)))

    def test_validation_report(self):
        """Test the report flags a non-commuting pair without raising."""
        t = OperatorTuple((JORDAN, JORDAN.T))
        report = validate_tuple(t)
        assert report.contractive
        assert not report.commuting
        assert report.commutators[(1, 2)] == pytest.approx(1.0)

    def test_validation_flags_non_contraction(self):
        """Test a norm above one is reported."""
        report = validate_tuple(OperatorTuple((2 * np.eye(2),)))
        assert not report.contractive
        assert report.norms == [pytest.approx(2.0)]


class TestHats:
    """Tests for the hat operations and reindexing."""

    def test_hat_removes_operator(self):
        """Test hat(T, 2) drops the second operator."""
        t = commuting_tuple(4)
        dropped = hat(t, 2)
        assert dropped.n == 3
        assert_allclose(dropped[2], t[3])

    def test_hat1n_merges_ends(self):
        """Test the (1,n) hat puts T_1 T_n first."""
        t = commuting_tuple(4)
        merged = hat1n(t)
        assert merged.n == 3
        assert_allclose(merged[1], t[1] @ t[4])
        assert_allclose(merged[3], t[3])

    def test_hat1_swapped(self):
        """Test T_n is moved into slot 1."""
        t = commuting_tuple(3)
        swapped = hat1_swapped(t)
        assert_allclose(swapped[1], t[3])
        assert_allclose(swapped[2], t[2])

    def test_reindex_pq(self):
        """Test T_p moves first and T_q last, the rest keeping their order."""
        t = commuting_tuple(4)
        s, order = reindex_pq(t, 2, 3)
        assert order == [2, 1, 4, 3]
        for k, original in enumerate(order, start=1):
            assert_allclose(s[k], t[original])

    def test_reindex_pq_rejects_bad_pair(self):
        """Test p >= q is rejected."""
        with pytest.raises(IndexOutOfRange):
            reindex_pq(commuting_tuple(3), 3, 2)

    def test_hat_of_one_tuple(self):
        """Test a 1-tuple has no hats."""
        with pytest.raises(IndexOutOfRange):
            hat(OperatorTuple((np.eye(2),)), 1)


class TestDefects:
    """Tests for Brehmer defects."""

    def test_recursion_matches_bruteforce(self):
        """Test the recursive defect equals the inclusion-exclusion sum."""
        t = commuting_tuple(3, cap=0.8, seed=4)
        for subset in SubsetMask.all_subsets(3):
            recursive = defect_delta([t[i] for i in subset], t.dim)
            assert_allclose(recursive, defect_bruteforce(t, subset), atol=1e-12)

    def test_empty_subset_is_identity(self):
        """Test the defect over the empty set is I."""
        t = commuting_tuple(2)
        assert_allclose(defect_delta([], t.dim), np.eye(t.dim))

    def test_diagonal_product_formula(self):
        """Test a diagonal tuple's defect is the product of (1 - |lambda|^2)."""
        rng = np.random.default_rng(2)
        entries = 0.9 * rng.uniform(size=(3, 4)) * np.exp(2j * np.pi * rng.uniform(size=(3, 4)))
        t = OperatorTuple(tuple(np.diag(row) for row in entries))
        expected = np.prod(1 - np.abs(entries) ** 2, axis=0)
        assert_allclose(np.diag(defect_delta(list(t.ops), t.dim)).real, expected, atol=1e-12)

    def test_defect_data_factorises(self):
        """Test basis, square root and coordinates reproduce the defect."""
        t = commuting_tuple(2, cap=0.6)
        data = defect(t, SubsetMask.full(2))
        assert data.psd
        coords = data.coordinates()
        assert coords.shape == (data.rank, t.dim)
        assert_allclose(adjoint(coords) @ coords, data.delta, atol=1e-10)

    def test_unitary_defect_is_zero(self):
        """Test a single unitary has zero defect of rank 0, whatever the sign of the round-off."""
        rng = np.random.default_rng(21)
        for _ in range(50):
            u, _ = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
            data = defect(OperatorTuple((u,)), SubsetMask.of(1))
            assert data.psd
            assert data.rank == 0
            assert spectral_norm(data.sqrt) < 1e-7

    def test_subset_product(self):
        """Test T_G is the ordered product over G."""
        t = commuting_tuple(3)
        assert_allclose(subset_product(t, SubsetMask.of(1, 3)), t[1] @ t[3])
        assert_allclose(subset_product(t, SubsetMask()), np.eye(t.dim))


class TestClasses:
    """Tests for the Szego, Brehmer, purity and (p,q) class predicates."""

    def test_jordan_pair_not_szego(self):
        """Test T_1 = T_2 = J has defect diag(-1, 1) and fails Szego on {1,2}."""
        t = OperatorTuple((JORDAN, JORDAN))
        assert_allclose(defect_delta(list(t.ops), 2), np.diag([-1.0, 1.0]))
        assert not is_szego(t)

        result = is_brehmer(t)
        assert not result
        assert result.witness == SubsetMask.of(1, 2)
        assert result.eigenvalue == pytest.approx(-1.0)

    def test_small_tuple_is_brehmer(self):
        """Test operators of norm 1/n are Brehmer and pure."""
        t = commuting_tuple(3, cap=0.3)
        assert is_brehmer(t)
        assert is_szego(t)
        assert is_pure(t)

    def test_unitary_is_not_pure(self):
        """Test a unitary has spectral radius 1."""
        assert not is_pure(OperatorTuple((np.diag([1.0, 1j]),)))

    def test_class_membership_failure_reports_hat(self):
        """Test three Jordan copies fail at the first hat."""
        t = OperatorTuple((JORDAN, JORDAN, JORDAN))
        result = class_bnpq(t, 1, 3)
        assert not result
        assert result.failing_hat == 1
        assert result.witness == SubsetMask.of(1, 2)

    def test_class_membership_for_small_tuple(self):
        """Test a small-norm tuple lies in every (p,q) class."""
        t = commuting_tuple(3, cap=0.3)
        assert class_bnpq(t, 1, 3)
        assert class_bnpq(t, 2, 3)

    def test_class_needs_three_operators(self):
        """Test n < 3 is rejected."""
        with pytest.raises(IndexOutOfRange):
            class_bnpq(commuting_tuple(2), 1, 2)


class TestDefectIdentity:
    """Tests for the identities linking the n-th, first and (1,n) hat defects."""

    def test_identities_hold_for_commuting_tuple(self):
        """Test both residuals are at round-off for every G containing 1."""
        t = commuting_tuple(4, cap=0.7, seed=5)
        for subset in SubsetMask.all_subsets(3):
            if 1 in subset:
                first, second = check_defect_identity(t, subset)
                assert first < 1e-12
                assert second < 1e-12

    def test_outside_class_is_logged(self):
        """Test residuals are still returned outside the (1,n) class, with a warning."""
        messages = []
        handler = logger.add(messages.append, level="WARNING", format="{message}")
        try:
            first, second = check_defect_identity(OperatorTuple((JORDAN, JORDAN, JORDAN)), SubsetMask.of(1))
        finally:
            logger.remove(handler)
        assert first < 1e-12
        assert second < 1e-12
        assert any("(1,n) class" in message for message in messages)

    def test_identity_needs_one_in_g(self):
        """Test G without 1 is rejected."""
        with pytest.raises(PreconditionViolated):
            check_defect_identity(commuting_tuple(3), SubsetMask.of(2))

    def test_identity_needs_g_below_n(self):
        """Test G containing n is rejected."""
        with pytest.raises(IndexOutOfRange):
            check_defect_identity(commuting_tuple(3), SubsetMask.of(1, 3))


class TestTupleJson:
    """Tests for the tuple JSON format."""

    def test_file_round_trip(self):
        """Test dump_tuple and load_tuple preserve every entry."""
        t = commuting_tuple(3)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "t.json")
            dump_tuple(t, path)
            loaded = load_tuple(path)
        assert loaded.n == 3
        for i in range(1, 4):
            assert_allclose(loaded[i], t[i], atol=1e-15)

    def test_pair_encoding(self):
        """Test entries are written as [re, im] pairs."""
        payload = tuple_to_json(OperatorTuple((np.array([[1 + 2j]]),)))
        assert b'"dim": 1' in payload or b'"dim":1' in payload
        assert tuple_from_json(payload)[1][0, 0] == 1 + 2j

    def test_malformed_json(self):
        """Test broken JSON raises ParseError."""
        with pytest.raises(ParseError):
            tuple_from_json(b"{not json")

    def test_missing_fields(self):
        """Test a payload without ops raises ParseError."""
        with pytest.raises(ParseError):
            tuple_from_json(b'{"dim": 1, "n": 1}')

    def test_wrong_shape(self):
        """Test a matrix of the wrong size raises ParseError."""
        with pytest.raises(ParseError):
            tuple_from_json(b'{"dim": 2, "n": 1, "ops": [[[[1, 0]]]]}')

    def test_missing_file(self):
        """Test an unreadable path raises ParseError."""
        with pytest.raises(ParseError):
            load_tuple("/nonexistent/tuple.json")
