"""Tests for the defect-space transfer construction."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dilatin.DataTypes import GenSpec
from dilatin.Modules.Generators import gen_poly_of_one
from dilatin.Modules.HardySpace import TruncatedHardy, canonical_dilation_coeff
from dilatin.Modules.LinAlg import adjoint, isometry_defect, spectral_norm
from dilatin.Modules.ManualException import NotProjection, NotUnitary, PreconditionViolated
from dilatin.Modules.OperatorTuple import OperatorTuple, SubsetMask, hat1n
from dilatin.Modules.Transfer import (
    bcl_pair,
    build_gamma,
    build_uprime,
    coextension_unitaries,
    complete_unitary_pair,
    douglas_unitary,
    factorization_check,
    first_summand_projection,
    lift_uprime,
    stacked_pair,
)


def commuting_tuple(n=3, cap=0.3, seed=0):
    return gen_poly_of_one(GenSpec(seed=seed, n=n, d=3, radius_cap=cap, require_class=False)).t


def random_unitary(d, seed=0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return q


def transfer_chain(s, subset):
    gamma = build_gamma(s, subset)
    uprime = build_uprime(s, subset, defects=gamma.defects)
    unitaries = coextension_unitaries(s, subset, gamma.defects)
    lift = lift_uprime(uprime, list(unitaries.values()))
    unitary = complete_unitary_pair(lift, gamma.defects.ambient_dim)
    return gamma, uprime, lift, unitary


class TestGamma:
    """Tests for the isometry Gamma_G."""

    def test_gamma_is_isometric(self):
        """Test Gamma maps D_1n h onto the stacked pair isometrically."""
        s = commuting_tuple()
        subset = SubsetMask.of(1, 2)
        gamma = build_gamma(s, subset)
        assert gamma.isometry_defect < 1e-8
        assert gamma.residual < 1e-8

        target, _ = stacked_pair(s, gamma.defects)
        assert_allclose(gamma.gamma @ gamma.defects.joint.coordinates(), target, atol=1e-8)

    def test_dimensions(self):
        """Test source and target sizes follow the defect ranks."""
        s = commuting_tuple(seed=3)
        gamma = build_gamma(s, SubsetMask.of(1))
        assert gamma.gamma.shape == (gamma.dst_dim, gamma.src_rank)
        assert gamma.dst_dim == gamma.defects.last.rank + gamma.defects.first.rank

    def test_needs_one_in_subset(self):
        """Test G without 1 is rejected."""
        with pytest.raises(PreconditionViolated):
            build_gamma(commuting_tuple(), SubsetMask.of(2))

    def test_subset_below_n(self):
        """Test G containing n is rejected."""
        with pytest.raises(PreconditionViolated):
            build_gamma(commuting_tuple(), SubsetMask.of(1, 3))


class TestUPrime:
    """Tests for U' on Q_G and its lift."""

    def test_uprime_maps_pair(self):
        """Test U'(D_n h, D_1 S_1* h) = (D_n S_n* h, D_1 h)."""
        s = commuting_tuple(seed=1)
        uprime = build_uprime(s, SubsetMask.of(1, 2))
        assert_allclose(uprime.uprime @ uprime.spanning, uprime.spanning_image, atol=1e-8)
        assert uprime.isometry_defect < 1e-8
        assert uprime.q_basis.shape[1] == uprime.qtilde_basis.shape[1]

    def test_lift_without_unitaries_is_uprime(self):
        """Test the lift is U' itself when G covers {1..n-1}."""
        s = commuting_tuple(seed=1)
        subset = SubsetMask.of(1, 2)
        uprime = build_uprime(s, subset)
        lift = lift_uprime(uprime, [])
        assert lift.rounds == 0
        assert lift.intertwining == []
        assert_allclose(lift.u_dd @ uprime.q_basis, uprime.uprime @ uprime.q_basis, atol=1e-8)

    def test_no_unitaries_when_subset_is_full(self):
        """Test no W_j is needed when nothing in {1..n-1} lies outside G."""
        s = commuting_tuple()
        subset = SubsetMask.of(1, 2)
        gamma = build_gamma(s, subset)
        assert coextension_unitaries(s, subset, gamma.defects) == {}

    def test_off_subset_operator_must_be_unitary_on_defects(self):
        """Test a strict contraction off G has no unitary on the defect spaces."""
        s = commuting_tuple(seed=2)
        subset = SubsetMask.of(1)
        gamma = build_gamma(s, subset)
        with pytest.raises(NotUnitary):
            coextension_unitaries(s, subset, gamma.defects)


class TestDouglasUnitary:
    """Tests for the defect-space unitary solve."""

    def test_recovers_unitary(self):
        """Test W = U when the coordinates are the identity."""
        u = random_unitary(3)
        assert_allclose(douglas_unitary(np.eye(3), u), u, atol=1e-12)

    def test_rejects_contraction(self):
        """Test a strict contraction gives NotUnitary."""
        with pytest.raises(NotUnitary):
            douglas_unitary(np.eye(2), 0.5 * np.eye(2))


class TestUnitaryCompletion:
    """Tests for the completed unitary and the transfer pair."""

    def test_completion_extends_uprime(self):
        """Test U is unitary and agrees with U' on Q_G."""
        s = commuting_tuple(seed=4)
        _, uprime, _, unitary = transfer_chain(s, SubsetMask.of(1, 2))
        assert isometry_defect(unitary) < 1e-8
        assert_allclose(unitary @ uprime.q_basis, uprime.uprime @ uprime.q_basis, atol=1e-8)

    def test_first_summand_projection(self):
        """Test P projects onto the trailing D_1 coordinates."""
        gamma = build_gamma(commuting_tuple(), SubsetMask.of(1, 2))
        projection = first_summand_projection(gamma.defects)
        last, first = gamma.defects.last.rank, gamma.defects.first.rank
        assert_allclose(np.diag(projection).real, [0.0] * last + [1.0] * first)

    def test_bcl_identities(self):
        """Test Phi Psi = z I coefficientwise and the colligation is unitary."""
        d = 4
        projection = np.diag([1.0, 1.0, 0.0, 0.0]).astype(complex)
        bcl = bcl_pair(random_unitary(d, seed=5), projection)
        for residual in bcl.identity_residuals().values():
            assert residual < 1e-12

        z = np.exp(0.7j)
        assert_allclose(bcl.phi(z) @ bcl.psi(z), z * np.eye(d), atol=1e-12)

        colligation = bcl.colligation()
        assert colligation.shape == (d + 2, d + 2)
        assert isometry_defect(colligation) < 1e-12

    def test_bcl_rejects_non_projection(self):
        """Test P = I/2 is rejected."""
        with pytest.raises(NotProjection):
            bcl_pair(np.eye(2, dtype=complex), 0.5 * np.eye(2, dtype=complex))

    def test_bcl_rejects_non_unitary(self):
        """Test U = 2I is rejected."""
        with pytest.raises(NotUnitary):
            bcl_pair(2 * np.eye(2, dtype=complex), np.eye(2, dtype=complex))


class TestFactorization:
    """Tests for the factorization of the embedded canonical dilation."""

    def test_phi_and_psi_factor(self):
        """Test (I(x)Gamma) Pi intertwines S_1*, S_n* with M_Phi*, M_Psi* below the top degree."""
        s = commuting_tuple(seed=6)
        subset = SubsetMask.of(1, 2)
        gamma, _, _, unitary = transfer_chain(s, subset)
        bcl = bcl_pair(unitary, first_summand_projection(gamma.defects))

        joint = gamma.defects.joint
        space = TruncatedHardy(vars=2, degree=4, coeff_dim=joint.rank)
        joint_tuple = OperatorTuple(tuple(hat1n(s)[i] for i in subset.indices()))
        pi_tilde = canonical_dilation_coeff(joint_tuple, joint.coordinates(), space)

        phi_residual, psi_residual = factorization_check(s, gamma.gamma, bcl, space, pi_tilde)
        assert phi_residual < 1e-8
        assert psi_residual < 1e-8

    def test_pi_tilde_is_nearly_isometric(self):
        """Test the joint canonical dilation loses little beyond degree 4."""
        s = commuting_tuple(seed=6)
        subset = SubsetMask.of(1, 2)
        joint = build_gamma(s, subset).defects.joint
        space = TruncatedHardy(vars=2, degree=8, coeff_dim=joint.rank)
        joint_tuple = OperatorTuple(tuple(hat1n(s)[i] for i in subset.indices()))
        pi_tilde = canonical_dilation_coeff(joint_tuple, joint.coordinates(), space)
        assert spectral_norm(adjoint(pi_tilde) @ pi_tilde - np.eye(s.dim)) < 1e-2
