"""Gamma, U', its intertwining lift, the completed unitary U and the transfer-function pair (Phi, Psi).

Everything here acts on a tuple S (the compressed tuple on ran Q) and a subset G of {1..n-1}
containing 1. The working space K'_G is D_{S^n,G} (+) D_{S^1,G}, written in the orthonormal range
bases of the two defect operators, so vectors are stacked coordinate pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from dilatin.DataTypes import DEFAULT_TOLERANCES, Tolerances
from dilatin.Modules.HardySpace import TruncatedHardy, embed_coeff, mult_op
from dilatin.Modules.LinAlg import (
    ClampLog,
    adjoint,
    complement_basis,
    isometry_defect,
    least_squares_map,
    range_basis,
    spectral_norm,
)
from dilatin.Modules.ManualException import (
    ClassViolation,
    DefectIdentityViolated,
    DimensionMismatch,
    IllConditioned,
    LiftFailed,
    NotProjection,
    NotUnitary,
    PreconditionViolated,
)
from dilatin.Modules.OperatorTuple import (
    DefectData,
    OperatorTuple,
    SubsetMask,
    check_defect_identity,
    defect_of_ops,
    hat,
    hat1_swapped,
    hat1n,
)


@dataclass
class DefectTriple:
    """Defects of the n-th, first and (1,n) hats on one subset G."""

    last: DefectData
    first: DefectData
    joint: DefectData

    @property
    def ambient_dim(self) -> int:
        return self.last.rank + self.first.rank


@dataclass
class GammaData:
    gamma: np.ndarray
    src_rank: int
    dst_dim: int
    residual: float
    isometry_defect: float
    defects: DefectTriple


@dataclass
class UPrimeData:
    uprime: np.ndarray
    q_basis: np.ndarray
    qtilde_basis: np.ndarray
    spanning: np.ndarray
    spanning_image: np.ndarray
    residual: float
    isometry_defect: float


@dataclass
class LiftData:
    h_basis: np.ndarray
    htilde_basis: np.ndarray
    u_dd: np.ndarray
    residual: float
    welldef_residual: float
    intertwining: list[float] = field(default_factory=list)
    rounds: int = 0


@dataclass
class BCLData:
    ambient_dim: int
    P: np.ndarray
    U: np.ndarray
    phi0: np.ndarray
    phi1: np.ndarray
    psi0: np.ndarray
    psi1: np.ndarray

    def phi(self, z1: complex) -> np.ndarray:
        return self.phi0 + z1 * self.phi1

    def psi(self, z1: complex) -> np.ndarray:
        return self.psi0 + z1 * self.psi1

    def identity_residuals(self) -> dict[str, float]:
        eye = np.eye(self.ambient_dim)
        return {
            "phi0*psi0": spectral_norm(self.phi0 @ self.psi0),
            "phi1*psi1": spectral_norm(self.phi1 @ self.psi1),
            "phi0*psi1+phi1*psi0": spectral_norm(self.phi0 @ self.psi1 + self.phi1 @ self.psi0 - eye),
        }

    def colligation(self) -> np.ndarray:
        """[[U*P, U*i], [i*, 0]] with i the inclusion of ran(I - P); a unitary realising U*(P + z P^perp)."""
        inclusion = range_basis(np.eye(self.ambient_dim) - self.P)
        k = inclusion.shape[1]
        top = np.hstack([adjoint(self.U) @ self.P, adjoint(self.U) @ inclusion])
        bottom = np.hstack([adjoint(inclusion), np.zeros((k, k), dtype=np.complex128)])
        return np.vstack([top, bottom])


def defect_triple(
    s: OperatorTuple, subset: SubsetMask, tolerances: Tolerances = DEFAULT_TOLERANCES, clamp_log: ClampLog = None
) -> DefectTriple:
    members = subset.indices()
    last = defect_of_ops([hat(s, s.n)[i] for i in members], s.dim, tolerances, clamp_log, f"D_last{subset}")
    first = defect_of_ops([hat1_swapped(s)[i] for i in members], s.dim, tolerances, clamp_log, f"D_first{subset}")
    joint = defect_of_ops([hat1n(s)[i] for i in members], s.dim, tolerances, clamp_log, f"D_joint{subset}")

    for name, data in (("n-th hat", last), ("first hat", first), ("(1,n) hat", joint)):
        if not data.psd:
            raise ClassViolation(
                f"Defect of the {name} is not positive", subset=str(subset), eigenvalue=f"{data.min_eigenvalue:.3e}"
            )

    return DefectTriple(last=last, first=first, joint=joint)


def _check_subset(s: OperatorTuple, subset: SubsetMask):
    if 1 not in subset:
        raise PreconditionViolated("This construction needs 1 in G", subset=str(subset))
    if subset.max_index() > s.n - 1:
        raise PreconditionViolated("G must lie in {1..n-1}", subset=str(subset), n=s.n)


def stacked_pair(s: OperatorTuple, defects: DefectTriple) -> tuple[np.ndarray, np.ndarray]:
    """Spanning matrices of Q_G and its image: (D_n h, D_1 S1* h) and (D_n Sn* h, D_1 h)."""
    last, first = defects.last.coordinates(), defects.first.coordinates()
    q = np.vstack([last, first @ adjoint(s[1])])
    q_tilde = np.vstack([last @ adjoint(s[s.n]), first])
    return q, q_tilde


def build_gamma(
    s: OperatorTuple, subset: SubsetMask, tolerances: Tolerances = DEFAULT_TOLERANCES, clamp_log: ClampLog = None
) -> GammaData:
    _check_subset(s, subset)

    scale = max(1.0, spectral_norm(s[1]), spectral_norm(s[s.n]))
    identity_residuals = check_defect_identity(s, subset)
    if max(identity_residuals) > tolerances.iso * scale:
        raise DefectIdentityViolated(
            "Defect identities fail on this subset",
            subset=str(subset),
            residuals=", ".join(f"{r:.3e}" for r in identity_residuals),
        )

    defects = defect_triple(s, subset, tolerances, clamp_log)
    source = defects.joint.coordinates()
    target, _ = stacked_pair(s, defects)

    gamma, residual = least_squares_map(source, target, tolerances.rank)
    iso = isometry_defect(gamma)
    if residual > tolerances.iso or iso > tolerances.iso:
        raise IllConditioned(
            "Gamma solve is inconsistent", subset=str(subset), residual=f"{residual:.3e}", isometry=f"{iso:.3e}"
        )

    logger.debug(f"Gamma on G={subset}: {gamma.shape[0]}x{gamma.shape[1]}, residual {residual:.2e}")

    return GammaData(
        gamma=gamma,
        src_rank=defects.joint.rank,
        dst_dim=defects.ambient_dim,
        residual=residual,
        isometry_defect=iso,
        defects=defects,
    )


def build_uprime(
    s: OperatorTuple,
    subset: SubsetMask,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    defects: DefectTriple | None = None,
) -> UPrimeData:
    _check_subset(s, subset)
    defects = defects or defect_triple(s, subset, tolerances)

    q, q_tilde = stacked_pair(s, defects)
    uprime, residual = least_squares_map(q, q_tilde, tolerances.rank)

    q_basis = range_basis(q, tolerances.rank)
    qtilde_basis = range_basis(q_tilde, tolerances.rank)
    if q_basis.shape[1] != qtilde_basis.shape[1]:
        raise IllConditioned(
            "Q_G and its image have different dimensions", source=q_basis.shape[1], image=qtilde_basis.shape[1]
        )

    iso = isometry_defect(uprime @ q_basis)
    if residual > tolerances.iso or iso > tolerances.iso:
        raise IllConditioned(
            "U' is not isometric on Q_G", subset=str(subset), residual=f"{residual:.3e}", isometry=f"{iso:.3e}"
        )

    return UPrimeData(
        uprime=uprime,
        q_basis=q_basis,
        qtilde_basis=qtilde_basis,
        spanning=q,
        spanning_image=q_tilde,
        residual=residual,
        isometry_defect=iso,
    )


def douglas_unitary(coords: np.ndarray, op: np.ndarray, tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """W on ran(coords) with W*(coords h) = coords op* h."""
    w_adjoint, residual = least_squares_map(coords, coords @ adjoint(op), tolerances.rank)
    w = adjoint(w_adjoint)

    defect_norm = spectral_norm(adjoint(w) @ w - np.eye(w.shape[0])) if w.size else 0.0
    if residual > tolerances.iso or defect_norm > tolerances.iso:
        raise NotUnitary("Defect-space map is not unitary", residual=f"{residual:.3e}", defect=f"{defect_norm:.3e}")

    return w


def coextension_unitaries(
    s: OperatorTuple, subset: SubsetMask, defects: DefectTriple, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> dict[int, np.ndarray]:
    """W'_j = W_{j,n} (+) W_{j,1} on K'_G for every j in {1..n-1} outside G.

    At finite dimension the minimal unitary co-extension of a unitary is the operator itself, so
    the hook returns the defect-space unitaries unchanged.
    """
    complement = subset.complement(s.n - 1)
    last, first = defects.last.coordinates(), defects.first.coordinates()

    unitaries = {}
    for j in complement:
        w_last = douglas_unitary(last, s[j], tolerances)
        w_first = douglas_unitary(first, s[j], tolerances)
        unitaries[j] = _direct_sum(w_last, w_first)

    return unitaries


def _direct_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    result = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]), dtype=np.complex128)
    result[: a.shape[0], : a.shape[1]] = a
    result[a.shape[0] :, a.shape[1] :] = b
    return result


def lift_uprime(
    data: UPrimeData, w_ops: list[np.ndarray], tolerances: Tolerances = DEFAULT_TOLERANCES
) -> LiftData:
    """Extend U' from Q_G to the smallest subspace reducing every W, intertwining the W* on it.

    Spanning vectors W^word q are sent to W^word U' q. The closure grows one word letter per round
    and stops once the dimension is unchanged for two consecutive rounds.
    """
    ambient = data.uprime.shape[0]
    letters = []
    for w in w_ops:
        if w.shape != (ambient, ambient):
            raise DimensionMismatch("W operator does not act on K'_G", shape=w.shape, ambient=ambient)
        letters.extend([w, adjoint(w)])

    source = data.q_basis
    image = data.uprime @ data.q_basis
    all_source, all_image = [source], [image]
    frontier_source, frontier_image = source, image

    current = source
    dimension = source.shape[1]
    stable_rounds = 0
    rounds = 0
    cap = 4 * max(ambient, 1)

    while letters and stable_rounds < 2 and rounds < cap and frontier_source.shape[1]:
        rounds += 1
        new_source = np.hstack([w @ frontier_source for w in letters])
        new_image = np.hstack([w @ frontier_image for w in letters])
        all_source.append(new_source)
        all_image.append(new_image)

        # Carry forward only the directions this round added.
        leftover = new_source - current @ (adjoint(current) @ new_source)
        _, s, vh = np.linalg.svd(leftover, full_matrices=False)
        keep = s > tolerances.rank * max(spectral_norm(new_source), 1.0)
        combine = adjoint(vh[keep]) / s[keep]
        frontier_source, frontier_image = new_source @ combine, new_image @ combine

        basis = range_basis(np.hstack(all_source), tolerances.rank)
        current = basis
        if basis.shape[1] == dimension:
            stable_rounds += 1
        else:
            stable_rounds = 0
            dimension = basis.shape[1]

    if letters and stable_rounds < 2 and frontier_source.shape[1]:
        raise LiftFailed("Reducing closure did not stabilise", word_length=rounds, dimension=dimension)

    spanning = np.hstack(all_source)
    spanning_image = np.hstack(all_image)

    u_dd, welldef = least_squares_map(spanning, spanning_image, tolerances.rank)
    h_basis = range_basis(spanning, tolerances.rank)
    htilde_basis = range_basis(spanning_image, tolerances.rank)
    iso = isometry_defect(u_dd @ h_basis)

    intertwining = [
        spectral_norm(u_dd @ adjoint(w) @ h_basis - adjoint(w) @ u_dd @ h_basis) for w in w_ops
    ]

    worst = max([welldef, iso] + intertwining)
    if worst > tolerances.iso:
        raise LiftFailed(
            "Lifted U'' fails its residual checks",
            word_length=rounds,
            welldef=f"{welldef:.3e}",
            isometry=f"{iso:.3e}",
            intertwining=f"{max(intertwining, default=0.0):.3e}",
        )

    return LiftData(
        h_basis=h_basis,
        htilde_basis=htilde_basis,
        u_dd=u_dd,
        residual=iso,
        welldef_residual=welldef,
        intertwining=intertwining,
        rounds=rounds,
    )


def complete_unitary_pair(lift: LiftData, ambient: int, tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Unitary U on K'_G equal to U'' on H_G; complements are paired by their fixed orthonormal bases."""
    h, h_tilde = lift.h_basis, lift.htilde_basis
    if h.shape[1] != h_tilde.shape[1] or h.shape[0] != ambient:
        raise DimensionMismatch("H_G and its image differ in dimension", h=h.shape, h_tilde=h_tilde.shape)

    if h.shape[1] == 0:
        return np.eye(ambient, dtype=np.complex128)

    image = lift.u_dd @ h
    complement, complement_tilde = complement_basis(h), complement_basis(range_basis(image, tolerances.rank))
    unitary = image @ adjoint(h) + complement_tilde @ adjoint(complement)

    defect_norm = spectral_norm(adjoint(unitary) @ unitary - np.eye(ambient))
    if defect_norm > tolerances.iso:
        raise NotUnitary("Completed U is not unitary", defect=f"{defect_norm:.3e}")

    return unitary


def bcl_pair(unitary: np.ndarray, projection: np.ndarray, tolerances: Tolerances = DEFAULT_TOLERANCES) -> BCLData:
    """Phi(z) = (P + z P^perp) U and Psi(z) = U* (P^perp + z P)."""
    if unitary.shape != projection.shape:
        raise DimensionMismatch("U and P act on different spaces", u=unitary.shape, p=projection.shape)

    ambient = unitary.shape[0]
    eye = np.eye(ambient, dtype=np.complex128)

    projection_defect = max(
        spectral_norm(projection @ projection - projection), spectral_norm(projection - adjoint(projection))
    )
    if projection_defect > tolerances.iso:
        raise NotProjection("P is not an orthogonal projection", defect=f"{projection_defect:.3e}")

    unitary_defect = spectral_norm(adjoint(unitary) @ unitary - eye)
    if unitary_defect > tolerances.iso:
        raise NotUnitary("U is not unitary", defect=f"{unitary_defect:.3e}")

    complement = eye - projection

    return BCLData(
        ambient_dim=ambient,
        P=projection,
        U=unitary,
        phi0=projection @ unitary,
        phi1=complement @ unitary,
        psi0=adjoint(unitary) @ complement,
        psi1=adjoint(unitary) @ projection,
    )


def first_summand_projection(defects: DefectTriple) -> np.ndarray:
    """Projection of K'_G onto the D_{S^1,G} summand."""
    diagonal = np.concatenate([np.zeros(defects.last.rank), np.ones(defects.first.rank)])
    return np.diag(diagonal).astype(np.complex128)


def factorization_check(
    s: OperatorTuple,
    gamma: np.ndarray,
    bcl: BCLData,
    space: TruncatedHardy,
    pi_tilde: np.ndarray,
) -> tuple[float, float]:
    """Residuals of (I(x)Gamma) Pi S1* = M_Phi* (I(x)Gamma) Pi and the S_n / M_Psi analogue.

    ``space`` carries coefficient dimension rank D_{S^{1n},G}; rows are restricted to degrees <= N-1.
    """
    embedded = embed_coeff(space.with_coeff_dim(bcl.ambient_dim), gamma).matrix @ pi_tilde
    ambient_space = space.with_coeff_dim(bcl.ambient_dim)
    m_phi = mult_op(ambient_space, bcl.phi0, bcl.phi1).matrix
    m_psi = mult_op(ambient_space, bcl.psi0, bcl.psi1).matrix

    rows = ambient_space.trusted(1)
    phi_residual = spectral_norm((embedded @ adjoint(s[1]) - adjoint(m_phi) @ embedded)[rows])
    psi_residual = spectral_norm((embedded @ adjoint(s[s.n]) - adjoint(m_psi) @ embedded)[rows])

    return phi_residual, psi_residual
