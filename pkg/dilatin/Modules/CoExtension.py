"""Co-extension of a tuple in the (1,n) class: Q-compressions, per-subset blocks and their direct sum."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from dilatin.DataTypes import DEFAULT_TOLERANCES, BlockKind, Tolerances
from dilatin.Modules.HardySpace import (
    TruncatedHardy,
    canonical_dilation_coeff,
    const_op,
    embed_coeff,
    mult_op,
    shift,
)
from dilatin.Modules.LinAlg import (
    ClampLog,
    adjoint,
    block_diag,
    least_squares_map,
    psd_sqrt,
    range_basis,
    spectral_norm,
    spectral_radius,
)
from dilatin.Modules.ManualException import ClassViolation, IllConditioned, IsometryDefect, SlowConvergence
from dilatin.Modules.OperatorTuple import (
    OperatorTuple,
    SubsetMask,
    class_bnpq,
    defect_of_ops,
    hat1n,
    subset_product,
)
from dilatin.Modules.Transfer import (
    BCLData,
    GammaData,
    LiftData,
    bcl_pair,
    build_gamma,
    build_uprime,
    coextension_unitaries,
    complete_unitary_pair,
    douglas_unitary,
    factorization_check,
    first_summand_projection,
    lift_uprime,
)
from dilatin.Modules.Verification import ResidualLedger

# Eigenvalues of Q cluster at 0 and 1 (the limit is the projection onto the unitary part of X).
Q_RANK_TOL = 1e-4


@dataclass
class QCompression:
    Q: np.ndarray
    ran_basis: np.ndarray
    coords: np.ndarray
    tilde_ops: OperatorTuple | None
    iters: int
    conv_residual: float
    converged: bool
    douglas_residual: float = 0.0
    coisometry_defect: float = 0.0

    @property
    def rank(self) -> int:
        return self.ran_basis.shape[1]


@dataclass
class SubsetBlock:
    G: SubsetMask
    kind: str
    space: TruncatedHardy | None
    pi: np.ndarray
    V: dict[int, np.ndarray] = field(default_factory=dict)
    V0: np.ndarray | None = None
    ledger: ResidualLedger = field(default_factory=ResidualLedger)
    gamma: GammaData | None = None
    lift: LiftData | None = None
    bcl: BCLData | None = None
    radius: float = 0.0

    @property
    def dim(self) -> int:
        return self.pi.shape[0]

    def trusted(self, margin: int) -> np.ndarray:
        if self.space is None or self.space.vars == 0:
            return np.arange(self.dim)
        return self.space.trusted(margin)


@dataclass
class CoExtensionModel:
    t: OperatorTuple
    degree: int
    blocks: list[SubsetBlock]
    pi: np.ndarray
    V: list[np.ndarray]
    V0: np.ndarray
    offsets: list[int]
    ledger: ResidualLedger
    tol_iso: float

    @property
    def dim(self) -> int:
        return self.pi.shape[0]

    def op(self, j: int) -> np.ndarray:
        """V_j for j in 1..n, V_0 for j = 0."""
        return self.V0 if j == 0 else self.V[j - 1]

    def trusted(self, margin: int = 1) -> np.ndarray:
        return np.concatenate(
            [block.trusted(margin) + offset for block, offset in zip(self.blocks, self.offsets)]
        ).astype(int)

    def z1_top_rows(self, depth: int) -> np.ndarray:
        """Coordinates at z_1 degree above N - depth inside blocks whose first variable is z_1."""
        rows = []
        for block, offset in zip(self.blocks, self.offsets):
            if block.kind == BlockKind.one_in_g:
                mask = block.space.multi_indices[:, 0] > block.space.degree - depth
                rows.append(block.space.flat_indices(mask) + offset)
        return np.concatenate(rows).astype(int) if rows else np.zeros(0, dtype=int)

    def top_rows(self, depth: int) -> np.ndarray:
        """Coordinates where some Hardy variable has degree above N - depth."""
        rows = []
        for block, offset in zip(self.blocks, self.offsets):
            if block.space is not None and block.space.vars:
                mask = np.any(block.space.multi_indices > block.space.degree - depth, axis=1)
                rows.append(block.space.flat_indices(mask) + offset)
        return np.concatenate(rows).astype(int) if rows else np.zeros(0, dtype=int)


def q_limit(
    t: OperatorTuple,
    gbar: SubsetMask,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    max_iters: int | None = None,
    compress: OperatorTuple | None = None,
    strict: bool = False,
    clamp_log: ClampLog | None = None,
) -> QCompression:
    """Q = lim (X^m X^{*m})^{1/2} for X the product of T over Gbar, and the compressed tuple on ran Q.

    The sequence A_m = X^m X^{*m} is followed along m = 2^j. ``compress`` (default ``t``) is the
    tuple whose compressions S_j with S_j* Q = Q T_j* are returned.
    """
    max_iters = max_iters or tolerances.max_iters
    x = subset_product(t, gbar)
    eye = np.eye(t.dim, dtype=np.complex128)

    power = x
    previous = eye
    current = x @ adjoint(x)
    m = 1
    residual = spectral_norm(current - previous)

    while residual > tolerances.conv and 2 * m <= max_iters:
        power = power @ power
        m *= 2
        previous, current = current, power @ adjoint(power)
        residual = spectral_norm(current - previous)

    converged = residual <= tolerances.conv
    if not converged:
        if strict:
            raise SlowConvergence("Q iteration did not settle", gbar=str(gbar), residual=f"{residual:.3e}", iters=m)
        logger.warning(f"Q iteration for Gbar={gbar} stopped at m={m} with residual {residual:.3e}; averaging")
        current = (current + previous) / 2

    q = psd_sqrt(current, tolerances.clamp, clamp_log, site=f"Q{gbar}", tol_eig=tolerances.eig)
    if spectral_norm(q) > Q_RANK_TOL:
        basis = range_basis(q, max(tolerances.rank, Q_RANK_TOL))
    else:
        basis = np.zeros((t.dim, 0), dtype=np.complex128)
    coords = adjoint(basis) @ q

    if basis.shape[1] == 0:
        return QCompression(q, basis, coords, None, m, residual, converged)

    target = compress or t

    def compressed(op: np.ndarray) -> tuple[np.ndarray, float]:
        s_adjoint, douglas = least_squares_map(coords, coords @ adjoint(op), tolerances.rank)
        return adjoint(s_adjoint), douglas

    tilde, douglas_worst = [], 0.0
    for op in target.ops:
        s, douglas = compressed(op)
        tilde.append(s)
        douglas_worst = max(douglas_worst, douglas)

    coisometry = 0.0
    for i in gbar:
        r, douglas = compressed(t[i])
        douglas_worst = max(douglas_worst, douglas)
        coisometry = max(coisometry, spectral_norm(r @ adjoint(r) - np.eye(r.shape[0])))

    if douglas_worst > tolerances.iso:
        raise IllConditioned("Douglas solve on ran Q is inconsistent", gbar=str(gbar), residual=f"{douglas_worst:.3e}")

    return QCompression(
        Q=q,
        ran_basis=basis,
        coords=coords,
        tilde_ops=OperatorTuple(tuple(tilde)),
        iters=m,
        conv_residual=residual,
        converged=converged,
        douglas_residual=douglas_worst,
        coisometry_defect=coisometry,
    )


def _empty_block(subset: SubsetMask, dim: int) -> SubsetBlock:
    return SubsetBlock(G=subset, kind=BlockKind.empty, space=None, pi=np.zeros((0, dim), dtype=np.complex128))


def _intertwining(block: SubsetBlock, s: OperatorTuple, margin: int = 1) -> list[float]:
    rows = block.trusted(margin)
    return [
        spectral_norm((block.pi @ adjoint(s[j]) - adjoint(block.V[j]) @ block.pi)[rows]) for j in range(1, s.n + 1)
    ]


def build_block_one_in_g(
    s: OperatorTuple,
    subset: SubsetMask,
    degree: int,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    clamp_log: ClampLog | None = None,
) -> SubsetBlock:
    """Block for 1 in G: transfer-function multipliers in z_1, shifts, and I (x) W_j off G.

    ``pi`` maps the coordinates of ran Q (the space of ``s``) into the block.
    """
    n = s.n
    membership = class_bnpq(s, 1, n, tolerances.clamp)
    if not membership:
        raise ClassViolation(
            "Compressed tuple left the (1,n) class",
            subset=str(subset),
            failing_hat=membership.failing_hat,
            witness=str(membership.witness),
        )

    gamma = build_gamma(s, subset, tolerances, clamp_log)
    defects = gamma.defects
    if defects.joint.rank == 0:
        return _empty_block(subset, s.dim)

    uprime = build_uprime(s, subset, tolerances, defects)
    unitaries = coextension_unitaries(s, subset, defects, tolerances)
    lift = lift_uprime(uprime, list(unitaries.values()), tolerances)
    unitary = complete_unitary_pair(lift, defects.ambient_dim, tolerances)
    projection = first_summand_projection(defects)
    bcl = bcl_pair(unitary, projection, tolerances)

    members = subset.indices()
    joint_space = TruncatedHardy(vars=len(members), degree=degree, coeff_dim=defects.joint.rank)
    joint_tuple = OperatorTuple(tuple(hat1n(s)[i] for i in members))
    pi_tilde = canonical_dilation_coeff(joint_tuple, defects.joint.coordinates(), joint_space)

    basis = lift.h_basis
    space = joint_space.with_coeff_dim(basis.shape[1])
    pi = embed_coeff(space, adjoint(basis) @ gamma.gamma, tolerances.iso).matrix @ pi_tilde

    compress = adjoint(basis)
    eye = np.eye(defects.ambient_dim)
    p, p_perp, u = bcl.P, eye - bcl.P, bcl.U
    V = {
        1: mult_op(space, compress @ p @ u @ basis, compress @ p_perp @ u @ basis).matrix,
        n: mult_op(space, compress @ adjoint(u) @ p_perp @ basis, compress @ adjoint(u) @ p @ basis).matrix,
    }
    for j, w in unitaries.items():
        V[j] = const_op(space, compress @ w @ basis).matrix
    for i, m in enumerate(members[1:], start=2):
        V[m] = shift(space, i).matrix

    block = SubsetBlock(
        G=subset,
        kind=BlockKind.one_in_g,
        space=space,
        pi=pi,
        V=V,
        V0=shift(space, 1).matrix,
        gamma=gamma,
        lift=lift,
        bcl=bcl,
        radius=max(spectral_radius(op) for op in joint_tuple.ops),
    )

    ledger = block.ledger
    context = f"G={subset}"
    ledger.add("gamma_isometry", "Gamma_G is isometric", gamma.isometry_defect, tolerances.iso, context)
    ledger.add("uprime_isometry", "U' is isometric on Q_G", uprime.isometry_defect, tolerances.iso, context)
    ledger.add("lift_welldefined", "U'' is well defined", lift.welldef_residual, tolerances.iso, context)
    for j, residual in zip(unitaries, lift.intertwining):
        ledger.add(f"lift_intertwining[{j}]", "U'' intertwines W_j*", residual, tolerances.iso, context)
    for name, residual in bcl.identity_residuals().items():
        ledger.add(f"bcl:{name}", "Phi Psi = z_1 I", residual, tolerances.iso, context)
    colligation = bcl.colligation()
    ledger.add(
        "bcl:colligation_unitary",
        "degree-one colligation is unitary",
        spectral_norm(adjoint(colligation) @ colligation - np.eye(colligation.shape[0])),
        tolerances.iso,
        context,
    )

    phi_residual, psi_residual = factorization_check(s, gamma.gamma, bcl, joint_space, pi_tilde)
    ledger.add("factorization:phi", "(I(x)Gamma) Pi S_1* = M_Phi* (I(x)Gamma) Pi", phi_residual, tolerances.iso,
               context)
    ledger.add("factorization:psi", "(I(x)Gamma) Pi S_n* = M_Psi* (I(x)Gamma) Pi", psi_residual, tolerances.iso,
               context)
    for j, residual in enumerate(_intertwining(block, s), start=1):
        ledger.add(f"block_intertwining[{j}]", "Pi_G S_j* = V_j* Pi_G", residual, tolerances.iso, context)

    return block


def build_block_one_not_in_g(
    s: OperatorTuple,
    subset: SubsetMask,
    degree: int,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    clamp_log: ClampLog | None = None,
) -> SubsetBlock:
    """Block for 1 not in G: shifts on G and constant unitaries U_j for j in Gbar and j = n."""
    n = s.n
    members = subset.indices()
    unitary_indices = subset.complement(n - 1).indices() + [n]

    for j in unitary_indices:
        defect_norm = spectral_norm(s[j] @ adjoint(s[j]) - np.eye(s.dim))
        if defect_norm > tolerances.iso:
            raise ClassViolation("Compressed operator is not co-isometric", index=j, defect=f"{defect_norm:.3e}")

    data = defect_of_ops([s[i] for i in members], s.dim, tolerances, clamp_log, site=f"D{subset}")
    if not data.psd:
        raise ClassViolation("Defect on G is not positive", subset=str(subset), eigenvalue=f"{data.min_eigenvalue:.3e}")
    if data.rank == 0:
        return _empty_block(subset, s.dim)

    coords = data.coordinates()
    space = TruncatedHardy(vars=len(members), degree=degree, coeff_dim=data.rank)
    restricted = OperatorTuple(tuple(s[i] for i in members)) if members else s
    pi = canonical_dilation_coeff(restricted, coords, space)

    V = {j: const_op(space, douglas_unitary(coords, s[j], tolerances)).matrix for j in unitary_indices}
    for i, m in enumerate(members, start=1):
        V[m] = shift(space, i).matrix

    block = SubsetBlock(
        G=subset,
        kind=BlockKind.one_not_in_g,
        space=space,
        pi=pi,
        V=V,
        V0=V[1] @ V[n],
        radius=max((spectral_radius(s[i]) for i in members), default=0.0),
    )
    for j, residual in enumerate(_intertwining(block, s), start=1):
        block.ledger.add(f"block_intertwining[{j}]", "Pi_G S_j* = V_j* Pi_G", residual, tolerances.iso, f"G={subset}")

    return block


def _build_block(
    t: OperatorTuple, subset: SubsetMask, degree: int, tolerances: Tolerances, clamp_log: ClampLog
) -> SubsetBlock:
    n = t.n
    gbar = subset.complement(n - 1)
    q = q_limit(hat1n(t), gbar, tolerances, compress=t, clamp_log=clamp_log)
    if q.rank == 0:
        logger.debug(f"G={subset}: Q vanishes, block dropped")
        return _empty_block(subset, t.dim)

    s = q.tilde_ops
    if 1 in subset:
        block = build_block_one_in_g(s, subset, degree, tolerances, clamp_log)
    else:
        block = build_block_one_not_in_g(s, subset, degree, tolerances, clamp_log)

    block.ledger.add(
        "q_coisometry", "S_j co-isometric off G", q.coisometry_defect, tolerances.iso, f"G={subset} iters={q.iters}"
    )
    block.pi = block.pi @ q.coords
    logger.debug(f"G={subset}: {block.kind} block of dimension {block.dim} (rank Q = {q.rank})")

    return block


def isometry_tolerance(degree: int, radius: float, dim: int) -> float:
    return max(1e-8, 3 * radius ** (2 * (degree + 1)) * dim)


def assemble_predil(
    t: OperatorTuple,
    degree: int,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    tol: float = 1e-6,
    jobs: int = 1,
    seed: int = 0,
) -> CoExtensionModel:
    """Direct sum over G in {1..n-1} of the subset blocks, with every co-extension identity checked."""
    membership = class_bnpq(t, 1, t.n, tolerances.clamp)
    if not membership:
        raise ClassViolation(
            "Tuple is not in the (1,n) class",
            failing_hat=membership.failing_hat,
            witness=str(membership.witness),
            eigenvalue=f"{membership.eigenvalue:.3e}",
        )

    n = t.n
    subsets = SubsetMask.all_subsets(n - 1)

    def build(subset: SubsetMask) -> tuple[SubsetBlock, ClampLog]:
        block_log = ClampLog()
        return _build_block(t, subset, degree, tolerances, block_log), block_log

    logger.info(f"Building {len(subsets)} subset blocks at degree {degree} with {jobs} job(s)")
    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as executor:
        built = list(executor.map(build, subsets))

    # Merged in subset order, independent of the worker count.
    clamp_log = ClampLog()
    for _, block_log in built:
        clamp_log.events.extend(block_log.events)

    blocks = [block for block, _ in built if block.kind != BlockKind.empty]
    if not blocks:
        raise IsometryDefect("Every subset block vanished")

    offsets = list(np.cumsum([0] + [block.dim for block in blocks[:-1]]))
    pi = np.vstack([block.pi for block in blocks])
    V = [block_diag([block.V[j] for block in blocks]) for j in range(1, n + 1)]
    V0 = block_diag([block.V0 for block in blocks])

    radius = max(block.radius for block in blocks)
    tol_iso = isometry_tolerance(degree, radius, t.dim)

    ledger = ResidualLedger()
    for block in blocks:
        ledger.extend(block.ledger)
    ledger.add_clamps(clamp_log, tolerances.clamp)

    model = CoExtensionModel(
        t=t, degree=degree, blocks=blocks, pi=pi, V=V, V0=V0, offsets=offsets, ledger=ledger, tol_iso=tol_iso
    )
    _verify_model(model, tolerances, tol, seed)

    iso_entry = ledger.worst("pi_isometry")
    if iso_entry is not None and not iso_entry.passed:
        raise IsometryDefect(
            "Pi is not isometric at this degree; raise the degree",
            defect=f"{iso_entry.residual:.3e}",
            tolerance=f"{tol_iso:.3e}",
            spectral_radius=f"{radius:.3f}",
        )

    logger.info(f"Co-extension space has dimension {model.dim} across {len(blocks)} block(s)")

    return model


def _verify_model(model: CoExtensionModel, tolerances: Tolerances, tol: float, seed: int):
    t, pi, ledger = model.t, model.pi, model.ledger
    n = t.n
    eye = np.eye(t.dim)

    ledger.add("pi_isometry", "Pi is an isometry", spectral_norm(adjoint(pi) @ pi - eye), model.tol_iso)

    rng = np.random.default_rng(seed)
    telescoping = 0.0
    for _ in range(100):
        h = rng.normal(size=t.dim) + 1j * rng.normal(size=t.dim)
        h /= np.linalg.norm(h)
        blockwise = sum(np.linalg.norm(block.pi @ h) ** 2 for block in model.blocks)
        telescoping = max(telescoping, abs(blockwise - 1.0))
    ledger.add("telescoping", "sum over G of ||Pi_G h||^2 = ||h||^2", telescoping, model.tol_iso)

    rows = model.trusted(1)
    for j in range(1, n + 1):
        v = model.op(j)
        ledger.add(
            f"intertwining[{j}]",
            "Pi T_j* = V_j* Pi",
            spectral_norm((pi @ adjoint(t[j]) - adjoint(v) @ pi)[rows]),
            tol,
        )
        ledger.add(f"compression[{j}]", "Pi* V_j Pi = T_j", spectral_norm(adjoint(pi) @ v @ pi - t[j]), tol)
    ledger.add(
        "compression[0]", "Pi* V_0 Pi = T_1 T_n", spectral_norm(adjoint(pi) @ model.V0 @ pi - t[1] @ t[n]), tol
    )

    cols = model.trusted(1)
    v1, vn, v0 = model.op(1), model.op(n), model.V0
    ledger.add(
        "remark:V1*V0=Vn", "V_1* V_0 = V_n", spectral_norm(adjoint(v1) @ v0[:, cols] - vn[:, cols]), tolerances.iso
    )
    ledger.add(
        "remark:Vn*V0=V1", "V_n* V_0 = V_1", spectral_norm(adjoint(vn) @ v0[:, cols] - v1[:, cols]), tolerances.iso
    )

    identity = np.eye(model.dim)
    for j in range(2, n):
        vj = model.op(j)
        ledger.add(
            f"isometry[{j}]",
            "V_j is an isometry",
            spectral_norm(adjoint(vj) @ vj[:, cols] - identity[:, cols]),
            tolerances.iso,
        )
        for name, a in (("V0", v0), ("V1", v1)):
            ledger.add(
                f"commute[{j},{name}]",
                "V_j commutes with the pair",
                spectral_norm(vj @ a[:, cols] - a @ vj[:, cols]),
                tolerances.iso,
            )
            ledger.add(
                f"double_commute[{j},{name}]",
                "V_j* commutes with the pair",
                spectral_norm(adjoint(vj) @ a[:, cols] - a @ adjoint(vj)[:, cols]),
                tolerances.iso,
            )

    ledger.extend(commutator_report(model.V))


def commutator_report(ops: list[np.ndarray]) -> ResidualLedger:
    """||V_i V_j - V_j V_i|| for every pair; the co-extension tuple need not commute, so nothing is enforced."""
    ledger = ResidualLedger()
    for i in range(len(ops)):
        for j in range(i + 1, len(ops)):
            residual = spectral_norm(ops[i] @ ops[j] - ops[j] @ ops[i])
            ledger.add(f"commutator[{i + 1},{j + 1}]", "V_i V_j - V_j V_i (informational)", residual, float("inf"))
    return ledger
