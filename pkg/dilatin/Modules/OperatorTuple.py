"""Commuting contraction tuples, subset products, hat operations and the positivity classes."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import orjson
from loguru import logger

from dilatin.DataTypes import DEFAULT_TOLERANCES, Tolerances
from dilatin.Modules.LinAlg import (
    ClampLog,
    adjoint,
    as_cmatrix,
    hermitian_part,
    psd_sqrt,
    range_basis,
    spectral_norm,
    spectral_radius,
)
from dilatin.Modules.ManualException import (
    DimensionMismatch,
    IndexOutOfRange,
    NoConvergence,
    ParseError,
    PreconditionViolated,
)


@dataclass(frozen=True)
class SubsetMask:
    """A subset of {1, ..., n} stored as a bitmask (bit i-1 set means i is in the subset)."""

    bits: int = 0

    @classmethod
    def of(cls, *indices: int) -> SubsetMask:
        bits = 0
        for i in indices:
            if i < 1:
                raise IndexOutOfRange("Subset indices start at 1", index=i)
            bits |= 1 << (i - 1)
        return cls(bits)

    @classmethod
    def full(cls, n: int) -> SubsetMask:
        return cls((1 << n) - 1)

    @classmethod
    def all_subsets(cls, n: int) -> list[SubsetMask]:
        return [cls(bits) for bits in range(1 << n)]

    def indices(self) -> list[int]:
        return [i + 1 for i in range(self.bits.bit_length()) if self.bits >> i & 1]

    def complement(self, n: int) -> SubsetMask:
        return SubsetMask(((1 << n) - 1) & ~self.bits)

    def without(self, i: int) -> SubsetMask:
        return SubsetMask(self.bits & ~(1 << (i - 1)))

    def max_index(self) -> int:
        return self.bits.bit_length()

    def __contains__(self, i: int) -> bool:
        return i >= 1 and bool(self.bits >> (i - 1) & 1)

    def __iter__(self):
        return iter(self.indices())

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def __str__(self) -> str:
        return "{" + ",".join(str(i) for i in self.indices()) + "}"


@dataclass
class ValidationReport:
    norms: list[float]
    commutators: dict[tuple[int, int], float]
    tol_contr: float
    tol_comm: float

    @property
    def contractive(self) -> bool:
        return all(norm <= 1 + self.tol_contr for norm in self.norms)

    @property
    def commuting(self) -> bool:
        return all(residual <= self.tol_comm for residual in self.commutators.values())

    @property
    def ok(self) -> bool:
        return self.contractive and self.commuting


@dataclass
class OperatorTuple:
    ops: tuple[np.ndarray, ...]
    dim: int = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        if not self.ops:
            raise DimensionMismatch("An operator tuple needs at least one operator")

        self.ops = tuple(as_cmatrix(op) for op in self.ops)
        self.dim = self.ops[0].shape[0]
        self.n = len(self.ops)

        for i, op in enumerate(self.ops, start=1):
            if op.shape != (self.dim, self.dim):
                raise DimensionMismatch(
                    "Operators must be square and share one dimension", index=i, shape=op.shape, dim=self.dim
                )

    def __getitem__(self, i: int) -> np.ndarray:
        """One-based access, T[1] is the first operator."""
        if not 1 <= i <= self.n:
            raise IndexOutOfRange("Operator index out of range", index=i, n=self.n)
        return self.ops[i - 1]

    def adjoint_tuple(self) -> OperatorTuple:
        return OperatorTuple(tuple(adjoint(op) for op in self.ops))

    def restrict(self, subset: SubsetMask) -> OperatorTuple:
        return OperatorTuple(tuple(self[i] for i in subset))

    def check_subset(self, subset: SubsetMask):
        if subset.max_index() > self.n:
            raise IndexOutOfRange("Subset is not contained in {1..n}", subset=str(subset), n=self.n)


@dataclass
class DefectData:
    delta: np.ndarray
    sqrt: np.ndarray | None
    basis: np.ndarray | None
    rank: int
    psd: bool
    min_eigenvalue: float

    def coordinates(self) -> np.ndarray:
        """basis* D: the defect operator written in its own orthonormal range basis."""
        return adjoint(self.basis) @ self.sqrt


@dataclass
class BrehmerResult:
    ok: bool
    witness: SubsetMask | None = None
    eigenvalue: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


@dataclass
class ClassResult:
    ok: bool
    failing_hat: int | None = None
    witness: SubsetMask | None = None
    eigenvalue: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


def validate_tuple(
    t: OperatorTuple, tol_contr: float = DEFAULT_TOLERANCES.contr, tol_comm: float = DEFAULT_TOLERANCES.comm
) -> ValidationReport:
    norms = [spectral_norm(op) for op in t.ops]
    commutators = {}
    for i, j in combinations(range(1, t.n + 1), 2):
        scale = max(1.0, norms[i - 1] * norms[j - 1])
        commutators[(i, j)] = spectral_norm(t[i] @ t[j] - t[j] @ t[i]) / scale

    report = ValidationReport(norms=norms, commutators=commutators, tol_contr=tol_contr, tol_comm=tol_comm)
    if not report.ok:
        logger.warning(f"Tuple validation failed: contractive={report.contractive} commuting={report.commuting}")

    return report


def subset_product(t: OperatorTuple, subset: SubsetMask) -> np.ndarray:
    t.check_subset(subset)

    product = np.eye(t.dim, dtype=np.complex128)
    for i in subset:
        product = product @ t[i]

    return product


def hat(t: OperatorTuple, i: int) -> OperatorTuple:
    if t.n < 2:
        raise IndexOutOfRange("Cannot delete an operator from a 1-tuple", n=t.n)
    if not 1 <= i <= t.n:
        raise IndexOutOfRange("Hat index out of range", index=i, n=t.n)

    return OperatorTuple(t.ops[: i - 1] + t.ops[i:])


def hat1n(t: OperatorTuple) -> OperatorTuple:
    """(T1 Tn, T2, ..., T_{n-1})."""
    if t.n < 2:
        raise IndexOutOfRange("hat1n needs n >= 2", n=t.n)

    return OperatorTuple((t[1] @ t[t.n],) + t.ops[1 : t.n - 1])


def hat1_swapped(t: OperatorTuple) -> OperatorTuple:
    """(Tn, T2, ..., T_{n-1}): the first hat with Tn moved into slot 1.

    Slot j of this tuple lines up with slot j of ``hat(t, n)`` and ``hat1n(t)``, which is the
    indexing the defect identities use for subsets G of {1..n-1}.
    """
    if t.n < 2:
        raise IndexOutOfRange("hat1_swapped needs n >= 2", n=t.n)

    return OperatorTuple((t[t.n],) + t.ops[1 : t.n - 1])


def reindex_pq(t: OperatorTuple, p: int, q: int) -> tuple[OperatorTuple, list[int]]:
    """Move T_p to slot 1 and T_q to slot n; the others keep their relative order.

    Returns the new tuple and ``order`` with ``new[k] = old[order[k-1]]``.
    """
    if not 1 <= p < q <= t.n:
        raise IndexOutOfRange("Need 1 <= p < q <= n", p=p, q=q, n=t.n)

    middle = [i for i in range(1, t.n + 1) if i not in (p, q)]
    order = [p] + middle + [q]

    return OperatorTuple(tuple(t[i] for i in order)), order


def defect_delta(ops: list[np.ndarray], dim: int) -> np.ndarray:
    """Brehmer defect by the recursion Delta_{G+j} = Delta_G - T_j Delta_G T_j*."""
    delta = np.eye(dim, dtype=np.complex128)
    for op in ops:
        delta = delta - op @ delta @ adjoint(op)

    return hermitian_part(delta)


def defect_bruteforce(t: OperatorTuple, subset: SubsetMask) -> np.ndarray:
    """Sum over all F in G of (-1)^|F| T_F T_F*."""
    t.check_subset(subset)

    members = subset.indices()
    delta = np.zeros((t.dim, t.dim), dtype=np.complex128)
    for size in range(len(members) + 1):
        for chosen in combinations(members, size):
            product = subset_product(t, SubsetMask.of(*chosen))
            delta += (-1) ** size * product @ adjoint(product)

    return delta


def defect_from_delta(
    delta: np.ndarray, tolerances: Tolerances = DEFAULT_TOLERANCES, clamp_log: ClampLog | None = None, site="defect"
) -> DefectData:
    eigenvalues = np.linalg.eigvalsh(delta)
    lowest = float(eigenvalues[0])
    scale = max(1.0, float(np.max(np.abs(eigenvalues))))

    if lowest < -tolerances.clamp * scale:
        return DefectData(delta=delta, sqrt=None, basis=None, rank=0, psd=False, min_eigenvalue=lowest)

    root = psd_sqrt(delta, tolerances.clamp, clamp_log, site=site, tol_eig=tolerances.eig)
    # Eigenvalues of Delta at or below the clamp level are round-off; the cut is absolute.
    highest = float(eigenvalues[-1])
    cutoff = tolerances.clamp * scale
    if highest <= cutoff:
        basis = np.zeros((delta.shape[0], 0), dtype=np.complex128)
    else:
        basis = range_basis(delta, max(tolerances.rank, cutoff / highest))

    return DefectData(delta=delta, sqrt=root, basis=basis, rank=basis.shape[1], psd=True, min_eigenvalue=lowest)


def defect_of_ops(
    ops: list[np.ndarray],
    dim: int,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    clamp_log: ClampLog | None = None,
    site: str = "defect",
) -> DefectData:
    return defect_from_delta(defect_delta(ops, dim), tolerances, clamp_log, site)


def defect(
    t: OperatorTuple, subset: SubsetMask, tolerances: Tolerances = DEFAULT_TOLERANCES, clamp_log: ClampLog | None = None
) -> DefectData:
    t.check_subset(subset)

    return defect_of_ops([t[i] for i in subset], t.dim, tolerances, clamp_log, site=f"defect{subset}")


def all_defects(t: OperatorTuple) -> dict[int, np.ndarray]:
    """Delta for every subset, keyed by bitmask, each built from its parent with one bit fewer."""
    deltas = {0: np.eye(t.dim, dtype=np.complex128)}
    for bits in range(1, 1 << t.n):
        top = bits.bit_length()
        parent = deltas[bits & ~(1 << (top - 1))]
        op = t[top]
        deltas[bits] = hermitian_part(parent - op @ parent @ adjoint(op))

    return deltas


def is_brehmer(t: OperatorTuple, tol: float = DEFAULT_TOLERANCES.clamp) -> BrehmerResult:
    worst = BrehmerResult(ok=True)
    for bits, delta in all_defects(t).items():
        lowest = float(np.linalg.eigvalsh(delta)[0])
        if lowest < -tol * max(1.0, spectral_norm(delta)) and lowest < worst.eigenvalue:
            worst = BrehmerResult(ok=False, witness=SubsetMask(bits), eigenvalue=lowest)

    return worst


def is_szego(t: OperatorTuple, tol: float = DEFAULT_TOLERANCES.clamp) -> bool:
    delta = defect_delta(list(t.ops), t.dim)
    lowest = float(np.linalg.eigvalsh(delta)[0])

    return lowest >= -tol * max(1.0, spectral_norm(delta))


def is_pure(t: OperatorTuple, tol: float = DEFAULT_TOLERANCES.contr) -> bool:
    """Finite-dimensional purity: every spectral radius is below 1."""
    for op in t.ops:
        try:
            radius = spectral_radius(op)
        except NoConvergence as e:
            radius = float(e.details.get("last_estimate", spectral_norm(op)))
        if radius >= 1 - tol:
            return False

    return True


def class_bnpq(t: OperatorTuple, p: int, q: int, tol: float = DEFAULT_TOLERANCES.clamp) -> ClassResult:
    if t.n < 3 or not 1 <= p < q <= t.n:
        raise IndexOutOfRange("Need n >= 3 and 1 <= p < q <= n", p=p, q=q, n=t.n)

    for index in (p, q):
        result = is_brehmer(hat(t, index), tol)
        if not result:
            return ClassResult(ok=False, failing_hat=index, witness=result.witness, eigenvalue=result.eigenvalue)

    return ClassResult(ok=True)


def check_defect_identity(t: OperatorTuple, subset: SubsetMask, check_class: bool = True) -> tuple[float, float]:
    """Residuals of the two defect identities linking the n-th, first and (1,n) hats on G.

    ``subset`` must contain 1 and live inside {1..n-1}. The first hat is indexed with T_n in slot 1.
    The identities are algebraic for commuting tuples, but the defects only factor as square roots
    inside the (1,n) class; outside it the residuals are computed and a warning is logged.
    """
    if 1 not in subset:
        raise PreconditionViolated("The defect identity needs 1 in G", subset=str(subset))
    if subset.max_index() > t.n - 1:
        raise IndexOutOfRange("G must lie in {1..n-1}", subset=str(subset), n=t.n)

    if check_class and t.n >= 3:
        membership = class_bnpq(t, 1, t.n)
        if not membership:
            logger.warning(
                f"Defect identity on G={subset} checked outside the (1,n) class "
                f"(hat {membership.failing_hat} fails on G={membership.witness})"
            )

    members = subset.indices()
    first, last = t[1], t[t.n]

    delta_n = defect_delta([hat(t, t.n)[i] for i in members], t.dim)
    delta_1 = defect_delta([hat1_swapped(t)[i] for i in members], t.dim)
    delta_1n = defect_delta([hat1n(t)[i] for i in members], t.dim)

    first_residual = spectral_norm(delta_n + first @ delta_1 @ adjoint(first) - delta_1n)
    second_residual = spectral_norm(delta_1 + last @ delta_n @ adjoint(last) - delta_1n)

    return first_residual, second_residual


def tuple_to_json(t: OperatorTuple) -> bytes:
    ops = [[[[float(z.real), float(z.imag)] for z in row] for row in op] for op in t.ops]
    return orjson.dumps({"dim": t.dim, "n": t.n, "ops": ops}, option=orjson.OPT_INDENT_2)


def tuple_from_json(data: bytes | str) -> OperatorTuple:
    try:
        payload = orjson.loads(data)
    except orjson.JSONDecodeError as e:
        raise ParseError(f"Malformed tuple JSON: {e}") from e

    if not isinstance(payload, dict) or not {"dim", "n", "ops"} <= payload.keys():
        raise ParseError("Tuple JSON needs the fields dim, n and ops")

    dim, n, raw_ops = payload["dim"], payload["n"], payload["ops"]
    if not isinstance(raw_ops, list) or len(raw_ops) != n:
        raise ParseError("Field ops must list exactly n matrices", n=n)

    try:
        arrays = [np.asarray(op, dtype=float) for op in raw_ops]
    except (TypeError, ValueError) as e:
        raise ParseError(f"Matrix entries must be [re, im] pairs: {e}") from e

    ops = []
    for i, array in enumerate(arrays, start=1):
        if array.shape != (dim, dim, 2):
            raise ParseError("Matrix has the wrong shape", index=i, shape=array.shape, dim=dim)
        ops.append(array[..., 0] + 1j * array[..., 1])

    return OperatorTuple(tuple(ops))


def load_tuple(path: str) -> OperatorTuple:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ParseError(f"Cannot read tuple file: {e}", path=path) from e

    return tuple_from_json(data)


def dump_tuple(t: OperatorTuple, path: str):
    with open(path, "wb") as f:
        f.write(tuple_to_json(t))

    logger.info(f"Wrote {t.n}-tuple of {t.dim}x{t.dim} operators to {path}")
