"""Degree-capped coefficient model of the vector-valued Hardy space over the polydisc.

Multi-indices k in {0..N}^r are ordered lexicographically with the last variable running fastest.
Block b(k) = sum_i k_i (N+1)^(r-i) holds the coefficient of z^k, and flat index b(k) * e + c holds
coordinate c of that coefficient in an orthonormal basis of the coefficient space E.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

from dilatin.DataTypes import DEFAULT_TOLERANCES, Tolerances
from dilatin.Modules.LinAlg import adjoint, as_cmatrix, isometry_defect, spectral_norm
from dilatin.Modules.ManualException import DimensionMismatch, IndexOutOfRange, NotIsometric, NotPSD
from dilatin.Modules.OperatorTuple import OperatorTuple, SubsetMask, defect


@dataclass(frozen=True)
class TruncatedHardy:
    vars: int
    degree: int
    coeff_dim: int

    def __post_init__(self):
        if self.vars < 0 or self.degree < 1 or self.coeff_dim < 0:
            raise DimensionMismatch(
                "Invalid Hardy truncation", vars=self.vars, degree=self.degree, coeff_dim=self.coeff_dim
            )

    @property
    def blocks(self) -> int:
        return (self.degree + 1) ** self.vars

    @property
    def total_dim(self) -> int:
        return self.coeff_dim * self.blocks

    @cached_property
    def multi_indices(self) -> np.ndarray:
        """Row b is the multi-index stored in block b."""
        if self.vars == 0:
            return np.zeros((1, 0), dtype=int)
        return np.array(list(product(range(self.degree + 1), repeat=self.vars)), dtype=int)

    def block_of(self, k) -> int:
        if len(k) != self.vars or any(not 0 <= ki <= self.degree for ki in k):
            raise IndexOutOfRange("Multi-index outside the truncation", k=tuple(k), degree=self.degree)

        block = 0
        for ki in k:
            block = block * (self.degree + 1) + ki
        return block

    def flat_indices(self, mask: np.ndarray) -> np.ndarray:
        """Flat coordinates of every block selected by a boolean mask over blocks."""
        blocks = np.flatnonzero(mask)
        return (blocks[:, None] * self.coeff_dim + np.arange(self.coeff_dim)[None, :]).ravel()

    def trusted(self, margin: int, variables: list[int] | None = None) -> np.ndarray:
        """Flat coordinates whose blocks have k_i <= N - margin for the given (one-based) variables."""
        selected = range(1, self.vars + 1) if variables is None else variables
        mask = np.ones(self.blocks, dtype=bool)
        for i in selected:
            mask &= self.multi_indices[:, i - 1] <= self.degree - margin
        return self.flat_indices(mask)

    def with_coeff_dim(self, coeff_dim: int) -> TruncatedHardy:
        return TruncatedHardy(vars=self.vars, degree=self.degree, coeff_dim=coeff_dim)


@dataclass
class HardyOp:
    space: TruncatedHardy
    matrix: np.ndarray
    exact_degree: int = 0
    source: TruncatedHardy | None = field(default=None)

    def __post_init__(self):
        source = self.source or self.space
        if self.matrix.shape != (self.space.total_dim, source.total_dim):
            raise DimensionMismatch(
                "Operator matrix does not match its spaces",
                shape=self.matrix.shape,
                expected=(self.space.total_dim, source.total_dim),
            )
        if self.exact_degree < 0:
            raise DimensionMismatch("exact_degree must be non-negative", exact_degree=self.exact_degree)

    @property
    def H(self) -> np.ndarray:
        return adjoint(self.matrix)

    def __matmul__(self, other):
        if isinstance(other, HardyOp):
            return HardyOp(
                self.space,
                self.matrix @ other.matrix,
                exact_degree=self.exact_degree + other.exact_degree,
                source=other.source,
            )
        return self.matrix @ other


def _lower_shift(size: int) -> np.ndarray:
    return np.eye(size, k=-1, dtype=np.complex128)


def _index_shift(space: TruncatedHardy, i: int) -> np.ndarray:
    """Shift on the multi-index blocks alone (no coefficient factor)."""
    factors = [_lower_shift(space.degree + 1) if j == i else np.eye(space.degree + 1) for j in range(1, space.vars + 1)]

    result = np.ones((1, 1), dtype=np.complex128)
    for factor in factors:
        result = np.kron(result, factor)
    return result


def shift(space: TruncatedHardy, i: int) -> HardyOp:
    """Multiplication by z_i; blocks with k_i = N are annihilated."""
    if not 1 <= i <= space.vars:
        raise IndexOutOfRange("Shift variable out of range", index=i, vars=space.vars)

    matrix = np.kron(_index_shift(space, i), np.eye(space.coeff_dim, dtype=np.complex128))

    return HardyOp(space, matrix, exact_degree=1)


def apply_shift(space: TruncatedHardy, i: int, x: np.ndarray, power: int = 1) -> np.ndarray:
    """shift(i)^power applied to the columns of x without forming the shift matrix."""
    if not 1 <= i <= space.vars:
        raise IndexOutOfRange("Shift variable out of range", index=i, vars=space.vars)

    cube = x.reshape((space.degree + 1,) * space.vars + (space.coeff_dim, x.shape[1]))
    shifted = np.zeros_like(cube)
    if power <= space.degree:
        source = [slice(None)] * cube.ndim
        target = [slice(None)] * cube.ndim
        source[i - 1] = slice(0, space.degree + 1 - power)
        target[i - 1] = slice(power, space.degree + 1)
        shifted[tuple(target)] = cube[tuple(source)]

    return shifted.reshape(x.shape)


def const_op(space: TruncatedHardy, a: np.ndarray) -> HardyOp:
    a = as_cmatrix(a)
    if a.shape != (space.coeff_dim, space.coeff_dim):
        raise DimensionMismatch("Coefficient operator has the wrong size", shape=a.shape, coeff_dim=space.coeff_dim)

    return HardyOp(space, np.kron(np.eye(space.blocks, dtype=np.complex128), a), exact_degree=0)


def mult_op(space: TruncatedHardy, a0: np.ndarray, a1: np.ndarray) -> HardyOp:
    """Multiplier with symbol A0 + z_1 A1."""
    a0, a1 = as_cmatrix(a0), as_cmatrix(a1)
    if a0.shape != (space.coeff_dim, space.coeff_dim) or a1.shape != a0.shape:
        raise DimensionMismatch(
            "Symbol coefficients have the wrong size", a0=a0.shape, a1=a1.shape, coeff_dim=space.coeff_dim
        )

    matrix = const_op(space, a0).matrix + shift(space, 1).matrix @ const_op(space, a1).matrix

    return HardyOp(space, matrix, exact_degree=1)


def embed_coeff(space: TruncatedHardy, gamma: np.ndarray, tol_iso: float = DEFAULT_TOLERANCES.iso) -> HardyOp:
    """I (x) Gamma from the space with coefficient dimension cols(Gamma) into ``space``."""
    gamma = as_cmatrix(gamma)
    if gamma.shape[0] != space.coeff_dim:
        raise DimensionMismatch("Gamma does not land in the coefficient space", shape=gamma.shape)

    defect_norm = isometry_defect(gamma)
    if defect_norm > tol_iso:
        raise NotIsometric("Coefficient embedding is not isometric", defect=f"{defect_norm:.3e}")

    source = space.with_coeff_dim(gamma.shape[1])
    matrix = np.kron(np.eye(space.blocks, dtype=np.complex128), gamma)

    return HardyOp(space, matrix, exact_degree=0, source=source)


def canonical_dilation_coeff(t: OperatorTuple, coeff: np.ndarray, space: TruncatedHardy) -> np.ndarray:
    """Pi with block k of Pi h equal to coeff T^{*k} h, for every k in the truncation.

    ``coeff`` is basis* D written as an e x d matrix; ``t`` carries one operator per variable.
    """
    coeff = as_cmatrix(coeff)
    if t.n != space.vars and not (space.vars == 0):
        raise DimensionMismatch("Tuple length differs from the number of variables", n=t.n, vars=space.vars)
    if coeff.shape[0] != space.coeff_dim:
        raise DimensionMismatch("Coefficient map has the wrong height", shape=coeff.shape, coeff_dim=space.coeff_dim)

    dim = coeff.shape[1]
    adjoints = [adjoint(op) for op in t.ops] if space.vars else []
    powers = {(): np.eye(dim, dtype=np.complex128)} if space.vars == 0 else {}

    pi = np.zeros((space.total_dim, dim), dtype=np.complex128)
    e = space.coeff_dim
    for block, k in enumerate(space.multi_indices):
        key = tuple(int(ki) for ki in k)
        if space.vars and not any(key):
            powers[key] = np.eye(dim, dtype=np.complex128)
        elif space.vars:
            i = next(j for j, kj in enumerate(key) if kj)
            parent = key[:i] + (key[i] - 1,) + key[i + 1 :]
            powers[key] = adjoints[i] @ powers[parent]
        pi[block * e : (block + 1) * e] = coeff @ powers[key]

    return pi


def canonical_dilation(
    t: OperatorTuple, subset: SubsetMask, space: TruncatedHardy, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> np.ndarray:
    """Canonical dilation map of T restricted to G, coefficients in the defect range basis."""
    data = defect(t, subset, tolerances)
    if not data.psd:
        raise NotPSD("Defect of T(G) is not positive", subset=str(subset), eigenvalue=f"{data.min_eigenvalue:.3e}")
    if space.vars != len(subset) or space.coeff_dim != data.rank:
        raise DimensionMismatch(
            "Space does not match |G| and the defect rank",
            vars=space.vars,
            subset=str(subset),
            coeff_dim=space.coeff_dim,
            rank=data.rank,
        )

    restricted = t.restrict(subset) if len(subset) else t

    return canonical_dilation_coeff(restricted, data.coordinates(), space)


def partial_gram_sum(t: OperatorTuple, delta: np.ndarray, degree: int) -> np.ndarray:
    """Sum over k <= N*1 of T^k Delta T^{*k}: the Gram of the truncated canonical dilation."""
    dim = delta.shape[0]
    total = np.zeros((dim, dim), dtype=np.complex128)
    for k in product(range(degree + 1), repeat=t.n):
        power = np.eye(dim, dtype=np.complex128)
        for i, ki in enumerate(k, start=1):
            power = power @ np.linalg.matrix_power(t[i], ki)
        total += power @ delta @ adjoint(power)

    return total


@dataclass
class BrehmerDilation:
    """Direct dilation of a pure Brehmer tuple by the coordinate shifts."""

    space: TruncatedHardy
    pi: np.ndarray
    isometry_defect: float
    max_residual: float
    worst_index: tuple[int, ...]


def truncation_tail_bound(t: OperatorTuple, depth: int) -> float:
    """Bound on the canonical-dilation Gram tail beyond degree ``depth`` in some variable, for pure Brehmer T.

    The part with k_i > depth equals T_i^{depth+1} T_i^{*(depth+1)}, so the tail is at most n c^{2(depth+1)}
    with c the largest operator norm. This is looser than a spectral-radius rate, which holds only asymptotically.
    """
    norm = max(spectral_norm(op) for op in t.ops)
    return t.n * norm ** (2 * (depth + 1))


def brehmer_dilation(
    t: OperatorTuple, degree: int, window: int | None = None, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> BrehmerDilation:
    """Pi* M_z^k Pi against T^k for every |k| <= window, the window defaulting to N - 1."""
    window = degree - 1 if window is None else window
    full = SubsetMask.full(t.n)
    data = defect(t, full, tolerances)
    if not data.psd:
        raise NotPSD("Tuple is not Szego positive", eigenvalue=f"{data.min_eigenvalue:.3e}")

    space = TruncatedHardy(vars=t.n, degree=degree, coeff_dim=data.rank)
    pi = canonical_dilation(t, full, space, tolerances)

    worst, worst_index = 0.0, (0,) * t.n
    for k in product(range(window + 1), repeat=t.n):
        if sum(k) > window:
            continue
        image = pi
        target = np.eye(t.dim, dtype=np.complex128)
        for i, ki in enumerate(k, start=1):
            if ki:
                image = apply_shift(space, i, image, ki)
                target = target @ np.linalg.matrix_power(t[i], ki)
        residual = spectral_norm(adjoint(pi) @ image - target)
        if residual > worst:
            worst, worst_index = residual, k

    return BrehmerDilation(
        space=space,
        pi=pi,
        isometry_defect=isometry_defect(pi),
        max_residual=worst,
        worst_index=worst_index,
    )
