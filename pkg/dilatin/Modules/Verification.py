"""Residual ledger, polynomial functional calculus and the von Neumann / regularity checks."""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Iterator
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np
from loguru import logger

from dilatin.Modules.LinAlg import ClampLog, adjoint, spectral_norm
from dilatin.Modules.ManualException import DimensionMismatch
from dilatin.Modules.OperatorTuple import OperatorTuple


@dataclass
class LedgerEntry:
    name: str
    anchor: str
    residual: float
    tol: float
    passed: bool
    context: str = ""


@dataclass
class ResidualLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def add(self, name: str, anchor: str, residual: float, tol: float, context: str = "") -> LedgerEntry:
        residual = float(residual)
        entry = LedgerEntry(
            name=name, anchor=anchor, residual=residual, tol=float(tol), passed=bool(residual <= tol), context=context
        )
        self.entries.append(entry)
        if not entry.passed:
            logger.warning(f"{name} [{context}] residual {residual:.3e} exceeds {tol:.1e}")
        return entry

    def extend(self, other: ResidualLedger):
        self.entries.extend(other.entries)

    def add_clamps(self, clamp_log: ClampLog, tol: float):
        for event in clamp_log.events:
            self.add(f"clamp:{event.site}", "negative eigenvalue clamped", event.magnitude, tol * max(event.scale, 1.0))

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    def failures(self) -> list[LedgerEntry]:
        return [entry for entry in self.entries if not entry.passed]

    def worst(self, prefix: str = "") -> LedgerEntry | None:
        """Entry with the largest residual-to-tolerance ratio among names starting with ``prefix``."""
        candidates = [e for e in self.entries if e.name.startswith(prefix) and math.isfinite(e.tol)]
        if not candidates:
            return None
        return max(candidates, key=lambda e: e.residual / e.tol if e.tol > 0 else math.inf)

    def max_residual(self, prefix: str) -> float:
        return max((e.residual for e in self.entries if e.name.startswith(prefix)), default=0.0)

    def to_list(self) -> list[dict]:
        """Ledger JSON records; informational entries carry ``tol: null``."""
        records = []
        for entry in self.entries:
            record = asdict(entry)
            record["pass"] = record.pop("passed")
            if not math.isfinite(entry.tol):
                record["tol"] = None
            records.append(record)
        return records


@dataclass
class PolySample:
    n: int
    degree: int
    coefficients: dict[tuple[int, ...], complex]

    def __post_init__(self):
        for k in self.coefficients:
            if len(k) != self.n or any(not 0 <= ki <= self.degree for ki in k):
                raise DimensionMismatch("Monomial outside the degree bound", monomial=k, degree=self.degree)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        """Evaluate at points z of shape (..., n)."""
        z = np.asarray(z, dtype=np.complex128)
        value = np.zeros(z.shape[:-1], dtype=np.complex128)
        for k, c in self.coefficients.items():
            term = np.full(z.shape[:-1], c, dtype=np.complex128)
            for i, ki in enumerate(k):
                if ki:
                    term *= z[..., i] ** ki
            value += term
        return value

    def lipschitz_bound(self) -> float:
        """Bound on the angular gradient sum over i of |d p / d theta_i| on the torus."""
        return float(sum(abs(c) * sum(k) for k, c in self.coefficients.items()))

    def scaled(self, factor: float) -> PolySample:
        return PolySample(self.n, self.degree, {k: c * factor for k, c in self.coefficients.items()})


def tuple_power(ops: list[np.ndarray] | tuple[np.ndarray, ...], k: Iterable[int], dim: int) -> np.ndarray:
    """T^k = T_1^{k_1} ... T_m^{k_m}."""
    result = np.eye(dim, dtype=np.complex128)
    for op, ki in zip(ops, k):
        if ki:
            result = result @ np.linalg.matrix_power(op, ki)
    return result


def split_signed(alpha: tuple[int, ...]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """(alpha_+, alpha_-) with alpha = alpha_+ - alpha_-."""
    return tuple(max(a, 0) for a in alpha), tuple(max(-a, 0) for a in alpha)


def signed_alphas(m: int, bound: int) -> Iterator[tuple[int, ...]]:
    """Every alpha in Z^m with sum |alpha_i| <= bound, in a fixed order."""
    for alpha in product(range(-bound, bound + 1), repeat=m):
        if sum(abs(a) for a in alpha) <= bound:
            yield alpha


def nonnegative_indices(m: int, bound: int) -> Iterator[tuple[int, ...]]:
    for k in product(range(bound + 1), repeat=m):
        if sum(k) <= bound:
            yield k


def eval_poly_at_tuple(p: PolySample, t: OperatorTuple) -> np.ndarray:
    if p.n != t.n:
        raise DimensionMismatch("Polynomial and tuple disagree on the number of variables", poly=p.n, tuple=t.n)

    value = np.zeros((t.dim, t.dim), dtype=np.complex128)
    for k, c in p.coefficients.items():
        value += c * tuple_power(t.ops, k, t.dim)
    return value


def torus_grid(n: int, grid: int) -> np.ndarray:
    angles = np.exp(2j * np.pi * np.arange(grid) / grid)
    mesh = np.meshgrid(*([angles] * n), indexing="ij")
    return np.stack(mesh, axis=-1)


def sup_on_torus(p: PolySample, grid: int) -> float:
    """Maximum of |p| over the g^n roots-of-unity grid; a lower bound on the sup over the polydisc.

    Below the grid size the values are an inverse DFT of the coefficient array.
    """
    if p.degree >= grid:
        return float(np.max(np.abs(p(torus_grid(p.n, grid)))))

    coefficients = np.zeros((grid,) * p.n, dtype=np.complex128)
    for k, c in p.coefficients.items():
        coefficients[k] += c
    values = np.fft.ifftn(coefficients) * grid**p.n

    return float(np.max(np.abs(values)))


def sample_polynomials(n: int, degree: int, count: int, seed: int = 0, grid: int = 16) -> list[PolySample]:
    """Complex Gaussian coefficients, each polynomial scaled so its grid supremum is about 1."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        coefficients = {
            k: complex(rng.normal(), rng.normal()) for k in product(range(degree + 1), repeat=n)
        }
        p = PolySample(n, degree, coefficients)
        peak = sup_on_torus(p, grid)
        samples.append(p.scaled(1.0 / peak) if peak > 0 else p)
    return samples


def von_neumann_check(t: OperatorTuple, samples: list[PolySample], grid: int, slack: float = 1e-6) -> ResidualLedger:
    """||p(T)|| against the grid supremum plus a Lipschitz grid correction."""
    ledger = ResidualLedger()
    for index, p in enumerate(samples):
        norm = spectral_norm(eval_poly_at_tuple(p, t))
        sup = sup_on_torus(p, grid)
        allowance = slack + p.lipschitz_bound() * math.pi / grid
        ledger.add(
            f"von_neumann[{index}]",
            "||p(T)|| <= sup |p| on the polydisc",
            norm,
            sup + allowance,
            context=f"grid={grid} sup={sup:.6f} slack={allowance:.3e}",
        )
    return ledger


def matrix_compression(w_ops: list[np.ndarray], embed: np.ndarray) -> Callable[[tuple, tuple], np.ndarray]:
    """(a, b) -> embed* W^{*b} W^{a} embed for operators given as full matrices."""

    def compress(plus: tuple[int, ...], minus: tuple[int, ...]) -> np.ndarray:
        left = tuple_power(w_ops, plus, embed.shape[0]) @ embed
        right = tuple_power(w_ops, minus, embed.shape[0]) @ embed
        return adjoint(right) @ left

    return compress


def _signed_residuals(
    compress: Callable[[tuple, tuple], np.ndarray],
    target: Callable[[tuple, tuple], np.ndarray],
    alpha_set: Iterable[tuple[int, ...]],
    tol: float,
    label: str,
    anchor: str,
) -> ResidualLedger:
    ledger = ResidualLedger()
    for alpha in alpha_set:
        plus, minus = split_signed(alpha)
        residual = spectral_norm(compress(plus, minus) - target(plus, minus))
        ledger.add(f"{label}{alpha}", anchor, residual, tol, context=str(alpha))
    return ledger


def star_regular_residual(
    t_sub: OperatorTuple | None,
    compress: Callable[[tuple, tuple], np.ndarray],
    alpha_set: Iterable[tuple[int, ...]],
    tol: float,
    label: str = "star_regular",
    target: Callable[[tuple, tuple], np.ndarray] | None = None,
) -> ResidualLedger:
    """P W^{*alpha_-} W^{alpha_+} P against T^{alpha_+} T^{*alpha_-}, or against ``target`` when given."""

    def star_target(plus: tuple, minus: tuple) -> np.ndarray:
        return tuple_power(t_sub.ops, plus, t_sub.dim) @ adjoint(tuple_power(t_sub.ops, minus, t_sub.dim))

    return _signed_residuals(compress, target or star_target, alpha_set, tol, label, "*-regular dilation identity")


def regular_residual(
    t_sub: OperatorTuple | None,
    compress: Callable[[tuple, tuple], np.ndarray],
    alpha_set: Iterable[tuple[int, ...]],
    tol: float,
    label: str = "regular",
    target: Callable[[tuple, tuple], np.ndarray] | None = None,
) -> ResidualLedger:
    """P W^{*alpha_-} W^{alpha_+} P against T^{*alpha_-} T^{alpha_+}, or against ``target`` when given."""

    def regular_target(plus: tuple, minus: tuple) -> np.ndarray:
        return adjoint(tuple_power(t_sub.ops, minus, t_sub.dim)) @ tuple_power(t_sub.ops, plus, t_sub.dim)

    return _signed_residuals(compress, target or regular_target, alpha_set, tol, label, "regular dilation identity")
