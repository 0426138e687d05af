"""Seeded tuple generators with class-membership labels.

Randomness comes from SplitMix64 (increment 0x9E3779B97F4A7C15, multipliers 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB, shifts 30/27/31) so a GenSpec produces the same tuple on every platform.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from loguru import logger

from dilatin.DataTypes import GenSpec, Recipe
from dilatin.Modules.LinAlg import spectral_norm
from dilatin.Modules.ManualException import DimensionMismatch, PreconditionViolated, RejectionBudgetExceeded
from dilatin.Modules.OperatorTuple import (
    OperatorTuple,
    SubsetMask,
    class_bnpq,
    dump_tuple,
    is_brehmer,
    is_pure,
)

MASK64 = (1 << 64) - 1
REJECTION_BUDGET = 1000


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform on [0, 1) from the top 53 bits."""
        return (self.next() >> 11) * 2.0**-53

    def normal(self) -> float:
        # Box-Muller; 1 - u keeps the logarithm finite.
        u, v = self.uniform(), self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u)) * math.cos(2.0 * math.pi * v)

    def complex_normal(self) -> complex:
        return complex(self.normal(), self.normal()) / math.sqrt(2.0)

    def disc(self, radius: float) -> complex:
        r = radius * math.sqrt(self.uniform())
        theta = 2.0 * math.pi * self.uniform()
        return complex(r * math.cos(theta), r * math.sin(theta))

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        return np.array([[self.complex_normal() for _ in range(cols)] for _ in range(rows)], dtype=np.complex128)

    def unitary(self, d: int) -> np.ndarray:
        q, r = np.linalg.qr(self.matrix(d, d))
        phases = np.diag(r) / np.abs(np.diag(r))
        return q * phases


@dataclass
class Generated:
    t: OperatorTuple
    spec: GenSpec
    labels: dict[str, bool] = field(default_factory=dict)
    attempts: int = 1


@dataclass
class SeparatingResult:
    t: OperatorTuple | None
    witness: SubsetMask | None
    attempts: int
    seed: int

    @property
    def found(self) -> bool:
        return self.t is not None


def _check_spec(spec: GenSpec, recipe: str):
    if spec.recipe != recipe:
        raise PreconditionViolated("Generator called with another recipe", expected=recipe, recipe=spec.recipe)
    if spec.n < 1 or spec.d < 1:
        raise DimensionMismatch("Generator needs n >= 1 and d >= 1", n=spec.n, d=spec.d)


def gen_diagonal(spec: GenSpec) -> Generated:
    _check_spec(spec, Recipe.diagonal)
    rng = SplitMix64(spec.seed)

    entries = [[rng.disc(spec.radius_cap) for _ in range(spec.d)] for _ in range(spec.n)]
    t = OperatorTuple(tuple(np.diag(np.array(row, dtype=np.complex128)) for row in entries))

    labels = {
        "brehmer": True,
        "pure": all(abs(z) < 1 for row in entries for z in row),
    }

    return Generated(t, spec, labels)


def _poly_of_one(rng: SplitMix64, spec: GenSpec) -> OperatorTuple:
    a = rng.matrix(spec.d, spec.d) / math.sqrt(spec.d)
    powers = [np.eye(spec.d, dtype=np.complex128), a, a @ a]

    ops = []
    for _ in range(spec.n):
        op = sum(rng.complex_normal() * power for power in powers)
        norm = spectral_norm(op)
        scale = spec.radius_cap * (0.5 + 0.5 * rng.uniform())
        ops.append(op * (scale / norm) if norm > 0 else op)

    return OperatorTuple(tuple(ops))


def gen_poly_of_one(spec: GenSpec, budget: int = REJECTION_BUDGET) -> Generated:
    """T_i = c_i p_i(A) for one random A; resampled until the tuple lands in the (1,n) class."""
    _check_spec(spec, Recipe.poly_of_one)
    rng = SplitMix64(spec.seed)

    for attempt in range(1, budget + 1):
        t = _poly_of_one(rng, spec)
        if spec.n < 3 or not spec.require_class:
            return Generated(t, spec, {"pure": is_pure(t)}, attempt)

        membership = class_bnpq(t, 1, spec.n)
        if membership:
            if attempt > 1:
                logger.debug(f"PolyOfOne seed {spec.seed}: accepted after {attempt} draws")
            return Generated(t, spec, {"class_1n": True, "brehmer": bool(is_brehmer(t)), "pure": is_pure(t)}, attempt)

    raise RejectionBudgetExceeded("No draw landed in the (1,n) class", seed=spec.seed, budget=budget)


def gen_scaled_unitaries(spec: GenSpec) -> Generated:
    """radius_cap times commuting unitaries sharing one random eigenbasis."""
    _check_spec(spec, Recipe.scaled_unitaries)
    rng = SplitMix64(spec.seed)

    basis = rng.unitary(spec.d)
    ops = []
    for _ in range(spec.n):
        phases = np.array([np.exp(2j * np.pi * rng.uniform()) for _ in range(spec.d)])
        ops.append(spec.radius_cap * (basis * phases) @ basis.conj().T)

    t = OperatorTuple(tuple(ops))

    return Generated(t, spec, {"brehmer": True, "pure": spec.radius_cap < 1})


def gen_jordan_pair(spec: GenSpec) -> Generated:
    """n copies of radius_cap * J with J the 2x2 nilpotent Jordan block, padded by zeros to size d."""
    _check_spec(spec, Recipe.jordan_pair)
    if spec.d < 2:
        raise DimensionMismatch("Jordan recipe needs d >= 2", d=spec.d)

    jordan = np.zeros((spec.d, spec.d), dtype=np.complex128)
    jordan[0, 1] = spec.radius_cap
    t = OperatorTuple(tuple(jordan.copy() for _ in range(spec.n)))

    # J^2 = 0, so the defect over any k copies is diag(1 - k c^2, 1) on the first two coordinates.
    brehmer = spec.n * spec.radius_cap**2 <= 1

    return Generated(t, spec, {"pure": True, "brehmer": brehmer, "szego": brehmer})


def generate(spec: GenSpec) -> Generated:
    match spec.recipe:
        case Recipe.diagonal:
            return gen_diagonal(spec)
        case Recipe.poly_of_one:
            return gen_poly_of_one(spec)
        case Recipe.scaled_unitaries:
            return gen_scaled_unitaries(spec)
        case Recipe.jordan_pair:
            return gen_jordan_pair(spec)
        case Recipe.custom:
            raise PreconditionViolated("Custom tuples are read from a file, not generated")
        case _:
            raise PreconditionViolated("Unknown recipe", recipe=spec.recipe, known=", ".join(Recipe.all()))


def gen_separating_search(spec: GenSpec, budget: int) -> SeparatingResult:
    """Look for a tuple in the (1,n) class that is not Brehmer; coming back empty is a result, not an error."""
    for attempt in range(budget):
        seed = spec.seed + attempt
        candidate = generate(replace(spec, seed=seed, require_class=False)).t
        if candidate.n < 3 or not class_bnpq(candidate, 1, candidate.n):
            continue

        brehmer = is_brehmer(candidate)
        if not brehmer:
            logger.info(f"Separating tuple found at seed {seed} with witness {brehmer.witness}")
            return SeparatingResult(candidate, brehmer.witness, attempt + 1, seed)

    logger.info(f"No separating tuple within {budget} draws from seed {spec.seed}")

    return SeparatingResult(None, None, budget, spec.seed)


def emit_corpus(spec: GenSpec, count: int, directory: str) -> list[str]:
    """Write ``count`` tuples with consecutive seeds as tuple JSON files."""
    os.makedirs(directory, exist_ok=True)

    paths = []
    for offset in range(count):
        generated = generate(replace(spec, seed=spec.seed + offset))
        path = os.path.join(directory, f"{spec.recipe.lower()}_{spec.seed + offset}.json")
        dump_tuple(generated.t, path)
        paths.append(path)

    return paths
