from __future__ import annotations

from dataclasses import dataclass


@dataclass
class ExitCode:
    ok = 0
    verification_failed = 1
    construction_error = 2


@dataclass
class BlockKind:
    """Kinds of per-subset blocks in the co-extension."""

    empty = "Empty"
    one_in_g = "OneInG"
    one_not_in_g = "OneNotInG"


@dataclass
class Recipe:
    """Generator recipes."""

    diagonal = "Diagonal"
    poly_of_one = "PolyOfOne"
    scaled_unitaries = "ScaledUnitaries"
    jordan_pair = "JordanPair"
    custom = "Custom"

    @classmethod
    def all(cls) -> list[str]:
        return [cls.diagonal, cls.poly_of_one, cls.scaled_unitaries, cls.jordan_pair, cls.custom]


@dataclass(frozen=True)
class Tolerances:
    """Central tolerance set. Every value is relative to the norm of the input it is applied to."""

    eig: float = 1e-12
    rank: float = 1e-10
    clamp: float = 1e-10
    herm: float = 1e-10
    contr: float = 1e-10
    comm: float = 1e-10
    iso: float = 1e-8
    gram_clamp: float = 1e-9
    conv: float = 1e-12
    max_iters: int = 100_000


DEFAULT_TOLERANCES = Tolerances()


@dataclass(frozen=True)
class GenSpec:
    seed: int = 0
    n: int = 3
    d: int = 3
    recipe: str = Recipe.poly_of_one
    radius_cap: float = 0.5
    require_class: bool = True
