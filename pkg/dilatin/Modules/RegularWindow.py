"""Finite-window regular dilation of the pair (V_0, V_1), the lifted isometries and the final W-tuple.

Window multi-indices k run over {0..M}^2 in lexicographic order. Column (k, a) of the factor F is the
Kolmogorov vector of W^k x_a for x_a the a-th column of the base basis X, so F* F is the Gram matrix
with block (k, l) = X* V^{*(l-k)_-} V^{(l-k)_+} X.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from itertools import product

import numpy as np
from loguru import logger

from dilatin.DataTypes import DEFAULT_TOLERANCES, Tolerances
from dilatin.Modules.CoExtension import CoExtensionModel, assemble_predil
from dilatin.Modules.LinAlg import (
    EPS,
    ClampLog,
    adjoint,
    as_cmatrix,
    hermitian_part,
    least_squares_map,
    pivoted_cholesky,
    range_basis,
    spectral_norm,
)
from dilatin.Modules.ManualException import (
    DimensionMismatch,
    HypothesisViolated,
    IllConditioned,
    PreconditionViolated,
    VerificationFailed,
)
from dilatin.Modules.OperatorTuple import OperatorTuple, hat, is_brehmer
from dilatin.Modules.Verification import (
    ResidualLedger,
    nonnegative_indices,
    regular_residual,
    signed_alphas,
    star_regular_residual,
    tuple_power,
)


@dataclass
class WindowDilation:
    window: int
    base: np.ndarray
    depth: np.ndarray
    pair: tuple[np.ndarray, np.ndarray]
    kernel: dict[tuple[int, int], np.ndarray]
    gram: np.ndarray
    factor: np.ndarray
    W0: np.ndarray | None = None
    W1: np.ndarray | None = None
    ledger: ResidualLedger = field(default_factory=ResidualLedger)

    @property
    def base_dim(self) -> int:
        return self.base.shape[1]

    @property
    def rank(self) -> int:
        return self.factor.shape[0]

    @cached_property
    def indices(self) -> list[tuple[int, int]]:
        return list(product(range(self.window + 1), repeat=2))

    @cached_property
    def condition(self) -> float:
        singular = np.linalg.svd(self.factor, compute_uv=False)
        singular = singular[singular > 0]
        return float(singular[0] / singular[-1]) if singular.size else 1.0

    def position(self, k: tuple[int, int]) -> int:
        return k[0] * (self.window + 1) + k[1]

    def columns(self, keep, max_depth: int | None = None) -> np.ndarray:
        """Factor columns (k, a) with keep(k) true and depth(a) <= max_depth."""
        shallow = np.arange(self.base_dim) if max_depth is None else np.flatnonzero(self.depth <= max_depth)
        selected = [self.position(k) * self.base_dim + shallow for k in self.indices if keep(k)]
        return np.concatenate(selected).astype(int) if selected else np.zeros(0, dtype=int)

    def level(self, k: tuple[int, int]) -> np.ndarray:
        start = self.position(k) * self.base_dim
        return self.factor[:, start : start + self.base_dim]

    def kolmogorov(self, x: np.ndarray) -> np.ndarray:
        """Window vector of (0, x) for x in the span of the base."""
        return self.level((0, 0)) @ adjoint(self.base) @ x


@dataclass
class FinalDilation:
    window: int
    margin: int
    W: list[np.ndarray]
    W0: np.ndarray
    embed: np.ndarray
    ledger: ResidualLedger
    dilation: WindowDilation
    model: CoExtensionModel
    worst: tuple[tuple[int, ...], float] = ((), 0.0)

    @property
    def n(self) -> int:
        return len(self.W)


def krylov_base(
    model: CoExtensionModel, depth: int, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis of ran Pi and its images under words of length <= depth in V_2..V_{n-1}.

    Columns are ordered by word length, returned alongside that length.
    """
    ops = [model.op(j) for j in range(2, model.t.n)]
    current = range_basis(model.pi, tolerances.rank)
    basis, labels = [current], [np.zeros(current.shape[1], dtype=int)]
    accumulated = current

    for level in range(1, depth + 1):
        if not ops or current.shape[1] == 0:
            break
        images = np.hstack([op @ current for op in ops])
        leftover = images - accumulated @ (adjoint(accumulated) @ images)
        if spectral_norm(leftover) <= tolerances.rank * max(spectral_norm(images), 1.0):
            break
        current = range_basis(leftover, tolerances.rank)
        basis.append(current)
        labels.append(np.full(current.shape[1], level, dtype=int))
        accumulated = np.hstack(basis)

    return np.hstack(basis), np.concatenate(labels)


def regular_gram(
    a: np.ndarray,
    b: np.ndarray,
    window: int,
    basis: np.ndarray | None = None,
    depth: np.ndarray | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    clamp_log: ClampLog | None = None,
    jobs: int = 1,
    check_pair: bool | None = None,
) -> WindowDilation:
    """Gram matrix of the regular dilation kernel of (A, B) on the window, and its Kolmogorov factor."""
    a, b = as_cmatrix(a), as_cmatrix(b)
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise DimensionMismatch("Pair members must be square of one size", a=a.shape, b=b.shape)
    if window < 1:
        raise DimensionMismatch("Window must be at least 1", window=window)

    if basis is None:
        basis = np.eye(a.shape[0], dtype=np.complex128)
        check_pair = True if check_pair is None else check_pair
    depth = np.zeros(basis.shape[1], dtype=int) if depth is None else np.asarray(depth, dtype=int)

    if check_pair:
        pair = is_brehmer(OperatorTuple((adjoint(a), adjoint(b))), tolerances.clamp)
        if not pair:
            raise PreconditionViolated(
                "Adjoint pair is not Brehmer", witness=str(pair.witness), eigenvalue=f"{pair.eigenvalue:.3e}"
            )

    # powers[(i, j)] = A^i B^j X
    powers = {}
    column = basis
    for j in range(window + 1):
        current = column
        for i in range(window + 1):
            powers[(i, j)] = current
            if i < window:
                current = a @ current
        if j < window:
            column = b @ column

    alphas = list(product(range(-window, window + 1), repeat=2))

    def kernel_block(alpha: tuple[int, int]) -> np.ndarray:
        plus = (max(alpha[0], 0), max(alpha[1], 0))
        minus = (max(-alpha[0], 0), max(-alpha[1], 0))
        return adjoint(powers[minus]) @ powers[plus]

    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as executor:
        kernel = dict(zip(alphas, executor.map(kernel_block, alphas)))

    m = basis.shape[1]
    indices = list(product(range(window + 1), repeat=2))
    size = len(indices) * m
    gram = np.zeros((size, size), dtype=np.complex128)
    for p, k in enumerate(indices):
        for q, l in enumerate(indices):
            gram[p * m : (p + 1) * m, q * m : (q + 1) * m] = kernel[(l[0] - k[0], l[1] - k[1])]
    gram = hermitian_part(gram)

    lower = pivoted_cholesky(gram, tolerances.gram_clamp, clamp_log=clamp_log, site="gram", tol_eig=tolerances.eig)
    logger.debug(f"Window gram {size}x{size} factored at rank {lower.shape[1]}")

    wd = WindowDilation(
        window=window,
        base=basis,
        depth=depth,
        pair=(a, b),
        kernel=kernel,
        gram=gram,
        factor=adjoint(lower),
    )
    wd.ledger.add(
        "window:diagonal_blocks",
        "gram diagonal blocks are the identity",
        spectral_norm(kernel[(0, 0)] - np.eye(m)),
        tolerances.iso,
    )

    return wd


def _gram_isometry(w: np.ndarray, cols: np.ndarray) -> float:
    return spectral_norm(adjoint(w @ cols) @ (w @ cols) - adjoint(cols) @ cols) if cols.size else 0.0


def window_shifts(
    wd: WindowDilation, shift_power_budget: int = 1, tol: float = DEFAULT_TOLERANCES.iso
) -> WindowDilation:
    """W0 and W1 sending the vector of (k, x) to that of (k + e_1, x), resp. (k + e_2, x)."""
    m, window, factor = wd.base_dim, wd.window, wd.factor
    maps = []
    for axis in (0, 1):
        source = wd.columns(lambda k, axis=axis: k[axis] < window)
        target = source + (window + 1 if axis == 0 else 1) * m
        w, residual = least_squares_map(factor[:, source], factor[:, target])
        if residual > max(tol, 1e-6) * max(1.0, spectral_norm(factor)):
            raise IllConditioned(
                "Window shift is not consistent on the factor", axis=axis + 1, residual=f"{residual:.3e}"
            )
        maps.append(w)

    w0, w1 = maps
    wd = replace(wd, W0=w0, W1=w1, ledger=ResidualLedger(list(wd.ledger.entries)))

    budget = window - shift_power_budget
    interior = factor[:, wd.columns(lambda k: max(k) <= budget)]
    wd.ledger.add("window:W0_isometry", "W0 isometric on the interior", _gram_isometry(w0, interior), tol)
    wd.ledger.add("window:W1_isometry", "W1 isometric on the interior", _gram_isometry(w1, interior), tol)
    wd.ledger.add(
        "window:commute", "W0 W1 = W1 W0 on the interior", spectral_norm((w0 @ w1 - w1 @ w0) @ interior), tol
    )

    base = wd.level((0, 0))
    for i, j in nonnegative_indices(2, budget):
        value = adjoint(base) @ np.linalg.matrix_power(w0, i) @ np.linalg.matrix_power(w1, j) @ base
        wd.ledger.add(
            f"window:dilation({i},{j})", "<W0^a W1^b (0,x), (0,y)> = <A^a B^b x, y>",
            spectral_norm(value - wd.kernel[(i, j)]), tol, context=f"({i},{j})",
        )

    return wd


def lift_doubly_commuting(
    wd: WindowDilation,
    s_ops: list[np.ndarray],
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    tol: float | None = None,
) -> tuple[list[np.ndarray], ResidualLedger]:
    """U_i sending the vector of (k, x) to that of (k, S_i x), for x of Krylov depth below the window."""
    tol = tolerances.iso if tol is None else tol
    ledger = ResidualLedger()
    a, b = wd.pair
    x = wd.base
    shallow = np.flatnonzero(wd.depth < wd.window)
    xs = x[:, shallow]
    source_cols = wd.columns(lambda k: True, max_depth=wd.window - 1)
    source = wd.factor[:, source_cols]

    lifted = []
    for index, s in enumerate(s_ops, start=2):
        image = s @ xs
        hypotheses = {
            "isometric": spectral_norm(adjoint(image) @ image - np.eye(len(shallow))),
            "invariant": spectral_norm(image - x @ (adjoint(x) @ image)),
        }
        for name, op in (("A", a), ("B", b)):
            moved = op @ xs
            hypotheses[f"commutes_{name}"] = spectral_norm(op @ image - s @ moved)
            hypotheses[f"doubly_commutes_{name}"] = spectral_norm(op @ (adjoint(s) @ xs) - adjoint(s) @ moved)

        for name, residual in hypotheses.items():
            ledger.add(f"lift:hypothesis[{index}]:{name}", "S doubly commutes with the pair", residual, tol)
        worst = max(hypotheses, key=hypotheses.get)
        if hypotheses[worst] > tol:
            raise HypothesisViolated(
                "Lifting hypothesis fails", operator=index, check=worst, residual=f"{hypotheses[worst]:.3e}"
            )

        coeff = adjoint(x) @ image
        target = np.hstack([wd.level(k) @ coeff for k in wd.indices])
        u, welldef = least_squares_map(source, target)

        base = wd.level((0, 0))
        ledger.add(f"lift:welldefined[{index}]", "U_i(W^k x) = W^k S_i x is well defined", welldef, tol)
        ledger.add(f"lift:isometry[{index}]", "U_i is isometric on the window", _gram_isometry(u, source), tol)
        ledger.add(
            f"lift:extension[{index}]",
            "U_i (0,x) = (0, S_i x)",
            spectral_norm(u @ base[:, shallow] - base @ coeff),
            tol,
        )
        ledger.add(
            f"lift:coextension[{index}]",
            "P U_i* (0,x) = (0, S_i* x)",
            spectral_norm(adjoint(base[:, shallow]) @ adjoint(u) @ base - adjoint(coeff)),
            tol,
        )
        lifted.append(u)

    return lifted, ledger


def _apply(steps: list[tuple[np.ndarray, int]], x: np.ndarray) -> np.ndarray:
    """Apply each (op, power) in order, first entry first."""
    for op, power in steps:
        for _ in range(power):
            x = op @ x
    return x


def assemble_theorem(
    t: OperatorTuple,
    degree: int,
    window: int,
    margin: int = 1,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    tol: float = 1e-6,
    jobs: int = 1,
    strict: bool = False,
    model: CoExtensionModel | None = None,
) -> FinalDilation:
    """Isometric dilation W = (W_1, .., W_n) of T on the window, with every compression identity checked.

    W_1 and W_0 come from the regular dilation of (V_0, V_1), W_2..W_{n-1} are the lifted V_j and
    W_n = W_1* W_0. Compressions are evaluated with forward powers only.
    """
    if degree < window + 1:
        raise DimensionMismatch("Degree must exceed the window", degree=degree, window=window)
    if not 0 <= margin < window:
        raise DimensionMismatch("Margin must lie in [0, window)", margin=margin, window=window)

    model = model or assemble_predil(t, degree, tolerances, tol, jobs)
    n = t.n
    clamp_log = ClampLog()

    x, depth = krylov_base(model, window, tolerances)
    z1_rows, rows = model.z1_top_rows(window), model.top_rows(window)
    z1_tail = spectral_norm(x[z1_rows]) ** 2 if z1_rows.size else 0.0
    tail = spectral_norm(x[rows][:, depth < window]) ** 2 if rows.size else 0.0
    tol_pair = max(tolerances.iso, 10 * z1_tail)
    tol_lift = max(tolerances.iso, 10 * tail)
    logger.info(
        f"Window M={window} over a base of dimension {x.shape[1]} (z1 tail {z1_tail:.2e}, tail {tail:.2e})"
    )

    wd = regular_gram(model.V0, model.op(1), window, x, depth, tolerances, clamp_log, jobs, check_pair=False)
    wd = window_shifts(wd, 1, tol_pair)
    w0, w1 = wd.W0, wd.W1

    lifted, lift_ledger = lift_doubly_commuting(wd, [model.op(j) for j in range(2, n)], tolerances, tol_lift)
    wn = adjoint(w1) @ w0
    W = [w1, *lifted, wn]

    embed = wd.kolmogorov(model.pi)

    ledger = ResidualLedger()
    ledger.extend(wd.ledger)
    ledger.extend(lift_ledger)
    ledger.add_clamps(clamp_log, tolerances.gram_clamp)
    ledger.add("embed_isometry", "embedding of H is isometric", spectral_norm(adjoint(embed) @ embed - np.eye(t.dim)),
               model.tol_iso)

    base = wd.level((0, 0))

    def pair_compress(plus: tuple, minus: tuple) -> np.ndarray:
        return adjoint(tuple_power([w0, w1], minus, wd.rank) @ base) @ (tuple_power([w0, w1], plus, wd.rank) @ base)

    ledger.extend(
        regular_residual(
            None,
            pair_compress,
            signed_alphas(2, window - margin),
            tol_pair,
            label="regular:(W0,W1)",
            target=lambda plus, minus: wd.kernel[(plus[0] - minus[0], plus[1] - minus[1])],
        )
    )

    wn_cols = wd.factor[:, wd.columns(lambda k: k[1] >= 1 and k[0] <= window - 1, max_depth=window - 1)]
    interior = wd.factor[:, wd.columns(lambda k: max(k) <= window - 1)]
    ledger.add("Wn:isometry", "W_n isometric where W_1* inverts W_1", _gram_isometry(wn, wn_cols), tol_pair)
    ledger.add(
        "Wn:identity", "W_n* W_0 = W_1 on the interior", spectral_norm((adjoint(wn) @ w0 - w1) @ interior), tol_pair
    )
    for j, u in enumerate(lifted, start=2):
        ledger.add(
            f"Wn:commute[{j}]", "W_n W_j = W_j W_n", spectral_norm((wn @ u - u @ wn) @ wn_cols), tol_lift
        )
    vn_compressed = adjoint(x) @ model.op(n) @ x
    ledger.add(
        "Wn:compression", "P W_n P = V_n on the base", spectral_norm(adjoint(base) @ wn @ base - vn_compressed), tol
    )

    budget = window - margin
    ks = list(nonnegative_indices(n, budget))

    def theorem_entry(k: tuple[int, ...]) -> tuple[tuple[int, ...], str, float, float | None]:
        k1, kn = k[0], k[-1]
        start = _apply(list(zip(lifted, k[1:-1])), embed)
        if kn >= k1:
            case = "I"
            value = adjoint(_apply([(w1, kn - k1)], embed)) @ _apply([(w0, kn)], start)
        else:
            case = "II"
            value = adjoint(embed) @ _apply([(w1, k1 - kn), (w0, kn)], start)
        residual = spectral_norm(value - tuple_power(t.ops, k, t.dim))

        cross = None
        if k1 == kn:
            direct = adjoint(embed) @ _apply([(w1, k1), (wn, kn)], start)
            cross = spectral_norm(direct - value)

        return k, case, residual, cross

    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as executor:
        entries = list(executor.map(theorem_entry, ks))

    cross_tol = max(1e-10, 100 * EPS * wd.condition)
    worst = ((), 0.0)
    for k, case, residual, cross in entries:
        ledger.add(f"theorem:case_{case}{k}", "P W^k P = T^k", residual, tol, context=str(k))
        if residual > worst[1]:
            worst = (k, residual)
        if cross is not None:
            ledger.add(f"theorem:cross_check{k}", "case formula against W_n powers", cross, cross_tol, context=str(k))

    def hat1_compress(plus: tuple, minus: tuple) -> np.ndarray:
        *a_plus, c_plus = plus
        *a_minus, c_minus = minus
        left = _apply([(w1, c_minus), (w0, c_plus), *zip(lifted, a_plus)], embed)
        right = _apply([(w1, c_plus), (w0, c_minus), *zip(lifted, a_minus)], embed)
        return adjoint(right) @ left

    def hatn_compress(plus: tuple, minus: tuple) -> np.ndarray:
        c_plus, *a_plus = plus
        c_minus, *a_minus = minus
        left = _apply([(w1, c_plus), *zip(lifted, a_plus)], embed)
        right = _apply([(w1, c_minus), *zip(lifted, a_minus)], embed)
        return adjoint(right) @ left

    alphas = list(signed_alphas(n - 1, budget))
    ledger.extend(star_regular_residual(hat(t, 1), hat1_compress, alphas, tol, label="star_regular:W1hat"))
    ledger.extend(star_regular_residual(hat(t, n), hatn_compress, alphas, tol, label="star_regular:Wnhat"))

    final = FinalDilation(
        window=window, margin=margin, W=W, W0=w0, embed=embed, ledger=ledger, dilation=wd, model=model, worst=worst
    )
    logger.info(f"Dilation identities: worst residual {worst[1]:.3e} at k={worst[0]}")

    if strict and not ledger.passed:
        entry = ledger.worst()
        raise VerificationFailed(
            "Dilation identities fail", worst=entry.name, residual=f"{entry.residual:.3e}", tol=f"{entry.tol:.1e}"
        )

    return final
