"""Dense complex linear algebra kernels used by every stage of the dilation pipeline.

A CMatrix is a two-dimensional ``numpy.ndarray`` of dtype ``complex128``. All tolerances are
relative to the norm of the input they are applied to.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from dilatin.DataTypes import DEFAULT_TOLERANCES
from dilatin.Modules.ManualException import NoConvergence, NotHermitian, NotIsometric, NotPSD

EPS = np.finfo(float).eps


@dataclass
class HermEigen:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass
class ClampEvent:
    """A negative eigenvalue (or pivot) that was clamped to zero."""

    site: str
    magnitude: float
    scale: float


@dataclass
class ClampLog:
    events: list[ClampEvent] = field(default_factory=list)

    def record(self, site: str, magnitude: float, scale: float):
        self.events.append(ClampEvent(site=site, magnitude=magnitude, scale=scale))

    def worst(self) -> float:
        return max((event.magnitude for event in self.events), default=0.0)


def as_cmatrix(a) -> np.ndarray:
    matrix = np.asarray(a, dtype=np.complex128)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix has non-finite entries")

    return matrix


def adjoint(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return (a + adjoint(a)) / 2


def spectral_norm(a: np.ndarray) -> float:
    """Largest singular value, taken from the eigenvalues of A*A."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0

    gram = adjoint(a) @ a if a.shape[1] <= a.shape[0] else a @ adjoint(a)
    top = np.linalg.eigvalsh(hermitian_part(gram))[-1]

    return float(np.sqrt(max(top, 0.0)))


def spectral_radius(a: np.ndarray, max_doublings: int = 64, tol: float = 1e-12) -> float:
    """Gelfand bound ||A^m||^(1/m) along m = 2^j, with A^m renormalised every step.

    The returned value never exceeds ||A||. NoConvergence is raised when the estimate still moves
    after ``max_doublings`` squarings; callers may then use the last bound.
    """
    a = as_cmatrix(a)
    norm = spectral_norm(a)
    if norm == 0.0:
        return 0.0

    power = a / norm
    log_scale = np.log(norm)
    exponent = 1
    estimate = norm

    for _ in range(max_doublings):
        power = power @ power
        log_scale *= 2
        exponent *= 2

        power_norm = spectral_norm(power)
        if power_norm == 0.0:
            return 0.0

        power /= power_norm
        log_scale += np.log(power_norm)

        previous = estimate
        estimate = float(min(np.exp(log_scale / exponent), norm))
        if abs(estimate - previous) <= tol * max(estimate, EPS):
            return estimate

    raise NoConvergence(
        "Spectral radius estimate did not settle", last_estimate=estimate, doublings=max_doublings
    )


def herm_eigen(
    a: np.ndarray, tol_herm: float = DEFAULT_TOLERANCES.herm, tol_eig: float = DEFAULT_TOLERANCES.eig
) -> HermEigen:
    """Ascending eigenvalues and orthonormal eigenvectors, checked to ``tol_eig`` relative to ||A||."""
    a = as_cmatrix(a)
    scale = max(spectral_norm(a), 1.0)
    asymmetry = spectral_norm(a - adjoint(a))
    if asymmetry > tol_herm * scale:
        raise NotHermitian("Matrix fails the Hermitian check", asymmetry=f"{asymmetry:.3e}")

    symmetric = hermitian_part(a)
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(symmetric)
    except np.linalg.LinAlgError as e:
        raise NoConvergence(f"Hermitian eigensolver failed: {e}") from e

    if a.size:
        reconstruction = spectral_norm((eigenvectors * eigenvalues) @ adjoint(eigenvectors) - symmetric)
        orthogonality = isometry_defect(eigenvectors)
        if reconstruction > tol_eig * scale or orthogonality > tol_eig:
            raise NoConvergence(
                "Hermitian eigensolver missed its accuracy",
                reconstruction=f"{reconstruction:.3e}",
                orthogonality=f"{orthogonality:.3e}",
            )

    return HermEigen(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def clamp_scale(eigenvalues: np.ndarray) -> float:
    """Scale the clamp tolerance is measured against, never below 1."""
    return max(1.0, float(np.max(np.abs(eigenvalues)))) if eigenvalues.size else 1.0


def _clamp_spectrum(
    eigenvalues: np.ndarray, scale: float, clamp_tol: float, site: str, clamp_log: ClampLog | None
) -> np.ndarray:
    lowest = float(eigenvalues[0]) if eigenvalues.size else 0.0
    if lowest < -clamp_tol * scale:
        raise NotPSD(f"Negative eigenvalue in {site}", eigenvalue=f"{lowest:.3e}", scale=f"{scale:.3e}")

    if lowest < 0:
        if clamp_log is not None:
            clamp_log.record(site, -lowest, scale)
        if -lowest > 1e3 * EPS * scale:
            logger.warning(f"Clamped eigenvalue {lowest:.3e} to 0 in {site} (scale {scale:.3e})")
        else:
            logger.debug(f"Clamped eigenvalue {lowest:.3e} to 0 in {site}")

    return np.clip(eigenvalues, 0.0, None)


def psd_sqrt(
    a: np.ndarray,
    clamp_tol: float = DEFAULT_TOLERANCES.clamp,
    clamp_log: ClampLog | None = None,
    site: str = "psd_sqrt",
    tol_eig: float = DEFAULT_TOLERANCES.eig,
) -> np.ndarray:
    eigen = herm_eigen(a, tol_eig=tol_eig)
    values = _clamp_spectrum(eigen.eigenvalues, clamp_scale(eigen.eigenvalues), clamp_tol, site, clamp_log)

    vectors = eigen.eigenvectors
    root = (vectors * np.sqrt(values)) @ adjoint(vectors)

    return hermitian_part(root)


def range_basis(a: np.ndarray, rank_tol: float = DEFAULT_TOLERANCES.rank) -> np.ndarray:
    """Orthonormal basis of the column space, cut at singular values below rank_tol * sigma_max."""
    a = as_cmatrix(a)
    rows = a.shape[0]
    if a.size == 0:
        return np.zeros((rows, 0), dtype=np.complex128)

    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((rows, 0), dtype=np.complex128)

    rank = int(np.sum(s >= rank_tol * s[0]))

    return u[:, :rank]


def isometry_defect(v: np.ndarray) -> float:
    v = np.asarray(v)
    if v.shape[1] == 0:
        return 0.0

    return spectral_norm(adjoint(v) @ v - np.eye(v.shape[1]))


def unitary_complete(v: np.ndarray, tol_iso: float = DEFAULT_TOLERANCES.iso) -> np.ndarray:
    """Extend k orthonormal columns of height m to an m x m unitary keeping those columns first."""
    v = as_cmatrix(v)
    m, k = v.shape
    if k > m:
        raise NotIsometric("More columns than rows", rows=m, cols=k)

    if k == 0:
        return np.eye(m, dtype=np.complex128)

    defect = isometry_defect(v)
    if defect > tol_iso:
        raise NotIsometric("Columns are not orthonormal", defect=f"{defect:.3e}")

    if k == m:
        return v.copy()

    u, _, _ = np.linalg.svd(v, full_matrices=True)

    return np.hstack([v, u[:, k:]])


def complement_basis(v: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ran v (v with orthonormal columns)."""
    return unitary_complete(v)[:, v.shape[1] :]


def pivoted_cholesky(
    g: np.ndarray,
    clamp_tol: float = DEFAULT_TOLERANCES.clamp,
    rank_tol: float | None = None,
    clamp_log: ClampLog | None = None,
    site: str = "pivoted_cholesky",
    tol_eig: float = DEFAULT_TOLERANCES.eig,
) -> np.ndarray:
    """Low-rank factor L with L L* = G, greatest-diagonal pivoting.

    Stops once the largest remaining pivot drops below ``rank_tol`` times the first pivot
    (0.5 * n * eps when not given). The returned factor has one column per accepted pivot and its
    rows are in the original order.
    """
    g = as_cmatrix(g)
    n = g.shape[0]
    if g.shape[0] != g.shape[1]:
        raise NotPSD("Gram matrix is not square", shape=g.shape)
    if n == 0:
        return np.zeros((0, 0), dtype=np.complex128)

    eigenvalues = herm_eigen(g, tol_eig=tol_eig).eigenvalues
    scale = clamp_scale(eigenvalues)
    _clamp_spectrum(eigenvalues, scale, clamp_tol, site, clamp_log)

    # A spectrum inside the clamp band is a zero Gram matrix.
    if float(eigenvalues[-1]) <= clamp_tol * scale:
        return np.zeros((n, 0), dtype=np.complex128)

    stop_tol = 0.5 * n * EPS if rank_tol is None else rank_tol

    a = hermitian_part(g).copy()
    piv = np.arange(n)
    rank = n
    first_pivot = 0.0

    for i in range(n):
        d = a.diagonal().real
        j = int(np.argmax(d[i:])) + i
        a_max = d[j]
        if i == 0:
            first_pivot = a_max
        if a_max <= stop_tol * first_pivot:
            rank = i
            break

        # Symmetric row/column permutation.
        if j != i:
            a[:, [i, j]] = a[:, [j, i]]
            a[[i, j], :] = a[[j, i], :]
            piv[[i, j]] = piv[[j, i]]

        a[i, i] = np.sqrt(a_max)
        a[i + 1 :, i] /= a[i, i]
        a[i, i + 1 :] = 0.0

        # Update the whole trailing block rather than one triangle.
        a[i + 1 :, i + 1 :] -= np.outer(a[i + 1 :, i], a[i + 1 :, i].conj())

    factor = np.tril(a)[:, :rank]
    ipiv = np.empty(n, dtype=int)
    ipiv[piv] = np.arange(n)

    return factor[ipiv, :]


def least_squares_map(
    x: np.ndarray, y: np.ndarray, rank_tol: float = DEFAULT_TOLERANCES.rank
) -> tuple[np.ndarray, float]:
    """M minimising ||M X - Y|| over maps on ran X, extended by zero on its complement.

    Returns the map together with the residual ||M X - Y||.
    """
    x = as_cmatrix(x)
    y = as_cmatrix(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"column counts differ: {x.shape[1]} != {y.shape[1]}")

    if x.size == 0 or y.shape[0] == 0:
        return np.zeros((y.shape[0], x.shape[0]), dtype=np.complex128), spectral_norm(y)

    u, s, vh = np.linalg.svd(x, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros((y.shape[0], x.shape[0]), dtype=np.complex128), spectral_norm(y)

    keep = s >= rank_tol * s[0]
    pseudo_inverse = adjoint(vh[keep]) @ (adjoint(u[:, keep]) / s[keep, None])

    mapping = y @ pseudo_inverse
    residual = spectral_norm(mapping @ x - y)

    return mapping, residual


def block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    rows = sum(block.shape[0] for block in blocks)
    cols = sum(block.shape[1] for block in blocks)
    result = np.zeros((rows, cols), dtype=np.complex128)

    r = c = 0
    for block in blocks:
        result[r : r + block.shape[0], c : c + block.shape[1]] = block
        r += block.shape[0]
        c += block.shape[1]

    return result
