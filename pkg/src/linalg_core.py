"""
Hermitian linear algebra for correlation-matrix filters.

Pseudo-inverses with an explicit rank tolerance, the joint diagonalization of a
Hermitian pencil (A, B) with possibly singular B, rank-constrained pencil
subtraction, the microphone Schur complement and the block generalized inverse
of the stacked microphone/loudspeaker correlation matrix.

All functions take and return plain numpy arrays and keep no state, so they can
be called from any number of per-bin workers.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy import linalg as sla

from errors import InvalidInputError
from logger import get_logger

logger = get_logger("aecnr.linalg")

DEFAULT_TOLERANCE = 1e-10
CONDITION_TOLERANCE = 1e-8
# Most negative eigenvalue of B accepted as round-off, relative to the pencil scale
PSD_TOLERANCE = 1e-8


@dataclass(frozen=True)
class RankPolicy:
    """Decides which singular values count as zero."""

    relative_tolerance: float = DEFAULT_TOLERANCE
    explicit_rank: Optional[int] = None

    def __post_init__(self):
        if not self.relative_tolerance > 0:
            raise InvalidInputError("relative_tolerance must be > 0")
        if self.explicit_rank is not None and self.explicit_rank < 0:
            raise InvalidInputError("explicit_rank must be >= 0")

    def rank_of(self, singular_values: np.ndarray) -> int:
        """Numerical rank of a descending, non-negative singular value vector."""
        if singular_values.size == 0:
            return 0
        largest = float(singular_values[0])
        if largest <= 0.0:
            return 0
        rank = int(np.count_nonzero(singular_values > self.relative_tolerance * largest))
        if self.explicit_rank is not None:
            rank = min(rank, self.explicit_rank)
        return rank


DEFAULT_POLICY = RankPolicy()


def _ratios(lambda_a: np.ndarray, lambda_b: np.ndarray) -> np.ndarray:
    """lambda_a / lambda_b with +-inf for null modes of B (0/0 sorts as -inf)."""
    safe = np.where(lambda_b > 0, lambda_b, 1.0)
    return np.where(lambda_b > 0, lambda_a / safe, np.where(lambda_a > 0, np.inf, -np.inf))


@dataclass
class GevdResult:
    """
    Joint diagonalization of a Hermitian pencil.

    ``eigvectors`` (V) satisfies V^H A V = diag(lambda_a) and
    V^H B V = diag(lambda_b), with lambda_b = 1 on range(B) and 0 on its null
    space. ``basis`` is V^{-H}, the synthesis basis with
    A = basis diag(lambda_a) basis^H and B = basis diag(lambda_b) basis^H.
    Modes are ordered by descending lambda_a / lambda_b.
    """

    eigvectors: np.ndarray
    lambda_a: np.ndarray
    lambda_b: np.ndarray
    basis: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return _ratios(self.lambda_a, self.lambda_b)

    def reconstruct_a(self) -> np.ndarray:
        return (self.basis * self.lambda_a) @ self.basis.conj().T

    def reconstruct_b(self) -> np.ndarray:
        return (self.basis * self.lambda_b) @ self.basis.conj().T


class GeneralizedInverseConditions(NamedTuple):
    """The four Penrose conditions for a candidate inverse G of R."""

    rgr: bool
    grg: bool
    rg_hermitian: bool
    gr_hermitian: bool

    def is_pseudo_inverse(self) -> bool:
        return all(self)


def hermitian(a: np.ndarray) -> np.ndarray:
    """Hermitian part (A + A^H) / 2."""
    return 0.5 * (a + a.conj().T)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate a finite 2-D array and return it as complex."""
    arr = np.asarray(a)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    arr = arr.astype(complex, copy=False)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def _as_square(a, name: str) -> np.ndarray:
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise InvalidInputError(f"{name} must be square, got {arr.shape}")
    return arr


def pseudo_inverse(a, policy: Optional[RankPolicy] = None) -> np.ndarray:
    """
    Moore-Penrose pseudo-inverse via the SVD.

    Singular values at or below ``policy.relative_tolerance`` times the largest
    one are treated as zero.
    """
    a = as_matrix(a, "A")
    policy = policy or DEFAULT_POLICY
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    rank = policy.rank_of(s)
    if rank == 0:
        return np.zeros((a.shape[1], a.shape[0]), dtype=complex)
    return (vh[:rank].conj().T / s[:rank]) @ u[:, :rank].conj().T


def gevd_pencil(a, b, policy: Optional[RankPolicy] = None) -> GevdResult:
    """
    Jointly diagonalize the Hermitian pencil (A, B) with B positive semidefinite.

    B is whitened on its range by the pseudo-inverse square root. When B is
    singular, the basis is completed with null-space vectors of B (lambda_b = 0,
    lambda_a = projection of A) and the range vectors are made A-orthogonal to
    them. Modes with lambda_b = 0 and lambda_a > 0 come first, modes with both
    zero come after all finite ratios.

    Raises:
        InvalidInputError: on size mismatch, non-finite input or indefinite B.
    """
    a = hermitian(_as_square(a, "A"))
    b = hermitian(_as_square(b, "B"))
    if a.shape != b.shape:
        raise InvalidInputError(f"pencil size mismatch: {a.shape} vs {b.shape}")
    policy = policy or DEFAULT_POLICY
    n = a.shape[0]

    wb, ub = sla.eigh(b)
    scale = max(float(np.max(np.abs(wb))), float(np.linalg.norm(a, 2)))
    if scale == 0.0:
        eye = np.eye(n, dtype=complex)
        return GevdResult(eye, np.zeros(n), np.zeros(n), eye)

    floor = policy.relative_tolerance * scale
    if wb[0] < -max(PSD_TOLERANCE * scale, floor):
        raise InvalidInputError(
            f"B is indefinite: smallest eigenvalue {wb[0]:.3e} at scale {scale:.3e}"
        )

    in_range = wb > floor
    whiten = ub[:, in_range] / np.sqrt(wb[in_range])
    null = ub[:, ~in_range]

    nu = np.zeros(0)
    if null.shape[1]:
        nu, z = sla.eigh(hermitian(null.conj().T @ a @ null))
        null = null @ z
        usable = np.abs(nu) > floor
        if np.any(usable) and whiten.shape[1]:
            coupling = null[:, usable].conj().T @ a @ whiten
            whiten = whiten - null[:, usable] @ (coupling / nu[usable][:, None])

    mu = np.zeros(0)
    v_range = whiten
    if whiten.shape[1]:
        mu, y = sla.eigh(hermitian(whiten.conj().T @ a @ whiten))
        v_range = whiten @ y

    vectors = np.hstack([v_range, null])
    lambda_a = np.concatenate([mu, np.where(np.abs(nu) > floor, nu, 0.0)])
    lambda_b = np.concatenate([np.ones(mu.size), np.zeros(nu.size)])

    order = np.lexsort((-lambda_a, -_ratios(lambda_a, lambda_b)))
    vectors = vectors[:, order]
    lambda_a = lambda_a[order]
    lambda_b = lambda_b[order]

    basis = np.linalg.inv(vectors).conj().T
    if null.shape[1]:
        logger.debug(f"GEVD with singular B: rank {mu.size} of {n}")
    return GevdResult(vectors, lambda_a, lambda_b, basis)


def gevd_lowrank_subtract(a, b, rank: int, policy: Optional[RankPolicy] = None) -> np.ndarray:
    """
    Rank-constrained estimate of A - B from the pencil GEVD.

    Keeps the ``rank`` leading modes with eigenvalue differences clamped at
    zero, so the result is Hermitian PSD of rank <= ``rank``.
    """
    a = _as_square(a, "A")
    n = a.shape[0]
    if not 0 <= rank <= n:
        raise InvalidInputError(f"rank {rank} outside [0, {n}]")
    result = gevd_pencil(a, b, policy)
    gains = np.zeros(n)
    gains[:rank] = np.maximum(result.lambda_a[:rank] - result.lambda_b[:rank], 0.0)
    return hermitian((result.basis * gains) @ result.basis.conj().T)


def _check_blocks(rmm, rll, rle) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rmm = _as_square(rmm, "Rmm")
    rll = _as_square(rll, "Rll")
    rle = as_matrix(rle, "Rle")
    if rle.shape != (rll.shape[0], rmm.shape[0]):
        raise InvalidInputError(
            f"Rle must be {rll.shape[0]}x{rmm.shape[0]}, got {rle.shape}"
        )
    return rmm, rll, rle


def schur_complement(rmm, rel, rll, rle, policy: Optional[RankPolicy] = None) -> np.ndarray:
    """Microphone correlation after optimal echo cancellation: Rmm - Rel Rll^+ Rle."""
    rmm, rll, rle = _check_blocks(rmm, rll, rle)
    rel = as_matrix(rel, "Rel")
    if rel.shape != (rmm.shape[0], rll.shape[0]):
        raise InvalidInputError(f"Rel must be {rmm.shape[0]}x{rll.shape[0]}, got {rel.shape}")
    policy = policy or DEFAULT_POLICY
    sigma = hermitian(rmm - rel @ pseudo_inverse(rll, policy) @ rle)
    # eigenvalues at round-off level of Rmm are the cancelled echo subspace
    floor = policy.relative_tolerance * float(np.linalg.norm(rmm, 2))
    w, v = sla.eigh(sigma)
    if np.any(np.abs(w) <= floor):
        w = np.where(np.abs(w) <= floor, 0.0, w)
        sigma = hermitian((v * w) @ v.conj().T)
    return sigma


def assemble_extended(rmm, rll, rle) -> np.ndarray:
    """Stack [[Rmm, Rel], [Rle, Rll]] with Rel = Rle^H."""
    rmm, rll, rle = _check_blocks(rmm, rll, rle)
    return np.block([[rmm, rle.conj().T], [rle, rll]])


def split_extended(r_ext, num_mics: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (Rmm, Rll, Rle) blocks of an extended correlation matrix."""
    r_ext = _as_square(r_ext, "R_ext")
    if not 0 < num_mics < r_ext.shape[0]:
        raise InvalidInputError(f"num_mics {num_mics} incompatible with {r_ext.shape}")
    m = num_mics
    return r_ext[:m, :m], r_ext[m:, m:], r_ext[m:, :m]


def extended_generalized_inverse(rmm, rll, rle, policy: Optional[RankPolicy] = None) -> np.ndarray:
    """
    Block generalized inverse of the extended correlation matrix.

    Built from the Schur complement pseudo-inverse and Rll^+. Always satisfies
    R G R = R and G R G = G; it is the pseudo-inverse iff the Schur complement
    is full rank.
    """
    rmm, rll, rle = _check_blocks(rmm, rll, rle)
    rel = rle.conj().T
    rll_pinv = pseudo_inverse(rll, policy)
    sigma_pinv = pseudo_inverse(schur_complement(rmm, rel, rll, rle, policy), policy)
    h = rll_pinv @ rle
    return np.block([
        [sigma_pinv, -sigma_pinv @ h.conj().T],
        [-h @ sigma_pinv, rll_pinv + h @ sigma_pinv @ h.conj().T],
    ])


def generalized_inverse(
    r_ext,
    num_mics: int,
    method: str = "block",
    policy: Optional[RankPolicy] = None,
) -> np.ndarray:
    """Generalized inverse of an extended matrix: ``block`` or minimum-norm ``pinv``."""
    if method == "pinv":
        return pseudo_inverse(r_ext, policy)
    if method == "block":
        rmm, rll, rle = split_extended(r_ext, num_mics)
        return extended_generalized_inverse(rmm, rll, rle, policy)
    raise InvalidInputError(f"unknown inverse method '{method}'")


def _within(residual: np.ndarray, scale: float, tol: float) -> bool:
    return bool(np.linalg.norm(residual) <= tol * scale)


def check_generalized_inverse_conditions(
    r, g, tol: float = CONDITION_TOLERANCE
) -> GeneralizedInverseConditions:
    """Evaluate the four Penrose conditions, each relative to the matching norm."""
    r = _as_square(r, "R")
    g = _as_square(g, "G")
    if r.shape != g.shape:
        raise InvalidInputError(f"R and G differ in size: {r.shape} vs {g.shape}")
    rg = r @ g
    gr = g @ r
    return GeneralizedInverseConditions(
        rgr=_within(rg @ r - r, np.linalg.norm(r), tol),
        grg=_within(gr @ g - g, np.linalg.norm(g), tol),
        rg_hermitian=_within(rg.conj().T - rg, np.linalg.norm(rg), tol),
        gr_hermitian=_within(gr.conj().T - gr, np.linalg.norm(gr), tol),
    )


def nested_range_identity_check(a, b, c, policy: Optional[RankPolicy] = None) -> float:
    """
    Relative deviation of (ABA)^+ ABC from A^+ C.

    The identity holds when col(A) is inside col(B) and col(C) inside col(A).
    """
    a = _as_square(a, "A")
    b = _as_square(b, "B")
    c = as_matrix(c, "C")
    lhs = pseudo_inverse(a @ b @ a, policy) @ a @ b @ c
    rhs = pseudo_inverse(a, policy) @ c
    return float(np.linalg.norm(lhs - rhs) / max(1.0, np.linalg.norm(rhs)))


def map_bins(fn, *stacks: np.ndarray) -> np.ndarray:
    """Apply ``fn`` to matching per-bin slices of (F, ...) stacks and restack."""
    num_bins = {stack.shape[0] for stack in stacks}
    if len(num_bins) != 1:
        raise InvalidInputError(f"per-bin stacks disagree on bin count: {sorted(num_bins)}")
    return np.stack([fn(*(stack[f] for stack in stacks)) for f in range(stacks[0].shape[0])])
