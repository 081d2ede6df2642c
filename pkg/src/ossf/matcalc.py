"""Dense small-matrix functional calculus.

Matrix powers c^A = exp(A log c), eigenvalue real-part extraction with
tolerance-based grouping, and linear solves.  Everything here operates on
plain numpy arrays and is pure; the matrix-power kernel is vectorized over
leading batch dimensions because the geometry and synthesis layers evaluate
exp(s_i * A) for thousands of scalars s_i at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, NumericError

MAX_DIM = 16
DEFAULT_GROUP_TOL = 1e-6

# Pade-13 numerator coefficients for the scaling-and-squaring method.
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152


def as_square_matrix(A, name="A", max_dim=MAX_DIM):
    """Validate and return ``A`` as a square float64 array."""
    M = np.asarray(A, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    if max_dim is not None and M.shape[0] > max_dim:
        raise DimensionError(
            f"{name} has dimension {M.shape[0]}, supported maximum is {max_dim}"
        )
    if M.shape[0] == 0:
        raise DimensionError(f"{name} must be nonempty")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} contains non-finite entries")
    return M


def expm_multi(A):
    """exp(A) for a stack of square matrices, shape (..., n, n).

    Pade-13 approximant with scaling and squaring, vectorized over the
    leading dimensions.  Scaling exponents are chosen per matrix.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"expected stack of square matrices, got {A.shape}")
    n = A.shape[-1]
    if n == 1:
        return np.exp(A)

    norms = np.abs(A).sum(axis=-2).max(axis=-1)  # 1-norm per matrix
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(norms / _THETA13))
    s = np.where(np.isfinite(s), np.maximum(s, 0.0), 0.0).astype(np.int64)
    As = A / np.exp2(s)[..., None, None]

    ident = np.broadcast_to(np.eye(n), As.shape)
    b = _PADE13
    A2 = As @ As
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = As @ (
        A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
        + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident
    )
    V = (
        A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
        + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    )
    try:
        R = np.linalg.solve(V - U, V + U)
    except np.linalg.LinAlgError as exc:
        raise NumericError("Pade denominator is singular", {"norms": norms}) from exc

    smax = int(s.max()) if s.size else 0
    for t in range(smax):
        mask = s > t
        if mask.ndim == 0:
            R = R @ R
        else:
            R[mask] = R[mask] @ R[mask]
    return R


def matrix_power(A, c):
    """c^A = exp(A log c) for a square matrix A and scalar c > 0."""
    M = as_square_matrix(A)
    c = float(c)
    if not np.isfinite(c) or c <= 0.0:
        raise DomainError(f"matrix power base must be positive and finite, got {c}")
    return expm_multi(np.log(c) * M)


def matrix_power_multi(A, cs):
    """c_i^A for an array of positive scalars, returned as (len(cs), n, n)."""
    M = as_square_matrix(A)
    c = np.asarray(cs, dtype=float)
    if c.size and (not np.all(np.isfinite(c)) or np.any(c <= 0.0)):
        raise DomainError("matrix power bases must be positive and finite")
    return expm_multi(np.log(c)[..., None, None] * M)


@dataclass(frozen=True)
class EigenStructure:
    """Eigenvalue real parts grouped by proximity.

    ``groups`` is an ordered tuple of (real_part, multiplicity) with strictly
    increasing real parts; multiplicities are algebraic and sum to ``total``.
    The reported real part of a group is the multiplicity-weighted mean of
    its members, which averages out the O(eps^(1/k)) splitting that defective
    eigenvalues suffer in floating point.
    """

    groups: tuple
    total: int

    @property
    def real_parts(self):
        return np.array([g[0] for g in self.groups])

    @property
    def multiplicities(self):
        return np.array([g[1] for g in self.groups], dtype=int)

    @property
    def min_real(self):
        return self.groups[0][0]

    @property
    def max_real(self):
        return self.groups[-1][0]


def eigen_real_parts(A, group_tol=DEFAULT_GROUP_TOL):
    """Group the eigenvalue real parts of ``A``.

    Two eigenvalues land in the same group when they are connected by a
    chain of real-part gaps each below ``group_tol``.
    """
    M = as_square_matrix(A)
    if not group_tol > 0:
        raise DomainError("group_tol must be positive")
    try:
        eigs = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "eigenvalue iteration failed to converge",
            {"matrix_norm": float(np.linalg.norm(M))},
        ) from exc
    reals = np.sort(eigs.real)
    groups = []
    start = 0
    for i in range(1, len(reals) + 1):
        if i == len(reals) or reals[i] - reals[i - 1] >= group_tol:
            members = reals[start:i]
            groups.append((float(members.mean()), len(members)))
            start = i
    return EigenStructure(groups=tuple(groups), total=M.shape[0])


def eigenvalues(A):
    """Raw complex eigenvalues (with multiplicity) of a square matrix."""
    M = as_square_matrix(A)
    try:
        return np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            "eigenvalue iteration failed to converge",
            {"matrix_norm": float(np.linalg.norm(M))},
        ) from exc


def solve_linear(A, b, cond_limit=1e12, residual_tol=1e-10):
    """Solve A x = b for well-conditioned square A.

    Raises NumericError when the condition estimate exceeds ``cond_limit``
    or the relative residual misses ``residual_tol``.
    """
    M = as_square_matrix(A, max_dim=None)
    rhs = np.asarray(b, dtype=float)
    if rhs.shape[0] != M.shape[0]:
        raise DimensionError(
            f"right-hand side of length {rhs.shape[0]} does not match {M.shape}"
        )
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond >= cond_limit:
        raise NumericError(
            "matrix is singular or too ill-conditioned to solve",
            {"condition": float(cond)},
        )
    x = np.linalg.solve(M, rhs)
    scale = np.linalg.norm(rhs)
    residual = np.linalg.norm(M @ x - rhs) / (scale if scale > 0 else 1.0)
    if residual >= residual_tol:
        raise NumericError(
            "linear solve missed its residual contract",
            {"relative_residual": float(residual), "condition": float(cond)},
        )
    return x
