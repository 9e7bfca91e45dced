"""Dense matrix kernels: polar factor by odd-polynomial iteration, spectral and
nuclear norms, and a slow one-sided Jacobi SVD used only to check the rest.

Everything here works in float64.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionError,
    NumericInstabilityError,
    OracleScopeError,
)

# Greedy minimax odd quintics p(x) = a x + b x^3 + c x^5, one per iteration.
# Designed for singular values in [0.007, 1.1] after prescaling, which covers
# condition numbers up to ~130 with the 1.1 safety margin below. After five
# steps every singular value sits within 7e-5 of one. The final entry is the
# quintic Newton-Schulz map, which fixes 1 exactly and squashes what is left
# to ~1e-12; the nuclear norm needs that last step.
DEFAULT_COEFFICIENTS = (
    (7.4924668848254985, -18.18602683036796, 11.121599435908584),
    (3.833646484512182, -2.86325546396181, 0.5526305157103582),
    (2.998907489143448, -2.245838571965732, 0.48265466617489555),
    (2.085028207800197, -1.467623898230799, 0.3973441372334231),
    (1.8774269705334725, -1.2526939980030962, 0.3752695017990274),
    (1.875, -1.25, 0.375),
)

ORACLE_MAX_DIM = 16


@dataclass(frozen=True)
class PolarConfig:
    """How :func:`polar` iterates.

    If ``coefficients`` is shorter than ``iterations`` the last triple is reused.
    With ``spectral_prescale`` the input is divided by ``safety`` times a
    power-iteration estimate of its largest singular value; otherwise by its
    Frobenius norm.
    """

    iterations: int = 6
    coefficients: tuple = DEFAULT_COEFFICIENTS
    spectral_prescale: bool = True
    power_iters: int = 50
    safety: float = 1.1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if len(self.coefficients) == 0:
            raise ValueError("coefficient table is empty")
        for triple in self.coefficients:
            if len(triple) != 3:
                raise ValueError(f"coefficient entry {triple!r} is not a triple")

    def triple(self, k):
        return self.coefficients[min(k, len(self.coefficients) - 1)]


DEFAULT_POLAR = PolarConfig()


def _as_matrix(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {M.shape}")
    return M


def frob_inner(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.dot(A.ravel(), B.ravel()))


def spectral_norm(M, iters=50):
    """Largest singular value by power iteration on the smaller Gram matrix.

    The ``iters`` power steps are taken by repeated squaring of the normalized
    Gram matrix (so the count is rounded up to a power of two). The Rayleigh
    quotient never overshoots the true value.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    M = _as_matrix(M)
    if not np.any(M):
        return 0.0
    if M.shape[0] < M.shape[1]:
        M = M.T
    # normalize first so the Gram matrix neither underflows nor overflows
    amax = float(np.max(np.abs(M)))
    M = M / amax
    G = M.T @ M
    P = G / np.linalg.norm(G)
    for _ in range(int(np.ceil(np.log2(iters)))):
        P = P @ P
        P /= np.linalg.norm(P)
    # fixed start vector keeps the estimate a deterministic, scale-equivariant
    # function of M
    x = P @ np.random.default_rng(0x5EED).standard_normal(M.shape[1])
    nx = np.linalg.norm(x)
    if nx == 0.0 or not np.isfinite(nx):
        # start vector orthogonal to the top eigenspace; fall back to the exact value
        return amax * float(np.sqrt(np.linalg.eigvalsh(G)[-1]))
    x /= nx
    return amax * float(np.sqrt(max(x @ G @ x, 0.0)))


def polar(M, cfg=DEFAULT_POLAR):
    """Approximate orthogonal polar factor U V^T of M."""
    M = _as_matrix(M)
    if not np.all(np.isfinite(M)):
        raise NumericInstabilityError("non-finite entries in polar input", iteration=0)
    if not np.any(M):
        raise DegenerateInputError("polar factor of the zero matrix is undefined")

    transpose = M.shape[0] > M.shape[1]
    X = M.T if transpose else M
    if cfg.spectral_prescale:
        scale = cfg.safety * spectral_norm(X, cfg.power_iters)
    else:
        scale = float(np.linalg.norm(X))
    X = X / scale

    for k in range(cfg.iterations):
        a, b, c = cfg.triple(k)
        with np.errstate(over="ignore", invalid="ignore"):
            A = X @ X.T
            B = b * A + c * (A @ A)
            X = a * X + B @ X
        if not np.all(np.isfinite(X)):
            raise NumericInstabilityError(
                f"polar iteration produced non-finite values at iteration {k}",
                iteration=k,
            )
    return X.T if transpose else X


def nuclear_norm(M, cfg=DEFAULT_POLAR):
    """Sum of singular values, computed as <polar(M), M>."""
    M = _as_matrix(M)
    if not np.any(M):
        return 0.0
    return max(frob_inner(polar(M, cfg), M), 0.0)


def svd_oracle(M, tol=1e-15, max_sweeps=100):
    """Reduced SVD by one-sided Jacobi rotations.

    Slow and only meant for checking the fast paths on small matrices.
    Returns ``U, S, V`` with ``M = U @ diag(S) @ V.T`` and ``S`` descending.
    """
    M = _as_matrix(M)
    if max(M.shape) > ORACLE_MAX_DIM:
        raise OracleScopeError(
            f"svd_oracle is limited to {ORACLE_MAX_DIM}x{ORACLE_MAX_DIM}, got {M.shape}"
        )
    if M.shape[0] < M.shape[1]:
        V, S, U = svd_oracle(M.T, tol=tol, max_sweeps=max_sweeps)
        return U, S, V

    m, n = M.shape
    A = M.copy()
    V = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = A[:, i] @ A[:, i]
                beta = A[:, j] @ A[:, j]
                gamma = A[:, i] @ A[:, j]
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ai, aj = A[:, i].copy(), A[:, j].copy()
                A[:, i] = c * ai - s * aj
                A[:, j] = s * ai + c * aj
                vi, vj = V[:, i].copy(), V[:, j].copy()
                V[:, i] = c * vi - s * vj
                V[:, j] = s * vi + c * vj
        if not rotated:
            break

    S = np.linalg.norm(A, axis=0)
    order = np.argsort(-S, kind="stable")
    S, A, V = S[order], A[:, order], V[:, order]

    U = np.zeros((m, n))
    cutoff = S[0] * 1e-14 if S[0] > 0 else 0.0
    good = S > cutoff
    U[:, good] = A[:, good] / S[good]
    S[~good] = 0.0
    # complete the columns belonging to zero singular values to an orthonormal set
    for k in np.flatnonzero(~good):
        basis = U[:, :k][:, np.linalg.norm(U[:, :k], axis=0) > 0]
        for e in np.eye(m):
            w = e - basis @ (basis.T @ e)
            w = w - basis @ (basis.T @ w)
            if np.linalg.norm(w) > 1e-8:
                U[:, k] = w / np.linalg.norm(w)
                break
    return U, S, V
