"""Dense linear algebra for small symmetric / SPD matrices.

Everything here is written directly against numpy primitives (no LAPACK
driver choices to worry about), runs in float64, and is bitwise
deterministic for identical inputs.  Intended scale is dim <= ~512.
"""

from dataclasses import dataclass, field

import numpy as np

# Cyclic Jacobi stopping rule: off-diagonal Frobenius norm relative to the
# full Frobenius norm, and a hard cap on the number of sweeps.
JACOBI_REL_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


class NotPositiveDefiniteError(ValueError):
    """Cholesky pivot failure: the matrix is not positive definite."""


class EigenConvergenceError(RuntimeError):
    """Jacobi sweeps hit the iteration cap; input is ill-conditioned."""


def _as_square_float(entries) -> np.ndarray:
    a = np.asarray(entries, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValueError("dimension must be >= 1")
    return a


@dataclass(frozen=True)
class SymMatrix:
    """Real symmetric matrix; symmetrized exactly on construction."""

    entries: np.ndarray

    def __post_init__(self):
        a = _as_square_float(self.entries)
        object.__setattr__(self, "entries", 0.5 * (a + a.T))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class SPDOperator:
    """Symmetric positive definite matrix, certified by a Cholesky pass."""

    entries: np.ndarray
    _factor: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        a = _as_square_float(self.entries)
        a = 0.5 * (a + a.T)
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "_factor", cholesky_factor(a))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def cholesky(self) -> np.ndarray:
        """Lower-triangular L with L L^T equal to the operator."""
        return self._factor


@dataclass(frozen=True)
class EigDecomp:
    """Eigendecomposition with eigenvalues sorted descending and
    orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def cholesky_factor(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix.

    Raises NotPositiveDefiniteError on a non-positive pivot, which doubles
    as the definiteness certificate used by SPDOperator.
    """
    a = _as_square_float(a)
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise NotPositiveDefiniteError(f"pivot {j} is {d!r}")
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def sym_eig(a: SymMatrix) -> EigDecomp:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Unconditionally stable at the dimensions used here, and deterministic:
    fixed sweep order, fixed rotation formulas, stable descending sort with
    a sign convention on each eigenvector (largest-magnitude entry positive).
    """
    A = a.entries.copy()
    n = A.shape[0]
    V = np.eye(n)
    if n == 1:
        return EigDecomp(A[0].copy(), V)

    norm_all = np.sqrt(np.sum(A * A))
    tol = JACOBI_REL_TOL * norm_all

    for _ in range(JACOBI_MAX_SWEEPS):
        off = A - np.diag(np.diag(A))
        if np.sqrt(np.sum(off * off)) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)

                app, aqq = A[p, p], A[q, q]
                # Full-column rotation, then patch the 2x2 pivot block with
                # the exact scalar updates (cheaper than masked indexing).
                colp = A[:, p].copy()
                colq = A[:, q].copy()
                A[:, p] = colp - s * (colq + tau * colp)
                A[:, q] = colq + s * (colp - tau * colq)
                A[p, :] = A[:, p]
                A[q, :] = A[:, q]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0

                vip = V[:, p].copy()
                viq = V[:, q].copy()
                V[:, p] = vip - s * (viq + tau * vip)
                V[:, q] = viq + s * (vip - tau * viq)
    else:
        raise EigenConvergenceError(
            f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps (dim {n})"
        )

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    w = w[order]
    V = V[:, order]
    # Deterministic sign: make the largest-magnitude component positive.
    for j in range(n):
        k = int(np.argmax(np.abs(V[:, j])))
        if V[k, j] < 0.0:
            V[:, j] = -V[:, j]
    return EigDecomp(w, V)


def cholesky_slogdet(a: SymMatrix) -> tuple[int, float]:
    """(sign, log|det|) of a symmetric matrix.

    SPD inputs go through Cholesky: sign +1 and logabsdet = 2 * sum log L_ii.
    If Cholesky fails the matrix is not positive definite; fall back to the
    eigenvalue product so the caller can inspect the sign and decide.
    """
    try:
        L = cholesky_factor(a.entries)
    except NotPositiveDefiniteError:
        w = sym_eig(a).eigenvalues
        tiny = np.finfo(np.float64).tiny
        if np.any(np.abs(w) < tiny):
            return 0, -np.inf
        sign = 1 if (w < 0).sum() % 2 == 0 else -1
        return sign, float(np.sum(np.log(np.abs(w))))
    return 1, float(2.0 * np.sum(np.log(np.diag(L))))


def spd_sqrt(h: SPDOperator) -> SPDOperator:
    """Symmetric square root R of an SPD operator, R @ R == H."""
    eig = sym_eig(SymMatrix(h.entries))
    root = eig.eigenvectors @ (np.sqrt(eig.eigenvalues)[:, None] * eig.eigenvectors.T)
    return SPDOperator(root)


def spd_inverse(h: SPDOperator) -> SPDOperator:
    """Inverse of an SPD operator via its eigendecomposition."""
    eig = sym_eig(SymMatrix(h.entries))
    inv = eig.eigenvectors @ (eig.eigenvectors / eig.eigenvalues).T
    return SPDOperator(inv)


def orthonormalize_columns(m, rng: np.random.Generator) -> np.ndarray:
    """Orthonormalize the columns of a d x k matrix (k <= d).

    Modified Gram-Schmidt with a second orthogonalization pass.  On rank
    deficiency the whole matrix is redrawn from ``rng`` (at most 3 redraws).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    d, k = m.shape
    if k > d:
        raise ValueError(f"need k <= d, got {m.shape}")

    for attempt in range(4):
        q = m.astype(np.float64).copy()
        ok = True
        for j in range(k):
            for _ in range(2):  # second pass restores orthogonality to ~1e-15
                q[:, j] -= q[:, :j] @ (q[:, :j].T @ q[:, j])
            norm = np.sqrt(q[:, j] @ q[:, j])
            if norm <= 1e-12 * max(1.0, np.sqrt(m[:, j] @ m[:, j])):
                ok = False
                break
            q[:, j] /= norm
        if ok:
            return q
        m = rng.standard_normal((d, k))
    raise ValueError("rank-deficient columns persisted after 3 redraws")
