"""Dense and sparse kernels used by the offline and online stages.

Local problems are small (a few hundred unknowns at most), so the generalized
symmetric eigensolver works densely: Cholesky reduction of the right-hand
matrix followed by cyclic Jacobi rotations in parallel (round-robin) order.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "NotSPDError",
    "ConvergenceError",
    "gen_eig_sym",
    "jacobi_eigh",
    "cholesky",
    "spd_solve",
    "conjugate_gradient",
    "BlockDiagonalOperator",
    "apply_block_inverse",
    "estimate_spectral_radius",
    "householder_complement",
]


class NotSPDError(np.linalg.LinAlgError):
    """A matrix required to be symmetric positive definite is not."""


class ConvergenceError(RuntimeError):
    """An iterative method failed to reach its tolerance."""


def cholesky(B: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises ``NotSPDError`` on failure."""
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(str(exc)) from None
    if not np.all(np.isfinite(L)):
        raise NotSPDError("Cholesky factor is not finite")
    return L


def _round_robin(n: int) -> list:
    """Pairings for one Jacobi sweep; ``n`` even, every pair appears once."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        p = np.array(players[: n // 2])
        q = np.array(players[n // 2:][::-1])
        rounds.append((p, q))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


_ROUNDS_CACHE: dict = {}


def jacobi_eigh(S: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi.

    Disjoint rotation pairs are applied simultaneously, so each round costs a
    few vectorized O(n^2) updates.  Returns ``(w, V)`` unsorted.
    """
    S = np.array(S, dtype=float)
    n0 = S.shape[0]
    if n0 == 0:
        return np.empty(0), np.empty((0, 0))
    if n0 == 1:
        return S.diagonal().copy(), np.ones((1, 1))
    n = n0 + (n0 % 2)
    A = np.zeros((n, n))
    A[:n0, :n0] = 0.5 * (S + S.T)
    V = np.eye(n)
    rounds = _ROUNDS_CACHE.get(n)
    if rounds is None:
        rounds = _ROUNDS_CACHE.setdefault(n, _round_robin(n))
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(n0), np.eye(n0)
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[off_mask] ** 2))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = A[p, q]
            app = A[p, p]
            aqq = A[q, q]
            nz = np.abs(apq) > 1e-300
            theta = np.where(nz, (aqq - app) / (2.0 * np.where(nz, apq, 1.0)), 0.0)
            t = np.where(nz, np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), 0.0)
            t = np.where(nz & (theta == 0.0), 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            Ap = A[p, :]
            Aq = A[q, :]
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            Ap = A[:, p]
            Aq = A[:, q]
            A[:, p] = Ap * c[None, :] - Aq * s[None, :]
            A[:, q] = Ap * s[None, :] + Aq * c[None, :]
            A[p, q] = 0.0
            A[q, p] = 0.0
            Vp = V[:, p]
            Vq = V[:, q]
            V[:, p] = Vp * c[None, :] - Vq * s[None, :]
            V[:, q] = Vp * s[None, :] + Vq * c[None, :]
    else:
        raise ConvergenceError("Jacobi iteration did not converge")
    w = A.diagonal().copy()
    if n != n0:
        # the padded index never rotates with a nonzero partner
        return w[:n0], V[:n0, :n0]
    return w, V


def gen_eig_sym(A: np.ndarray, B: np.ndarray, method: str = "jacobi"):
    """Solve ``A v = lam B v`` for symmetric ``A`` and SPD ``B``.

    Returns ascending eigenvalues and B-orthonormal eigenvectors (columns).
    ``method`` selects the reduced symmetric solver: ``"jacobi"`` (default) or
    ``"lapack"``.  Raises ``NotSPDError`` if ``B`` has no Cholesky factor and
    ``ConvergenceError`` if Jacobi stalls.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A and B must be square matrices of equal order")
    n = A.shape[0]
    if n == 0:
        return np.empty(0), np.empty((0, 0))
    L = cholesky(0.5 * (B + B.T))
    X = sla.solve_triangular(L, 0.5 * (A + A.T), lower=True)
    C = sla.solve_triangular(L, X.T, lower=True)
    C = 0.5 * (C + C.T)
    if method == "jacobi":
        w, Y = jacobi_eigh(C)
    elif method == "lapack":
        w, Y = np.linalg.eigh(C)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(w, kind="stable")
    w = w[order]
    Y = Y[:, order]
    V = sla.solve_triangular(L.T, Y, lower=False)
    return w, V


def conjugate_gradient(M, b, tol: float = 1e-12, maxiter: int | None = None, x0=None):
    """Jacobi-preconditioned CG on a CSR (or dense) SPD matrix.

    Stops when ``||b - M x|| <= tol * ||b||``.
    """
    M = sp.csr_matrix(M)
    b = np.asarray(b, dtype=float)
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    d = M.diagonal()
    if np.any(d <= 0):
        raise NotSPDError("nonpositive diagonal entry")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - M @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        if np.linalg.norm(r) <= tol * bnorm:
            return x
        Mp = M @ p
        pMp = p @ Mp
        if pMp <= 0:
            raise NotSPDError("CG breakdown: nonpositive curvature")
        alpha = rz / pMp
        x += alpha * p
        r -= alpha * Mp
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.linalg.norm(r) <= tol * bnorm:
        return x
    raise ConvergenceError(f"CG did not reach tolerance {tol} in {maxiter} iterations")


def spd_solve(M, b, method: str = "direct", tol: float = 1e-12):
    """Solve ``M x = b`` for SPD ``M`` (dense array or scipy sparse matrix)."""
    b = np.asarray(b, dtype=float)
    if method == "cg":
        return conjugate_gradient(M, b, tol=tol)
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    if sp.issparse(M):
        M = sp.csc_matrix(M)
        d = M.diagonal()
        if np.any(d <= 0):
            raise NotSPDError("nonpositive diagonal entry")
        try:
            lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise NotSPDError(str(exc)) from None
        return lu.solve(b)
    L = cholesky(np.asarray(M, dtype=float))
    y = sla.solve_triangular(L, b, lower=True)
    return sla.solve_triangular(L.T, y, lower=False)


class SparseSPDFactor:
    """Reusable sparse factorization of an SPD matrix (``solve(b)``)."""

    def __init__(self, M):
        M = sp.csc_matrix(M)
        if np.any(M.diagonal() <= 0):
            raise NotSPDError("nonpositive diagonal entry")
        try:
            self._lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise NotSPDError(str(exc)) from None
        self.shape = M.shape

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))


class BlockDiagonalOperator:
    """SPD operator made of dense blocks on disjoint index sets.

    Blocks of equal order are stacked and their inverses precomputed from the
    Cholesky factors, so an application is one batched matrix product per
    distinct block order.
    """

    def __init__(self, blocks, n: int | None = None):
        blocks = [(np.asarray(idx, dtype=np.int64), np.asarray(M, dtype=float)) for idx, M in blocks]
        total = sum(len(idx) for idx, _ in blocks)
        self.n = total if n is None else int(n)
        seen = np.zeros(self.n, dtype=np.int64)
        for idx, M in blocks:
            if M.shape != (len(idx), len(idx)):
                raise ValueError("block shape does not match its index set")
            np.add.at(seen, idx, 1)
        if np.any(seen != 1):
            raise ValueError("block index sets must partition the index range")
        self.blocks = blocks
        groups: dict = {}
        for k, (idx, M) in enumerate(blocks):
            groups.setdefault(len(idx), []).append(k)
        self._groups = []
        for size, members in sorted(groups.items()):
            idx = np.stack([blocks[k][0] for k in members])
            mats = np.stack([blocks[k][1] for k in members])
            mats = 0.5 * (mats + mats.transpose(0, 2, 1))
            try:
                L = np.linalg.cholesky(mats)
            except np.linalg.LinAlgError as exc:
                raise NotSPDError(f"block of order {size} is not SPD: {exc}") from None
            Linv = np.linalg.inv(L)
            inv = Linv.transpose(0, 2, 1) @ Linv
            self._groups.append((idx, mats, inv))

    @classmethod
    def from_sparse(cls, M, labels) -> "BlockDiagonalOperator":
        """Split ``M`` into blocks by ``labels``; off-block entries must be zero."""
        M = sp.csr_matrix(M)
        labels = np.asarray(labels)
        coo = M.tocoo()
        cross = labels[coo.row] != labels[coo.col]
        if np.any(np.abs(coo.data[cross]) > 0):
            raise ValueError("matrix couples different blocks")
        order = np.argsort(labels, kind="stable")
        bounds = np.flatnonzero(np.diff(labels[order])) + 1
        blocks = []
        for idx in np.split(order, bounds):
            blocks.append((idx, M[idx][:, idx].toarray()))
        return cls(blocks, n=M.shape[0])

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError("vector length does not match operator size")
        x = np.empty_like(b)
        for idx, _, inv in self._groups:
            if b.ndim == 1:
                x[idx] = np.einsum("bij,bj->bi", inv, b[idx])
            else:
                x[idx] = np.einsum("bij,bjk->bik", inv, b[idx])
        return x

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        y = np.empty_like(v)
        for idx, mats, _ in self._groups:
            y[idx] = np.einsum("bij,bj->bi", mats, v[idx])
        return y

    def to_sparse(self):
        rows, cols, vals = [], [], []
        for idx, mats, _ in self._groups:
            k = idx.shape[1]
            rows.append(np.repeat(idx, k, axis=1).ravel())
            cols.append(np.tile(idx, (1, k)).ravel())
            vals.append(mats.ravel())
        if not rows:
            return sp.csr_matrix((self.n, self.n))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, self.n))

    def inverse_sparse(self):
        rows, cols, vals = [], [], []
        for idx, _, inv in self._groups:
            k = idx.shape[1]
            rows.append(np.repeat(idx, k, axis=1).ravel())
            cols.append(np.tile(idx, (1, k)).ravel())
            vals.append(inv.ravel())
        if not rows:
            return sp.csr_matrix((self.n, self.n))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, self.n))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)


def apply_block_inverse(op: BlockDiagonalOperator, b: np.ndarray) -> np.ndarray:
    return op.solve(b)


def estimate_spectral_radius(applyA, applyMinv, n: int, tol: float = 1e-8,
                             maxiter: int = 20000, seed: int = 0, applyM=None) -> float:
    """Largest eigenvalue of ``M^{-1} A`` by power iteration.

    ``A`` symmetric positive semidefinite and ``M`` SPD.  When ``applyM`` is
    given the Rayleigh quotient ``x'Ax / x'Mx`` is used, otherwise the ratio
    of successive iterate norms.  Iteration stops once the estimate changes
    by less than ``tol`` (relative) over 10 consecutive steps.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    history = []
    for _ in range(maxiter):
        Ax = applyA(x)
        y = applyMinv(Ax)
        if applyM is not None:
            den = x @ applyM(x)
            est_new = (x @ Ax) / den if den > 0 else 0.0
        else:
            est_new = np.linalg.norm(y) / np.linalg.norm(x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        history.append(est_new)
        if len(history) > 10:
            window = np.array(history[-10:])
            if np.ptp(window) <= tol * abs(est_new):
                return float(est_new)
        est = est_new
    raise ConvergenceError("power iteration did not converge")


def householder_complement(a: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the orthogonal complement of ``a``."""
    a = np.asarray(a, dtype=float)
    n = len(a)
    u = a / np.linalg.norm(a)
    e1 = np.zeros(n)
    e1[0] = 1.0
    s = 1.0 if u[0] >= 0 else -1.0
    w = u + s * e1
    w /= np.linalg.norm(w)
    H = np.eye(n) - 2.0 * np.outer(w, w)
    return H[:, 1:]
