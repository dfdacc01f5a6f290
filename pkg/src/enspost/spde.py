"""Finite-element operators and Markov random field machinery on a mesh.

The random field X(s) = Σ_k w_k ψ_k(s) over piecewise-linear basis
functions has jointly Gaussian weights whose precision, for the default
smoothness setting, is Q = τ²(κ²C + G) with C the lumped mass matrix and G
the stiffness matrix.  κ > 0 is an inverse length scale (1/km) and τ > 0
scales the field.  The smoother alternative (alpha=2) uses
Q = τ²(κ²C+G)C⁻¹(κ²C+G).

Neumann boundary conditions are implicit in the assembly; the usual
variance inflation near the hull is accepted since the domain is not
extended beyond the data region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cholesky, cholesky_banded, solve_banded, solve_triangular
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .mesh import Mesh


@dataclass
class SpdeOperators:
    """Lumped mass matrix C (diagonal, km²) and stiffness matrix G."""

    C: sp.dia_matrix
    G: sp.csr_matrix
    K: int

    @property
    def c_diag(self) -> np.ndarray:
        return self.C.diagonal()


@dataclass
class Precision:
    """Sparse SPD precision matrix of the basis weights."""

    Q: sp.csc_matrix
    kappa: float
    tau: float
    alpha: int = 1

    @property
    def shape(self):
        return self.Q.shape


def assemble_fem(mesh: Mesh) -> SpdeOperators:
    """Assemble P1 mass-lumped C and stiffness G on the mesh.

    Per triangle with area A and barycentric gradients ∇λ_i:
    G_ij += A ∇λ_i·∇λ_j and C_ii += A/3.
    """
    K = mesh.n_vertices
    rows, cols, vals = [], [], []
    c_diag = np.zeros(K)
    for tri in mesh.triangles:
        p = mesh.vertices[tri]
        e1 = p[1] - p[0]
        e2 = p[2] - p[0]
        det = e1[0] * e2[1] - e1[1] * e2[0]
        area = 0.5 * abs(det)
        if area <= 0.0 or not np.isfinite(area):
            raise ValueError(f"degenerate triangle {tri.tolist()} (area {area})")
        # gradients of the three barycentric coordinates
        grads = np.array(
            [
                [p[1][1] - p[2][1], p[2][0] - p[1][0]],
                [p[2][1] - p[0][1], p[0][0] - p[2][0]],
                [p[0][1] - p[1][1], p[1][0] - p[0][0]],
            ]
        ) / det
        local = area * (grads @ grads.T)
        for a in range(3):
            c_diag[tri[a]] += area / 3.0
            for b in range(3):
                rows.append(tri[a])
                cols.append(tri[b])
                vals.append(local[a, b])
    G = sp.csr_matrix((vals, (rows, cols)), shape=(K, K))
    G.sum_duplicates()
    C = sp.diags(c_diag)
    return SpdeOperators(C=C, G=G, K=K)


def precision(ops: SpdeOperators, kappa: float, tau: float, alpha: int = 1) -> Precision:
    """Precision matrix Q(κ, τ) of the field weights."""
    if kappa <= 0 or tau <= 0:
        raise ValueError("kappa and tau must be > 0")
    if alpha not in (1, 2):
        raise ValueError("alpha must be 1 or 2")
    B = (kappa**2) * ops.C + ops.G
    if alpha == 1:
        Q = (tau**2) * B
    else:
        Cinv = sp.diags(1.0 / ops.c_diag)
        Q = (tau**2) * (B @ Cinv @ B)
    return Precision(Q=sp.csc_matrix(Q), kappa=kappa, tau=tau, alpha=alpha)


class SparseCholesky:
    """Cholesky factorization of a sparse SPD matrix.

    The matrix is reordered with a deterministic fill-reducing (reverse
    Cuthill-McKee) permutation and factored in banded storage.  Columns
    listed in `dense` (e.g. fixed effects coupled to everything) are
    pivoted to the end and eliminated as a dense border block so they do
    not blow up the bandwidth.
    """

    def __init__(self, Q, dense=(), perm=None):
        Q = sp.csr_matrix(Q)
        n = Q.shape[0]
        if Q.shape[1] != n:
            raise ValueError("matrix must be square")
        dense = np.asarray(sorted(set(int(i) for i in dense)), dtype=int)
        sparse_idx = np.setdiff1d(np.arange(n), dense)
        self.n = n
        self._dense = dense
        self._sparse_idx = sparse_idx
        ns = len(sparse_idx)

        Qs = sp.csr_matrix(Q[sparse_idx][:, sparse_idx])
        if perm is None:
            perm = np.asarray(reverse_cuthill_mckee(Qs, symmetric_mode=True))
        self.perm = perm
        Qp = sp.coo_matrix(Qs[perm][:, perm])
        bw = int(np.max(np.abs(Qp.row - Qp.col))) if Qp.nnz else 0
        ab = np.zeros((bw + 1, ns))
        mask = Qp.row >= Qp.col
        ab[Qp.row[mask] - Qp.col[mask], Qp.col[mask]] = Qp.data[mask]
        if len(dense):
            B = Q[dense][:, sparse_idx].toarray()[:, perm]  # (t, ns) permuted cols
            F = Q[dense][:, dense].toarray()
        else:
            B = np.zeros((0, ns))
            F = np.zeros((0, 0))
        self._factor(ab, B, F)

    @classmethod
    def from_parts(cls, ab, B, F, perm, sparse_idx, dense_idx, n):
        """Factor from prebuilt banded storage of the permuted sparse block
        plus dense border blocks (B already column-permuted)."""
        obj = cls.__new__(cls)
        obj.n = n
        obj._dense = np.asarray(dense_idx, dtype=int)
        obj._sparse_idx = np.asarray(sparse_idx, dtype=int)
        obj.perm = perm
        obj._factor(ab, B, F)
        return obj

    def _factor(self, ab, B, F):
        ns = ab.shape[1]
        bw = ab.shape[0] - 1
        try:
            self._cab = cholesky_banded(ab, lower=True)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"precision not positive definite ({exc})") from None
        if np.any(self._cab[0] <= 0):
            raise np.linalg.LinAlgError("precision not positive definite")
        self._bw = bw
        # upper-banded storage of L^T for back substitution
        ab_up = np.zeros((bw + 1, ns))
        for r in range(bw + 1):
            ab_up[bw - r, r:] = self._cab[r, : ns - r]
        self._ab_up = ab_up

        if B.shape[0]:
            W = self._solve_L_sparse(B.T)  # (ns, t): L_s W = B^T
            S = F - W.T @ W
            try:
                self._Lf = cholesky(S, lower=True)
            except np.linalg.LinAlgError:
                raise np.linalg.LinAlgError("precision not positive definite") from None
            self._W = W
        else:
            self._Lf = np.zeros((0, 0))
            self._W = np.zeros((ns, 0))

    @property
    def logdet(self) -> float:
        ld = 2.0 * float(np.sum(np.log(self._cab[0])))
        if self._Lf.size:
            ld += 2.0 * float(np.sum(np.log(np.diag(self._Lf))))
        return ld

    def _solve_L_sparse(self, y):
        return solve_banded((self._bw, 0), self._cab, y)

    def _solve_Lt_sparse(self, z):
        return solve_banded((0, self._bw), self._ab_up, z)

    def solve(self, b):
        """Solve Q x = b (vector or matrix right-hand side)."""
        b = np.asarray(b, dtype=float)
        one_d = b.ndim == 1
        B = b.reshape(self.n, -1)
        bs = B[self._sparse_idx][self.perm]
        bd = B[self._dense]
        # forward: L [y1; y2] = [bs; bd]
        y1 = self._solve_L_sparse(bs)
        if self._Lf.size:
            y2 = solve_triangular(self._Lf, bd - self._W.T @ y1, lower=True)
        else:
            y2 = bd
        # backward: L^T [x1; x2] = [y1; y2]
        if self._Lf.size:
            x2 = solve_triangular(self._Lf.T, y2, lower=False)
        else:
            x2 = y2
        x1 = self._solve_Lt_sparse(y1 - self._W @ x2)
        out = np.empty_like(B)
        tmp = np.empty_like(x1)
        tmp[self.perm] = x1
        out[self._sparse_idx] = tmp
        out[self._dense] = x2
        return out[:, 0] if one_d else out

    def solve_Lt(self, z):
        """Solve Lᵀ x = z where Q = P L Lᵀ Pᵀ; maps N(0, I) draws to N(0, Q⁻¹)."""
        z = np.asarray(z, dtype=float)
        one_d = z.ndim == 1
        Z = z.reshape(self.n, -1)
        zs = Z[: len(self._sparse_idx)]
        zd = Z[len(self._sparse_idx):]
        if self._Lf.size:
            x2 = solve_triangular(self._Lf.T, zd, lower=False)
        else:
            x2 = zd
        x1 = self._solve_Lt_sparse(zs - self._W @ x2)
        out = np.empty_like(Z)
        tmp = np.empty_like(x1)
        tmp[self.perm] = x1
        out[self._sparse_idx] = tmp
        out[self._dense] = x2
        return out[:, 0] if one_d else out


def sample_gmrf(Q: Precision, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `count` zero-mean weight vectors with covariance Q⁻¹.

    Factors Q = LLᵀ (sparse Cholesky) and solves Lᵀw = z for standard
    normal z; deterministic given the generator state.
    """
    chol = SparseCholesky(Q.Q)
    z = rng.standard_normal((Q.shape[0], count))
    w = chol.solve_Lt(z)
    return np.ascontiguousarray(w.T)


def conditional_gaussian(Q_prior, A, noise_prec: float, y):
    """Gaussian conditioning of a GMRF prior on linear observations.

    Posterior precision Q_post = Q_prior + noise_prec·AᵀA and mean μ
    solving Q_post μ = noise_prec·Aᵀy.  An empty A returns the prior.
    """
    Qp = Q_prior.Q if isinstance(Q_prior, Precision) else sp.csc_matrix(Q_prior)
    n = Qp.shape[0]
    A = sp.csr_matrix(A) if A is not None else sp.csr_matrix((0, n))
    if A.shape[0] == 0:
        return np.zeros(n), Qp
    if A.shape[1] != n:
        raise ValueError(f"design has {A.shape[1]} columns, expected {n}")
    y = np.asarray(y, dtype=float)
    if y.shape[0] != A.shape[0]:
        raise ValueError("observation vector length does not match design rows")
    Q_post = sp.csc_matrix(Qp + noise_prec * (A.T @ A))
    chol = SparseCholesky(Q_post)
    mean = chol.solve(noise_prec * (A.T @ y))
    return mean, Q_post


def to_coo_text(matrix) -> str:
    """Coordinate-triplet dump (`row col value` per line, 0-based, sorted)
    for eyeballing sparse operators."""
    coo = sp.coo_matrix(matrix)
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    lines = [
        f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}" for k in order
    ]
    return "\n".join(lines) + "\n"


def spde_logdet_factory(ops: SpdeOperators):
    """Fast log-determinant of Q(κ, τ) for repeated hyperparameter sweeps.

    Uses the generalized eigenvalues λ of (G, C) computed once:
    logdet Q = 2K log τ + Σ log(κ² + λ) + Σ log C_ii for alpha=1 and
    2K log τ + 2Σ log(κ² + λ) + Σ log C_ii for alpha=2.
    """
    from scipy.linalg import eigh

    c = ops.c_diag
    sq = 1.0 / np.sqrt(c)
    Gs = (ops.G.toarray() * sq[:, None]) * sq[None, :]
    lam = eigh(0.5 * (Gs + Gs.T), eigvals_only=True)
    lam = np.clip(lam, 0.0, None)
    log_c = float(np.sum(np.log(c)))
    K = ops.K

    def logdet(kappa: float, tau: float, alpha: int = 1) -> float:
        body = float(np.sum(np.log(kappa**2 + lam)))
        if alpha == 1:
            return 2 * K * np.log(tau) + body + log_c
        return 2 * K * np.log(tau) + 2 * body + log_c

    return logdet
