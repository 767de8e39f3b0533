"""Dense tensors and the linear-algebra kernels the rest of the package uses.

Tensors are C-contiguous ``float64`` numpy arrays. Weight tensors use the
in-channels-first layout ``(C, S)`` / ``(C, S, k, k)``; :func:`conv2d` takes
the usual output-first ``(S, C, h, w)`` layout and layers convert at the call.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

EPS = np.finfo(np.float64).eps
SIGMA_CLAMP = 1e-12
MAX_SWEEPS = 60


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ValueError):
    """Input contains NaN or infinity."""


def as_tensor(x):
    """Return ``x`` as a C-contiguous float64 array with all dims >= 1."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
    return arr


def _as_matrix(M, name="matrix"):
    M = as_tensor(M)
    if M.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {M.shape}")
    return M


@dataclass
class SvdResult:
    U: np.ndarray
    sigma: np.ndarray
    Vt: np.ndarray

    @property
    def rank(self):
        return int(np.count_nonzero(self.sigma))

    def reconstruct(self):
        return (self.U * self.sigma) @ self.Vt


@dataclass
class Tucker2Result:
    """``W ≈ core ×₁ U ×₂ V`` for a weight reshaped to ``(C, S, k²)``."""

    core: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return multilinear_product(self.core, self.U, self.V)


def matmul(A, B):
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"inner dimensions differ: {A.shape} x {B.shape}")
    return A @ B


def conv2d(x, weight, bias=None, padding=0):
    """Stride-1 cross-correlation of ``x`` (N, C, H, W) with ``weight`` (S, C, h, w)."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    N, C, H, W = x.shape
    S, Cw, kh, kw = weight.shape
    if C != Cw:
        raise ShapeError(f"input has {C} channels, weight expects {Cw}")
    Ho = H + 2 * padding - kh + 1
    Wo = W + 2 * padding - kw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError("kernel larger than padded input")
    cols = kernels.im2col(x, kh, kw, padding)
    out = cols @ weight.reshape(S, -1).T
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return np.ascontiguousarray(out.reshape(N, Ho, Wo, S).transpose(0, 3, 1, 2))


def mode_n_unfold(T, n):
    """Mode-``n`` unfolding; remaining modes are flattened in row-major order."""
    T = np.asarray(T)
    if not 0 <= n < T.ndim:
        raise ValueError(f"mode {n} out of range for a {T.ndim}-D tensor")
    return np.ascontiguousarray(np.moveaxis(T, n, 0)).reshape(T.shape[n], -1)


def mode_n_fold(M, n, shape):
    """Inverse of :func:`mode_n_unfold`."""
    shape = tuple(shape)
    if not 0 <= n < len(shape):
        raise ValueError(f"mode {n} out of range for shape {shape}")
    moved = (shape[n],) + shape[:n] + shape[n + 1 :]
    return np.ascontiguousarray(np.moveaxis(np.asarray(M).reshape(moved), 0, n))


def mode_n_product(T, M, n):
    """``T ×ₙ M`` where ``M`` has shape ``(J, T.shape[n])``."""
    shape = list(T.shape)
    if M.shape[1] != shape[n]:
        raise ShapeError(f"factor {M.shape} does not match mode {n} of {T.shape}")
    shape[n] = M.shape[0]
    return mode_n_fold(M @ mode_n_unfold(T, n), n, shape)


def multilinear_product(core, U, V):
    """``core ×₁ U ×₂ V`` on the first two modes of ``core``."""
    return mode_n_product(mode_n_product(core, U, 0), V, 1)


def _householder_qr(A, block=48):
    """Thin QR of a tall matrix, returned as ``(Q, R)``.

    Blocked Householder: each panel's reflectors are accumulated in compact
    WY form ``I - Y T Yᵀ`` and applied to the trailing columns with matmuls.
    """
    A = A.copy()
    m, n = A.shape
    panels = []
    for k0 in range(0, n, block):
        k1 = min(k0 + block, n)
        b = k1 - k0
        Y = np.zeros((m - k0, b))
        T = np.zeros((b, b))
        for j in range(b):
            k = k0 + j
            x = A[k:, k]
            normx = np.linalg.norm(x)
            if normx == 0.0:
                continue
            v = x.copy()
            v[0] += np.copysign(normx, x[0])
            v /= np.linalg.norm(v)
            A[k:, k:k1] -= 2.0 * np.outer(v, v @ A[k:, k:k1])
            Y[j:, j] = v
            T[:j, j] = -2.0 * (T[:j, :j] @ (Y[:, :j].T @ Y[:, j]))
            T[j, j] = 2.0
        if k1 < n:
            trail = A[k0:, k1:]
            trail -= Y @ (T.T @ (Y.T @ trail))
        panels.append((k0, Y, T))
    R = np.triu(A[:n])
    Q = np.eye(m, n)
    for k0, Y, T in reversed(panels):
        sub = Q[k0:, :]
        sub -= Y @ (T @ (Y.T @ sub))
    return Q, R


def _complete_orthonormal(U, missing):
    """Replace columns ``missing`` of ``U`` with an orthonormal completion."""
    m = U.shape[0]
    keep = [j for j in range(U.shape[1]) if j not in set(missing)]
    basis = [U[:, j] for j in keep]
    candidates = iter(range(m))
    for j in missing:
        while True:
            e = np.zeros(m)
            e[next(candidates)] = 1.0
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 1e-8:
                break
        U[:, j] = e / nrm
        basis.append(U[:, j])
    return U


def _fix_signs(U, Vt):
    for j in range(U.shape[1]):
        col = U[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-14 * max(np.abs(col).max(), 1e-300))
        if nz.size and col[nz[0]] < 0:
            U[:, j] = -col
            Vt[j] = -Vt[j]


def svd(M):
    """Thin SVD ``M = U diag(sigma) Vt`` via one-sided Jacobi.

    Tall inputs are first reduced with a Householder QR so the Jacobi sweeps
    run on a square triangular factor. Singular values below
    ``1e-12 * sigma[0]`` are clamped to zero, and each left singular vector
    is signed so its first nonzero entry is positive.
    """
    M = _as_matrix(M)
    if not np.all(np.isfinite(M)):
        raise NumericError("svd input contains non-finite entries")
    m, n = M.shape
    if m < n:
        r = svd(M.T)
        U = np.ascontiguousarray(r.Vt.T)
        Vt = np.ascontiguousarray(r.U.T)
        _fix_signs(U, Vt)
        return SvdResult(U, r.sigma, Vt)

    Q = None
    A = M
    if m > n:
        Q, A = _householder_qr(M)
    G = np.ascontiguousarray(A.T)  # row i = column i
    W = np.eye(n)  # row i = column i of V
    tol = EPS * max(n, 1)
    kernels.jacobi_orthogonalize(G, W, tol, MAX_SWEEPS)

    sigma = np.sqrt(np.einsum("ij,ij->i", G, G))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    G = G[order]
    Vt = np.ascontiguousarray(W[order])
    if sigma[0] > 0:
        sigma[sigma < SIGMA_CLAMP * sigma[0]] = 0.0
    else:
        sigma[:] = 0.0
    nonzero = sigma > 0
    U = np.zeros((n, n))
    U[:, nonzero] = (G[nonzero] / sigma[nonzero, None]).T
    missing = list(np.flatnonzero(~nonzero))
    if missing:
        U = _complete_orthonormal(U, missing)
    if Q is not None:
        U = Q @ U
    U = np.ascontiguousarray(U)
    _fix_signs(U, Vt)
    return SvdResult(U, sigma, Vt)


def truncated_svd(M, r, full=None):
    """Leading ``r`` singular triplets of ``M``; ``full`` reuses a precomputed :func:`svd`."""
    M = _as_matrix(M)
    p = min(M.shape)
    if not 1 <= r <= p:
        raise ValueError(f"rank {r} outside [1, {p}]")
    full = full if full is not None else svd(M)
    return SvdResult(
        np.ascontiguousarray(full.U[:, :r]),
        full.sigma[:r].copy(),
        np.ascontiguousarray(full.Vt[:r]),
    )


def reconstruction_error(W, W_approx):
    """Squared Frobenius distance ``||W - W'||²``."""
    W = np.asarray(W, dtype=np.float64)
    W_approx = np.asarray(W_approx, dtype=np.float64)
    if W.shape != W_approx.shape:
        raise ShapeError(f"shapes differ: {W.shape} vs {W_approx.shape}")
    d = (W - W_approx).ravel()
    return float(d @ d)
