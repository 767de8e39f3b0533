"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

The Jacobi kernel uses a round-robin (tournament) pair ordering so that each
round rotates n/2 disjoint pairs at once with vectorized numpy operations.
The compiled kernel uses the cyclic row ordering instead; both converge to the
same decomposition up to rounding.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _tournament_rounds(n):
    # Circle method; index n is a dummy when n is odd.
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        left = players[: size // 2]
        right = players[size // 2 :][::-1]
        pairs = [(a, b) if a < b else (b, a) for a, b in zip(left, right) if a < n and b < n]
        if pairs:
            idx = np.array(pairs, dtype=np.intp)
            rounds.append((idx[:, 0], idx[:, 1]))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def jacobi_orthogonalize(G, W, tol, max_sweeps):
    """Round-robin one-sided Jacobi on the rows of ``G``; mirrors rotations in ``W``."""
    n = G.shape[0]
    if n < 2:
        return 1
    rounds = _tournament_rounds(n)
    for sweep in range(max_sweeps):
        rotated = False
        for I, J in rounds:
            gi = G[I]
            gj = G[J]
            alpha = np.einsum("ij,ij->i", gi, gi)
            beta = np.einsum("ij,ij->i", gj, gj)
            gamma = np.einsum("ij,ij->i", gi, gj)
            active = (gamma != 0.0) & (np.abs(gamma) > tol * np.sqrt(alpha * beta))
            if not active.any():
                continue
            rotated = True
            I = I[active]
            J = J[active]
            gi = gi[active]
            gj = gj[active]
            zeta = (beta[active] - alpha[active]) / (2.0 * gamma[active])
            sign = np.where(zeta >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = c[:, None]
            s = s[:, None]
            G[I] = c * gi - s * gj
            G[J] = s * gi + c * gj
            wi = W[I]
            wj = W[J]
            W[I] = c * wi - s * wj
            W[J] = s * wi + c * wj
        if not rotated:
            return sweep + 1
    return max_sweeps


def im2col(x, kh, kw, padding):
    N, C, H, W = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # N, C, Ho, Wo, kh, kw
    Ho, Wo = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(N * Ho * Wo, C * kh * kw)


def col2im(cols, N, C, H, W, kh, kw, padding):
    Ho = H + 2 * padding - kh + 1
    Wo = W + 2 * padding - kw + 1
    d = cols.reshape(N, Ho, Wo, C, kh, kw)
    dxp = np.zeros((N, C, H + 2 * padding, W + 2 * padding))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + Ho, j : j + Wo] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding:-padding, padding:-padding])
    return dxp
