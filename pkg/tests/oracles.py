"""Brute-force reference computations shared by the test modules.

Nothing here touches FFTs or the package's operator code; these are the
independent sides of the dual-route checks.
"""

import numpy as np


def naive_circular_conv(x, kernel):
    """Direct O(n^2 k^2) circular convolution of each channel with a centered kernel."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    c, n1, n2 = x.shape
    k1, k2 = kernel.shape
    r1, r2 = k1 // 2, k2 // 2
    out = np.zeros_like(x)
    for i in range(n1):
        for j in range(n2):
            acc = np.zeros(c)
            for a in range(k1):
                for b in range(k2):
                    acc += kernel[a, b] * x[:, (i - (a - r1)) % n1, (j - (b - r2)) % n2]
            out[:, i, j] = acc
    return out


def dense_dft_response(kernel, shape):
    """Evaluate the kernel's DFT on the grid term by term."""
    n1, n2 = shape
    k1, k2 = kernel.shape
    r1, r2 = k1 // 2, k2 // 2
    f1 = np.arange(n1)[:, None]
    f2 = np.arange(n2)[None, :]
    out = np.zeros(shape, dtype=complex)
    for a in range(k1):
        for b in range(k2):
            out += kernel[a, b] * np.exp(-2j * np.pi * (f1 * (a - r1) / n1 + f2 * (b - r2) / n2))
    return out


def dense_matrix(fn, in_shape):
    """Materialize a linear map by applying it to every basis vector."""
    n = int(np.prod(in_shape))
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(np.asarray(fn(e.reshape(in_shape))).ravel())
    return np.stack(cols, axis=1)


def dense_H(kernel, shape, alpha):
    """Explicit matrix of blur + top-left decimation, built tap by tap."""
    n1, n2 = shape
    k1, k2 = kernel.shape
    r1, r2 = k1 // 2, k2 // 2
    rows = []
    for i in range(0, n1, alpha):
        for j in range(0, n2, alpha):
            row = np.zeros((n1, n2))
            for a in range(k1):
                for b in range(k2):
                    row[(i - (a - r1)) % n1, (j - (b - r2)) % n2] += kernel[a, b]
            rows.append(row.ravel())
    return np.stack(rows)


def thresholded_pinv(matrix, xi_sv):
    """SVD pseudo-inverse keeping singular values strictly above ``xi_sv``."""
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    inv = np.where(s > xi_sv, 1.0 / np.where(s > xi_sv, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T
