"""FFT realization of the degradation operator H and its relatives.

H is circular convolution with a kernel followed by keeping the top-left
sample of every ``alpha x alpha`` block. All transforms use numpy's
unnormalized ``fft2``/``ifft2`` pair, so the convolution eigenvalues are the
plain DFT of the zero-padded, center-shifted kernel (DC value = kernel sum).

Arrays are ``(C, H, W)`` or ``(H, W)``; every channel sees the same operator.
"""

from __future__ import annotations

import numpy as np


class SpectralOperator:
    """Immutable frequency-domain degradation operator.

    For ``alpha == 1`` the singular values are ``|freq_response|`` and any
    component with ``|freq_response| <= xi`` is dropped from the
    pseudo-inverse. For ``alpha > 1`` the eigenvalues of ``H H^T`` live on
    the low-res grid as ``folded_response`` (aliases of ``|h|^2`` summed and
    divided by ``alpha**2``) and the same ``<= xi`` rule is applied to them.
    """

    def __init__(self, freq_response: np.ndarray, alpha: int = 1, xi: float = 0.0, kernel=None):
        freq_response = np.asarray(freq_response, dtype=np.complex128)
        if freq_response.ndim != 2:
            raise ValueError("freq_response must be 2-D")
        alpha = int(alpha)
        if alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {alpha}")
        n1, n2 = freq_response.shape
        if n1 % alpha or n2 % alpha:
            raise ValueError(f"grid {n1}x{n2} not divisible by alpha={alpha}")
        if xi < 0:
            raise ValueError(f"xi must be non-negative, got {xi}")
        self.hr_shape = (n1, n2)
        self.lr_shape = (n1 // alpha, n2 // alpha)
        self.alpha = alpha
        self.xi = float(xi)
        self.kernel = kernel
        self.freq_response = freq_response
        freq_response.setflags(write=False)

        if alpha == 1:
            mag = np.abs(freq_response)
            keep = mag > self.xi
            inv = np.zeros_like(freq_response)
            inv[keep] = 1.0 / freq_response[keep]
            self.retained = keep
            self.pinv_response = inv
            self.folded_response = mag**2
        else:
            m1, m2 = self.lr_shape
            power = np.abs(freq_response) ** 2
            folded = power.reshape(alpha, m1, alpha, m2).sum(axis=(0, 2)) / alpha**2
            keep = folded > self.xi
            inv = np.zeros_like(folded)
            inv[keep] = 1.0 / folded[keep]
            self.retained = keep
            self.pinv_response = inv
            self.folded_response = folded
        for a in (self.retained, self.pinv_response, self.folded_response):
            a.setflags(write=False)

    @classmethod
    def from_kernel(cls, kernel: np.ndarray, hr_shape, alpha: int = 1, xi: float = 0.0) -> "SpectralOperator":
        kernel = np.asarray(kernel, dtype=np.float64)
        n1, n2 = (int(s) for s in hr_shape)
        k1, k2 = kernel.shape
        if k1 > n1 or k2 > n2:
            raise ValueError(f"kernel {k1}x{k2} larger than image grid {n1}x{n2}")
        if n1 % alpha or n2 % alpha:
            raise ValueError(f"grid {n1}x{n2} not divisible by alpha={alpha}")
        padded = np.zeros((n1, n2))
        padded[:k1, :k2] = kernel
        padded = np.roll(padded, (-(k1 // 2), -(k2 // 2)), axis=(0, 1))
        return cls(np.fft.fft2(padded), alpha=alpha, xi=xi, kernel=kernel)

    @classmethod
    def identity(cls, hr_shape) -> "SpectralOperator":
        return cls.from_kernel(np.ones((1, 1)), hr_shape)

    def _check(self, x: np.ndarray, shape, what: str) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != tuple(shape):
            raise ValueError(f"{what}: expected spatial shape {shape}, got {x.shape[-2:]}")
        return x

    def _conv(self, x: np.ndarray, response: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(response * np.fft.fft2(x)).real

    def H(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x, self.hr_shape, "H")
        out = self._conv(x, self.freq_response)
        if self.alpha > 1:
            out = out[..., :: self.alpha, :: self.alpha]
        return out

    def Ht(self, y: np.ndarray) -> np.ndarray:
        y = self._check(y, self.lr_shape, "H^T")
        if self.alpha > 1:
            up = np.zeros(y.shape[:-2] + self.hr_shape)
            up[..., :: self.alpha, :: self.alpha] = y
            y = up
        return self._conv(y, self.freq_response.conj())

    def pinv(self, y: np.ndarray) -> np.ndarray:
        y = self._check(y, self.lr_shape, "H^+")
        if self.alpha == 1:
            return self._conv(y, self.pinv_response)
        return self.Ht(self._conv(y, self.pinv_response))

    def pinvT(self, x: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`pinv`, mapping the high-res grid to the low-res grid."""
        x = self._check(x, self.hr_shape, "(H^+)^T")
        if self.alpha == 1:
            return self._conv(x, self.pinv_response.conj())
        return self._conv(self.H(x), self.pinv_response)

    def PH(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x, self.hr_shape, "P_H")
        if self.alpha == 1:
            return self._conv(x, self.retained.astype(np.float64))
        return self.pinv(self.H(x))

    def __repr__(self):
        return (
            f"SpectralOperator(hr_shape={self.hr_shape}, alpha={self.alpha}, xi={self.xi}, "
            f"retained={int(self.retained.sum())}/{self.retained.size})"
        )


def from_kernel(kernel, hr_shape, alpha: int = 1, xi: float = 0.0) -> SpectralOperator:
    return SpectralOperator.from_kernel(kernel, hr_shape, alpha, xi)


def apply_H(op: SpectralOperator, x):
    return op.H(x)


def apply_Ht(op: SpectralOperator, y):
    return op.Ht(y)


def apply_pinv(op: SpectralOperator, y):
    return op.pinv(y)


def apply_PH(op: SpectralOperator, x):
    return op.PH(x)


def sufficient_statistic(op: SpectralOperator, y, sigma: float) -> np.ndarray:
    """``u = H^T y / sigma^2``, the network input for GSURE training."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0 for the sufficient statistic, got {sigma}")
    return op.Ht(y) / sigma**2


def ml_estimate(op: SpectralOperator, y) -> np.ndarray:
    """Maximum-likelihood reconstruction ``H^+ y`` restricted to the retained spectrum."""
    return op.pinv(y)
