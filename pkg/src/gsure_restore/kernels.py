"""Blur and anti-aliasing kernels used by the degradation scenarios.

Every kernel is returned as a centered ``(support, support)`` float64 array
with unit sum. ``support`` is always odd.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

KINDS = ("lorentzian", "uniform", "binomial", "gaussian", "bicubic")

LORENTZIAN_SUPPORT = 15
# std -> taps; other stds fall back to 2*ceil(6*std) + 1
GAUSSIAN_SUPPORT = {1.6: 25, 0.4: 5}
BICUBIC_A = -0.5


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    support: int | None = None
    std: float | None = None
    scale: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "gaussian" and (self.std is None or self.std <= 0):
            raise ValueError("gaussian kernel needs std > 0")
        if self.kind == "bicubic" and (self.scale is None or int(self.scale) != self.scale or self.scale < 1):
            raise ValueError("bicubic kernel needs an integer scale >= 1")
        if self.kind == "uniform" and self.support is None:
            raise ValueError("uniform kernel needs an explicit support")
        if self.support is not None and (self.support < 1 or self.support % 2 == 0):
            raise ValueError(f"kernel support must be a positive odd integer, got {self.support}")

    @property
    def taps(self) -> int:
        if self.support is not None:
            return self.support
        if self.kind == "lorentzian":
            return LORENTZIAN_SUPPORT
        if self.kind == "binomial":
            return 5
        if self.kind == "gaussian":
            return GAUSSIAN_SUPPORT.get(self.std, 2 * math.ceil(6 * self.std) + 1)
        return 4 * self.scale + 1

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(
            kind=str(d["kind"]).lower(),
            support=None if d.get("support") is None else int(d["support"]),
            std=None if d.get("std") is None else float(d["std"]),
            scale=None if d.get("scale") is None else int(d["scale"]),
        )

    def describe(self) -> str:
        extra = {"gaussian": f" std={self.std}", "bicubic": f" x{self.scale}"}.get(self.kind, "")
        return f"{self.kind}{extra} {self.taps}x{self.taps}"


def _offsets(taps: int) -> np.ndarray:
    r = taps // 2
    return np.arange(-r, r + 1, dtype=np.float64)


def cubic(s: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    """Keys cubic-convolution kernel."""
    s = np.abs(np.asarray(s, dtype=np.float64))
    out = np.zeros_like(s)
    near = s <= 1
    far = (s > 1) & (s < 2)
    out[near] = (a + 2) * s[near] ** 3 - (a + 3) * s[near] ** 2 + 1
    out[far] = a * s[far] ** 3 - 5 * a * s[far] ** 2 + 8 * a * s[far] - 4 * a
    return out


def build_kernel(spec: KernelSpec) -> np.ndarray:
    taps = spec.taps
    t = _offsets(taps)
    if spec.kind == "lorentzian":
        k = 1.0 / (1.0 + t[:, None] ** 2 + t[None, :] ** 2)
    elif spec.kind == "uniform":
        k = np.ones((taps, taps))
    elif spec.kind == "binomial":
        if taps != 5:
            raise ValueError("binomial kernel has fixed support 5")
        b = np.array([1.0, 4.0, 6.0, 4.0, 1.0])
        k = np.outer(b, b) / 256.0
    elif spec.kind == "gaussian":
        k = np.exp(-(t[:, None] ** 2 + t[None, :] ** 2) / (2.0 * spec.std**2))
    else:
        w = cubic(t / spec.scale) / spec.scale
        k = np.outer(w, w)
    return k / k.sum()
