"""Gaussian denoisers for the plug-and-play z-step.

Three kinds are available:

* :class:`Identity` returns its input (useful for ablations and algebra checks).
* :class:`TV` solves the ROF problem ``min_z 0.5||z - f||^2 + lam TV(z)``
  per channel with Chambolle's dual projection, ``lam = k * noise_level``.
* :class:`ExternalCommand` hands the image to another program through PNG
  files, e.g. a BM3D binary. The argument template may use ``{input}``,
  ``{output}`` and ``{sigma}``.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass

import numpy as np

from .image import as_image, load_image, save_image

TV_WEIGHT = 0.75


class DenoiserError(RuntimeError):
    """An external denoiser failed; ``transcript`` holds the command and its output."""

    def __init__(self, message: str, transcript: str):
        super().__init__(f"{message}\n{transcript}")
        self.transcript = transcript


@dataclass(frozen=True)
class Identity:
    def describe(self) -> str:
        return "identity"


@dataclass(frozen=True)
class TV:
    max_iters: int = 100
    tolerance: float = 1e-4
    weight: float = TV_WEIGHT

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("TV max_iters must be >= 1")
        if not self.tolerance >= 0:
            raise ValueError("TV tolerance must be >= 0")
        if not self.weight >= 0:
            raise ValueError("TV weight must be >= 0")

    def describe(self) -> str:
        return f"tv(max_iters={self.max_iters}, tolerance={self.tolerance:g}, k={self.weight:g})"


@dataclass(frozen=True)
class ExternalCommand:
    argv: tuple[str, ...]
    timeout: float | None = None

    def __post_init__(self):
        argv = tuple(self.argv)
        object.__setattr__(self, "argv", argv)
        if not argv:
            raise ValueError("external denoiser needs a program")
        joined = " ".join(argv)
        for slot in ("{input}", "{output}", "{sigma}"):
            if slot not in joined:
                raise ValueError(f"external denoiser template must contain {slot}: {joined!r}")

    def describe(self) -> str:
        return "cmd:" + shlex.join(self.argv)


DenoiserSpec = Identity | TV | ExternalCommand


def parse_denoiser(text: str) -> DenoiserSpec:
    """Parse ``identity``, ``tv``, ``tv:ITERS[:TOL[:K]]`` or ``cmd:PROGRAM ARGS...``."""
    text = text.strip()
    if text == "identity":
        return Identity()
    if text == "tv" or text.startswith("tv:"):
        fields = text.split(":")[1:]
        try:
            kwargs = {}
            if len(fields) > 0 and fields[0]:
                kwargs["max_iters"] = int(fields[0])
            if len(fields) > 1:
                kwargs["tolerance"] = float(fields[1])
            if len(fields) > 2:
                kwargs["weight"] = float(fields[2])
            if len(fields) > 3:
                raise ValueError("too many fields")
        except ValueError as exc:
            raise ValueError(f"bad TV denoiser spec {text!r}: {exc}") from None
        return TV(**kwargs)
    if text.startswith("cmd:"):
        return ExternalCommand(tuple(shlex.split(text[4:])))
    raise ValueError(f"unknown denoiser {text!r} (expected identity, tv[:iters[:tol[:k]]] or cmd:...)")


def denoiser_to_dict(spec: DenoiserSpec) -> dict:
    if isinstance(spec, Identity):
        return {"kind": "identity"}
    if isinstance(spec, TV):
        return {"kind": "tv", "max_iters": spec.max_iters, "tolerance": spec.tolerance, "weight": spec.weight}
    return {"kind": "external", "argv": list(spec.argv), "timeout": spec.timeout}


def denoiser_from_dict(d: dict) -> DenoiserSpec:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "identity":
        return Identity()
    if kind == "tv":
        return TV(**d)
    if kind == "external":
        return ExternalCommand(tuple(d["argv"]), d.get("timeout"))
    raise ValueError(f"unknown denoiser kind {kind!r}")


def _grad(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with Neumann boundary (last row/column zero)."""
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    gy[..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    return gx, gy


def _div(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`_grad`."""
    d = np.zeros_like(px)
    d[..., 0, :] += px[..., 0, :]
    d[..., 1:-1, :] += px[..., 1:-1, :] - px[..., :-2, :]
    d[..., -1, :] -= px[..., -2, :]
    d[..., :, 0] += py[..., :, 0]
    d[..., :, 1:-1] += py[..., :, 1:-1] - py[..., :, :-2]
    d[..., :, -1] -= py[..., :, -2]
    return d


def tv_denoise(img: np.ndarray, lam: float, max_iters: int = 100, tolerance: float = 1e-4, tau: float = 0.125):
    """Chambolle's projection algorithm for isotropic ROF, each channel separately.

    Iterates the dual field ``p`` until ``max |p_new - p| <= tolerance`` or
    ``max_iters`` is reached, then returns ``img - lam * div p``.
    """
    f = np.asarray(img, dtype=np.float64)
    if lam <= 0:
        return f.copy()
    px = np.zeros_like(f)
    py = np.zeros_like(f)
    for _ in range(max_iters):
        gx, gy = _grad(_div(px, py) - f / lam)
        norm = np.sqrt(gx * gx + gy * gy)
        denom = 1.0 + tau * norm
        nx = (px + tau * gx) / denom
        ny = (py + tau * gy) / denom
        change = max(np.max(np.abs(nx - px)), np.max(np.abs(ny - py)))
        px, py = nx, ny
        if change <= tolerance:
            break
    return f - lam * _div(px, py)


def _run_external(spec: ExternalCommand, img: np.ndarray, noise_level: float) -> np.ndarray:
    with tempfile.TemporaryDirectory(prefix="gsure-denoise-") as tmp:
        src = os.path.join(tmp, "input.png")
        dst = os.path.join(tmp, "output.png")
        save_image(img, src)
        argv = [a.format(input=src, output=dst, sigma=repr(float(noise_level))) for a in spec.argv]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=spec.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise DenoiserError("external denoiser could not run", f"$ {shlex.join(argv)}\n{exc}") from exc
        transcript = (
            f"$ {shlex.join(argv)}\nexit status {proc.returncode}\n"
            f"--- stdout ---\n{proc.stdout}--- stderr ---\n{proc.stderr}"
        )
        if proc.returncode != 0:
            raise DenoiserError("external denoiser failed", transcript)
        if not os.path.exists(dst):
            raise DenoiserError("external denoiser wrote no output", transcript)
        try:
            out = load_image(dst)
        except ValueError as exc:
            raise DenoiserError(f"external denoiser output unreadable: {exc}", transcript) from exc
    if out.shape != img.shape:
        raise DenoiserError(f"external denoiser returned shape {out.shape}, expected {img.shape}", transcript)
    return out


def denoise(spec: DenoiserSpec, img, noise_level: float) -> np.ndarray:
    """Denoise ``img`` (display scale) assuming white noise of std ``noise_level``."""
    if not noise_level >= 0:
        raise ValueError(f"noise_level must be >= 0, got {noise_level}")
    img = np.asarray(img, dtype=np.float64)
    if isinstance(spec, Identity):
        return img.copy()
    if isinstance(spec, TV):
        return tv_denoise(img, spec.weight * noise_level, spec.max_iters, spec.tolerance)
    if isinstance(spec, ExternalCommand):
        return np.array(_run_external(spec, as_image(img), noise_level)).reshape(img.shape)
    raise TypeError(f"not a denoiser spec: {spec!r}")
