"""Restoration procedures: GSURE training, DIP training and plug-and-play ADMM.

All three fit the generator network of :mod:`gsure_restore.network` to a
single observation. None of them sees the ground truth; callers that have it
can pass ``monitor``, a callable ``x -> dict[str, float]`` whose values are
copied into the trace records (PSNR, projected MSE, ...). Monitor output
never feeds back into training or model selection.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .denoisers import TV, DenoiserSpec, denoise, denoiser_to_dict
from .linop import SpectralOperator, ml_estimate, sufficient_statistic
from .losses import DEFAULT_EPSILON, GsureProbe, gsure_loss, ls_loss
from .network import NetConfig, ParamStore, adam_step, forward, network_init

log = logging.getLogger(__name__)

Monitor = Callable[[np.ndarray], dict]

# DIP input: uniform noise on [0, DIP_INPUT_RANGE), drawn once per run and
# multiplied by 1/255 inside the network like the other inputs.
DIP_INPUT_RANGE = 0.1 * 255


@dataclass(frozen=True)
class MinSmoothedLoss:
    """Pick the iteration whose trailing moving-average loss is smallest."""

    window: int = 20

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class FixedIteration:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("FixedIteration k must be >= 1")


@dataclass(frozen=True)
class LastIteration:
    pass


Selection = Union[MinSmoothedLoss, FixedIteration, LastIteration]


def selection_to_str(sel: Selection) -> str:
    if isinstance(sel, MinSmoothedLoss):
        return f"min-smoothed:{sel.window}"
    if isinstance(sel, FixedIteration):
        return f"fixed:{sel.k}"
    return "last"


def parse_selection(text: str) -> Selection:
    """Inverse of :func:`selection_to_str`."""
    kind, _, arg = text.partition(":")
    try:
        if kind == "min-smoothed":
            return MinSmoothedLoss(int(arg) if arg else 20)
        if kind == "fixed":
            return FixedIteration(int(arg))
        if kind == "last" and not arg:
            return LastIteration()
    except ValueError:
        pass
    raise ValueError(f"bad selection {text!r} (expected min-smoothed[:W], fixed:K or last)")


LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 4000
    lr: float = 1e-2
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    selection: Selection = MinSmoothedLoss(20)
    log_every: int = 1
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if isinstance(self.selection, FixedIteration) and self.selection.k > self.iterations:
            raise ValueError(f"fixed iteration {self.selection.k} exceeds iterations {self.iterations}")

    def lr_at(self, t: int) -> float:
        """Learning rate of the t-th Adam step (1-based); cosine decays from lr towards 0."""
        if self.lr_schedule == "cosine":
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * (t - 1) / self.iterations))
        return self.lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selection"] = selection_to_str(self.selection)
        return d


@dataclass(frozen=True)
class AdmmConfig:
    """Plug-and-play ADMM settings. Defaults follow the deblurring setup
    (scenario-1 prior weight, beta/rho = 0.01, 250 x 20 Adam steps at 1e-3)."""

    n_iter: int = 250
    inner_iters: int = 20
    inner_lr: float = 1e-3
    beta: float = 0.75
    rho: float = 75.0
    denoiser: DenoiserSpec = TV()
    fidelity: str = "gsure"
    network_input: str = "statistic"
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    output: str = "z"

    def __post_init__(self):
        if self.n_iter < 1 or self.inner_iters < 1:
            raise ValueError("n_iter and inner_iters must be >= 1")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if not self.inner_lr > 0:
            raise ValueError("inner_lr must be > 0")
        if self.fidelity not in ("gsure", "ls"):
            raise ValueError(f"fidelity must be 'gsure' or 'ls', got {self.fidelity!r}")
        if self.network_input not in ("statistic", "noise"):
            raise ValueError(f"network_input must be 'statistic' or 'noise', got {self.network_input!r}")
        if self.output not in ("z", "f"):
            raise ValueError(f"output must be 'z' or 'f', got {self.output!r}")

    @property
    def noise_level(self) -> float:
        """Denoiser strength sqrt(beta / rho), in display units."""
        return math.sqrt(self.beta / self.rho)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["denoiser"] = denoiser_to_dict(self.denoiser)
        return d


@dataclass
class TraceRecord:
    iteration: int
    loss: float
    wall_time: float
    metrics: dict = field(default_factory=dict)


@dataclass
class RestorationResult:
    restored: np.ndarray
    traces: list[TraceRecord]
    selected_iteration: int
    config: dict
    seed: int
    params: ParamStore | None = None
    dual: np.ndarray | None = None

    def trace_rows(self) -> list[dict]:
        """Flat dict rows (``iteration, loss, wall_time, <metrics>``) for CSV output."""
        return [{"iteration": r.iteration, "loss": r.loss, "wall_time": r.wall_time, **r.metrics} for r in self.traces]


class SolverDiverged(RuntimeError):
    """Raised on a non-finite loss; ``traces`` holds the records up to that point."""

    def __init__(self, message: str, traces: list[TraceRecord]):
        tail = ", ".join(f"{r.iteration}:{r.loss:.4g}" for r in traces[-5:])
        super().__init__(f"{message} (last losses: {tail or 'none'})")
        self.traces = traces


def _streams(seed: int) -> tuple[int, np.random.Generator, np.random.Generator]:
    """Independent streams: network init seed, probe generator, DIP-input generator."""
    ss = np.random.SeedSequence(seed)
    init, probe, noise = ss.spawn(3)
    return (
        int(init.generate_state(1, np.uint64)[0]),
        np.random.Generator(np.random.PCG64(probe)),
        np.random.Generator(np.random.PCG64(noise)),
    )


def _prepare(op: SpectralOperator, y, sigma: float | None, net_config: NetConfig, network_input: str, noise_rng):
    """Network input and configured network for one run.

    ``statistic`` feeds u = H^T y / sigma^2 with ``input_scale = sigma^2 / 255``
    so the first layer sees H^T y / 255 regardless of the noise level.
    ``noise`` draws a fixed uniform tensor, as in DIP.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2:
        y = y[None]
    channels = y.shape[0]
    shape = (channels,) + op.hr_shape
    if network_input == "noise":
        u = noise_rng.uniform(0.0, DIP_INPUT_RANGE, shape)
        scale = 1.0 / 255.0
    elif sigma is not None:
        u = sufficient_statistic(op, y, sigma)
        scale = sigma**2 / 255.0
    else:
        u = op.Ht(y)
        scale = 1.0 / 255.0
    cfg = net_config.replace(in_channels=channels, out_channels=channels, input_scale=scale)
    return y, u, cfg


class _Selector:
    def __init__(self, selection: Selection, iterations: int):
        self.selection = selection
        self.iterations = iterations
        self.window = deque(maxlen=selection.window if isinstance(selection, MinSmoothedLoss) else 1)
        self.best = math.inf
        self.chosen = None

    def update(self, t: int, loss: float) -> bool:
        """Record iteration ``t``; return True when it becomes the selected one."""
        sel = self.selection
        if isinstance(sel, MinSmoothedLoss):
            self.window.append(loss)
            smoothed = sum(self.window) / len(self.window)
            if smoothed < self.best:
                self.best = smoothed
                self.chosen = t
                return True
            return False
        target = sel.k if isinstance(sel, FixedIteration) else self.iterations
        if t == target:
            self.chosen = t
            return True
        return False


def _check_sigma(sigma):
    if sigma is None or not sigma > 0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be a positive noise std, got {sigma}")


def _train(op, y, u, cfg, train_config: TrainConfig, loss_fn, probe_rng, seed_init, monitor, method, extra):
    net, params = network_init(cfg, seed_init)
    sel = _Selector(train_config.selection, train_config.iterations)
    traces: list[TraceRecord] = []
    start = time.perf_counter()
    restored, snap = None, None
    for t in range(1, train_config.iterations + 1):
        loss, f0 = loss_fn(net, params, probe_rng)
        value = loss.item()
        if not math.isfinite(value):
            raise SolverDiverged(f"{method}: non-finite loss at iteration {t}", traces)
        if sel.update(t, value):
            restored = f0.data.copy()
            snap = params.snapshot()
        if t % train_config.log_every == 0 or t == train_config.iterations:
            metrics = monitor(f0.data) if monitor else {}
            traces.append(TraceRecord(t, value, time.perf_counter() - start, metrics))
        loss.backward()
        adam_step(params, train_config.lr_at(t))
        if t % 500 == 0:
            log.info("%s iteration %d/%d loss %.6g", method, t, train_config.iterations, value)
    params.restore(snap)
    config = {"method": method, "train": train_config.to_dict(), "net": asdict(cfg), **extra}
    return RestorationResult(restored, traces, sel.chosen, config, train_config.seed, params)


def train_gsure(
    op: SpectralOperator,
    y,
    sigma: float,
    net_config: NetConfig = NetConfig(),
    train_config: TrainConfig = TrainConfig(),
    monitor: Monitor | None = None,
) -> RestorationResult:
    """Fit the network to ``y`` by minimising projected GSURE.

    Iteration ``t`` evaluates ``f(u)`` and ``f(u + eps g)`` with a fresh probe
    ``g``, records the loss, then takes one Adam step. The selected iteration
    refers to the parameters used in that evaluation, and ``restored`` is the
    output they produced.
    """
    _check_sigma(sigma)
    seed_init, probe_rng, noise_rng = _streams(train_config.seed)
    y, u, cfg = _prepare(op, y, sigma, net_config, "statistic", noise_rng)
    x_ml = ml_estimate(op, y)
    eps = train_config.epsilon

    def loss_fn(net, params, rng):
        probe = GsureProbe.draw(rng, u.shape, eps)
        f0 = forward(net, params, u)
        f1 = forward(net, params, u + eps * probe.g)
        return gsure_loss(op, f0, f1, y, probe, x_ml=x_ml), f0

    return _train(op, y, u, cfg, train_config, loss_fn, probe_rng, seed_init, monitor, "gsure", {"sigma": sigma})


def train_dip(
    op: SpectralOperator,
    y,
    net_config: NetConfig = NetConfig(),
    train_config: TrainConfig = TrainConfig(selection=LastIteration()),
    monitor: Monitor | None = None,
) -> RestorationResult:
    """Deep image prior: fit a fixed random input to ``y`` under the LS loss."""
    seed_init, probe_rng, noise_rng = _streams(train_config.seed)
    y, u, cfg = _prepare(op, y, None, net_config, "noise", noise_rng)

    def loss_fn(net, params, rng):
        f0 = forward(net, params, u)
        return ls_loss(op, f0, y), f0

    return _train(op, y, u, cfg, train_config, loss_fn, probe_rng, seed_init, monitor, "dip", {})


def admm_pnp(
    op: SpectralOperator,
    y,
    sigma: float | None,
    net_config: NetConfig = NetConfig(),
    admm_config: AdmmConfig = AdmmConfig(),
    monitor: Monitor | None = None,
) -> RestorationResult:
    """Plug-and-play ADMM with the network as the primal variable.

    For k = 1..n_iter:

    1. theta-step: ``inner_iters`` Adam steps on
       ``fidelity(f) + rho/2 ||f - z + v||^2``, warm-started (parameters and
       Adam moments carry over).
    2. z-step: ``z = denoise(f + v, sqrt(beta / rho))``.
    3. v-step: ``v = v + f - z``.

    Starts from ``z = H^+ y`` and ``v = 0``. The returned image is ``z`` after
    the last iteration (``output="f"`` returns the network output instead).
    One trace record is written per ADMM iteration.
    """
    cfg_a = admm_config
    if cfg_a.fidelity == "gsure":
        _check_sigma(sigma)
    seed_init, probe_rng, noise_rng = _streams(cfg_a.seed)
    y, u, cfg = _prepare(op, y, sigma if cfg_a.fidelity == "gsure" else None, net_config, cfg_a.network_input, noise_rng)
    x_ml = ml_estimate(op, y)
    eps = cfg_a.epsilon
    net, params = network_init(cfg, seed_init)

    z = x_ml.copy()
    v = np.zeros_like(z)
    traces: list[TraceRecord] = []
    start = time.perf_counter()
    step = 0
    f = None
    for k in range(1, cfg_a.n_iter + 1):
        target = z - v
        for _ in range(cfg_a.inner_iters):
            step += 1
            f0 = forward(net, params, u)
            if cfg_a.fidelity == "gsure":
                probe = GsureProbe.draw(probe_rng, u.shape, eps)
                f1 = forward(net, params, u + eps * probe.g)
                fid = gsure_loss(op, f0, f1, y, probe, x_ml=x_ml)
            else:
                fid = ls_loss(op, f0, y)
            loss = fid + ad.sumsq(f0 - target) * (0.5 * cfg_a.rho)
            value = loss.item()
            if not math.isfinite(value):
                raise SolverDiverged(f"admm: non-finite loss at ADMM iteration {k}, Adam step {step}", traces)
            loss.backward()
            adam_step(params, cfg_a.inner_lr)
        f = forward(net, params, u).data
        z = denoise(cfg_a.denoiser, f + v, cfg_a.noise_level)
        v = (v + f) - z
        out = z if cfg_a.output == "z" else f
        metrics = {"primal_residual": float(np.linalg.norm(f - z))}
        if monitor:
            metrics.update(monitor(out))
        traces.append(TraceRecord(k, value, time.perf_counter() - start, metrics))
        if k % 10 == 0:
            log.info("admm iteration %d/%d loss %.6g", k, cfg_a.n_iter, value)

    restored = z if cfg_a.output == "z" else f
    config = {"method": "admm", "admm": cfg_a.to_dict(), "net": asdict(cfg), "sigma": sigma}
    return RestorationResult(restored.copy(), traces, cfg_a.n_iter, config, cfg_a.seed, params, dual=v)
