"""Encoder-decoder image generator with skip connections, plus Adam.

Layout for ``depth = D`` and per-scale widths ``channels``::

    enc0   conv3x3        in       -> ch[0]               full resolution
    downS  conv3x3 /2     ch[S-1]  -> ch[S]     S = 1..D-1
    skipS  conv1x1        ch[S]    -> skip      S = 0..D-2
    decS   up x2, concat skipS, conv3x3 (ch[S+1] + skip) -> ch[S]   S = D-2..0
    head   conv1x1        ch[0]    -> out, then 255 * sigmoid

Every conv has a bias and (except the head) is followed by LeakyReLU(0.1).
The input is multiplied by the fixed ``input_scale`` before the first layer.
"""

from __future__ import annotations

import json
import logging
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

log = logging.getLogger(__name__)

_MAGIC = b"GSRCKPT1"


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 3
    out_channels: int = 3
    depth: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    skip_channels: int = 4
    slope: float = 0.1
    input_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if len(self.channels) != self.depth:
            raise ValueError(f"need {self.depth} channel widths, got {len(self.channels)}")
        if min(self.channels) < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.depth > 1 and self.skip_channels < 1:
            raise ValueError("skip_channels must be positive")

    def replace(self, **changes) -> "NetConfig":
        return NetConfig(**{**asdict(self), **changes})

    def layer_shapes(self) -> "OrderedDict[str, tuple[int, int, int]]":
        """``name -> (cout, cin, k)`` for every conv layer, in parameter order."""
        ch = self.channels
        layers = OrderedDict()
        layers["enc0"] = (ch[0], self.in_channels, 3)
        for s in range(1, self.depth):
            layers[f"down{s}"] = (ch[s], ch[s - 1], 3)
        for s in range(self.depth - 1):
            layers[f"skip{s}"] = (self.skip_channels, ch[s], 1)
        for s in range(self.depth - 2, -1, -1):
            layers[f"dec{s}"] = (ch[s], ch[s + 1] + self.skip_channels, 3)
        layers["head"] = (self.out_channels, ch[0], 1)
        return layers

    @property
    def stride(self) -> int:
        return 2 ** (self.depth - 1)


@dataclass
class Network:
    config: NetConfig

    def forward(self, params: "ParamStore", u) -> Tensor:
        return forward(self, params, u)


@dataclass
class ParamStore:
    """Named parameter tensors with shared Adam state."""

    params: "OrderedDict[str, Tensor]"
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    seed: int | None = None

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.values())

    def count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            if p.grad is not None:
                p.grad[...] = 0.0

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.data[...] = snap[k]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params.values()])

    def set_flat(self, vector) -> None:
        """Inverse of :meth:`flat`: load parameters from one concatenated vector."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.count():
            raise ValueError(f"expected {self.count()} values, got {vector.size}")
        offset = 0
        for p in self.params.values():
            p.data[...] = vector[offset : offset + p.data.size].reshape(p.data.shape)
            offset += p.data.size

    def flat_grad(self) -> np.ndarray:
        return np.concatenate(
            [np.zeros(p.data.size) if p.grad is None else p.grad.ravel() for p in self.params.values()]
        )


def network_init(config: NetConfig, seed: int) -> tuple[Network, ParamStore]:
    """Build a network with fan-in scaled uniform weights.

    Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    layer by layer in :meth:`NetConfig.layer_shapes` order from a PCG64
    stream seeded by ``seed``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    params = OrderedDict()
    for name, (cout, cin, k) in config.layer_shapes().items():
        bound = 1.0 / np.sqrt(cin * k * k)
        params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)), requires_grad=True, name=f"{name}.w")
        params[f"{name}.b"] = Tensor(rng.uniform(-bound, bound, cout), requires_grad=True, name=f"{name}.b")
    store = ParamStore(params, seed=seed)
    log.debug("network initialised: %d parameters, config=%s", store.count(), config)
    return Network(config), store


def forward(net: Network, params: ParamStore, u) -> Tensor:
    cfg = net.config
    x = u if isinstance(u, Tensor) else Tensor(u)
    if x.data.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ValueError(f"expected input ({cfg.in_channels}, H, W), got {x.shape}")
    h, w = x.shape[1:]
    if h % cfg.stride or w % cfg.stride:
        raise ValueError(f"input {h}x{w} must be divisible by {cfg.stride}")

    def conv(name, inp, stride=1):
        return ad.conv2d(inp, params[f"{name}.w"], params[f"{name}.b"], stride=stride)

    act = lambda t: ad.leaky_relu(t, cfg.slope)  # noqa: E731

    feats = [act(conv("enc0", x * cfg.input_scale))]
    for s in range(1, cfg.depth):
        feats.append(act(conv(f"down{s}", feats[-1], stride=2)))
    d = feats[-1]
    for s in range(cfg.depth - 2, -1, -1):
        skip = act(conv(f"skip{s}", feats[s]))
        d = act(conv(f"dec{s}", ad.concat([ad.upsample2(d), skip])))
    return ad.sigmoid(conv("head", d)) * 255.0


def adam_step(params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    if all(p.grad is None for p in params):
        raise RuntimeError("adam_step called before any backward pass")
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.params.items():
        g = p.grad if p.grad is not None else 0.0
        m = params.m.get(name)
        if m is None:
            m = params.m[name] = np.zeros_like(p.data)
            params.v[name] = np.zeros_like(p.data)
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    params.zero_grad()


def save_checkpoint(params: ParamStore, path, config: NetConfig | None = None) -> None:
    """Write ``magic | u64 header length | JSON header | float64 LE blob``."""
    header = {
        "seed": params.seed,
        "step": params.step,
        "tensors": [[k, list(p.shape)] for k, p in params.params.items()],
        "config": None if config is None else asdict(config),
    }
    hbytes = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(params.flat().astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, NetConfig | None]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        blob = np.frombuffer(fh.read(), dtype="<f8")
    params = OrderedDict()
    offset = 0
    for name, shape in header["tensors"]:
        size = int(np.prod(shape))
        if offset + size > blob.size:
            raise ValueError(f"{path}: truncated blob")
        params[name] = Tensor(blob[offset : offset + size].reshape(shape).astype(np.float64), requires_grad=True, name=name)
        offset += size
    if offset != blob.size:
        raise ValueError(f"{path}: {blob.size - offset} trailing values")
    cfg = header.get("config")
    config = None if cfg is None else NetConfig(**{**cfg, "channels": tuple(cfg["channels"])})
    return ParamStore(params, step=header["step"], seed=header["seed"]), config
