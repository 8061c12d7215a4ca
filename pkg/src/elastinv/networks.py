"""Encoder-decoder UNet for strain-to-parameter inversion, plus MLP baseline.

Output channel order is ``[Lambda, M]`` for the two-output network and
``[Lambda, M, S_xx, S_yy, S_xy]`` for the five-output one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

DEFAULT_CHANNELS = (64, 128, 256, 512, 1024)
REDUCED_CHANNELS = (16, 32, 64, 128, 256)


@dataclass(frozen=True)
class UNetConfig:
    out_channels: int = 5
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    seed: int = 0
    in_channels: int = 3
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.in_channels != 3:
            raise ValueError("the network takes three strain channels")
        if self.out_channels not in (2, 5):
            raise ValueError("out_channels must be 2 (parameters) or 5 (parameters and stresses)")
        if not self.channels or any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError("channel widths must increase strictly with depth")

    @property
    def levels(self) -> int:
        return len(self.channels)


def unet_param_count(channels, in_channels: int = 3, out_channels: int = 5) -> int:
    """Number of trainable values in the UNet.

    Encoder level ``k`` (width ``c``, input width ``c_in``): two 3x3 convs
    ``9*c_in*c + 9*c*c`` plus two batchnorms ``4*c``.  Decoder level ``k``
    (from width ``c_up`` to ``c``): 2x2 conv ``4*c_up*c``, double conv on the
    concatenation ``9*2c*c + 9*c*c`` plus ``4*c``.  Head: ``c_0 * out``.
    """
    total = 0
    c_in = in_channels
    for c in channels:
        total += 9 * c_in * c + 9 * c * c + 4 * c
        c_in = c
    for c, c_up in zip(channels[:-1], channels[1:]):
        total += 4 * c_up * c + 9 * 2 * c * c + 9 * c * c + 4 * c
    total += channels[0] * out_channels
    return total


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = np.sqrt(2.0)):
    """Uniform weights with variance ``gain**2 / fan_in``."""
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class UNet:
    def __init__(self, cfg: UNetConfig):
        self.cfg = cfg
        self.params: dict[str, Parameter] = {}
        ch = cfg.channels
        c_in = cfg.in_channels
        for k, c in enumerate(ch):
            self._double_conv(f"enc{k}", c_in, c)
            c_in = c
        for k in range(len(ch) - 2, -1, -1):
            self._param(f"up{k}.w", (ch[k], ch[k + 1], 2, 2))
            self._double_conv(f"dec{k}", 2 * ch[k], ch[k])
        self._param("head.w", (cfg.out_channels, ch[0], 1, 1))
        init_weights(cfg.seed, self)

    def _param(self, name, shape):
        self.params[name] = Parameter(np.zeros(shape), name=name)

    def _double_conv(self, prefix, c_in, c_out):
        self._param(f"{prefix}.conv1", (c_out, c_in, 3, 3))
        self._param(f"{prefix}.bn1.gamma", (c_out,))
        self._param(f"{prefix}.bn1.beta", (c_out,))
        self._param(f"{prefix}.conv2", (c_out, c_out, 3, 3))
        self._param(f"{prefix}.bn2.gamma", (c_out,))
        self._param(f"{prefix}.bn2.beta", (c_out,))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def _block(self, prefix, x):
        p = self.params
        eps = self.cfg.bn_eps
        x = ad.conv2d(x, p[f"{prefix}.conv1"], padding=1)
        x = ad.relu(ad.batchnorm2d(x, p[f"{prefix}.bn1.gamma"], p[f"{prefix}.bn1.beta"], eps))
        x = ad.conv2d(x, p[f"{prefix}.conv2"], padding=1)
        return ad.relu(ad.batchnorm2d(x, p[f"{prefix}.bn2.gamma"], p[f"{prefix}.bn2.beta"], eps))

    def encoder_shapes(self, h: int, w: int) -> list[tuple[int, int]]:
        shapes = [(h, w)]
        for _ in range(self.cfg.levels - 1):
            h, w = h // 2, w // 2
            shapes.append((h, w))
        return shapes

    def __call__(self, x: Tensor) -> Tensor:
        return unet_forward(self, x)


def unet_forward(net: UNet, x: Tensor) -> Tensor:
    """Run the UNet on a ``(3, H, W)`` tensor; output has the same spatial size."""
    cfg = net.cfg
    if x.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ValueError(f"expected input of shape (3, H, W), got {x.shape}")
    _, H, W = x.shape
    if min(net.encoder_shapes(H, W)[-1]) < 1:
        raise ValueError(f"input {H}x{W} is too small for {cfg.levels} levels")
    skips = []
    for k in range(cfg.levels):
        x = net._block(f"enc{k}", x)
        if k < cfg.levels - 1:
            skips.append(x)
            x = ad.maxpool2(x)
    for k in range(cfg.levels - 2, -1, -1):
        skip = skips[k]
        _, h, w = x.shape
        x = ad.upsample_bilinear(x, 2 * h, 2 * w)
        # 2x2 kernel with one trailing row/column of zero padding keeps the size
        x = ad.conv2d(x, net.params[f"up{k}.w"], padding=(0, 1, 0, 1))
        if x.shape[1:] != skip.shape[1:]:
            x = ad.upsample_bilinear(x, skip.shape[1], skip.shape[2])
        x = net._block(f"dec{k}", ad.concat_channels(skip, x))
    return ad.conv2d(x, net.params["head.w"])


@dataclass(frozen=True)
class MLPConfig:
    hidden_layers: int = 4
    width: int = 64
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.hidden_layers < 1 or self.width < 1:
            raise ValueError("MLP needs at least one hidden layer of positive width")


class MLP:
    def __init__(self, sizes, activation="tanh", prefix="mlp"):
        self.activation = activation
        self.params: dict[str, Parameter] = {}
        self.layers = []
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = Parameter(np.zeros((a, b)), name=f"{prefix}.{k}.w")
            bias = Parameter(np.zeros(b), name=f"{prefix}.{k}.b")
            self.params[w.name] = w
            self.params[bias.name] = bias
            self.layers.append((w, bias))

    def parameters(self):
        return list(self.params.values())

    def __call__(self, x: Tensor) -> Tensor:
        act = ad.tanh if self.activation == "tanh" else ad.relu
        for k, (w, b) in enumerate(self.layers):
            x = x @ w + b
            if k < len(self.layers) - 1:
                x = act(x)
        return x


class DensePINN:
    """Two MLPs on dimensionless coordinates: (X, Y) -> (Lambda, M) and (X, Y) -> stresses."""

    def __init__(self, cfg: MLPConfig):
        self.cfg = cfg
        hidden = [cfg.width] * cfg.hidden_layers
        self.param_net = MLP([2, *hidden, 2], cfg.activation, prefix="param_net")
        self.stress_net = MLP([2, *hidden, 3], cfg.activation, prefix="stress_net")
        init_weights(cfg.seed, self)

    @property
    def params(self) -> dict[str, Parameter]:
        return {**self.param_net.params, **self.stress_net.params}

    def parameters(self):
        return self.param_net.parameters() + self.stress_net.parameters()

    def __call__(self, coords: Tensor):
        return pinn_forward(self, coords)


def pinn_forward(net: DensePINN, coords: Tensor) -> tuple[Tensor, Tensor]:
    """``(N, 2)`` coordinates to ``(N, 2)`` parameters and ``(N, 3)`` stresses."""
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("coordinates must have shape (N, 2)")
    return net.param_net(coords), net.stress_net(coords)


def init_weights(seed: int, net) -> None:
    """Seeded fan-in-scaled uniform initialization, in parameter-name order.

    Conv weights use the ReLU gain; MLP weights use gain 1 for tanh hidden
    units.  Biases start at zero, batchnorm scales at one and shifts at zero.
    """
    rng = np.random.default_rng(seed)
    gain = np.sqrt(2.0)
    if isinstance(net, DensePINN) and net.cfg.activation == "tanh":
        gain = 1.0
    for name, p in net.params.items():
        if name.endswith(".gamma"):
            p.data[...] = 1.0
        elif name.endswith(".beta") or name.endswith(".b"):
            p.data[...] = 0.0
        else:
            fan_in = int(np.prod(p.shape[1:])) if p.ndim == 4 else p.shape[0]
            p.data[...] = kaiming_uniform(rng, p.shape, fan_in, gain)
        p.m[...] = 0.0
        p.v[...] = 0.0
        p.grad = None
