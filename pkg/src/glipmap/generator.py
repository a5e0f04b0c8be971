"""U-Net style generator with convolutional skip branches.

Layer recipe for ``depth`` levels (``h0`` is the network input)::

    enc i :  h(i+1) = lrelu(bn(conv_s2(h(i))))
    skip i:  s(i)   = lrelu(bn(conv(h(i))))
    dec i :  d(i)   = lrelu(bn(conv(concat(up2(d(i+1)), s(i)))))   with d(depth) = h(depth)
    head  :  y      = sigmoid(conv1x1(d(0)))

Batch norm is skipped on a layer whose feature map holds a single value per
channel (a 1x1 bottleneck at batch size 1); per-channel statistics are
undefined there.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .grid import ExposureGrid, ObservationMask

GLIP = "glip"
GRIP = "grip"
PRIOR_MODES = (GLIP, GRIP)
PAPER_KERNELS = (2, 3, 4)
GRIP_SCALE = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class NetConfig:
    depth: int = 6
    enc_channels: tuple[int, ...] = (16, 32, 64, 128, 128, 128)
    dec_channels: tuple[int, ...] | None = None
    skip_channels: int = 4
    enc_kernel: int = 3
    dec_kernel: int = 3
    skip_kernel: int = 1
    down_stride: int = 2
    out_channels: int = 1
    final_activation: str = "sigmoid"
    input_channels: int = 1
    # "default": fixed kernels above; "paper": encoder/decoder kernels cycle 2, 3, 4 by level
    kernel_profile: str = "default"
    leaky_slope: float = ad.LEAKY_SLOPE
    # "input": skip i branches off the input of encoder level i (full-resolution skip from z);
    # "encoder": skip i branches off the output of encoder level i
    skip_source: str = "input"

    def __post_init__(self):
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))
        if self.dec_channels is not None:
            object.__setattr__(self, "dec_channels", tuple(int(c) for c in self.dec_channels))
        if self.depth < 1:
            raise ValidationError(f"net.depth must be >= 1, got {self.depth}")
        if len(self.enc_channels) != self.depth:
            raise ValidationError(
                f"net.enc_channels has {len(self.enc_channels)} entries, depth is {self.depth}"
            )
        if len(self.decoder_channels) != self.depth:
            raise ValidationError(
                f"net.dec_channels has {len(self.decoder_channels)} entries, depth is {self.depth}"
            )
        for name in ("enc_kernel", "dec_kernel", "skip_kernel"):
            if getattr(self, name) not in (1, 2, 3, 4):
                raise ValidationError(f"net.{name} must be in 1..4, got {getattr(self, name)}")
        if self.kernel_profile not in ("default", "paper"):
            raise ValidationError(f"net.kernel_profile must be default or paper, got {self.kernel_profile!r}")
        if self.skip_source not in ("input", "encoder"):
            raise ValidationError(f"net.skip_source must be input or encoder, got {self.skip_source!r}")
        if self.final_activation not in ("sigmoid", "none"):
            raise ValidationError("net.final_activation must be sigmoid or none")
        if self.down_stride < 1:
            raise ValidationError("net.down_stride must be >= 1")
        if self.out_channels != 1:
            raise ValidationError("net.out_channels must be 1")
        if min(self.enc_channels + self.decoder_channels) < 1 or self.skip_channels < 1:
            raise ValidationError("channel counts must be positive")
        if self.input_channels < 1:
            raise ValidationError("net.input_channels must be >= 1")

    @property
    def decoder_channels(self) -> tuple[int, ...]:
        return self.dec_channels if self.dec_channels is not None else self.enc_channels

    def level_kernels(self, level: int) -> tuple[int, int]:
        """(encoder kernel, decoder kernel) at ``level``."""
        if self.kernel_profile == "paper":
            k = PAPER_KERNELS[level % len(PAPER_KERNELS)]
            return k, k
        return self.enc_kernel, self.dec_kernel

    def check_input(self, rows: int, cols: int):
        f = self.down_stride ** self.depth
        if rows % f or cols % f:
            raise ValidationError(
                f"input {rows}x{cols} is not divisible by down_stride**depth = {f}"
            )


@dataclass(frozen=True)
class _Conv:
    name: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    norm: bool


@dataclass
class GeneratorNet:
    config: NetConfig
    input_shape: tuple[int, int]
    params: ad.ParamStore
    layers: dict = field(default_factory=dict)

    def __call__(self, z):
        return forward(self, z)


def _layer_plan(config: NetConfig, rows: int, cols: int) -> list[_Conv]:
    s, d = config.down_stride, config.depth
    ch_in = [config.input_channels] + list(config.enc_channels[:-1])
    plan = []
    for i in range(d):
        k, _ = config.level_kernels(i)
        spatial = (rows // s ** (i + 1)) * (cols // s ** (i + 1))
        plan.append(_Conv(f"enc{i}", ch_in[i], config.enc_channels[i], k, s, spatial >= 2))
    # skip/decoder level i works at resolution s**-off(i) of the input
    off = 1 if config.skip_source == "encoder" else 0
    skip_in = list(config.enc_channels) if off else ch_in
    for i in range(d):
        spatial = (rows // s ** (i + off)) * (cols // s ** (i + off))
        plan.append(_Conv(f"skip{i}", skip_in[i], config.skip_channels, config.skip_kernel, 1,
                          spatial >= 2))
    dec = config.decoder_channels
    for i in reversed(range(d)):
        _, k = config.level_kernels(i)
        below = config.enc_channels[-1] if i == d - 1 else dec[i + 1]
        spatial = (rows // s ** (i + off)) * (cols // s ** (i + off))
        plan.append(_Conv(f"dec{i}", below + config.skip_channels, dec[i], k, 1, spatial >= 2))
    plan.append(_Conv("head", dec[0], config.out_channels, 1, 1, False))
    return plan


def count_parameters(config: NetConfig, input_shape: tuple[int, int]) -> int:
    """Total scalar parameters of the network built for ``input_shape``."""
    total = 0
    for layer in _layer_plan(config, *input_shape):
        total += layer.out_ch * layer.in_ch * layer.kernel ** 2 + layer.out_ch
        if layer.norm:
            total += 2 * layer.out_ch
    return total


def build(config: NetConfig, input_shape: tuple[int, int], seed: int) -> GeneratorNet:
    """Allocate and initialize a generator for ``input_shape`` = (rows, cols).

    Conv weights and biases are uniform in +-sqrt(1/fan_in); batch-norm
    scale starts at 1 and shift at 0.
    """
    rows, cols = input_shape
    config.check_input(rows, cols)
    rng = np.random.default_rng(seed)
    params = ad.ParamStore()
    layers = {}
    for layer in _layer_plan(config, rows, cols):
        fan_in = layer.in_ch * layer.kernel ** 2
        shape = (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
        params.add(f"{layer.name}.w", ad.uniform_init(rng, shape, fan_in))
        params.add(f"{layer.name}.b", ad.uniform_init(rng, (layer.out_ch,), fan_in))
        if layer.norm:
            params.add(f"{layer.name}.bn_g", np.ones(layer.out_ch))
            params.add(f"{layer.name}.bn_b", np.zeros(layer.out_ch))
        layers[layer.name] = layer
    return GeneratorNet(config, (rows, cols), params, layers)


def _block(net: GeneratorNet, name: str, x: ad.Tensor) -> ad.Tensor:
    layer = net.layers[name]
    p = net.params
    y = ad.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=layer.stride,
                  padding=ad.same_padding(layer.kernel))
    if layer.norm:
        y = ad.batch_norm(y, p[f"{name}.bn_g"], p[f"{name}.bn_b"], eps=BN_EPS)
    return ad.leaky_relu(y, net.config.leaky_slope)


def forward(net: GeneratorNet, z) -> ad.Tensor:
    """Run the generator on a prior input; returns a (1, 1, M, N) tensor."""
    x = z.tensor if isinstance(z, PriorInput) else z
    if not isinstance(x, ad.Tensor):
        x = ad.Tensor(x)
    cfg = net.config
    expected = (cfg.input_channels, *net.input_shape)
    if x.data.ndim != 4 or x.shape[1:] != expected:
        raise ValidationError(f"generator input shape {x.shape} does not match (B, {expected})")

    feats = [x]
    for i in range(cfg.depth):
        feats.append(_block(net, f"enc{i}", feats[-1]))
    u = feats[-1]
    if cfg.skip_source == "encoder":
        for i in reversed(range(cfg.depth)):
            u = ad.concat_channels(u, _block(net, f"skip{i}", feats[i + 1]))
            u = _block(net, f"dec{i}", u)
            u = ad.upsample_nearest(u, cfg.down_stride)
    else:
        for i in reversed(range(cfg.depth)):
            u = ad.upsample_nearest(u, cfg.down_stride)
            u = ad.concat_channels(u, _block(net, f"skip{i}", feats[i]))
            u = _block(net, f"dec{i}", u)
    p = net.params
    y = ad.conv2d(u, p["head.w"], p["head.b"])
    if cfg.final_activation == "sigmoid":
        y = ad.sigmoid(y)
    return y


# -- prior input -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PriorInput:
    tensor: ad.Tensor
    mode: str


def _prior_rng(seed: int) -> np.random.Generator:
    # stream independent of the weight-init stream drawn from the same seed
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])


def make_prior_input(mode: str, sparse: ExposureGrid | None = None,
                     mask: ObservationMask | None = None, seed: int | None = None,
                     channels: int = 1, mask_channel: bool = False) -> PriorInput:
    """Network input for either prior.

    GLIP stacks the max-normalized sparse raster and (optionally) the mask;
    GRIP draws ``channels`` planes of uniform(0, 0.1) noise.
    """
    mode = mode.lower()
    if mode == GLIP:
        if sparse is None or mask is None:
            raise ValidationError("GLIP prior needs the sparse raster and its mask")
        if mask.count == 0:
            raise ValidationError("GLIP prior needs at least one observed cell")
        m = mask.bits.astype(np.float64)
        s = sparse.values * m
        top = s.max()
        planes = [s / top if top > 0 else s]
        if mask_channel:
            planes.append(m)
        return PriorInput(ad.Tensor(np.stack(planes)[None]), GLIP)
    if mode == GRIP:
        if seed is None:
            raise ValidationError("GRIP prior needs a seed")
        if sparse is not None:
            shape = sparse.dims.shape
        elif mask is not None:
            shape = mask.dims.shape
        else:
            raise ValidationError("GRIP prior needs grid dims (pass sparse or mask)")
        noise = _prior_rng(seed).uniform(0.0, GRIP_SCALE, size=(1, channels, *shape))
        return PriorInput(ad.Tensor(noise), GRIP)
    raise ValidationError(f"unknown prior mode {mode!r}; expected one of {PRIOR_MODES}")


def prior_channels(mode: str, config: NetConfig, mask_channel: bool = False) -> int:
    if mode.lower() == GLIP:
        return 2 if mask_channel else 1
    return config.input_channels


def with_input_channels(config: NetConfig, channels: int) -> NetConfig:
    return config if config.input_channels == channels else replace(config, input_channels=channels)
