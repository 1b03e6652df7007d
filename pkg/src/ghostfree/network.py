"""Dual-input HDR fusion network.

A shared dilated-convolution encoder (context aggregation, dilations 1/2/4)
embeds both exposure stacks; a cross channel attention module (CCAM) lets
the reference features query the non-reference features; three window
attention blocks decode the concatenated features, and a convolutional head
with a sigmoid produces the HDR estimate.

Feature maps are ``(C, H, W)`` float64 arrays. Inside the module everything
runs on :class:`ghostfree.autograd.Tensor` so gradients are available to the
trainer and the gradient checker.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, CorruptHeaderError, DimensionMismatchError, MissingFileError
from .image_io import HdrImage
from .radiometry import InputStack

DILATIONS = (1, 2, 4)
LEAKY_SLOPE = 0.1
LN_EPS = 1e-5
N_BLOCKS = 3
SHIFT_PATTERN = (False, True, False)

PARAMS_MAGIC = b"GFNP"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    feat_channels: int = 64
    window: int = 8
    heads: int = 4
    mlp_ratio: int = 2
    in_channels: int = 7

    def __post_init__(self):
        for name in ("feat_channels", "window", "heads", "mlp_ratio", "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if (2 * self.feat_channels) % self.heads:
            raise ConfigError(
                f"{self.heads} heads do not divide {2 * self.feat_channels} decoder channels"
            )
        if self.window % 2:
            raise ConfigError("window size must be even so the shift is window // 2")

    @property
    def decoder_channels(self) -> int:
        return 2 * self.feat_channels


TINY_CONFIG = NetworkConfig(feat_channels=8, window=4, heads=1, mlp_ratio=2)


def param_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor, in serialization order."""
    c, d = cfg.feat_channels, cfg.decoder_channels
    hidden = cfg.mlp_ratio * d
    shapes: dict[str, tuple[int, ...]] = {}
    cin = cfg.in_channels
    for i in range(len(DILATIONS)):
        shapes[f"encoder.conv{i}.weight"] = (c, cin, 3, 3)
        shapes[f"encoder.conv{i}.bias"] = (c,)
        cin = c
    for name in ("query", "key", "value"):
        shapes[f"ccam.{name}.weight"] = (c, c)
        shapes[f"ccam.{name}.bias"] = (c,)
    for b in range(N_BLOCKS):
        pre = f"decoder.block{b}"
        shapes[f"{pre}.norm1.weight"] = (d,)
        shapes[f"{pre}.norm1.bias"] = (d,)
        shapes[f"{pre}.attn.qkv.weight"] = (d, 3 * d)
        shapes[f"{pre}.attn.qkv.bias"] = (3 * d,)
        shapes[f"{pre}.attn.proj.weight"] = (d, d)
        shapes[f"{pre}.attn.proj.bias"] = (d,)
        shapes[f"{pre}.norm2.weight"] = (d,)
        shapes[f"{pre}.norm2.bias"] = (d,)
        shapes[f"{pre}.mlp.fc1.weight"] = (d, hidden)
        shapes[f"{pre}.mlp.fc1.bias"] = (hidden,)
        shapes[f"{pre}.mlp.fc2.weight"] = (hidden, d)
        shapes[f"{pre}.mlp.fc2.bias"] = (d,)
    shapes["decoder.fuse.weight"] = (c, (N_BLOCKS + 1) * d, 3, 3)
    shapes["decoder.fuse.bias"] = (c,)
    shapes["head.weight"] = (3, c, 3, 3)
    shapes["head.bias"] = (3,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    if name.startswith("ccam."):
        return shape[1]  # (out, in) matrices applied on the left
    return shape[0]  # (in, out) matrices applied on the right


@dataclass
class NetworkParams:
    config: NetworkConfig
    seed: int
    tensors: dict[str, np.ndarray] = field(repr=False)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, self.seed, {k: v.copy() for k, v in self.tensors.items()})

    def as_tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad) for k, v in self.tensors.items()}


def init_params(config: NetworkConfig = NetworkConfig(), seed: int = 0) -> NetworkParams:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases, unit norm scales.

    Values are rounded to float32 so they survive serialization bit-exactly.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            t = np.zeros(shape)
        elif ".norm" in name:
            t = np.ones(shape)
        else:
            std = np.sqrt(2.0 / _fan_in(name, shape))
            t = rng.standard_normal(shape) * std
        tensors[name] = t.astype(np.float32).astype(np.float64)
    return NetworkParams(config, int(seed), tensors)


def save_params(p: NetworkParams, path) -> None:
    """Flat little-endian binary: magic, version, config int32s, seed int64, float32 tensors."""
    cfg = p.config
    header = PARAMS_MAGIC + struct.pack(
        "<6iq",
        PARAMS_VERSION,
        cfg.in_channels,
        cfg.feat_channels,
        cfg.window,
        cfg.heads,
        cfg.mlp_ratio,
        p.seed,
    )
    with Path(path).open("wb") as fh:
        fh.write(header)
        for name in param_shapes(cfg):
            fh.write(np.ascontiguousarray(p.tensors[name], dtype="<f4").tobytes())


def load_params(path) -> NetworkParams:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such parameter file: {path}")
    raw = path.read_bytes()
    head_size = len(PARAMS_MAGIC) + struct.calcsize("<6iq")
    if len(raw) < head_size or raw[:4] != PARAMS_MAGIC:
        raise CorruptHeaderError(f"{path}: not a parameter file")
    version, cin, c, window, heads, mlp, seed = struct.unpack("<6iq", raw[4:head_size])
    if version != PARAMS_VERSION:
        raise CorruptHeaderError(f"{path}: unsupported parameter file version {version}")
    try:
        cfg = NetworkConfig(c, window, heads, mlp, cin)
    except ConfigError as exc:
        raise CorruptHeaderError(f"{path}: {exc}") from None
    shapes = param_shapes(cfg)
    total = sum(int(np.prod(s)) for s in shapes.values())
    if len(raw) != head_size + 4 * total:
        raise CorruptHeaderError(f"{path}: tensor payload size does not match config")
    flat = np.frombuffer(raw, dtype="<f4", offset=head_size).astype(np.float64)
    tensors, pos = {}, 0
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        tensors[name] = flat[pos:pos + n].reshape(shape).copy()
        pos += n
    return NetworkParams(cfg, seed, tensors)


# building blocks on Tensors

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x @ w + b


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor) -> Tensor:
    """Normalize over the last (channel) axis."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / ag.sqrt(var + LN_EPS) * gain + shift


def can_encode_t(x: Tensor, w: dict[str, Tensor]) -> Tensor:
    for i, d in enumerate(DILATIONS):
        x = ag.conv2d(x, w[f"encoder.conv{i}.weight"], w[f"encoder.conv{i}.bias"], dilation=d)
        x = ag.leaky_relu(x, LEAKY_SLOPE)
    return x


def ccam_t(phi1: Tensor, phi2: Tensor, w: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Channel attention with queries from the reference ``phi2``.

    Returns the attended features and the ``C x C`` attention matrix.
    """
    if phi1.shape != phi2.shape:
        raise DimensionMismatchError(f"CCAM inputs differ: {phi1.shape} vs {phi2.shape}")
    c, h, wd = phi1.shape
    f1 = phi1.reshape(c, h * wd)
    f2 = phi2.reshape(c, h * wd)

    def project(name, f):
        return w[f"ccam.{name}.weight"] @ f + w[f"ccam.{name}.bias"].reshape(c, 1)

    q, k, v = project("query", f2), project("key", f1), project("value", f1)
    attn = ag.softmax((q @ k.transpose(1, 0)) * (1.0 / np.sqrt(h * wd)), axis=-1)
    return (attn @ v).reshape(c, h, wd), attn


@functools.lru_cache(maxsize=32)
def shift_mask(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Additive ``(n_windows, 1, N, N)`` mask blocking attention across the roll seam."""
    region = np.zeros((h, w), dtype=np.int64)
    bounds = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    label = 0
    for hs in bounds:
        for ws in bounds:
            region[hs, ws] = label
            label += 1
    win = _partition_np(region[:, :, None], window)[..., 0]
    same = win[:, :, None] == win[:, None, :]
    mask = np.where(same, 0.0, -np.inf)
    mask.setflags(write=False)
    return mask[:, None]


def _partition_np(x: np.ndarray, ws: int) -> np.ndarray:
    h, w, c = x.shape
    x = x.reshape(h // ws, ws, w // ws, ws, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(-1, ws * ws, c)


def window_partition(x: Tensor, ws: int) -> Tensor:
    h, w, c = x.shape
    x = x.reshape(h // ws, ws, w // ws, ws, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(-1, ws * ws, c)


def window_merge(x: Tensor, ws: int, h: int, w: int) -> Tensor:
    c = x.shape[-1]
    x = x.reshape(h // ws, w // ws, ws, ws, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(h, w, c)


def window_attention_t(
    tokens: Tensor, w: dict[str, Tensor], pre: str, cfg: NetworkConfig, shifted: bool
) -> tuple[Tensor, Tensor]:
    """Multi-head self-attention inside non-overlapping windows of ``(H, W, C)`` tokens."""
    h, wd, c = tokens.shape
    ws, heads = cfg.window, cfg.heads
    hd = c // heads
    shift = ws // 2 if shifted else 0
    if shift:
        tokens = ag.roll(tokens, (-shift, -shift), (0, 1))
    win = window_partition(tokens, ws)
    nw, n = win.shape[0], ws * ws
    qkv = linear(win, w[f"{pre}.attn.qkv.weight"], w[f"{pre}.attn.qkv.bias"])
    qkv = qkv.reshape(nw, n, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q @ k.transpose(0, 1, 3, 2)) * (hd ** -0.5)
    if shift:
        logits = logits + shift_mask(h, wd, ws, shift)
    attn = ag.softmax(logits, axis=-1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(nw, n, c)
    out = linear(out, w[f"{pre}.attn.proj.weight"], w[f"{pre}.attn.proj.bias"])
    out = window_merge(out, ws, h, wd)
    if shift:
        out = ag.roll(out, (shift, shift), (0, 1))
    return out, attn


def swin_block_t(
    x: Tensor, w: dict[str, Tensor], index: int, cfg: NetworkConfig, shifted: bool
) -> tuple[Tensor, Tensor]:
    c, h, wd = x.shape
    if h % cfg.window or wd % cfg.window:
        raise DimensionMismatchError(
            f"feature size {h}x{wd} is not a multiple of the window {cfg.window}"
        )
    pre = f"decoder.block{index}"
    tokens = x.transpose(1, 2, 0)
    y = layer_norm(tokens, w[f"{pre}.norm1.weight"], w[f"{pre}.norm1.bias"])
    y, attn = window_attention_t(y, w, pre, cfg, shifted)
    tokens = tokens + y
    y = layer_norm(tokens, w[f"{pre}.norm2.weight"], w[f"{pre}.norm2.bias"])
    y = ag.gelu(linear(y, w[f"{pre}.mlp.fc1.weight"], w[f"{pre}.mlp.fc1.bias"]))
    y = linear(y, w[f"{pre}.mlp.fc2.weight"], w[f"{pre}.mlp.fc2.bias"])
    tokens = tokens + y
    return tokens.transpose(2, 0, 1), attn


def decode_t(fused: Tensor, skip: Tensor, w: dict[str, Tensor], cfg: NetworkConfig) -> Tensor:
    if fused.shape != skip.shape or fused.shape[0] != cfg.decoder_channels:
        raise DimensionMismatchError(
            f"decoder expects two {cfg.decoder_channels}-channel maps, got "
            f"{fused.shape} and {skip.shape}"
        )
    depth = []
    y = fused
    for i, shifted in enumerate(SHIFT_PATTERN):
        y, _ = swin_block_t(y, w, i, cfg, shifted)
        depth.append(y)
    z = ag.concat(depth + [skip], axis=0)
    z = ag.leaky_relu(ag.conv2d(z, w["decoder.fuse.weight"], w["decoder.fuse.bias"]), LEAKY_SLOPE)
    z = ag.conv2d(z, w["head.weight"], w["head.bias"])
    return ag.sigmoid(z)


def forward_t(x1: Tensor, x2: Tensor, w: dict[str, Tensor], cfg: NetworkConfig) -> Tensor:
    """Network output ``(3, H, W)``; ``x2`` is the reference exposure."""
    if x1.shape != x2.shape:
        raise DimensionMismatchError(f"input stacks differ: {x1.shape} vs {x2.shape}")
    if x1.shape[0] != cfg.in_channels:
        raise DimensionMismatchError(f"expected {cfg.in_channels} input channels, got {x1.shape[0]}")
    _, h, wd = x1.shape
    if h % cfg.window or wd % cfg.window:
        raise DimensionMismatchError(f"input size {h}x{wd} is not a multiple of {cfg.window}")
    phi1 = can_encode_t(x1, w)
    phi2 = can_encode_t(x2, w)
    phi1c, _ = ccam_t(phi1, phi2, w)
    fused = ag.concat([phi2, phi1c], axis=0)
    return decode_t(fused, fused, w, cfg)


# numpy-facing wrappers

def _data(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def conv2d(x, kernel, bias=None, dilation: int = 1) -> np.ndarray:
    """'same' 2-D cross-correlation of a ``(C, H, W)`` map, zero padded, stride 1."""
    x = _data(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[1] != x.shape[0]:
        raise DimensionMismatchError(
            f"kernel {kernel.shape} does not match {x.shape[0]} input channels"
        )
    b = None if bias is None else Tensor(bias)
    return ag.conv2d(Tensor(x), Tensor(kernel), b, dilation).data


def can_encode(x: InputStack, p: NetworkParams) -> np.ndarray:
    return can_encode_t(Tensor(_data(x)), p.as_tensors()).data


def ccam(phi1, phi2, p: NetworkParams, return_attention: bool = False):
    out, attn = ccam_t(Tensor(_data(phi1)), Tensor(_data(phi2)), p.as_tensors())
    return (out.data, attn.data) if return_attention else out.data


def swin_block(x, p: NetworkParams, index: int = 0, shifted: bool = False,
               return_attention: bool = False):
    out, attn = swin_block_t(Tensor(_data(x)), p.as_tensors(), index, p.config, shifted)
    return (out.data, attn.data) if return_attention else out.data


def decode(fused, skip, p: NetworkParams) -> HdrImage:
    out = decode_t(Tensor(_data(fused)), Tensor(_data(skip)), p.as_tensors(), p.config)
    return HdrImage(out.data.transpose(1, 2, 0))


def forward(x1: InputStack, x2: InputStack, p: NetworkParams) -> HdrImage:
    """Fuse a non-reference stack ``x1`` with the reference stack ``x2``."""
    out = forward_t(Tensor(_data(x1)), Tensor(_data(x2)), p.as_tensors(), p.config)
    return HdrImage(out.data.transpose(1, 2, 0))
