"""The SHINE network and its checkpoint format.

Layout, for ``W = block_width``::

    meg (C) -> Linear(C, 2*d_init) -> LeakyReLU -> Linear(2*d_init, d_init)   = init
    block 1 input:  init                                  (d_init channels)
    block i input:  concat(init, context_{i-1}, attn_{i-1}) (d_init + 2W)
    block:  CNN stack -> per-step linear -> output context layer -> self-attention
    head:   concat(init, context_n, attn_n) -> Conv1d(k=3) -> LeakyReLU
            -> BiLSTM -> per-step linear (no bias, no activation)

Inside the CNN stack, layer ``j < 5`` computes ``s = Sconv(x)`` and
``x = Tconv(concat(stack_input, s))``; layer 5 is a plain temporal
convolution. Sconv is pointwise, Tconv is depthwise (groups == channels).
Each is followed by LLP: layer norm over channels, LeakyReLU(0.01), and the
zero padding consumed by the next convolution (every convolution here pads
"same", which is the same arithmetic).
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .exceptions import ConfigParse, CorruptFile, InvalidConfig, SequenceTooShort, ShapeMismatch

LEAKY_SLOPE = 0.01
CNN_STACK_LAYERS = 5
CHECKPOINT_MAGIC = b"SHINECKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 306
    d_init: int = 64
    n_blocks: int = 6
    block_width: int = 64
    cnn_stack_layers: int = CNN_STACK_LAYERS
    sconv_kernel: int = 1
    tconv_kernel: int = 3
    stack_conv_kernel: int = 3
    context_kernel: int = 9
    attn_heads: int = 1
    head_kernel: int = 3
    lstm_hidden: int = 64
    out_channels: int = 1
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise InvalidConfig(f"{f.name} must be an integer, got {v!r}")
            if f.name != "seed" and v <= 0:
                raise InvalidConfig(f"{f.name} must be positive, got {v}")
        if self.cnn_stack_layers != CNN_STACK_LAYERS:
            raise InvalidConfig("the CNN stack has exactly 5 convolutional layers")
        if self.out_channels not in (1, 12):
            raise InvalidConfig("out_channels must be 1 (standard) or 12 (extended)")
        if self.sconv_kernel != 1:
            raise InvalidConfig("Sconv is pointwise; sconv_kernel must be 1")
        for name in ("tconv_kernel", "stack_conv_kernel", "context_kernel", "head_kernel"):
            if getattr(self, name) % 2 == 0:
                raise InvalidConfig(f"{name} must be odd for symmetric padding")
        if self.block_width % self.attn_heads:
            raise InvalidConfig("block_width must be divisible by attn_heads")

    @property
    def init_hidden(self) -> int:
        return 2 * self.d_init

    def block_in_channels(self, index: int) -> int:
        """Input width of block ``index`` (0-based)."""
        return self.d_init if index == 0 else self.d_init + 2 * self.block_width

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigParse(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class ChannelLayerNorm(nn.LayerNorm):
    """Layer norm over channels of a ``(B, C, T)`` tensor."""

    def forward(self, x):
        return super().forward(x.transpose(1, 2)).transpose(1, 2)


class LLP(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.norm = ChannelLayerNorm(channels)

    def forward(self, x):
        return F.leaky_relu(self.norm(x), LEAKY_SLOPE)


def _same_conv(c_in, c_out, k, groups=1):
    return nn.Conv1d(c_in, c_out, k, padding=k // 2, groups=groups)


class StackLayer(nn.Module):
    """One Sconv + Tconv layer of the CNN stack."""

    def __init__(self, x_channels, stack_in, width, tconv_kernel):
        super().__init__()
        self.sconv = nn.Conv1d(x_channels, width, 1)
        self.sconv_llp = LLP(width)
        t_ch = stack_in + width
        self.tconv = _same_conv(t_ch, t_ch, tconv_kernel, groups=t_ch)
        self.tconv_llp = LLP(t_ch)

    def forward(self, x, stack_input):
        s = self.sconv_llp(self.sconv(x))
        return self.tconv_llp(self.tconv(sconv_concat(stack_input, s)))


def sconv_concat(stack_input, s):
    # The Sconv output is joined with the CNN-stack input (not the block's
    # raw input). Swap this function to ablate the other reading.
    return torch.cat([stack_input, s], dim=1)


class CNNStack(nn.Module):
    def __init__(self, in_channels, width, tconv_kernel, conv_kernel):
        super().__init__()
        t_ch = in_channels + width
        self.layers = nn.ModuleList(
            StackLayer(in_channels if j == 0 else t_ch, in_channels, width, tconv_kernel)
            for j in range(CNN_STACK_LAYERS - 1)
        )
        self.conv = _same_conv(t_ch, width, conv_kernel)
        self.conv_llp = LLP(width)

    def forward(self, x):
        stack_input = x
        for layer in self.layers:
            x = layer(x, stack_input)
        return self.conv_llp(self.conv(x))


class SelfAttention(nn.Module):
    """Scaled dot-product attention across time steps; no positional code."""

    def __init__(self, width, heads):
        super().__init__()
        self.heads = heads
        self.query = nn.Linear(width, width)
        self.key = nn.Linear(width, width)
        self.value = nn.Linear(width, width)

    def forward(self, x):
        b, c, t = x.shape
        h = x.transpose(1, 2)

        def split(z):
            return z.view(b, t, self.heads, c // self.heads).transpose(1, 2)

        out = F.scaled_dot_product_attention(split(self.query(h)), split(self.key(h)), split(self.value(h)))
        return out.transpose(1, 2).reshape(b, t, c).transpose(1, 2)


class ShineBlock(nn.Module):
    def __init__(self, in_channels, cfg: ModelConfig):
        super().__init__()
        w = cfg.block_width
        self.in_channels = in_channels
        self.cnn_stack = CNNStack(in_channels, w, cfg.tconv_kernel, cfg.stack_conv_kernel)
        self.linear = nn.Linear(w, w)
        self.context_pad = cfg.context_kernel // 2
        self.context_conv = nn.Conv1d(w, w, cfg.context_kernel)
        self.context_norm = ChannelLayerNorm(w)
        self.attention = SelfAttention(w, cfg.attn_heads)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"block expects {self.in_channels} channels, got {x.shape[1]}")
        h = self.cnn_stack(x)
        h = self.linear(h.transpose(1, 2)).transpose(1, 2)
        h = F.pad(h, (self.context_pad, self.context_pad))
        context = self.context_norm(F.leaky_relu(self.context_conv(h), LEAKY_SLOPE))
        return context, self.attention(context)


class ShineModel(nn.Module):
    """SHINE sequence-to-sequence decoder: ``(B, C, T) -> (B, K, T)``."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = cfg = config
        self.init_proj = nn.Sequential(
            nn.Linear(cfg.in_channels, cfg.init_hidden),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Linear(cfg.init_hidden, cfg.d_init),
        )
        self.blocks = nn.ModuleList(ShineBlock(cfg.block_in_channels(i), cfg) for i in range(cfg.n_blocks))
        head_in = cfg.d_init + 2 * cfg.block_width
        self.head_conv = _same_conv(head_in, cfg.block_width, cfg.head_kernel)
        self.lstm = nn.LSTM(cfg.block_width, cfg.lstm_hidden, batch_first=True, bidirectional=True)
        self.out = nn.Linear(2 * cfg.lstm_hidden, cfg.out_channels, bias=False)
        self._check_wiring()
        reset_parameters(self, cfg.seed)

    def _check_wiring(self):
        cfg = self.config
        for i, block in enumerate(self.blocks):
            expected = cfg.d_init if i == 0 else cfg.d_init + 2 * cfg.block_width
            assert block.in_channels == expected, (i, block.in_channels, expected)

    def forward(self, meg: torch.Tensor) -> torch.Tensor:
        squeeze = meg.dim() == 2
        if squeeze:
            meg = meg.unsqueeze(0)
        if meg.dim() != 3 or meg.shape[1] != self.config.in_channels:
            raise ShapeMismatch(f"expected (B, {self.config.in_channels}, T), got {tuple(meg.shape)}")
        if meg.shape[-1] < self.config.context_kernel:
            raise SequenceTooShort(f"T={meg.shape[-1]} < context_kernel={self.config.context_kernel}")
        init = self.init_proj(meg.transpose(1, 2)).transpose(1, 2)
        x = init
        for block in self.blocks:
            context, attn = block(x)
            x = torch.cat([init, context, attn], dim=1)
        h = F.leaky_relu(self.head_conv(x), LEAKY_SLOPE)
        h, _ = self.lstm(h.transpose(1, 2))
        y = self.out(h).transpose(1, 2)
        return y[0] if squeeze else y


def reset_parameters(model: nn.Module, seed: int) -> None:
    """Uniform fan-in init for weights, zeros for biases, ones for norm gains.

    Parameters are visited in name order from one seeded generator so the
    result depends only on the config.
    """
    gen = torch.Generator().manual_seed(int(seed))
    norm_names = {n for n, m in model.named_modules() if isinstance(m, nn.LayerNorm)}
    with torch.no_grad():
        for name, p in sorted(model.named_parameters(), key=lambda kv: kv[0]):
            owner, _, leaf = name.rpartition(".")
            if owner in norm_names:
                p.fill_(1.0 if leaf == "weight" else 0.0)
            elif "bias" in leaf:
                p.zero_()
            else:
                fan_in = p[0].numel() if p.dim() > 1 else p.numel()
                bound = 1.0 / math.sqrt(fan_in)
                p.copy_(torch.rand(p.shape, generator=gen) * (2 * bound) - bound)


def init_model(cfg: ModelConfig) -> ShineModel:
    if not isinstance(cfg, ModelConfig):
        raise InvalidConfig("init_model expects a ModelConfig")
    return ShineModel(cfg)


def forward(model: ShineModel, meg) -> np.ndarray:
    """Inference-mode forward pass on a single ``C x T`` array."""
    x = torch.as_tensor(np.asarray(meg, dtype=np.float32))
    if x.dim() != 2:
        raise ShapeMismatch("forward expects a C x T matrix")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(x).numpy()
    finally:
        model.train(was_training)


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def depthwise_param_count(channels: int, kernel: int, bias: bool = True) -> int:
    return channels * kernel + (channels if bias else 0)


def parameter_digest(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().astype("<f4").tobytes())
    return h.hexdigest()


# -- checkpoints ----------------------------------------------------------
#
# Layout: magic, u32 version, u64 header length, JSON header, then raw
# little-endian float32 tensors in header order. The header records config,
# extras, and per-tensor name/shape/offset.


def save_checkpoint(model: ShineModel, path, extra: dict | None = None) -> None:
    state = model.state_dict()
    names = sorted(state)
    blobs, entries, offset = [], [], 0
    for name in names:
        arr = state[name].detach().cpu().numpy().astype("<f4", copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": "shine-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "extra": extra or {},
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for raw in blobs:
        buf.write(raw)
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint_header(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CorruptFile(f"{path}: not a SHINE checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    try:
        version, hlen = struct.unpack_from("<IQ", data, pos)
    except struct.error as exc:
        raise CorruptFile(f"{path}: truncated header") from exc
    if version != CHECKPOINT_VERSION:
        raise CorruptFile(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    try:
        header = json.loads(data[pos:pos + hlen])
    except ValueError as exc:
        raise CorruptFile(f"{path}: unreadable header") from exc
    return header, data[pos + hlen:]


def load_checkpoint(path) -> tuple[ShineModel, dict]:
    header, payload = read_checkpoint_header(path)
    model = ShineModel(ModelConfig.from_dict(header["config"]))
    state = {}
    for e in header["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise CorruptFile(f"{path}: tensor {e['name']} truncated")
        arr = np.frombuffer(payload[e["offset"]:end], dtype="<f4").reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.copy())
    if set(state) != set(model.state_dict()):
        raise CorruptFile(f"{path}: tensor names do not match the config")
    model.load_state_dict(state)
    model.eval()
    return model, header.get("extra", {})
