"""Shared sequence-network primitives: attention, transformer blocks,
timestep embedding, zero-initialized linear connectors, and checkpoint IO.

Blocks use pre-normalization residuals. All tensors are (B, S, width) or
(S, width); masks are boolean with True = may attend.
"""

import io
import json
import math
import zipfile
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, ConfigError, RangeError, ShapeMismatch


@dataclass(frozen=True)
class BlockConfig:
    layers: int
    width: int = 256
    heads: int = 4

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")


class ZeroLinear(nn.Module):
    """Affine map whose weight and bias start exactly at zero, so the layer
    is a no-op injection point until trained."""

    def __init__(self, in_features, out_features):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))

    def forward(self, x):
        if x.shape[-1] != self.weight.shape[1]:
            raise ShapeMismatch(
                f"input width {x.shape[-1]} vs weight {tuple(self.weight.shape)}")
        return F.linear(x, self.weight, self.bias)


def sinusoid_embedding(t, width, max_period=10000.0):
    """Interleaved (sin, cos) embedding: entry 2i is sin(t w_i), 2i+1 is cos.

    t: int or 1-D tensor. Returns (width,) or (len(t), width).
    """
    if width % 2 != 0:
        raise ConfigError(f"sinusoid width must be even, got {width}")
    scalar = not torch.is_tensor(t) or t.dim() == 0
    tt = torch.as_tensor(t, dtype=torch.float64).reshape(-1, 1)
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(width // 2, dtype=torch.float64)
        / (width // 2))
    args = tt * freqs
    emb = torch.stack([torch.sin(args), torch.cos(args)], dim=-1).reshape(-1, width)
    emb = emb.to(torch.get_default_dtype())
    return emb[0] if scalar else emb


def positional_encoding(length, width, dtype=None):
    """(length, width) sinusoidal frame-position table."""
    table = sinusoid_embedding(torch.arange(length), width)
    return table.to(dtype) if dtype is not None else table


class TimestepEmbed(nn.Module):
    """Sinusoidal timestep features refined by a two-layer projection."""

    def __init__(self, width, max_steps):
        super().__init__()
        self.width = width
        self.max_steps = max_steps
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, t):
        tt = torch.as_tensor(t)
        if tt.min() < 0 or tt.max() >= self.max_steps:
            raise RangeError(f"timestep {t} outside [0, {self.max_steps})")
        emb = sinusoid_embedding(tt, self.width).to(self.fc1.weight.dtype)
        return self.fc2(F.silu(self.fc1(emb)))


def scaled_dot_attention(q, k, v, mask=None):
    """Softmax(q k^T / sqrt(d)) v. Returns (output, weights).

    q: (..., S_q, d); k, v: (..., S_k, d/dv); mask broadcastable to
    (..., S_q, S_k), True where attention is allowed.
    """
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if mask is not None:
        logits = logits.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    return weights @ v, weights


class MultiHeadAttention(nn.Module):
    def __init__(self, width, heads):
        super().__init__()
        if width % heads != 0:
            raise ConfigError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.out_proj = nn.Linear(width, width)

    def forward(self, query, key, value, mask=None):
        squeeze = query.dim() == 2
        if squeeze:
            query, key, value = query[None], key[None], value[None]
            if mask is not None and mask.dim() == 2:
                mask = mask[None]
        if query.shape[-1] != self.width or key.shape[-1] != self.width:
            raise ShapeMismatch(
                f"expected width {self.width}, got {query.shape[-1]}/{key.shape[-1]}")
        if key.shape[-2] != value.shape[-2]:
            raise ShapeMismatch(
                f"key length {key.shape[-2]} vs value length {value.shape[-2]}")
        b, s_q, _ = query.shape
        s_k = key.shape[-2]
        d = self.width // self.heads

        def split(x, proj):
            return proj(x).reshape(b, -1, self.heads, d).transpose(1, 2)

        q = split(query, self.q_proj)
        k = split(key, self.k_proj)
        v = split(value, self.v_proj)
        if mask is not None:
            if mask.shape[-2:] != (s_q, s_k):
                raise ShapeMismatch(
                    f"mask {tuple(mask.shape)} vs attention ({s_q}, {s_k})")
            mask = mask.reshape(b, 1, s_q, s_k) if mask.dim() == 3 else mask
        out, _ = scaled_dot_attention(q, k, v, mask)
        out = out.transpose(1, 2).reshape(b, s_q, self.width)
        out = self.out_proj(out)
        return out[0] if squeeze else out


class FeedForward(nn.Module):
    def __init__(self, width, hidden_ratio=4):
        super().__init__()
        self.fc1 = nn.Linear(width, hidden_ratio * width)
        self.fc2 = nn.Linear(hidden_ratio * width, width)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Self-attention + feed-forward, each pre-normalized with residual."""

    def __init__(self, width, heads):
        super().__init__()
        self.norm_attn = nn.LayerNorm(width)
        self.attn = MultiHeadAttention(width, heads)
        self.norm_ffn = nn.LayerNorm(width)
        self.ffn = FeedForward(width)

    def forward(self, x, mask=None):
        h = self.norm_attn(x)
        x = x + self.attn(h, h, h, mask)
        return x + self.ffn(self.norm_ffn(x))


class DecoderBlock(nn.Module):
    """Self-attention, one cross-attention per context, then feed-forward.

    The self-attention output (residual stream) is the cross-attention
    query; each context supplies key and value.
    """

    def __init__(self, width, heads, n_contexts=1):
        super().__init__()
        self.norm_self = nn.LayerNorm(width)
        self.self_attn = MultiHeadAttention(width, heads)
        self.norm_cross = nn.ModuleList(nn.LayerNorm(width) for _ in range(n_contexts))
        self.cross_attn = nn.ModuleList(
            MultiHeadAttention(width, heads) for _ in range(n_contexts))
        self.norm_ffn = nn.LayerNorm(width)
        self.ffn = FeedForward(width)

    def forward(self, x, contexts):
        if len(contexts) != len(self.cross_attn):
            raise ShapeMismatch(
                f"expected {len(self.cross_attn)} contexts, got {len(contexts)}")
        h = self.norm_self(x)
        x = x + self.self_attn(h, h, h)
        for norm, attn, ctx in zip(self.norm_cross, self.cross_attn, contexts):
            x = x + attn(norm(x), ctx, ctx)
        return x + self.ffn(self.norm_ffn(x))


def init_parameters(module: nn.Module, seed):
    """Deterministic fan-in scaled initialization for every submodule,
    leaving ZeroLinear connectors exactly at zero."""
    gen = torch.Generator().manual_seed(int(seed))
    handled = set()
    for m in module.modules():
        if isinstance(m, ZeroLinear):
            handled.update(id(p) for p in m.parameters(recurse=False))
        elif isinstance(m, nn.Linear):
            bound = 1.0 / math.sqrt(m.weight.shape[1])
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            handled.update(id(p) for p in m.parameters(recurse=False))
        elif isinstance(m, nn.LayerNorm):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
            handled.update(id(p) for p in m.parameters(recurse=False))
    for _, p in module.named_parameters():
        if id(p) not in handled:
            # Free-standing parameter tables (learnable tokens, group embeddings).
            with torch.no_grad():
                p.normal_(0.0, 0.02, generator=gen)
    return module


CHECKPOINT_VERSION = 1


def save_checkpoint(path, state, extra=None):
    """Write parameters as a zip archive: a JSON manifest naming each
    parameter with shape and dtype, plus one raw little-endian float32
    buffer per parameter."""
    manifest = {"format_version": CHECKPOINT_VERSION, "extra": extra or {},
                "params": []}
    buffers = {}
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype != np.float32:
            raise CheckpointError(
                f"parameter '{name}' has dtype {arr.dtype}; checkpoints store float32")
        manifest["params"].append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32"})
        buffers[name] = arr.astype("<f4", copy=False).tobytes()
    def entry(name):
        # fixed timestamp keeps the archive a deterministic function of content
        return zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(entry("manifest.json"), json.dumps(manifest, indent=1))
        for name, blob in buffers.items():
            zf.writestr(entry(f"params/{name}.bin"), blob)


def load_checkpoint(path):
    """Read a checkpoint archive; returns (state dict, extra dict)."""
    try:
        with zipfile.ZipFile(path, "r") as zf:
            try:
                manifest = json.loads(zf.read("manifest.json"))
            except KeyError:
                raise CheckpointError(f"{path}: missing manifest.json") from None
            if manifest.get("format_version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"{path}: unsupported format version {manifest.get('format_version')}")
            state = {}
            for entry in manifest["params"]:
                name, shape = entry["name"], tuple(entry["shape"])
                if entry["dtype"] != "float32":
                    raise CheckpointError(f"{path}: parameter '{name}' is not float32")
                try:
                    blob = zf.read(f"params/{name}.bin")
                except KeyError:
                    raise CheckpointError(f"{path}: missing buffer for '{name}'") from None
                arr = np.frombuffer(blob, dtype="<f4").reshape(shape)
                state[name] = torch.from_numpy(arr.copy())
            return state, manifest.get("extra", {})
    except zipfile.BadZipFile as exc:
        raise CheckpointError(f"{path}: not a checkpoint archive: {exc}") from None
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such file") from None
