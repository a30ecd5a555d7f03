"""Contact-aware object dynamics branch.

The condition encoder sees the object motion history plus a permutation-
invariant shape embedding of the rest-pose cloud. The predictor's blocks
run two cross-attentions: first over the encoded history, then over a
small set of learnable tokens that aggregate the historical contacts.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import (BlockConfig, DecoderBlock, EncoderBlock,
                       MultiHeadAttention, TimestepEmbed, positional_encoding)
from .diffusion import NoiseSchedule, q_sample_batch
from .errors import ShapeMismatch

OBJECT_DIM = 9  # centroid (3) + rotation6d (6)


@dataclass
class ObjectConditions:
    """History motion (T_p, 9) and a width-vector shape embedding."""

    history_motion: torch.Tensor
    shape_embedding: torch.Tensor


class ShapeEmbed(nn.Module):
    """Permutation-invariant cloud embedding: per-point MLP, max-pool, project."""

    def __init__(self, width):
        super().__init__()
        self.point_fc1 = nn.Linear(3, width)
        self.point_fc2 = nn.Linear(width, width)
        self.out = nn.Linear(width, width)

    def forward(self, points):
        if points.shape[-1] != 3:
            raise ShapeMismatch(f"expected (..., M, 3) points, got {tuple(points.shape)}")
        h = self.point_fc2(F.gelu(self.point_fc1(points)))
        pooled = h.max(dim=-2).values
        return self.out(pooled)


class ContactAggregator(nn.Module):
    """Fold historical contacts into Q token vectors.

    Each (frame, group) subset becomes one entry token; entries are
    self-attended together with the learnable tokens and only the token
    rows are returned. Masked entries are excluded from the keys, so an
    all-zero mask leaves the output a function of the tokens alone.
    """

    def __init__(self, n_groups, subset_size, width, heads, n_tokens=8, layers=1):
        super().__init__()
        self.n_groups = n_groups
        self.subset_size = subset_size
        self.width = width
        self.tokens = nn.Parameter(torch.zeros(n_tokens, width))
        self.group_embed = nn.Parameter(torch.zeros(n_groups, width))
        self.entry_embed = nn.Linear(subset_size * 3, width)
        self.blocks = nn.ModuleList(
            EncoderBlock(width, heads) for _ in range(layers))

    def forward(self, contacts, mask):
        """contacts: (B, T_p, N, k, 3); mask: (B, T_p, N) -> (B, Q, width)."""
        squeeze = contacts.dim() == 4
        if squeeze:
            contacts, mask = contacts[None], mask[None]
        b, tp, n, k, _ = contacts.shape
        if (n, k) != (self.n_groups, self.subset_size):
            raise ShapeMismatch(
                f"contacts ({n}, {k}) vs aggregator ({self.n_groups}, {self.subset_size})")
        if mask.shape != (b, tp, n):
            raise ShapeMismatch(f"mask {tuple(mask.shape)} vs contacts ({b}, {tp}, {n})")
        entries = self.entry_embed(contacts.reshape(b, tp, n, k * 3))
        entries = entries + self.group_embed
        entries = entries + positional_encoding(tp, self.width, entries.dtype)[:, None, :]
        entries = entries.reshape(b, tp * n, self.width)
        q = self.tokens.shape[0]
        x = torch.cat([self.tokens.unsqueeze(0).expand(b, -1, -1), entries], dim=1)
        key_ok = torch.cat(
            [torch.ones(b, q, dtype=torch.bool),
             mask.reshape(b, tp * n) > 0], dim=1)
        attn_mask = key_ok[:, None, :].expand(b, x.shape[1], x.shape[1])
        for block in self.blocks:
            x = block(x, attn_mask)
        out = x[:, :q]
        return out[0] if squeeze else out


class ObjectBranch(nn.Module):
    def __init__(self, n_groups, subset_size, encoder_cfg: BlockConfig,
                 decoder_cfg: BlockConfig, max_steps, use_contacts=True,
                 n_tokens=8, aggregator_layers=1, aggregate_per_layer=False):
        super().__init__()
        width = decoder_cfg.width
        self.width = width
        self.use_contacts = use_contacts
        self.aggregate_per_layer = aggregate_per_layer
        self.shape_embed = ShapeEmbed(width)
        self.cond_embed = nn.Linear(OBJECT_DIM, width)
        self.encoder = nn.ModuleList(
            EncoderBlock(width, encoder_cfg.heads) for _ in range(encoder_cfg.layers))
        self.encoder_norm = nn.LayerNorm(width)
        if use_contacts:
            n_agg = decoder_cfg.layers if aggregate_per_layer else 1
            self.aggregators = nn.ModuleList(
                ContactAggregator(n_groups, subset_size, width, decoder_cfg.heads,
                                  n_tokens, aggregator_layers)
                for _ in range(n_agg))
        self.input_embed = nn.Linear(OBJECT_DIM, width)
        self.t_embed = TimestepEmbed(width, max_steps)
        n_contexts = 2 if use_contacts else 1
        self.blocks = nn.ModuleList(
            DecoderBlock(width, decoder_cfg.heads, n_contexts=n_contexts)
            for _ in range(decoder_cfg.layers))
        self.out_norm = nn.LayerNorm(width)
        self.head = nn.Linear(width, OBJECT_DIM)

    def encode_conditions(self, cond: ObjectConditions) -> torch.Tensor:
        """History frames plus one shape token -> (B, T_p + 1, width)."""
        motion = cond.history_motion
        shape_vec = cond.shape_embedding
        squeeze = motion.dim() == 2
        if squeeze:
            motion, shape_vec = motion[None], shape_vec[None]
        h = self.cond_embed(motion)
        h = h + positional_encoding(h.shape[1], self.width, h.dtype)
        h = torch.cat([h, shape_vec.unsqueeze(1)], dim=1)
        for block in self.encoder:
            h = block(h)
        h = self.encoder_norm(h)
        return h[0] if squeeze else h

    def aggregate(self, contacts, mask, layer=0):
        idx = layer if self.aggregate_per_layer else 0
        return self.aggregators[idx](contacts, mask)

    def embed_input(self, o_t, t):
        h = self.input_embed(o_t)
        h = h + positional_encoding(h.shape[1], self.width, h.dtype)
        t_vec = torch.as_tensor(t).reshape(-1)
        return h + self.t_embed(t_vec).to(h.dtype).unsqueeze(1)

    def block_contexts(self, layer, history_ctx, contact_ctx):
        if not self.use_contacts:
            return (history_ctx,)
        ctx = contact_ctx[layer] if self.aggregate_per_layer else contact_ctx
        return (history_ctx, ctx)

    def forward(self, o_t, t, history_ctx, contact_hist=None, contact_mask=None):
        """Denoise (B, T, 9) object motion to its clean prediction."""
        squeeze = o_t.dim() == 2
        if squeeze:
            o_t = o_t[None]
            history_ctx = history_ctx[None] if history_ctx.dim() == 2 else history_ctx
            if contact_hist is not None and contact_hist.dim() == 4:
                contact_hist, contact_mask = contact_hist[None], contact_mask[None]
        if o_t.shape[-1] != OBJECT_DIM:
            raise ShapeMismatch(f"expected channel dim {OBJECT_DIM}, got {o_t.shape[-1]}")
        contact_ctx = None
        if self.use_contacts:
            if contact_hist is None:
                raise ShapeMismatch("contact history required when use_contacts is set")
            if self.aggregate_per_layer:
                contact_ctx = [self.aggregate(contact_hist, contact_mask, i)
                               for i in range(len(self.blocks))]
            else:
                contact_ctx = self.aggregate(contact_hist, contact_mask)
        h = self.embed_input(o_t, t)
        for i, block in enumerate(self.blocks):
            h = block(h, self.block_contexts(i, history_ctx, contact_ctx))
        out = self.head(self.out_norm(h))
        return out[0] if squeeze else out


def loss_object(branch: ObjectBranch, batch, t, sched: NoiseSchedule, eps=None,
                generator=None, forward_fn=None):
    """Mean squared error between the clean object motion and its prediction.

    forward_fn overrides the plain branch forward (used to route the call
    through the interaction-control module in later training stages).
    """
    o0 = batch["object_motion"]
    if eps is None:
        eps = torch.randn(o0.shape, generator=generator, dtype=o0.dtype)
    o_t = q_sample_batch(o0, t, eps, sched)
    if forward_fn is None:
        pred = branch(o_t, t, batch["object_context"],
                      batch.get("history_contacts"), batch.get("history_mask"))
    else:
        pred = forward_fn(o_t, t)
    return ((pred - o0) ** 2).mean()
