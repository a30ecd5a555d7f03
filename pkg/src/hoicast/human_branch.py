"""Contact-aware human dynamics branch.

The condition encoder sees the observed history (flattened poses plus
contact subsets and their mask); the predictor denoises the concatenated
[motion, contact] channels of the full window back to their clean values.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import (BlockConfig, DecoderBlock, EncoderBlock, TimestepEmbed,
                       positional_encoding)
from .diffusion import NoiseSchedule, q_sample_batch
from .errors import ShapeMismatch


@dataclass
class HumanConditions:
    """Observed history: motion (T_p, dim_h), contacts (T_p, N, k, 3), mask (T_p, N)."""

    history_motion: torch.Tensor
    history_contacts: torch.Tensor
    history_mask: torch.Tensor


@dataclass
class HumanDenoiseInput:
    """Noised [motion, contact] channels (T, dim_h + dim_c) at diffusion step t."""

    noised: torch.Tensor
    t: int


class HumanBranch(nn.Module):
    def __init__(self, dim_h, dim_c, n_groups, encoder_cfg: BlockConfig,
                 decoder_cfg: BlockConfig, max_steps):
        super().__init__()
        self.dim_h = dim_h
        self.dim_c = dim_c
        self.n_groups = n_groups
        width = decoder_cfg.width
        self.width = width
        cond_in = dim_h + dim_c + (n_groups if dim_c else 0)
        self.cond_embed = nn.Linear(cond_in, width)
        self.encoder = nn.ModuleList(
            EncoderBlock(width, encoder_cfg.heads) for _ in range(encoder_cfg.layers))
        self.encoder_norm = nn.LayerNorm(width)
        self.input_embed = nn.Linear(dim_h + dim_c, width)
        self.t_embed = TimestepEmbed(width, max_steps)
        self.blocks = nn.ModuleList(
            DecoderBlock(width, decoder_cfg.heads, n_contexts=1)
            for _ in range(decoder_cfg.layers))
        self.out_norm = nn.LayerNorm(width)
        self.head = nn.Linear(width, dim_h + dim_c)

    def _cond_features(self, cond: HumanConditions):
        motion = cond.history_motion
        squeeze = motion.dim() == 2
        if squeeze:
            motion = motion[None]
        feats = [motion]
        if self.dim_c:
            contacts = cond.history_contacts
            mask = cond.history_mask
            if squeeze:
                contacts, mask = contacts[None], mask[None]
            b, tp = motion.shape[:2]
            feats.append(contacts.reshape(b, tp, -1))
            feats.append(mask.to(motion.dtype))
        return torch.cat(feats, dim=-1), squeeze

    def encode_conditions(self, cond: HumanConditions) -> torch.Tensor:
        """History frames -> (B, T_p, width) context sequence."""
        x, squeeze = self._cond_features(cond)
        h = self.cond_embed(x)
        h = h + positional_encoding(h.shape[1], self.width, h.dtype)
        for block in self.encoder:
            h = block(h)
        h = self.encoder_norm(h)
        return h[0] if squeeze else h

    def forward(self, noised, t, context):
        """Denoise (B, T, dim_h + dim_c) -> (motion, contact, hidden).

        hidden is the final decoder-layer frame features (B, T, width),
        exposed as the conditional-control signal for the object side.
        """
        squeeze = noised.dim() == 2
        if squeeze:
            noised = noised[None]
            context = context[None] if context.dim() == 2 else context
        if noised.shape[-1] != self.dim_h + self.dim_c:
            raise ShapeMismatch(
                f"expected channel dim {self.dim_h + self.dim_c}, got {noised.shape[-1]}")
        h = self.input_embed(noised)
        h = h + positional_encoding(h.shape[1], self.width, h.dtype)
        t_vec = torch.as_tensor(t).reshape(-1)
        h = h + self.t_embed(t_vec).to(h.dtype).unsqueeze(1)
        for block in self.blocks:
            h = block(h, (context,))
        hidden = h
        out = self.head(self.out_norm(h))
        motion, contact = out[..., :self.dim_h], out[..., self.dim_h:]
        if squeeze:
            return motion[0], contact[0], hidden[0]
        return motion, contact, hidden


def contact_channel_weights(mask, subset_size, dtype):
    """Expand a (B, T, N) group mask to per-channel weights (B, T, N*k*3)."""
    w = mask.to(dtype)[..., None].repeat(1, 1, 1, subset_size * 3)
    return w.reshape(mask.shape[0], mask.shape[1], -1)


def loss_human(branch: HumanBranch, batch, t, sched: NoiseSchedule, eps=None,
               generator=None):
    """Masked reconstruction loss of the clean [motion, contact] vector.

    batch supplies motion (B, T, dim_h), contacts (B, T, N, k, 3),
    mask (B, T, N), and precomputed history context. Contact channels whose
    group mask is zero never enter the mean.
    """
    motion = batch["human_motion"]
    b, t_total = motion.shape[:2]
    parts = [motion]
    weights = [torch.ones(b, t_total, branch.dim_h, dtype=motion.dtype)]
    if branch.dim_c:
        contacts = batch["contacts"].reshape(b, t_total, -1)
        parts.append(contacts)
        weights.append(contact_channel_weights(
            batch["contact_mask"], batch["contacts"].shape[3], motion.dtype))
    w = torch.cat(weights, dim=-1)
    # Masked contact entries are a zero sentinel by data contract; enforcing
    # it here keeps both the noised input and the target blind to them.
    x0 = torch.cat(parts, dim=-1) * w
    if eps is None:
        eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = q_sample_batch(x0, t, eps, sched)
    pred_motion, pred_contact, _ = branch(x_t, t, batch["human_context"])
    pred = torch.cat([pred_motion, pred_contact], dim=-1) if branch.dim_c else pred_motion
    sq = (pred - x0) ** 2 * w
    return sq.sum() / w.sum()
