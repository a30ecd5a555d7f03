"""Human-driven interaction control for the object branch.

A trainable copy of the object predictor's blocks runs alongside the
original. Frozen human-branch frame features are injected into each copied
block's input through zero-initialized linears, and each copied block's
output is folded back into the object stream through another
zero-initialized linear, so the whole module is an exact no-op until it
is trained.
"""

import copy

import torch
import torch.nn as nn

from .backbone import ZeroLinear
from .errors import ConfigError, ShapeMismatch
from .human_branch import HumanBranch
from .object_branch import ObjectBranch


class Him(nn.Module):
    def __init__(self, blocks, width, fusion="per_layer"):
        super().__init__()
        if fusion not in ("per_layer", "final"):
            raise ConfigError(f"unknown fusion mode '{fusion}'")
        self.fusion = fusion
        self.blocks = blocks
        self.in_connectors = nn.ModuleList(
            ZeroLinear(width, width) for _ in range(len(blocks)))
        self.out_connectors = nn.ModuleList(
            ZeroLinear(width, width) for _ in range(len(blocks)))


def init_him(object_branch: ObjectBranch, fusion="per_layer") -> Him:
    """Clone the trained object predictor blocks and attach zero connectors.

    The clones are deep copies: training them never touches the source
    branch.
    """
    blocks = nn.ModuleList(copy.deepcopy(b) for b in object_branch.blocks)
    return Him(blocks, object_branch.width, fusion=fusion)


def human_features(human_branch: HumanBranch, noised, t, context):
    """Final-decoder-layer frame features of the human branch, used as the
    control signal. The branch itself is left untouched; freezing is the
    training loop's responsibility."""
    _, _, hidden = human_branch(noised, t, context)
    return hidden


def predict_with_him(object_branch: ObjectBranch, him: Him, o_t, t, history_ctx,
                     contact_hist=None, contact_mask=None, human_feats=None):
    """Object prediction with the control stream active.

    Layer by layer: the copied block consumes the control stream plus the
    connected human features; its output, through the zero-initialized
    output connector, is added to the object stream (every layer, or only
    after the last one in "final" fusion mode).
    """
    if human_feats is None:
        raise ShapeMismatch("human_feats is required")
    squeeze = o_t.dim() == 2
    if squeeze:
        o_t = o_t[None]
        history_ctx = history_ctx[None] if history_ctx.dim() == 2 else history_ctx
        human_feats = human_feats[None] if human_feats.dim() == 2 else human_feats
        if contact_hist is not None and contact_hist.dim() == 4:
            contact_hist, contact_mask = contact_hist[None], contact_mask[None]
    if human_feats.shape[-1] != object_branch.width:
        raise ShapeMismatch(
            f"human features width {human_feats.shape[-1]} vs object width "
            f"{object_branch.width}")
    contact_ctx = None
    if object_branch.use_contacts:
        if object_branch.aggregate_per_layer:
            contact_ctx = [object_branch.aggregate(contact_hist, contact_mask, i)
                           for i in range(len(object_branch.blocks))]
        else:
            contact_ctx = object_branch.aggregate(contact_hist, contact_mask)
    h = object_branch.embed_input(o_t, t)
    hc = h
    last = len(object_branch.blocks) - 1
    for i, block in enumerate(object_branch.blocks):
        contexts = object_branch.block_contexts(i, history_ctx, contact_ctx)
        hc = him.blocks[i](hc + him.in_connectors[i](human_feats), contexts)
        h = block(h, contexts)
        if him.fusion == "per_layer" or i == last:
            h = h + him.out_connectors[i](hc)
    out = object_branch.head(object_branch.out_norm(h))
    return out[0] if squeeze else out
