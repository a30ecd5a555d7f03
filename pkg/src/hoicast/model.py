"""Dual-branch model assembly: tensor preparation, condition encoding,
joint sampling of human and object chains, and model-level checkpoint IO.

Pose flattening order is joints-major, position before rotation: the
per-frame human vector is [p_0, r6_0, p_1, r6_1, ...]; the object vector
is [centroid, rotation6d].
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .backbone import BlockConfig, init_parameters, load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict, config_to_dict
from .diffusion import NoiseSchedule, make_schedule, q_sample, sample_loop
from .errors import CheckpointError, ShapeMismatch
from .geometry import RigidTransform, contact_from_object, rot6d_to_matrix
from .him import init_him, predict_with_him
from .hoi_data import HoiSequence
from .human_branch import HumanBranch, HumanConditions
from .object_branch import OBJECT_DIM, ObjectBranch, ObjectConditions


class InteractionModel(nn.Module):
    """Human branch + object branch (+ optional control module), or a single
    joint branch over concatenated channels when decoupling is disabled."""

    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        data, model = config.data, config.model
        self.dim_h = data.joints * 9
        self.use_contacts = model.decoupled and model.use_contacts
        self.dim_c = data.groups * data.subset_size * 3 if self.use_contacts else 0
        self.decoupled = model.decoupled
        enc_cfg = BlockConfig(model.encoder_layers, model.width, model.heads)
        dec_cfg = BlockConfig(model.decoder_layers, model.width, model.heads)
        human_dim = self.dim_h if model.decoupled else self.dim_h + OBJECT_DIM
        self.human = HumanBranch(human_dim, self.dim_c, data.groups, enc_cfg,
                                 dec_cfg, config.diffusion.steps)
        self.object = None
        if model.decoupled:
            self.object = ObjectBranch(
                data.groups, data.subset_size, enc_cfg, dec_cfg,
                config.diffusion.steps, use_contacts=self.use_contacts,
                n_tokens=model.contact_tokens,
                aggregator_layers=model.aggregator_layers,
                aggregate_per_layer=model.aggregate_per_layer)
        self.him = None

    def attach_him(self):
        if self.object is None:
            raise ShapeMismatch("cannot attach a control module without an object branch")
        self.him = init_him(self.object, fusion=self.config.model.him_fusion)
        return self.him

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.config.diffusion.steps, self.config.diffusion.kind)

    # -- batch assembly ----------------------------------------------------

    def prepare_batch(self, sequences, dtype=torch.float32):
        """Stack sequences into the tensor dict consumed by the losses."""
        if isinstance(sequences, HoiSequence):
            sequences = [sequences]
        tp = sequences[0].past_len
        human, obj, contacts, mask, rest_c, rest_cloud = [], [], [], [], [], []
        for seq in sequences:
            pos = seq.human_positions()
            rot = seq.human_rot6d()
            human.append(np.concatenate([pos, rot], axis=-1).reshape(seq.total_len, -1))
            obj.append(np.concatenate(
                [seq.object_centroids(), seq.object_rot6d()], axis=-1))
            contacts.append(seq.contact_subsets())
            mask.append(seq.contact_mask())
            rest_c.append(seq.rest_contacts)
            rest_cloud.append(seq.rest_cloud)
        as_t = lambda arrs: torch.as_tensor(np.stack(arrs), dtype=dtype)
        human_t, obj_t = as_t(human), as_t(obj)
        if not self.decoupled:
            human_t = torch.cat([human_t, obj_t], dim=-1)
        batch = {
            "human_motion": human_t,
            "object_motion": obj_t,
            "contacts": as_t(contacts),
            "contact_mask": as_t(mask),
            "rest_contacts": as_t(rest_c),
            "rest_cloud": as_t(rest_cloud),
            "past_len": tp,
        }
        batch["history_human_motion"] = batch["human_motion"][:, :tp]
        batch["history_object_motion"] = batch["object_motion"][:, :tp]
        batch["history_contacts"] = batch["contacts"][:, :tp]
        batch["history_mask"] = batch["contact_mask"][:, :tp]
        return batch

    def index_batch(self, batch, idx):
        out = {k: (v[idx] if torch.is_tensor(v) else v) for k, v in batch.items()}
        return out

    def encode_contexts(self, batch):
        """Compute condition contexts for the current parameters in place."""
        cond = HumanConditions(batch["history_human_motion"],
                               batch["history_contacts"], batch["history_mask"])
        batch["human_context"] = self.human.encode_conditions(cond)
        if self.object is not None:
            shape_vec = self.object.shape_embed(batch["rest_cloud"])
            obj_cond = ObjectConditions(batch["history_object_motion"], shape_vec)
            batch["object_context"] = self.object.encode_conditions(obj_cond)
        return batch

    # -- prediction heads ---------------------------------------------------

    def predict_object(self, o_t, t, batch, human_feats=None):
        """Object prediction, routed through the control module when it is
        attached and features are supplied."""
        contact_hist = batch.get("history_contacts") if self.use_contacts else None
        contact_mask = batch.get("history_mask") if self.use_contacts else None
        if self.him is not None and human_feats is not None:
            return predict_with_him(self.object, self.him, o_t, t,
                                    batch["object_context"], contact_hist,
                                    contact_mask, human_feats)
        return self.object(o_t, t, batch["object_context"], contact_hist, contact_mask)

    # -- checkpoints ---------------------------------------------------------

    def save(self, path, stage=None):
        extra = {"config": config_to_dict(self.config)}
        if stage is not None:
            extra["stage"] = stage
        save_checkpoint(path, self.state_dict(), extra)

    @classmethod
    def load(cls, path):
        state, extra = load_checkpoint(path)
        if "config" not in extra:
            raise CheckpointError(f"{path}: manifest lacks the embedded config")
        model = cls(config_from_dict(extra["config"]))
        if any(key.startswith("him.") for key in state):
            model.attach_him()
        try:
            model.load_state_dict(state, strict=True)
        except RuntimeError as exc:
            raise CheckpointError(f"{path}: parameter mismatch: {exc}") from None
        return model, extra


def build_model(config: RunConfig, seed) -> InteractionModel:
    model = InteractionModel(config)
    init_parameters(model, seed)
    return model


@dataclass
class PredictionResult:
    """One sampled future for one sequence (float64 numpy arrays)."""

    human_positions: np.ndarray    # (T, J, 3)
    human_rot6d: np.ndarray        # (T, J, 6)
    object_centroid: np.ndarray    # (T, 3)
    object_rot6d: np.ndarray       # (T, 6)
    contact_pred_human: np.ndarray  # (T, N, k, 3); zeros when contacts off
    contact_pred_object: np.ndarray  # (T, N, k, 3); transport of rest contacts


def object_contact_trajectory(centroids, rot6d, rest_contacts):
    """Transport rest contacts by per-frame poses: (T, N, k, 3)."""
    n, k = rest_contacts.shape[:2]
    flat = rest_contacts.reshape(n * k, 3)
    out = np.empty((centroids.shape[0], n, k, 3))
    for f in range(centroids.shape[0]):
        pose = RigidTransform(rot6d_to_matrix(rot6d[f]), centroids[f])
        out[f] = contact_from_object(pose, flat).reshape(n, k, 3)
    return out


def sample_interaction(model: InteractionModel, sequence: HoiSequence,
                       sched: NoiseSchedule, seed) -> PredictionResult:
    """Jointly denoise human and object chains for one sequence.

    Both chains share one noise stream (concatenated channels) so a single
    seed fixes the whole sample. When past frames are exempt from noising
    (config switch), the history slice of the state is re-noised to its
    ground-truth-consistent level before every denoiser call.
    """
    data_cfg = model.config.data
    j = data_cfg.joints
    tp, t_total = sequence.past_len, sequence.total_len
    batch = model.prepare_batch([sequence])
    with torch.no_grad():
        model.encode_contexts(batch)
        dim_human = model.dim_h + model.dim_c if model.decoupled else \
            model.dim_h + OBJECT_DIM + model.dim_c
        width = dim_human + (OBJECT_DIM if model.decoupled else 0)
        clean_past = None
        past_gen = None
        if not model.config.diffusion.noise_past_frames:
            chans = [batch["human_motion"]]
            if model.use_contacts:
                chans.append(batch["contacts"].reshape(1, t_total, -1))
            if model.decoupled:
                chans.append(batch["object_motion"])
            clean_past = torch.cat(chans, dim=-1)[:, :tp]
            past_gen = torch.Generator().manual_seed(int(seed) ^ 0x5F5E1)

        def denoiser(x, t, _):
            if clean_past is not None:
                x = x.clone()
                eps = torch.randn(clean_past.shape, generator=past_gen,
                                  dtype=clean_past.dtype)
                x[:, :tp] = q_sample(clean_past, t, eps, sched)
            hx = x[..., :model.dim_h + model.dim_c] if model.decoupled else \
                x[..., :dim_human]
            if not model.decoupled:
                motion, contact, _ = model.human(hx, t, batch["human_context"])
                return torch.cat([motion, contact], dim=-1) if model.dim_c else motion
            motion, contact, hidden = model.human(hx, t, batch["human_context"])
            ox = x[..., model.dim_h + model.dim_c:]
            feats = hidden if model.him is not None else None
            o_hat = model.predict_object(ox, t, batch, human_feats=feats)
            parts = [motion, contact, o_hat] if model.dim_c else [motion, o_hat]
            return torch.cat(parts, dim=-1)

        x0 = sample_loop(denoiser, None, (1, t_total, width), sched, seed)
    x0 = x0[0].double().numpy()

    human_flat = x0[:, :model.dim_h].reshape(t_total, j, 9)
    positions, rot6d = human_flat[..., :3], human_flat[..., 3:]
    if model.use_contacts:
        c_h = x0[:, model.dim_h:model.dim_h + model.dim_c].reshape(
            t_total, data_cfg.groups, data_cfg.subset_size, 3)
    else:
        c_h = np.zeros((t_total, data_cfg.groups, data_cfg.subset_size, 3))
    obj = x0[:, model.dim_h + model.dim_c:]
    centroids, obj_rot = obj[:, :3], obj[:, 3:]
    c_o = object_contact_trajectory(centroids, obj_rot, sequence.rest_contacts)
    return PredictionResult(
        human_positions=positions,
        human_rot6d=rot6d,
        object_centroid=centroids,
        object_rot6d=obj_rot,
        contact_pred_human=c_h,
        contact_pred_object=c_o,
    )
