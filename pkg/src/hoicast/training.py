"""Consistency loss, the combined weighted objective, and the three-stage
optimization loop.

Stage 1 trains the two dynamics branches; stage 2 freezes them and trains
only the control module; stage 3 fine-tunes everything. Every stage
optimizes the same weighted sum of the three losses. The loop is
deterministic for a fixed seed: each stage reseeds its own generator, so a
resumed run reproduces the remaining stages of a fresh one.
"""

import os
from dataclasses import dataclass, field

import torch

from .config import RunConfig
from .diffusion import NoiseSchedule, q_sample_batch
from .errors import ConfigError, NaNLoss, ShapeMismatch
from .geometry import transport_contacts_torch
from .human_branch import contact_channel_weights, loss_human
from .model import InteractionModel, build_model


@dataclass(frozen=True)
class LossWeights:
    lambda_h: float = 1.0
    lambda_o: float = 1.0
    lambda_c: float = 0.5

    def __post_init__(self):
        for name in ("lambda_h", "lambda_o", "lambda_c"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ConfigError(f"{name} must be finite and nonnegative, got {v}")


_STAGE_TRAINABLE = {1: frozenset({"human", "object"}),
                    2: frozenset({"him"}),
                    3: frozenset({"human", "object", "him"})}


@dataclass(frozen=True)
class StagePlan:
    stage: int
    steps: int
    learning_rate: float

    def __post_init__(self):
        if self.stage not in _STAGE_TRAINABLE:
            raise ConfigError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def trainable(self):
        return _STAGE_TRAINABLE[self.stage]


def loss_consistency(contact_pred_h, object_pred, rest_contacts, mask):
    """Masked mean squared gap between the human-side contact prediction and
    the contact trajectory implied by the predicted rigid object motion.

    contact_pred_h: (B, T, N, k, 3); object_pred: (B, T, 9) as
    [centroid, rotation6d]; rest_contacts: (B, N, k, 3); mask: (B, T, N).
    Entries with mask 0 contribute nothing; an all-zero mask gives 0.
    """
    b, t, n, k, _ = contact_pred_h.shape
    if object_pred.shape[:2] != (b, t) or object_pred.shape[-1] != 9:
        raise ShapeMismatch(
            f"object_pred {tuple(object_pred.shape)} vs contacts ({b}, {t}, ...)")
    if mask.shape != (b, t, n):
        raise ShapeMismatch(f"mask {tuple(mask.shape)} vs ({b}, {t}, {n})")
    rest = rest_contacts.reshape(b, 1, n * k, 3).expand(b, t, n * k, 3)
    c_o = transport_contacts_torch(object_pred[..., 3:], object_pred[..., :3], rest)
    c_o = c_o.reshape(b, t, n, k, 3)
    w = mask.to(contact_pred_h.dtype)[..., None, None]
    total = w.sum() * (k * 3)
    if total == 0:
        return torch.zeros((), dtype=contact_pred_h.dtype)
    sq = ((contact_pred_h - c_o) ** 2 * w).sum()
    return sq / total


def compute_losses(model: InteractionModel, batch, sched: NoiseSchedule, stage,
                   t=None, eps_h=None, eps_o=None, generator=None):
    """One forward pass per branch; returns the three loss terms.

    The human forward is shared between its reconstruction loss and the
    consistency term (and supplies the control features from stage 2 on).
    Explicit (t, eps) override the random draws, for deterministic checks.
    """
    model.encode_contexts(batch)
    motion = batch["human_motion"]
    b, t_total = motion.shape[:2]
    if t is None:
        t = torch.randint(0, sched.steps, (b,), generator=generator)

    if not model.decoupled:
        lh = loss_human(model.human, batch, t, sched, eps=eps_h, generator=generator)
        zero = torch.zeros((), dtype=motion.dtype)
        return {"human": lh, "object": zero, "consistency": zero, "t": t}

    parts = [motion]
    weights = [torch.ones(b, t_total, model.dim_h, dtype=motion.dtype)]
    if model.dim_c:
        parts.append(batch["contacts"].reshape(b, t_total, -1))
        weights.append(contact_channel_weights(
            batch["contact_mask"], batch["contacts"].shape[3], motion.dtype))
    w = torch.cat(weights, dim=-1)
    # masked contact entries stay a zero sentinel on both input and target
    x0 = torch.cat(parts, dim=-1) * w
    if eps_h is None:
        eps_h = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = q_sample_batch(x0, t, eps_h, sched)
    pred_motion, pred_contact, hidden = model.human(x_t, t, batch["human_context"])
    pred = torch.cat([pred_motion, pred_contact], dim=-1) if model.dim_c else pred_motion
    lh = ((pred - x0) ** 2 * w).sum() / w.sum()

    feats = hidden if (stage >= 2 and model.him is not None) else None
    o0 = batch["object_motion"]
    if eps_o is None:
        eps_o = torch.randn(o0.shape, generator=generator, dtype=o0.dtype)
    o_t = q_sample_batch(o0, t, eps_o, sched)
    o_pred = model.predict_object(o_t, t, batch, human_feats=feats)
    lo = ((o_pred - o0) ** 2).mean()

    if model.dim_c:
        n, k = batch["contacts"].shape[2], batch["contacts"].shape[3]
        c_h = pred_contact.reshape(b, t_total, n, k, 3)
        lc = loss_consistency(c_h, o_pred, batch["rest_contacts"],
                              batch["contact_mask"])
    else:
        lc = torch.zeros((), dtype=motion.dtype)
    return {"human": lh, "object": lo, "consistency": lc, "t": t}


def loss_all(model, batch, weights: LossWeights, sched, stage, t=None,
             eps_h=None, eps_o=None, generator=None):
    """Weighted sum of the three losses; also returns the separate terms."""
    terms = compute_losses(model, batch, sched, stage, t, eps_h, eps_o, generator)
    total = (weights.lambda_h * terms["human"]
             + weights.lambda_o * terms["object"]
             + weights.lambda_c * terms["consistency"])
    return total, terms


def _set_stage_grads(model: InteractionModel, plan: StagePlan):
    groups = {"human": model.human, "object": model.object, "him": model.him}
    for name, module in groups.items():
        if module is None:
            continue
        flag = name in plan.trainable
        for p in module.parameters():
            p.requires_grad_(flag)


def _stage_seed(seed, stage):
    return int(seed) * 8191 + stage


def format_log_line(step, stage, terms, total):
    def f(x):
        return float(x.detach() if torch.is_tensor(x) else x)

    return (f"step {step} stage {stage}"
            f" L_human {f(terms['human'])!r}"
            f" L_object {f(terms['object'])!r}"
            f" L_consistency {f(terms['consistency'])!r}"
            f" L_all {f(total)!r}")


@dataclass
class TrainResult:
    checkpoints: dict
    log_path: str
    history: list = field(default_factory=list)
    model: InteractionModel = None


def train(dataset, config: RunConfig, seed, out_dir, resume=False) -> TrainResult:
    """Run the staged optimization and emit per-stage checkpoints plus an
    append-only loss log.

    With resume=True, stages whose checkpoint file already exists are loaded
    instead of re-run. Stages 2 and 3 are skipped entirely when the control
    module is disabled in the config.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(config, seed)
    sched = model.schedule()
    weights = LossWeights(config.training.lambda_human,
                          config.training.lambda_object,
                          config.training.lambda_consistency)
    full_batch = model.prepare_batch(dataset)
    n_seq = full_batch["human_motion"].shape[0]
    batch_size = min(config.training.batch_size, n_seq)

    stage_cfgs = {1: config.training.stage1, 2: config.training.stage2,
                  3: config.training.stage3}
    stages = [1, 2, 3] if (config.model.use_him and model.object is not None) else [1]
    log_path = os.path.join(out_dir, "train_log.txt")
    if not resume and os.path.exists(log_path):
        os.remove(log_path)
    checkpoints = {}
    history = []

    for stage in stages:
        ckpt_path = os.path.join(out_dir, f"stage{stage}.ckpt")
        if stage >= 2 and model.him is None:
            model.attach_him()
        if resume and os.path.exists(ckpt_path):
            loaded, _ = InteractionModel.load(ckpt_path)
            model.load_state_dict(loaded.state_dict(), strict=True)
            checkpoints[stage] = ckpt_path
            continue
        plan = StagePlan(stage, stage_cfgs[stage].steps, stage_cfgs[stage].learning_rate)
        _set_stage_grads(model, plan)
        params = [p for p in model.parameters() if p.requires_grad]
        opt = torch.optim.Adam(params, lr=plan.learning_rate)
        gen = torch.Generator().manual_seed(_stage_seed(seed, stage))
        with open(log_path, "a", encoding="utf-8") as log:
            for step in range(plan.steps):
                idx = torch.randint(0, n_seq, (batch_size,), generator=gen)
                batch = model.index_batch(full_batch, idx)
                total, terms = loss_all(model, batch, weights, sched, stage,
                                        generator=gen)
                if not torch.isfinite(total):
                    raise NaNLoss(stage, step)
                opt.zero_grad()
                total.backward()
                torch.nn.utils.clip_grad_norm_(params, config.training.grad_clip)
                opt.step()
                line = format_log_line(step, stage, terms, total)
                log.write(line + "\n")
                history.append({"step": step, "stage": stage,
                                "human": float(terms["human"].detach()),
                                "object": float(terms["object"].detach()),
                                "consistency": float(terms["consistency"].detach()),
                                "all": float(total.detach())})
        model.save(ckpt_path, stage=stage)
        checkpoints[stage] = ckpt_path
    return TrainResult(checkpoints=checkpoints, log_path=log_path,
                       history=history, model=model)
