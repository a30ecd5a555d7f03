"""Evaluation metrics and the sampling-based evaluation harness.

Internal math is in meters; the report scales position errors to
millimeters, quaternion distance by 1000, and penetration percent by 10,
matching the integer-table convention of prior interaction-forecasting
work.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch
from .geometry import matrix_to_quaternion, rot6d_to_matrix
from .hoi_data import skeleton_parents
from .model import InteractionModel, sample_interaction


def mpjpe(pred_joints, gt_joints):
    """Mean Euclidean distance over frames and joints, in input units."""
    pred = np.asarray(pred_joints, float)
    gt = np.asarray(gt_joints, float)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def quaternion_distance(q_a, q_b):
    """Sign-invariant quaternion l2: min(||q_a - q_b||, ||q_a + q_b||)."""
    q_a = np.asarray(q_a, float)
    q_b = np.asarray(q_b, float)
    return np.minimum(np.linalg.norm(q_a - q_b, axis=-1),
                      np.linalg.norm(q_a + q_b, axis=-1))


def trans_rot_err(pred_centroid, pred_rot6d, gt_centroid, gt_rot6d):
    """(mean centroid distance, mean sign-invariant quaternion distance)."""
    pred_centroid = np.asarray(pred_centroid, float)
    gt_centroid = np.asarray(gt_centroid, float)
    if pred_centroid.shape != gt_centroid.shape:
        raise ShapeMismatch(
            f"centroids {pred_centroid.shape} vs {gt_centroid.shape}")
    trans = float(np.linalg.norm(pred_centroid - gt_centroid, axis=-1).mean())
    q_p = matrix_to_quaternion(rot6d_to_matrix(pred_rot6d))
    q_g = matrix_to_quaternion(rot6d_to_matrix(gt_rot6d))
    return trans, float(quaternion_distance(q_p, q_g).mean())


def capsule_signed_distance(points, seg_starts, seg_ends, radii):
    """Signed distance to a capsule union, positive inside the body volume.

    sd(p) = max over capsules of (radius - distance(p, segment)).
    points: (M, 3); seg_starts/seg_ends: (B, 3); radii: scalar or (B,).
    """
    points = np.asarray(points, float)
    a = np.asarray(seg_starts, float)
    b = np.asarray(seg_ends, float)
    radii = np.broadcast_to(np.asarray(radii, float), (a.shape[0],))
    ab = b - a  # (B, 3)
    denom = np.maximum((ab * ab).sum(axis=1), 1e-30)
    ap = points[:, None, :] - a[None, :, :]  # (M, B, 3)
    t = np.clip((ap * ab[None]).sum(axis=2) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    dist = np.linalg.norm(points[:, None, :] - closest, axis=2)
    return (radii[None, :] - dist).max(axis=1)


def skeleton_bones(joint_positions, parents=None):
    """Per-bone segment endpoints from joint positions (J, 3)."""
    joints = np.asarray(joint_positions, float)
    if parents is None:
        parents = skeleton_parents(joints.shape[0])
    starts, ends = [], []
    for child, parent in enumerate(parents):
        if parent >= 0:
            starts.append(joints[parent])
            ends.append(joints[child])
    return np.asarray(starts), np.asarray(ends)


def penetration(object_points, joint_positions, capsule_radii=0.05, parents=None):
    """Percentage of object points inside the capsule-union body volume
    (signed distance >= 0)."""
    starts, ends = skeleton_bones(joint_positions, parents)
    sd = capsule_signed_distance(object_points, starts, ends, capsule_radii)
    return float(100.0 * np.mean(sd >= 0))


def contact_gap(contact_pred_h, contact_pred_o, mask):
    """Mean Euclidean distance between the two contact predictions over
    unmasked (frame, group, point) entries; NaN when nothing is unmasked."""
    mask = np.asarray(mask, bool)
    if not mask.any():
        return float("nan")
    d = np.linalg.norm(np.asarray(contact_pred_h) - np.asarray(contact_pred_o), axis=-1)
    return float(d[mask].mean())


def object_keypoint_indices(n_points, count=12):
    """Deterministic evenly-spaced key-point indices into the rest cloud."""
    count = min(count, n_points)
    return np.linspace(0, n_points - 1, count).round().astype(np.int64)


@dataclass
class EvalReport:
    """Aggregated metrics, scaled to the integer-table convention."""

    mpjpe_h: float
    mpjpe_o: float
    trans_err: float
    rot_err: float
    pene: float
    contact_gap: float
    sequences: int
    per_sequence: list = field(default_factory=list)

    FIELDS = ("mpjpe_h", "mpjpe_o", "trans_err", "rot_err", "pene", "contact_gap")

    def to_dict(self):
        out = {name: getattr(self, name) for name in self.FIELDS}
        out["sequences"] = self.sequences
        out["per_sequence"] = self.per_sequence
        return out

    def to_table(self):
        header = " ".join(f"{name:>12}" for name in self.FIELDS)
        row = " ".join(f"{getattr(self, name):12.3f}" for name in self.FIELDS)
        return header + "\n" + row


def _evaluate_one(model, seq, sched, seed, capsule_radii, keypoints):
    pred = sample_interaction(model, seq, sched, seed)
    tp = seq.past_len
    gt_joints = seq.human_positions()[tp:]
    gt_centroid = seq.object_centroids()[tp:]
    gt_rot = seq.object_rot6d()[tp:]
    row = {}
    row["mpjpe_h"] = mpjpe(pred.human_positions[tp:], gt_joints)
    trans, rot = trans_rot_err(pred.object_centroid[tp:], pred.object_rot6d[tp:],
                               gt_centroid, gt_rot)
    row["trans_err"], row["rot_err"] = trans, rot

    kp_idx = object_keypoint_indices(seq.rest_cloud.shape[0], keypoints)
    kp_rest = seq.rest_cloud[kp_idx]
    frames = pred.object_centroid.shape[0] - tp
    kp_pred = np.empty((frames, len(kp_idx), 3))
    kp_gt = np.empty_like(kp_pred)
    gt_mats = rot6d_to_matrix(gt_rot)
    pred_mats = rot6d_to_matrix(pred.object_rot6d[tp:])
    for f in range(frames):
        kp_pred[f] = kp_rest @ pred_mats[f].T + pred.object_centroid[tp + f]
        kp_gt[f] = kp_rest @ gt_mats[f].T + gt_centroid[f]
    row["mpjpe_o"] = mpjpe(kp_pred, kp_gt)

    pene_vals = []
    cloud = seq.rest_cloud
    for f in range(frames):
        pts = cloud @ pred_mats[f].T + pred.object_centroid[tp + f]
        pene_vals.append(penetration(pts, pred.human_positions[tp + f], capsule_radii))
    row["pene"] = float(np.mean(pene_vals))
    row["contact_gap"] = contact_gap(pred.contact_pred_human[tp:],
                                     pred.contact_pred_object[tp:],
                                     seq.contact_mask()[tp:])
    return row


def evaluate_model(model: InteractionModel, sequences, seed,
                   samples_per_sequence=1, capsule_radii=0.05,
                   keypoints=12) -> EvalReport:
    """Sample each held-out sequence and average the metrics over future
    frames; deterministic for a fixed seed."""
    sched = model.schedule()
    model.eval()
    per_seq = []
    for i, seq in enumerate(sequences):
        rows = [_evaluate_one(model, seq, sched,
                              seed * 100003 + i * 131 + s, capsule_radii, keypoints)
                for s in range(samples_per_sequence)]
        per_seq.append({k: float(np.mean([r[k] for r in rows])) for k in rows[0]})
    agg = {}
    for name in EvalReport.FIELDS:
        vals = [row[name] for row in per_seq]
        finite = [v for v in vals if np.isfinite(v)]
        agg[name] = float(np.mean(finite)) if finite else float("nan")
    scale = {"mpjpe_h": 1000.0, "mpjpe_o": 1000.0, "trans_err": 1000.0,
             "rot_err": 1000.0, "pene": 10.0, "contact_gap": 1000.0}
    return EvalReport(
        **{name: agg[name] * scale[name] for name in EvalReport.FIELDS},
        sequences=len(sequences),
        per_sequence=per_seq,
    )


def evaluate(checkpoint_path, sequences, seed, samples_per_sequence=1,
             capsule_radii=0.05) -> EvalReport:
    """Load a checkpoint and evaluate it on the given sequences."""
    model, _ = InteractionModel.load(checkpoint_path)
    return evaluate_model(model, sequences, seed,
                          samples_per_sequence=samples_per_sequence,
                          capsule_radii=capsule_radii)
