"""Sequence data model, contact grouping, the synthetic generator, and the
JSON-lines dataset codec.

A sequence holds T_p past + T_f future frames of human pose (joint positions
plus per-joint 6D rotations), object pose (centroid plus 6D rotation relative
to the rest-pose cloud), and per-frame contact sets. Contact points are
grouped by nearest joint; each nonempty group contributes a fixed-size
sampled subset whose membership is shared by every frame of the sequence.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, ParseError, ShapeMismatch
from .geometry import matrix_to_rot6d, rot6d_to_matrix


@dataclass
class HumanPose:
    """Single-frame skeleton state: positions (J,3) and 6D rotations (J,6)."""

    joint_positions: np.ndarray
    joint_rotations: np.ndarray

    def __post_init__(self):
        self.joint_positions = np.asarray(self.joint_positions, float)
        self.joint_rotations = np.asarray(self.joint_rotations, float)
        j = self.joint_positions.shape[0]
        if self.joint_positions.shape != (j, 3) or self.joint_rotations.shape != (j, 6):
            raise ShapeMismatch(
                f"positions {self.joint_positions.shape} vs rotations "
                f"{self.joint_rotations.shape}")


@dataclass
class ObjectPose:
    """Single-frame object state: centroid (3,) and 6D rotation (6,)."""

    centroid: np.ndarray
    rotation6d: np.ndarray

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, float)
        self.rotation6d = np.asarray(self.rotation6d, float)
        if self.centroid.shape != (3,) or self.rotation6d.shape != (6,):
            raise ShapeMismatch(
                f"centroid {self.centroid.shape}, rotation6d {self.rotation6d.shape}")

    def matrix(self):
        return rot6d_to_matrix(self.rotation6d)


@dataclass
class ContactSet:
    """Per-frame contacts: N groups of point indices, sampled subsets, mask.

    groups[i] lists rest-cloud indices assigned to joint region i at this
    frame; subsets[i] holds the k sampled positions (zeros when mask[i]=0);
    mask[i] is 1 exactly when groups[i] is nonempty.
    """

    groups: list
    subsets: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.subsets = np.asarray(self.subsets, float)
        self.mask = np.asarray(self.mask, np.uint8)
        n = len(self.groups)
        if self.subsets.shape[0] != n or self.mask.shape != (n,):
            raise ShapeMismatch(
                f"{n} groups vs subsets {self.subsets.shape} vs mask {self.mask.shape}")
        for i, g in enumerate(self.groups):
            if bool(self.mask[i]) != (len(g) > 0):
                raise ValueError(f"mask[{i}]={self.mask[i]} but group size {len(g)}")


@dataclass
class HoiSequence:
    """A full past+future interaction window plus object rest geometry."""

    past_len: int
    future_len: int
    frame_rate: float
    human_poses: list
    object_poses: list
    contacts: list
    rest_cloud: np.ndarray
    contact_group_indices: np.ndarray  # concat of group members, group order
    contact_group_sizes: np.ndarray    # (N,) sizes of the window partition
    subset_indices: np.ndarray         # (N, k) rest-cloud indices, -1 sentinel

    def __post_init__(self):
        t = self.past_len + self.future_len
        if not (len(self.human_poses) == len(self.object_poses) == len(self.contacts) == t):
            raise ShapeMismatch(
                f"frame-indexed fields must have length {t}: got "
                f"{len(self.human_poses)}/{len(self.object_poses)}/{len(self.contacts)}")
        self.rest_cloud = np.asarray(self.rest_cloud, float)
        self.contact_group_indices = np.asarray(self.contact_group_indices, np.int64)
        self.contact_group_sizes = np.asarray(self.contact_group_sizes, np.int64)
        self.subset_indices = np.asarray(self.subset_indices, np.int64)
        m = self.rest_cloud.shape[0]
        if self.contact_group_indices.size and (
                self.contact_group_indices.min() < 0 or self.contact_group_indices.max() >= m):
            raise ValueError("contact_group_indices out of rest_cloud range")
        if self.subset_indices.size and self.subset_indices.max() >= m:
            raise ValueError("subset_indices out of rest_cloud range")

    @property
    def total_len(self):
        return self.past_len + self.future_len

    @property
    def n_joints(self):
        return self.human_poses[0].joint_positions.shape[0]

    @property
    def n_groups(self):
        return self.subset_indices.shape[0]

    @property
    def subset_size(self):
        return self.subset_indices.shape[1]

    @property
    def rest_contacts(self):
        """(N, k, 3) rest-pose positions of the sampled contact points;
        zero rows where the group is empty (index sentinel -1)."""
        n, k = self.subset_indices.shape
        out = np.zeros((n, k, 3))
        valid = self.subset_indices >= 0
        out[valid] = self.rest_cloud[self.subset_indices[valid]]
        return out

    def human_positions(self):
        return np.stack([p.joint_positions for p in self.human_poses])

    def human_rot6d(self):
        return np.stack([p.joint_rotations for p in self.human_poses])

    def object_centroids(self):
        return np.stack([p.centroid for p in self.object_poses])

    def object_rot6d(self):
        return np.stack([p.rotation6d for p in self.object_poses])

    def contact_subsets(self):
        return np.stack([c.subsets for c in self.contacts])

    def contact_mask(self):
        return np.stack([c.mask for c in self.contacts])

    def window_groups(self):
        """The per-sequence partition: N lists of rest-cloud indices."""
        bounds = np.concatenate([[0], np.cumsum(self.contact_group_sizes)])
        return [self.contact_group_indices[bounds[i]:bounds[i + 1]]
                for i in range(len(self.contact_group_sizes))]


def group_contacts(contact_points, joints, n_groups):
    """Assign each contact point to its nearest joint.

    Returns (groups, mask): groups[i] is an int array of contact-point
    indices whose nearest joint is i (ties go to the lowest joint index),
    mask[i] = 1 iff groups[i] is nonempty.
    """
    joints = np.asarray(joints, float)
    if n_groups != joints.shape[0]:
        raise ConfigError(f"n_groups={n_groups} must equal joint count {joints.shape[0]}")
    pts = np.asarray(getattr(contact_points, "points", contact_points), float).reshape(-1, 3)
    groups = [np.empty(0, np.int64) for _ in range(n_groups)]
    mask = np.zeros(n_groups, np.uint8)
    if pts.shape[0]:
        d = np.linalg.norm(pts[:, None, :] - joints[None, :, :], axis=-1)
        nearest = np.argmin(d, axis=1)  # argmin takes the lowest index on ties
        for i in range(n_groups):
            groups[i] = np.nonzero(nearest == i)[0].astype(np.int64)
            mask[i] = 1 if groups[i].size else 0
    return groups, mask


def sample_contact_subsets(groups, k, seed):
    """Pick k representative indices per group, reused for every frame.

    Nonempty groups with >= k members are sampled without replacement,
    smaller ones with replacement; empty groups get the -1 sentinel.
    """
    if k < 1:
        raise ConfigError(f"subset size k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    out = np.full((len(groups), k), -1, np.int64)
    for i, g in enumerate(groups):
        g = np.asarray(g, np.int64)
        if g.size:
            out[i] = rng.choice(g, size=k, replace=g.size < k)
    return out


def contacts_from_nearest_joints(joint_positions, object_points, radius, k):
    """Skeleton-dataset contact mode: the contact points are the human
    joints closest to the object, one group per joint.

    joint_positions: (T, J, 3); object_points: (T, M, 3). Returns a list of
    per-frame ContactSet where group j = [j] when joint j lies within
    radius of the object cloud at that frame.
    """
    joint_positions = np.asarray(joint_positions, float)
    object_points = np.asarray(object_points, float)
    frames = []
    for jp, op in zip(joint_positions, object_points):
        d = np.linalg.norm(jp[:, None, :] - op[None, :, :], axis=-1).min(axis=1)
        near = d <= radius
        groups = [np.array([j], np.int64) if near[j] else np.empty(0, np.int64)
                  for j in range(jp.shape[0])]
        subsets = np.zeros((jp.shape[0], k, 3))
        subsets[near] = np.repeat(jp[near][:, None, :], k, axis=1)
        frames.append(ContactSet(groups, subsets, near.astype(np.uint8)))
    return frames


@dataclass
class DataConfig:
    """Knobs for the synthetic interaction generator.

    embodiment_seed fixes the skeleton proportions and the object geometry
    for the whole dataset (one subject, one object, many takes); the
    per-sequence seed drives only the motion and grasp choice.
    """

    joints: int = 21
    past_len: int = 10
    future_len: int = 20
    frame_rate: float = 30.0
    surface_points: int = 64
    groups: int = 0               # 0 means one group per joint
    subset_size: int = 4
    contact_window: tuple = (0.3, 0.9)  # fractions of the full window
    grasp_radius: float = 0.25
    keyframe_spacing: int = 6
    object_scale: float = 0.15
    embodiment_seed: int = 0

    def __post_init__(self):
        if self.groups == 0:
            self.groups = self.joints
        for name in ("joints", "past_len", "future_len", "surface_points", "subset_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.groups != self.joints:
            raise ConfigError("groups must equal the joint count (one group per region)")
        lo, hi = self.contact_window
        if not (0.0 <= lo <= 1.0 and 0.0 <= hi <= 1.0):
            raise ConfigError(f"contact_window fractions must lie in [0,1], got {self.contact_window}")


def skeleton_parents(n_joints):
    """Default articulated-chain topology shared by generator and metrics:
    joint 0 is the root, joint i hangs off joint i-1."""
    parents = np.arange(-1, n_joints - 1, dtype=np.int64)
    return parents


def _euler_to_matrix(angles):
    """XYZ intrinsic Euler angles (..., 3) to rotation matrices (..., 3, 3)."""
    ax, ay, az = angles[..., 0], angles[..., 1], angles[..., 2]
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.zeros(angles.shape[:-1] + (3, 3))
    rx[..., 0, 0] = 1
    rx[..., 1, 1], rx[..., 1, 2] = cx, -sx
    rx[..., 2, 1], rx[..., 2, 2] = sx, cx
    ry = np.zeros_like(rx)
    ry[..., 1, 1] = 1
    ry[..., 0, 0], ry[..., 0, 2] = cy, sy
    ry[..., 2, 0], ry[..., 2, 2] = -sy, cy
    rz = np.zeros_like(rx)
    rz[..., 2, 2] = 1
    rz[..., 0, 0], rz[..., 0, 1] = cz, -sz
    rz[..., 1, 0], rz[..., 1, 1] = sz, cz
    return rx @ ry @ rz


def _spline_channels(rng, n_frames, n_channels, spacing, scale):
    """Smooth per-channel curves through random keyframes."""
    n_keys = max(3, n_frames // spacing + 1)
    key_t = np.linspace(0.0, n_frames - 1.0, n_keys)
    key_v = rng.uniform(-scale, scale, size=(n_keys, n_channels))
    spline = CubicSpline(key_t, key_v, axis=0)
    return spline(np.arange(n_frames))


def _box_surface_points(rng, count, half_extent):
    """Random points on the surface of an axis-aligned box, centroid-free."""
    face = rng.integers(0, 6, size=count)
    pts = rng.uniform(-half_extent, half_extent, size=(count, 3))
    pts[np.arange(count), face % 3] = np.where(face < 3, half_extent, -half_extent)
    return pts - pts.mean(axis=0)


def generate_synthetic(config: DataConfig, seed) -> HoiSequence:
    """Generate one sequence: splined skeleton motion with constant bone
    lengths, an object rigidly attached to the end-effector during the
    contact window, and ground-truth contacts satisfying C = R p + L."""
    rng = np.random.default_rng(seed)
    emb_rng = np.random.default_rng(config.embodiment_seed)
    j = config.joints
    t_total = config.past_len + config.future_len
    parents = skeleton_parents(j)

    # Dataset-wide embodiment: bone lengths, rest directions, object shape.
    bone_len = emb_rng.uniform(0.12, 0.3, size=j)
    bone_dir = emb_rng.normal(size=(j, 3))
    bone_dir /= np.linalg.norm(bone_dir, axis=1, keepdims=True)
    offsets = bone_len[:, None] * bone_dir  # offsets[0] unused (root)

    # Smooth per-sequence joint-angle and root-translation curves.
    angles = _spline_channels(rng, t_total, 3 * j, config.keyframe_spacing, 0.6)
    angles = angles.reshape(t_total, j, 3)
    root = _spline_channels(rng, t_total, 3, config.keyframe_spacing, 0.5)

    local = _euler_to_matrix(angles)  # (T, J, 3, 3)
    glob = np.empty_like(local)
    pos = np.empty((t_total, j, 3))
    glob[:, 0] = local[:, 0]
    pos[:, 0] = root
    for i in range(1, j):
        p = parents[i]
        glob[:, i] = glob[:, p] @ local[:, i]
        pos[:, i] = pos[:, p] + np.einsum("tab,b->ta", glob[:, p], offsets[i])

    ee = j - 1  # end-effector: tip of the chain
    rest_cloud = _box_surface_points(emb_rng, config.surface_points,
                                     config.object_scale)

    t0 = int(round(t_total * config.contact_window[0]))
    t1 = int(round(t_total * config.contact_window[1]))
    has_window = t1 > t0 and t0 < t_total

    obj_R = np.tile(np.eye(3), (t_total, 1, 1))
    obj_L = np.empty((t_total, 3))
    if has_window:
        t0 = min(t0, t_total - 1)
        grasp_pt = rest_cloud[rng.integers(0, config.surface_points)]
        l_init = pos[t0, ee] - grasp_pt
        obj_L[:] = l_init
        r0_inv = glob[t0, ee].T
        for f in range(t0, min(t1, t_total)):
            obj_R[f] = glob[f, ee] @ r0_inv
            obj_L[f] = pos[f, ee] + obj_R[f] @ (l_init - pos[t0, ee])
        if t1 < t_total:
            obj_R[t1:] = obj_R[t1 - 1]
            obj_L[t1:] = obj_L[t1 - 1]
    else:
        # No interaction: park the object away from the skeleton.
        obj_L[:] = pos.reshape(-1, 3).mean(axis=0) + np.array([1.5, 0.0, 1.5])

    # Canonicalize rotations through the 6D codec so that serialized poses
    # reproduce contact positions bitwise on reload.
    obj_rot6d = matrix_to_rot6d(obj_R)
    obj_R = rot6d_to_matrix(obj_rot6d)
    human_rot6d = matrix_to_rot6d(glob)

    n = config.groups
    k = config.subset_size
    groups = [np.empty(0, np.int64) for _ in range(n)]
    window_mask = np.zeros(n, np.uint8)
    if has_window:
        world0 = rest_cloud + obj_L[t0]  # R(t0) = I by construction
        near = np.nonzero(np.linalg.norm(world0 - pos[t0, ee], axis=1)
                          <= config.grasp_radius)[0]
        local_groups, window_mask = group_contacts(world0[near], pos[t0], n)
        groups = [near[g] for g in local_groups]
    subset_idx = sample_contact_subsets(groups, k, rng.integers(0, 2**32))

    frames = []
    contact_frames = []
    for f in range(t_total):
        frames.append(HumanPose(pos[f], human_rot6d[f]))
        in_window = has_window and t0 <= f < t1
        mask_f = window_mask if in_window else np.zeros(n, np.uint8)
        groups_f = [groups[i] if mask_f[i] else np.empty(0, np.int64) for i in range(n)]
        subsets_f = np.zeros((n, k, 3))
        if in_window:
            active = np.nonzero(mask_f)[0]
            for i in active:
                subsets_f[i] = rest_cloud[subset_idx[i]] @ obj_R[f].T + obj_L[f]
        contact_frames.append(ContactSet(groups_f, subsets_f, mask_f))

    object_frames = [ObjectPose(obj_L[f], obj_rot6d[f]) for f in range(t_total)]
    return HoiSequence(
        past_len=config.past_len,
        future_len=config.future_len,
        frame_rate=config.frame_rate,
        human_poses=frames,
        object_poses=object_frames,
        contacts=contact_frames,
        rest_cloud=rest_cloud,
        contact_group_indices=np.concatenate(groups) if any(g.size for g in groups)
        else np.empty(0, np.int64),
        contact_group_sizes=np.array([g.size for g in groups], np.int64),
        subset_indices=subset_idx,
    )


_RECORD_FIELDS = ("past_len", "future_len", "frame_rate", "human", "object",
                  "rest_cloud", "rest_contact_indices", "contact")


def serialize_sequence(seq: HoiSequence) -> str:
    """Encode a sequence as one self-describing JSON line (lossless for
    finite float64 values; see docs/dataset_schema.json)."""
    record = {
        "past_len": seq.past_len,
        "future_len": seq.future_len,
        "frame_rate": seq.frame_rate,
        "human": {
            "positions": seq.human_positions().tolist(),
            "rotations6d": seq.human_rot6d().tolist(),
        },
        "object": {
            "centroid": seq.object_centroids().tolist(),
            "rotation6d": seq.object_rot6d().tolist(),
        },
        "rest_cloud": seq.rest_cloud.tolist(),
        "rest_contact_indices": seq.contact_group_indices.tolist(),
        "contact": {
            "group_sizes": seq.contact_group_sizes.tolist(),
            "subset_indices": seq.subset_indices.tolist(),
            "mask": seq.contact_mask().tolist(),
        },
    }
    return json.dumps(record, separators=(",", ":"))


def _require(record, key, context):
    if key not in record:
        raise ParseError(f"{context}: missing field '{key}'")
    return record[key]


def _array(record, key, context, dtype=float):
    try:
        return np.asarray(_require(record, key, context), dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{context}: field '{key}' is not numeric: {exc}") from None


def deserialize_sequence(line: str, context: str = "record") -> HoiSequence:
    """Parse one dataset line back into a HoiSequence.

    Contact subset positions are reconstructed from the serialized object
    poses via the rigid transport map, matching how they were generated.
    Unknown top-level keys are permitted (prediction files add fields).
    """
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{context}: invalid JSON: {exc}") from None
    if not isinstance(record, dict):
        raise ParseError(f"{context}: expected a JSON object")

    past_len = int(_require(record, "past_len", context))
    future_len = int(_require(record, "future_len", context))
    frame_rate = float(_require(record, "frame_rate", context))
    human = _require(record, "human", context)
    obj = _require(record, "object", context)
    positions = _array(human, "positions", f"{context}.human")
    rotations = _array(human, "rotations6d", f"{context}.human")
    centroid = _array(obj, "centroid", f"{context}.object")
    rotation6d = _array(obj, "rotation6d", f"{context}.object")
    rest_cloud = _array(record, "rest_cloud", context)
    group_indices = _array(record, "rest_contact_indices", context, dtype=np.int64)
    contact = _require(record, "contact", context)
    group_sizes = _array(contact, "group_sizes", f"{context}.contact", dtype=np.int64)
    subset_idx = _array(contact, "subset_indices", f"{context}.contact", dtype=np.int64)
    mask = _array(contact, "mask", f"{context}.contact", dtype=np.uint8)

    t_total = past_len + future_len
    for name, arr, shape in (
            ("human.positions", positions, 3),
            ("human.rotations6d", rotations, 3),
            ("object.centroid", centroid, 2),
            ("object.rotation6d", rotation6d, 2),
            ("contact.mask", mask, 2)):
        if arr.ndim != shape or arr.shape[0] != t_total:
            raise ParseError(
                f"{context}: field '{name}' has shape {arr.shape}, expected "
                f"leading dimension {t_total}")
    if group_sizes.sum() != group_indices.size:
        raise ParseError(f"{context}: group_sizes sum {group_sizes.sum()} does not "
                         f"match rest_contact_indices length {group_indices.size}")

    bounds = np.concatenate([[0], np.cumsum(group_sizes)])
    partition = [group_indices[bounds[i]:bounds[i + 1]] for i in range(len(group_sizes))]
    n, k = subset_idx.shape

    human_frames = [HumanPose(positions[f], rotations[f]) for f in range(t_total)]
    object_frames = [ObjectPose(centroid[f], rotation6d[f]) for f in range(t_total)]
    matrices = rot6d_to_matrix(rotation6d)
    contact_frames = []
    for f in range(t_total):
        groups_f = [partition[i] if mask[f, i] else np.empty(0, np.int64)
                    for i in range(n)]
        subsets_f = np.zeros((n, k, 3))
        for i in np.nonzero(mask[f])[0]:
            subsets_f[i] = rest_cloud[subset_idx[i]] @ matrices[f].T + centroid[f]
        contact_frames.append(ContactSet(groups_f, subsets_f, mask[f]))

    return HoiSequence(
        past_len=past_len,
        future_len=future_len,
        frame_rate=frame_rate,
        human_poses=human_frames,
        object_poses=object_frames,
        contacts=contact_frames,
        rest_cloud=rest_cloud,
        contact_group_indices=group_indices,
        contact_group_sizes=group_sizes,
        subset_indices=subset_idx,
    )


def save_dataset(sequences, path):
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(serialize_sequence(seq) + "\n")


def load_dataset(path):
    sequences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                sequences.append(deserialize_sequence(line, context=f"line {lineno}"))
    return sequences
