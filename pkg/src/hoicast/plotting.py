"""Static trajectory plots: orthographic projections of joint and object
centroid trajectories, prediction against ground truth."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PLANES = {"xy": (0, 1), "xz": (0, 2)}


def trajectory_projection(points, plane="xy"):
    """Project (T, 3) world points onto an axis plane -> (T, 2)."""
    i, j = PLANES[plane]
    pts = np.asarray(points, float)
    return pts[..., (i, j)]


def plot_sequence(gt_seq, pred=None, title=None):
    """One figure with xy and xz projections of joint trajectories and the
    object centroid. Returns the matplotlib figure; lines carry labels
    "joint<i>", "object", and "pred joint<i>" / "pred object"."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 5))
    joints = gt_seq.human_positions()
    centroid = gt_seq.object_centroids()
    for ax, plane in zip(axes, PLANES):
        for j in range(joints.shape[1]):
            xy = trajectory_projection(joints[:, j], plane)
            ax.plot(xy[:, 0], xy[:, 1], color="gray", lw=0.8, label=f"joint{j}")
        oc = trajectory_projection(centroid, plane)
        ax.plot(oc[:, 0], oc[:, 1], color="black", lw=1.5, label="object")
        if pred is not None:
            for j in range(pred.human_positions.shape[1]):
                xy = trajectory_projection(pred.human_positions[:, j], plane)
                ax.plot(xy[:, 0], xy[:, 1], color="tab:blue", lw=0.8,
                        label=f"pred joint{j}")
            oc = trajectory_projection(pred.object_centroid, plane)
            ax.plot(oc[:, 0], oc[:, 1], color="tab:red", lw=1.5, label="pred object")
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_title(plane)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def save_sequence_plot(gt_seq, pred, path, title=None):
    fig = plot_sequence(gt_seq, pred, title=title)
    fig.savefig(path, dpi=100)
    plt.close(fig)
