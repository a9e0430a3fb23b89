"""Self-supervision losses for the two-branch capsule autoencoder.

Per branch, one random rotation is drawn per forward pass and the same
point set is encoded twice, raw and rotated. Three terms supervise the
decomposition:

  * equivariance: rotating the input must rotate the capsule poses,
    mean_k ||R pose_k - pose_k^rot||^2
  * invariance: descriptors must not move under rotation,
    mean_k ||desc_k - desc_k^rot||^2
  * reconstruction: symmetric chamfer distance between the input point
    set and the decoded one.

Across branches, a KL term pulls the LiDAR attention map toward the
spectral one so both branches segment the patch the same way:
(1/X) sum_p KL(A_hsi[p] || A_lidar[p]), with both maps clamped at 1e-8
and renormalized before the log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, clip_min, div, log, matmul, tmean, tsum
from .geometry import chamfer_batch

__all__ = [
    "LossWeights",
    "LossReport",
    "loss_equivariance",
    "loss_invariance",
    "loss_kl",
    "reconstruction_loss",
    "branch_loss",
    "total_loss",
]

KL_EPS = 1e-8


@dataclass
class LossWeights:
    """Mixing coefficients: total = alpha * spectral + beta * lidar + gamma * kl."""

    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.1


@dataclass
class LossReport:
    """Scalar values of every loss term from one forward pass."""

    equ_hsi: float
    inv_hsi: float
    cham_hsi: float
    equ_lidar: float
    inv_lidar: float
    cham_lidar: float
    kl: float
    total: float

    def as_dict(self) -> dict:
        return {
            "equ_hsi": self.equ_hsi,
            "inv_hsi": self.inv_hsi,
            "cham_hsi": self.cham_hsi,
            "equ_lidar": self.equ_lidar,
            "inv_lidar": self.inv_lidar,
            "cham_lidar": self.cham_lidar,
            "kl": self.kl,
            "total": self.total,
        }


def _mean_sq_rows(diff: Tensor) -> Tensor:
    """Mean over capsules (and batch) of the squared row norms of diff."""
    sq = tsum(diff * diff, axis=-1)
    return tmean(tmean(sq, axis=-1))


def loss_equivariance(rot, poses, rotated_poses):
    """mean_k ||rot @ pose_k - rotated_pose_k||^2, averaged over the batch.

    rot is treated as a constant; gradients flow into both pose sets.
    Accepts a (D, D) rotation with (K, D) arrays, or (B, D, D) with
    (B, K, D) Tensors.
    """
    if isinstance(poses, Tensor):
        rot_t = as_tensor(np.swapaxes(np.asarray(rot, dtype=np.float64), -1, -2))
        return _mean_sq_rows(matmul(poses, rot_t) - rotated_poses)
    poses = np.asarray(poses, dtype=np.float64)
    rotated_poses = np.asarray(rotated_poses, dtype=np.float64)
    out = loss_equivariance(
        np.asarray(rot, dtype=np.float64)[None],
        as_tensor(poses[None]),
        as_tensor(rotated_poses[None]),
    )
    return float(out.data)


def loss_invariance(descriptors, rotated_descriptors):
    """mean_k ||desc_k - rotated_desc_k||^2, averaged over the batch."""
    if isinstance(descriptors, Tensor):
        return _mean_sq_rows(descriptors - rotated_descriptors)
    a = np.asarray(descriptors, dtype=np.float64)
    b = np.asarray(rotated_descriptors, dtype=np.float64)
    return float(_mean_sq_rows(as_tensor(a[None]) - as_tensor(b[None])).data)


def _renorm(attn: Tensor) -> Tensor:
    clipped = clip_min(attn, KL_EPS)
    return div(clipped, tsum(clipped, axis=-1, keepdims=True))


def loss_kl(attn_from: Tensor, attn_to: Tensor):
    """Per-point KL divergence KL(attn_from || attn_to) averaged over
    points (and batch). Rows are clamped at 1e-8 and renormalized so the
    log stays finite; gradients flow into both maps."""
    if isinstance(attn_from, Tensor):
        p = _renorm(attn_from)
        q = _renorm(attn_to)
        per_point = tsum(p * (log(p) - log(q)), axis=-1)
        return tmean(tmean(per_point, axis=-1))
    p = np.asarray(attn_from, dtype=np.float64)
    q = np.asarray(attn_to, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2:
        raise ValueError("expected two attention maps of equal (X, K) shape")
    return float(loss_kl(as_tensor(p[None]), as_tensor(q[None])).data)


def reconstruction_loss(points, recon):
    """Symmetric chamfer distance between input and reconstructed points,
    averaged over the batch."""
    if isinstance(points, Tensor):
        return chamfer_batch(points, recon)
    from .geometry import chamfer

    return chamfer(np.asarray(points, dtype=np.float64),
                   np.asarray(recon, dtype=np.float64))


def branch_loss(equ: float, inv: float, chamfer_val: float) -> float:
    """Unweighted sum of one branch's three loss terms."""
    for name, value in (("equ", equ), ("inv", inv), ("chamfer", chamfer_val)):
        if not np.isfinite(value) or value < 0:
            raise ValueError(f"{name} term must be finite and nonnegative")
    return equ + inv + chamfer_val


def total_loss(l_hsi: float, l_lidar: float, l_kl: float,
               weights: LossWeights) -> float:
    """Weighted combination of the branch losses and the alignment term."""
    return (weights.alpha * l_hsi + weights.beta * l_lidar
            + weights.gamma * l_kl)
