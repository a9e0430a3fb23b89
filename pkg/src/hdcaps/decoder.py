"""Capsule-conditioned point decoders.

Each capsule contributes m reconstructed points through a small MLP
(input -> hidden -> m * d_out) shared across capsules. Two conditioning
modes exist, chosen at init:

  * anchored (the elevation branch): the MLP reads the descriptor and
    emits offsets that are translated by the capsule pose, so the pose
    carries the cluster and the descriptor shapes it. Requires the pose
    dimension to equal d_out.
  * conditioned (the spectral branch): the output space (raw spectra,
    R^C_spec) differs from the pose space, so no translation is
    possible; the MLP reads concat(descriptor, pose) and emits the
    points directly.

Concatenating the clusters of all K capsules yields (K * m, d_out)
points, scored against the branch's reconstruction target with the
chamfer distance.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor, concat, matmul, relu, reshape
from .capsule_block import fan_uniform

__all__ = ["init_decoder", "decode"]


def init_decoder(c: int, pose_dim: int, d_out: int, m: int, h: int,
                 rng: np.random.Generator, anchored: bool) -> dict:
    """Build decoder parameters.

    c: descriptor length; pose_dim: pose length; d_out: output point
    dimension; m: points per capsule; h: hidden width. anchored mode
    requires pose_dim == d_out.
    """
    if m < 1 or d_out < 1 or h < 1 or c < 1 or pose_dim < 1:
        raise ValueError("all decoder dimensions must be positive")
    if anchored and pose_dim != d_out:
        raise ValueError(
            "anchored decoding translates by the pose, so pose_dim must "
            f"equal d_out (got {pose_dim} vs {d_out})"
        )
    d_in = c if anchored else c + pose_dim
    return {
        "w1": Tensor(fan_uniform(rng, d_in, h, (d_in, h))),
        "b1": Tensor(np.zeros(h)),
        "w2": Tensor(fan_uniform(rng, h, m * d_out, (h, m * d_out))),
        "b2": Tensor(np.zeros(m * d_out)),
        "m": m,
        "d_out": d_out,
        "anchored": anchored,
    }


def _decode(params: dict, poses: Tensor, descriptors: Tensor) -> Tensor:
    m, d_out = params["m"], params["d_out"]
    lead = descriptors.data.shape[:-1]  # (..., K)
    x = descriptors if params["anchored"] else concat([descriptors, poses], axis=-1)
    hidden = relu(matmul(x, params["w1"]) + params["b1"])
    out = matmul(hidden, params["w2"]) + params["b2"]
    out = reshape(out, lead + (m, d_out))
    if params["anchored"]:
        out = out + reshape(poses, lead + (1, d_out))
    return reshape(out, lead[:-1] + (lead[-1] * m, d_out))


def decode(params: dict, poses, descriptors):
    """Reconstruct (..., K*m, d_out) points from poses (..., K, D) and
    descriptors (..., K, C)."""
    if isinstance(poses, Tensor):
        return _decode(params, poses, descriptors)
    poses = np.asarray(poses, dtype=np.float64)
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if poses.ndim != 2 or descriptors.ndim != 2:
        raise ValueError("expected poses (K, D) and descriptors (K, C)")
    if poses.shape[0] != descriptors.shape[0]:
        raise ValueError("poses and descriptors must have one row per capsule")
    if params["anchored"] and poses.shape[1] != params["d_out"]:
        raise ValueError(
            f"poses are {poses.shape[1]}-D but the decoder emits "
            f"{params['d_out']}-D points"
        )
    out = _decode(params, as_tensor(poses[None]), as_tensor(descriptors[None]))
    return out.data[0]
