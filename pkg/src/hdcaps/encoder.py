"""Permutation-equivariant point-set encoder and capsule aggregation.

The encoder lifts each point to a hidden width H, then runs residual
blocks of the form

    weight = softmax over the points of (h @ att_w)
    z      = acn_normalize(h, weight)
    h      = h + relu(z @ lin_w + lin_b)

i.e. features are standardized with attention-weighted moments computed
across the point set, which is what makes the blocks mix information
between points while staying order-equivariant. The attention logits
carry no bias (a shared offset cannot survive the softmax over points)
and the linear map sits after the normalization so its bias is not
cancelled by the mean subtraction. Two linear heads then produce the
attention map A (rows softmaxed over the K capsules, so each point
carries a distribution over capsules) and the feature map F.

Aggregation turns (A, F, P) into capsule poses (attention-weighted point
centroids, rotation-equivariant) and descriptors (attention-weighted
feature means, rotation-invariant).
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    div,
    matmul,
    relu,
    softmax,
    sqrt,
    swapaxes,
    tsum,
)
from .capsule_block import fan_uniform

__all__ = ["init_encoder", "acn_normalize", "encode", "encode_batch", "aggregate"]

ACN_EPS = 1e-5
AGG_EPS = 1e-8


def init_encoder(d_in: int, h: int, n_blocks: int, k: int, c: int,
                 rng: np.random.Generator) -> dict:
    params = {
        "lift_w": Tensor(fan_uniform(rng, d_in, h, (d_in, h))),
        "lift_b": Tensor(np.zeros(h)),
    }
    for i in range(n_blocks):
        # the attention logits carry no bias: softmax over the points axis
        # is shift-invariant, so a shared offset could never train
        params[f"b{i}_att_w"] = Tensor(fan_uniform(rng, h, 1, (h, 1)))
        params[f"b{i}_lin_w"] = Tensor(fan_uniform(rng, h, h, (h, h)))
        params[f"b{i}_lin_b"] = Tensor(np.zeros(h))
    params["att_w"] = Tensor(fan_uniform(rng, h, k, (h, k)))
    params["att_b"] = Tensor(np.zeros(k))
    params["feat_w"] = Tensor(fan_uniform(rng, h, c, (h, c)))
    params["feat_b"] = Tensor(np.zeros(c))
    params["n_blocks"] = n_blocks
    return params


def _acn(features: Tensor, weights: Tensor) -> Tensor:
    """Weighted standardization over the points axis (-2). weights: (..., X, 1)."""
    wsum = tsum(weights, axis=-2, keepdims=True)
    mean = div(tsum(weights * features, axis=-2, keepdims=True), wsum)
    centered = features - mean
    var = div(tsum(weights * centered * centered, axis=-2, keepdims=True), wsum)
    return div(centered, sqrt(var + ACN_EPS))


def acn_normalize(features, weights):
    """Standardize per-point features with weighted moments.

    features: (X, H); weights: (X,) nonnegative with positive sum. Per
    channel, subtract the weighted mean and divide by sqrt(weighted
    variance + 1e-5).
    """
    if isinstance(features, Tensor):
        return _acn(features, weights)
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if features.ndim != 2 or weights.ndim != 1 or weights.shape[0] != features.shape[0]:
        raise ValueError("expected features (X, H) and weights (X,)")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    out = _acn(as_tensor(features), as_tensor(weights[:, None]))
    return out.data


def encode_batch(params: dict, points: Tensor) -> tuple[Tensor, Tensor]:
    """(B, X, D) point sets -> attention maps (B, X, K) and features (B, X, C)."""
    if points.data.shape[-1] != params["lift_w"].data.shape[0]:
        raise ValueError(
            f"points are {points.data.shape[-1]}-D but the encoder expects "
            f"{params['lift_w'].data.shape[0]}-D input"
        )
    h = matmul(points, params["lift_w"]) + params["lift_b"]
    for i in range(params["n_blocks"]):
        weights = softmax(matmul(h, params[f"b{i}_att_w"]), axis=-2)
        z = _acn(h, weights)
        h = h + relu(matmul(z, params[f"b{i}_lin_w"]) + params[f"b{i}_lin_b"])
    attn = softmax(matmul(h, params["att_w"]) + params["att_b"], axis=-1)
    feats = matmul(h, params["feat_w"]) + params["feat_b"]
    return attn, feats


def encode(params: dict, points):
    """Encode one (X, D) point set; returns (A, F) of the input's kind."""
    if isinstance(points, Tensor):
        return encode_batch(params, points)
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must have shape (X, D)")
    a, f = encode_batch(params, as_tensor(pts[None]))
    return a.data[0], f.data[0]


def _aggregate(attn: Tensor, feats: Tensor, points: Tensor) -> tuple[Tensor, Tensor]:
    at = swapaxes(attn, -1, -2)
    denom = swapaxes(tsum(attn, axis=-2, keepdims=True), -1, -2) + AGG_EPS
    poses = div(matmul(at, points), denom)
    descriptors = div(matmul(at, feats), denom)
    return poses, descriptors


def aggregate(attn, feats, points):
    """Capsule poses and descriptors from attention-weighted means.

    pose_k = sum_p A[p,k] P[p] / sum_p A[p,k] and likewise for the
    descriptors over F; the denominator carries a 1e-8 guard. Works on
    (X, K)/(X, C)/(X, D) arrays or on batched (B, ...) Tensors.
    """
    if isinstance(attn, Tensor):
        return _aggregate(attn, feats, points)
    attn = np.asarray(attn, dtype=np.float64)
    feats = np.asarray(feats, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if attn.ndim != 2 or feats.ndim != 2 or points.ndim != 2:
        raise ValueError("aggregate expects 2-D arrays")
    if not (attn.shape[0] == feats.shape[0] == points.shape[0]):
        raise ValueError("row counts of A, F and P must agree")
    poses, descriptors = _aggregate(
        as_tensor(attn[None]), as_tensor(feats[None]), as_tensor(points[None])
    )
    return poses.data[0], descriptors.data[0]
