"""Region-restricted normalization blocks for the generator bottleneck.

Three variants over a [C, H, W] feature map with a binary foreground mask at
feature resolution:

* ``region_instance_norm`` standardizes every site by the foreground region's
  per-channel statistics.
* ``rain_forward`` re-dresses the normalized foreground with the background
  region's global statistics and passes background sites through untouched.
* ``srin_forward`` derives spatially varying scale/shift modulation from
  cross-attention: queries come from a color-coded semantic map, keys from the
  normalized features, and attention is restricted to background key sites, so
  each foreground site aggregates background features from semantically
  related regions.

All blocks are pure, reentrant, and differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tc
from .errors import ShapeError
from .tensor import LARGE, Tensor

EPS_DEFAULT = 1e-5  # added to variances before the square root


@dataclass
class SrinParams:
    """Weights of the five 1x1 convolutions of the semantic-attention block."""

    w_query: Tensor  # [C, 3] from the 3-channel semantic map
    b_query: Tensor
    w_key: Tensor  # [C, C]
    b_key: Tensor
    w_value: Tensor  # [C, C]
    b_value: Tensor
    w_gamma: Tensor  # [C, C]
    b_gamma: Tensor
    w_beta: Tensor  # [C, C]
    b_beta: Tensor

    @property
    def channels(self) -> int:
        return self.w_key.shape[0]

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator) -> "SrinParams":
        def u(shape, fan_in):
            a = np.sqrt(1.0 / fan_in)
            return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)

        return cls(
            w_query=u((channels, 3), 3), b_query=u((channels,), 3),
            w_key=u((channels, channels), channels), b_key=u((channels,), channels),
            w_value=u((channels, channels), channels), b_value=u((channels,), channels),
            w_gamma=u((channels, channels), channels), b_gamma=u((channels,), channels),
            w_beta=u((channels, channels), channels), b_beta=u((channels,), channels),
        )

    def named(self) -> list[tuple[str, Tensor]]:
        return [
            ("block.w_query", self.w_query), ("block.b_query", self.b_query),
            ("block.w_key", self.w_key), ("block.b_key", self.b_key),
            ("block.w_value", self.w_value), ("block.b_value", self.b_value),
            ("block.w_gamma", self.w_gamma), ("block.b_gamma", self.b_gamma),
            ("block.w_beta", self.w_beta), ("block.b_beta", self.b_beta),
        ]


@dataclass
class Modulation:
    """Per-site, per-channel scale and shift; nonnegative, zero at background sites."""

    gamma: Tensor
    beta: Tensor


@dataclass
class SrinResult:
    output: Tensor
    attention: Optional[Tensor]  # [N, N] row-stochastic, N = H*W
    modulation: Optional[Modulation]
    degenerate: bool


def region_instance_norm(
    feat: Tensor, mask_f, eps: float = EPS_DEFAULT
) -> tuple[Tensor, Optional[Tensor], Optional[Tensor], bool]:
    """Standardize all sites by the masked region's per-channel mean/std.

    Returns ``(normed, mean, std, degenerate)``. With an empty region the
    input passes through unchanged and ``degenerate`` is True.
    """
    mean, var, count = tc.masked_channel_stats(feat, mask_f)
    if count == 0:
        return feat, None, None, True
    std = tc.sqrt(tc.add_scalar(var, eps))
    return tc.normalize_channels(feat, mean, std), mean, std, False


def rain_forward(feat: Tensor, mask_f, eps: float = EPS_DEFAULT) -> Tensor:
    """Re-dress foreground-normalized features with global background statistics.

    Foreground sites become ``std_bg * normed + mean_bg``; background sites pass
    through exactly. Identity when either region is empty.
    """
    m = tc.as_site_mask(mask_f, feat.shape[1], feat.shape[2])
    fg_count = int(m.sum())
    if fg_count == 0 or fg_count == m.size:
        return feat
    normed, _, _, _ = region_instance_norm(feat, m, eps)
    bg_mean, bg_var, _ = tc.masked_channel_stats(feat, 1.0 - m)
    bg_std = tc.sqrt(tc.add_scalar(bg_var, eps))
    dressed = tc.channel_affine(normed, bg_std, bg_mean)
    return tc.blend(dressed, feat, m)


def attention_bias(mask_flat: np.ndarray) -> np.ndarray:
    """Additive [N, N] logit mask that suppresses foreground key columns."""
    n = mask_flat.size
    bias = np.zeros((n, n), dtype=np.float64)
    bias[:, mask_flat.astype(bool)] = -LARGE
    return bias


def srin_forward(
    feat: Tensor,
    mask_f,
    sem_f,
    params: SrinParams,
    eps: float = EPS_DEFAULT,
) -> SrinResult:
    """Semantic-guided modulation of region-normalized features.

    Pipeline over flattened sites (N = H*W): normalize by foreground stats;
    project the semantic map to queries, the normalized map to keys, the raw
    map to values; row-softmax the query/key products with foreground key
    columns suppressed; aggregate values per query site; pass the aggregate
    through gated 1x1 heads to get nonnegative gamma/beta restricted to the
    foreground; blend ``gamma * normed + beta`` into the foreground and pass
    the background through exactly. Degenerate (empty) regions return the
    input unchanged.
    """
    c, h, w = feat.shape
    m = tc.as_site_mask(mask_f, h, w)
    n = h * w
    fg_count = int(m.sum())
    if fg_count == 0 or fg_count == n:
        return SrinResult(feat, None, None, True)

    sem_t = sem_f if isinstance(sem_f, Tensor) else Tensor(np.asarray(sem_f, dtype=np.float64))
    if sem_t.shape != (3, h, w):
        raise ShapeError(f"semantic map must be (3, {h}, {w}), got {sem_t.shape}")

    normed, _, _, _ = region_instance_norm(feat, m, eps)

    query = tc.reshape(tc.conv1x1(sem_t, params.w_query, params.b_query), (c, n))
    key = tc.reshape(tc.conv1x1(normed, params.w_key, params.b_key), (c, n))
    value = tc.reshape(tc.conv1x1(feat, params.w_value, params.b_value), (c, n))

    logits = tc.matmul(tc.transpose(query), key)
    attn = tc.softmax_rows(logits, attention_bias(m.reshape(-1)))

    # attended[:, i] aggregates background values for query site i
    attended = tc.matmul(value, tc.transpose(attn))
    attended_map = tc.reshape(attended, (c, h, w))

    gamma = tc.mask_sites(tc.relu(tc.conv1x1(attended_map, params.w_gamma, params.b_gamma)), m)
    beta = tc.mask_sites(tc.relu(tc.conv1x1(attended_map, params.w_beta, params.b_beta)), m)

    modulated = tc.add(tc.mul(gamma, normed), beta)
    out = tc.blend(modulated, feat, m)
    return SrinResult(out, attn, Modulation(gamma=gamma, beta=beta), False)
