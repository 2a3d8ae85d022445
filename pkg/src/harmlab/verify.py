"""Gradient and invariant suite: every differentiable operation, the
normalization blocks, and a tiny end-to-end network, checked against central
differences; plus the value-level invariants (exact selections, attention
contracts, the loop-level reference implementation).

``run_suite`` is what the ``gradcheck`` CLI subcommand executes; each entry
renders as ``op=<name> max_rel_err=<value> pass=<bool>``.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import tensor as tc
from .blocks import EPS_DEFAULT, SrinParams, rain_forward, region_instance_norm, srin_forward
from .gradcheck import GradCheckResult, grad_check
from .tensor import Tensor
from .training import l1_loss
from .unet import GeneratorModel, UNetConfig

DEFAULT_TOL = 1e-4
DEFAULT_H = 1e-5


# ---------------------------------------------------------------------------
# loop-level reference for the semantic-attention block (kept deliberately
# naive and independent of the vectorized path it validates)


def reference_srin(
    feat: np.ndarray, mask: np.ndarray, sem: np.ndarray, params: SrinParams, eps: float = EPS_DEFAULT
) -> np.ndarray:
    c_dim, h, w = feat.shape
    n = h * w
    x = feat.reshape(c_dim, n)
    sm = sem.reshape(3, n)
    flat = mask.reshape(n)
    fg = [i for i in range(n) if flat[i] == 1]
    bg = [i for i in range(n) if flat[i] == 0]
    if not fg or not bg:
        return feat.copy()

    mean = []
    std = []
    for c in range(c_dim):
        s = 0.0
        for i in fg:
            s += x[c, i]
        mu = s / len(fg)
        v = 0.0
        for i in fg:
            v += (x[c, i] - mu) ** 2
        v /= len(fg)
        mean.append(mu)
        std.append(math.sqrt(v + eps))
    normed = [[(x[c, i] - mean[c]) / std[c] for i in range(n)] for c in range(c_dim)]

    def project(wmat, bvec, src, k_dim):
        out = [[0.0] * n for _ in range(c_dim)]
        for c in range(c_dim):
            for i in range(n):
                s = 0.0
                for k in range(k_dim):
                    s += wmat[c, k] * src[k][i]
                out[c][i] = s + bvec[c]
        return out

    query = project(params.w_query.data, params.b_query.data, [sm[r] for r in range(3)], 3)
    key = project(params.w_key.data, params.b_key.data, normed, c_dim)
    value = project(params.w_value.data, params.b_value.data, [x[r] for r in range(c_dim)], c_dim)

    attn = [[0.0] * n for _ in range(n)]
    for i in range(n):
        logits = []
        for j in bg:
            s = 0.0
            for c in range(c_dim):
                s += query[c][i] * key[c][j]
            logits.append(s)
        top = max(logits)
        exps = [math.exp(t - top) for t in logits]
        z = sum(exps)
        for pos, j in enumerate(bg):
            attn[i][j] = exps[pos] / z

    pooled = [[0.0] * n for _ in range(c_dim)]
    for c in range(c_dim):
        for i in range(n):
            s = 0.0
            for j in bg:
                s += attn[i][j] * value[c][j]
            pooled[c][i] = s

    gamma = project(params.w_gamma.data, params.b_gamma.data, pooled, c_dim)
    beta = project(params.w_beta.data, params.b_beta.data, pooled, c_dim)

    out = x.copy()
    for c in range(c_dim):
        for i in fg:
            g = max(gamma[c][i], 0.0)
            b = max(beta[c][i], 0.0)
            out[c, i] = g * normed[c][i] + b
    return out.reshape(c_dim, h, w)


def random_srin_instance(rng: np.random.Generator, c_max: int = 3, hw_max: int = 4):
    """Random small feature map, mask with both regions nonempty, semantic map, params."""
    c = int(rng.integers(1, c_max + 1))
    hw = int(rng.integers(2, hw_max + 1))
    feat = rng.normal(size=(c, hw, hw))
    while True:
        mask = (rng.uniform(size=(hw, hw)) < 0.4).astype(np.float64)
        if 0 < mask.sum() < mask.size:
            break
    sem = rng.uniform(0.0, 1.0, size=(3, hw, hw))
    params = SrinParams.create(c, rng)
    return feat, mask, sem, params


# ---------------------------------------------------------------------------
# helpers


def _weighted_sum(t: Tensor, w: np.ndarray) -> Tensor:
    return tc.sum_all(tc.mul(t, Tensor(w)))


def _value_check(name: str, violation: float, limit: float) -> GradCheckResult:
    return GradCheckResult(name=name, max_rel_err=violation, passed=violation <= limit)


# ---------------------------------------------------------------------------
# gradient checks per operation


def op_grad_checks(tol: float = DEFAULT_TOL, h: float = DEFAULT_H) -> list[GradCheckResult]:
    rng = np.random.default_rng(20240521)
    results = []

    def check(name: str, fn: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray]):
        results.append(grad_check(fn, [Tensor(a.copy()) for a in arrays], h=h, tol=tol, name=name))

    a34 = rng.normal(size=(3, 4))
    b34 = rng.normal(size=(3, 4))
    w34 = rng.normal(size=(3, 4))
    check("add", lambda ts: _weighted_sum(tc.add(ts[0], ts[1]), w34), [a34, b34])
    check("sub", lambda ts: _weighted_sum(tc.sub(ts[0], ts[1]), w34), [a34, b34])
    check("mul", lambda ts: _weighted_sum(tc.mul(ts[0], ts[1]), w34), [a34, b34])
    check("scale", lambda ts: _weighted_sum(tc.scale(ts[0], -1.7), w34), [a34])
    check("add_scalar", lambda ts: _weighted_sum(tc.add_scalar(ts[0], 0.37), w34), [a34])
    check("sum_all", lambda ts: tc.sum_all(ts[0]), [a34])
    check("mean_all", lambda ts: tc.mean_all(ts[0]), [a34])

    # keep inputs clear of the kinks at 0 (relu, absolute) and 0/1 (clamp01)
    nudged = rng.normal(size=(3, 4))
    nudged = np.where(np.abs(nudged) < 0.05, 0.25, nudged)
    check("relu", lambda ts: _weighted_sum(tc.relu(ts[0]), w34), [nudged])
    check("absolute", lambda ts: _weighted_sum(tc.absolute(ts[0]), w34), [nudged])
    interior = rng.uniform(0.1, 0.9, size=(3, 4))
    check("clamp01", lambda ts: _weighted_sum(tc.clamp01(ts[0]), w34), [interior])
    positive = rng.uniform(0.5, 2.0, size=(3, 4))
    check("sqrt", lambda ts: _weighted_sum(tc.sqrt(ts[0]), w34), [positive])

    w43 = rng.normal(size=(4, 3))
    check("transpose", lambda ts: _weighted_sum(tc.transpose(ts[0]), w43), [a34])
    w26 = rng.normal(size=(2, 6))
    check("reshape", lambda ts: _weighted_sum(tc.reshape(ts[0], (2, 6)), w26), [a34])

    x233 = rng.normal(size=(2, 3, 3))
    y233 = rng.normal(size=(2, 3, 3))
    w433 = rng.normal(size=(4, 3, 3))
    check("concat_channels", lambda ts: _weighted_sum(tc.concat_channels(ts[0], ts[1]), w433), [x233, y233])
    w266 = rng.normal(size=(2, 6, 6))
    check("upsample2", lambda ts: _weighted_sum(tc.upsample2(ts[0]), w266), [x233])

    site_mask = (rng.uniform(size=(3, 3)) < 0.5).astype(np.float64)
    site_mask[0, 0] = 1.0
    site_mask[2, 2] = 0.0
    w233 = rng.normal(size=(2, 3, 3))
    check("blend", lambda ts: _weighted_sum(tc.blend(ts[0], ts[1], site_mask), w233), [x233, y233])
    check("mask_sites", lambda ts: _weighted_sum(tc.mask_sites(ts[0], site_mask), w233), [x233])

    vec2 = rng.normal(size=2)
    pos2 = rng.uniform(0.5, 1.5, size=2)
    check(
        "channel_affine",
        lambda ts: _weighted_sum(tc.channel_affine(ts[0], ts[1], ts[2]), w233),
        [x233, vec2, rng.normal(size=2)],
    )
    check(
        "normalize_channels",
        lambda ts: _weighted_sum(tc.normalize_channels(ts[0], ts[1], ts[2]), w233),
        [x233, rng.normal(size=2), pos2],
    )

    wmm = rng.normal(size=(4, 5))
    check(
        "matmul",
        lambda ts: _weighted_sum(tc.matmul(ts[0], ts[1]), wmm),
        [rng.normal(size=(4, 3)), rng.normal(size=(3, 5))],
    )

    w344 = rng.normal(size=(3, 4, 4))
    check(
        "conv1x1",
        lambda ts: _weighted_sum(tc.conv1x1(ts[0], ts[1], ts[2]), w344),
        [rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2)), rng.normal(size=3)],
    )
    x355 = rng.normal(size=(3, 5, 5))
    k233 = 0.4 * rng.normal(size=(2, 3, 3, 3))
    bias2 = rng.normal(size=2)
    w255 = rng.normal(size=(2, 5, 5))
    check(
        "conv3x3_s1",
        lambda ts: _weighted_sum(tc.conv3x3(ts[0], ts[1], ts[2], stride=1), w255),
        [x355, k233, bias2],
    )
    w2s = rng.normal(size=(2, 3, 3))
    check(
        "conv3x3_s2",
        lambda ts: _weighted_sum(tc.conv3x3(ts[0], ts[1], ts[2], stride=2), w2s),
        [x355, k233, bias2],
    )

    logits = rng.uniform(-3.0, 3.0, size=(4, 5))
    wsm = rng.normal(size=(4, 5))
    check("softmax_rows", lambda ts: _weighted_sum(tc.softmax_rows(ts[0]), wsm), [logits])
    bias_mask = np.zeros((4, 5))
    bias_mask[:, 1] = -tc.LARGE
    bias_mask[:, 3] = -tc.LARGE
    check("softmax_rows_masked", lambda ts: _weighted_sum(tc.softmax_rows(ts[0], bias_mask), wsm), [logits])

    stat_mask = (rng.uniform(size=(4, 4)) < 0.5).astype(np.float64)
    stat_mask[1, 1] = 1.0
    wc = rng.normal(size=3)
    wc2 = rng.normal(size=3)

    def stats_fn(ts):
        mean, var, _ = tc.masked_channel_stats(ts[0], stat_mask)
        return tc.add(_weighted_sum(mean, wc), _weighted_sum(var, wc2))

    check("masked_channel_stats", stats_fn, [rng.normal(size=(3, 4, 4))])

    check(
        "l1_loss",
        lambda ts: l1_loss(ts[0], ts[1]),
        [rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3)) + 2.5],
    )
    return results


def block_grad_checks(tol: float = DEFAULT_TOL, h: float = DEFAULT_H) -> list[GradCheckResult]:
    rng = np.random.default_rng(7151)
    results = []

    mask = (rng.uniform(size=(4, 4)) < 0.5).astype(np.float64)
    mask[0, 0] = 1.0
    mask[3, 3] = 0.0
    wmap = rng.normal(size=(3, 4, 4))
    feat = rng.normal(size=(3, 4, 4))

    w_mean = rng.normal(size=3)
    w_std = rng.normal(size=3)

    def rin_fn(ts):
        normed, mean, std, _ = region_instance_norm(ts[0], mask)
        return tc.add(
            _weighted_sum(normed, wmap),
            tc.add(_weighted_sum(mean, w_mean), _weighted_sum(std, w_std)),
        )

    results.append(grad_check(rin_fn, [Tensor(feat.copy())], h=h, tol=tol, name="region_instance_norm"))

    results.append(
        grad_check(
            lambda ts: _weighted_sum(rain_forward(ts[0], mask), wmap),
            [Tensor(feat.copy())],
            h=h, tol=tol, name="rain_forward",
        )
    )

    feat2, mask2, sem2, params = random_srin_instance(np.random.default_rng(424242), c_max=3, hw_max=4)
    wout = np.random.default_rng(5).normal(size=feat2.shape)
    tensors = [Tensor(feat2.copy())] + [t for _, t in params.named()]

    def srin_fn(ts):
        return _weighted_sum(srin_forward(ts[0], mask2, sem2, params).output, wout)

    results.append(grad_check(srin_fn, tensors, h=h, tol=tol, name="srin_forward"))
    return results


def network_grad_check(tol: float = DEFAULT_TOL, h: float = DEFAULT_H) -> list[GradCheckResult]:
    """End-to-end check of L1-after-forward on the tiny configuration."""
    config = UNetConfig(size=16, stages=1, base_channels=4, block="srin")
    model = GeneratorModel.build(config, seed=11)
    rng = np.random.default_rng(311)
    comp = rng.uniform(0.25, 0.75, size=(3, 16, 16))
    mask = (rng.uniform(size=(16, 16)) < 0.45).astype(np.float64)
    mask[0, 0] = 1.0
    mask[15, 15] = 0.0
    sem = rng.uniform(0.0, 1.0, size=(3, 16, 16))
    ref = rng.uniform(0.2, 0.8, size=(3, 16, 16))
    ref_t = Tensor(ref)

    inputs = [Tensor(comp.copy())] + model.parameters()

    def fn(ts):
        return l1_loss(model.forward_tensor(ts[0], mask, sem), ref_t)

    return [grad_check(fn, inputs, h=h, tol=tol, name="unet_l1_end_to_end")]


# ---------------------------------------------------------------------------
# value-level invariants


def invariant_checks() -> list[GradCheckResult]:
    results = []
    rng = np.random.default_rng(97)

    # public matmul must equal the naive triple loop bit for bit
    worst = 0.0
    for _ in range(5):
        a = rng.normal(size=(5, 5))
        b = rng.normal(size=(5, 5))
        got = tc.matmul(Tensor(a), Tensor(b)).data
        ref = np.empty((5, 5))
        for i in range(5):
            for j in range(5):
                s = 0.0
                for k in range(5):
                    s += a[i, k] * b[k, j]
                ref[i, j] = s
        worst = max(worst, float(np.max(np.abs(got - ref))))
    results.append(_value_check("matmul_triple_loop_exact", worst, 0.0))

    # softmax rows: nonnegative, sum to 1 within 1e-9 for logits in [-50, 50]
    worst = 0.0
    neg = 0.0
    for _ in range(20):
        z = rng.uniform(-50.0, 50.0, size=(6, 7))
        y = tc.softmax_rows(Tensor(z)).data
        worst = max(worst, float(np.max(np.abs(y.sum(axis=1) - 1.0))))
        neg = max(neg, float(max(0.0, -y.min())))
    results.append(_value_check("softmax_row_sums", worst, 1e-9))
    results.append(_value_check("softmax_nonnegative", neg, 0.0))

    # all-ones mask reproduces plain per-channel statistics
    feat = rng.normal(size=(3, 5, 5))
    mean, var, count = tc.masked_channel_stats(Tensor(feat), np.ones((5, 5)))
    ref_mean = feat.mean(axis=(1, 2))
    ref_var = feat.var(axis=(1, 2))
    err = max(
        float(np.max(np.abs(mean.data - ref_mean))),
        float(np.max(np.abs(var.data - ref_var))),
    )
    results.append(_value_check("masked_stats_full_mask", err, 1e-12))

    # attention contracts + oracle agreement + exact pass-through, random instances
    row_sum_err = 0.0
    fg_col_max = 0.0
    mod_neg = 0.0
    mod_bg = 0.0
    passthrough = 0.0
    oracle_err = 0.0
    perm_err = 0.0
    for trial in range(30):
        feat, mask, sem, params = random_srin_instance(np.random.default_rng(1000 + trial))
        res = srin_forward(Tensor(feat), mask, sem, params)
        flat = mask.reshape(-1).astype(bool)
        attn = res.attention.data
        row_sum_err = max(row_sum_err, float(np.max(np.abs(attn.sum(axis=1) - 1.0))))
        fg_col_max = max(fg_col_max, float(np.max(np.abs(attn[:, flat]))) if flat.any() else 0.0)
        gamma = res.modulation.gamma.data
        beta = res.modulation.beta.data
        mod_neg = max(mod_neg, float(max(0.0, -min(gamma.min(), beta.min()))))
        mod_bg = max(mod_bg, float(np.max(np.abs(gamma[:, mask == 0]))), float(np.max(np.abs(beta[:, mask == 0]))))
        out = res.output.data
        passthrough = max(passthrough, float(np.max(np.abs(out[:, mask == 0] - feat[:, mask == 0]))))
        oracle_err = max(oracle_err, float(np.max(np.abs(out - reference_srin(feat, mask, sem, params)))))

        # permuting the flattened site order must permute the output identically
        c, hh, ww = feat.shape
        n = hh * ww
        perm = np.random.default_rng(2000 + trial).permutation(n)
        feat_p = feat.reshape(c, n)[:, perm].reshape(c, hh, ww)
        mask_p = mask.reshape(n)[perm].reshape(hh, ww)
        sem_p = sem.reshape(3, n)[:, perm].reshape(3, hh, ww)
        out_p = srin_forward(Tensor(feat_p), mask_p, sem_p, params).output.data
        expected = out.reshape(c, n)[:, perm].reshape(c, hh, ww)
        perm_err = max(perm_err, float(np.max(np.abs(out_p - expected))))
    results.append(_value_check("attention_row_sums", row_sum_err, 1e-9))
    results.append(_value_check("attention_fg_columns_zero", fg_col_max, 0.0))
    results.append(_value_check("modulation_nonnegative", mod_neg, 0.0))
    results.append(_value_check("modulation_zero_on_background", mod_bg, 0.0))
    results.append(_value_check("srin_background_passthrough", passthrough, 0.0))
    results.append(_value_check("srin_matches_loop_oracle", oracle_err, 1e-10))
    results.append(_value_check("srin_permutation_equivariance", perm_err, 1e-10))
    return results


def run_suite(tol: float = DEFAULT_TOL, h: float = DEFAULT_H) -> list[GradCheckResult]:
    results = []
    results += op_grad_checks(tol, h)
    results += block_grad_checks(tol, h)
    results += network_grad_check(tol, h)
    results += invariant_checks()
    return results
