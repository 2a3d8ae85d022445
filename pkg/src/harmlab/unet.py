"""Harmonization generator: a small U-Net with a normalization block at the bottleneck.

The network maps a 4-channel stack (composite RGB + foreground mask) through
stride-2 encoder convolutions, applies the configured bottleneck block with
the mask and semantic map resampled to feature resolution, then decodes with
nearest-neighbor upsampling and skip concatenations. The 3-channel output head
is residual: its prediction is added to the composite, clamped to [0, 1], and
composed with the composite so background pixels pass through exactly.

Checkpoints are a flat binary format (documented in docs/checkpoint-format.md):
magic ``SRN1``, the configuration as little-endian u32 fields, then every
parameter tensor in enumeration order as (rank, dims..., float64 payload).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tc
from .blocks import EPS_DEFAULT, SrinParams, rain_forward, srin_forward
from .errors import CheckpointError, ShapeError
from .imaging import Image, Mask, PathLike
from .tensor import Tensor

BLOCK_KINDS = ("none", "rain", "srin")

_MAGIC = b"SRN1"


@dataclass(frozen=True)
class UNetConfig:
    size: int = 64
    stages: int = 3
    base_channels: int = 16
    block: str = "none"
    residual: bool = True

    def __post_init__(self):
        if self.size < 16 or (self.size & (self.size - 1)) != 0:
            raise ValueError(f"size must be a power of two >= 16, got {self.size}")
        if self.stages < 1:
            raise ValueError("need at least one encoder stage")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        if self.size >> self.stages < 4:
            raise ValueError(
                f"bottleneck resolution {self.size >> self.stages} < 4; reduce stages or enlarge size"
            )
        if self.block not in BLOCK_KINDS:
            raise ValueError(f"block must be one of {BLOCK_KINDS}, got {self.block!r}")

    def stage_channels(self) -> list[int]:
        return [self.base_channels * (1 << i) for i in range(self.stages)]


def nearest_indices(src: int, dst: int) -> np.ndarray:
    """Index map for nearest-neighbor downsampling by the integer factor src/dst."""
    f = src // dst
    return np.arange(dst) * f + f // 2


def downsample_mask(mask: np.ndarray, dst: int) -> np.ndarray:
    idx = nearest_indices(mask.shape[0], dst)
    return mask[np.ix_(idx, idx)]


def downsample_planar(arr: np.ndarray, dst: int) -> np.ndarray:
    idx = nearest_indices(arr.shape[1], dst)
    return arr[:, idx][:, :, idx]


class GeneratorModel:
    """Convolution weights plus optional attention-block parameters.

    Parameter enumeration order is fixed (encoder shallow to deep, block
    parameters, decoder deep to shallow, output head) and is the checkpoint
    contract.
    """

    def __init__(
        self,
        config: UNetConfig,
        encoder: list[tuple[Tensor, Tensor]],
        decoder: list[tuple[Tensor, Tensor]],
        head: tuple[Tensor, Tensor],
        block_params: Optional[SrinParams],
    ):
        self.config = config
        self.encoder = encoder
        self.decoder = decoder  # deep-to-shallow order
        self.head = head
        self.block_params = block_params
        # set by forward_tensor: True when the block saw an empty region at
        # feature resolution and passed the features through unchanged
        self.last_block_degenerate = False

    # -- construction -------------------------------------------------------

    @staticmethod
    def _layer_plan(config: UNetConfig) -> tuple[list[tuple[int, int]], list[tuple[int, int]], tuple[int, int]]:
        """(encoder, decoder, head) conv channel pairs (in, out)."""
        chans = config.stage_channels()
        enc = []
        prev = 4
        for c in chans:
            enc.append((prev, c))
            prev = c
        dec = []
        for i in range(config.stages, 0, -1):
            c_i = chans[i - 1]
            skip = chans[i - 2] if i >= 2 else 4
            out = chans[i - 2] if i >= 2 else config.base_channels
            dec.append((c_i + skip, out))
        head = (config.base_channels, 3)
        return enc, dec, head

    @classmethod
    def build(cls, config: UNetConfig, seed: int = 0) -> "GeneratorModel":
        # Block parameters come from their own stream so the convolution init
        # is identical across block settings (ablations compare blocks, not
        # accidental init shifts).
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
        rng_block = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))

        def conv(c_in: int, c_out: int) -> tuple[Tensor, Tensor]:
            a = np.sqrt(1.0 / (c_in * 9))
            w = Tensor(rng.uniform(-a, a, size=(c_out, c_in, 3, 3)), requires_grad=True)
            b = Tensor(rng.uniform(-a, a, size=(c_out,)), requires_grad=True)
            return w, b

        enc_plan, dec_plan, head_plan = cls._layer_plan(config)
        encoder = [conv(ci, co) for ci, co in enc_plan]
        block = SrinParams.create(config.stage_channels()[-1], rng_block) if config.block == "srin" else None
        decoder = [conv(ci, co) for ci, co in dec_plan]
        head = conv(*head_plan)
        return cls(config, encoder, decoder, head, block)

    # -- parameters ----------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for i, (w, b) in enumerate(self.encoder, start=1):
            out += [(f"enc{i}.w", w), (f"enc{i}.b", b)]
        if self.block_params is not None:
            out += self.block_params.named()
        for j, (w, b) in enumerate(self.decoder):
            stage = self.config.stages - j
            out += [(f"dec{stage}.w", w), (f"dec{stage}.b", b)]
        out += [("head.w", self.head[0]), ("head.b", self.head[1])]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    # -- forward -------------------------------------------------------------

    def forward_tensor(self, composite, mask: np.ndarray, semantic: np.ndarray) -> Tensor:
        """Run the network; returns the composed [3, S, S] output tensor.

        ``composite`` may be a Tensor (to differentiate with respect to the
        input) or a plain array. ``mask`` and ``semantic`` are constants.
        """
        size = self.config.size
        comp_t = composite if isinstance(composite, Tensor) else Tensor(np.asarray(composite, dtype=np.float64))
        if comp_t.shape != (3, size, size):
            raise ShapeError(f"composite shape {comp_t.shape}, expected (3, {size}, {size})")
        m = tc.as_site_mask(mask, size, size)
        sem = np.asarray(semantic, dtype=np.float64)
        if sem.shape != (3, size, size):
            raise ShapeError(f"semantic shape {sem.shape}, expected (3, {size}, {size})")

        x = tc.concat_channels(comp_t, Tensor(m[None]))
        skips = [x]
        cur = x
        for w, b in self.encoder:
            cur = tc.relu(tc.conv3x3(cur, w, b, stride=2))
            skips.append(cur)

        feat_size = size >> self.config.stages
        self.last_block_degenerate = False
        if self.config.block in ("rain", "srin"):
            mask_f = downsample_mask(m, feat_size)
            fg = int(mask_f.sum())
            self.last_block_degenerate = fg == 0 or fg == mask_f.size
            if self.config.block == "rain":
                cur = rain_forward(cur, mask_f, EPS_DEFAULT)
            else:
                cur = srin_forward(
                    cur, mask_f, downsample_planar(sem, feat_size), self.block_params, EPS_DEFAULT
                ).output

        for j, (w, b) in enumerate(self.decoder):
            stage = self.config.stages - j
            cur = tc.upsample2(cur)
            cur = tc.concat_channels(cur, skips[stage - 1])
            cur = tc.relu(tc.conv3x3(cur, w, b, stride=1))

        delta = tc.conv3x3(cur, self.head[0], self.head[1], stride=1)
        raw = tc.add(delta, comp_t) if self.config.residual else delta
        clamped = tc.clamp01(raw)
        return tc.blend(clamped, comp_t, m)


def unet_forward(model: GeneratorModel, composite: Image, mask: Mask, semantic: Image) -> Image:
    """Image-level forward pass (no gradient recording)."""
    size = model.config.size
    for img, what in ((composite, "composite"), (semantic, "semantic")):
        if (img.height, img.width) != (size, size):
            raise ShapeError(f"{what} is {img.height}x{img.width}, model expects {size}x{size}")
    if (mask.height, mask.width) != (size, size):
        raise ShapeError(f"mask is {mask.height}x{mask.width}, model expects {size}x{size}")
    out = model.forward_tensor(composite.planar(), mask.values, semantic.planar())
    return Image.from_planar(out.data)


# ---------------------------------------------------------------------------
# checkpoints


_BLOCK_CODES = {name: i for i, name in enumerate(BLOCK_KINDS)}


def save_checkpoint(model: GeneratorModel, path: PathLike) -> None:
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<5I", cfg.size, cfg.stages, cfg.base_channels, _BLOCK_CODES[cfg.block], int(cfg.residual)
            )
        )
        for _, t in model.named_parameters():
            dims = t.shape
            fh.write(struct.pack("<I", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path: PathLike, expected_config: Optional[UNetConfig] = None) -> GeneratorModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    if len(blob) < 4 + 20:
        raise CheckpointError(f"{path}: truncated header")
    size, stages, base_channels, block_code, residual = struct.unpack_from("<5I", blob, 4)
    if block_code >= len(BLOCK_KINDS):
        raise CheckpointError(f"{path}: unknown block code {block_code}")
    try:
        config = UNetConfig(
            size=size, stages=stages, base_channels=base_channels,
            block=BLOCK_KINDS[block_code], residual=bool(residual),
        )
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid configuration: {exc}") from exc
    if expected_config is not None and config != expected_config:
        raise CheckpointError(f"{path}: checkpoint config {config} does not match expected {expected_config}")

    model = GeneratorModel.build(config, seed=0)
    pos = 24
    for idx, (name, t) in enumerate(model.named_parameters()):
        want = t.shape
        if pos + 4 > len(blob):
            raise CheckpointError(f"{path}: truncated at tensor {idx} ({name}): missing rank")
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if rank != len(want) or pos + 4 * rank > len(blob):
            raise CheckpointError(f"{path}: tensor {idx} ({name}): bad rank {rank}, expected {len(want)}")
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        if tuple(dims) != want:
            raise CheckpointError(f"{path}: tensor {idx} ({name}): shape {dims}, expected {want}")
        nbytes = 8 * int(np.prod(dims))
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated at tensor {idx} ({name}): payload short")
        t.data = np.frombuffer(blob, dtype="<f8", count=int(np.prod(dims)), offset=pos).reshape(want).copy()
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes after last tensor")
    return model
