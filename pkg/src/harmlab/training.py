"""Training loop, L1 objective, and bucketed evaluation reports.

Training is strictly single-threaded and deterministic: a seeded shuffle
fixes the sample order, every forward/backward runs on a fresh tape, and the
learning rate drops by the decay factor once each milestone step has passed.
The loss is the mean absolute difference between the composed output and the
ground truth (background pixels match by construction and contribute zero).

Evaluation may fan out over samples; the report assembler merges by sample id
so the result is identical for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as tc
from .errors import TrainingError
from .imaging import BUCKET_LABELS, MetricsRecord, compose, metrics, ratio_bucket
from .optim import AdamState, adam_step
from .synthdata import Sample, load_dataset
from .tensor import Graph, Tensor
from .unet import GeneratorModel, UNetConfig, save_checkpoint, unet_forward


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference; subgradient sign(a - b)/count with sign(0) = 0."""
    return tc.mean_all(tc.absolute(tc.sub(a, b)))


@dataclass(frozen=True)
class TrainConfig:
    data_dir: str
    steps: int = 2000
    batch_size: int = 1
    lr: float = 1e-3
    # Fractional milestone positions within the run, mirroring a decay at
    # epochs 100 and 110 of a 120-epoch schedule.
    milestones: tuple[float, ...] = (100.0 / 120.0, 110.0 / 120.0)
    decay: float = 0.1
    seed: int = 0
    block: str = "srin"
    unet: UNetConfig = field(default_factory=UNetConfig)
    val_dir: Optional[str] = None
    checkpoint_out: Optional[str] = None

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        prev = 0.0
        for m in self.milestones:
            if not (prev < m < 1.0):
                raise ValueError(f"milestones must be strictly increasing within (0, 1), got {self.milestones}")
            prev = m

    def effective_unet(self) -> UNetConfig:
        return replace(self.unet, block=self.block)


@dataclass
class LossEntry:
    step: int
    lr: float
    loss: float
    # True when the bottleneck block hit an empty region at feature
    # resolution during this step and fell back to pass-through
    block_degenerate: bool = False

    def line(self) -> str:
        return f"{self.step},{self.lr:.10g},{self.loss:.12g}"


def lr_at_step(cfg: TrainConfig, step: int) -> float:
    """Learning rate for a 1-indexed step; each milestone takes effect after floor(frac*steps)."""
    drops = sum(1 for m in cfg.milestones if step > math.floor(m * cfg.steps))
    return cfg.lr * (cfg.decay ** drops)


def train(
    cfg: TrainConfig,
    samples: Optional[Sequence[Sample]] = None,
    on_step: Optional[Callable[[LossEntry], None]] = None,
    on_validate: Optional[Callable[[int, "EvalReport"], None]] = None,
) -> tuple[GeneratorModel, list[LossEntry]]:
    """Train a generator from scratch; returns the model and per-step loss history.

    ``samples`` overrides loading from ``cfg.data_dir`` (used by tests and
    callers that already hold the data in memory). When a validation set is
    configured, ``on_validate`` fires every 10% of the run and once at the end.
    """
    data = list(samples) if samples is not None else load_dataset(cfg.data_dir)
    if not data:
        raise TrainingError(f"no samples to train on in {cfg.data_dir!r}")
    val_data = load_dataset(cfg.val_dir) if cfg.val_dir else None

    model = GeneratorModel.build(cfg.effective_unet(), seed=cfg.seed)
    names = [n for n, _ in model.named_parameters()]
    params = model.parameters()
    state = AdamState(lr=cfg.lr, names=names)

    order_rng = np.random.Generator(np.random.PCG64(cfg.seed))
    queue: list[int] = []
    history: list[LossEntry] = []
    val_every = max(1, cfg.steps // 10)

    prepared = [(s.composite.planar(), s.mask.values, s.semantic.planar(), s.real.planar()) for s in data]

    for step in range(1, cfg.steps + 1):
        state.lr = lr_at_step(cfg, step)
        model.zero_grad()
        batch_loss = 0.0
        degenerate = False
        for _ in range(cfg.batch_size):
            if not queue:
                queue = list(order_rng.permutation(len(data)))
            idx = queue.pop()
            comp, mask, sem, real = prepared[idx]
            with Graph() as graph:
                out = model.forward_tensor(comp, mask, sem)
                loss = l1_loss(out, Tensor(real))
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    raise TrainingError(
                        f"non-finite loss {loss_value} at step {step} (sample {data[idx].id}, lr {state.lr:g})"
                    )
                graph.backward(loss)
            batch_loss += loss_value
            degenerate = degenerate or model.last_block_degenerate
        inv_b = 1.0 / cfg.batch_size
        adam_step(params, [None if p.grad is None else p.grad * inv_b for p in params], state)

        entry = LossEntry(
            step=step, lr=state.lr, loss=batch_loss * inv_b, block_degenerate=degenerate
        )
        history.append(entry)
        if on_step is not None:
            on_step(entry)
        if val_data is not None and (step % val_every == 0 or step == cfg.steps) and on_validate is not None:
            on_validate(step, evaluate(model, val_data))

    model.zero_grad()
    if cfg.checkpoint_out:
        save_checkpoint(model, cfg.checkpoint_out)
    return model, history


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class BucketStats:
    count: int = 0
    mse_sum: float = 0.0
    psnr_sum: float = 0.0
    fmse_sum: float = 0.0
    fmse_count: int = 0

    def add(self, rec: MetricsRecord) -> None:
        self.count += 1
        self.mse_sum += rec.mse
        self.psnr_sum += rec.psnr
        if rec.fmse is not None:
            self.fmse_sum += rec.fmse
            self.fmse_count += 1

    def mean_mse(self) -> Optional[float]:
        return self.mse_sum / self.count if self.count else None

    def mean_psnr(self) -> Optional[float]:
        return self.psnr_sum / self.count if self.count else None

    def mean_fmse(self) -> Optional[float]:
        return self.fmse_sum / self.fmse_count if self.fmse_count else None


@dataclass
class EvalReport:
    per_sample: list[tuple[str, MetricsRecord]]
    buckets: list[BucketStats]
    overall: BucketStats

    def csv_lines(self) -> list[str]:
        lines = ["id,fg_ratio,bucket,mse,fmse,psnr"]
        for sid, rec in self.per_sample:
            fmse = f"{rec.fmse:.6f}" if rec.fmse is not None else ""
            lines.append(
                f"{sid},{rec.fg_ratio:.6f},{ratio_bucket(rec.fg_ratio)},{rec.mse:.6f},{fmse},{rec.psnr:.4f}"
            )
        return lines

    def summary_text(self) -> str:
        def fmt(v: Optional[float]) -> str:
            return f"{v:10.4f}" if v is not None else " " * 9 + "-"

        rows = [f"{'ratio bucket':>14} {'count':>6} {'MSE':>10} {'fMSE':>10} {'PSNR':>10}"]
        for label, st in zip(BUCKET_LABELS, self.buckets):
            rows.append(
                f"{label:>14} {st.count:>6} {fmt(st.mean_mse())} {fmt(st.mean_fmse())} {fmt(st.mean_psnr())}"
            )
        st = self.overall
        rows.append(
            f"{'overall':>14} {st.count:>6} {fmt(st.mean_mse())} {fmt(st.mean_fmse())} {fmt(st.mean_psnr())}"
        )
        return "\n".join(rows)


def evaluate(model: GeneratorModel, samples: Sequence[Sample], workers: int = 1) -> EvalReport:
    """Forward + compose + metrics for every sample, aggregated per ratio bucket."""

    def one(sample: Sample) -> tuple[str, MetricsRecord]:
        out = unet_forward(model, sample.composite, sample.mask, sample.semantic)
        composed = compose(out, sample.composite, sample.mask)
        return sample.id, metrics(composed, sample.real, sample.mask)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, samples))
    else:
        results = [one(s) for s in samples]
    results.sort(key=lambda pair: pair[0])

    buckets = [BucketStats() for _ in BUCKET_LABELS]
    overall = BucketStats()
    for _, rec in results:
        buckets[ratio_bucket(rec.fg_ratio)].add(rec)
        overall.add(rec)
    return EvalReport(per_sample=results, buckets=buckets, overall=overall)
