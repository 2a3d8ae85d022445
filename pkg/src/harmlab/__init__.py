"""Desk-scale image harmonization lab.

A self-contained numpy package: a tape-based reverse-mode autodiff core, exact
PPM/PGM imaging with harmonization metrics, deterministic synthetic data,
region-aware normalization blocks (including a semantic-attention variant),
a small U-Net generator with bit-exact checkpoints, a deterministic trainer,
and Bradley-Terry ranking from pairwise preferences.
"""

from . import tensor
from .blocks import (
    EPS_DEFAULT,
    Modulation,
    SrinParams,
    SrinResult,
    rain_forward,
    region_instance_norm,
    srin_forward,
)
from .btrank import BtResult, PairwiseWins, bt_fit, read_pairs_csv, scores_csv
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    DegenerateAttentionError,
    GenerationError,
    HarmlabError,
    OptimizerError,
    ParseError,
    RankingError,
    ShapeError,
    TrainingError,
)
from .gradcheck import GradCheckResult, grad_check
from .imaging import (
    BUCKET_LABELS,
    Image,
    Mask,
    MetricsRecord,
    compose,
    metrics,
    ratio_bucket,
    read_pgm,
    read_ppm,
    write_pgm,
    write_ppm,
)
from .optim import AdamState, adam_step
from .synthdata import GenConfig, Sample, generate_dataset, generate_sample, load_dataset, write_dataset
from .tensor import Graph, Tensor
from .training import EvalReport, LossEntry, TrainConfig, evaluate, l1_loss, train
from .unet import (
    BLOCK_KINDS,
    GeneratorModel,
    UNetConfig,
    load_checkpoint,
    save_checkpoint,
    unet_forward,
)
from .verify import reference_srin, run_suite

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BLOCK_KINDS",
    "BUCKET_LABELS",
    "BtResult",
    "CheckpointError",
    "ConfigError",
    "DatasetError",
    "DegenerateAttentionError",
    "EPS_DEFAULT",
    "EvalReport",
    "GenConfig",
    "GeneratorModel",
    "GenerationError",
    "GradCheckResult",
    "Graph",
    "HarmlabError",
    "Image",
    "LossEntry",
    "Mask",
    "MetricsRecord",
    "Modulation",
    "OptimizerError",
    "PairwiseWins",
    "ParseError",
    "RankingError",
    "Sample",
    "ShapeError",
    "SrinParams",
    "SrinResult",
    "Tensor",
    "TrainConfig",
    "TrainingError",
    "UNetConfig",
    "adam_step",
    "bt_fit",
    "compose",
    "evaluate",
    "generate_dataset",
    "generate_sample",
    "grad_check",
    "l1_loss",
    "load_checkpoint",
    "load_dataset",
    "metrics",
    "rain_forward",
    "ratio_bucket",
    "read_pairs_csv",
    "read_pgm",
    "read_ppm",
    "reference_srin",
    "region_instance_norm",
    "run_suite",
    "save_checkpoint",
    "scores_csv",
    "srin_forward",
    "tensor",
    "train",
    "unet_forward",
    "write_dataset",
    "write_pgm",
    "write_ppm",
]
