"""Train a small generator on synthetic data and harmonize a held-out composite.

This is a scaled-down version of the full workflow (a few hundred steps on a
handful of 32x32 samples, under a minute). The CLI wraps the same calls:

    harmlab gen-data --seed 5 --count 12 --out data/ --size 32
    harmlab train --data data/ --block srin --steps 400 --seed 0 --out model.ckpt
    harmlab eval --data data/ --ckpt model.ckpt --report report.csv
    harmlab harmonize --ckpt model.ckpt --comp c.ppm --mask m.pgm --sem s.ppm --out h.ppm

Run from the repository root:  python demos/04_train_and_harmonize.py
"""

import tempfile
from pathlib import Path

from harmlab import (
    GenConfig, TrainConfig, UNetConfig, evaluate, generate_dataset, metrics,
    train, unet_forward, write_ppm,
)

train_samples = generate_dataset(GenConfig(seed=5, size=32), 12)
held_out = generate_dataset(GenConfig(seed=99, size=32), 1)[0]

cfg = TrainConfig(
    data_dir="",  # samples passed directly below
    steps=400,
    block="srin",
    seed=0,
    unet=UNetConfig(size=32, stages=2, base_channels=16),
)
model, history = train(cfg, samples=train_samples)
print(f"trained {cfg.steps} steps: loss {history[0].loss:.4f} -> {history[-1].loss:.4f}")

report = evaluate(model, train_samples)
print("train-set summary:")
print(report.summary_text())

before = metrics(held_out.composite, held_out.real, held_out.mask)
out = unet_forward(model, held_out.composite, held_out.mask, held_out.semantic)
after = metrics(out, held_out.real, held_out.mask)
print(f"\nheld-out sample : composite MSE {before.mse:.1f} -> harmonized MSE {after.mse:.1f}")

with tempfile.TemporaryDirectory() as tmp:
    write_ppm(out, Path(tmp) / "harmonized.ppm")
    print("wrote", Path(tmp) / "harmonized.ppm")
