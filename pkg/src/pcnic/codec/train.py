"""Rate-distortion training with plateau-decayed learning rate and resume.

A run is described by a flat JSON :class:`RunConfig`.  For each lambda the
trainer writes, per epoch, a weights checkpoint (with optimizer state), a
small JSON state file holding the schedule and RNG position, and a loss log
CSV with header ``epoch,mean_loss,lr``.  Loss and lr values are written with
``repr`` so the log round-trips bitwise and a rerun under the same seed
produces an identical file.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from pcnic.autodiff import Adam, load_arrays
from pcnic.codec.engine import save_checkpoint
from pcnic.codec.model import CodecConfig, CodecModel, rd_loss
from pcnic.errors import FormatError, NumericalError, UsageError
from pcnic.kitti import UnifiedSample, assemble_sample

DEFAULT_LR = 1e-4
DEFAULT_LR_FLOOR = 1e-8


@dataclass
class RunConfig:
    """Flat training run description; serialized as one JSON object."""

    out_dir: str = "runs"
    dataset: str = ""
    image_subdir: str = "image_2"
    lidar_subdir: str = "velodyne"
    calib_subdir: str = "calib"
    depth_source: str = "camera-z"
    d_max: float = 80.0
    n: int = 192
    m: int = 288
    depth: int = 4
    context: bool = False
    attention: bool = True
    sigma_min: float = 0.11
    lambdas: list = field(default_factory=lambda: [0.0075])
    lr: float = DEFAULT_LR
    lr_decay: float = 0.1
    lr_floor: float = DEFAULT_LR_FLOOR
    plateau_patience: int = 3
    plateau_rel: float = 1e-3
    epochs: int = 1
    steps_per_epoch: int = 100
    batch_size: int = 4
    crop: int = 256
    seed: int = 0

    def __post_init__(self):
        if not self.lambdas:
            raise UsageError("lambda list must be nonempty")
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise UsageError("epochs, steps_per_epoch and batch_size must be >= 1")
        if self.crop < 16 or self.crop % 16:
            raise UsageError(f"crop must be a positive multiple of 16, got {self.crop}")
        if not (0.0 < self.lr_decay < 1.0):
            raise UsageError(f"lr_decay must be in (0, 1), got {self.lr_decay}")
        if self.lr <= 0 or self.lr_floor <= 0:
            raise UsageError("lr and lr_floor must be positive")

    def codec_config(self, lam: float) -> CodecConfig:
        return CodecConfig(n=self.n, m=self.m, depth=self.depth,
                           context=self.context, attention=self.attention,
                           lam=lam, sigma_min=self.sigma_min, d_max=self.d_max)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise UsageError(f"run config {path} must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise UsageError(f"unknown run config keys: {', '.join(unknown)}")
        return cls(**raw)


def lambda_tag(lam: float) -> str:
    return f"lam{lam:g}"


def discover_triplets(run: RunConfig) -> list[tuple[Path, Path, Path]]:
    """Match image/lidar/calib files by stem under the dataset root."""
    root = Path(run.dataset)
    img_dir = root / run.image_subdir
    if not img_dir.is_dir():
        raise UsageError(f"image directory {img_dir} does not exist")
    images = sorted(img_dir.glob("*.png"))
    if not images:
        raise UsageError(f"no .png images under {img_dir}")
    triplets = []
    for img in images:
        lidar = root / run.lidar_subdir / (img.stem + ".bin")
        calib = root / run.calib_subdir / (img.stem + ".txt")
        if not lidar.is_file():
            raise FormatError(f"missing LiDAR scan {lidar}")
        if not calib.is_file():
            raise FormatError(f"missing calibration file {calib}")
        triplets.append((img, lidar, calib))
    return triplets


def load_dataset(run: RunConfig) -> list[UnifiedSample]:
    samples = []
    for img, lidar, calib in discover_triplets(run):
        samples.append(assemble_sample(img, lidar, calib,
                                       depth_source=run.depth_source,
                                       d_max=run.d_max))
    return samples


def train_step(batch, model: CodecModel, optimizer: Adam, lam: float,
               rng: np.random.Generator) -> float:
    """One optimizer update on the mean RD loss over the batch."""
    if not batch:
        raise UsageError("empty batch")
    losses = []
    for sample in batch:
        data = sample.data if isinstance(sample, UnifiedSample) else np.asarray(sample)
        out = model.forward_train(data, rng)
        losses.append(rd_loss(out, lam, data.shape[1] * data.shape[2]))
    total = losses[0]
    for t in losses[1:]:
        total = total + t
    loss = total * (1.0 / len(losses))
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.data)


class Trainer:
    """Trains one lambda point of a run; emits checkpoint + state + loss log."""

    def __init__(self, run: RunConfig, lam: float, samples=None):
        self.run = run
        self.lam = lam
        self.samples = samples if samples is not None else load_dataset(run)
        if not self.samples:
            raise UsageError("no training samples")
        for s in self.samples:
            data = s.data if isinstance(s, UnifiedSample) else np.asarray(s)
            if data.shape[1] < run.crop or data.shape[2] < run.crop:
                raise UsageError(
                    f"sample {data.shape[1]}x{data.shape[2]} smaller than "
                    f"crop {run.crop}")
        out = Path(run.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tag = lambda_tag(lam)
        self.ckpt_path = out / f"{tag}.pcnw"
        self.state_path = out / f"{tag}.state.json"
        self.loss_path = out / f"{tag}.loss.csv"

        # Each lambda point gets its own seed stream so rate points start
        # from independent inits instead of byte-identical ones.
        lam_bits = int(np.frombuffer(np.float64(lam).tobytes(), "<u8")[0])
        self.rng = np.random.default_rng([run.seed, lam_bits])
        self.model = CodecModel(run.codec_config(lam), self.rng)
        self.optimizer = Adam(self.model.parameters_dict(), lr=run.lr)
        self.epoch = 0
        self.best = math.inf
        self.bad_epochs = 0
        self.log_rows: list[tuple[int, float, float]] = []

    # -- state ------------------------------------------------------------

    def _save_state(self) -> None:
        save_checkpoint(self.model, self.ckpt_path, optimizer=self.optimizer)
        state = {
            "epoch": self.epoch,
            "lr": self.optimizer.lr,
            "best": self.best,
            "bad_epochs": self.bad_epochs,
            "rng_state": self.rng.bit_generator.state,
            "log": [[e, repr(l), repr(r)] for e, l, r in self.log_rows],
        }
        with open(self.state_path, "w", encoding="utf-8") as fh:
            json.dump(state, fh)
            fh.write("\n")
        with open(self.loss_path, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_loss,lr\n")
            for e, loss, lr in self.log_rows:
                fh.write(f"{e},{loss!r},{lr!r}\n")

    def resume(self) -> bool:
        """Restore the last saved epoch boundary; returns False if absent."""
        if not (os.path.exists(self.state_path) and os.path.exists(self.ckpt_path)):
            return False
        arrays = load_arrays(self.ckpt_path)
        for name, p in self.model.named_parameters():
            if name not in arrays:
                raise FormatError(f"resume checkpoint missing array {name!r}")
            p.data = arrays[name].astype(self.model.dtype)
        self.optimizer.load_state_arrays(
            {k: v for k, v in arrays.items() if k.startswith("opt.")})
        with open(self.state_path, "r", encoding="utf-8") as fh:
            state = json.load(fh)
        self.epoch = int(state["epoch"])
        self.optimizer.lr = float(state["lr"])
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])
        self.rng.bit_generator.state = state["rng_state"]
        self.log_rows = [(int(e), float(l), float(r)) for e, l, r in state["log"]]
        return True

    # -- training ---------------------------------------------------------

    def _draw_batch(self):
        idx = self.rng.integers(0, len(self.samples), size=self.run.batch_size)
        crop = self.run.crop
        batch = []
        for i in idx:
            s = self.samples[int(i)]
            data = s.data if isinstance(s, UnifiedSample) else np.asarray(s)
            top = int(self.rng.integers(0, data.shape[1] - crop + 1))
            left = int(self.rng.integers(0, data.shape[2] - crop + 1))
            batch.append(data[:, top:top + crop, left:left + crop])
        return batch

    def _update_schedule(self, mean_loss: float) -> None:
        if mean_loss < self.best * (1.0 - self.run.plateau_rel):
            self.best = mean_loss
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs >= self.run.plateau_patience:
            self.optimizer.lr = max(self.optimizer.lr * self.run.lr_decay,
                                    self.run.lr_floor)
            self.bad_epochs = 0

    def train(self, *, resume: bool = False) -> list[tuple[int, float, float]]:
        if resume:
            self.resume()
        while self.epoch < self.run.epochs:
            losses = []
            for step in range(self.run.steps_per_epoch):
                batch = self._draw_batch()
                loss = train_step(batch, self.model, self.optimizer,
                                  self.lam, self.rng)
                if not math.isfinite(loss):
                    raise NumericalError(
                        f"non-finite loss at epoch {self.epoch} step {step}")
                losses.append(loss)
            mean_loss = float(np.mean(losses))
            self.log_rows.append((self.epoch, mean_loss, self.optimizer.lr))
            self._update_schedule(mean_loss)
            self.epoch += 1
            self._save_state()
        return self.log_rows


def train_run(run: RunConfig, *, samples=None, resume: bool = False) -> dict:
    """Train every lambda in the run; returns {tag: final mean loss}."""
    results = {}
    for lam in run.lambdas:
        trainer = Trainer(run, lam, samples=samples)
        rows = trainer.train(resume=resume)
        results[lambda_tag(lam)] = rows[-1][1] if rows else math.nan
    return results
