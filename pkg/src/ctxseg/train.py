"""Training, evaluation, and prediction drivers.

Determinism contract: given (config, seed), the training log, every
checkpoint, and all prediction artifacts are bit-identical across runs.
All randomness flows from counter-based generators: parameter init from
`default_rng(seed)`, the epoch-e shuffle from `default_rng([seed, e])`.
A resumed run therefore replays the exact batch order of an
uninterrupted one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .checkpoint import (
    check_architecture, load_checkpoint, read_manifest, save_checkpoint)
from .config import ARCH_FIELDS, TrainConfig, config_from_dict
from .data import DatasetSpec, Sample, generate_dataset, load_dataset_dir, make_batch
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .losses import LossWeights, joint_loss
from .metrics import METRIC_NAMES, compute_metrics, confusion_counts
from .network import ContextualSegNet, build_network
from .optim import Adam
from .tensor import Tensor

LOG_HEADER = "epoch,loss,seg_loss,boundary_loss,ric_loss,val_dsc"


def effective_weights(config: TrainConfig) -> LossWeights:
    """Ablations silence their supervision term."""
    w = LossWeights(
        seg=config.lambda_seg,
        boundary=0.0 if config.no_boundary else config.lambda_boundary,
        region=0.0 if config.no_transformer else config.lambda_ric,
    )
    w.validate()
    return w


def resolve_data(config: TrainConfig) -> dict[str, list[Sample]]:
    """Dataset directory if given, otherwise in-memory synthetic data
    split 80/10/10 by index."""
    if config.data_dir is not None:
        return load_dataset_dir(config.data_dir, patch=config.patch,
                                size=(config.height, config.width),
                                channels=config.channels)
    kwargs = dict(config.synthetic or {})
    for key, val in (("height", config.height), ("width", config.width),
                     ("channels", config.channels), ("patch", config.patch),
                     ("seed", config.seed)):
        kwargs.setdefault(key, val)
    try:
        spec = DatasetSpec(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad synthetic dataset overrides: {e}") from e
    spec.validate()
    if (spec.height, spec.width, spec.channels, spec.patch) != \
            (config.height, config.width, config.channels, config.patch):
        raise ConfigError(
            "synthetic dataset dims must match the model: "
            f"{(spec.height, spec.width, spec.channels, spec.patch)} vs "
            f"{(config.height, config.width, config.channels, config.patch)}")
    samples = generate_dataset(spec)
    n = len(samples)
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    return {"train": samples[:n_train],
            "val": samples[n_train:n_train + n_val],
            "test": samples[n_train + n_val:]}


def _batches(samples: list[Sample], order, batch_size: int):
    for i0 in range(0, len(order), batch_size):
        yield make_batch([samples[j] for j in order[i0:i0 + batch_size]])


def per_sample_metrics(model: ContextualSegNet, samples: list[Sample],
                       batch_size: int = 4) -> list[tuple[str, dict[str, float]]]:
    """Eval-mode forward over `samples`, one metric row per sample."""
    model.eval()
    rows = []
    order = range(len(samples))
    for batch in _batches(samples, list(order), batch_size):
        out = model(batch.image)
        for i, sid in enumerate(batch.ids):
            counts = confusion_counts(out.mask_prob.data[i], batch.mask.data[i])
            rows.append((sid, compute_metrics(counts)))
    return rows


def mean_dsc(model: ContextualSegNet, samples: list[Sample],
             batch_size: int = 4) -> float:
    if not samples:
        return float("nan")
    rows = per_sample_metrics(model, samples, batch_size)
    return sum(m["DSC"] for _, m in rows) / len(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def _log_row(epoch: int, means: dict[str, float], val_dsc: float) -> str:
    return ",".join([str(epoch), _fmt(means["loss"]), _fmt(means["seg"]),
                     _fmt(means["boundary"]), _fmt(means["ric"]),
                     _fmt(val_dsc)])


def latest_epoch_checkpoint(out_dir: Path) -> Path | None:
    candidates = sorted(out_dir.glob("epoch_*.ckpt"))
    return candidates[-1] if candidates else None


@dataclass
class TrainResult:
    model: ContextualSegNet
    optimizer: Adam
    config: TrainConfig
    out_dir: Path
    log_rows: list[str] = field(default_factory=list)
    best_val: float | None = None
    step: int = 0


def run_training(config: TrainConfig, resume: bool = False, echo=None,
                 data: dict[str, list[Sample]] | None = None) -> TrainResult:
    config.validate()
    weights = effective_weights(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if data is None:
        data = resolve_data(config)
    train_samples = data.get("train", [])
    val_samples = data.get("val", [])
    if not train_samples:
        raise DataError("training split is empty")

    model = build_network(config)
    optim = Adam(list(model.named_parameters()), lr=config.lr)

    done_epochs = 0
    step = 0
    best_val: float | None = None
    kept_rows: list[str] = []
    log_path = out_dir / "train_log.csv"

    if resume:
        latest = latest_epoch_checkpoint(out_dir)
        if latest is None:
            raise CheckpointError(f"nothing to resume under {out_dir}")
        check_architecture(read_manifest(latest), config.to_dict(), ARCH_FIELDS)
        manifest = load_checkpoint(latest, model, optim)
        done_epochs = int(manifest["epoch"])
        step = int(manifest["step"])
        best_val = manifest.get("best_val")
        if log_path.exists():
            for line in log_path.read_text().splitlines()[1:]:
                if line and int(line.split(",", 1)[0]) <= done_epochs:
                    kept_rows.append(line)

    def flush_log():
        log_path.write_text("\n".join([LOG_HEADER] + kept_rows) + "\n")

    def snapshot(name: str, epoch: int):
        save_checkpoint(out_dir / name, model, optim, epoch=epoch, step=step,
                        config=config.to_dict(), best_val=best_val)

    flush_log()
    if config.epochs == 0 and not resume:
        snapshot("epoch_0000.ckpt", 0)
        return TrainResult(model, optim, config, out_dir, kept_rows, best_val, step)

    for epoch in range(done_epochs + 1, config.epochs + 1):
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(
            len(train_samples))
        sums = {"loss": 0.0, "seg": 0.0, "boundary": 0.0, "ric": 0.0}
        n_batches = 0
        for batch in _batches(train_samples, order, config.batch_size):
            outputs = model(batch.image)
            total, comps = joint_loss(outputs, batch, weights)
            value = total.item()
            if not math.isfinite(value):
                raise NumericalError(
                    f"training loss became non-finite at epoch {epoch}; "
                    f"checkpoints up to epoch {epoch - 1} are retained")
            model.zero_grad()
            total.backward()
            optim.step()
            step += 1
            n_batches += 1
            sums["loss"] += value
            for key in ("seg", "boundary", "ric"):
                sums[key] += comps[key]

        means = {k: v / n_batches for k, v in sums.items()}
        val_dsc = mean_dsc(model, val_samples, config.batch_size)
        if val_dsc == val_dsc and (best_val is None or val_dsc > best_val):
            best_val = val_dsc
            improved = True
        else:
            improved = False

        kept_rows.append(_log_row(epoch, means, val_dsc))
        flush_log()
        snapshot(f"epoch_{epoch:04d}.ckpt", epoch)
        if improved:
            snapshot("best.ckpt", epoch)
        if echo is not None:
            echo(f"epoch {epoch}/{config.epochs} loss {means['loss']:.4f} "
                 f"val_dsc {val_dsc:.4f}")

    return TrainResult(model, optim, config, out_dir, kept_rows, best_val, step)


def load_model(checkpoint_dir: str | Path) -> tuple[ContextualSegNet, TrainConfig, dict]:
    """Rebuild the network a checkpoint was trained with and load its weights."""
    manifest = read_manifest(checkpoint_dir)
    stored = manifest.get("config")
    if not stored:
        raise CheckpointError(f"checkpoint {checkpoint_dir} carries no config echo")
    config = config_from_dict(stored)
    config.validate()
    model = build_network(config)
    load_checkpoint(checkpoint_dir, model)
    return model, config, manifest


def evaluate(checkpoint_dir: str | Path, data_dir: str | Path | None = None,
             split: str = "test", out_path: str | Path | None = None,
             samples: list[Sample] | None = None,
             height: int | None = None, width: int | None = None) -> list[str]:
    """Per-sample metric rows plus a mean row; optionally written as CSV."""
    model, config, _ = load_model(checkpoint_dir)
    for name, value in (("height", height), ("width", width)):
        if value is None:
            continue
        if value % config.patch:
            raise CheckpointError(
                f"checkpoint patch {config.patch} does not divide requested "
                f"{name} {value}")
        if value != getattr(config, name):
            raise CheckpointError(
                f"checkpoint was trained at {name} {getattr(config, name)} "
                f"but the dataset requests {value}")
    if samples is None:
        if data_dir is None:
            raise DataError("evaluate needs a dataset directory or samples")
        splits = load_dataset_dir(data_dir, patch=config.patch,
                                  size=(config.height, config.width),
                                  channels=config.channels)
        if split not in splits or not splits[split]:
            raise DataError(f"split '{split}' is missing or empty")
        samples = splits[split]

    rows = ["id," + ",".join(METRIC_NAMES)]
    metric_rows = per_sample_metrics(model, samples, config.batch_size)
    for sid, m in metric_rows:
        rows.append(sid + "," + ",".join(_fmt(m[k]) for k in METRIC_NAMES))
    means = {k: sum(m[k] for _, m in metric_rows) / len(metric_rows)
             for k in METRIC_NAMES}
    rows.append("mean," + ",".join(_fmt(means[k]) for k in METRIC_NAMES))
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text("\n".join(rows) + "\n")
    return rows


def predict(checkpoint_dir: str | Path, image_path: str | Path,
            out_dir: str | Path) -> dict[str, Path]:
    """Run one image through a checkpointed model and write the artifacts."""
    model, config, _ = load_model(checkpoint_dir)
    img = imgio.read_image(image_path).astype(np.float64) / 255.0
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] != config.channels:
        raise DataError(
            f"channel mismatch: {image_path} has {img.shape[2]} channels, "
            f"the checkpoint expects {config.channels}")
    img = imgio.resize_bilinear(img, config.height, config.width)
    x = Tensor(img.transpose(2, 0, 1)[None])

    model.eval()
    out = model(x)
    prob = out.mask_prob.data[0, 0]
    boundary = out.boundary_prob.data[0, 0]
    region = out.region_scores.data[0, :, 0]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "mask": out_dir / "mask.pgm",
        "prob": out_dir / "prob.pgm",
        "boundary": out_dir / "boundary.pgm",
        "ric": out_dir / "ric.csv",
    }
    imgio.write_pgm(paths["mask"], np.where(prob > 0.5, 255, 0).astype(np.uint8))
    imgio.write_pgm(paths["prob"], np.rint(prob * 255.0).astype(np.uint8))
    imgio.write_pgm(paths["boundary"], np.rint(boundary * 255.0).astype(np.uint8))
    lines = ["index,ric"] + [f"{i},{_fmt(v)}" for i, v in enumerate(region)]
    paths["ric"].write_text("\n".join(lines) + "\n")
    return paths
