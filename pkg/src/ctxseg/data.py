"""Synthetic sample generation and on-disk dataset handling.

A sample bundles an image with three supervision targets derived from its
mask: the mask itself, a boundary band (morphological gradient with a
3x3 cross), and per-patch foreground fractions in row-major patch order.
Synthetic imagery is filled ellipses over a darker background plus
Gaussian noise; generation is a pure function of (seed, spec).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .tensor import Tensor
from . import imgio


@dataclass
class DatasetSpec:
    """Recipe for a synthetic dataset; equal specs generate equal samples."""

    n_samples: int = 16
    height: int = 64
    width: int = 64
    channels: int = 1
    min_objects: int = 1
    max_objects: int = 3
    overlap_prob: float = 0.5
    noise: float = 0.02
    patch: int = 8
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.n_samples < 1:
            problems.append(f"n_samples must be >= 1, got {self.n_samples}")
        if self.height < 8 or self.width < 8:
            problems.append(f"image extent too small: {self.height}x{self.width}")
        if self.patch < 1 or self.height % self.patch or self.width % self.patch:
            problems.append(f"patch {self.patch} must divide {self.height}x{self.width}")
        if self.channels not in (1, 3):
            problems.append(f"channels must be 1 or 3, got {self.channels}")
        if not (1 <= self.min_objects <= self.max_objects):
            problems.append(f"bad object count range [{self.min_objects}, {self.max_objects}]")
        if not 0.0 <= self.overlap_prob <= 1.0:
            problems.append(f"overlap_prob must be in [0, 1], got {self.overlap_prob}")
        if self.noise < 0.0:
            problems.append(f"noise must be >= 0, got {self.noise}")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class Sample:
    """One image with full supervision. Arrays are float64; mask and
    boundary are strictly {0, 1} valued."""

    image: np.ndarray      # (C, H, W) in [0, 1]
    mask: np.ndarray       # (1, H, W)
    boundary: np.ndarray   # (1, H, W)
    region: np.ndarray     # (N, 1) per-patch foreground fraction, row-major
    sample_id: str


@dataclass
class Batch:
    image: Tensor
    mask: Tensor
    boundary: Tensor
    region: Tensor
    ids: list[str] = field(default_factory=list)


def ellipse_mask(height: int, width: int, cy: float, cx: float,
                 ay: float, ax: float, theta: float) -> np.ndarray:
    """Boolean raster of a rotated filled ellipse evaluated at pixel centres."""
    yy, xx = np.mgrid[0:height, 0:width]
    dy = yy - cy
    dx = xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / ax
    v = (-dx * s + dy * c) / ay
    return u * u + v * v <= 1.0


def boundary_gt(mask: np.ndarray) -> np.ndarray:
    """Morphological gradient (dilation minus erosion) with a 3x3 cross.

    Outside the frame counts as background, so foreground touching the
    border erodes away there like anywhere else.
    """
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[0]
    mb = m > 0.5
    p = np.pad(mb, 1)
    shifts = (p[1:-1, 1:-1], p[:-2, 1:-1], p[2:, 1:-1], p[1:-1, :-2], p[1:-1, 2:])
    dil = shifts[0] | shifts[1] | shifts[2] | shifts[3] | shifts[4]
    ero = shifts[0] & shifts[1] & shifts[2] & shifts[3] & shifts[4]
    return (dil & ~ero).astype(np.float64)[None, :, :]


def ric_gt(mask: np.ndarray, patch: int) -> np.ndarray:
    """Foreground fraction of each patch x patch block, flattened row-major."""
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[0]
    h, w = m.shape
    if h % patch or w % patch:
        raise DataError(f"patch {patch} must divide mask extents {h}x{w}")
    counts = (m > 0.5).reshape(h // patch, patch, w // patch, patch).sum(axis=(1, 3))
    return (counts.astype(np.float64) / (patch * patch)).reshape(-1, 1)


def _place_objects(rng: np.random.Generator, spec: DatasetSpec) -> list[np.ndarray]:
    """Rasterise object masks honouring the overlap draw for this sample."""
    h, w = spec.height, spec.width
    n = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    want_overlap = n >= 2 and rng.random() < spec.overlap_prob
    # axis range sized so a couple of objects cover a third to a half of
    # the frame: balanced enough for threshold learning to move DSC early
    lo, hi = 0.18 * min(h, w), 0.38 * min(h, w)

    def draw(cy, cx):
        ay = rng.uniform(lo, hi)
        ax = rng.uniform(lo, hi)
        theta = rng.uniform(0.0, np.pi)
        return ellipse_mask(h, w, cy, cx, ay, ax, theta)

    masks = [draw(rng.uniform(0.25 * h, 0.75 * h), rng.uniform(0.25 * w, 0.75 * w))]
    for i in range(1, n):
        if want_overlap and i == 1:
            # centre the second object on a pixel of the first: both contain it
            ys, xs = np.nonzero(masks[0])
            j = int(rng.integers(len(ys)))
            masks.append(draw(float(ys[j]), float(xs[j])))
            continue
        placed = None
        for _ in range(200):
            cand = draw(rng.uniform(0.15 * h, 0.85 * h), rng.uniform(0.15 * w, 0.85 * w))
            if want_overlap or not any((cand & m).any() for m in masks):
                placed = cand
                break
        if placed is not None:
            masks.append(placed)
        # else: drop the object rather than violate the overlap draw
    return masks


def generate_sample(rng: np.random.Generator, spec: DatasetSpec, sample_id: str = "") -> Sample:
    """One synthetic sample; fully determined by the generator state."""
    h, w, c = spec.height, spec.width, spec.channels
    masks = _place_objects(rng, spec)
    background = rng.uniform(0.05, 0.25, size=c)
    image = np.broadcast_to(background[:, None, None], (c, h, w)).copy()
    for m in masks:
        intensity = rng.uniform(0.45, 0.95, size=c)
        image[:, m] = intensity[:, None]
    if spec.noise > 0.0:
        image = image + spec.noise * rng.standard_normal((c, h, w))
    image = np.clip(image, 0.0, 1.0)
    union = np.zeros((h, w), dtype=bool)
    for m in masks:
        union |= m
    mask = union.astype(np.float64)[None]
    return Sample(
        image=image,
        mask=mask,
        boundary=boundary_gt(mask),
        region=ric_gt(mask, spec.patch),
        sample_id=sample_id,
    )


def generate_dataset(spec: DatasetSpec) -> list[Sample]:
    """All samples for a spec; each sample gets an independent seeded stream."""
    spec.validate()
    return [
        generate_sample(np.random.default_rng([spec.seed, i]), spec, sample_id=f"{i:04d}")
        for i in range(spec.n_samples)
    ]


def sample_has_overlap(rng: np.random.Generator, spec: DatasetSpec) -> bool:
    """True when any two rendered objects of a fresh draw share a pixel."""
    masks = _place_objects(rng, spec)
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            if (masks[i] & masks[j]).any():
                return True
    return False


# ----------------------------------------------------------- dataset files


def load_pair(image_path: str | Path, mask_path: str | Path, patch: int,
              size: tuple[int, int] = (256, 256), channels: int | None = None) -> Sample:
    """Load an image/mask pair, resampling to `size` (bilinear for the image,
    nearest for the mask, binarised above 127)."""
    img = imgio.read_image(image_path)
    msk = imgio.read_image(mask_path)
    if msk.ndim != 2:
        raise DataError(f"mask must be single-channel: {mask_path}")
    th, tw = size
    imgf = img.astype(np.float64) / 255.0
    if imgf.ndim == 2:
        imgf = imgf[:, :, None]
    if channels is not None and imgf.shape[2] != channels:
        raise DataError(
            f"channel mismatch: {image_path} has {imgf.shape[2]} channels, expected {channels}")
    imgf = imgio.resize_bilinear(imgf, th, tw)
    mask = (imgio.resize_nearest_image(msk, th, tw) > 127).astype(np.float64)[None]
    return Sample(
        image=np.ascontiguousarray(imgf.transpose(2, 0, 1)),
        mask=mask,
        boundary=boundary_gt(mask),
        region=ric_gt(mask, patch),
        sample_id=Path(image_path).stem,
    )


def _find_file(directory: Path, stem: str) -> Path:
    for ext in (".png", ".pgm", ".ppm"):
        candidate = directory / (stem + ext)
        if candidate.exists():
            return candidate
    raise DataError(f"no image found for id '{stem}' under {directory}")


def load_dataset_dir(root: str | Path, patch: int, size: tuple[int, int],
                     channels: int | None = None) -> dict[str, list[Sample]]:
    """Read images/, masks/ and split.json from a dataset directory."""
    root = Path(root)
    split_file = root / "split.json"
    if not split_file.exists():
        raise DataError(f"missing split.json under {root}")
    splits = json.loads(split_file.read_text())
    out: dict[str, list[Sample]] = {}
    for name, ids in splits.items():
        out[name] = [
            load_pair(_find_file(root / "images", sid), _find_file(root / "masks", sid),
                      patch=patch, size=size, channels=channels)
            for sid in ids
        ]
    return out


def save_synthetic_dataset(spec: DatasetSpec, out_dir: str | Path,
                           split_fractions: tuple[float, float] = (0.8, 0.1)) -> list[Sample]:
    """Generate a dataset and write images/, masks/, split.json, spec.json.

    Images are quantised to 8 bits on disk. The split is by index: the
    first train_frac of samples train, the next val_frac validate, the
    rest test.
    """
    samples = generate_dataset(spec)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        img8 = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8)
        if spec.channels == 1:
            imgio.write_pgm(out_dir / "images" / f"{s.sample_id}.pgm", img8[0])
        else:
            imgio.write_ppm(out_dir / "images" / f"{s.sample_id}.ppm",
                            np.ascontiguousarray(img8.transpose(1, 2, 0)))
        imgio.write_pgm(out_dir / "masks" / f"{s.sample_id}.pgm",
                        (s.mask[0] * 255).astype(np.uint8))
    n = len(samples)
    n_train = int(round(split_fractions[0] * n))
    n_val = int(round(split_fractions[1] * n))
    ids = [s.sample_id for s in samples]
    split = {"train": ids[:n_train], "val": ids[n_train:n_train + n_val],
             "test": ids[n_train + n_val:]}
    (out_dir / "split.json").write_text(json.dumps(split, indent=1))
    (out_dir / "spec.json").write_text(json.dumps(asdict(spec), indent=1))
    return samples


def make_batch(samples: list[Sample]) -> Batch:
    if not samples:
        raise DataError("cannot batch zero samples")
    return Batch(
        image=Tensor(np.stack([s.image for s in samples])),
        mask=Tensor(np.stack([s.mask for s in samples])),
        boundary=Tensor(np.stack([s.boundary for s in samples])),
        region=Tensor(np.stack([s.region for s in samples])),
        ids=[s.sample_id for s in samples],
    )
