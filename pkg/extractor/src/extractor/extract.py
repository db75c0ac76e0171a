"""Dump per-stage CNN features of an image dataset to NPY files + manifest.

Consumes the common defect-inspection layout (one directory per category,
as in the MVTec anomaly detection collection):

    <root>/<category>/train/good/*.png
    <root>/<category>/test/<kind>/*.png
    <root>/<category>/ground_truth/<kind>/<stem>_mask.png   (absent for "good")

and writes, under ``--out``:

    features/<split>_<stage>.npy   B x C x H x W float32, rows in image-id order
    images/<split>/<id>.png        RGB inputs resized to the network input size
    masks/<split>/<id>.png         ground truth resized (nearest), values 0/255
    manifest.json                  layer/mask/image paths, image size, preprocessing

Image ids are ``<kind>_<stem>`` and every per-split artifact (feature rows,
image files, mask files) follows the same sorted-id order.

Usage: ``extract.py --dataset <root> --category hazelnut --out <dir>``
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import (
    CHANNEL_MEAN,
    CHANNEL_STD,
    INPUT_SIZE,
    STAGE_NAMES,
    build_backbone,
    forward_stages,
    resize_rgb,
    to_input_tensor,
)

SPLITS = ("train", "test")


@dataclass
class ExtractionJob:
    """One category's worth of feature extraction."""

    dataset_root: Path
    category: str
    output_dir: Path
    stages: tuple[str, ...] = STAGE_NAMES
    pretrained: bool = True
    batch_size: int = 16
    device: str = "cpu"

    def __post_init__(self):
        self.dataset_root = Path(self.dataset_root)
        self.output_dir = Path(self.output_dir)
        self.stages = tuple(self.stages)
        unknown = [s for s in self.stages if s not in STAGE_NAMES]
        if unknown:
            raise ValueError(f"unknown stages {unknown}; choose from {list(STAGE_NAMES)}")
        if not self.stages:
            raise ValueError("at least one stage is required")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class _Record:
    image_id: str
    image_path: Path
    mask_path: Path | None  # None -> image is defect-free, mask is all black


def _split_records(category_dir: Path, split: str) -> list[_Record]:
    split_dir = category_dir / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"no {split} split directory at {split_dir}")
    records: list[_Record] = []
    for kind_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        for image_path in sorted(kind_dir.glob("*.png")):
            mask_path = None
            if kind_dir.name != "good":
                mask_path = (
                    category_dir / "ground_truth" / kind_dir.name / f"{image_path.stem}_mask.png"
                )
                if not mask_path.is_file():
                    raise FileNotFoundError(f"missing ground-truth mask {mask_path}")
            records.append(_Record(f"{kind_dir.name}_{image_path.stem}", image_path, mask_path))
    if not records:
        raise ValueError(f"no PNG images under {split_dir}")
    records.sort(key=lambda r: r.image_id)
    return records


def _write_mask(mask_path: Path | None, target: Path, size: tuple[int, int]) -> None:
    height, width = size
    if mask_path is None:
        mask = Image.new("L", (width, height), 0)
    else:
        gray = Image.open(mask_path).convert("L")
        gray = gray.resize((width, height), Image.Resampling.NEAREST)
        mask = gray.point(lambda v: 255 if v > 0 else 0)
    mask.save(target)


def _extract_split(job: ExtractionJob, model: torch.nn.Module, split: str) -> dict[str, np.ndarray]:
    """Write the split's images/masks and return {stage: B x C x H x W float32}."""
    records = _split_records(job.dataset_root / job.category, split)
    image_dir = job.output_dir / "images" / split
    mask_dir = job.output_dir / "masks" / split
    image_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)

    chunks: dict[str, list[np.ndarray]] = {stage: [] for stage in job.stages}
    batch: list[torch.Tensor] = []

    def flush() -> None:
        if not batch:
            return
        stacked = torch.stack(batch).to(job.device)
        outputs = forward_stages(model, stacked, job.stages)
        for stage in job.stages:
            chunks[stage].append(outputs[stage].cpu().numpy().astype(np.float32, copy=False))
        batch.clear()

    for record in records:
        with Image.open(record.image_path) as raw:
            resized = resize_rgb(raw)
        resized.save(image_dir / f"{record.image_id}.png")
        _write_mask(record.mask_path, mask_dir / f"{record.image_id}.png", INPUT_SIZE)
        batch.append(to_input_tensor(resized))
        if len(batch) == job.batch_size:
            flush()
    flush()
    return {stage: np.concatenate(chunks[stage], axis=0) for stage in job.stages}


def extract(job: ExtractionJob) -> Path:
    """Run the extraction job; returns the path of the written manifest."""
    category_dir = job.dataset_root / job.category
    if not category_dir.is_dir():
        raise FileNotFoundError(f"no category directory at {category_dir}")
    model = build_backbone(job.pretrained).to(job.device)

    features_dir = job.output_dir / "features"
    features_dir.mkdir(parents=True, exist_ok=True)
    manifest_splits: dict[str, dict] = {}
    for split in SPLITS:
        tensors = _extract_split(job, model, split)
        for stage, array in tensors.items():
            np.save(features_dir / f"{split}_{stage}.npy", array)
        manifest_splits[split] = {
            "features": {stage: f"features/{split}_{stage}.npy" for stage in job.stages},
            "masks": f"masks/{split}",
            "images": f"images/{split}",
        }

    manifest = {
        "category": job.category,
        "layers": list(job.stages),
        "image_size": list(INPUT_SIZE),
        "splits": manifest_splits,
        "preprocess": {
            "input_size": list(INPUT_SIZE),
            "interpolation": "bilinear",
            "channel_mean": list(CHANNEL_MEAN),
            "channel_std": list(CHANNEL_STD),
            "weights": "pretrained" if job.pretrained else "random",
        },
    }
    manifest_path = job.output_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Extract per-stage CNN features to NPY tensors + manifest."
    )
    parser.add_argument("--dataset", required=True, help="dataset root (contains <category>/)")
    parser.add_argument("--category", required=True, help="category directory name")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--stages",
        default=None,
        help=f"comma-separated subset of {','.join(STAGE_NAMES)} (default: all)",
    )
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument(
        "--random-weights",
        action="store_true",
        help="skip the pretrained weights (offline smoke runs; features are untrained)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    stages = (
        tuple(s.strip() for s in args.stages.split(",") if s.strip())
        if args.stages
        else STAGE_NAMES
    )
    try:
        job = ExtractionJob(
            dataset_root=args.dataset,
            category=args.category,
            output_dir=args.out,
            stages=stages,
            pretrained=not args.random_weights,
            batch_size=args.batch_size,
        )
        manifest_path = extract(job)
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
