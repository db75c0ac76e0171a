"""Generate a synthetic Gaussian feature fixture with planted anomalies.

Train and test feature tensors are drawn from one multivariate normal whose
covariance has a chosen eigenvalue spectrum. On selected test images a
rectangle of feature vectors is shifted by ``shift_sigmas * sqrt(spectrum[k])``
along eigenvector ``k``, so the expected squared Mahalanobis distance of a
planted pixel is ``channels + shift_sigmas**2`` and whitened component ``k``
carries the excursion. Ground-truth masks mark exactly those rectangles.

Outputs under ``--out`` (same layout the extraction tool produces):

    features/<split>_<layer>.npy   float32 feature tensors
    images/<split>/<id>.png        placeholder RGB images at the mask scale
    masks/<split>/<id>.png         all-black for train, rectangles for test
    manifest.json                  consumable by the scoring pipeline
    config.json                    ready-to-run pipeline configuration
    oracle.json                    population parameters for checking results

Usage: ``gen_fixture.py --spec fixture.json --out <dir>``
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

SPLITS = ("train", "test")


@dataclass(frozen=True)
class PlantedRegion:
    """Half-open rectangle [top:bottom, left:right] on one test image's grid."""

    image_index: int
    top: int
    bottom: int
    left: int
    right: int

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SyntheticFixtureSpec:
    """Population + anomaly description for one synthetic fixture.

    ``spectrum`` lists the covariance eigenvalues (default: evenly spread over
    [0.5, 4.0]); ``eigen_index`` picks which eigenvector carries the planted
    shift of ``shift_sigmas`` standard deviations. ``regions=None`` plants a
    centered rectangle on every odd-indexed test image; pass an explicit list
    (possibly empty) to override.
    """

    channels: int = 8
    height: int = 16
    width: int = 16
    train_images: int = 32
    test_images: int = 8
    image_scale: int = 4
    spectrum: tuple[float, ...] | None = None
    eigen_index: int = 0
    shift_sigmas: float = 6.0
    regions: tuple[PlantedRegion, ...] | None = None
    seed: int = 0
    layer_name: str = "synthetic"
    category: str = "fixture"

    def __post_init__(self):
        for name in ("channels", "height", "width", "train_images", "test_images"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.channels < 2:
            raise ValueError("channels must be >= 2 so the covariance has a spectrum")
        if self.image_scale < 1:
            raise ValueError(f"image_scale must be >= 1, got {self.image_scale}")
        if self.spectrum is None:
            self.spectrum = tuple(np.linspace(0.5, 4.0, self.channels))
        else:
            self.spectrum = tuple(float(v) for v in self.spectrum)
        if len(self.spectrum) != self.channels:
            raise ValueError(
                f"spectrum has {len(self.spectrum)} eigenvalues for {self.channels} channels"
            )
        if min(self.spectrum) <= 0:
            raise ValueError(f"eigenvalues must be positive, got {min(self.spectrum)}")
        if not 0 <= self.eigen_index < self.channels:
            raise ValueError(f"eigen_index {self.eigen_index} out of range [0, {self.channels})")
        if self.shift_sigmas < 0:
            raise ValueError(f"shift_sigmas must be >= 0, got {self.shift_sigmas}")
        if self.regions is None:
            rect = (self.height // 4, 3 * self.height // 4, self.width // 4, 3 * self.width // 4)
            self.regions = tuple(
                PlantedRegion(i, *rect) for i in range(1, self.test_images, 2)
            )
        else:
            self.regions = tuple(
                r if isinstance(r, PlantedRegion) else _region_from(r) for r in self.regions
            )
        for region in self.regions:
            if not 0 <= region.image_index < self.test_images:
                raise ValueError(f"region image_index {region.image_index} out of range")
            if not (0 <= region.top < region.bottom <= self.height):
                raise ValueError(f"region rows [{region.top}, {region.bottom}) out of bounds")
            if not (0 <= region.left < region.right <= self.width):
                raise ValueError(f"region cols [{region.left}, {region.right}) out of bounds")

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.height * self.image_scale, self.width * self.image_scale)

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticFixtureSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown fixture spec keys: {unknown}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticFixtureSpec":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read fixture spec {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValueError(f"fixture spec {path} must hold a JSON object")
        return cls.from_dict(doc)


def _region_from(value) -> PlantedRegion:
    if isinstance(value, dict):
        return PlantedRegion(
            image_index=int(value["image_index"]),
            top=int(value["top"]),
            bottom=int(value["bottom"]),
            left=int(value["left"]),
            right=int(value["right"]),
        )
    if isinstance(value, Sequence) and len(value) == 5:
        return PlantedRegion(*(int(v) for v in value))
    raise ValueError(f"cannot parse region {value!r}; want a dict or a 5-item list")


def _random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random orthogonal matrix with a deterministic sign convention."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _draw_stack(
    rng: np.random.Generator,
    count: int,
    spec: SyntheticFixtureSpec,
    mean: np.ndarray,
    chol: np.ndarray,
) -> np.ndarray:
    rows = mean + rng.standard_normal((count * spec.height * spec.width, spec.channels)) @ chol.T
    grid = rows.reshape(count, spec.height, spec.width, spec.channels)
    return np.ascontiguousarray(grid.transpose(0, 3, 1, 2))


def _write_masks(spec: SyntheticFixtureSpec, out_dir: Path) -> None:
    h_img, w_img = spec.image_size
    s = spec.image_scale
    for split, count in (("train", spec.train_images), ("test", spec.test_images)):
        split_dir = out_dir / "masks" / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            canvas = np.zeros((h_img, w_img), dtype=np.uint8)
            if split == "test":
                for r in spec.regions:
                    if r.image_index == i:
                        canvas[r.top * s : r.bottom * s, r.left * s : r.right * s] = 255
            Image.fromarray(canvas, mode="L").save(split_dir / f"{i:03d}.png")


def _write_images(spec: SyntheticFixtureSpec, out_dir: Path, rng: np.random.Generator) -> None:
    h_img, w_img = spec.image_size
    for split, count in (("train", spec.train_images), ("test", spec.test_images)):
        split_dir = out_dir / "images" / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            pixels = rng.integers(0, 256, size=(h_img, w_img, 3), dtype=np.uint8)
            Image.fromarray(pixels, mode="RGB").save(split_dir / f"{i:03d}.png")


def gen_fixture(spec: SyntheticFixtureSpec, out_dir: str | Path) -> Path:
    """Write the fixture; returns the path of the written manifest."""
    out = Path(out_dir)
    rng = np.random.default_rng(spec.seed)

    mean = rng.normal(0.0, 1.0, spec.channels)
    basis = _random_orthogonal(spec.channels, rng)  # columns are eigenvectors
    spectrum = np.asarray(spec.spectrum, dtype=np.float64)
    covariance = basis @ np.diag(spectrum) @ basis.T
    covariance = (covariance + covariance.T) / 2.0
    chol = np.linalg.cholesky(covariance)

    train = _draw_stack(rng, spec.train_images, spec, mean, chol)
    test = _draw_stack(rng, spec.test_images, spec, mean, chol)
    direction = basis[:, spec.eigen_index]
    shift = spec.shift_sigmas * np.sqrt(spectrum[spec.eigen_index]) * direction
    for r in spec.regions:
        test[r.image_index, :, r.top : r.bottom, r.left : r.right] += shift[:, None, None]

    features_dir = out / "features"
    features_dir.mkdir(parents=True, exist_ok=True)
    np.save(features_dir / f"train_{spec.layer_name}.npy", train.astype(np.float32))
    np.save(features_dir / f"test_{spec.layer_name}.npy", test.astype(np.float32))
    _write_masks(spec, out)
    _write_images(spec, out, rng)

    manifest = {
        "category": spec.category,
        "layers": [spec.layer_name],
        "image_size": list(spec.image_size),
        "splits": {
            split: {
                "features": {spec.layer_name: f"features/{split}_{spec.layer_name}.npy"},
                "masks": f"masks/{split}",
                "images": f"images/{split}",
            }
            for split in SPLITS
        },
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")

    oracle = {
        "seed": spec.seed,
        "channels": spec.channels,
        "mean": mean.tolist(),
        "spectrum": spectrum.tolist(),
        "covariance": covariance.tolist(),
        "eigen_index": spec.eigen_index,
        "shift_sigmas": spec.shift_sigmas,
        "direction": direction.tolist(),
        "regions": [r.as_dict() for r in spec.regions],
        "expected_region_mean_sq_distance": spec.channels + spec.shift_sigmas**2,
    }
    (out / "oracle.json").write_text(json.dumps(oracle, indent=2) + "\n")

    k = max(1, min(3, spec.channels // 2))
    config = {
        "manifest_path": "manifest.json",
        "output_dir": "out",
        "k_lowest": k,
        "k_highest": k,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    return manifest_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Generate a synthetic Gaussian feature fixture with planted anomalies."
    )
    parser.add_argument(
        "--spec", default=None, help="fixture spec JSON (defaults are used when omitted)"
    )
    parser.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = (
            SyntheticFixtureSpec.from_json(args.spec)
            if args.spec
            else SyntheticFixtureSpec()
        )
        manifest_path = gen_fixture(spec, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
