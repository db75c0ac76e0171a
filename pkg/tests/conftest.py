"""Shared fixtures: synthetic file-driven datasets for pipeline and CLI tests.

``build_dataset`` writes a complete dataset tree — per-split feature tensors,
mask PNGs, input-image PNGs, and a manifest — plus a pipeline config, and
returns the paths. Test features can carry a planted anomaly: a rectangular
region shifted along the training distribution's smallest-variance direction,
which a correct whitening pipeline must surface on component 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from mvgwhiten import core_stats, tensor_io


def random_orthogonal(c: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(c, c)))
    return q * np.sign(np.diag(r))


def spd_from_eigenvalues(eigenvalues: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random SPD matrix with the given spectrum; returns (matrix, eigenvector basis)."""
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    q = random_orthogonal(eigenvalues.size, rng)
    return (q * eigenvalues) @ q.T, q


def sample_stack(
    rng: np.random.Generator,
    b: int,
    c: int,
    h: int,
    w: int,
    mean: np.ndarray,
    cov: np.ndarray,
) -> np.ndarray:
    """Draw a B x C x H x W stack of i.i.d. Gaussian pixel vectors."""
    chol = np.linalg.cholesky(cov)
    z = rng.normal(size=(b * h * w, c))
    flat = z @ chol.T + mean
    return core_stats.unflatten(flat, (b, c, h, w))


def write_gray_png(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path)


def write_rgb_png(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(path)


@dataclass
class SyntheticDataset:
    """Paths and ground truth of one generated dataset tree."""

    root: Path
    manifest_path: Path
    config_path: Path
    category: str
    layers: list[str]
    feature_shape: tuple[int, int, int, int]  # test-split B x C x H x W
    image_size: tuple[int, int]
    anomalous_images: list[int]
    region: tuple[int, int, int, int] | None  # feature-space (r0, r1, c0, c1)
    population_mean: np.ndarray | None = None
    population_cov: np.ndarray | None = None
    config: dict = field(default_factory=dict)

    @property
    def output_dir(self) -> Path:
        return Path(self.config["output_dir"])


def build_dataset(
    root: Path,
    *,
    seed: int = 7,
    b_train: int = 6,
    b_test: int = 4,
    c: int = 3,
    h: int = 6,
    w: int = 6,
    scale: int = 4,
    layers: tuple[str, ...] = ("layerA",),
    eigenvalues: np.ndarray | None = None,
    anomalous_images: tuple[int, ...] = (1, 3),
    region: tuple[int, int, int, int] | None = (2, 5, 1, 4),
    shift_sigmas: float = 6.0,
    shift_along_fitted: bool = False,
    config_overrides: dict | None = None,
) -> SyntheticDataset:
    """Write a full dataset tree + config under ``root`` and describe it.

    The planted anomaly shifts feature vectors inside ``region`` (feature-map
    coordinates, rows r0:r1 x cols c0:c1) of each anomalous test image by
    ``shift_sigmas * sqrt(lambda_0)`` along the smallest-variance direction —
    the population one by default, or the direction fitted from the generated
    train split when ``shift_along_fitted`` is set (which makes the whitened
    shift land exactly on component 0).
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    image_size = (h * scale, w * scale)
    if eigenvalues is None:
        eigenvalues = np.linspace(0.5, 3.0, c)
    mean = rng.normal(scale=2.0, size=c)
    cov, basis = spd_from_eigenvalues(eigenvalues, rng)

    train = sample_stack(rng, b_train, c, h, w, mean, cov)
    test = sample_stack(rng, b_test, c, h, w, mean, cov)

    if region is not None and anomalous_images:
        if shift_along_fitted:
            model = core_stats.build_model(core_stats.flatten(train))
            direction = model.eigenvectors[:, 0]
            lam0 = model.eigenvalues[0]
        else:
            order = np.argsort(np.asarray(eigenvalues))
            direction = basis[:, order[0]]
            lam0 = float(np.asarray(eigenvalues)[order[0]])
        shift = shift_sigmas * np.sqrt(lam0) * direction
        r0, r1, c0, c1 = region
        for b in anomalous_images:
            test[b, :, r0:r1, c0:c1] += shift[:, None, None]

    manifest: dict = {
        "category": "synthetic",
        "layers": list(layers),
        "image_size": list(image_size),
        "splits": {},
    }
    split_stacks = {"train": train, "test": test}
    for split, stack in split_stacks.items():
        features = {}
        for layer in layers:
            rel = f"features/{split}_{layer}.npy"
            tensor_io.write_array(stack, root / rel, dtype="float32")
            features[layer] = rel
        b = stack.shape[0]
        for i in range(b):
            mask = np.zeros(image_size, dtype=np.uint8)
            if split == "test" and i in anomalous_images and region is not None:
                r0, r1, c0, c1 = region
                mask[r0 * scale : r1 * scale, c0 * scale : c1 * scale] = 255
            write_gray_png(root / f"masks/{split}/{i:03d}.png", mask)
            write_rgb_png(
                root / f"images/{split}/{i:03d}.png",
                rng.integers(0, 256, size=(*image_size, 3)),
            )
        manifest["splits"][split] = {
            "features": features,
            "masks": f"masks/{split}",
            "images": f"images/{split}",
        }

    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))

    config = {
        "manifest_path": "manifest.json",
        "output_dir": str(root / "out"),
        "images_per_page": 2,
        "max_images": 4,
        "k_lowest": min(2, c),
        "k_highest": min(2, c),
    }
    config.update(config_overrides or {})
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2))

    return SyntheticDataset(
        root=root,
        manifest_path=manifest_path,
        config_path=config_path,
        category="synthetic",
        layers=list(layers),
        feature_shape=(b_test, c, h, w),
        image_size=image_size,
        anomalous_images=list(anomalous_images),
        region=region,
        population_mean=mean,
        population_cov=cov,
        config=config,
    )


@pytest.fixture
def small_dataset(tmp_path: Path) -> SyntheticDataset:
    """A compact on-disk dataset: 3 channels, 6x6 maps, 24x24 images."""
    return build_dataset(tmp_path / "data")


# One (name, passed, detail) entry per acceptance criterion; the terminal
# summary below prints them even when pytest captures test output.
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in ACCEPTANCE_RESULTS:
            status = "PASS" if ok else "FAIL"
            terminalreporter.write_line(f"{status} — {name} ({detail})")
