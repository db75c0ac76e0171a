"""File-driven tensor, mask, and manifest I/O.

Feature tensors travel as NPY v1.0 files so the numerical core never needs a
deep-learning runtime. The reader/writer below implement the v1.0 layout
directly (6-byte magic ``\\x93NUMPY``, version bytes ``01 00``, little-endian
header length, dict header with ``descr``/``fortran_order``/``shape``) and are
cross-checked against ``numpy``'s own serializer in the test suite.

Masks ship as grayscale PNGs and binarize at ``gray > threshold``. All math
downstream runs in 64-bit floats; 32-bit is accepted on disk.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, FormatError, ShapeError

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_FLOAT_DESCRS = {"<f4": np.float32, "<f8": np.float64}

SPLITS = ("train", "test")


@dataclass
class FeatureStack:
    """Feature maps from one backbone layer over one dataset split.

    ``data`` is B x C x H x W in 64-bit floats; ``image_ids`` holds the B
    dataset-order identifiers.
    """

    data: np.ndarray
    layer_name: str = ""
    split: str = "train"
    image_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise ShapeError(f"feature stack must be 4-D, got rank {self.data.ndim}")
        if min(self.data.shape) < 1:
            raise ShapeError(f"all dimensions must be >= 1, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise DataError("feature stack contains NaN or Inf")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.image_ids:
            self.image_ids = [f"{i:03d}" for i in range(self.data.shape[0])]
        if len(self.image_ids) != self.data.shape[0]:
            raise ShapeError(
                f"{len(self.image_ids)} image_ids for B={self.data.shape[0]} images"
            )
        if len(set(self.image_ids)) != len(self.image_ids):
            raise DataError("image_ids must be distinct")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape


@dataclass
class PixelLabels:
    """Boolean ground-truth masks, one per image, true = anomalous pixel."""

    masks: np.ndarray
    image_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)
        if self.masks.ndim != 3:
            raise ShapeError(f"masks must be 3-D, got rank {self.masks.ndim}")
        if not self.image_ids:
            self.image_ids = [f"{i:03d}" for i in range(self.masks.shape[0])]
        if len(self.image_ids) != self.masks.shape[0]:
            raise ShapeError(
                f"{len(self.image_ids)} image_ids for {self.masks.shape[0]} masks"
            )

    def require_all_normal(self) -> None:
        """Enforce the train-split invariant: no anomalous pixels."""
        if self.masks.any():
            raise DataError("train-split masks must be all-false (normal images only)")


@dataclass
class DatasetManifest:
    """Paths to every tensor, mask directory, and image directory of a dataset.

    Paths are stored resolved (absolute); ``image_size`` is (H_img, W_img).
    """

    category: str
    layers: list[str]
    features: dict[str, dict[str, Path]]  # split -> layer -> tensor path
    masks: dict[str, Path]  # split -> mask file or directory
    images: dict[str, Path]  # split -> image directory
    image_size: tuple[int, int]

    def validate(self) -> None:
        if not self.layers:
            raise DataError("manifest lists no layers")
        for split in SPLITS:
            for layer in self.layers:
                path = self.features.get(split, {}).get(layer)
                if path is None or not Path(path).exists():
                    raise DataError(f"missing feature tensor for {split}/{layer}: {path}")
            for name, table in (("masks", self.masks), ("images", self.images)):
                path = table.get(split)
                if path is None or not Path(path).exists():
                    raise DataError(f"missing {name} path for split {split!r}: {path}")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a manifest JSON file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else root / p

    try:
        splits = doc["splits"]
        manifest = DatasetManifest(
            category=doc["category"],
            layers=list(doc["layers"]),
            features={
                split: {layer: resolve(p) for layer, p in splits[split]["features"].items()}
                for split in SPLITS
            },
            masks={split: resolve(splits[split]["masks"]) for split in SPLITS},
            images={split: resolve(splits[split]["images"]) for split in SPLITS},
            image_size=(int(doc["image_size"][0]), int(doc["image_size"][1])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest {path}: {exc}") from exc
    manifest.validate()
    return manifest


def read_array(path: str | Path) -> np.ndarray:
    """Read any NPY v1.0 float array, widened to 64-bit.

    Raises FormatError for malformed headers and ShapeError for non-float
    payloads. NaN/Inf checking is left to the callers that require it.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != _MAGIC:
            raise FormatError(f"{path}: bad NPY magic {magic!r}")
        version = fh.read(2)
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported NPY version {version!r}")
        raw_len = fh.read(2)
        if len(raw_len) != 2:
            raise FormatError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<H", raw_len)
        header = fh.read(header_len)
        if len(header) != header_len:
            raise FormatError(f"{path}: truncated header")
        try:
            meta = ast.literal_eval(header.decode("latin1"))
            descr = meta["descr"]
            fortran = meta["fortran_order"]
            shape = tuple(int(s) for s in meta["shape"])
        except (ValueError, SyntaxError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}: unparseable NPY header") from exc
        if descr not in _FLOAT_DESCRS:
            raise ShapeError(f"{path}: dtype {descr!r} is not a little-endian float")
        if fortran:
            raise FormatError(f"{path}: fortran_order arrays are not supported")
        dtype = _FLOAT_DESCRS[descr]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = fh.read(count * np.dtype(dtype).itemsize)
        if len(payload) != count * np.dtype(dtype).itemsize:
            raise FormatError(f"{path}: truncated payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.astype(np.float64)


def write_array(arr: np.ndarray, path: str | Path, dtype: str = "float64") -> None:
    """Write a C-ordered little-endian float array as NPY v1.0."""
    out = np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<"))
    descr = "<f4" if out.dtype.itemsize == 4 else "<f8"
    shape = out.shape if out.ndim != 1 else (out.shape[0],)
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr,
        repr(tuple(shape)),
    )
    # pad so magic + version + length + header is a multiple of 64, newline-terminated
    unpadded = len(_MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * (-unpadded % 64) + "\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_VERSION)
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(out.tobytes())


def read_tensor(
    path: str | Path,
    layer_name: str = "",
    split: str = "train",
    image_ids: list[str] | None = None,
) -> FeatureStack:
    """Read a 4-D feature tensor into a FeatureStack (values widened to float64)."""
    arr = read_array(path)
    if arr.ndim != 4:
        raise ShapeError(f"{path}: expected 4-D tensor, got rank {arr.ndim}")
    if not np.isfinite(arr).all():
        raise DataError(f"{path}: tensor contains NaN or Inf")
    return FeatureStack(arr, layer_name=layer_name, split=split, image_ids=image_ids or [])


def write_tensor(stack: FeatureStack, path: str | Path, dtype: str = "float64") -> None:
    """Write a FeatureStack payload as NPY v1.0, readable by read_tensor."""
    if not np.isfinite(stack.data).all():
        raise DataError("refusing to write tensor with NaN or Inf")
    write_array(stack.data, path, dtype=dtype)


def _load_gray(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                img = img.convert("L")
            return np.asarray(img, dtype=np.uint8)
    except OSError as exc:
        raise FormatError(f"cannot decode PNG {path}: {exc}") from exc


def read_masks(
    path: str | Path, threshold: int = 127, image_ids: list[str] | None = None
) -> PixelLabels:
    """Read ground-truth masks from a PNG file or a directory of PNGs.

    A pixel is anomalous iff its gray value is strictly greater than
    ``threshold``. Directory entries are read in sorted order; all images must
    share one size.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise DataError(f"no PNG masks found in {path}")
    else:
        files = [path]
    grays = [_load_gray(f) for f in files]
    shapes = {g.shape for g in grays}
    if len(shapes) != 1:
        raise ShapeError(f"mask sizes differ in {path}: {sorted(shapes)}")
    masks = np.stack(grays) > threshold
    if image_ids is None and path.is_dir():
        image_ids = [f.stem for f in files]
    return PixelLabels(masks, image_ids=image_ids or [])


def list_image_files(path: str | Path) -> list[Path]:
    """PNG images of a split directory in dataset (sorted-name) order."""
    files = sorted(Path(path).glob("*.png"))
    if not files:
        raise DataError(f"no PNG images found in {path}")
    return files


def read_images(path: str | Path, image_size: tuple[int, int]) -> np.ndarray:
    """Read a directory of RGB input images as B x H_img x W_img x 3 uint8."""
    files = list_image_files(path)
    out = []
    for f in files:
        try:
            with Image.open(f) as img:
                rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except OSError as exc:
            raise FormatError(f"cannot decode PNG {f}: {exc}") from exc
        if rgb.shape[:2] != tuple(image_size):
            raise ShapeError(
                f"{f}: image is {rgb.shape[:2]}, manifest says {tuple(image_size)}"
            )
        out.append(rgb)
    return np.stack(out)
