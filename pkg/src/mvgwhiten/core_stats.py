"""Single multivariate Gaussian fit, whitening transform, and score maps.

All pixel-wise feature vectors of a training split are pooled (positions
confounded) into one BHW x C matrix. From its empirical mean and unbiased
covariance we take the symmetric eigendecomposition, floor tiny eigenvalues,
and realize the inverse-covariance square root as the PCA whitening matrix

    W = diag(eigenvalues) ** -1/2 @ eigenvectors.T

with eigenvalues in ascending order, so component 0 of a whitened vector is
the projection onto the direction of smallest variance. The squared whitened
components sum to the squared Mahalanobis distance, which is the per-pixel
anomaly score; ``mahalanobis_sq_direct`` recomputes that score through an
explicit linear solve and serves as the in-repo oracle for the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_io
from .errors import DataError, NumericError, ShapeError
from .tensor_io import FeatureStack

DEFAULT_FLOOR_REL = 1e-10
COV_CHUNK_ROWS = 4096

MODEL_FIELDS = ("mean", "covariance", "eigenvalues", "eigenvectors", "whitening")


@dataclass
class MvgModel:
    """Fitted Gaussian: moments, eigendecomposition, and whitening matrix.

    ``eigenvalues`` are ascending and already floored; ``eigenvalue_floor`` is
    the floor value that was in effect (floor_rel * largest eigenvalue).
    """

    mean: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    whitening: np.ndarray
    floor_rel: float
    eigenvalue_floor: float
    floored_count: int = 0
    layer_name: str = ""
    category: str = ""

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def save(self, directory: str | Path) -> None:
        """Write one NPY per field plus model.json into a directory."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in MODEL_FIELDS:
            tensor_io.write_array(getattr(self, name), directory / f"{name}.npy")
        meta = {
            "layer_name": self.layer_name,
            "category": self.category,
            "floor_rel": self.floor_rel,
            "eigenvalue_floor": self.eigenvalue_floor,
            "floored_count": self.floored_count,
            "C": self.dim,
        }
        (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory: str | Path) -> "MvgModel":
        directory = Path(directory)
        meta_path = directory / "model.json"
        if not meta_path.exists():
            raise DataError(f"no model found at {directory}")
        meta = json.loads(meta_path.read_text())
        arrays = {name: tensor_io.read_array(directory / f"{name}.npy") for name in MODEL_FIELDS}
        model = cls(
            **arrays,
            floor_rel=float(meta["floor_rel"]),
            eigenvalue_floor=float(meta["eigenvalue_floor"]),
            floored_count=int(meta.get("floored_count", 0)),
            layer_name=meta.get("layer_name", ""),
            category=meta.get("category", ""),
        )
        if model.dim != int(meta["C"]):
            raise ShapeError(f"model.json says C={meta['C']}, arrays say C={model.dim}")
        return model


@dataclass
class WhitenedStack:
    """Whitened maps Y and their point-wise squares, with provenance."""

    y: np.ndarray
    y_sq: np.ndarray
    source: FeatureStack | None = None
    model: MvgModel | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.y.shape


@dataclass
class ScoreMap:
    """Per-pixel squared Mahalanobis distance, B x H x W, non-negative."""

    scores: np.ndarray
    image_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 3:
            raise ShapeError(f"score map must be 3-D, got rank {self.scores.ndim}")
        if not np.isfinite(self.scores).all():
            raise DataError("score map contains NaN or Inf")
        if not self.image_ids:
            self.image_ids = [f"{i:03d}" for i in range(self.scores.shape[0])]


def flatten(stack: FeatureStack | np.ndarray) -> np.ndarray:
    """Collapse a B x C x H x W stack to BHW x C, rows in (b, h, w) order."""
    data = stack.data if isinstance(stack, FeatureStack) else np.asarray(stack)
    if data.ndim != 4:
        raise ShapeError(f"expected a 4-D stack, got rank {data.ndim}")
    b, c, h, w = data.shape
    return np.ascontiguousarray(data.transpose(0, 2, 3, 1).reshape(b * h * w, c))


def unflatten(flat: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Inverse of flatten for a known B x C x H x W shape."""
    b, c, h, w = shape
    return np.ascontiguousarray(flat.reshape(b, h, w, c).transpose(0, 3, 1, 2))


def fit_mean(flat: np.ndarray) -> np.ndarray:
    """Column-wise arithmetic mean of the pooled feature rows."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.ndim != 2 or flat.shape[0] < 1:
        raise ValueError(f"need a non-empty 2-D matrix, got shape {flat.shape}")
    return flat.mean(axis=0)


def fit_covariance(flat: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Unbiased empirical covariance, two-pass and chunked.

    The mean is subtracted first, then outer products accumulate over fixed
    4096-row chunks in sequential order so results are bit-identical run to
    run. Divisor is n - 1.
    """
    flat = np.asarray(flat, dtype=np.float64)
    n = flat.shape[0]
    if flat.ndim != 2 or n < 2:
        raise ValueError(f"need at least 2 rows for a covariance, got shape {flat.shape}")
    c = flat.shape[1]
    acc = np.zeros((c, c), dtype=np.float64)
    for start in range(0, n, COV_CHUNK_ROWS):
        centered = flat[start : start + COV_CHUNK_ROWS] - mean
        acc += centered.T @ centered
    cov = acc / (n - 1)
    return (cov + cov.T) / 2.0


def build_model(
    flat: np.ndarray,
    floor_rel: float = DEFAULT_FLOOR_REL,
    layer_name: str = "",
    category: str = "",
) -> MvgModel:
    """Fit moments and derive the whitening transform from flattened features."""
    mean = fit_mean(flat)
    cov = fit_covariance(flat, mean)
    return model_from_moments(
        mean, cov, floor_rel=floor_rel, layer_name=layer_name, category=category
    )


def model_from_moments(
    mean: np.ndarray,
    covariance: np.ndarray,
    floor_rel: float = DEFAULT_FLOOR_REL,
    layer_name: str = "",
    category: str = "",
) -> MvgModel:
    """Build an MvgModel from known mean and covariance.

    Eigenvalues come out of the symmetric decomposition ascending; any below
    floor_rel * largest are raised to that floor. Each eigenvector's
    largest-magnitude entry is made positive so artifacts are reproducible
    (the scores themselves are sign-invariant).
    """
    if floor_rel <= 0:
        raise ValueError(f"floor_rel must be positive, got {floor_rel}")
    mean = np.asarray(mean, dtype=np.float64)
    covariance = np.asarray(covariance, dtype=np.float64)
    if covariance.shape != (mean.shape[0], mean.shape[0]):
        raise ShapeError(
            f"covariance shape {covariance.shape} does not match C={mean.shape[0]}"
        )
    if not (np.isfinite(mean).all() and np.isfinite(covariance).all()):
        raise NumericError("non-finite values in model moments")
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    lam_max = eigenvalues[-1]
    if not np.isfinite(lam_max) or lam_max <= 0:
        raise NumericError(f"largest eigenvalue {lam_max} is not positive")

    floor = floor_rel * lam_max
    floored_count = int((eigenvalues < floor).sum())
    eigenvalues = np.maximum(eigenvalues, floor)

    # sign convention: largest-magnitude entry of each column positive
    pivot = np.argmax(np.abs(eigenvectors), axis=0)
    signs = np.sign(eigenvectors[pivot, np.arange(eigenvectors.shape[1])])
    signs[signs == 0] = 1.0
    eigenvectors = eigenvectors * signs

    whitening = (eigenvectors / np.sqrt(eigenvalues)).T
    return MvgModel(
        mean=mean,
        covariance=covariance,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        whitening=whitening,
        floor_rel=float(floor_rel),
        eigenvalue_floor=float(floor),
        floored_count=floored_count,
        layer_name=layer_name,
        category=category,
    )


def whiten(stack: FeatureStack, model: MvgModel) -> WhitenedStack:
    """Apply y = W (x - mean) at every pixel; also fill the point-wise squares."""
    b, c, h, w = stack.data.shape
    if c != model.dim:
        raise ShapeError(f"stack has C={c} channels, model expects C={model.dim}")
    flat = flatten(stack)
    y_flat = (flat - model.mean) @ model.whitening.T
    y = unflatten(y_flat, (b, c, h, w))
    return WhitenedStack(y=y, y_sq=y * y, source=stack, model=model)


def score_map(whitened: WhitenedStack) -> ScoreMap:
    """Sum the squared whitened components over channels (axis 1)."""
    scores = whitened.y_sq.sum(axis=1)
    ids = whitened.source.image_ids if whitened.source is not None else []
    return ScoreMap(scores, image_ids=list(ids))


def mahalanobis_sq_direct(x: np.ndarray, model: MvgModel) -> float:
    """Squared Mahalanobis distance via an explicit linear solve.

    Deliberately bypasses the whitening matrix: this is the independent route
    used to validate that the sum of squared whitened components equals
    (x - mean)^T covariance^-1 (x - mean).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ShapeError(f"x has shape {x.shape}, expected ({model.dim},)")
    if not np.isfinite(x).all():
        raise NumericError("non-finite input vector")
    delta = x - model.mean
    try:
        solved = np.linalg.solve(model.covariance, delta)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance solve failed: {exc}") from exc
    return float(delta @ solved)
