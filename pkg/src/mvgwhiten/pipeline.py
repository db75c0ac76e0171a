"""Stage implementations behind the CLI: fit, score, eval, render, run.

Every stage is file-driven: it reads its inputs from the dataset manifest or
from a previous stage's outputs and writes its results under

    <output_dir>/<category>/<layer>/
        model/                        fitted Gaussian + whitening
        <split>/scores.npy            squared-distance maps, float64
        <split>/y_sq.npy              squared whitened components, float32
        metrics.json                  test-split MetricsReport
        <split>/<group>/page_<k>.png  figure pages
        scales.json                   every vmax used while rendering
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import core_stats, metrics, tensor_io, viz
from .config import PipelineConfig
from .errors import ConfigError, DataError, MvgWhitenError
from .tensor_io import DatasetManifest, FeatureStack, PixelLabels

PAGE_GROUPS = ("components_low", "components_high", "score")


def layer_dir(cfg: PipelineConfig, manifest: DatasetManifest, layer: str) -> Path:
    return Path(cfg.output_dir) / manifest.category / layer


def _selected_layers(cfg: PipelineConfig, manifest: DatasetManifest) -> list[str]:
    if cfg.layers is None:
        return list(manifest.layers)
    missing = [l for l in cfg.layers if l not in manifest.layers]
    if missing:
        raise ConfigError(f"layers not in manifest: {missing}")
    return list(cfg.layers)


def _load_manifest(cfg: PipelineConfig) -> DatasetManifest:
    if not cfg.manifest_path:
        raise ConfigError("config is missing manifest_path")
    return tensor_io.load_manifest(cfg.manifest_path)


def _split_image_ids(manifest: DatasetManifest, split: str) -> list[str]:
    return [f.stem for f in tensor_io.list_image_files(manifest.images[split])]


def _load_stack(manifest: DatasetManifest, split: str, layer: str) -> FeatureStack:
    return tensor_io.read_tensor(
        manifest.features[split][layer],
        layer_name=layer,
        split=split,
        image_ids=_split_image_ids(manifest, split),
    )


def _load_masks(cfg: PipelineConfig, manifest: DatasetManifest, split: str) -> PixelLabels:
    labels = tensor_io.read_masks(manifest.masks[split], threshold=cfg.mask_threshold)
    if labels.masks.shape[1:] != tuple(manifest.image_size):
        raise DataError(
            f"{split} masks are {labels.masks.shape[1:]}, "
            f"manifest image_size is {tuple(manifest.image_size)}"
        )
    return labels


def stage_fit(cfg: PipelineConfig) -> None:
    """Fit one Gaussian + whitening model per (category, layer) on the train split."""
    manifest = _load_manifest(cfg)
    for layer in _selected_layers(cfg, manifest):
        stack = _load_stack(manifest, "train", layer)
        flat = core_stats.flatten(stack)
        model = core_stats.build_model(
            flat, floor_rel=cfg.floor_rel, layer_name=layer, category=manifest.category
        )
        model.save(layer_dir(cfg, manifest, layer) / "model")
        print(
            f"fit {manifest.category}/{layer}: C={model.dim} rows={flat.shape[0]} "
            f"eigenvalues [{model.eigenvalues[0]:.6g}, {model.eigenvalues[-1]:.6g}] "
            f"floored={model.floored_count}"
        )


def stage_score(cfg: PipelineConfig) -> None:
    """Whiten both splits and write squared-component and score-map tensors."""
    manifest = _load_manifest(cfg)
    for layer in _selected_layers(cfg, manifest):
        root = layer_dir(cfg, manifest, layer)
        model = core_stats.MvgModel.load(root / "model")
        for split in tensor_io.SPLITS:
            stack = _load_stack(manifest, split, layer)
            whitened = core_stats.whiten(stack, model)
            smap = core_stats.score_map(whitened)
            tensor_io.write_array(smap.scores, root / split / "scores.npy")
            if cfg.save_y_sq:
                tensor_io.write_array(whitened.y_sq, root / split / "y_sq.npy", dtype="float32")
            print(
                f"score {manifest.category}/{layer}/{split}: B={stack.shape[0]} "
                f"max={smap.scores.max():.4g}"
            )


def stage_eval(cfg: PipelineConfig) -> None:
    """Compute test-split AUROC/AUPR/AUPRO and the per-component ranking."""
    manifest = _load_manifest(cfg)
    _load_masks(cfg, manifest, "train").require_all_normal()
    test_labels = _load_masks(cfg, manifest, "test")
    for layer in _selected_layers(cfg, manifest):
        root = layer_dir(cfg, manifest, layer)
        scores = _read_stage_array(root / "test" / "scores.npy", "score")
        y_sq = _read_stage_array(root / "test" / "y_sq.npy", "score")
        report = metrics.evaluate(
            scores,
            y_sq,
            test_labels,
            manifest.image_size,
            fpr_limit=cfg.fpr_limit,
            threads=cfg.threads,
        )
        (root / "metrics.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True)
        )
        print(
            f"eval {manifest.category}/{layer}: AUROC={report.auroc:.4f} "
            f"AUPR={report.aupr:.4f} AUPRO={report.aupro:.4f}"
        )


def _read_stage_array(path: Path, producer: str) -> np.ndarray:
    if not path.exists():
        raise DataError(f"missing {path}; run the {producer} stage first")
    return tensor_io.read_array(path)


def _select_components(cfg: PipelineConfig, report: metrics.MetricsReport) -> tuple[list[int], list[int]]:
    """(low-AUROC, high-AUROC) component lists per config; ranking is best-first."""
    if cfg.components is not None:
        return list(cfg.components), list(cfg.components)
    ranked = [c for c, _ in report.per_component_auroc]
    low = list(reversed(ranked[len(ranked) - cfg.k_lowest :])) if cfg.k_lowest else []
    high = ranked[: cfg.k_highest]
    return low, high


def _render_split_pages(
    out_dir: Path,
    group: str,
    header: str,
    image_ids: list[str],
    row_indices: list[int],
    columns: list[tuple[str, np.ndarray, viz.ColorScale]],
    images: np.ndarray,
    spec: viz.RenderSpec,
    per_page: int,
) -> None:
    """Write page_<k>.png files: one grid row per image, one column per heatmap."""
    for page_idx, start in enumerate(range(0, len(row_indices), per_page)):
        rows = []
        for b in row_indices[start : start + per_page]:
            row = [
                (f"{image_ids[b]} | {name}", viz.render_tile(maps[b], images[b], scale, spec))
                for name, maps, scale in columns
            ]
            rows.append(row)
        viz.render_page(
            viz.FigurePage(header=header, rows=rows),
            out_dir / group / f"page_{page_idx}.png",
        )


def stage_render(cfg: PipelineConfig) -> None:
    """Render component and score-map heatmap pages for both splits."""
    manifest = _load_manifest(cfg)
    test_labels = _load_masks(cfg, manifest, "test")
    spec = viz.RenderSpec(alpha=cfg.alpha, target_size=tuple(manifest.image_size))
    for layer in _selected_layers(cfg, manifest):
        root = layer_dir(cfg, manifest, layer)
        metrics_path = root / "metrics.json"
        if not metrics_path.exists():
            raise DataError(f"missing {metrics_path}; run the eval stage first")
        report = metrics.MetricsReport.from_dict(json.loads(metrics_path.read_text()))
        low, high = _select_components(cfg, report)
        scales_used: dict = {}

        for split in tensor_io.SPLITS:
            scores = _read_stage_array(root / split / "scores.npy", "score")
            y_sq = _read_stage_array(root / split / "y_sq.npy", "score")
            images = tensor_io.read_images(manifest.images[split], manifest.image_size)
            image_ids = _split_image_ids(manifest, split)
            if images.shape[0] != scores.shape[0]:
                raise DataError(
                    f"{split}: {images.shape[0]} images but {scores.shape[0]} score maps"
                )

            # test pages show the anomalous images, train pages the normal ones
            if split == "test":
                row_indices = [int(b) for b in np.nonzero(test_labels.masks.any(axis=(1, 2)))[0]]
            else:
                row_indices = list(range(scores.shape[0]))
            if cfg.max_images is not None:
                row_indices = row_indices[: cfg.max_images]
            if not row_indices:
                continue

            header = (
                f"{manifest.category} {layer} {split} | "
                f"AUROC {report.auroc:.4f} AUPR {report.aupr:.4f} AUPRO {report.aupro:.4f}"
            )
            split_scales = scales_used.setdefault(split, {})

            if "score_map" in cfg.scale_strategies:
                score_scale = viz.color_scale(
                    scores, "score_map", percentile=cfg.percentile, split=split
                )
                split_scales["score_map"] = score_scale.vmax
                _render_split_pages(
                    root / split, "score", header, image_ids, row_indices,
                    [("score", scores, score_scale)],
                    images, spec, cfg.images_per_page,
                )

            if low and "per_component" in cfg.scale_strategies:
                columns = []
                per_comp_scales = split_scales.setdefault("per_component", {})
                for c in low:
                    scale = viz.color_scale(
                        y_sq[:, c], "per_component", percentile=cfg.percentile, split=split
                    )
                    per_comp_scales[str(c)] = scale.vmax
                    columns.append((f"comp {c}", y_sq[:, c], scale))
                _render_split_pages(
                    root / split, "components_low", header, image_ids, row_indices,
                    columns, images, spec, cfg.images_per_page,
                )

            if high and "cross_component" in cfg.scale_strategies:
                cross_scale = viz.color_scale(
                    y_sq, "cross_component", percentile=cfg.percentile, split=split
                )
                split_scales["cross_component"] = cross_scale.vmax
                columns = [(f"comp {c}", y_sq[:, c], cross_scale) for c in high]
                if "score_map" in cfg.scale_strategies:
                    score_scale = viz.color_scale(
                        scores, "score_map", percentile=cfg.percentile, split=split
                    )
                    columns.append(("score", scores, score_scale))
                _render_split_pages(
                    root / split, "components_high", header, image_ids, row_indices,
                    columns, images, spec, cfg.images_per_page,
                )

        (root / "scales.json").write_text(json.dumps(scales_used, indent=2, sort_keys=True))
        print(f"render {manifest.category}/{layer}: wrote pages under {root}")


STAGES = {
    "fit": stage_fit,
    "score": stage_score,
    "eval": stage_eval,
    "render": stage_render,
}


def stage_run(cfg: PipelineConfig) -> None:
    """fit -> score -> eval -> render; the first failing stage aborts the run."""
    for name in ("fit", "score", "eval", "render"):
        try:
            STAGES[name](cfg)
        except MvgWhitenError as exc:
            raise type(exc)(f"[{name}] {exc}") from exc
        except Exception as exc:
            raise MvgWhitenError(f"[{name}] {exc}") from exc
