"""CLI and pipeline-stage tests on file-driven synthetic datasets.

Covers the command surface (fit/score/eval/render/run), exit codes
(0 success, 2 config, 3 data, 4 numeric), stage chaining errors, scale
bookkeeping, and byte-level determinism of every artifact.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mvgwhiten import core_stats, tensor_io
from mvgwhiten.cli import main
from mvgwhiten.config import PipelineConfig, load_config
from mvgwhiten.errors import ConfigError

from conftest import build_dataset, write_gray_png


def run_cli(*args: str) -> int:
    return main(list(args))


def tree_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def layer_root(ds) -> Path:
    return ds.output_dir / ds.category / ds.layers[0]


# ---------------------------------------------------------------- config


def test_config_defaults_carry_method_constants():
    cfg = PipelineConfig(manifest_path="m.json")
    assert cfg.floor_rel == 1e-10
    assert cfg.percentile == 99.0
    assert cfg.alpha == 0.5
    assert cfg.fpr_limit == 0.3
    assert cfg.deterministic is True
    cfg.validate()


@pytest.mark.parametrize(
    "overrides",
    [
        {"manifest_path": ""},
        {"layers": []},
        {"floor_rel": 0.0},
        {"percentile": 0.0},
        {"percentile": 101.0},
        {"alpha": 1.2},
        {"fpr_limit": 0.0},
        {"fpr_limit": 1.0001},
        {"k_lowest": -1},
        {"scale_strategies": ["rainbow"]},
        {"images_per_page": 0},
        {"threads": 0},
    ],
)
def test_config_rejects_out_of_range_values(overrides):
    cfg = PipelineConfig(manifest_path="m.json")
    for key, value in overrides.items():
        setattr(cfg, key, value)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"manifest_path": "m.json", "typo_key": 1}))
    with pytest.raises(ConfigError, match="typo_key"):
        load_config(path)


def test_load_config_resolves_manifest_relative_to_config(small_dataset):
    cfg = load_config(small_dataset.config_path)
    assert Path(cfg.manifest_path).is_absolute()
    assert Path(cfg.manifest_path) == small_dataset.manifest_path


# ---------------------------------------------------------------- fit


def test_fit_writes_model_with_matching_dim(small_dataset, capsys):
    assert run_cli("fit", "--config", str(small_dataset.config_path)) == 0
    model = core_stats.MvgModel.load(layer_root(small_dataset) / "model")
    assert model.dim == small_dataset.feature_shape[1]
    np.testing.assert_allclose(
        model.whitening @ model.covariance @ model.whitening.T,
        np.eye(model.dim),
        atol=1e-8,
    )
    out = capsys.readouterr().out
    assert "eigenvalues" in out and "floored" in out


def test_fit_rerun_is_byte_identical(small_dataset):
    assert run_cli("fit", "--config", str(small_dataset.config_path)) == 0
    first = tree_digest(layer_root(small_dataset) / "model")
    assert run_cli("fit", "--config", str(small_dataset.config_path)) == 0
    assert tree_digest(layer_root(small_dataset) / "model") == first


def test_fit_missing_layer_file_exits_3(small_dataset, capsys):
    doc = json.loads(small_dataset.manifest_path.read_text())
    doc["splits"]["train"]["features"]["layerA"] = "gone.npy"
    small_dataset.manifest_path.write_text(json.dumps(doc))
    assert run_cli("fit", "--config", str(small_dataset.config_path)) == 3
    assert "missing feature tensor" in capsys.readouterr().err


def test_fit_degenerate_features_exit_4(small_dataset, capsys):
    manifest = tensor_io.load_manifest(small_dataset.manifest_path)
    path = manifest.features["train"]["layerA"]
    b, c, h, w = small_dataset.feature_shape
    constant = np.zeros((6, c, h, w))  # six all-identical train images
    tensor_io.write_array(constant, path, dtype="float32")
    assert run_cli("fit", "--config", str(small_dataset.config_path)) == 4
    assert "numeric error" in capsys.readouterr().err


# ---------------------------------------------------------------- score


def test_score_outputs_match_in_process_computation(small_dataset):
    cfg = str(small_dataset.config_path)
    assert run_cli("fit", "--config", cfg) == 0
    assert run_cli("score", "--config", cfg) == 0
    root = layer_root(small_dataset)

    manifest = tensor_io.load_manifest(small_dataset.manifest_path)
    train = tensor_io.read_tensor(manifest.features["train"]["layerA"])
    test = tensor_io.read_tensor(manifest.features["test"]["layerA"])
    model = core_stats.build_model(core_stats.flatten(train))
    expected = core_stats.score_map(core_stats.whiten(test, model)).scores

    written = tensor_io.read_array(root / "test" / "scores.npy")
    np.testing.assert_array_equal(written, expected)
    y_sq = tensor_io.read_array(root / "test" / "y_sq.npy")
    assert y_sq.shape == small_dataset.feature_shape


def test_score_at_the_mean_is_zero(small_dataset):
    cfg = str(small_dataset.config_path)
    manifest = tensor_io.load_manifest(small_dataset.manifest_path)
    train = tensor_io.read_tensor(manifest.features["train"]["layerA"])
    mean = core_stats.fit_mean(core_stats.flatten(train))
    b, c, h, w = small_dataset.feature_shape
    at_mean = np.broadcast_to(mean.reshape(1, c, 1, 1), (b, c, h, w))
    tensor_io.write_array(at_mean, manifest.features["test"]["layerA"], dtype="float64")

    assert run_cli("fit", "--config", cfg) == 0
    assert run_cli("score", "--config", cfg) == 0
    scores = tensor_io.read_array(layer_root(small_dataset) / "test" / "scores.npy")
    np.testing.assert_allclose(scores, 0.0, atol=1e-18)


def test_score_without_fit_exits_3(small_dataset, capsys):
    assert run_cli("score", "--config", str(small_dataset.config_path)) == 3
    assert "no model" in capsys.readouterr().err


# ---------------------------------------------------------------- eval


def run_through_score(ds) -> Path:
    cfg = str(ds.config_path)
    assert run_cli("fit", "--config", cfg) == 0
    assert run_cli("score", "--config", cfg) == 0
    return layer_root(ds)


def test_eval_writes_full_report(small_dataset):
    root = run_through_score(small_dataset)
    assert run_cli("eval", "--config", str(small_dataset.config_path)) == 0
    doc = json.loads((root / "metrics.json").read_text())
    assert set(doc) == {"auroc", "aupr", "aupro", "fpr_limit", "per_component_auroc"}
    assert 0.0 <= doc["auroc"] <= 1.0
    assert doc["fpr_limit"] == 0.3
    c = small_dataset.feature_shape[1]
    assert sorted(idx for idx, _ in doc["per_component_auroc"]) == list(range(c))


def test_eval_perfect_detector_scores_one(tmp_path):
    # image resolution == feature resolution, so upsampling is the identity
    ds = build_dataset(tmp_path / "flat", scale=1, h=12, w=12, region=(3, 9, 4, 10))
    root = run_through_score(ds)
    masks = tensor_io.read_masks(ds.root / "masks/test").masks
    tensor_io.write_array(masks.astype(np.float64), root / "test" / "scores.npy")
    y_sq = np.stack([masks.astype(np.float64)] * ds.feature_shape[1], axis=1)
    tensor_io.write_array(y_sq, root / "test" / "y_sq.npy", dtype="float32")

    assert run_cli("eval", "--config", str(ds.config_path)) == 0
    doc = json.loads((root / "metrics.json").read_text())
    assert doc["auroc"] == pytest.approx(1.0, abs=1e-12)
    assert doc["aupr"] == pytest.approx(1.0, abs=1e-12)
    assert doc["aupro"] == pytest.approx(1.0, abs=1e-12)


def test_eval_constant_scores_auroc_half(small_dataset):
    root = run_through_score(small_dataset)
    b, c, h, w = small_dataset.feature_shape
    tensor_io.write_array(np.ones((b, h, w)), root / "test" / "scores.npy")
    tensor_io.write_array(np.ones((b, c, h, w)), root / "test" / "y_sq.npy", dtype="float32")
    assert run_cli("eval", "--config", str(small_dataset.config_path)) == 0
    doc = json.loads((root / "metrics.json").read_text())
    assert doc["auroc"] == pytest.approx(0.5, abs=1e-12)


def test_eval_without_score_exits_3(small_dataset, capsys):
    assert run_cli("fit", "--config", str(small_dataset.config_path)) == 0
    assert run_cli("eval", "--config", str(small_dataset.config_path)) == 3
    assert "run the score stage first" in capsys.readouterr().err


def test_eval_rejects_anomalous_train_masks(small_dataset, capsys):
    run_through_score(small_dataset)
    write_gray_png(
        small_dataset.root / "masks/train/000.png",
        np.full(small_dataset.image_size, 255),
    )
    assert run_cli("eval", "--config", str(small_dataset.config_path)) == 3
    assert "normal" in capsys.readouterr().err


# ---------------------------------------------------------------- render


def run_through_eval(ds) -> Path:
    root = run_through_score(ds)
    assert run_cli("eval", "--config", str(ds.config_path)) == 0
    return root


def test_render_writes_expected_tree(small_dataset):
    root = run_through_eval(small_dataset)
    assert run_cli("render", "--config", str(small_dataset.config_path)) == 0

    # train: 6 images capped at max_images=4, 2 per page -> 2 pages;
    # test: only the 2 anomalous images -> 1 page
    for group in ("score", "components_low", "components_high"):
        train_pages = sorted((root / "train" / group).glob("page_*.png"))
        test_pages = sorted((root / "test" / group).glob("page_*.png"))
        assert len(train_pages) == 2
        assert len(test_pages) == 1

    scales = json.loads((root / "scales.json").read_text())
    for split in ("train", "test"):
        assert scales[split]["score_map"] > 0
        assert scales[split]["cross_component"] > 0
        per_component = scales[split]["per_component"]
        assert len(per_component) == 2  # k_lowest = 2 in the fixture config
        assert all(v > 0 for v in per_component.values())


def test_render_scales_match_percentile_of_split_values(small_dataset):
    root = run_through_eval(small_dataset)
    assert run_cli("render", "--config", str(small_dataset.config_path)) == 0
    scales = json.loads((root / "scales.json").read_text())
    for split in ("train", "test"):
        scores = tensor_io.read_array(root / split / "scores.npy")
        y_sq = tensor_io.read_array(root / split / "y_sq.npy")
        assert scales[split]["score_map"] == pytest.approx(
            np.percentile(scores, 99.0), rel=1e-12
        )
        assert scales[split]["cross_component"] == pytest.approx(
            np.percentile(y_sq, 99.0), rel=1e-12
        )
        for comp, vmax in scales[split]["per_component"].items():
            assert vmax == pytest.approx(
                np.percentile(y_sq[:, int(comp)], 99.0), rel=1e-12
            )


def test_render_explicit_component_selection(tmp_path):
    ds = build_dataset(tmp_path / "sel", config_overrides={"components": [0]})
    run_through_eval(ds)
    assert run_cli("render", "--config", str(ds.config_path)) == 0
    scales = json.loads((layer_root(ds) / "scales.json").read_text())
    assert list(scales["test"]["per_component"]) == ["0"]


def test_render_without_eval_exits_3(small_dataset, capsys):
    run_through_score(small_dataset)
    assert run_cli("render", "--config", str(small_dataset.config_path)) == 3
    assert "run the eval stage first" in capsys.readouterr().err


# ---------------------------------------------------------------- run


def test_run_equals_manual_stage_sequence(tmp_path):
    ds = build_dataset(tmp_path / "data")
    out_a, out_b = tmp_path / "out_a", tmp_path / "out_b"
    assert run_cli("run", "--config", str(ds.config_path), "--out", str(out_a)) == 0
    for stage in ("fit", "score", "eval", "render"):
        assert run_cli(stage, "--config", str(ds.config_path), "--out", str(out_b)) == 0
    assert tree_digest(out_a) == tree_digest(out_b)


def test_run_rerun_is_byte_identical(small_dataset):
    cfg = str(small_dataset.config_path)
    assert run_cli("run", "--config", cfg) == 0
    first = tree_digest(small_dataset.output_dir)
    shutil.rmtree(small_dataset.output_dir)
    assert run_cli("run", "--config", cfg) == 0
    assert tree_digest(small_dataset.output_dir) == first


def test_run_reports_failing_stage(small_dataset, capsys):
    write_gray_png(
        small_dataset.root / "masks/train/000.png",
        np.full(small_dataset.image_size, 255),
    )
    assert run_cli("run", "--config", str(small_dataset.config_path)) == 3
    assert "[eval]" in capsys.readouterr().err


def test_empty_config_exits_2(tmp_path, capsys):
    path = tmp_path / "empty.json"
    path.write_text("{}")
    assert run_cli("run", "--config", str(path)) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert run_cli("run", "--config", str(tmp_path / "absent.json")) == 2


def test_unknown_layer_override_exits_2(small_dataset, capsys):
    code = run_cli(
        "fit", "--config", str(small_dataset.config_path), "--layers", "nope"
    )
    assert code == 2
    assert "not in manifest" in capsys.readouterr().err


def test_layers_override_selects_subset(tmp_path):
    ds = build_dataset(tmp_path / "two", layers=("layerA", "layerB"))
    code = run_cli("fit", "--config", str(ds.config_path), "--layers", "layerB")
    assert code == 0
    assert (ds.output_dir / ds.category / "layerB" / "model" / "model.json").exists()
    assert not (ds.output_dir / ds.category / "layerA").exists()


def test_threads_override_gives_identical_results(tmp_path):
    ds = build_dataset(tmp_path / "thr", c=4)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run_cli("run", "--config", str(ds.config_path), "--out", str(out_a)) == 0
    code = run_cli(
        "run", "--config", str(ds.config_path), "--out", str(out_b), "--threads", "4"
    )
    assert code == 0
    assert tree_digest(out_a) == tree_digest(out_b)


def test_installed_entry_point_smoke(small_dataset):
    proc = subprocess.run(
        [sys.executable, "-m", "mvgwhiten.cli", "run", "--config", str(small_dataset.config_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (layer_root(small_dataset) / "metrics.json").exists()


def test_no_arguments_is_usage_error():
    proc = subprocess.run(
        [sys.executable, "-m", "mvgwhiten.cli"], capture_output=True, text=True
    )
    assert proc.returncode == 2
    assert "usage" in proc.stderr.lower()
