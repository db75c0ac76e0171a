#!/usr/bin/env python3
"""Extract CNN features for one dataset category and score it end to end.

Expects the common defect-inspection layout (<root>/<category>/{train,test,
ground_truth}) such as the MVTec anomaly detection collection, extracts
per-stage features with a frozen ResNet-18, then runs fit -> score -> eval ->
render per stage and prints a metrics table.

    python3 scripts/run_category.py --dataset data/mvtec --category hazelnut \
        --out runs/hazelnut
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path


def run(cmd: list[str]) -> None:
    print("+", " ".join(cmd))
    subprocess.run(cmd, check=True)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dataset", required=True, help="dataset root directory")
    parser.add_argument("--category", required=True)
    parser.add_argument("--out", default=None, help="working directory (default runs/<category>)")
    parser.add_argument("--stages", default="layer1,layer2,layer3,layer4")
    parser.add_argument("--random-weights", action="store_true",
                        help="skip pretrained weights (offline smoke runs)")
    args = parser.parse_args()

    out = Path(args.out or f"runs/{args.category}")
    features_dir = out / "features"
    extract_cmd = [
        sys.executable, "-m", "extractor.extract",
        "--dataset", args.dataset, "--category", args.category,
        "--out", str(features_dir), "--stages", args.stages,
    ]
    if args.random_weights:
        extract_cmd.append("--random-weights")
    run(extract_cmd)

    config_path = out / "config.json"
    config_path.write_text(
        json.dumps(
            {
                # relative manifest paths resolve against the config file, so
                # pin both to absolute locations
                "manifest_path": str((features_dir / "manifest.json").resolve()),
                "output_dir": str((out / "results").resolve()),
            },
            indent=2,
        )
    )
    run([sys.executable, "-m", "mvgwhiten.cli", "run", "--config", str(config_path)])

    print()
    print(f"{'stage':<10} {'AUROC':>8} {'AUPR':>8} {'AUPRO':>8}  top components")
    for stage in args.stages.split(","):
        report_path = out / "results" / args.category / stage.strip() / "metrics.json"
        report = json.loads(report_path.read_text())
        ranked = ", ".join(f"{c}:{v:.3f}" for c, v in report["per_component_auroc"][:3])
        print(f"{stage.strip():<10} {report['auroc']:>8.4f} {report['aupr']:>8.4f} "
              f"{report['aupro']:>8.4f}  {ranked}")
    print(f"\nheatmap pages under {out / 'results' / args.category}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
