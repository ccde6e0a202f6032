"""Batch driver: every pipeline stage scriptable from the shell.

Exit codes: 1 usage, 2 configuration, 3 missing/undecodable data, 4 pipeline
or training failure.  Outputs are byte-reproducible given the same inputs,
config and seed (set SOURCE_DATE_EPOCH to pin the bundle timestamp).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset, imgio, models, pipeline, preprocess, segment
from .features import FEATURE_NAMES, REGIONS
from .imaging import rgb_to_lab, rgb_to_ycbcr

EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PIPELINE = 4


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(path: str | None) -> pipeline.PipelineConfig:
    if path is None:
        return pipeline.PipelineConfig()
    return pipeline.load_config(path)


def _trained_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.datetime.fromtimestamp(int(epoch), datetime.timezone.utc)
    else:
        moment = datetime.datetime.now(datetime.timezone.utc)
    return moment.isoformat()


def _load_corpus(path: str) -> list:
    root = Path(path)
    if not root.exists():
        raise DataError(f"corpus directory {root} does not exist")
    try:
        patients = dataset.read_corpus(root)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read corpus at {root}: {exc}") from exc
    if not patients:
        raise DataError(f"corpus at {root} is empty")
    return patients


def _plane_to_image(plane: np.ndarray) -> np.ndarray:
    p = np.clip(plane, 0, 255).astype(np.uint8)
    return np.stack([p, p, p], axis=-1)


def _mask_to_image(mask: np.ndarray) -> np.ndarray:
    return _plane_to_image(mask.astype(np.float64) * 255.0)


# ------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    patients = dataset.synth_corpus(args.n, args.seed)
    dataset.write_corpus(patients, args.output)
    print(f"wrote {len(patients)} patients to {args.output}")
    return 0


def cmd_preprocess(args) -> int:
    config = _load_config(args.config)
    try:
        img = imgio.load_image(args.input)
    except imgio.ImageDecodeError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    y_plane, _, _ = rgb_to_ycbcr(img)
    y_eq = preprocess.clahe(y_plane, config.clahe)
    glare = preprocess.adaptive_threshold(y_eq, config.glare_window, config.glare_offset)
    glare = preprocess.morph(glare, "open", "square3")
    imgio.save_image(out / "equalized.png", _plane_to_image(y_eq))
    imgio.save_image(out / "glare_mask.png", _mask_to_image(glare))
    print(f"wrote equalized.png and glare_mask.png to {out}")
    return 0


def cmd_segment(args) -> int:
    config = _load_config(args.config)
    try:
        img = imgio.load_image(args.input)
    except imgio.ImageDecodeError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    L, a, b = rgb_to_lab(img)
    labels = segment.slic(L, a, b, config.slic_k, config.slic_compactness,
                          config.slic_iters)
    selection = segment.select_roi(labels, L, a, b, config.profiles[args.region])
    np.save(out / "superpixels.npy", labels)
    imgio.save_image(out / "roi_mask.png", _mask_to_image(selection.mask))
    status = "confident" if selection.confident else "low-confidence (empty mask)"
    print(f"segmented {args.input}: {labels.max() + 1} superpixels, "
          f"{len(selection.labels)} selected, {status}")
    return 0


def cmd_features(args) -> int:
    config = _load_config(args.config)
    patients = _load_corpus(args.input)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "region", "valid", *FEATURE_NAMES])
        for patient in patients:
            for region in REGIONS:
                if region not in patient.images:
                    continue
                result = pipeline.run_region_pipeline(
                    patient.images[region], region, config,
                    patient.altitude_m, patient.age_years)
                writer.writerow([
                    patient.patient_id, region, int(result.features.valid),
                    *(repr(float(v)) for v in result.features.values),
                ])
    print(f"wrote feature rows to {out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    patients = _load_corpus(args.input)
    rows, skipped = pipeline.rows_from_patients(patients, config, jobs=args.jobs)
    if skipped:
        print(f"warning: skipped {len(skipped)} patients with invalid regions: "
              f"{skipped[:5]}{'...' if len(skipped) > 5 else ''}", file=sys.stderr)
    if not rows:
        raise DataError("no usable patients in corpus")

    metrics = {}
    heldout = []
    train_rows = rows
    if args.test_fraction > 0:
        train_rows, heldout = pipeline.split_rows(rows, args.test_fraction, config.seed)
    try:
        bundle = pipeline.train_bundle(train_rows, config)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    bundle.trained_at = _trained_at()
    if heldout:
        evaluation = pipeline.evaluate_bundle(bundle, heldout)
        metrics = {
            "holdout_spearman": evaluation["spearman_rho"],
            "holdout_mae": evaluation["mae_g_dl"],
            "holdout_accuracy": evaluation["class_accuracy"],
            "holdout_n": evaluation["n"],
        }
        bundle.metrics = metrics
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    models.save_bundle(bundle, out)
    if heldout:
        heldout_path = out.with_suffix(out.suffix + ".heldout.csv")
        heldout_path.write_text(pipeline.training_rows_to_csv(heldout))
        print(f"held out {len(heldout)} patients -> {heldout_path}")
    print(f"trained on {len(train_rows)} patients -> {out}")
    if metrics:
        print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _read_rows_input(path: str, config, jobs: int):
    target = Path(path)
    if target.is_file() and target.suffix == ".csv":
        return pipeline.training_rows_from_csv(target.read_text())
    patients = _load_corpus(path)
    rows, skipped = pipeline.rows_from_patients(patients, config, jobs=jobs)
    if skipped:
        print(f"warning: skipped {len(skipped)} patients", file=sys.stderr)
    return rows


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    try:
        bundle = models.load_bundle(args.bundle)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load bundle {args.bundle}: {exc}") from exc
    rows = _read_rows_input(args.input, config, args.jobs)
    if not rows:
        raise DataError("no evaluation rows")
    metrics = pipeline.evaluate_bundle(bundle, rows)
    predictions = metrics.pop("predictions")

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "predictions.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "patient_id", "true_hb", "predicted_hb", "true_class",
            "fused_class", "predicted_class",
        ])
        writer.writeheader()
        for p in predictions:
            writer.writerow({**p, "predicted_hb": repr(float(p["predicted_hb"]))})
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key in ("n", "spearman_rho", "mae_g_dl", "class_accuracy"):
            writer.writerow([key, metrics[key]])
        for t in models.CLASSES:
            for p in models.CLASSES:
                writer.writerow([f"confusion_{t}_{p}", metrics["confusion"][t][p]])
    print(json.dumps({k: metrics[k] for k in
                      ("n", "spearman_rho", "mae_g_dl", "class_accuracy")},
                     indent=2, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    config = _load_config(args.config)
    try:
        bundle = models.load_bundle(args.bundle)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load bundle {args.bundle}: {exc}") from exc
    patient_dir = Path(args.input)
    images = {}
    missing = []
    for region in REGIONS:
        path = patient_dir / f"{region}.png"
        if path.exists():
            images[region] = imgio.load_image(path)
        else:
            missing.append(region)
    if not images:
        raise DataError(f"no region images in {patient_dir}; missing {missing}")
    result = pipeline.screen_patient(
        images, bundle, config,
        age_years=args.age, sex=args.sex, pregnant=args.pregnant,
        altitude_m=args.altitude,
    )
    payload = json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(payload)
    else:
        print(payload, end="")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import build_app
    from .service.core import ServiceConfig

    overrides = {}
    if args.data_dir:
        overrides["data_dir"] = Path(args.data_dir)
    if args.bundle:
        overrides["bundle_path"] = Path(args.bundle)
    if args.config:
        overrides["pipeline_config_path"] = Path(args.config)
    if args.host:
        overrides["host"] = args.host
    if args.port:
        overrides["port"] = args.port
    config = ServiceConfig.from_env(**overrides)
    if config.bundle_path is None:
        raise DataError("serve needs --bundle or HEMASCREEN_BUNDLE")
    app = build_app(config)
    uvicorn.run(app, host=config.host, port=config.port)
    return 0


# ------------------------------------------------------------------- main

def build_parser() -> _Parser:
    parser = _Parser(prog="hemascreen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic screening corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="equalize one image and mask glare")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("segment", help="superpixel + colour-profile ROI for one image")
    p.add_argument("--input", required=True)
    p.add_argument("--region", choices=REGIONS, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("features", help="extract feature CSV from a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model bundle from a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a bundle on a corpus or rows CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="screen one patient directory of region PNGs")
    p.add_argument("--input", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--output")
    p.add_argument("--config")
    p.add_argument("--age", type=float, default=30.0)
    p.add_argument("--sex", choices=("female", "male"), default="male")
    p.add_argument("--pregnant", action="store_true")
    p.add_argument("--altitude", type=float, default=0.0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="run the patient-monitoring HTTP service")
    p.add_argument("--data-dir")
    p.add_argument("--bundle")
    p.add_argument("--config")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except pipeline.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, imgio.ImageDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (pipeline.PipelineError, models.FeatureVersionError, RuntimeError,
            ValueError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
