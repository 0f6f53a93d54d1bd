"""Command-line interface covering the full pipeline.

Subcommands: ingest, refine, synth, train, cv, predict, attn, plot.  All
randomness flows from explicit seeds, so reruns with identical inputs
produce identical output bytes.

Exit codes: 0 ok, 2 input/parse error, 3 rejected sequence,
4 unrecoverable data, 64 usage error, 65 capability error,
70 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import CHECKPOINT_FORMAT_VERSION, __version__, _compute
from . import dataset as ds
from . import exports, ingest, models, pipeline, refine, synth, trainer
from .errors import (
    CapabilityError,
    ConfigError,
    EmptyLossError,
    FormatError,
    LabelCoverageError,
    NumericError,
    ParseError,
    RehabSegError,
    ShapeError,
    UnrecoverableChannelError,
)

logger = logging.getLogger("rehabseg")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_REJECTED = 3
EXIT_UNRECOVERABLE = 4
EXIT_USAGE = 64
EXIT_CAPABILITY = 65
EXIT_NUMERIC = 70


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 64, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# strict config parsing
# ---------------------------------------------------------------------------


def _strict_keys(obj: dict, allowed: set[str], context: str, path) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ParseError(f"unknown {context} keys: {sorted(unknown)}", path=path)


def load_run_config(path) -> dict:
    """RunConfig JSON: {"refine": {...}, "train": {...}, "k": 5, "fold_seed": 0}."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ParseError(f"invalid JSON: {err}", path=path)
    _strict_keys(raw, {"refine", "train", "k", "fold_seed"}, "run-config", path)
    refine_raw = raw.get("refine", {})
    _strict_keys(refine_raw, {"max_missing_fraction", "sg_window", "sg_polyorder"},
                 "refine", path)
    train_raw = raw.get("train", {})
    _strict_keys(train_raw, {"epochs", "lr", "batch_size", "seed", "shuffle"},
                 "train", path)
    return {
        "refine": refine.RefineConfig(**refine_raw),
        "train": trainer.TrainConfig(**train_raw),
        "k": int(raw.get("k", 5)),
        "fold_seed": int(raw.get("fold_seed", 0)),
    }


def load_synth_config(path) -> synth.SynthConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as err:
        raise ParseError(f"invalid JSON: {err}", path=path)
    allowed = {"seed", "n_sequences", "view", "duration_ranges", "noise_sd",
               "missing_rate", "sequences_per_patient"}
    _strict_keys(raw, allowed, "synth-config", path)
    if "view" in raw:
        raw["view"] = ingest.View(raw["view"])
    if "duration_ranges" in raw:
        raw["duration_ranges"] = {
            k: (int(v[0]), int(v[1])) for k, v in raw["duration_ranges"].items()
        }
    return synth.SynthConfig(**raw)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    view = ingest.View(args.view)
    landmarks = ingest.parse_landmarks(args.landmarks)
    centers = None
    if view.has_object_channel:
        if not args.detections or not args.target_class:
            raise ConfigError("contralateral ingest needs --detections and --target-class")
        frames = ingest.parse_detections(args.detections)
        centers = [ingest.select_object_center(f, args.target_class) for f in frames]
    seq = ingest.assemble_channels(landmarks, centers, view)
    ingest.write_sequence_csv(seq.values, args.out)
    logger.info("wrote %s (%d frames, %d channels)", args.out, seq.n_frames, seq.values.shape[1])
    return EXIT_OK


def cmd_refine(args) -> int:
    config = load_run_config(args.config)["refine"] if args.config else refine.RefineConfig()
    raw = ingest.read_sequence_csv(args.infile)
    seq_id = args.id or Path(args.infile).stem
    result = refine.refine_sequence(raw, config)
    if args.manifest:
        refine.write_rejection_manifest(
            [(seq_id, result.hand_fraction, result.object_fraction, result.accepted)],
            args.manifest,
        )
    if not result.accepted:
        logger.warning(
            "rejected %s: hand %.4f object %.4f exceed %.4f",
            seq_id, result.hand_fraction, result.object_fraction, config.max_missing_fraction,
        )
        return EXIT_REJECTED
    ingest.write_sequence_csv(result.sequence.values, args.out)
    logger.info("wrote %s", args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    config = load_synth_config(args.config) if args.config else synth.SynthConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.count is not None:
        config.n_sequences = args.count
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scheme = ds.LabelScheme.for_view(ingest.View.TOP)
    manifest_rows = []
    for item in synth.iter_generate(config):
        seq_path = out_dir / f"{item.id}.csv"
        ingest.write_sequence_csv(item.raw.values, seq_path)
        ds.write_labels_csv(item.labels, scheme, pipeline.labels_path_for(seq_path))
        manifest_rows.append(
            (item.id, item.patient_id, item.raw.view.value, item.raw.n_frames, seq_path.name)
        )
    ds.write_manifest(manifest_rows, out_dir / "manifest.csv")
    logger.info("wrote %d sequences under %s", len(manifest_rows), out_dir)
    return EXIT_OK


def _load_training_data(args, run_config):
    rows = ds.read_manifest(args.manifest)
    view = ingest.View(args.view)
    for row in rows:
        if row["view"] is not view:
            raise FormatError(
                f"manifest row {row['id']} has view {row['view'].value}, expected {view.value}"
            )
    base = Path(args.manifest).parent
    records, rejections = pipeline.load_manifest_dataset(rows, run_config["refine"], base)
    n_rej = sum(1 for r in rejections if not r.accepted)
    if n_rej:
        logger.info("refinement rejected %d of %d sequences", n_rej, len(rejections))
    if not records:
        raise FormatError("no sequences survived refinement")
    return records, view


def cmd_train(args) -> int:
    run_config = load_run_config(args.config) if args.config else {
        "refine": refine.RefineConfig(), "train": trainer.TrainConfig(), "k": 5, "fold_seed": 0,
    }
    records, view = _load_training_data(args, run_config)
    scheme = ds.LabelScheme.for_view(view)
    model_config = models.ModelConfig.from_name(args.model, view.n_channels, scheme.n_classes)
    plan = ds.kfold_by_patient(records, k=run_config["k"], seed=run_config["fold_seed"])
    split = ds.fold_split(records, plan, fold=0)  # fold 0 is the validation set
    train_cfg = run_config["train"]
    model = models.Model(model_config, seed=train_cfg.seed)
    logger.info(
        "training %s on %d sequences (%d validation)",
        model_config.name, len(split.train), len(split.test),
    )
    result = trainer.train(model, split.train, split.test, train_cfg)
    models.save_checkpoint(result.restore_best(), args.out_model)
    if args.history:
        trainer.write_history_csv(result.history, args.history)
    logger.info(
        "best epoch %d val acc %.4f (final %.4f); checkpoint %s",
        result.best_epoch, result.best_val_acc, result.final_val_acc, args.out_model,
    )
    return EXIT_OK


def cmd_cv(args) -> int:
    run_config = load_run_config(args.config) if args.config else {
        "refine": refine.RefineConfig(), "train": trainer.TrainConfig(), "k": 5, "fold_seed": 0,
    }
    if args.k is not None:
        run_config["k"] = args.k
    records, view = _load_training_data(args, run_config)
    scheme = ds.LabelScheme.for_view(view)
    model_config = models.ModelConfig.from_name(args.model, view.n_channels, scheme.n_classes)
    plan = ds.kfold_by_patient(records, k=run_config["k"], seed=run_config["fold_seed"])
    report = trainer.cross_validate(
        model_config, records, plan, run_config["train"], jobs=args.jobs
    )
    out = Path(args.out_report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(), encoding="utf-8")
    print(report.summary())
    return EXIT_OK


def _read_sequence_for_inference(path, view: ingest.View) -> ds.Sequence:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if header and header[-1] == "label":
        seq = ds.read_standardized_csv(path, view=view)
    else:
        raw = ingest.read_sequence_csv(path, view=view)
        values, labels, original = ds.standardize_length(
            raw.values, np.zeros(raw.n_frames, dtype=np.int64)
        )
        labels[:min(original, ds.TARGET_LENGTH)] = 0
        seq = ds.Sequence(
            id=Path(path).stem, patient_id="", view=view,
            values=values, labels=labels, original_length=original,
        )
    if np.isnan(seq.values).any():
        raise ParseError("sequence contains missing values; run refine first", path=path)
    return seq


def cmd_predict(args) -> int:
    model = models.load_checkpoint(args.model_file)
    view = _view_for_model(model)
    seq = _read_sequence_for_inference(args.infile, view)
    scheme = ds.LabelScheme.for_view(view)
    logits = model.forward(seq.values).data
    preds = logits.argmax(axis=-1)
    valid = seq.labels != ds.IGNORE_INDEX
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        fh.write("frame,label\n")
        for t in np.flatnonzero(valid):
            fh.write(f"{t},{scheme.classes[preds[t]]}\n")
    logger.info("wrote %s (%d frames)", out, int(valid.sum()))
    return EXIT_OK


def _view_for_model(model: models.Model) -> ingest.View:
    if model.config.n_channels == ingest.N_LANDMARKS + 1:
        return ingest.View.CONTRALATERAL
    return ingest.View.TOP if model.config.n_classes == 4 else ingest.View.IPSILATERAL


def cmd_attn(args) -> int:
    model = models.load_checkpoint(args.model_file)
    if not model.config.uses_attention:
        raise CapabilityError(f"{model.config.name} has no attention layers to export")
    seq = _read_sequence_for_inference(args.infile, _view_for_model(model))
    written = exports.export_attention(model, seq, args.out_dir, write_svg=not args.no_svg)
    logger.info("wrote %d attention files under %s", len(written), args.out_dir)
    return EXIT_OK


def cmd_plot(args) -> int:
    seq = ds.read_standardized_csv(args.infile)
    scheme = ds.LabelScheme.for_view(seq.view)
    with open(args.pred, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "frame,label":
            raise ParseError("expected header 'frame,label'", path=args.pred, line=1)
        preds = [scheme.index_of(line.strip().split(",")[1]) for line in fh if line.strip()]
    exports.export_timeline(seq, np.asarray(preds, dtype=np.int64), args.out, scheme)
    logger.info("wrote %s", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="rehabseg", description=__doc__.split("\n")[0])
    parser.add_argument(
        "--version", action="version",
        version=f"rehabseg {__version__} (checkpoint format {CHECKPOINT_FORMAT_VERSION})",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="assemble landmark/detection files into a channel CSV")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--detections")
    p.add_argument("--target-class")
    p.add_argument("--view", required=True, choices=[v.value for v in ingest.View])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("refine", help="gate, interpolate, and smooth one sequence CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--id", help="sequence id for the manifest (default: file stem)")
    p.add_argument("--manifest", help="write the acceptance manifest row here")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--config", help="SynthConfig JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, help="override n_sequences")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model (fold 0 of the plan validates)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--view", required=True, choices=[v.value for v in ingest.View])
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--out-model", required=True)
    p.add_argument("--history", help="write per-epoch history CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="k-fold cross-validation, emits a FoldReport JSON")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--view", required=True, choices=[v.value for v in ingest.View])
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--k", type=int)
    p.add_argument("--jobs", type=int, default=1, help="train folds in parallel processes")
    p.add_argument("--out-report", required=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("predict", help="per-frame labels for one sequence CSV")
    p.add_argument("--model-file", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("attn", help="export attention matrices (transformer models)")
    p.add_argument("--model-file", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-svg", action="store_true")
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("plot", help="truth/prediction timeline SVG")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


_ERROR_CODES = (
    (EmptyLossError, EXIT_NUMERIC),
    (NumericError, EXIT_NUMERIC),
    (CapabilityError, EXIT_CAPABILITY),
    (UnrecoverableChannelError, EXIT_UNRECOVERABLE),
    (ConfigError, EXIT_USAGE),
    (LabelCoverageError, EXIT_INPUT),
    (ParseError, EXIT_INPUT),
    (FormatError, EXIT_INPUT),
    (ShapeError, EXIT_INPUT),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    _compute.enable_heap_reuse()
    try:
        return args.func(args)
    except tuple(cls for cls, _ in _ERROR_CODES) as err:
        for cls, code in _ERROR_CODES:
            if isinstance(err, cls):
                logger.error("%s", err)
                return code
        raise  # unreachable
    except FileNotFoundError as err:
        logger.error("%s", err)
        return EXIT_INPUT
    except RehabSegError as err:
        logger.error("%s", err)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
