"""``serfocal`` command line: synth, featurize, train, eval, kfold, ablate, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from serfocal.data import (
    SyntheticSpec, generate_synthetic, load_manifest, session_kfold, stratified_kfold,
)
from serfocal.dsp import FeatureKind
from serfocal.errors import ConfigError, EmptyInputError, SchemaError, SerError, ValidationError
from serfocal.features import (
    extract_feature_set, feature_dir_kind, featurize_manifest, load_feature_set, read_feature_file,
)
from serfocal.nn.checkpoint import load_checkpoint, save_checkpoint
from serfocal.resnet import ResNet18Config, ResNet18, parse_width_scale
from serfocal.train import (
    SCHEMA_VERSION, Standardizer, TrainConfig, cross_validate, evaluate, run_ablation, train,
)

log = logging.getLogger("serfocal")


def default_seed():
    raw = os.environ.get("SER_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"SER_SEED must be an integer, got {raw!r}") from None


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _width(text):
    try:
        return parse_width_scale(text)
    except (SerError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _manifest(path):
    manifest = load_manifest(path)
    if len(manifest) == 0:
        raise EmptyInputError(f"{path}: no usable records after filtering")
    return manifest


def _folds(args, manifest):
    if args.split == "session":
        return session_kfold(manifest, args.folds)
    return stratified_kfold(manifest.labels, args.folds, args.seed)


def _train_config(args, kind):
    return TrainConfig(
        loss_kind=args.loss, gamma=args.gamma, epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.lr, optimizer=args.optimizer, seed=args.seed,
        width_scale=args.width_scale, feature_kind=kind)


def _check_test_fold(args):
    if not 0 <= args.test_fold < args.folds:
        raise ConfigError(f"--test-fold must lie in [0, {args.folds}), got {args.test_fold}")


# -- commands -------------------------------------------------------------------


def cmd_synth(args):
    try:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{args.spec}: not JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{args.spec}: expected a JSON object")
    spec = SyntheticSpec.from_dict(doc)
    manifest = generate_synthetic(spec, args.out)
    print(f"wrote {len(manifest)} clips and {manifest.source}")
    return 0


def cmd_featurize(args):
    manifest = _manifest(args.manifest)
    kind = FeatureKind.parse(args.kind)
    failures = featurize_manifest(manifest, kind, args.out, workers=args.workers)
    print(f"featurized {len(manifest) - len(failures)}/{len(manifest)} records ({kind.name.lower()})")
    if failures:
        path = Path(args.out) / "failures.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("utterance_id", "error"))
            writer.writerows(failures)
        print(f"{len(failures)} record(s) failed, see {path}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args):
    _check_test_fold(args)
    manifest = _manifest(args.manifest)
    features = load_feature_set(args.features, manifest)
    cfg = _train_config(args, features.kind)
    folds = _folds(args, manifest)
    tr, te = folds.train_indices(args.test_fold), folds.test_indices(args.test_fold)
    x = features.x[tr]
    model = ResNet18(cfg.model_config(x.shape[2], x.shape[3]), seed=cfg.seed)
    result = train(model, x, features.y[tr], cfg)
    metrics = evaluate(model, features.x[te], features.y[te], result.standardizer)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "train_config": cfg.to_dict(),
        "model_config": model.cfg.to_dict(),
        "standardizer": {"mean": result.standardizer.mean, "std": result.standardizer.std},
        "folds": {"k": args.folds, "seed": args.seed, "split": args.split,
                  "test_fold": args.test_fold},
    }
    save_checkpoint(out / "model.ckpt", model.state_dict(), meta)
    write_json(out / "metrics.json", {"schema_version": SCHEMA_VERSION, "type": "single",
                                      "test_fold": args.test_fold, "config": cfg.to_dict(),
                                      "loss_history": result.history, **metrics.to_dict()})
    _write_confusion(out / "confusion.csv", metrics.to_dict()["confusion"])
    if args.figures:
        from serfocal.report import save_loss_figure
        save_loss_figure([result.history], out / "loss.png")
    print(f"fold {args.test_fold}: overall {metrics.overall_accuracy:.1f}%  "
          f"class {metrics.class_accuracy:.1f}%")
    return 0


def cmd_eval(args):
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    arrays, meta = load_checkpoint(args.checkpoint)
    model = ResNet18(ResNet18Config.from_dict(meta["model_config"]))
    model.load_state_dict(arrays)
    standardizer = Standardizer(**meta["standardizer"])
    manifest = _manifest(args.manifest)
    features = load_feature_set(args.features, manifest)
    if features.x.shape[2] != model.cfg.input_rows:
        raise ConfigError(f"checkpoint expects {model.cfg.input_rows}-row features, "
                          f"{args.features} has {features.x.shape[2]}")
    if args.all:
        idx = np.arange(len(features))
    else:
        f = meta["folds"]
        folds = (session_kfold(manifest, f["k"]) if f["split"] == "session"
                 else stratified_kfold(manifest.labels, f["k"], f["seed"]))
        idx = folds.test_indices(f["test_fold"])
    metrics = evaluate(model, features.x[idx], features.y[idx], standardizer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "metrics.json", {"schema_version": SCHEMA_VERSION, "type": "single",
                                      "checkpoint": str(args.checkpoint), **metrics.to_dict()})
    _write_confusion(out / "confusion.csv", metrics.to_dict()["confusion"])
    print(f"overall {metrics.overall_accuracy:.1f}%  class {metrics.class_accuracy:.1f}%")
    return 0


def cmd_kfold(args):
    manifest = _manifest(args.manifest)
    features = load_feature_set(args.features, manifest)
    cfg = _train_config(args, features.kind)
    cv = cross_validate(features, _folds(args, manifest), cfg, args.test_folds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = cv.to_dict()
    write_json(out / "metrics.json", doc)
    _write_confusion(out / "confusion.csv", doc["pooled"]["confusion"])
    print(f"{len(cv.folds)} folds: overall {cv.overall.mean():.1f} +/- {cv.overall.std():.1f}%  "
          f"class {cv.class_acc.mean():.1f} +/- {cv.class_acc.std():.1f}%")
    return 0


def cmd_ablate(args):
    manifest = _manifest(args.manifest)
    sets = {}
    for directory in args.features or []:
        kind = feature_dir_kind(directory)
        if kind in sets:
            raise ConfigError(f"two feature directories of kind {kind.name.lower()}")
        sets[kind] = load_feature_set(directory, manifest)
    for kind in FeatureKind:
        if kind not in sets:
            log.info("extracting %s features in memory", kind.name.lower())
            sets[kind] = extract_feature_set(manifest, kind, workers=args.workers)
    cfg = _train_config(args, FeatureKind.MFCC)
    report = run_ablation(sets, _folds(args, manifest), cfg, args.test_folds)
    doc = report.to_dict()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "ablation.json", doc)
    from serfocal.report import write_ablation_csv
    write_ablation_csv(doc, out / "ablation.csv")
    for cell in doc["cells"]:
        if cell["input_features"] == "mfcc":
            _write_confusion(out / f"confusion_mfcc_{cell['loss']}.csv", cell["confusion"])
        print(f"{cell['input_features']:>11} {cell['loss']:>7}: overall "
              f"{cell['overall_accuracy']:.1f}%  class {cell['class_accuracy']:.1f}%")
    return 0


def cmd_report(args):
    from serfocal import report

    if args.features:
        if not args.png:
            raise ConfigError("--features needs --png")
        fmap = read_feature_file(args.features)
        shape = report.save_feature_png(fmap, args.png, scale=args.scale)
        if args.figure:
            report.save_feature_figure(fmap, args.figure, title=Path(args.features).stem)
        print(f"wrote {args.png} ({shape[1]}x{shape[0]} px)")
        return 0
    if not args.table:
        raise ConfigError("--metrics needs --table")
    for path in report.render_metrics(args.metrics, args.table, args.figure):
        print(f"wrote {path}")
    return 0


def _write_confusion(path, confusion):
    from serfocal.report import write_confusion_csv
    write_confusion_csv(confusion, path)


# -- parser ------------------------------------------------------------------


def _add_training_flags(p, single_fold=False):
    p.add_argument("--features", required=True, help="feature directory from `featurize`")
    p.add_argument("--manifest", required=True)
    _add_protocol_flags(p, single_fold)


def _add_protocol_flags(p, single_fold=False):
    p.add_argument("--loss", choices=("focal", "softmax"), default="focal")
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--split", choices=("stratified", "session"), default="stratified")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--seed", type=int, default=None, help="default: $SER_SEED or 0")
    p.add_argument("--width-scale", type=_width, default=1.0, help="e.g. 1 or 1/8")
    p.add_argument("--out", required=True)
    if single_fold:
        p.add_argument("--test-fold", type=int, default=0)
    else:
        p.add_argument("--test-folds", type=int, nargs="+", default=None,
                       help="hold out only these folds (default: all)")


def build_parser():
    parser = argparse.ArgumentParser(prog="serfocal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="parallel featurization workers (default: all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic imbalanced corpus")
    p.add_argument("--spec", required=True, help="JSON synthetic spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="write one feature file per manifest record")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=("spectrogram", "mfcc"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train on k-1 folds, test on one, save a checkpoint")
    _add_training_flags(p, single_fold=True)
    p.add_argument("--figures", action="store_true", help="also plot the loss curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--all", action="store_true",
                   help="score every record instead of the checkpoint's held-out fold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("kfold", help="k-fold cross-validation")
    _add_training_flags(p)
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("ablate", help="{spectrogram, mfcc} x {softmax, focal} grid")
    p.add_argument("--features", action="append",
                   help="feature directory (repeatable); missing kinds are extracted")
    p.add_argument("--manifest", required=True)
    _add_protocol_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render feature images or metric tables")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--features", help="a .serf feature file")
    src.add_argument("--metrics", help="metrics.json or ablation.json")
    p.add_argument("--png", help="raster output, one pixel per cell")
    p.add_argument("--scale", type=int, default=1, help="integer upscale for --png")
    p.add_argument("--table", help="CSV output for --metrics")
    p.add_argument("--figure", help="annotated matplotlib figure")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = default_seed()
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SerError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
