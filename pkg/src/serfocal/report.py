"""Static renderings: feature rasters, confusion tables/heatmaps, loss curves."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from serfocal.dsp import FeatureKind  # noqa: E402
from serfocal.errors import SchemaError  # noqa: E402
from serfocal.labels import CLASSES  # noqa: E402

CORNER = "true\\pred"


def feature_raster(values, scale=1):
    """Upscale a (rows, cols) map by an integer factor, cell for cell."""
    values = np.asarray(values, dtype=np.float32)
    if scale < 1 or int(scale) != scale:
        raise SchemaError(f"scale must be a positive integer, got {scale}")
    scale = int(scale)
    if scale > 1:
        values = np.repeat(np.repeat(values, scale, axis=0), scale, axis=1)
    return values


def save_feature_png(fmap, path, scale=1, cmap="magma"):
    """One cell per pixel (times ``scale``); time runs right, low rows at the bottom.

    A constant map gets a single uniform color.
    """
    raster = feature_raster(fmap.values, scale)
    lo, hi = float(raster.min()), float(raster.max())
    if hi == lo:
        hi = lo + 1.0
    plt.imsave(path, raster, cmap=cmap, origin="lower", vmin=lo, vmax=hi)
    return raster.shape


def save_feature_figure(fmap, path, hop_s=512 / 22050, title=None):
    """Annotated figure with a time axis and a colorbar."""
    values = fmap.values
    rows, cols = values.shape
    fig, ax = plt.subplots(figsize=(8, 3.2))
    im = ax.imshow(values, origin="lower", aspect="auto", cmap="magma",
                   extent=(0, cols * hop_s, 0, rows))
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mel band" if fmap.kind is FeatureKind.SPECTROGRAM else "MFCC index")
    ax.set_title(title or fmap.kind.name.lower())
    fig.colorbar(im, ax=ax, label="dB" if fmap.kind is FeatureKind.SPECTROGRAM else "")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.1f}"


def write_confusion_csv(confusion, path):
    """Rows = true class, columns = predicted class, in class order, percent."""
    confusion = np.asarray([[np.nan if v is None else v for v in row] for row in confusion],
                           dtype=np.float64)
    if confusion.shape != (len(CLASSES), len(CLASSES)):
        raise SchemaError(f"confusion must be {len(CLASSES)}x{len(CLASSES)}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([CORNER, *CLASSES])
        for name, row in zip(CLASSES, confusion):
            writer.writerow([name, *map(_fmt, row.tolist())])


def read_confusion_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) if v else np.nan for v in row[1:]] for row in rows[1:]])


def write_ablation_csv(ablation, path):
    """One line per (features, loss) cell with mean accuracies."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["input_features", "loss", "overall_accuracy", "class_accuracy"])
        for cell in ablation["cells"]:
            writer.writerow([cell["input_features"], cell["loss"],
                             _fmt(cell["overall_accuracy"]), _fmt(cell["class_accuracy"])])


def save_confusion_figure(confusion, path, title=None):
    confusion = np.asarray([[np.nan if v is None else v for v in row] for row in confusion],
                           dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4.6, 4))
    ax.imshow(np.nan_to_num(confusion), cmap="Blues", vmin=0, vmax=100)
    for i in range(len(CLASSES)):
        for j in range(len(CLASSES)):
            v = confusion[i, j]
            ax.text(j, i, "-" if np.isnan(v) else f"{v:.1f}", ha="center", va="center",
                    color="white" if v > 60 else "black", fontsize=9)
    ax.set_xticks(range(len(CLASSES)), CLASSES, rotation=30)
    ax.set_yticks(range(len(CLASSES)), CLASSES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_figure(histories, path, labels=None):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for i, h in enumerate(histories):
        ax.plot(np.arange(1, len(h) + 1), h, marker="o", ms=3,
                label=labels[i] if labels else None)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    if labels:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def confusions_from_metrics(doc):
    """Map a metrics/ablation JSON document to named confusion matrices."""
    kind = doc.get("type")
    if kind == "ablation":
        return {f"{c['input_features']}_{c['loss']}": c["confusion"] for c in doc["cells"]}
    if kind == "kfold":
        return {"pooled": doc["pooled"]["confusion"]}
    if "confusion" in doc:
        return {"test": doc["confusion"]}
    raise SchemaError("metrics file has no confusion matrix")


def render_metrics(metrics_path, table_path, figure_path=None):
    """Write the confusion CSV (or the ablation table) and optionally a heatmap.

    For an ablation file the CSV is the grid table and one heatmap is drawn
    per MFCC cell next to ``figure_path``.
    """
    try:
        doc = json.loads(Path(metrics_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{metrics_path}: not JSON ({exc})") from None
    confusions = confusions_from_metrics(doc)
    written = [table_path]
    if doc.get("type") == "ablation":
        write_ablation_csv(doc, table_path)
    else:
        write_confusion_csv(next(iter(confusions.values())), table_path)
    if figure_path is not None:
        figure_path = Path(figure_path)
        if doc.get("type") == "ablation":
            for name, conf in confusions.items():
                if name.startswith("mfcc"):
                    out = figure_path.with_name(f"{figure_path.stem}_{name}{figure_path.suffix}")
                    save_confusion_figure(conf, out, title=name.replace("_", " / "))
                    written.append(out)
        else:
            save_confusion_figure(next(iter(confusions.values())), figure_path)
            written.append(figure_path)
    return written
