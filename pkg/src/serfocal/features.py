"""Feature file container and manifest featurization.

A ``.serf`` file is a 17-byte little-endian header followed by the payload::

    magic b"SERF" | version u32 | kind u8 | rows u32 | cols u32 | f32[rows*cols]

kind 0 is a 128-row dB mel spectrogram, kind 1 a 40-row MFCC.
"""

import csv
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from serfocal.audio import load_and_standardize
from serfocal.dsp import FeatureKind, FeatureMap, extract
from serfocal.errors import ConfigError, FormatError, SerError


MAGIC = b"SERF"
VERSION = 1
HEADER = struct.Struct("<4sIBII")
INDEX_NAME = "index.csv"


def write_feature_file(path, fmap):
    values = np.ascontiguousarray(fmap.values, dtype="<f4")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, int(fmap.kind), rows, cols))
        fh.write(values.tobytes())


def read_feature_file(path):
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise FormatError(f"{path}: too short for a feature header")
    magic, version, kind, rows, cols = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        kind = FeatureKind(kind)
    except ValueError:
        raise FormatError(f"{path}: unknown feature kind {kind}") from None
    if rows != kind.rows:
        raise FormatError(f"{path}: kind {kind.name} must have {kind.rows} rows, got {rows}")
    payload = data[HEADER.size:]
    if len(payload) != rows * cols * 4:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {rows * cols * 4}")
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)
    return FeatureMap(values, kind)


def featurize_wav(path, kind, normalize_mfcc=False):
    clip = load_and_standardize(Path(path).read_bytes(), source_id=str(path))
    return extract(clip, kind, normalize_mfcc)


def _featurize_job(args):
    uid, path, kind, normalize_mfcc = args
    try:
        fmap = featurize_wav(path, kind, normalize_mfcc)
    except (OSError, SerError) as exc:
        return uid, None, f"{type(exc).__name__}: {exc}"
    return uid, fmap.values.astype(np.float32), None


def featurize_records(manifest, kind, workers=1, normalize_mfcc=False):
    """Yield ``(record, values or None, error or None)`` in manifest order."""
    jobs = [(r.utterance_id, manifest.resolve(r), kind, normalize_mfcc) for r in manifest.records]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_featurize_job, jobs, chunksize=8))
    else:
        results = map(_featurize_job, jobs)
    for record, (_, values, err) in zip(manifest.records, results):
        yield record, values, err


def featurize_manifest(manifest, kind, out_dir, workers=1, normalize_mfcc=False):
    """Write one ``<utterance_id>.serf`` per record plus ``index.csv``.

    Returns the list of ``(utterance_id, error message)`` failures.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    rows = []
    for record, values, err in featurize_records(manifest, kind, workers, normalize_mfcc):
        if err is not None:
            failures.append((record.utterance_id, err))
            continue
        name = f"{record.utterance_id}.serf"
        write_feature_file(out_dir / name, FeatureMap(values, kind))
        rows.append((record.utterance_id, name, record.label, kind.name.lower()))
    with open(out_dir / INDEX_NAME, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("utterance_id", "file", "label", "kind"))
        writer.writerows(rows)
    return failures


@dataclass
class FeatureSet:
    """Stacked features ``x`` (N, 1, rows, cols) with integer labels."""

    x: np.ndarray
    y: np.ndarray
    ids: list
    kind: FeatureKind

    def __len__(self):
        return len(self.y)

    def subset(self, indices):
        indices = np.asarray(indices)
        return FeatureSet(self.x[indices], self.y[indices], [self.ids[i] for i in indices], self.kind)


def read_index(feature_dir):
    feature_dir = Path(feature_dir)
    path = feature_dir / INDEX_NAME
    if not path.exists():
        raise ConfigError(f"{feature_dir}: no {INDEX_NAME}; run featurize first")
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["utterance_id"]: row for row in csv.DictReader(fh)}


def feature_dir_kind(feature_dir):
    kinds = {row["kind"] for row in read_index(feature_dir).values()}
    if len(kinds) != 1:
        raise ConfigError(f"{feature_dir}: mixed or missing feature kinds {sorted(kinds)}")
    return FeatureKind.parse(kinds.pop())


def load_feature_set(feature_dir, manifest):
    """Features for every manifest record, in manifest order."""
    feature_dir = Path(feature_dir)
    index = read_index(feature_dir)
    kind = feature_dir_kind(feature_dir)
    maps = []
    for r in manifest.records:
        if r.utterance_id not in index:
            raise ConfigError(f"{feature_dir}: no features for {r.utterance_id}")
        fmap = read_feature_file(feature_dir / index[r.utterance_id]["file"])
        if fmap.kind is not kind:
            raise ConfigError(f"{feature_dir}: mixed feature kinds")
        maps.append(fmap.values)
    if len({m.shape for m in maps}) > 1:
        raise ConfigError(f"{feature_dir}: feature maps differ in shape")
    x = np.stack(maps)[:, None] if maps else np.zeros((0, 1, kind.rows, 0), np.float32)
    return FeatureSet(x, manifest.labels, [r.utterance_id for r in manifest.records], kind)


def extract_feature_set(manifest, kind, workers=1, normalize_mfcc=False):
    """In-memory featurization; any unreadable record is an error."""
    maps = []
    for record, values, err in featurize_records(manifest, kind, workers, normalize_mfcc):
        if err is not None:
            raise SerError(f"{record.utterance_id}: {err}")
        maps.append(values)
    return FeatureSet(np.stack(maps)[:, None], manifest.labels,
                      [r.utterance_id for r in manifest.records], kind)


