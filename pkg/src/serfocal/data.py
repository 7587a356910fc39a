"""Manifest ingestion, class proportions, stratified folds and a synthetic
imbalanced corpus generator."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from serfocal.audio import CLIP_LENGTH, SAMPLE_RATE, write_wav
from serfocal.errors import EmptyInputError, ParseError, SchemaError, StratificationError
from serfocal.labels import CLASSES, N_CLASSES, normalize_label

MANIFEST_COLUMNS = ("utterance_id", "wav_path", "label", "session", "speaker",
                    "agreement", "topic_type")
MIN_AGREEMENT = 2
CORPUS_PROPORTIONS = (0.488, 0.123, 0.269, 0.120)


@dataclass(frozen=True)
class UtteranceRecord:
    utterance_id: str
    wav_path: str
    label: str
    session: int = 1
    speaker: str = "M"
    agreement: int = 3
    topic_type: str = "improvised"

    @property
    def label_index(self):
        return CLASSES.index(self.label)


@dataclass
class DatasetManifest:
    records: list
    source: Path = None
    dropped: dict = field(default_factory=dict)

    @property
    def counts(self):
        counts = dict.fromkeys(CLASSES, 0)
        for r in self.records:
            counts[r.label] += 1
        return counts

    @property
    def labels(self):
        return np.array([r.label_index for r in self.records], dtype=np.int64)

    def __len__(self):
        return len(self.records)

    def resolve(self, record):
        """Absolute WAV path; relative paths are relative to the manifest."""
        path = Path(record.wav_path)
        if not path.is_absolute() and self.source is not None:
            path = self.source.parent / path
        return path

    def subset(self, indices):
        return DatasetManifest([self.records[i] for i in indices], self.source)


def _is_improvised(topic):
    return topic.strip().lower() in ("improvised", "impro", "improv")


def load_manifest(csv_path):
    """Read and filter a manifest CSV.

    Keeps improvised rows with one of the four kept labels and at least two
    agreeing annotators. Recognised-but-excluded labels are dropped
    silently; unknown label strings raise ``ParseError``.
    """
    csv_path = Path(csv_path)
    records = []
    dropped = {"scripted": 0, "excluded_label": 0, "low_agreement": 0}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{csv_path}: missing column(s) {', '.join(missing)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                label = normalize_label(row["label"])
            except KeyError:
                raise ParseError(f"unknown label {row['label']!r}", row=row_no) from None
            try:
                session = int(row["session"])
                agreement = int(row["agreement"])
            except ValueError as exc:
                raise ParseError(str(exc), row=row_no) from None
            if not _is_improvised(row["topic_type"]):
                dropped["scripted"] += 1
                continue
            if label is None:
                dropped["excluded_label"] += 1
                continue
            if agreement < MIN_AGREEMENT:
                dropped["low_agreement"] += 1
                continue
            records.append(UtteranceRecord(
                row["utterance_id"], row["wav_path"], label, session,
                row["speaker"].strip().upper(), agreement, "improvised"))
    return DatasetManifest(records, csv_path, dropped)


def write_manifest(manifest_or_records, csv_path):
    records = getattr(manifest_or_records, "records", manifest_or_records)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([r.utterance_id, r.wav_path, r.label, r.session, r.speaker,
                             r.agreement, r.topic_type])


def class_distribution(manifest):
    """Per-class percentage of records, in ``CLASSES`` order."""
    labels = manifest.labels if hasattr(manifest, "labels") else np.asarray(manifest)
    if len(labels) == 0:
        raise EmptyInputError("empty manifest")
    counts = np.bincount(labels, minlength=N_CLASSES)
    return 100.0 * counts / counts.sum()


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: np.ndarray
    seed: int = 0

    def test_indices(self, fold):
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold):
        return np.flatnonzero(self.assignment != fold)

    def counts(self, labels):
        """(k, n_classes) table of per-fold class counts."""
        table = np.zeros((self.k, N_CLASSES), dtype=np.int64)
        np.add.at(table, (self.assignment, np.asarray(labels)), 1)
        return table


def stratified_kfold(labels, k=5, seed=0):
    """Shuffle each class by ``seed`` and deal its members round-robin."""
    labels = getattr(labels, "labels", labels)
    labels = np.asarray(labels)
    assignment = np.full(len(labels), -1, dtype=np.int64)
    for c in range(N_CLASSES):
        members = np.flatnonzero(labels == c)
        if len(members) == 0:
            continue
        if len(members) < k:
            raise StratificationError(
                f"class {CLASSES[c]} has {len(members)} members, fewer than k={k}")
        rng = np.random.default_rng([seed, c])
        assignment[rng.permutation(members)] = np.arange(len(members)) % k
    return FoldAssignment(k, assignment, seed)


def session_kfold(manifest, k=5):
    """Speaker-independent folds: whole sessions dealt round-robin to folds."""
    sessions = np.array([r.session for r in manifest.records])
    unique = np.unique(sessions)
    if len(unique) < k:
        raise StratificationError(f"{len(unique)} sessions, fewer than k={k}")
    lookup = {s: i % k for i, s in enumerate(unique)}
    return FoldAssignment(k, np.array([lookup[s] for s in sessions], dtype=np.int64), 0)


# -- synthetic corpus -------------------------------------------------------


@dataclass(frozen=True)
class ClassRecipe:
    """Signal recipe for one emotion class.

    A harmonic carrier around ``carrier_hz`` amplitude-modulated at
    ``mod_hz``, plus band-limited noise between ``noise_band`` at
    ``noise_level``. ``jitter`` is the log-normal spread applied per clip
    to carrier and modulation rate.
    """

    carrier_hz: float
    mod_hz: float
    noise_level: float
    noise_band: tuple = (100.0, 4000.0)
    jitter: float = 0.25


DEFAULT_RECIPES = (
    ClassRecipe(carrier_hz=220.0, mod_hz=3.0, noise_level=0.05, noise_band=(100.0, 2000.0)),
    ClassRecipe(carrier_hz=330.0, mod_hz=5.0, noise_level=0.08, noise_band=(200.0, 4000.0)),
    ClassRecipe(carrier_hz=150.0, mod_hz=1.5, noise_level=0.03, noise_band=(80.0, 1000.0)),
    ClassRecipe(carrier_hz=440.0, mod_hz=7.0, noise_level=0.15, noise_band=(500.0, 6000.0)),
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic corpus description.

    Non-Neutral clips draw an expressiveness ``e`` uniformly from
    ``expressiveness`` and blend their recipe with the Neutral one
    geometrically (``neutral**(1-e) * own**e``), so weakly expressive clips
    overlap Neutral while strongly expressive ones are distinct.
    """

    n_total: int = 600
    proportions: tuple = CORPUS_PROPORTIONS
    seed: int = 0
    recipes: tuple = DEFAULT_RECIPES
    expressiveness: tuple = (0.0, 1.0)

    def __post_init__(self):
        p = np.asarray(self.proportions, dtype=np.float64)
        if p.shape != (N_CLASSES,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise SchemaError(f"proportions must be {N_CLASSES} non-negative reals summing "
                              f"to 1, got {list(self.proportions)}")
        if self.n_total < 1:
            raise SchemaError("n_total must be positive")
        if len(self.recipes) != N_CLASSES:
            raise SchemaError(f"need {N_CLASSES} class recipes")
        lo, hi = self.expressiveness
        if not 0 <= lo <= hi <= 1:
            raise SchemaError(f"expressiveness must satisfy 0 <= lo <= hi <= 1, got {lo, hi}")

    @classmethod
    def from_dict(cls, d):
        known = {"n_total", "proportions", "seed", "recipes", "expressiveness"}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown synthetic spec key(s): {sorted(unknown)}")
        kwargs = {k: d[k] for k in ("n_total", "seed") if k in d}
        for key in ("proportions", "expressiveness"):
            if key in d:
                kwargs[key] = tuple(float(x) for x in d[key])
        if "recipes" in d:
            try:
                kwargs["recipes"] = tuple(
                    ClassRecipe(**{**r, "noise_band": tuple(r.get("noise_band", (100.0, 4000.0)))})
                    for r in d["recipes"])
            except TypeError as exc:
                raise SchemaError(f"bad recipe: {exc}") from None
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc)) from None


def blend_recipe(neutral, own, e):
    """Geometric interpolation of every recipe parameter."""
    def mix(a, b):
        return float(a ** (1 - e) * b**e)

    return ClassRecipe(
        carrier_hz=mix(neutral.carrier_hz, own.carrier_hz),
        mod_hz=mix(neutral.mod_hz, own.mod_hz),
        noise_level=mix(neutral.noise_level, own.noise_level),
        noise_band=(mix(neutral.noise_band[0], own.noise_band[0]),
                    mix(neutral.noise_band[1], own.noise_band[1])),
        jitter=mix(neutral.jitter, own.jitter),
    )


def largest_remainder(n_total, proportions):
    """Integer counts summing to ``n_total`` with minimal rounding error."""
    quotas = np.asarray(proportions, dtype=np.float64) * n_total
    counts = np.floor(quotas).astype(np.int64)
    short = n_total - counts.sum()
    # stable sort keeps lower class index first on equal remainders
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _band_noise(rng, n, band, sr=SAMPLE_RATE):
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spectrum[(freqs < band[0]) | (freqs > band[1])] = 0.0
    noise = np.fft.irfft(spectrum, n)
    return noise / (noise.std() + 1e-12)


def synthesize_clip(recipe, rng, n=CLIP_LENGTH, sr=SAMPLE_RATE):
    """One clip for ``recipe``; all randomness drawn from ``rng``."""
    t = np.arange(n) / sr
    f0 = recipe.carrier_hz * np.exp(recipe.jitter * rng.standard_normal())
    mod = recipe.mod_hz * np.exp(recipe.jitter * rng.standard_normal())
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(3, 6) * t)
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / sr
    carrier = sum(np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h for h in (1, 2, 3))
    envelope = 0.5 * (1.0 + np.sin(2 * np.pi * mod * t + rng.uniform(0, 2 * np.pi)))
    voiced = envelope * carrier
    level = recipe.noise_level * np.exp(0.3 * rng.standard_normal())
    clip = voiced / (np.abs(voiced).max() + 1e-12) + level * _band_noise(rng, n, recipe.noise_band, sr)
    gain = rng.uniform(0.3, 0.7)
    return gain * clip / (np.abs(clip).max() + 1e-12)


def generate_synthetic(spec, out_dir):
    """Write ``spec.n_total`` six-second WAVs and ``manifest.csv`` to ``out_dir``.

    Output depends only on ``spec``; reruns are byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = largest_remainder(spec.n_total, spec.proportions)
    records = []
    index = 0
    for c, count in enumerate(counts):
        for j in range(count):
            rng = np.random.default_rng([spec.seed, c, j])
            recipe = spec.recipes[c]
            if c != 0:
                recipe = blend_recipe(spec.recipes[0], recipe, rng.uniform(*spec.expressiveness))
            uid = f"syn_{index:05d}_{CLASSES[c][:3].lower()}"
            write_wav(out_dir / f"{uid}.wav", synthesize_clip(recipe, rng))
            records.append(UtteranceRecord(
                uid, f"{uid}.wav", CLASSES[c], session=1 + index % 5,
                speaker="MF"[index % 2], agreement=3, topic_type="improvised"))
            index += 1
    manifest_path = out_dir / "manifest.csv"
    write_manifest(records, manifest_path)
    return DatasetManifest(records, manifest_path)
