import numpy as np
import pytest
from conftest import sine
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from serfocal.audio import CLIP_LENGTH, write_wav
from serfocal.data import UtteranceRecord, DatasetManifest, write_manifest
from serfocal.dsp import FeatureKind, FeatureMap
from serfocal.errors import ConfigError, FormatError
from serfocal.features import (
    HEADER, featurize_manifest, feature_dir_kind, load_feature_set, read_feature_file,
    write_feature_file,
)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(list(FeatureKind)), st.integers(1, 12), st.data())
def test_feature_file_round_trip_is_bit_exact(tmp_path_factory, kind, cols, data):
    values = data.draw(hnp.arrays(np.float32, (kind.rows, cols),
                                  elements=st.floats(-1e6, 1e6, width=32)))
    path = tmp_path_factory.mktemp("f") / "x.serf"
    write_feature_file(path, FeatureMap(values, kind))
    back = read_feature_file(path)
    assert back.kind is kind
    assert back.values.tobytes() == values.tobytes()
    assert path.stat().st_size == HEADER.size + kind.rows * cols * 4


def test_corrupt_files(tmp_path):
    path = tmp_path / "x.serf"
    write_feature_file(path, FeatureMap(np.zeros((40, 3), np.float32), FeatureKind.MFCC))
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        read_feature_file(path)
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="payload"):
        read_feature_file(path)
    path.write_bytes(raw[:5])
    with pytest.raises(FormatError):
        read_feature_file(path)
    bad_rows = HEADER.pack(b"SERF", 1, 1, 41, 1) + bytes(41 * 4)
    path.write_bytes(bad_rows)
    with pytest.raises(FormatError, match="rows"):
        read_feature_file(path)


def small_corpus(tmp_path, n=4, broken=()):
    records = []
    for i in range(n):
        uid = f"u{i}"
        if i in broken:
            (tmp_path / f"{uid}.wav").write_bytes(b"not a wav")
        else:
            write_wav(tmp_path / f"{uid}.wav", 0.5 * sine(200 + 100 * i, 22050, 0.5))
        records.append(UtteranceRecord(uid, f"{uid}.wav", ["Neutral", "Anger"][i % 2], 1, "F", 3,
                                       "improvised"))
    write_manifest(records, tmp_path / "manifest.csv")
    return DatasetManifest(records, tmp_path / "manifest.csv")


@pytest.mark.parametrize("kind", list(FeatureKind))
def test_featurize_manifest_writes_fixed_shapes(tmp_path, kind):
    manifest = small_corpus(tmp_path)
    out = tmp_path / "feat"
    assert featurize_manifest(manifest, kind, out, workers=2) == []
    fs = load_feature_set(out, manifest)
    assert fs.x.shape == (4, 1, kind.rows, 259)
    assert fs.ids == ["u0", "u1", "u2", "u3"]
    np.testing.assert_array_equal(fs.y, [0, 3, 0, 3])
    assert feature_dir_kind(out) is kind
    # worker count does not change the bytes
    out1 = tmp_path / "feat1"
    featurize_manifest(manifest, kind, out1, workers=1)
    for f in sorted(out.glob("*.serf")):
        assert f.read_bytes() == (out1 / f.name).read_bytes()


def test_unreadable_wav_is_reported_not_fatal(tmp_path):
    manifest = small_corpus(tmp_path, broken=(2,))
    failures = featurize_manifest(manifest, FeatureKind.MFCC, tmp_path / "feat")
    assert [uid for uid, _ in failures] == ["u2"]
    assert len(list((tmp_path / "feat").glob("*.serf"))) == 3


def test_mixed_kinds_rejected(tmp_path):
    manifest = small_corpus(tmp_path, n=2)
    out = tmp_path / "feat"
    featurize_manifest(manifest, FeatureKind.MFCC, out)
    index = (out / "index.csv").read_text().splitlines()
    index[-1] = index[-1].replace("mfcc", "spectrogram")
    (out / "index.csv").write_text("\n".join(index) + "\n")
    with pytest.raises(ConfigError):
        feature_dir_kind(out)
    with pytest.raises(ConfigError):
        load_feature_set(tmp_path / "missing", manifest)


def test_clip_length_constant():
    assert CLIP_LENGTH == 6 * 22050
