import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamloc.errors import FormatError, GenerationError
from hamloc.synthetic import SynthConfig, config_dict, generate, load, save, split

SMALL = dict(num_videos=20, num_test_videos=6, length_range=(40, 60), num_classes=3, feature_dim=8)


def test_same_seed_same_corpus():
    a, b = generate(SynthConfig(**SMALL, seed=5)), generate(SynthConfig(**SMALL, seed=5))
    for x, y in zip(a.samples, b.samples):
        assert x.video_id == y.video_id and x.segments == y.segments
        np.testing.assert_array_equal(x.features, y.features)
    c = generate(SynthConfig(**SMALL, seed=6))
    assert any(not np.array_equal(x.features, y.features) for x, y in zip(a.samples, c.samples))


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6), st.integers(0, 3))
def test_segments_disjoint_and_labels_consistent(seed, gap):
    corpus = generate(SynthConfig(**SMALL, seed=seed, min_gap=gap))
    for s in corpus.samples:
        segs = sorted(s.segments, key=lambda g: g.t_start)
        assert all(0 <= g.t_start < g.t_end <= s.length for g in segs)
        assert all(a.t_end + gap <= b.t_start for a, b in zip(segs, segs[1:]))
        assert s.labels == sorted({g.class_id for g in segs})
        assert 1 <= len(segs) <= 4
        assert s.features.dtype == np.float32 and s.features.shape == (s.length, 8)


def projections(corpus):
    core, flank, bg = [], [], []
    for s in corpus.samples:
        inside = np.zeros(s.length, bool)
        for g in s.segments:
            proj = s.features[g.t_start:g.t_end] @ corpus.prototypes[g.class_id]
            L = g.t_end - g.t_start
            n_core = max(1, round(0.4 * L))
            lo = (L - n_core) // 2
            core.extend(proj[lo:lo + n_core])
            flank.extend(np.delete(proj, np.arange(lo, lo + n_core)))
            inside[g.t_start:g.t_end] = True
        bg.extend((s.features[~inside] @ corpus.prototypes.T).ravel())
    return np.mean(core), np.mean(flank), np.mean(bg)


def test_core_flank_background_ordering():
    core, flank, bg = projections(generate(SynthConfig(seed=0, num_videos=60, num_test_videos=0)))
    # expected projections are 3, 1 and 0 with unit noise per snippet
    assert core > flank > bg
    assert abs(core - 3) < 0.1 and abs(flank - 1) < 0.1 and abs(bg) < 0.1


def test_core_fraction_one_makes_uniform_actions():
    corpus = generate(SynthConfig(**SMALL, core_fraction=1.0, noise_scale=0.0))
    for s in corpus.samples:
        for g in s.segments:
            proj = s.features[g.t_start:g.t_end] @ corpus.prototypes[g.class_id]
            np.testing.assert_allclose(proj, 3.0, atol=1e-5)


def test_prototypes_orthonormal():
    p = generate(SynthConfig(**SMALL)).prototypes
    np.testing.assert_allclose(p @ p.T, np.eye(3), atol=1e-12)


def test_split_sizes_and_disjointness():
    corpus = generate(SynthConfig(**SMALL))
    train, val, test = split(corpus, 0.3, seed=1)
    assert (len(train), len(val), len(test)) == (14, 6, 6)
    ids = [s.video_id for s in train + val + test]
    assert len(ids) == len(set(ids)) == 26
    assert [s.video_id for s in split(corpus, 0.3, seed=1)[1]] == [s.video_id for s in val]


def test_split_keeps_one_validation_video():
    corpus = generate(SynthConfig(**{**SMALL, "num_videos": 3}))
    _, val, _ = split(corpus, 0.01)
    assert len(val) == 1
    with pytest.raises(ValueError, match="too small"):
        split(generate(SynthConfig(**{**SMALL, "num_videos": 1})), 0.5)
    with pytest.raises(ValueError, match="val_fraction"):
        split(corpus, 1.0)


@pytest.mark.parametrize("kw,err", [
    (dict(actions_range=(4, 4), action_length_range=(30, 30), length_range=(40, 60)), GenerationError),
    (dict(core_fraction=0.0), ValueError),
    (dict(core_gain=1.0, flank_gain=1.0), ValueError),
    (dict(length_range=(10, 5)), ValueError),
])
def test_invalid_configs(kw, err):
    with pytest.raises(err):
        generate(SynthConfig(**{**SMALL, **kw}))


def test_config_dict_is_json_ready():
    d = config_dict(SynthConfig())
    assert json.loads(json.dumps(d))["length_range"] == [60, 120]


# ---------------------------------------------------------------- format


@pytest.fixture
def saved(tmp_path):
    corpus = generate(SynthConfig(**SMALL, seed=2))
    corpus.samples[0].fps = 25.0
    path = tmp_path / "corpus"
    save(corpus, path)
    return corpus, path


def test_round_trip_bit_exact(saved):
    corpus, path = saved
    back = load(path)
    assert back.splits == corpus.splits
    np.testing.assert_array_equal(back.prototypes, corpus.prototypes)
    for a, b in zip(corpus.samples, back.samples):
        assert (a.video_id, a.labels, a.segments, a.fps) == (b.video_id, b.labels, b.segments, b.fps)
        assert a.features.tobytes() == b.features.tobytes()


def test_save_overwrites_existing(saved, tmp_path):
    corpus, path = saved
    save(corpus, path)
    assert sorted(p.name for p in path.iterdir() if p.name.startswith(".")) == []
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp")]


def _edit_manifest(path, fn):
    m = json.loads((path / "manifest.json").read_text())
    fn(m)
    (path / "manifest.json").write_text(json.dumps(m))


@pytest.mark.parametrize("corrupt,match", [
    (lambda p: _edit_manifest(p, lambda m: m.update(magic="NOPE")), "magic"),
    (lambda p: _edit_manifest(p, lambda m: m.update(version=7)), "version"),
    (lambda p: (p / "manifest.json").write_text("{not json"), "JSON"),
    (lambda p: (p / "manifest.json").write_bytes(b'{"magic": "\xff"}'), "UTF-8"),
    (lambda p: (p / "manifest.json").unlink(), "manifest"),
    (lambda p: (p / "train_0000.feat").write_bytes((p / "train_0000.feat").read_bytes()[:-4]), "truncated"),
    (lambda p: (p / "train_0000.feat").write_bytes((p / "train_0000.feat").read_bytes() + b"\0" * 4), "longer"),
    (lambda p: (p / "train_0000.feat").unlink(), "missing feature"),
    (lambda p: _edit_manifest(p, lambda m: m["videos"][0].pop("T")), "malformed"),
    (lambda p: _edit_manifest(p, lambda m: m["videos"][0]["segments"][0].update(end=10 ** 6)), "out of range"),
])
def test_corruption_is_a_format_error(saved, corrupt, match):
    _, path = saved
    corrupt(path)
    with pytest.raises(FormatError, match=match):
        load(path)


def test_format_error_reports_offset(saved):
    _, path = saved
    f = path / "train_0000.feat"
    f.write_bytes(f.read_bytes()[:100])
    with pytest.raises(FormatError) as info:
        load(path)
    assert info.value.offset == 100 and str(f) in str(info.value)
