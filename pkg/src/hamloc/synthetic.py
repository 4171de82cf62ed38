"""Synthetic weakly-labelled snippet-feature corpora and their on-disk format.

Each action instance has a strong central core and weaker flanks, so a
classifier that only finds the most discriminative snippets under-covers
the ground truth.

On disk a corpus is a directory holding ``manifest.json`` plus one
``<id>.feat`` file per video (little-endian float32, row-major T x F).
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import FormatError, GenerationError
from .evaluation import GroundTruthSegment
from .losses import label_vector

MAGIC = "HAMLOC-CORPUS"
VERSION = 1


@dataclass
class SynthConfig:
    num_classes: int = 5
    feature_dim: int = 16
    num_videos: int = 200
    num_test_videos: int = 60
    length_range: tuple = (60, 120)
    actions_range: tuple = (1, 4)
    action_length_range: tuple = (8, 24)
    core_fraction: float = 0.4
    core_gain: float = 3.0
    flank_gain: float = 1.0
    noise_scale: float = 1.0
    min_gap: int = 1
    seed: int = 0

    def __post_init__(self):
        self.length_range = tuple(self.length_range)
        self.actions_range = tuple(self.actions_range)
        self.action_length_range = tuple(self.action_length_range)
        for name in ("length_range", "actions_range", "action_length_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"{name}={getattr(self, name)} must be a nonempty range of positive integers")
        if not 0 < self.core_fraction <= 1:
            raise ValueError(f"core_fraction must lie in (0, 1], got {self.core_fraction}")
        if not self.core_gain > self.flank_gain > 0:
            raise ValueError(f"need core_gain > flank_gain > 0, got {self.core_gain}, {self.flank_gain}")
        if self.num_classes < 1 or self.feature_dim < 1:
            raise ValueError("num_classes and feature_dim must be positive")
        if self.num_videos < 1 or self.num_test_videos < 0:
            raise ValueError("need num_videos >= 1 and num_test_videos >= 0")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass
class VideoSample:
    video_id: str
    features: np.ndarray
    labels: list
    segments: list = field(default_factory=list)
    fps: float | None = None

    @property
    def length(self):
        return self.features.shape[0]

    def label_vector(self, num_classes):
        return label_vector(self.labels, num_classes, with_background=True)


@dataclass
class Corpus:
    num_classes: int
    feature_dim: int
    samples: list
    prototypes: np.ndarray
    splits: dict = field(default_factory=dict)

    def subset(self, name):
        return [s for s in self.samples if self.splits.get(s.video_id) == name]

    @property
    def train(self):
        return self.subset("train")

    @property
    def val(self):
        return self.subset("val")

    @property
    def test(self):
        return self.subset("test")

    def ground_truth(self, samples=None):
        samples = self.samples if samples is None else samples
        return [g for s in samples for g in s.segments]

    def with_splits(self, train, val, test):
        splits = {s.video_id: "train" for s in train}
        splits.update({s.video_id: "val" for s in val})
        splits.update({s.video_id: "test" for s in test})
        return replace(self, splits=splits)


def class_prototypes(num_classes, feature_dim, rng) -> np.ndarray:
    """Unit-norm class signatures, mutually orthogonal when c <= F."""
    raw = rng.normal(size=(feature_dim, max(num_classes, 1)))
    if num_classes <= feature_dim:
        q, _ = np.linalg.qr(raw)
        return q[:, :num_classes].T.copy()
    return (raw / np.linalg.norm(raw, axis=0)).T.copy()


def _place(T, lengths, min_gap, rng):
    slack = T - sum(lengths) - min_gap * (len(lengths) - 1)
    if slack < 0:
        return None
    cuts = np.sort(rng.integers(0, slack + 1, size=len(lengths)))
    gaps = np.diff(np.concatenate(([0], cuts, [slack])))
    starts, t = [], 0
    for i, L in enumerate(lengths):
        t += int(gaps[i]) + (min_gap if i else 0)
        starts.append(t)
        t += L
    return starts


def _check_feasible(cfg: SynthConfig):
    a_min = cfg.actions_range[0]
    need = a_min * cfg.action_length_range[0] + cfg.min_gap * (a_min - 1)
    if need > cfg.length_range[1]:
        raise GenerationError(
            f"cannot place {a_min} actions of length >= {cfg.action_length_range[0]} "
            f"in videos of length <= {cfg.length_range[1]}")


def _video(cfg, idx, prefix, protos, rng, attempts=100):
    T = int(rng.integers(cfg.length_range[0], cfg.length_range[1] + 1))
    for _ in range(attempts):
        n = int(rng.integers(cfg.actions_range[0], cfg.actions_range[1] + 1))
        lengths = [int(x) for x in rng.integers(cfg.action_length_range[0], cfg.action_length_range[1] + 1, size=n)]
        starts = _place(T, lengths, cfg.min_gap, rng)
        if starts is not None:
            break
    else:
        raise GenerationError(f"video {prefix}{idx}: could not place actions in T={T} "
                              f"after {attempts} attempts ({cfg.actions_range=}, {cfg.action_length_range=})")
    vid = f"{prefix}{idx:04d}"
    classes = [int(c) for c in rng.integers(0, cfg.num_classes, size=n)]
    feats = rng.normal(0.0, cfg.noise_scale, size=(T, cfg.feature_dim))
    segments = []
    for s, L, c in zip(starts, lengths, classes):
        n_core = min(L, max(1, int(round(cfg.core_fraction * L))))
        core_start = s + (L - n_core) // 2
        gain = np.full(L, cfg.flank_gain)
        gain[core_start - s:core_start - s + n_core] = cfg.core_gain
        feats[s:s + L] += gain[:, None] * protos[c]
        segments.append(GroundTruthSegment(vid, s, s + L, c))
    return VideoSample(vid, feats.astype(np.float32), sorted(set(classes)), segments)


def generate(config: SynthConfig | None = None) -> Corpus:
    """Deterministic corpus; ``num_videos`` form the train pool, the rest are test."""
    cfg = config or SynthConfig()
    _check_feasible(cfg)
    rng = np.random.default_rng(cfg.seed)
    protos = class_prototypes(cfg.num_classes, cfg.feature_dim, rng)
    samples, splits = [], {}
    for i in range(cfg.num_videos):
        v = _video(cfg, i, "train_", protos, rng)
        samples.append(v)
        splits[v.video_id] = "train"
    for i in range(cfg.num_test_videos):
        v = _video(cfg, i, "test_", protos, rng)
        samples.append(v)
        splits[v.video_id] = "test"
    return Corpus(cfg.num_classes, cfg.feature_dim, samples, protos, splits)


def split(corpus: Corpus, val_fraction=0.3, seed=0):
    """Random disjoint (train, val, test) lists; val is carved out of the
    training pool (everything not marked test), at least one video."""
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    pool = [s for s in corpus.samples if corpus.splits.get(s.video_id) != "test"]
    test = [s for s in corpus.samples if corpus.splits.get(s.video_id) == "test"]
    n_val = max(1, int(round(val_fraction * len(pool))))
    if n_val >= len(pool):
        raise ValueError(f"training pool of {len(pool)} videos is too small for a validation split")
    perm = np.random.default_rng(seed).permutation(len(pool))
    val_idx = set(perm[:n_val].tolist())
    train = [s for i, s in enumerate(pool) if i not in val_idx]
    val = [s for i, s in enumerate(pool) if i in val_idx]
    return train, val, test


# ---------------------------------------------------------------- file format


def _manifest(corpus: Corpus):
    videos = []
    for s in corpus.samples:
        v = {"id": s.video_id, "T": int(s.length), "labels": [int(c) for c in s.labels],
             "segments": [{"start": g.t_start, "end": g.t_end, "class": g.class_id} for g in s.segments]}
        if corpus.splits.get(s.video_id):
            v["split"] = corpus.splits[s.video_id]
        if s.fps:
            v["fps"] = s.fps
        videos.append(v)
    return {"magic": MAGIC, "version": VERSION, "num_classes": corpus.num_classes,
            "feature_dim": corpus.feature_dim, "prototypes": corpus.prototypes.tolist(), "videos": videos}


def save(corpus: Corpus, path) -> None:
    """Write the corpus directory atomically (built beside ``path``, then renamed)."""
    path = os.path.abspath(os.fspath(path))
    parent = os.path.dirname(path)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(dir=parent, prefix=".tmp-corpus-")
    try:
        for s in corpus.samples:
            if s.features.shape != (s.length, corpus.feature_dim):
                raise ValueError(f"video {s.video_id} features have shape {s.features.shape}")
            with open(os.path.join(tmp, f"{s.video_id}.feat"), "wb") as fh:
                fh.write(np.ascontiguousarray(s.features, dtype="<f4").tobytes())
        with open(os.path.join(tmp, "manifest.json"), "w") as fh:
            json.dump(_manifest(corpus), fh, indent=1)
        if os.path.exists(path):
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load(path) -> Corpus:
    path = os.fspath(path)
    mpath = os.path.join(path, "manifest.json")
    if not os.path.isfile(mpath):
        raise FormatError("missing manifest.json", path=path)
    with open(mpath, "rb") as fh:
        raw = fh.read()
    try:
        m = json.loads(raw.decode())
    except UnicodeDecodeError as exc:
        raise FormatError(f"manifest is not UTF-8: {exc.reason}", offset=exc.start, path=mpath) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc.msg}", offset=exc.pos, path=mpath) from exc
    if not isinstance(m, dict) or m.get("magic") != MAGIC:
        found = m.get("magic") if isinstance(m, dict) else None
        raise FormatError(f"bad corpus magic {found!r}, expected {MAGIC!r}",
                          offset=max(raw.find(b'"magic"'), 0), path=mpath)
    if m.get("version") != VERSION:
        raise FormatError(f"unsupported corpus version {m.get('version')!r}",
                          offset=max(raw.find(b'"version"'), 0), path=mpath)
    try:
        c, F = int(m["num_classes"]), int(m["feature_dim"])
        protos = np.array(m.get("prototypes") or np.zeros((c, F)), dtype=np.float64).reshape(c, F)
        samples, splits = [], {}
        for v in m["videos"]:
            vid, T = str(v["id"]), int(v["T"])
            fpath = os.path.join(path, f"{vid}.feat")
            if not os.path.isfile(fpath):
                raise FormatError(f"missing feature file for video {vid}", path=fpath)
            size = os.path.getsize(fpath)
            expected = T * F * 4
            if size != expected:
                kind = "truncated" if size < expected else "longer than"
                raise FormatError(f"feature blob {kind} manifest: T={T}, F={F} needs {expected} bytes, found {size}",
                                  offset=min(size, expected), path=fpath)
            feats = np.fromfile(fpath, dtype="<f4").reshape(T, F)
            segs = [GroundTruthSegment(vid, int(g["start"]), int(g["end"]), int(g["class"]))
                    for g in v.get("segments", [])]
            for g in segs:
                if not 0 <= g.t_start < g.t_end <= T or not 0 <= g.class_id < c:
                    raise FormatError(f"segment {g} of video {vid} is out of range", path=mpath)
            samples.append(VideoSample(vid, feats, [int(x) for x in v["labels"]], segs, v.get("fps")))
            if v.get("split"):
                splits[vid] = v["split"]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed manifest entry: {exc!r}", path=mpath) from exc
    return Corpus(c, F, samples, protos, splits)


def config_dict(cfg: SynthConfig):
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
