"""Seeded Adam training, validation-based model selection, and the
ablation / grid-search drivers."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .errors import InvalidStateError, NumericError
from .evaluation import THUMOS_IOUS, evaluate
from .localization import LocalizationConfig, localize
from .losses import LOSS_NAMES, LossWeights, total_loss
from .model import HamNetParams, forward
from .synthetic import Corpus, VideoSample, split

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch",) + LOSS_NAMES + ("total", "val_avg_map")

# loss name -> TrainConfig weight field
WEIGHT_FIELDS = {"bcl": "lambda0", "sal": "lambda1", "ssal": "lambda2", "hal": "lambda3",
                 "sparsity": "alpha", "guide": "beta"}

# Enabled losses per row of the loss-combination ablation, rows 1-5 being MIL-only.
LOSS_PLAN = (
    ("bcl",),
    ("bcl", "sal"),
    ("bcl", "sal", "guide"),
    ("bcl", "sal", "sparsity"),
    ("bcl", "sal", "sparsity", "guide"),
    ("bcl", "sal", "hal", "ssal"),
    ("bcl", "sal", "hal", "ssal", "guide"),
    ("bcl", "sal", "hal", "ssal", "sparsity"),
    ("bcl", "sal", "hal", "sparsity", "guide"),
    ("bcl", "sal", "ssal", "sparsity", "guide"),
    ("bcl", "sal", "hal", "ssal", "sparsity", "guide"),
)


@dataclass
class TrainConfig:
    lambda0: float = 0.8
    lambda1: float = 0.8
    lambda2: float = 0.2
    lambda3: float = 0.2
    alpha: float = 0.8
    beta: float = 0.8
    gamma: float = 0.2
    k: int | None = None
    k_ratio: float = 0.1
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    train_snippets: int | None = None
    seed: int = 0
    eval_every: int = 1
    val_fraction: float = 0.3
    hidden: int | None = None
    attn_hidden: int | None = None
    leaky_slope: float = 0.2
    literal_background: bool = False
    sparsity_mean: bool = False
    guide_mean: bool = False
    semisoft_grad: bool = False
    drop_mode: str = "discriminative"
    iou_thresholds: tuple = THUMOS_IOUS
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if isinstance(self.localization, dict):
            self.localization = LocalizationConfig(**self.localization)
        self.iou_thresholds = tuple(self.iou_thresholds)
        self.weights  # validates the loss weights

    @property
    def weights(self) -> LossWeights:
        return LossWeights(**{loss: getattr(self, f) for loss, f in WEIGHT_FIELDS.items()})

    def resolved_snippets(self, corpus: Corpus) -> int:
        if self.train_snippets:
            return int(self.train_snippets)
        return min(max(s.length for s in corpus.samples), 100)

    def resolved_k(self, corpus: Corpus) -> int:
        if self.k:
            return int(self.k)
        return max(1, math.ceil(self.resolved_snippets(corpus) * self.k_ratio))

    def to_dict(self):
        d = asdict(self)
        d["iou_thresholds"] = list(self.iou_thresholds)
        return d


def desk_config(**overrides) -> TrainConfig:
    """Short-schedule setting used for the synthetic-corpus experiments.

    The literal per-snippet sums of the sparsity and guide terms collapse the
    attention to zero on 60-120 snippet videos at any usable learning rate,
    so both are averaged over time here; lr 1e-3 for 12 epochs replaces the
    1e-5 / long schedule meant for full-size datasets.
    """
    base = dict(learning_rate=1e-3, epochs=12, eval_every=2, sparsity_mean=True, guide_mean=True)
    base.update(overrides)
    return TrainConfig(**base)


# --------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params, state: AdamState, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8, names=None) -> None:
    """Bias-corrected Adam update applied in place to ``p.data``."""
    for i, p in enumerate(params):
        if p.grad is None:
            label = names[i] if names else f"#{i}"
            raise InvalidStateError(f"parameter {label} has no gradient")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ------------------------------------------------------------------ sampling


def sample_snippets(sample: VideoSample, n: int, rng) -> VideoSample:
    """Uniform random subset of ``n`` snippets kept in temporal order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    T = sample.length
    if T <= n:
        return sample
    idx = np.sort(rng.choice(T, size=n, replace=False))
    return replace(sample, features=sample.features[idx])


# ------------------------------------------------------------------ inference


def _threads():
    try:
        return max(1, int(os.environ.get("HAMLOC_THREADS", "1")))
    except ValueError:
        return 1


def infer(params: HamNetParams, samples, k, config: TrainConfig | None = None):
    """Forward every sample without building a graph; returns ModelOutputs
    in input order."""
    config = config or TrainConfig()
    frozen = params.copy(requires_grad=False)

    def run(s):
        return forward(s.features.astype(np.float64), frozen, gamma=config.gamma, k=k,
                       slope=config.leaky_slope, drop_mode="discriminative")

    n = _threads()
    if n == 1 or len(samples) < 2:
        return [run(s) for s in samples]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(run, samples))


def predict(params, samples, k, config: TrainConfig | None = None):
    """Proposals for all samples (video order preserved) and per-video p_attn."""
    config = config or TrainConfig()
    outputs = infer(params, samples, k, config)
    proposals, scores = [], {}
    for s, out in zip(samples, outputs):
        proposals.extend(localize(out, config.localization, s.video_id))
        scores[s.video_id] = out.p_attn.data.copy()
    return proposals, scores


def evaluate_samples(params, samples, k, config: TrainConfig | None = None):
    config = config or TrainConfig()
    proposals, _ = predict(params, samples, k, config)
    gt = [g for s in samples for g in s.segments]
    return evaluate(proposals, gt, config.iou_thresholds), proposals


# ------------------------------------------------------------------- training


@dataclass
class TrainResult:
    params: HamNetParams
    log: list
    best_epoch: int
    best_val_avg_map: float
    final_params: HamNetParams
    k: int
    meta: dict = field(default_factory=dict)

    def log_csv(self) -> str:
        return log_to_csv(self.log)


def log_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])
    return buf.getvalue()


def read_log_csv(text):
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({c: (int(r[c]) if c == "epoch" else float(r[c])) for c in LOG_COLUMNS})
    return rows


def _splits(corpus: Corpus, config: TrainConfig):
    train, val = corpus.train, corpus.val
    if not val:
        train, val, _ = split(corpus, config.val_fraction, config.seed)
    if not train:
        raise ValueError("corpus has no training videos")
    return train, val


def train(corpus: Corpus, config: TrainConfig | None = None, progress=None) -> TrainResult:
    """One video per Adam step; validation avg mAP every ``eval_every`` epochs
    (and after the last one) picks the returned parameters."""
    config = config or TrainConfig()
    train_set, val_set = _splits(corpus, config)
    n_snip = config.resolved_snippets(corpus)
    k = config.resolved_k(corpus)
    params = HamNetParams.init(corpus.feature_dim, corpus.num_classes, config.hidden, config.attn_hidden,
                               seed=config.seed)
    tensors = params.tensors()
    names = [n for n, _ in params.named()]
    state = AdamState.for_params(tensors)
    rng = np.random.default_rng([config.seed, 1])
    weights = config.weights
    labels = {s.video_id: s.label_vector(corpus.num_classes) for s in train_set}

    log, best, best_val, best_epoch = [], None, -math.inf, 0
    for epoch in range(1, config.epochs + 1):
        sums = dict.fromkeys(LOSS_NAMES + ("total",), 0.0)
        for i in rng.permutation(len(train_set)):
            video = train_set[i]
            sample = sample_snippets(video, n_snip, rng)
            out = forward(sample.features.astype(np.float64), params, gamma=config.gamma, k=k,
                          slope=config.leaky_slope, drop_mode=config.drop_mode, rng=rng,
                          semisoft_grad=config.semisoft_grad)
            lb = total_loss(out, labels[video.video_id], weights, config.literal_background,
                            config.sparsity_mean, config.guide_mean)
            vals = lb.values()
            if not all(math.isfinite(v) for v in vals.values()):
                raise NumericError(f"non-finite loss at epoch {epoch}, video {video.video_id}: {vals}")
            params.zero_grad()
            ad.backward(lb.total)
            adam_step(tensors, state, config.learning_rate, config.adam_beta1, config.adam_beta2,
                      config.adam_eps, names)
            for key, v in vals.items():
                sums[key] += v
        row = {"epoch": epoch, **{key: v / len(train_set) for key, v in sums.items()}, "val_avg_map": math.nan}
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            report, _ = evaluate_samples(params, val_set, k, config)
            row["val_avg_map"] = report.avg_map
            if report.avg_map > best_val:
                best_val, best_epoch, best = report.avg_map, epoch, params.copy()
        log.append(row)
        logger.info("epoch %d total %.4f val_avg_map %s", epoch, row["total"], row["val_avg_map"])
        if progress:
            progress(row)
    meta = {"num_classes": corpus.num_classes, "feature_dim": corpus.feature_dim,
            "hidden": params.hidden, "attn_hidden": params.attn_hidden, "k": k,
            "best_epoch": best_epoch, "config": config.to_dict()}
    return TrainResult(best, log, best_epoch, best_val, params, k, meta)


# ---------------------------------------------------------------- ablations


def set_axis(config: TrainConfig, axis: str, value) -> TrainConfig:
    """Return a copy of ``config`` with one ablation axis set.

    Axes are TrainConfig fields, LocalizationConfig fields, ``lambda``
    (sets lambda2 = lambda3), or a loss name taking on/off values.
    """
    if axis in WEIGHT_FIELDS:
        f = WEIGHT_FIELDS[axis]
        on = _truthy(value)
        return replace(config, **{f: getattr(config, f) if on else 0.0})
    if axis == "lambda":
        return replace(config, lambda2=float(value), lambda3=float(value))
    train_fields = {f.name for f in fields(TrainConfig)}
    loc_fields = {f.name for f in fields(LocalizationConfig)}
    if axis in train_fields and axis != "localization":
        return replace(config, **{axis: value})
    if axis in loc_fields:
        return replace(config, localization=replace(config.localization, **{axis: value}))
    raise ValueError(f"unknown ablation axis {axis!r}")


def _truthy(v):
    if isinstance(v, str):
        return v.lower() in ("1", "true", "on", "yes")
    return bool(v)


def with_losses(config: TrainConfig, enabled) -> TrainConfig:
    """Zero the weight of every loss not in ``enabled``."""
    enabled = set(enabled)
    unknown = enabled - set(LOSS_NAMES)
    if unknown:
        raise ValueError(f"unknown losses {sorted(unknown)}")
    return replace(config, **{f: (getattr(config, f) if loss in enabled else 0.0)
                              for loss, f in WEIGHT_FIELDS.items()})


def ablation_columns(iou_thresholds):
    return ["value", "avg_map"] + [f"map@{t:g}" for t in iou_thresholds] + ["val_avg_map"]


def _ablation_row(corpus, config, value):
    res = train(corpus, config)
    report, _ = evaluate_samples(res.params, corpus.test, res.k, config)
    row = {"value": value, "avg_map": report.avg_map, "val_avg_map": res.best_val_avg_map}
    row.update({f"map@{t:g}": m for t, m in report.map_at.items()})
    return row


def ablate(corpus: Corpus, base_config: TrainConfig, axis: str, values) -> list:
    """Train once per value (shared seed), evaluate on the test split.

    ``axis="loss_plan"`` runs the 11-row loss-combination plan and ignores
    ``values``.
    """
    if axis == "loss_plan":
        rows = []
        for i, enabled in enumerate(LOSS_PLAN, 1):
            cfg = with_losses(base_config, enabled)
            rows.append(_ablation_row(corpus, cfg, f"exp{i}:" + "+".join(enabled)))
        return rows
    set_axis(base_config, axis, values[0] if values else 0)  # reject unknown axes before training
    return [_ablation_row(corpus, set_axis(base_config, axis, v), v) for v in values]


def rows_to_csv(rows, columns=None) -> str:
    if not rows:
        return ""
    columns = columns or list(rows[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def grid_search(corpus: Corpus, grid: dict, base_config: TrainConfig | None = None, cap=64):
    """Exhaustive search selecting by validation avg mAP.

    Combinations are visited in lexicographic order of (sorted keys, sorted
    values); the first maximum wins ties. Returns (best config, rows).
    """
    base_config = base_config or TrainConfig()
    if not grid:
        raise ValueError("grid must not be empty")
    keys = sorted(grid)
    value_lists = [sorted(grid[k_]) for k_ in keys]
    count = math.prod(len(v) for v in value_lists)
    if count > cap:
        raise ValueError(f"grid has {count} combinations, above the cap of {cap}")
    rows, best_cfg, best_val = [], None, -math.inf
    for combo in itertools.product(*value_lists):
        cfg = base_config
        for key, v in zip(keys, combo):
            cfg = set_axis(cfg, key, v)
        res = train(corpus, cfg)
        rows.append({**dict(zip(keys, combo)), "val_avg_map": res.best_val_avg_map})
        if res.best_val_avg_map > best_val:
            best_val, best_cfg = res.best_val_avg_map, cfg
    return best_cfg, rows
