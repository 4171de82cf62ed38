"""Turn model outputs into scored temporal proposals."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fileio import atomic_write_text

SNIPPET_FRAMES = 16


@dataclass(frozen=True)
class Proposal:
    t_start: int
    t_end: int
    class_id: int
    score: float
    video_id: str = ""

    def to_json(self, fps=None):
        d = {"video_id": self.video_id, "t_start": int(self.t_start), "t_end": int(self.t_end),
             "class_id": int(self.class_id), "score": float(self.score)}
        if fps:
            d["t_start_sec"] = snippets_to_seconds(self.t_start, fps)
            d["t_end_sec"] = snippets_to_seconds(self.t_end, fps)
        return d

    @classmethod
    def from_json(cls, d):
        return cls(int(d["t_start"]), int(d["t_end"]), int(d["class_id"]), float(d["score"]),
                   str(d.get("video_id", "")))


def default_thresholds():
    return [round(0.1 + 0.05 * i, 2) for i in range(17)]


@dataclass
class LocalizationConfig:
    class_gate: float = 0.1
    proposal_thresholds: list = field(default_factory=default_thresholds)
    zeta: float = 0.2
    nms_iou: float = 0.5
    smooth_window: int | None = None

    def __post_init__(self):
        th = list(self.proposal_thresholds)
        if not th:
            raise ValueError("proposal_thresholds must not be empty")
        if any(not 0 < t < 1 for t in th):
            raise ValueError(f"proposal thresholds must lie in (0, 1): {th}")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError(f"proposal thresholds must be strictly increasing: {th}")
        if not 0 < self.nms_iou <= 1:
            raise ValueError(f"nms_iou must lie in (0, 1], got {self.nms_iou}")
        if self.smooth_window is not None and (self.smooth_window < 1 or self.smooth_window % 2 == 0):
            raise ValueError(f"smooth_window must be a positive odd integer, got {self.smooth_window}")
        self.proposal_thresholds = th


def snippets_to_seconds(t, fps, frames_per_snippet=SNIPPET_FRAMES):
    return t * frames_per_snippet / fps


def gate_classes(p_attn, gate) -> list:
    """Foreground classes whose video-level score reaches ``gate``."""
    p = np.asarray(p_attn)
    return [j for j in range(p.size - 1) if p[j] >= gate]


def connected_components(attn, threshold) -> list:
    """Maximal runs with attn >= threshold as half-open (start, end) pairs."""
    on = np.concatenate(([False], np.asarray(attn) >= threshold, [False]))
    edges = np.flatnonzero(on[1:] != on[:-1])
    return [(int(s), int(e)) for s, e in zip(edges[::2], edges[1::2])]


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def outer_inner_score(cas_attn_c, t_s, t_e, p_attn_c, zeta) -> float:
    """Inner mean minus flanking mean plus zeta times the video-level score.

    The flanks are l_m = max(1, round((t_e - t_s) / 4)) snippets on each
    side, clipped to the video; an empty flank region counts as 0.
    """
    s = np.asarray(cas_attn_c, dtype=np.float64)
    T = s.size
    if not 0 <= t_s < t_e <= T:
        raise ValueError(f"invalid interval [{t_s}, {t_e}) for T={T}")
    lm = max(1, _round_half_up((t_e - t_s) / 4))
    inner = s[t_s:t_e].mean()
    outer = np.concatenate((s[max(0, t_s - lm):t_s], s[t_e:min(T, t_e + lm)]))
    outer_mean = outer.mean() if outer.size else 0.0
    return float(inner - outer_mean + zeta * p_attn_c)


def temporal_iou(a, b) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def _nms_order(proposals):
    return sorted(proposals, key=lambda p: (-p.score, p.t_start))


def nms(proposals, iou_threshold) -> list:
    """Greedy single-class NMS; suppresses IoU >= ``iou_threshold``."""
    if len({p.class_id for p in proposals}) > 1:
        raise ValueError("nms expects proposals of a single class; group by class first")
    remaining = _nms_order(proposals)
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [p for p in remaining
                     if temporal_iou((best.t_start, best.t_end), (p.t_start, p.t_end)) < iou_threshold]
    return kept


def smooth(x, window) -> np.ndarray:
    """Centered moving average with edge-normalised windows."""
    x = np.asarray(x, dtype=np.float64)
    if not window or window == 1:
        return x
    kernel = np.ones(window)
    num = np.convolve(x, kernel, mode="same")
    den = np.convolve(np.ones_like(x), kernel, mode="same")
    return num / den


def localize(output, config: LocalizationConfig | None = None, video_id="") -> list:
    """Gated classes -> attention components at every threshold -> outer-inner
    scores -> per-class NMS. Returns proposals grouped by class id."""
    config = config or LocalizationConfig()
    attn = _values(output.attn)
    cas_attn = _values(output.cas_attn)
    p_attn = _values(output.p_attn)
    components = {}
    for thr in config.proposal_thresholds:
        components.update(dict.fromkeys(connected_components(attn, thr)))
    result = []
    for c in gate_classes(p_attn, config.class_gate):
        col = smooth(cas_attn[:, c], config.smooth_window)
        cands = [Proposal(s, e, c, outer_inner_score(col, s, e, p_attn[c], config.zeta), video_id)
                 for s, e in components]
        result.extend(nms(cands, config.nms_iou))
    return result


def _values(x):
    return np.asarray(getattr(x, "data", x))


def write_jsonl(path_or_fh, proposals, fps_by_video=None):
    fps_by_video = fps_by_video or {}
    lines = [json.dumps(p.to_json(fps_by_video.get(p.video_id)), sort_keys=True) for p in proposals]
    text = "\n".join(lines) + ("\n" if lines else "")
    if hasattr(path_or_fh, "write"):
        path_or_fh.write(text)
        return
    atomic_write_text(path_or_fh, text)


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [Proposal.from_json(json.loads(line)) for line in fh if line.strip()]
