"""The six loss terms of the HAM-Net objective and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelOutput

LOG_FLOOR = 1e-12
LOSS_NAMES = ("bcl", "sal", "ssal", "hal", "sparsity", "guide")


def label_vector(class_ids, num_classes, with_background=True) -> np.ndarray:
    """Multi-hot vector of length c+1; the last slot is background."""
    ids = list(class_ids)
    if not ids:
        raise ValueError("a label vector needs at least one foreground class")
    y = np.zeros(num_classes + 1)
    for j in ids:
        if not 0 <= j < num_classes:
            raise ValueError(f"class id {j} outside [0, {num_classes})")
        y[j] = 1.0
    y[num_classes] = 1.0 if with_background else 0.0
    return y


def foreground_only(y) -> np.ndarray:
    yf = np.array(y, dtype=np.float64)
    yf[-1] = 0.0
    return yf


def with_background(y) -> np.ndarray:
    yb = np.array(y, dtype=np.float64)
    yb[-1] = 1.0
    return yb


def cross_entropy_multihot(p, y) -> Tensor:
    """-sum_j y_j log(max(p_j, 1e-12)), no normalisation by label count."""
    p = ad.as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"label length {y.shape} does not match probability length {p.shape}")
    return ad.scale(ad.tsum(ad.mul(ad.log(ad.clamp_min(p, LOG_FLOOR)), y)), -1.0)


def bcl(output: ModelOutput, y) -> Tensor:
    return cross_entropy_multihot(output.p_base, with_background(y))


def sal(output: ModelOutput, y) -> Tensor:
    return cross_entropy_multihot(output.p_attn, foreground_only(y))


def ssal(output: ModelOutput, y) -> Tensor:
    return cross_entropy_multihot(output.p_semisoft, foreground_only(y))


def hal(output: ModelOutput, y) -> Tensor:
    return cross_entropy_multihot(output.p_hard, with_background(y))


def sparsity_loss(attn, mean=False) -> Tensor:
    attn = ad.as_tensor(attn)
    total = ad.tsum(ad.tabs(attn))
    return ad.scale(total, 1.0 / attn.shape[0]) if mean else total


def background_probability(cas, literal=False) -> Tensor:
    """Background probability per snippet from CAS logits (last axis).

    Default: softmax over all c+1 logits. ``literal``: exp(s_bg) over the
    sum of the c foreground exponentials, which is not bounded by 1.
    """
    cas = ad.as_tensor(cas)
    nc = cas.shape[-1] - 1
    norm = ad.logsumexp(ad.slice_last(cas, nc) if literal else cas)
    return ad.exp(ad.sub(ad.take_last(cas, nc), norm))


def guide_loss(attn, cas, literal=False, mean=False) -> Tensor:
    """sum_i |1 - a_i - bg_prob_i|."""
    attn, cas = ad.as_tensor(attn), ad.as_tensor(cas)
    if attn.shape[0] != cas.shape[0]:
        raise ValueError(f"attention length {attn.shape[0]} does not match CAS length {cas.shape[0]}")
    bg = background_probability(cas, literal)
    total = ad.tsum(ad.tabs(ad.sub(ad.sub(1.0, attn), bg)))
    return ad.scale(total, 1.0 / attn.shape[0]) if mean else total


@dataclass(frozen=True)
class LossWeights:
    """Defaults are the THUMOS14 setting."""

    bcl: float = 0.8
    sal: float = 0.8
    ssal: float = 0.2
    hal: float = 0.2
    sparsity: float = 0.8
    guide: float = 0.8

    def __post_init__(self):
        for name in LOSS_NAMES:
            w = getattr(self, name)
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"loss weight {name}={w} must be finite and >= 0")

    def as_dict(self):
        return {n: getattr(self, n) for n in LOSS_NAMES}


@dataclass
class LossBreakdown:
    bcl: Tensor
    sal: Tensor
    ssal: Tensor
    hal: Tensor
    sparsity: Tensor
    guide: Tensor
    total: Tensor
    weights: LossWeights = field(default_factory=LossWeights)

    def values(self):
        out = {n: float(getattr(self, n).data) for n in LOSS_NAMES}
        out["total"] = float(self.total.data)
        return out


def total_loss(output: ModelOutput, y, weights: LossWeights | None = None, literal_background=False,
               sparsity_mean=False, guide_mean=False) -> LossBreakdown:
    """Weighted sum of the six terms.

    Zero-weight terms are evaluated for reporting but left out of the total,
    so they contribute exactly nothing to its gradient.
    """
    weights = weights or LossWeights()
    parts = {
        "bcl": bcl(output, y),
        "sal": sal(output, y),
        "ssal": ssal(output, y),
        "hal": hal(output, y),
        "sparsity": sparsity_loss(output.attn, sparsity_mean),
        "guide": guide_loss(output.attn, output.cas, literal_background, guide_mean),
    }
    total = Tensor(0.0)
    for name in LOSS_NAMES:
        w = getattr(weights, name)
        if w != 0:
            total = ad.add(total, ad.scale(parts[name], w))
    return LossBreakdown(total=total, weights=weights, **parts)
