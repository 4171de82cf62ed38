"""HAM-Net forward pass: classification and attention branches plus the
hybrid (soft / semi-soft / hard) attention pathways."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError
from .fileio import atomic_write_bytes

PARAM_NAMES = (
    "cls_conv1_w", "cls_conv1_b",
    "cls_conv2_w", "cls_conv2_b",
    "cls_linear_w", "cls_linear_b",
    "attn_conv1_w", "attn_conv1_b",
    "attn_conv2_w", "attn_conv2_b",
)

DROP_MODES = ("discriminative", "inverse", "random")


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class HamNetParams:
    cls_conv1_w: Tensor
    cls_conv1_b: Tensor
    cls_conv2_w: Tensor
    cls_conv2_b: Tensor
    cls_linear_w: Tensor
    cls_linear_b: Tensor
    attn_conv1_w: Tensor
    attn_conv1_b: Tensor
    attn_conv2_w: Tensor
    attn_conv2_b: Tensor

    @classmethod
    def init(cls, feature_dim, num_classes, hidden=None, attn_hidden=None, kernel=3, seed=0):
        """Glorot-uniform weights and zero biases; hidden widths default to 2F."""
        rng = np.random.default_rng(seed)
        F, K = feature_dim, kernel
        H = hidden or 2 * F
        Ha = attn_hidden or 2 * F
        C = num_classes + 1
        arrays = {
            "cls_conv1_w": _glorot(rng, (H, F, K), F * K, H * K),
            "cls_conv1_b": np.zeros(H),
            "cls_conv2_w": _glorot(rng, (H, H, K), H * K, H * K),
            "cls_conv2_b": np.zeros(H),
            "cls_linear_w": _glorot(rng, (C, H), H, C),
            "cls_linear_b": np.zeros(C),
            "attn_conv1_w": _glorot(rng, (Ha, F, K), F * K, Ha * K),
            "attn_conv1_b": np.zeros(Ha),
            "attn_conv2_w": _glorot(rng, (1, Ha, K), Ha * K, K),
            "attn_conv2_b": np.zeros(1),
        }
        return cls.from_arrays(arrays)

    @classmethod
    def from_arrays(cls, arrays, requires_grad=True):
        return cls(**{n: Tensor(np.array(arrays[n], dtype=np.float64), requires_grad) for n in PARAM_NAMES})

    @classmethod
    def zeros_like(cls, feature_dim, num_classes, hidden, attn_hidden, kernel=3):
        p = cls.init(feature_dim, num_classes, hidden, attn_hidden, kernel)
        return cls.from_arrays({n: np.zeros_like(a) for n, a in p.arrays().items()})

    def tensors(self):
        return [getattr(self, n) for n in PARAM_NAMES]

    def named(self):
        return [(n, getattr(self, n)) for n in PARAM_NAMES]

    def arrays(self):
        return {n: getattr(self, n).data.copy() for n in PARAM_NAMES}

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()

    def copy(self, requires_grad=True):
        return HamNetParams.from_arrays(self.arrays(), requires_grad)

    @property
    def feature_dim(self):
        return self.cls_conv1_w.shape[1]

    @property
    def num_classes(self):
        return self.cls_linear_w.shape[0] - 1

    @property
    def hidden(self):
        return self.cls_conv1_w.shape[0]

    @property
    def attn_hidden(self):
        return self.attn_conv1_w.shape[0]


@dataclass
class ModelOutput:
    cas: Tensor
    attn: Tensor
    cas_attn: Tensor
    attn_semisoft: Tensor
    attn_hard: Tensor
    p_base: Tensor
    p_attn: Tensor
    p_semisoft: Tensor
    p_hard: Tensor

    @property
    def num_classes(self):
        return self.cas.shape[1] - 1


def _check_features(x: Tensor, params: HamNetParams):
    if x.data.ndim != 2:
        raise ValueError(f"features must be T x F, got shape {x.shape}")
    if x.shape[1] != params.feature_dim:
        raise ValueError(f"feature dimension F={x.shape[1]} does not match model F={params.feature_dim}")


def forward_classification(x, params: HamNetParams, slope=0.2) -> Tensor:
    """Class activation sequence: raw T x (c+1) logits."""
    x = ad.as_tensor(x)
    _check_features(x, params)
    h = ad.leaky_relu(ad.conv1d_temporal(x, params.cls_conv1_w, params.cls_conv1_b), slope)
    h = ad.leaky_relu(ad.conv1d_temporal(h, params.cls_conv2_w, params.cls_conv2_b), slope)
    return ad.linear(h, params.cls_linear_w, params.cls_linear_b)


def forward_attention(x, params: HamNetParams, slope=0.2) -> Tensor:
    """Per-snippet foreground attention in (0, 1), shape T."""
    x = ad.as_tensor(x)
    _check_features(x, params)
    h = ad.leaky_relu(ad.conv1d_temporal(x, params.attn_conv1_w, params.attn_conv1_b), slope)
    z = ad.conv1d_temporal(h, params.attn_conv2_w, params.attn_conv2_b)
    return ad.sigmoid(ad.reshape(z, (z.shape[0],)))


def modulate(cas, attn) -> Tensor:
    """Scale every class logit of snippet i by attn[i]."""
    cas, attn = ad.as_tensor(cas), ad.as_tensor(attn)
    if attn.data.ndim != 1 or attn.shape[0] != cas.shape[0]:
        raise ValueError(f"attention length {attn.shape} does not match CAS length T={cas.shape[0]}")
    return ad.mul(cas, ad.reshape(attn, (attn.shape[0], 1)))


def drop_mask(attn_values, gamma, mode="discriminative", rng=None):
    """Boolean mask of snippets kept by the semi-soft / hard attentions.

    ``discriminative`` keeps a_i < gamma (drops the most attended snippets),
    ``inverse`` keeps a_i > gamma, ``random`` keeps a random subset of the
    same size as the discriminative rule would.
    """
    a = np.asarray(attn_values)
    if mode == "discriminative":
        return a < gamma
    if mode == "inverse":
        return a > gamma
    if mode == "random":
        if rng is None:
            raise ValueError("random drop mode needs an rng")
        n_keep = int(np.count_nonzero(a < gamma))
        mask = np.zeros(a.shape, dtype=bool)
        mask[rng.permutation(a.size)[:n_keep]] = True
        return mask
    raise ValueError(f"unknown drop mode {mode!r}; expected one of {DROP_MODES}")


def semi_soft(attn, gamma, mode="discriminative", rng=None, grad_flow=False) -> Tensor:
    """Soft attention with the dropped snippets zeroed.

    The retained values are detached unless ``grad_flow`` is set.
    """
    attn = ad.as_tensor(attn)
    mask = drop_mask(attn.data, gamma, mode, rng).astype(np.float64)
    if grad_flow:
        return ad.mul(attn, mask)
    return Tensor(attn.data * mask)


def hard(attn, gamma, mode="discriminative", rng=None) -> Tensor:
    attn = ad.as_tensor(attn)
    return Tensor(drop_mask(attn.data, gamma, mode, rng).astype(np.float64))


def video_scores(cas_like, k) -> Tensor:
    """Top-k temporal pooling then softmax over classes; k is clamped to T."""
    cas_like = ad.as_tensor(cas_like)
    k = max(1, min(int(k), cas_like.shape[0]))
    return ad.softmax_classes(ad.topk_mean_temporal(cas_like, k))


def forward(x, params: HamNetParams, gamma=0.2, k=50, slope=0.2, drop_mode="discriminative",
            rng=None, semisoft_grad=False) -> ModelOutput:
    x = ad.as_tensor(x)
    cas = forward_classification(x, params, slope)
    attn = forward_attention(x, params, slope)
    if drop_mode == "random":
        # one shared draw so semi-soft and hard drop the same snippets
        mask = drop_mask(attn.data, gamma, "random", rng)
        a_semi = ad.mul(attn, mask.astype(float)) if semisoft_grad else Tensor(attn.data * mask)
        a_hard = Tensor(mask.astype(float))
    else:
        a_semi = semi_soft(attn, gamma, drop_mode, grad_flow=semisoft_grad)
        a_hard = hard(attn, gamma, drop_mode)
    cas_attn = modulate(cas, attn)
    return ModelOutput(
        cas=cas,
        attn=attn,
        cas_attn=cas_attn,
        attn_semisoft=a_semi,
        attn_hard=a_hard,
        p_base=video_scores(cas, k),
        p_attn=video_scores(cas_attn, k),
        p_semisoft=video_scores(modulate(cas, a_semi), k),
        p_hard=video_scores(modulate(cas, a_hard), k),
    )


# ---------------------------------------------------------------- checkpoint

MAGIC = b"HAMN"
VERSION = 1


def save_checkpoint(params: HamNetParams, path, meta=None) -> None:
    """Write ``HAMN | u32 version | u32 manifest length | manifest JSON | f64 blobs``.

    Written atomically via a temp file in the target directory.
    """
    entries, blobs, offset = [], [], 0
    for name, t in params.named():
        blob = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"params": entries, "meta": meta or {}}, sort_keys=True).encode()
    payload = MAGIC + struct.pack("<II", VERSION, len(manifest)) + manifest + b"".join(blobs)
    atomic_write_bytes(path, payload)


def load_checkpoint(path):
    """Return ``(params, meta)``; raises :class:`FormatError` on any corruption."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise FormatError("checkpoint header truncated", offset=len(raw))
    if raw[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r}", offset=0)
    version, mlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    if 12 + mlen > len(raw):
        raise FormatError("checkpoint manifest truncated", offset=len(raw))
    try:
        manifest = json.loads(raw[12:12 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint manifest is not valid JSON: {exc}", offset=12) from exc
    base = 12 + mlen
    arrays = {}
    try:
        entries = manifest["params"]
        for e in entries:
            n = int(np.prod(e["shape"], dtype=np.int64))
            start = base + int(e["offset"])
            if e["nbytes"] != 8 * n:
                raise FormatError(f"parameter {e['name']} size does not match its shape", offset=start)
            if start + e["nbytes"] > len(raw):
                raise FormatError(f"parameter {e['name']} blob truncated", offset=len(raw))
            arrays[e["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=start).reshape(e["shape"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint manifest: {exc!r}", offset=12) from exc
    missing = [n for n in PARAM_NAMES if n not in arrays]
    if missing:
        raise FormatError(f"checkpoint missing parameters {missing}", offset=12)
    return HamNetParams.from_arrays(arrays), manifest.get("meta", {})
