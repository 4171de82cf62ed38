"""Static SVG charts written as plain XML strings.

Every chart takes already-computed numbers; the CSV next to it holds the
same data so plots can be redrawn elsewhere.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")

W, H = 640, 360
ML, MR, MT, MB = 60, 150, 36, 44


def _svg(width, height, body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def _text(x, y, s, anchor="start", size=11, **kw):
    extra = "".join(f' {k.replace("_", "-")}="{v}"' for k, v in kw.items())
    return f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" font-size="{size}"{extra}>{escape(str(s))}</text>'


def _finite(values):
    return [v for v in values if v is not None and math.isfinite(v)]


def _range(values):
    vals = _finite(values)
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi == lo:
        pad = abs(hi) * 0.1 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def _axes(body, title, xlabel, ylabel, xlo, xhi, ylo, yhi, xticks=None):
    pw, ph = W - ML - MR, H - MT - MB
    body.append(_text(W / 2 - MR / 2, 20, title, "middle", 13))
    body.append(f'<line x1="{ML}" y1="{MT + ph}" x2="{ML + pw}" y2="{MT + ph}" stroke="black"/>')
    body.append(f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{MT + ph}" stroke="black"/>')
    for i in range(5):
        v = ylo + (yhi - ylo) * i / 4
        y = MT + ph - ph * i / 4
        body.append(f'<line x1="{ML - 4}" y1="{y:.1f}" x2="{ML}" y2="{y:.1f}" stroke="black"/>')
        body.append(_text(ML - 6, y + 4, f"{v:.3g}", "end"))
    for v, label in xticks or []:
        x = ML + pw * (v - xlo) / ((xhi - xlo) or 1)
        body.append(f'<line x1="{x:.1f}" y1="{MT + ph}" x2="{x:.1f}" y2="{MT + ph + 4}" stroke="black"/>')
        body.append(_text(x, MT + ph + 16, label, "middle"))
    body.append(_text(ML + pw / 2, H - 8, xlabel, "middle"))
    body.append(_text(14, MT + ph / 2, ylabel, "middle", transform=f"rotate(-90 14 {MT + ph / 2:.1f})"))
    return pw, ph


def _legend(body, names):
    for i, name in enumerate(names):
        y = MT + 14 * i
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<rect x="{W - MR + 12}" y="{y}" width="10" height="10" fill="{color}"/>')
        body.append(_text(W - MR + 26, y + 9, name))


def line_chart(series: dict, title="", xlabel="", ylabel="", x=None) -> str:
    """``series`` maps a name to a list of y values (NaN gaps are skipped)."""
    n = max((len(v) for v in series.values()), default=0)
    xs = list(x) if x is not None else list(range(1, n + 1))
    xlo, xhi = (min(xs), max(xs)) if xs else (0, 1)
    if xlo == xhi:
        xlo, xhi = xlo - 1, xhi + 1
    ylo, yhi = _range([v for vals in series.values() for v in vals])
    body = []
    ticks = [(v, f"{v:g}") for v in xs] if len(xs) <= 12 else [
        (xs[int(i * (len(xs) - 1) / 5)], f"{xs[int(i * (len(xs) - 1) / 5)]:g}") for i in range(6)]
    pw, ph = _axes(body, title, xlabel, ylabel, xlo, xhi, ylo, yhi, ticks)
    for i, (name, vals) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = [(ML + pw * (xv - xlo) / (xhi - xlo), MT + ph - ph * (yv - ylo) / (yhi - ylo))
               for xv, yv in zip(xs, vals) if yv is not None and math.isfinite(yv)]
        if len(pts) > 1:
            d = " ".join(f"{px:.1f},{py:.1f}" for px, py in pts)
            body.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for px, py in pts:
            body.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="2.5" fill="{color}"/>')
    _legend(body, list(series))
    return _svg(W, H, body)


def bar_chart(labels, values, title="", xlabel="", ylabel="") -> str:
    labels = [str(v) for v in labels]
    vals = [float(v) for v in values]
    ylo, yhi = min(0.0, *_finite(vals or [0.0])), max(1e-12, *_finite(vals or [1.0]))
    body = []
    pw, ph = _axes(body, title, xlabel, ylabel, 0, 1, ylo, yhi)
    n = max(len(vals), 1)
    slot = pw / n
    zero = MT + ph - ph * (0 - ylo) / (yhi - ylo)
    for i, (lab, v) in enumerate(zip(labels, vals)):
        top = MT + ph - ph * (v - ylo) / (yhi - ylo)
        x = ML + slot * i + slot * 0.15
        body.append(f'<rect x="{x:.1f}" y="{min(top, zero):.1f}" width="{slot * 0.7:.1f}" '
                    f'height="{abs(zero - top):.1f}" fill="{PALETTE[0]}"/>')
        body.append(_text(x + slot * 0.35, min(top, zero) - 3, f"{v:.3f}", "middle", 9))
        body.append(_text(x + slot * 0.35, MT + ph + 14, lab[:14], "middle", 9))
    return _svg(W, H, body)


def timeline(length, gt, predictions, scores, title="", fps=None) -> str:
    """Three stacked rows: ground-truth segments, predicted segments and the
    per-snippet score curves (``scores`` maps a name to a length-T list)."""
    width, height = 760, 260
    left, right = 90, 20
    pw = width - left - right
    body = [_text(width / 2, 18, title, "middle", 13)]

    def xpos(t):
        return left + pw * t / max(length, 1)

    rows = (("ground truth", 34, gt), ("prediction", 74, predictions))
    for label, y, segs in rows:
        body.append(_text(left - 8, y + 14, label, "end"))
        body.append(f'<rect x="{left}" y="{y}" width="{pw}" height="20" fill="#f2f2f2"/>')
        for s in segs:
            c = PALETTE[s.class_id % len(PALETTE)]
            body.append(f'<rect x="{xpos(s.t_start):.1f}" y="{y}" width="{xpos(s.t_end) - xpos(s.t_start):.1f}" '
                        f'height="20" fill="{c}" fill-opacity="0.75"/>')
    top, ph = 116, 110
    body.append(_text(left - 8, top + ph / 2, "score", "end"))
    body.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>')
    for i, (name, vals) in enumerate(scores.items()):
        vals = list(vals)
        lo, hi = _range(vals)
        lo, hi = min(lo, 0.0), max(hi, 1.0) if name == "attention" else hi
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{xpos(t + 0.5):.1f},{top + ph - ph * (v - lo) / (hi - lo):.1f}" for t, v in enumerate(vals))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        body.append(_text(left + 8 + 110 * i, height - 8, name, fill=color))
    unit = "s" if fps else "snippet"
    end = length * 16 / fps if fps else length
    body.append(_text(left, top + ph + 14, "0", "middle"))
    body.append(_text(left + pw, top + ph + 14, f"{end:g} {unit}", "end"))
    return _svg(width, height, body)
