import math
import xml.etree.ElementTree as ET

from hamloc.evaluation import GroundTruthSegment
from hamloc.localization import Proposal
from hamloc.plots import bar_chart, line_chart, timeline

NS = "{http://www.w3.org/2000/svg}"


def parse(svg):
    root = ET.fromstring(svg)
    assert root.tag == NS + "svg"
    return root


def coords(root, tag):
    for el in root.iter(NS + tag):
        for key, val in el.attrib.items():
            if key in ("x", "y", "x1", "y1", "x2", "y2", "cx", "cy", "width", "height"):
                assert math.isfinite(float(val)), (tag, key, val)
    return list(root.iter(NS + tag))


def test_line_chart_one_polyline_per_series():
    root = parse(line_chart({"bcl": [3.0, 2.0, 1.5], "sal <x>": [1.0, float("nan"), 0.5]}, "Loss & more", "epoch"))
    assert len(coords(root, "polyline")) == 2
    assert len(coords(root, "circle")) == 5  # the NaN point is skipped
    texts = [t.text for t in root.iter(NS + "text")]
    assert "sal <x>" in texts and "Loss & more" in texts


def test_line_chart_degenerate_inputs():
    parse(line_chart({}))
    parse(line_chart({"flat": [2.0, 2.0]}))
    parse(line_chart({"one": [1.0]}, x=[0.5]))


def test_bar_chart_heights_follow_values():
    root = parse(bar_chart(["a", "b", "c"], [0.1, 0.4, -0.2]))
    bars = coords(root, "rect")[1:]  # first rect is the background
    heights = [float(b.get("height")) for b in bars]
    assert heights[1] > heights[0] and heights[2] > 0
    assert abs(heights[1] / heights[0] - 4) < 0.05


def test_timeline_rows():
    gt = [GroundTruthSegment("v", 2, 8, 0)]
    preds = [Proposal(3, 9, 0, 0.7, "v"), Proposal(12, 15, 1, 0.2, "v")]
    root = parse(timeline(20, gt, preds, {"attention": [0.5] * 20, "CAS class 0": list(range(20))}, "v", fps=25))
    labels = [t.text for t in root.iter(NS + "text")]
    assert {"ground truth", "prediction", "score", "attention", "CAS class 0"} <= set(labels)
    assert "12.8 s" in labels
    assert len(coords(root, "polyline")) == 2
