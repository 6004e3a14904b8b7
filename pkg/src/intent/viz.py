"""Static SVG rendering of windows: observation (solid), ground truth
(dashed), prediction (dotted), one group per window."""

from typing import List, Sequence
from xml.etree import ElementTree as ET

import numpy as np

from .trajectory import TrajectoryWindow

_STYLES = {
    "observation": {"stroke": "#1f4e79", "dash": None},
    "truth": {"stroke": "#2e8540", "dash": "6 4"},
    "prediction": {"stroke": "#c23b22", "dash": "1.5 3"},
}


def _polyline(parent, pts: np.ndarray, kind: str, stroke_width: float):
    style = _STYLES[kind]
    attrs = {
        "points": " ".join(f"{x:.6g},{y:.6g}" for x, y in pts),
        "fill": "none",
        "stroke": style["stroke"],
        "stroke-width": f"{stroke_width:.6g}",
        "class": kind,
    }
    if style["dash"]:
        attrs["stroke-dasharray"] = style["dash"]
    ET.SubElement(parent, "polyline", attrs)


def plot_windows_svg(windows: Sequence[TrajectoryWindow],
                     predictions: Sequence[np.ndarray],
                     out_path) -> None:
    """Write one SVG overlaying every window's polylines.

    ``predictions`` holds one (t_pred, 2) world-frame array per window;
    windows without a future segment simply omit the ground-truth path.
    """
    if len(windows) != len(predictions):
        raise ValueError("one prediction per window required")
    if not windows:
        raise ValueError("nothing to plot")

    chunks: List[np.ndarray] = []
    for w, pred in zip(windows, predictions):
        chunks.append(w.observation.points)
        chunks.append(np.asarray(pred, dtype=np.float64))
        if w.future is not None:
            chunks.append(w.future.points)
    allpts = np.concatenate(chunks)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    margin = 0.05 * float(span.max())
    width = float(span[0]) + 2 * margin
    height = float(span[1]) + 2 * margin
    stroke = max(width, height) / 400.0

    svg = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "viewBox": f"{lo[0] - margin:.6g} {-(hi[1] + margin):.6g} "
                   f"{width:.6g} {height:.6g}",
        "width": "900",
        "height": f"{900.0 * height / width:.6g}",
    })
    # y grows upward in the data; flip once so the plot reads naturally
    root = ET.SubElement(svg, "g", {"transform": "scale(1,-1)"})
    for w, pred in zip(windows, predictions):
        group = ET.SubElement(root, "g", {"id": w.window_id})
        _polyline(group, w.observation.points, "observation", stroke)
        if w.future is not None:
            _polyline(group, w.future.points, "truth", stroke)
        _polyline(group, np.asarray(pred, dtype=np.float64), "prediction", stroke)
    ET.ElementTree(svg).write(out_path, encoding="utf-8", xml_declaration=True)
