"""Dependency-free SVG figures, each written next to a CSV with the same numbers."""
from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

_COLORS = {"history": "#4d4d4d", "ground_truth": "#1b9e77", "prediction": "#d95f02", "neighbors": "#b3b3b3"}


def _polyline(points: np.ndarray, color: str, to_px, width: float = 2.0, dash: str = "") -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (to_px(p) for p in points))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def trajectory_svg(history, ground_truth, prediction, neighbors=(), title: str = "", size: int = 400) -> str:
    """Top-down overlay of one instance (x right, y up)."""
    history, ground_truth, prediction = (np.asarray(a, dtype=float)[:, :2] for a in (history, ground_truth, prediction))
    nbrs = [np.asarray(n, dtype=float)[:, :2] for n in neighbors if len(n)]
    allp = np.concatenate([history, ground_truth, prediction] + nbrs)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    center = (lo + hi) / 2
    span = max(float((hi - lo).max()), 1.0) * 1.15
    pad = 20

    def to_px(p):
        q = (p - center) / span * (size - 2 * pad)
        return size / 2 + q[0], size / 2 - q[1]

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    if title:
        parts.append(f'<text x="8" y="16" font-size="12" font-family="sans-serif">{escape(title)}</text>')
    for n in nbrs:
        parts.append(_polyline(n, _COLORS["neighbors"], to_px, 1.0))
    parts.append(_polyline(history, _COLORS["history"], to_px))
    joined_gt = np.vstack([history[-1:], ground_truth])
    joined_pred = np.vstack([history[-1:], prediction])
    parts.append(_polyline(joined_gt, _COLORS["ground_truth"], to_px))
    parts.append(_polyline(joined_pred, _COLORS["prediction"], to_px, dash="5,3"))
    for i, (name, color) in enumerate(list(_COLORS.items())[:3]):
        y = size - 10 - 14 * i
        parts.append(f'<line x1="8" y1="{y - 4}" x2="24" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="28" y="{y}" font-size="10" font-family="sans-serif">{name.replace("_", " ")}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_trajectory(path_stem, history, ground_truth, prediction, neighbors=(), title: str = "") -> tuple[Path, Path]:
    stem = Path(path_stem)
    svg = stem.with_suffix(".svg")
    svg.write_text(trajectory_svg(history, ground_truth, prediction, neighbors, title), encoding="utf-8")
    rows = [("history", i, *p) for i, p in enumerate(np.asarray(history, dtype=float))]
    rows += [("ground_truth", i, *p) for i, p in enumerate(np.asarray(ground_truth, dtype=float))]
    rows += [("prediction", i, *p) for i, p in enumerate(np.asarray(prediction, dtype=float))]
    out_csv = stem.with_suffix(".csv")
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "step", "x", "y", "z"])
        w.writerows(rows)
    return svg, out_csv


def heatmap_svg(mask, cell_px: int = 30, title: str = "") -> str:
    """Grid heat map; row 0 is drawn at the top."""
    mask = np.asarray(mask, dtype=float)
    k_r, k_c = mask.shape
    top = 22 if title else 0
    w, h = k_c * cell_px, k_r * cell_px + top
    vmax = mask.max() if mask.max() > 0 else 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">']
    if title:
        parts.append(f'<text x="4" y="15" font-size="12" font-family="sans-serif">{escape(title)}</text>')
    for r in range(k_r):
        for c in range(k_c):
            v = mask[r, c] / vmax
            shade = int(round(255 * (1 - v)))
            parts.append(f'<rect x="{c * cell_px}" y="{top + r * cell_px}" width="{cell_px}" height="{cell_px}" '
                         f'fill="rgb(255,{shade},{shade})" stroke="#cccccc"><title>{mask[r, c]:.4g}</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_heatmap(path_stem, mask, title: str = "") -> tuple[Path, Path]:
    stem = Path(path_stem)
    svg = stem.with_suffix(".svg")
    svg.write_text(heatmap_svg(mask, title=title), encoding="utf-8")
    out_csv = stem.with_suffix(".csv")
    with open(out_csv, "w", newline="") as fh:
        csv.writer(fh).writerows([[repr(float(v)) for v in row] for row in np.asarray(mask, dtype=float)])
    return svg, out_csv
