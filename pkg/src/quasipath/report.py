"""CSV, SVG and plain-text output.

Floats are written with ``repr`` so files round-trip exactly and repeated
runs produce identical bytes.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def ensure_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    probe = p / ".write_probe"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise IOError(f"output directory {p} is not writable: {exc}") from exc
    return p


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def line_plot_svg(path, series, title="", xlabel="", ylabel="", logx=False, logy=False, width=640, height=420):
    """Write a minimal SVG line plot. ``series`` maps labels to ``(x, y)`` arrays."""
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)
    pts = {}
    for label, (xs, ys) in series.items():
        keep = [(tx(x), ty(y)) for x, y in zip(xs, ys)
                if np.isfinite(x) and np.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        if keep:
            pts[label] = keep
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    L, R, Tm, Bm = 70, 20, 40, 50
    sx = lambda v: L + (v - x0) / (x1 - x0) * (width - L - R)
    sy = lambda v: height - Bm - (v - y0) / (y1 - y0) * (height - Tm - Bm)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{L}" y1="{height - Bm}" x2="{width - R}" y2="{height - Bm}" stroke="black"/>',
        f'<line x1="{L}" y1="{Tm}" x2="{L}" y2="{height - Bm}" stroke="black"/>',
    ]
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        xl = f"{10 ** xv:.3g}" if logx else f"{xv:.3g}"
        yl = f"{10 ** yv:.3g}" if logy else f"{yv:.3g}"
        out.append(f'<text x="{sx(xv):.1f}" y="{height - Bm + 16}" text-anchor="middle">{xl}</text>')
        out.append(f'<text x="{L - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yl}</text>')
    out.append(f'<text x="{(L + width - R) / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{(Tm + height - Bm) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(Tm + height - Bm) / 2:.1f})">{escape(ylabel)}</text>'
    )
    for i, (label, p) in enumerate(pts.items()):
        c = _COLORS[i % len(_COLORS)]
        poly = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in p)
        out.append(f'<polyline points="{poly}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        for a, b in p:
            out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="{c}"/>')
        out.append(f'<text x="{width - R - 4}" y="{Tm + 14 * (i + 1)}" text-anchor="end" fill="{c}">{escape(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)


def histogram_svg(path, edges, counts, title="", xlabel="", width=640, height=360):
    edges = np.asarray(edges, float)
    counts = np.asarray(counts, float)
    L, R, Tm, Bm = 60, 20, 40, 50
    top = max(counts.max(), 1.0) if len(counts) else 1.0
    sx = lambda v: L + (v - edges[0]) / (edges[-1] - edges[0]) * (width - L - R)
    sy = lambda v: height - Bm - v / top * (height - Tm - Bm)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for a, b, c in zip(edges[:-1], edges[1:], counts):
        out.append(
            f'<rect x="{sx(a):.2f}" y="{sy(c):.2f}" width="{sx(b) - sx(a):.2f}" '
            f'height="{sy(0) - sy(c):.2f}" fill="#1f77b4" stroke="white"/>'
        )
    out.append(f'<line x1="{L}" y1="{sy(0):.1f}" x2="{width - R}" y2="{sy(0):.1f}" stroke="black"/>')
    for k in range(5):
        v = edges[0] + (edges[-1] - edges[0]) * k / 4
        out.append(f'<text x="{sx(v):.1f}" y="{height - Bm + 16}" text-anchor="middle">{v:.3g}</text>')
    out.append(f'<text x="{L - 6}" y="{sy(top) + 4:.1f}" text-anchor="end">{int(top)}</text>')
    out.append(f'<text x="{(L + width - R) / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)
