"""Dependency-free SVG output for curves and overlaid histograms."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
WIDTH, HEIGHT = 480, 320
MARGIN = dict(left=60, right=20, top=30, bottom=45)


class _Frame:
    def __init__(self, x_range, y_range):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.w = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x):
        return MARGIN["left"] + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y):
        return MARGIN["top"] + self.h - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * self.h


def _axes(frame: _Frame, title, xlabel, ylabel):
    left, top = MARGIN["left"], MARGIN["top"]
    bottom = top + frame.h
    out = [f'<rect x="{left}" y="{top}" width="{frame.w}" height="{frame.h}" fill="none" stroke="#333"/>',
           f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="{left + frame.w / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
           f'<text x="14" y="{top + frame.h / 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 14 {top + frame.h / 2})">{escape(ylabel)}</text>']
    for v in np.linspace(frame.x0, frame.x1, 5):
        x = frame.px(v)
        out.append(f'<text x="{x:.1f}" y="{bottom + 16}" text-anchor="middle" font-size="10">{v:.3g}</text>')
    for v in np.linspace(frame.y0, frame.y1, 5):
        y = frame.py(v)
        out.append(f'<text x="{left - 6}" y="{y + 3:.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    return out


def _legend(labels):
    out = []
    for k, label in enumerate(labels):
        y = MARGIN["top"] + 12 + 14 * k
        x = WIDTH - MARGIN["right"] - 110
        out.append(f'<rect x="{x}" y="{y - 8}" width="10" height="10" fill="{PALETTE[k % len(PALETTE)]}"/>')
        out.append(f'<text x="{x + 14}" y="{y + 1}" font-size="10">{escape(label)}</text>')
    return out


def _write(path, body):
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<rect width="100%" height="100%" fill="white"/>\n'
           + "\n".join(body) + "\n</svg>\n")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg, encoding="utf-8")
    return path


def curve_svg(path, x, series: dict, errors: dict | None = None, title="", xlabel="", ylabel=""):
    """Line plot of ``series[name]`` against ``x`` with optional +-error bars."""
    x = np.asarray(x, float)
    errors = errors or {}
    lo = min(np.min(np.asarray(v) - np.asarray(errors.get(k, 0))) for k, v in series.items())
    hi = max(np.max(np.asarray(v) + np.asarray(errors.get(k, 0))) for k, v in series.items())
    pad = 0.05 * (hi - lo or 1.0)
    frame = _Frame((x.min(), x.max()), (lo - pad, hi + pad))
    body = _axes(frame, title, xlabel, ylabel)
    for k, (name, ys) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        ys = np.asarray(ys, float)
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(frame.px(x), frame.py(ys)))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        if name in errors:
            e = np.asarray(errors[name], float)
            for xi, yi, ei in zip(frame.px(x), ys, e):
                body.append(f'<line x1="{xi:.1f}" y1="{frame.py(yi - ei):.1f}" x2="{xi:.1f}" '
                            f'y2="{frame.py(yi + ei):.1f}" stroke="{color}"/>')
    body += _legend(list(series))
    return _write(path, body)


def histogram_svg(path, samples: dict, bins=30, title="", xlabel="", ylabel="density"):
    """Overlaid normalised histograms sharing one set of bin edges."""
    pooled = np.concatenate([np.asarray(v, float).ravel() for v in samples.values()])
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    hists = {k: np.histogram(np.asarray(v, float), edges, density=True)[0] for k, v in samples.items()}
    top = max(h.max() for h in hists.values()) or 1.0
    frame = _Frame((lo, hi), (0.0, 1.05 * top))
    body = _axes(frame, title, xlabel, ylabel)
    for k, (name, h) in enumerate(hists.items()):
        color = PALETTE[k % len(PALETTE)]
        for a, b, v in zip(edges[:-1], edges[1:], h):
            x0, x1, y = frame.px(a), frame.px(b), frame.py(v)
            body.append(f'<rect x="{x0:.1f}" y="{y:.1f}" width="{max(x1 - x0, 0.5):.1f}" '
                        f'height="{frame.py(0) - y:.1f}" fill="{color}" fill-opacity="0.45"/>')
    body += _legend(list(samples))
    return _write(path, body)
