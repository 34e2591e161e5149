"""Report emission: RFC-4180 CSV, deterministic JSON and a small SVG 1.1 plotter."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


def plain(obj):
    """Recursively convert numpy scalars/arrays to JSON-ready values; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(plain(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows) -> None:
    """RFC-4180 output: comma separated, CRLF line ends, minimal quoting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    v = plain(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# SVG

_W, _H, _M = 480, 320, 56
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def line_plot(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
              logx: bool = False, logy: bool = False) -> None:
    """``series`` maps a label to (xs, ys); polylines over linear or log axes."""
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)
    pts = {}
    for label, (xs, ys) in series.items():
        pp = [(tx(float(x)), ty(float(y))) for x, y in zip(xs, ys)
              if math.isfinite(float(x)) and math.isfinite(float(y))
              and (not logx or x > 0) and (not logy or y > 0)]
        pts[label] = pp
    allp = [p for pp in pts.values() for p in pp] or [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(v):
        return _M + (v - x0) / (x1 - x0) * (_W - 1.5 * _M)

    def sy(v):
        return _H - _M - (v - y0) / (y1 - y0) * (_H - 1.7 * _M)

    out = [_header(title)]
    out.append(_axes())
    for v in _ticks(x0, x1):
        lab = f"{10**v:.3g}" if logx else f"{v:.3g}"
        out.append(f'<text x="{sx(v):.1f}" y="{_H - _M + 16}" font-size="10" text-anchor="middle">{lab}</text>')
    for v in _ticks(y0, y1):
        lab = f"{10**v:.3g}" if logy else f"{v:.3g}"
        out.append(f'<text x="{_M - 6}" y="{sy(v) + 3:.1f}" font-size="10" text-anchor="end">{lab}</text>')
    for k, (label, pp) in enumerate(pts.items()):
        col = _COLORS[k % len(_COLORS)]
        if pp:
            coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in pp)
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{_W - _M}" y="{_M / 2 + 14 * k + 12}" font-size="11" fill="{col}" '
                   f'text-anchor="end">{escape(str(label))}</text>')
    out.append(_labels(xlabel, ylabel))
    out.append("</svg>\n")
    Path(path).write_text("\n".join(out))


def scatter_map(path, points, classes, title: str = "", palette: dict | None = None) -> None:
    """Colored markers at 2-D points (e.g. cube centers colored by type)."""
    points = np.asarray(points, float).reshape(-1, 2) if len(points) else np.zeros((0, 2))
    palette = palette or {}
    out = [_header(title), _axes()]
    if len(points):
        lo, hi = points.min(axis=0), points.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        order = {c: k for k, c in enumerate(sorted(set(map(str, classes))))}
        for (x, y), c in zip(points, classes):
            px = _M + (x - lo[0]) / span[0] * (_W - 1.5 * _M)
            py = _H - _M - (y - lo[1]) / span[1] * (_H - 1.7 * _M)
            col = palette.get(c) or _COLORS[order[str(c)] % len(_COLORS)]
            out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{col}"><title>{escape(str(c))}</title></circle>')
    out.append("</svg>\n")
    Path(path).write_text("\n".join(out))


def _header(title: str) -> str:
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">\n<rect width="100%" height="100%" fill="white"/>\n'
            f'<text x="{_W / 2}" y="18" font-size="13" text-anchor="middle">{escape(title)}</text>')


def _axes() -> str:
    return (f'<line x1="{_M}" y1="{_H - _M}" x2="{_W - _M / 2}" y2="{_H - _M}" stroke="black"/>\n'
            f'<line x1="{_M}" y1="{_H - _M}" x2="{_M}" y2="{_M * 0.7}" stroke="black"/>')


def _labels(xlabel: str, ylabel: str) -> str:
    return (f'<text x="{_W / 2}" y="{_H - 12}" font-size="11" text-anchor="middle">{escape(xlabel)}</text>\n'
            f'<text x="14" y="{_H / 2}" font-size="11" text-anchor="middle" '
            f'transform="rotate(-90 14 {_H / 2})">{escape(ylabel)}</text>')
