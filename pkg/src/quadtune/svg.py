"""Minimal SVG writers: line charts with optional bands, and grouped boxplots."""

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
WIDTH, HEIGHT = 640, 360
MARGIN = dict(left=64, right=16, top=32, bottom=48)


def _fmt(v):
    return f"{v:.2f}"


def _nice_ticks(lo, hi, n=5):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return []
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return list(np.arange(start, hi + 0.5 * step, step))


class _Canvas:
    def __init__(self, width, height, title, xlabel, ylabel, xlim, ylim, x0=0, y0=0):
        self.w, self.h = width, height
        self.x0, self.y0 = x0, y0
        self.xlim, self.ylim = xlim, ylim
        self.parts = []
        self.pw = width - MARGIN["left"] - MARGIN["right"]
        self.ph = height - MARGIN["top"] - MARGIN["bottom"]
        self._axes(title, xlabel, ylabel)

    def sx(self, x):
        lo, hi = self.xlim
        return self.x0 + MARGIN["left"] + (x - lo) / ((hi - lo) or 1.0) * self.pw

    def sy(self, y):
        lo, hi = self.ylim
        return self.y0 + MARGIN["top"] + self.ph - (y - lo) / ((hi - lo) or 1.0) * self.ph

    def _axes(self, title, xlabel, ylabel):
        l, t = self.x0 + MARGIN["left"], self.y0 + MARGIN["top"]
        p = self.parts
        p.append(f'<rect x="{l}" y="{t}" width="{self.pw}" height="{self.ph}" fill="none" stroke="#444"/>')
        p.append(f'<text x="{self.x0 + self.w / 2}" y="{self.y0 + 20}" text-anchor="middle" font-size="14">{escape(title)}</text>')
        p.append(f'<text x="{self.x0 + self.w / 2}" y="{self.y0 + self.h - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
        cy = t + self.ph / 2
        p.append(f'<text x="{self.x0 + 14}" y="{cy}" text-anchor="middle" font-size="12" transform="rotate(-90 {self.x0 + 14} {cy})">{escape(ylabel)}</text>')
        for v in _nice_ticks(*self.ylim):
            y = self.sy(v)
            p.append(f'<line x1="{l}" x2="{l + self.pw}" y1="{_fmt(y)}" y2="{_fmt(y)}" stroke="#ddd"/>')
            p.append(f'<text x="{l - 4}" y="{_fmt(y + 4)}" text-anchor="end" font-size="10">{v:g}</text>')
        for v in _nice_ticks(*self.xlim):
            x = self.sx(v)
            p.append(f'<text x="{_fmt(x)}" y="{t + self.ph + 14}" text-anchor="middle" font-size="10">{v:g}</text>')

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = " ".join(f"{_fmt(self.sx(x))},{_fmt(self.sy(y))}" for x, y in zip(xs, ys) if np.isfinite(y))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def band(self, xs, lo, hi, color):
        keep = [(x, a, b) for x, a, b in zip(xs, lo, hi) if np.isfinite(a) and np.isfinite(b)]
        if not keep:
            return
        top = [f"{_fmt(self.sx(x))},{_fmt(self.sy(b))}" for x, _, b in keep]
        bot = [f"{_fmt(self.sx(x))},{_fmt(self.sy(a))}" for x, a, _ in reversed(keep)]
        self.parts.append(f'<polygon points="{" ".join(top + bot)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')

    def legend(self, labels):
        for i, (label, color) in enumerate(labels):
            x = self.x0 + MARGIN["left"] + 8
            y = self.y0 + MARGIN["top"] + 14 + 14 * i
            self.parts.append(f'<line x1="{x}" x2="{x + 16}" y1="{y - 4}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
            self.parts.append(f'<text x="{x + 20}" y="{y}" font-size="10">{escape(label)}</text>')


def _limits(arrays, pad=0.05):
    vals = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays]) if arrays else np.array([0.0])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return (0.0, 1.0)
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return (lo - pad * span, hi + pad * span)


def _document(width, height, parts):
    body = "\n".join(parts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
        f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
    )


def line_chart(path, series, title="", xlabel="", ylabel="", bands=None):
    """
    ``series`` is a list of ``(label, xs, ys)``; ``bands`` an optional list of
    ``(xs, lo, hi)`` drawn underneath in the matching colour.
    """
    xs_all = [np.asarray(s[1]) for s in series]
    ys_all = [np.asarray(s[2]) for s in series] + [np.asarray(b[1]) for b in bands or []] + [np.asarray(b[2]) for b in bands or []]
    c = _Canvas(WIDTH, HEIGHT, title, xlabel, ylabel, _limits(xs_all, 0.0), _limits(ys_all))
    for i, b in enumerate(bands or []):
        c.band(*b, PALETTE[i % len(PALETTE)])
    for i, (label, xs, ys) in enumerate(series):
        c.polyline(xs, ys, PALETTE[i % len(PALETTE)])
    c.legend([(s[0], PALETTE[i % len(PALETTE)]) for i, s in enumerate(series)])
    Path(path).write_text(_document(WIDTH, HEIGHT, c.parts))
    return Path(path)


def stacked_line_charts(path, panels, xlabel="t [s]"):
    """Vertically stacked line charts; ``panels`` is a list of ``(title, ylabel, series)``."""
    parts = []
    for k, (title, ylabel, series) in enumerate(panels):
        xs_all = [np.asarray(s[1]) for s in series]
        ys_all = [np.asarray(s[2]) for s in series]
        c = _Canvas(WIDTH, HEIGHT, title, xlabel, ylabel, _limits(xs_all, 0.0), _limits(ys_all), y0=k * HEIGHT)
        colors = _series_colors(series)
        for (label, xs, ys), color in zip(series, colors):
            c.polyline(xs, ys, color, width=1.0)
        c.legend(_unique_labels(series, colors))
        parts += c.parts
    Path(path).write_text(_document(WIDTH, HEIGHT * len(panels), parts))
    return Path(path)


def _series_colors(series):
    # an unlabeled series continues the colour of the labeled one before it
    colors, k = [], -1
    for s in series:
        if s[0] or k < 0:
            k += 1
        colors.append(PALETTE[k % len(PALETTE)])
    return colors


def _unique_labels(series, colors):
    seen, out = set(), []
    for s, color in zip(series, colors):
        if s[0] and s[0] not in seen:
            seen.add(s[0])
            out.append((s[0], color))
    return out


def boxplot(path, groups, categories, title="", ylabel=""):
    """
    Grouped boxplot. ``groups`` maps a group label (e.g. a policy) to a dict
    ``{category: Quartiles-like}`` with ``min, q1, median, q3, max``.
    """
    n_cat, n_grp = len(categories), len(groups)
    arrays = [[q.min, q.max] for g in groups.values() for q in g.values()]
    c = _Canvas(WIDTH, HEIGHT, title, "", ylabel, (0.0, float(n_cat)), _limits(arrays))
    slot = 1.0 / (n_grp + 1)
    for gi, (label, stats) in enumerate(groups.items()):
        color = PALETTE[gi % len(PALETTE)]
        for ci, cat in enumerate(categories):
            q = stats.get(cat)
            if q is None or not np.isfinite(q.median):
                continue
            xc = ci + slot * (gi + 1)
            x0, x1 = c.sx(xc - 0.35 * slot), c.sx(xc + 0.35 * slot)
            xm = c.sx(xc)
            c.parts.append(f'<line x1="{_fmt(xm)}" x2="{_fmt(xm)}" y1="{_fmt(c.sy(q.min))}" y2="{_fmt(c.sy(q.max))}" stroke="{color}"/>')
            c.parts.append(
                f'<rect x="{_fmt(x0)}" y="{_fmt(c.sy(q.q3))}" width="{_fmt(x1 - x0)}" '
                f'height="{_fmt(max(c.sy(q.q1) - c.sy(q.q3), 0.5))}" fill="{color}" fill-opacity="0.3" stroke="{color}"/>'
            )
            c.parts.append(f'<line x1="{_fmt(x0)}" x2="{_fmt(x1)}" y1="{_fmt(c.sy(q.median))}" y2="{_fmt(c.sy(q.median))}" stroke="{color}" stroke-width="2"/>')
    for ci, cat in enumerate(categories):
        c.parts.append(f'<text x="{_fmt(c.sx(ci + 0.5))}" y="{c.y0 + MARGIN["top"] + c.ph + 28}" text-anchor="middle" font-size="12">{escape(cat)}</text>')
    c.legend([(label, PALETTE[i % len(PALETTE)]) for i, label in enumerate(groups)])
    Path(path).write_text(_document(WIDTH, HEIGHT, c.parts))
    return Path(path)
