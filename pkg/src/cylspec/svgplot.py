"""Self-contained SVG line plots with a fixed canvas and deterministic output.

Byte-identical output for identical input is a hard requirement (study
artifacts are diffed across reruns), so everything that could wobble is
pinned: canvas size, palette, tick selection, and number formatting.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH = 800
HEIGHT = 600
MARGIN_LEFT = 72
MARGIN_RIGHT = 24
MARGIN_TOP = 34
MARGIN_BOTTOM = 56

PALETTE = ("#2a6099", "#c0392b", "#2e8b57", "#8e44ad", "#b7791f", "#148f9b")

DASH = {"solid": None, "dashed": "9 5", "dotted": "2 4"}


def _fmt(v: float) -> str:
    # one formatter everywhere keeps reruns byte-identical
    return "%.6g" % v


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi] on the 1-2-5 ladder."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        step = mult * mag
        if raw <= step:
            break
    first = math.ceil(lo / step - 1e-9)
    last = math.floor(hi / step + 1e-9)
    ticks = [t * step for t in range(first, last + 1)]
    return [0.0 if abs(t) < step * 1e-9 else t for t in ticks]


def _finite(points):
    return [(x, y) for x, y in points if math.isfinite(x) and math.isfinite(y)]


def _data_range(series, references):
    xs, ys = [], []
    for _, pts in series:
        for x, y in _finite(pts):
            xs.append(x)
            ys.append(y)
    for _, value, _ in references:
        if math.isfinite(value):
            ys.append(value)
    if not xs:
        xs = [0.0, 1.0]
    if not ys:
        ys = [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    # degenerate ranges get a symmetric pad so single points stay visible
    if x1 - x0 < 1e-12:
        pad = max(abs(x0) * 1e-3, 0.5)
        x0, x1 = x0 - pad, x1 + pad
    if y1 - y0 < 1e-12:
        pad = max(abs(y0) * 1e-3, 0.5)
        y0, y1 = y0 - pad, y1 + pad
    else:
        pad = (y1 - y0) * 0.06
        y0, y1 = y0 - pad, y1 + pad
    return x0, x1, y0, y1


def render(
    series,
    xlabel: str = "",
    ylabel: str = "",
    title: str = "",
    references=(),
) -> str:
    """Render line series to an 800x600 SVG document string.

    series: iterable of (name, [(x, y), ...]); NaN points break the line.
    references: iterable of (label, y value, style) drawn as horizontal
    rules, style one of "solid" / "dashed" / "dotted".
    """
    series = [(name, list(pts)) for name, pts in series]
    references = [(lab, float(v), sty) for lab, v, sty in references]
    if not any(_finite(pts) for _, pts in series):
        raise ValueError("nothing to plot: no finite data points")
    x0, x1, y0, y1 = _data_range(series, references)
    px0, px1 = MARGIN_LEFT, WIDTH - MARGIN_RIGHT
    py0, py1 = HEIGHT - MARGIN_BOTTOM, MARGIN_TOP

    def sx(x: float) -> str:
        return _fmt(px0 + (x - x0) / (x1 - x0) * (px1 - px0))

    def sy(y: float) -> str:
        return _fmt(py0 + (y - y0) / (y1 - y0) * (py1 - py0))

    out: list[str] = []
    out.append('<?xml version="1.0" encoding="UTF-8"?>')
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    out.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>')
    if title:
        out.append(
            f'<text x="{WIDTH // 2}" y="22" font-family="sans-serif" '
            f'font-size="15" text-anchor="middle">{escape(title)}</text>'
        )

    # axes and ticks
    axis = 'stroke="#333333" stroke-width="1"'
    out.append(f'<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" {axis}/>')
    out.append(f'<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" {axis}/>')
    for t in nice_ticks(x0, x1):
        X = sx(t)
        out.append(f'<line x1="{X}" y1="{py0}" x2="{X}" y2="{py0 + 5}" {axis}/>')
        out.append(
            f'<text x="{X}" y="{py0 + 20}" font-family="sans-serif" '
            f'font-size="12" text-anchor="middle">{escape(_fmt(t))}</text>'
        )
    for t in nice_ticks(y0, y1):
        Y = sy(t)
        out.append(f'<line x1="{px0 - 5}" y1="{Y}" x2="{px0}" y2="{Y}" {axis}/>')
        out.append(
            f'<text x="{px0 - 8}" y="{Y}" font-family="sans-serif" font-size="12" '
            f'text-anchor="end" dominant-baseline="middle">{escape(_fmt(t))}</text>'
        )
    if xlabel:
        out.append(
            f'<text x="{(px0 + px1) // 2}" y="{HEIGHT - 14}" '
            f'font-family="sans-serif" font-size="13" '
            f'text-anchor="middle">{escape(xlabel)}</text>'
        )
    if ylabel:
        out.append(
            f'<text x="18" y="{(py0 + py1) // 2}" font-family="sans-serif" '
            f'font-size="13" text-anchor="middle" transform="rotate(-90 18 '
            f'{(py0 + py1) // 2})">{escape(ylabel)}</text>'
        )

    for label, value, style in references:
        if not math.isfinite(value):
            continue
        Y = sy(value)
        dash = DASH.get(style)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(
            f'<line x1="{px0}" y1="{Y}" x2="{px1}" y2="{Y}" '
            f'stroke="#555555" stroke-width="1.2"{extra}/>'
        )
        if label:
            out.append(
                f'<text x="{px1 - 4}" y="{_fmt(float(Y) - 5)}" '
                f'font-family="sans-serif" font-size="11" fill="#555555" '
                f'text-anchor="end">{escape(label)}</text>'
            )

    for i, (name, pts) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        finite = _finite(pts)
        # NaN-separated runs become separate polylines
        run: list[str] = []
        runs: list[list[str]] = []
        for x, y in pts:
            if math.isfinite(x) and math.isfinite(y):
                run.append(f"{sx(x)},{sy(y)}")
            elif run:
                runs.append(run)
                run = []
        if run:
            runs.append(run)
        for chunk in runs:
            if len(chunk) >= 2:
                out.append(
                    f'<polyline points="{" ".join(chunk)}" fill="none" '
                    f'stroke="{color}" stroke-width="1.8"/>'
                )
        for x, y in finite:
            out.append(f'<circle cx="{sx(x)}" cy="{sy(y)}" r="3" fill="{color}"/>')
        if name:
            ly = MARGIN_TOP + 16 * i + 8
            out.append(
                f'<line x1="{px1 - 150}" y1="{ly}" x2="{px1 - 126}" y2="{ly}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            out.append(
                f'<text x="{px1 - 120}" y="{ly + 4}" font-family="sans-serif" '
                f'font-size="12">{escape(name)}</text>'
            )

    out.append("</svg>")
    return "\n".join(out) + "\n"
