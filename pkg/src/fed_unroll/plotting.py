"""Hand-rolled polyline SVG plots.

Output depends only on the CSV rows and the plot spec: no timestamps, fixed
number formatting, series drawn in sorted order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 150, 40, 55
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


@dataclass(frozen=True)
class PlotSpec:
    x: str
    y: str
    series: str | None = None
    where: tuple[tuple[str, str], ...] = ()
    title: str = ""
    xlabel: str | None = None
    ylabel: str | None = None
    x_scale: float = 1.0


def parse_plot_spec(text: str) -> PlotSpec:
    """``key=value`` pairs separated by whitespace, commas or newlines.

    Keys: x, y, series, title, xlabel, ylabel, x_scale, and ``where`` given as
    ``column:value`` (repeatable). Underscores in title/labels become spaces.
    """
    opts: dict[str, str] = {}
    where = []
    for token in text.replace(",", " ").split():
        if "=" not in token:
            raise ValueError(f"plot spec token {token!r} is not key=value")
        key, value = token.split("=", 1)
        if key == "where":
            col, _, val = value.partition(":")
            where.append((col, val))
        elif key in ("x", "y", "series", "title", "xlabel", "ylabel", "x_scale"):
            opts[key] = value
        else:
            raise ValueError(f"unknown plot spec key {key!r}")
    if "x" not in opts or "y" not in opts:
        raise ValueError("plot spec needs x= and y=")
    label = lambda k: opts[k].replace("_", " ") if k in opts else None  # noqa: E731
    return PlotSpec(x=opts["x"], y=opts["y"], series=opts.get("series"), where=tuple(where),
                    title=label("title") or "", xlabel=label("xlabel"), ylabel=label("ylabel"),
                    x_scale=float(opts.get("x_scale", 1.0)))


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, count: int = 6) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / (count - 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 10))
        v += step
    return ticks


def _series_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


def render_series(series: dict[str, list[tuple[float, float]]], spec: PlotSpec) -> str:
    points = [p for pts in series.values() for p in pts]
    if not points:
        raise ValueError("nothing to plot")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1, y_hi + 1
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    sx = lambda v: MARGIN_LEFT + (v - x_lo) / (x_hi - x_lo) * pw  # noqa: E731
    sy = lambda v: MARGIN_TOP + (y_hi - v) / (y_hi - y_lo) * ph  # noqa: E731

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(spec.title)}</text>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        px = _num(sx(t))
        out.append(f'<line x1="{px}" y1="{MARGIN_TOP + ph}" x2="{px}" y2="{MARGIN_TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px}" y="{MARGIN_TOP + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        py = _num(sy(t))
        out.append(f'<line x1="{MARGIN_LEFT - 5}" y1="{py}" x2="{MARGIN_LEFT}" y2="{py}" stroke="black"/>')
        out.append(f'<line x1="{MARGIN_LEFT}" y1="{py}" x2="{MARGIN_LEFT + pw}" y2="{py}" stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN_LEFT - 8}" y="{py}" text-anchor="end" dominant-baseline="middle" font-family="sans-serif" font-size="11">{t:g}</text>')
    xlabel = spec.xlabel if spec.xlabel is not None else spec.x
    ylabel = spec.ylabel if spec.ylabel is not None else spec.y
    out.append(f'<text x="{MARGIN_LEFT + pw // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN_TOP + ph // 2}" text-anchor="middle" font-family="sans-serif" font-size="13" '
               f'transform="rotate(-90 16 {MARGIN_TOP + ph // 2})">{escape(ylabel)}</text>')
    for i, name in enumerate(sorted(series, key=_series_key)):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(series[name])
        coords = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{_num(sx(x))}" cy="{_num(sy(y))}" r="3" fill="{color}"/>')
        ly = MARGIN_TOP + 10 + 18 * i
        lx = MARGIN_LEFT + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle" font-family="sans-serif" font-size="12">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def collect_series(rows: list[dict], spec: PlotSpec) -> dict[str, list[tuple[float, float]]]:
    series: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        if any(row.get(col) != val for col, val in spec.where):
            continue
        try:
            x = float(row[spec.x]) * spec.x_scale
            y = float(row[spec.y])
        except KeyError as exc:
            raise ValueError(f"column {exc} not in CSV") from None
        except ValueError:
            continue
        name = row[spec.series] if spec.series else spec.y
        series.setdefault(name, []).append((x, y))
    return series


def render_svg(csv_path, spec, out_path=None) -> str:
    """Plot ``spec`` (a :class:`PlotSpec` or spec string) from a CSV; optionally write the SVG."""
    if isinstance(spec, str):
        spec = parse_plot_spec(spec)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    svg = render_series(collect_series(rows, spec), spec)
    if out_path is not None:
        Path(out_path).write_text(svg, encoding="utf-8")
    return svg
