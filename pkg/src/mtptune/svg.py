"""Tiny deterministic SVG line charts.

Reports only need step-function trajectories and rank curves, so this writes
the handful of SVG elements those take. Output depends only on the inputs:
same data, byte-identical file.
"""

from __future__ import annotations

from typing import Mapping, Sequence

PALETTE = ("#1b6ca8", "#d1495b", "#66a182", "#edae49", "#8d5a97", "#3c3c3c")

_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 34, 44


def _fmt(v: float) -> str:
    return format(v, ".2f")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def line_chart(series: Mapping[str, Sequence[tuple[float, float]]], path: str,
               title: str = "", x_label: str = "", y_label: str = "",
               width: int = 640, height: int = 400, step: bool = False) -> None:
    """Write one chart with a legend, one polyline per named series.

    ``step`` draws last-value-carried-forward staircases, the right shape for
    incumbent trajectories.
    """
    if not series:
        raise ValueError("no series to plot")
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        raise ValueError("series are empty")
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    plot_w = width - _MARGIN_L - _MARGIN_R
    plot_h = height - _MARGIN_T - _MARGIN_B

    def px(x: float) -> float:
        return _MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return _MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.0f}" y="20" font-size="14" '
                   f'font-family="sans-serif" text-anchor="middle">{title}</text>')
    # axes
    x0, y0 = _MARGIN_L, _MARGIN_T + plot_h
    out.append(f'<line x1="{x0}" y1="{_MARGIN_T}" x2="{x0}" y2="{y0}" '
               'stroke="#333333" stroke-width="1"/>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" '
               'stroke="#333333" stroke-width="1"/>')
    for t in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{_fmt(px(t))}" y1="{y0}" x2="{_fmt(px(t))}" '
                   f'y2="{y0 + 4}" stroke="#333333" stroke-width="1"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{y0 + 18}" font-size="11" '
                   f'font-family="sans-serif" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{x0 - 4}" y1="{_fmt(py(t))}" x2="{x0}" '
                   f'y2="{_fmt(py(t))}" stroke="#333333" stroke-width="1"/>')
        out.append(f'<text x="{x0 - 8}" y="{_fmt(py(t) + 4)}" font-size="11" '
                   f'font-family="sans-serif" text-anchor="end">{t:g}</text>')
    if x_label:
        out.append(f'<text x="{_MARGIN_L + plot_w / 2:.0f}" y="{height - 8}" '
                   'font-size="12" font-family="sans-serif" '
                   f'text-anchor="middle">{x_label}</text>')
    if y_label:
        cx, cy = 16, _MARGIN_T + plot_h / 2
        out.append(f'<text x="{cx}" y="{cy:.0f}" font-size="12" '
                   'font-family="sans-serif" text-anchor="middle" '
                   f'transform="rotate(-90 {cx} {cy:.0f})">{y_label}</text>')

    for k, (name, pts) in enumerate(series.items()):
        if not pts:
            continue
        color = PALETTE[k % len(PALETTE)]
        coords = []
        prev = None
        for x, y in pts:
            if step and prev is not None:
                coords.append(f"{_fmt(px(x))},{_fmt(py(prev))}")
            coords.append(f"{_fmt(px(x))},{_fmt(py(y))}")
            prev = y
        out.append(f'<polyline points="{" ".join(coords)}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        ly = _MARGIN_T + 14 + 16 * k
        lx = _MARGIN_L + plot_w - 130
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{lx + 28}" y="{ly}" font-size="11" '
                   f'font-family="sans-serif">{name}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
