"""Tiny deterministic SVG line charts.

Hand-rolled on purpose: chart output participates in reproducibility checks,
so the bytes must depend on nothing but the data passed in.
"""

from __future__ import annotations

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_WIDTH = 720
_HEIGHT = 440
_MARGIN_LEFT = 70
_MARGIN_RIGHT = 160
_MARGIN_TOP = 40
_MARGIN_BOTTOM = 50


def _span(values: list[float]) -> tuple[float, float]:
    low, high = min(values), max(values)
    if low == high:
        pad = 1.0 if low == 0 else abs(low) * 0.1
        return low - pad, high + pad
    return low, high


def line_chart(
    title: str,
    x_label: str,
    y_label: str,
    series: list[tuple[str, list[float], list[float]]],
) -> str:
    """Render named (xs, ys) series to an SVG document string."""
    plot_w = _WIDTH - _MARGIN_LEFT - _MARGIN_RIGHT
    plot_h = _HEIGHT - _MARGIN_TOP - _MARGIN_BOTTOM
    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys]
    if not all_x:
        raise ValueError("chart needs at least one point")
    x_lo, x_hi = _span(all_x)
    y_lo, y_hi = _span(all_y)

    def px(x: float) -> float:
        return _MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return _MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH // 2}" y="24" font-size="16" text-anchor="middle" '
        f'font-family="sans-serif">{title}</text>',
    ]
    axis_y = _MARGIN_TOP + plot_h
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{axis_y}" x2="{_MARGIN_LEFT + plot_w}" y2="{axis_y}" '
        'stroke="black"/>'
    )
    parts.append(
        f'<line x1="{_MARGIN_LEFT}" y1="{_MARGIN_TOP}" x2="{_MARGIN_LEFT}" y2="{axis_y}" '
        'stroke="black"/>'
    )
    for i in range(5):
        frac = i / 4
        xv = x_lo + frac * (x_hi - x_lo)
        yv = y_lo + frac * (y_hi - y_lo)
        xp = px(xv)
        yp = py(yv)
        parts.append(f'<line x1="{xp:.1f}" y1="{axis_y}" x2="{xp:.1f}" y2="{axis_y + 5}" stroke="black"/>')
        parts.append(
            f'<text x="{xp:.1f}" y="{axis_y + 20}" font-size="11" text-anchor="middle" '
            f'font-family="sans-serif">{xv:g}</text>'
        )
        parts.append(f'<line x1="{_MARGIN_LEFT - 5}" y1="{yp:.1f}" x2="{_MARGIN_LEFT}" y2="{yp:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{_MARGIN_LEFT - 8}" y="{yp + 4:.1f}" font-size="11" text-anchor="end" '
            f'font-family="sans-serif">{yv:g}</text>'
        )
    parts.append(
        f'<text x="{_MARGIN_LEFT + plot_w // 2}" y="{_HEIGHT - 12}" font-size="13" '
        f'text-anchor="middle" font-family="sans-serif">{x_label}</text>'
    )
    parts.append(
        f'<text x="18" y="{_MARGIN_TOP + plot_h // 2}" font-size="13" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 18 {_MARGIN_TOP + plot_h // 2})">{y_label}</text>'
    )
    for idx, (label, xs, ys) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        points = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        legend_y = _MARGIN_TOP + 16 * idx
        legend_x = _MARGIN_LEFT + plot_w + 12
        parts.append(
            f'<line x1="{legend_x}" y1="{legend_y}" x2="{legend_x + 18}" y2="{legend_y}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{legend_x + 24}" y="{legend_y + 4}" font-size="12" '
            f'font-family="sans-serif">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
