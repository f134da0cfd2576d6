"""Minimal deterministic SVG line plots, emitted by direct text templating so
golden-file tests can compare output byte for byte."""

from __future__ import annotations

WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 30, 45, 55
PALETTE = ("#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d68910", "#16a085")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_plot(xs, series: dict, title: str, xlabel: str, ylabel: str) -> str:
    """Render named y-series over shared x values as an SVG string."""
    xs = [float(x) for x in xs]
    if not xs or not series:
        raise ValueError("need at least one x value and one series")
    ys_all = [float(v) for vs in series.values() for v in vs]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    pad = (y_hi - y_lo) * 0.08 or 0.05
    y_lo, y_hi = y_lo - pad, y_hi + pad
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#444444"/>',
    ]
    for i in range(5):
        y = y_lo + (y_hi - y_lo) * i / 4
        py = _fmt(sy(y))
        parts.append(f'<line x1="{MARGIN_L}" y1="{py}" x2="{WIDTH - MARGIN_R}" '
                     f'y2="{py}" stroke="#dddddd"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{py}" text-anchor="end" '
                     f'dominant-baseline="middle" font-family="sans-serif" '
                     f'font-size="11">{y:.3f}</text>')
    for x in xs:
        px = _fmt(sx(x))
        parts.append(f'<line x1="{px}" y1="{MARGIN_T + plot_h}" x2="{px}" '
                     f'y2="{MARGIN_T + plot_h + 5}" stroke="#444444"/>')
        parts.append(f'<text x="{px}" y="{MARGIN_T + plot_h + 20}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{x:g}</text>')
    parts.append(f'<text x="{MARGIN_L + plot_w // 2}" y="{HEIGHT - 12}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">{xlabel}</text>')
    parts.append(f'<text x="18" y="{MARGIN_T + plot_h // 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 18 {MARGIN_T + plot_h // 2})">{ylabel}</text>')
    for i, (name, ys) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{_fmt(sx(x))},{_fmt(sy(float(y)))}"
                          for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        for x, y in zip(xs, ys):
            parts.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(float(y)))}" '
                         f'r="3" fill="{color}"/>')
        ly = MARGIN_T + 14 + 16 * i
        parts.append(f'<line x1="{WIDTH - MARGIN_R - 150}" y1="{ly}" '
                     f'x2="{WIDTH - MARGIN_R - 126}" y2="{ly}" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{WIDTH - MARGIN_R - 120}" y="{ly + 4}" '
                     f'font-family="sans-serif" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
