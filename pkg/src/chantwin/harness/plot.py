"""Deterministic SVG line chart of BER against SNR (log-scale BER axis)."""

import math
from collections import OrderedDict
from xml.sax.saxutils import escape

from .results import parse_results

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 20, 50
BER_FLOOR_DECADE = -7
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
          "#bcbd22", "#17becf")


def series_from_rows(rows):
    """``{(scenario, variant): [(snr, ber), ...]}`` with trials pooled by bit count."""
    pooled = OrderedDict()
    for r in rows:
        pts = pooled.setdefault((r.scenario, r.variant), OrderedDict())
        errs, bits = pts.get(r.snr_db, (0.0, 0))
        pts[r.snr_db] = (errs + r.ber * r.bits, bits + r.bits)
    return OrderedDict((k, sorted((snr, e / b) for snr, (e, b) in v.items())) for k, v in pooled.items())


def _fmt(v):
    return f"{v:.2f}"


def render_svg(rows, title="BER vs SNR"):
    series = series_from_rows(rows)
    snrs = [s for pts in series.values() for s, _ in pts]
    x0, x1 = (min(snrs), max(snrs)) if snrs else (0.0, 30.0)
    if x0 == x1:
        x0, x1 = x0 - 1.0, x1 + 1.0
    positive = [b for pts in series.values() for _, b in pts if b > 0]
    y0 = max(BER_FLOOR_DECADE, math.floor(math.log10(min(positive)))) if positive else -5
    y0 = min(y0, -1)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(snr):
        return LEFT + (snr - x0) / (x1 - x0) * pw

    def py(ber):
        d = math.log10(ber) if ber > 0 else y0
        d = min(0.0, max(y0, d))
        return TOP + (0.0 - d) / (0.0 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{LEFT + pw / 2:.2f}" y="14" text-anchor="middle">{escape(title)}</text>']
    # axes and grid
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for d in range(y0, 1):
        y = py(10.0 ** d)
        out.append(f'<line x1="{LEFT}" y1="{_fmt(y)}" x2="{LEFT + pw}" y2="{_fmt(y)}" stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_fmt(y + 4)}" text-anchor="end">1e{d}</text>')
    n_ticks = 6
    for i in range(n_ticks + 1):
        v = x0 + (x1 - x0) * i / n_ticks
        x = px(v)
        out.append(f'<line x1="{_fmt(x)}" y1="{TOP + ph}" x2="{_fmt(x)}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{TOP + ph + 18}" text-anchor="middle">{v:g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle">SNR (dB)</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2:.2f})">BER</text>')
    # data
    for i, ((scenario, variant), pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{_fmt(px(s))},{_fmt(py(b))}" for s, b in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = TOP + 12 + 16 * i
        out.append(f'<line x1="{WIDTH - RIGHT + 10}" y1="{ly}" x2="{WIDTH - RIGHT + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        label = variant if len({k[0] for k in series}) == 1 else f"{scenario}:{variant}"
        out.append(f'<text x="{WIDTH - RIGHT + 34}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(csv_text, title="BER vs SNR"):
    """SVG text for a results CSV; malformed rows raise ``ParseError`` with the row number."""
    return render_svg(parse_results(csv_text), title)
