"""Static SVG regret-vs-n figures, one per (alpha, p).

The plotting area is a group whose transform maps data coordinates to pixels, so
every emitted point is the data value itself (``n``, ``mean`` or ``mean +/- std``).
Output is a pure function of the curve, hence byte-stable.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import quoteattr

from .errors import ConfigurationError
from .harness import RegretCurve, RegretRow

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 60
COLORS = {"greedy": "#1f77b4", "pessimistic": "#d62728", "solution_set": "#2ca02c",
          "alternating": "#9467bd", "nc_regularized": "#ff7f0e"}


def _num(v: float) -> str:
    return format(float(v), ".17g")


def _ticks(lo: float, hi: float, k: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (k - 1) for i in range(k)]


def plot_file_name(alpha: float, p: float) -> str:
    return f"regret_alpha{alpha:g}_p{p:g}.svg"


def _render(rows: list[RegretRow], alpha: float, p: float) -> str:
    ns = [r.n for r in rows]
    lows = [r.mean_regret - r.std_regret for r in rows]
    highs = [r.mean_regret + r.std_regret for r in rows]
    xmin, xmax = min(ns), max(ns)
    if xmin == xmax:
        xmin, xmax = xmin - 1, xmax + 1
    ymin, ymax = min(0.0, min(lows)), max(highs)
    if ymax <= ymin:
        ymax = ymin + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    sx, sy = pw / (xmax - xmin), ph / (ymax - ymin)

    def px(x):
        return LEFT + (x - xmin) * sx

    def py(y):
        return TOP + ph - (y - ymin) * sy

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<title>Average regret, alpha={alpha:g}, p={p:g}</title>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    for t in _ticks(xmin, xmax):
        out.append(f'<text x="{px(t):.2f}" y="{TOP + ph + 18}" text-anchor="middle">{t:.0f}</text>')
    for t in _ticks(ymin, ymax):
        out.append(f'<text x="{LEFT - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">n</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.2f})">regret</text>')
    out.append(f'<text x="{LEFT + pw / 2:.2f}" y="24" text-anchor="middle">'
               f'alpha = {alpha:g}, p = {p:g}</text>')
    out.append(f'<g class="plot-area" data-xmin="{_num(xmin)}" data-xmax="{_num(xmax)}" '
               f'data-ymin="{_num(ymin)}" data-ymax="{_num(ymax)}" '
               f'transform="translate({_num(LEFT - xmin * sx)} {_num(TOP + ph + ymin * sy)}) '
               f'scale({_num(sx)} {_num(-sy)})">')
    methods = sorted({r.method for r in rows})
    for method in methods:
        mrows = sorted((r for r in rows if r.method == method), key=lambda r: r.n)
        color = COLORS.get(method, "#555555")
        upper = " ".join(f"{r.n},{_num(r.mean_regret + r.std_regret)}" for r in mrows)
        lower = " ".join(f"{r.n},{_num(r.mean_regret - r.std_regret)}" for r in reversed(mrows))
        mean = " ".join(f"{r.n},{_num(r.mean_regret)}" for r in mrows)
        m = quoteattr(method)
        out.append(f'<polygon class="band" data-method={m} points="{upper} {lower}" '
                   f'fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline class="band-upper" data-method={m} points="{upper}" '
                   f'fill="none" stroke="none"/>')
        out.append(f'<polyline class="mean" data-method={m} points="{mean}" fill="none" '
                   f'stroke="{color}" stroke-width="2" vector-effect="non-scaling-stroke"/>')
        for r in mrows:
            out.append(f'<circle class="point" data-method={m} cx="{r.n}" '
                       f'cy="{_num(r.mean_regret)}" r="0" stroke="{color}" stroke-width="6" '
                       f'stroke-linecap="round" vector-effect="non-scaling-stroke"/>')
    out.append("</g>")
    for i, method in enumerate(methods):
        y = TOP + 10 + 20 * i
        color = COLORS.get(method, "#555555")
        out.append(f'<line x1="{WIDTH - RIGHT + 12}" y1="{y}" x2="{WIDTH - RIGHT + 36}" '
                   f'y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - RIGHT + 42}" y="{y + 4}">{method}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_curves(curve: RegretCurve, out_dir: str | Path) -> list[Path]:
    """Write one SVG per (alpha, p) into ``out_dir``; returns the paths in sorted order."""
    if not curve.rows:
        raise ConfigurationError("cannot plot an empty regret curve")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for alpha, p in sorted({(r.alpha, r.p) for r in curve.rows}):
        rows = [r for r in curve.rows if (r.alpha, r.p) == (alpha, p)]
        path = out_dir / plot_file_name(alpha, p)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_render(rows, alpha, p))
        paths.append(path)
    return paths
