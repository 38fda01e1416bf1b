"""Deterministic SVG emitters for result curves, value maps and traces.

Output is plain hand-assembled SVG with a fixed viewport and text elements,
so identical input CSVs produce byte-identical files (a golden-file
friendly property that raster backends cannot give).
"""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import FormatError, ParameterError

WIDTH = 640
HEIGHT = 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 24, 32, 48

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

PLOT_KINDS = ("noise", "fraction", "map", "trace")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _read_csv(path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    return header, rows


def _require_columns(header: list[str], needed: tuple[str, ...], path) -> None:
    missing = [c for c in needed if c not in header]
    if missing:
        raise FormatError(f"{path}: missing columns {', '.join(missing)}")


def _svg_document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _scale(vals, lo, hi, out_lo, out_hi):
    if hi == lo:
        return [0.5 * (out_lo + out_hi) for _ in vals]
    k = (out_hi - out_lo) / (hi - lo)
    return [out_lo + (v - lo) * k for v in vals]


def _axes(x_label: str, y_label: str, x_ticks, y_ticks) -> list[str]:
    body = [
        f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="#000000" stroke-width="1"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="#000000" stroke-width="1"/>',
        f'<text x="{(MARGIN_L + WIDTH - MARGIN_R) // 2}" y="{HEIGHT - 12}" '
        f'font-family="monospace" font-size="13" text-anchor="middle">{x_label}</text>',
        f'<text x="16" y="{(MARGIN_T + HEIGHT - MARGIN_B) // 2}" '
        f'font-family="monospace" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {(MARGIN_T + HEIGHT - MARGIN_B) // 2})">{y_label}</text>',
    ]
    for xv, xp in x_ticks:
        body.append(
            f'<text x="{_fmt(xp)}" y="{HEIGHT - MARGIN_B + 16}" font-family="monospace" '
            f'font-size="11" text-anchor="middle">{_fmt(xv)}</text>'
        )
    for yv, yp in y_ticks:
        body.append(
            f'<text x="{MARGIN_L - 6}" y="{_fmt(yp)}" font-family="monospace" '
            f'font-size="11" text-anchor="end">{_fmt(yv)}</text>'
        )
    return body


def _curve_svg(rows, x_col: str, x_label: str) -> str:
    # aggregate mean +- std over seeds per (variant, x)
    groups: dict[tuple[str, float], list[float]] = {}
    for row in rows:
        key = (row["variant"], float(row[x_col]))
        groups.setdefault(key, []).append(float(row["success"]))
    variants = sorted({v for v, _ in groups})
    xs_all = sorted({x for _, x in groups})
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = 0.0, 1.0
    px_lo, px_hi = MARGIN_L, WIDTH - MARGIN_R
    py_lo, py_hi = HEIGHT - MARGIN_B, MARGIN_T

    x_ticks = list(zip(xs_all, _scale(xs_all, x_lo, x_hi, px_lo, px_hi)))
    yt = [0.0, 0.25, 0.5, 0.75, 1.0]
    y_ticks = list(zip(yt, _scale(yt, y_lo, y_hi, py_lo, py_hi)))
    body = _axes(x_label, "success", x_ticks, y_ticks)

    for vi, variant in enumerate(variants):
        color = PALETTE[vi % len(PALETTE)]
        xs = [x for x in xs_all if (variant, x) in groups]
        means, stds = [], []
        for x in xs:
            vals = groups[(variant, x)]
            mean = sum(vals) / len(vals)
            var = sum((v - mean) ** 2 for v in vals) / len(vals)
            means.append(mean)
            stds.append(var ** 0.5)
        pxs = _scale(xs, x_lo, x_hi, px_lo, px_hi)
        pys = _scale(means, y_lo, y_hi, py_lo, py_hi)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(pxs, pys))
        body.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for x, m, sd in zip(pxs, means, stds):
            lo = _scale([max(y_lo, m - sd)], y_lo, y_hi, py_lo, py_hi)[0]
            hi = _scale([min(y_hi, m + sd)], y_lo, y_hi, py_lo, py_hi)[0]
            body.append(
                f'<line x1="{_fmt(x)}" y1="{_fmt(lo)}" x2="{_fmt(x)}" y2="{_fmt(hi)}" '
                f'stroke="{color}" stroke-width="1"/>'
            )
            mp = _scale([m], y_lo, y_hi, py_lo, py_hi)[0]
            body.append(
                f'<circle cx="{_fmt(x)}" cy="{_fmt(mp)}" r="3" fill="{color}"/>'
            )
        body.append(
            f'<text x="{WIDTH - MARGIN_R - 8}" y="{MARGIN_T + 16 + 16 * vi}" '
            f'font-family="monospace" font-size="12" text-anchor="end" '
            f'fill="{color}">{variant}</text>'
        )
    return _svg_document(body)


def _diverging_color(err: float, vmax: float) -> str:
    """Blue (negative) -> near-white (zero) -> red (positive)."""
    u = max(-1.0, min(1.0, err / vmax))
    if u >= 0:
        r, g, b = 247, int(247 - 205 * u), int(247 - 220 * u)
    else:
        r, g, b = int(247 + 214 * u), int(247 - 117 * -u), 247
    return f"#{r:02x}{g:02x}{b:02x}"


def _map_svg(rows) -> str:
    pts = [(float(r["x"]), float(r["y"]), float(r["error"])) for r in rows]
    xs = sorted({p[0] for p in pts})
    cell = min(
        [b - a for a, b in zip(xs, xs[1:])] or [1.0]
    )
    x_lo = min(p[0] for p in pts) - cell / 2
    x_hi = max(p[0] for p in pts) + cell / 2
    y_lo = min(p[1] for p in pts) - cell / 2
    y_hi = max(p[1] for p in pts) + cell / 2
    span = max(x_hi - x_lo, y_hi - y_lo)
    avail = min(WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B)
    k = avail / span
    vmax = max(max(abs(p[2]) for p in pts), 1e-9)
    body = []
    for x, y, err in pts:
        px = MARGIN_L + (x - cell / 2 - x_lo) * k
        py = MARGIN_T + (y - cell / 2 - y_lo) * k
        body.append(
            f'<rect x="{_fmt(px)}" y="{_fmt(py)}" width="{_fmt(cell * k)}" '
            f'height="{_fmt(cell * k)}" fill="{_diverging_color(err, vmax)}" '
            f'stroke="#cccccc" stroke-width="0.5"/>'
        )
    body.append(
        f'<text x="{MARGIN_L}" y="{MARGIN_T - 10}" font-family="monospace" '
        f'font-size="13">value error (q - mc), scale ±{_fmt(vmax)}</text>'
    )
    return _svg_document(body)


def _trace_svg(rows) -> str:
    ts = [float(r["t"]) for r in rows]
    qs = [float(r["q"]) for r in rows if r["q"] != ""]
    ds = [float(r["zdist"]) for r in rows]
    px_lo, px_hi = MARGIN_L, WIDTH - MARGIN_R
    py_lo, py_hi = HEIGHT - MARGIN_B, MARGIN_T
    t_lo, t_hi = min(ts), max(ts)
    body = []
    x_ticks = [(t_lo, px_lo), (t_hi, px_hi)] if t_hi > t_lo else [(t_lo, (px_lo + px_hi) / 2)]
    series = (("q", qs, PALETTE[0]), ("zdist", ds, PALETTE[1]))
    ticks = []
    for si, (label, vals, color) in enumerate(series):
        if not vals:
            continue
        v_lo, v_hi = min(vals), max(vals)
        pxs = _scale(ts[: len(vals)], t_lo, t_hi, px_lo, px_hi)
        pys = _scale(vals, v_lo, v_hi, py_lo, py_hi)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(pxs, pys))
        body.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        body.append(
            f'<text x="{WIDTH - MARGIN_R - 8}" y="{MARGIN_T + 16 + 16 * si}" '
            f'font-family="monospace" font-size="12" text-anchor="end" '
            f'fill="{color}">{label} [{_fmt(v_lo)}, {_fmt(v_hi)}]</text>'
        )
    body.extend(_axes("step", "normalized", x_ticks, ticks))
    return _svg_document(body)


def emit_plot(results_csv, kind: str, out_path) -> Path:
    """Render one CSV into one SVG; same CSV bytes -> same SVG bytes."""
    if kind not in PLOT_KINDS:
        raise ParameterError(f"unknown plot kind {kind!r}; expected {PLOT_KINDS}")
    header, rows = _read_csv(results_csv)
    if not rows:
        raise FormatError(f"{results_csv}: no data rows to plot")
    if kind in ("noise", "fraction"):
        x_col = "sigma" if kind == "noise" else "fraction"
        _require_columns(header, ("variant", x_col, "seed", "success"), results_csv)
        text = _curve_svg(rows, x_col, x_col)
    elif kind == "map":
        _require_columns(header, ("x", "y", "q", "mc", "error"), results_csv)
        text = _map_svg(rows)
    else:
        _require_columns(header, ("t", "q", "zdist"), results_csv)
        text = _trace_svg(rows)
    out = Path(out_path)
    out.write_text(text)
    return out
