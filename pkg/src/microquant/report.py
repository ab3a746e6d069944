"""Table and plot emission: CSV/JSON tables and self-contained SVG figures."""
from __future__ import annotations

import csv
import io
import json
import math
from decimal import ROUND_HALF_UP, Decimal
from html import escape
from pathlib import Path

import numpy as np

PERFORMANCE_COLUMNS = ("model", "optimizer", "loss", "precision", "recall", "f_d", "iou",
                       "box_p", "box_r", "box_a", "avg")
METRIC_KEYS = PERFORMANCE_COLUMNS[3:]
VERDICT_COLOR = {"clustered": "#d62728", "dispersed": "#1f77b4"}


def fmt_pct(x) -> str:
    """Proportion -> percent with one decimal, rounded half up; '' if undefined."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return str((Decimal(repr(float(x))) * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def fmt_num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def clean_json(obj):
    """Recursively replace NaN with None and numpy scalars/arrays with Python types."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if math.isnan(obj) else float(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(clean_json(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([row.get(c, "") if isinstance(row.get(c, ""), str) else fmt_num(row.get(c)) for c in columns])
    return buf.getvalue()


def mark_best(rows, key="avg"):
    vals = [r[key] for r in rows if r.get(key) is not None and not math.isnan(r[key])]
    best = max(vals) if vals else None
    for r in rows:
        r["best"] = best is not None and r.get(key) == best
    return rows


def performance_csv(rows, by_image=False) -> str:
    """Performance rows; metrics as percent strings plus a ``best`` flag on the top avg."""
    rows = mark_best([dict(r) for r in rows])
    cols = (("image_id",) if by_image else ()) + PERFORMANCE_COLUMNS + ("best",)
    out = []
    for r in rows:
        o = {c: str(r.get(c, "")) for c in cols if c not in METRIC_KEYS}
        o.update({k: fmt_pct(r.get(k)) for k in METRIC_KEYS})
        o["best"] = "true" if r["best"] else "false"
        out.append(o)
    return csv_text(cols, out)


def parse_performance_csv(text: str):
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rec = dict(r)
        for k in METRIC_KEYS:
            rec[k] = float(r[k]) / 100 if r[k] != "" else math.nan
        rec["best"] = r["best"] == "true"
        rows.append(rec)
    return rows


def write_text(path, text: str) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    return path


# SVG -------------------------------------------------------------------------

_W, _H = 640, 360
_ML, _MR, _MT, _MB = 70, 20, 40, 60


def _f(v: float) -> str:
    return f"{v:.3f}"


def _svg(body, width=_W, height=_H, extra="") -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}"{extra}>\n'
            f'<rect x="0" y="0" width="{width}" height="{height}" style="fill:#ffffff"/>\n'
            + "".join(body) + "</svg>\n")


def bar_chart_svg(title: str, bars, ylabel: str = "", notes=()) -> str:
    """Bars with optional symmetric error bars.

    ``bars`` is a list of ``(label, value, half_width)``; half_width may be
    NaN for no error bar. The root element carries ``data-scale`` (pixels per
    unit) so the error-bar geometry can be checked from the file alone.
    """
    tops = [v + (0 if math.isnan(e) else e) for _, v, e in bars if not math.isnan(v)]
    ymax = max(tops) if tops and max(tops) > 0 else 1.0
    plot_h = _H - _MT - _MB
    scale = plot_h / (ymax * 1.1)
    base = _H - _MB
    n = max(len(bars), 1)
    slot = (_W - _ML - _MR) / n
    body = [f'<text x="{_f(_W / 2)}" y="20" style="font:14px sans-serif;text-anchor:middle">{escape(title)}</text>\n',
            f'<line x1="{_ML}" y1="{base}" x2="{_W - _MR}" y2="{base}" style="stroke:#000"/>\n',
            f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{base}" style="stroke:#000"/>\n',
            f'<text x="15" y="{_f(_MT + plot_h / 2)}" transform="rotate(-90 15 {_f(_MT + plot_h / 2)})" '
            f'style="font:11px sans-serif;text-anchor:middle">{escape(ylabel)}</text>\n']
    for i, (label, v, e) in enumerate(bars):
        cx = _ML + slot * (i + 0.5)
        body.append(f'<text x="{_f(cx)}" y="{base + 16}" style="font:10px sans-serif;text-anchor:middle">'
                    f'{escape(label)}</text>\n')
        if math.isnan(v):
            continue
        h = v * scale
        body.append(f'<rect class="bar" data-label="{escape(label)}" data-value="{fmt_num(v)}" '
                    f'x="{_f(cx - slot * 0.3)}" y="{_f(base - h)}" width="{_f(slot * 0.6)}" height="{_f(h)}" '
                    f'style="fill:#7f7f7f"/>\n')
        if not math.isnan(e):
            y1, y2 = base - (v - e) * scale, base - (v + e) * scale
            body.append(f'<line class="err" data-label="{escape(label)}" data-ci="{fmt_num(e)}" '
                        f'x1="{_f(cx)}" y1="{_f(y1)}" x2="{_f(cx)}" y2="{_f(y2)}" style="stroke:#000"/>\n')
    for k, note in enumerate(notes):
        body.append(f'<text class="note" x="{_W - _MR}" y="{_MT + 12 * k}" '
                    f'style="font:10px sans-serif;text-anchor:end">{escape(note)}</text>\n')
    return _svg(body, extra=f' data-scale="{fmt_num(scale)}" data-baseline="{base}"')


def ripley_strip_svg(title: str, curves) -> str:
    """One row per class combination, one cell per radius, colored by verdict."""
    curves = list(curves)
    n_r = max((c.radii.size for c in curves), default=1)
    row_h, left = 22, 170
    width = left + 6 * n_r + 20
    height = 50 + row_h * max(len(curves), 1) + 30
    cell = 6
    body = [f'<text x="{_f(width / 2)}" y="20" style="font:14px sans-serif;text-anchor:middle">{escape(title)}</text>\n']
    for i, c in enumerate(curves):
        y = 40 + row_h * i
        body.append(f'<text x="{left - 6}" y="{y + 14}" style="font:11px sans-serif;text-anchor:end">'
                    f'{escape(c.label)}</text>\n')
        for j, v in enumerate(c.verdicts):
            if v not in VERDICT_COLOR:
                continue
            body.append(f'<rect class="mark {v}" data-combo="{escape(c.label)}" data-radius-index="{j}" '
                        f'data-radius="{fmt_num(c.radii[j])}" x="{left + cell * j}" y="{y}" width="{cell}" '
                        f'height="{row_h - 4}" style="fill:{VERDICT_COLOR[v]}"/>\n')
    if curves:
        r_max = float(curves[0].radii[-1])
        y = 40 + row_h * len(curves) + 14
        body.append(f'<text x="{left}" y="{y}" style="font:10px sans-serif">0</text>\n')
        body.append(f'<text x="{left + cell * n_r}" y="{y}" style="font:10px sans-serif;text-anchor:end">'
                    f'{r_max:.3g} um</text>\n')
    else:
        body.append('<text class="note" x="10" y="50" style="font:11px sans-serif">no class combination '
                    'had enough defects</text>\n')
    return _svg(body, width, height)
