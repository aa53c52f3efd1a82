"""Byte-stable JSON, CSV and SVG artifacts.

Floats are written as the shortest decimal string that round-trips
(``repr``), fields keep a fixed order, and nothing depends on the clock or
the environment, so identical inputs give identical files.
"""

from __future__ import annotations

import io
import json
import math
import sys
from xml.sax.saxutils import escape

import numpy as np

__all__ = [
    "OutputError",
    "to_plain",
    "format_value",
    "json_text",
    "jsonl_text",
    "csv_text",
    "emit",
    "portrait_svg",
    "SVG_LAYERS",
]

SVG_LAYERS = ("portrait", "crit1", "crit2", "maximal_line", "global", "separatrix")


class OutputError(OSError):
    """Writing an artifact failed; the message names the path."""


def to_plain(obj):
    """Convert numpy scalars/arrays, tuples and dataclass-like dicts to
    plain JSON types, keeping key order."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def format_value(x) -> str:
    """One CSV field: shortest round-trip float, plain int/str, 0/1 bools."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def json_text(obj) -> str:
    """Indented JSON; non-finite floats use the ``Infinity``/``NaN`` tokens
    that Python's parser reads back."""
    return json.dumps(to_plain(obj), indent=2, ensure_ascii=False) + "\n"


def jsonl_text(objs) -> str:
    """One compact JSON object per line."""
    return "".join(json.dumps(to_plain(o), ensure_ascii=False) + "\n" for o in objs)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(format_value(x) for x in row) + "\n")
    return buf.getvalue()


def emit(text: str, path=None) -> None:
    """Write ``text`` to ``path``, or to standard output when ``path`` is
    ``None`` or ``"-"``."""
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_COLORS = {"Collapse": "#d9534f", "Dispersion": "#5b8fd6", "Undecided": "#bbbbbb"}
_STROKES = {"crit1": "#000000", "crit2": "#7a3e9d", "maximal_line": "#2e8b57",
            "global": "#e69f00", "separatrix": "#ffffff"}
_SIZE, _PAD = 600, 50


def _num(x: float) -> str:
    return repr(round(float(x), 2))


def portrait_svg(portrait) -> str:
    """SVG 1.1 rendering of a phase portrait.

    One ``<g>`` per layer with the ids in :data:`SVG_LAYERS`, in that
    order.  Cells are merged into horizontal runs of equal class; overlay
    curves are clipped to the plotted square.
    """
    u, v = portrait.u, portrait.v
    du = u[1] - u[0] if u.size > 1 else u[0]
    dv = v[1] - v[0] if v.size > 1 else v[0]
    u_lo, v_lo = u[0] - du, v[0] - dv
    u_hi, v_hi = u[-1], v[-1]
    sx = _SIZE / (u_hi - u_lo)
    sy = _SIZE / (v_hi - v_lo)

    def px(uu):
        return _PAD + (uu - u_lo) * sx

    def py(vv):
        return _PAD + _SIZE - (vv - v_lo) * sy

    total = _SIZE + 2 * _PAD
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{total}" '
        f'height="{total}" viewBox="0 0 {total} {total}">',
        '<title>Collapse and dispersion basins in the gap plane</title>',
        '<defs><clipPath id="plot"><rect x="{0}" y="{0}" width="{1}" height="{1}"/>'
        '</clipPath></defs>'.format(_PAD, _SIZE),
    ]

    out.append('<g id="portrait">')
    for j in range(v.size):
        row = portrait.classes[j]
        i = 0
        while i < u.size:
            k = i
            while k + 1 < u.size and row[k + 1] == row[i]:
                k += 1
            x0, x1 = px(u[i] - du), px(u[k])
            y0, y1 = py(v[j]), py(v[j] - dv)
            out.append(f'<rect x="{_num(x0)}" y="{_num(y0)}" width="{_num(x1 - x0)}" '
                       f'height="{_num(y1 - y0)}" fill="{_COLORS[str(row[i])]}"/>')
            i = k + 1
    out.append("</g>")

    for layer in SVG_LAYERS[1:]:
        pts = portrait.overlays.get(layer)
        out.append(f'<g id="{layer}" clip-path="url(#plot)" fill="none" '
                   f'stroke="{_STROKES[layer]}" stroke-width="2">')
        if pts is not None and len(pts) > 1:
            coords = " ".join(f"{_num(px(a))},{_num(py(b))}" for a, b in pts)
            out.append(f'<polyline points="{coords}"/>')
        out.append("</g>")

    out.append('<g id="axes" stroke="#000000" fill="#000000" font-size="14" '
               'font-family="sans-serif">')
    out.append(f'<rect x="{_PAD}" y="{_PAD}" width="{_SIZE}" height="{_SIZE}" fill="none"/>')
    out.append(f'<text x="{_PAD + _SIZE / 2}" y="{total - 12}" text-anchor="middle" '
               f'stroke="none">u = {escape(_num(u_lo))} … {escape(_num(u_hi))}</text>')
    out.append(f'<text x="14" y="{_PAD + _SIZE / 2}" text-anchor="middle" stroke="none" '
               f'transform="rotate(-90 14 {_PAD + _SIZE / 2})">'
               f'v = {escape(_num(v_lo))} … {escape(_num(v_hi))}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
