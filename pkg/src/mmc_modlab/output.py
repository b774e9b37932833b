"""Deterministic CSV, SVG and run-manifest writers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

SIG_DIGITS = 9
SVG_WIDTH = 800
SVG_HEIGHT = 600


def format_value(value: Any) -> str:
    """Fixed formatting: floats to 9 significant digits, booleans as 0/1."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if v == 0.0:
            return "0"
        return f"{v:.{SIG_DIGITS}g}"
    text = str(value)
    if any(c in text for c in ',"\n'):
        text = '"' + text.replace('"', '""').replace("\n", " ") + '"'
    return text


def csv_text(columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    lines = [",".join(columns)]
    lines.extend(",".join(format_value(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def records_csv(records: Sequence[Mapping[str, Any]], columns: Sequence[str] | None = None) -> str:
    if columns is None:
        columns = list(records[0]) if records else []
    return csv_text(columns, [[r[c] for c in columns] for r in records])


def table_csv(table: Mapping[str, np.ndarray]) -> str:
    columns = list(table)
    data = [np.asarray(table[c]) for c in columns]
    return csv_text(columns, list(zip(*(d.tolist() for d in data))))


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)
    return path


# ---------------------------------------------------------------- SVG


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_lines(series: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str = "") -> str:
    """Polyline chart of named (x, y) series in a fixed 800x600 viewport."""
    pad = 50
    xs = [float(v) for x, _ in series.values() for v in x if math.isfinite(v)]
    ys = [float(v) for _, y in series.values() for v in y if math.isfinite(v)]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (SVG_WIDTH - 2 * pad)

    def py(y):
        return SVG_HEIGHT - pad - (y - y0) / (y1 - y0) * (SVG_HEIGHT - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect x="{pad}" y="{pad}" width="{SVG_WIDTH - 2 * pad}" height="{SVG_HEIGHT - 2 * pad}" '
        'fill="none" stroke="#888"/>',
        f'<text x="{pad}" y="30" font-size="16">{title}</text>',
        f'<text x="{pad}" y="{SVG_HEIGHT - 20}" font-size="12">x: {x0:.4g} .. {x1:.4g}   y: {y0:.4g} .. {y1:.4g}</text>',
    ]
    for idx, (name, (x, y)) in enumerate(series.items()):
        colour = _PALETTE[idx % len(_PALETTE)]
        pts = " ".join(
            f"{px(float(a)):.2f},{py(float(b)):.2f}" for a, b in zip(x, y) if math.isfinite(a) and math.isfinite(b)
        )
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{SVG_WIDTH - 200}" y="{70 + 18 * idx}" font-size="12" fill="{colour}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    command: str
    parameters: dict
    version: str
    settings: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "command": self.command,
                "parameters": self.parameters,
                "version": self.version,
                "settings": self.settings,
                "outputs": self.outputs,
                "wall_clock_s": round(self.wall_clock_s, 3),
            },
            indent=2,
            sort_keys=True,
        ) + "\n"
