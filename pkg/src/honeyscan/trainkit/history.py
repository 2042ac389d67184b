"""Training-history CSV and a dependency-free SVG accuracy/loss chart."""

from __future__ import annotations

import csv
from dataclasses import astuple, fields
from pathlib import Path
from xml.sax.saxutils import escape

from honeyscan.trainkit.train import EpochRecord, TrainHistory

COLUMNS = [f.name for f in fields(EpochRecord)]


def format_history_csv(history: TrainHistory) -> str:
    lines = [",".join(COLUMNS)]
    for row in history.rows:
        values = astuple(row)
        lines.append(",".join([str(values[0])] + [f"{v:.6f}" for v in values[1:]]))
    return "\n".join(lines) + "\n"


def read_history_csv(path: str | Path) -> TrainHistory:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(COLUMNS)}, got {reader.fieldnames}")
        rows = [
            EpochRecord(int(r["epoch"]), *(float(r[c]) for c in COLUMNS[1:]))
            for r in reader
        ]
    return TrainHistory(rows)


# chart geometry
_W, _H = 900, 360
_PANEL_W, _PANEL_H = 360, 250
_LEFT, _TOP = 70, 50
_GAP = 90
_TRAIN_COLOR, _VAL_COLOR = "#1f77b4", "#d62728"


def _panel(x0: float, title: str, ylabel: str, train: list[float], val: list[float], epochs: list[int]) -> list[str]:
    lo = min(min(train), min(val))
    hi = max(max(train), max(val))
    if ylabel == "accuracy":
        lo, hi = min(lo, 0.0), max(hi, 1.0)
    if hi - lo < 1e-12:
        hi = lo + 1.0
    first, last = epochs[0], epochs[-1]
    span = max(last - first, 1)

    def point(e: int, v: float) -> str:
        px = x0 + (e - first) / span * _PANEL_W
        py = _TOP + _PANEL_H - (v - lo) / (hi - lo) * _PANEL_H
        return f"{px:.2f},{py:.2f}"

    out = [
        f'<g class="panel" id="{ylabel}">',
        f'<text x="{x0 + _PANEL_W / 2:.1f}" y="{_TOP - 20}" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<rect x="{x0}" y="{_TOP}" width="{_PANEL_W}" height="{_PANEL_H}" fill="none" stroke="#444"/>',
        f'<text x="{x0 + _PANEL_W / 2:.1f}" y="{_TOP + _PANEL_H + 35}" text-anchor="middle" font-size="12">epoch</text>',
        f'<text x="{x0 - 50}" y="{_TOP + _PANEL_H / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 {x0 - 50} {_TOP + _PANEL_H / 2:.1f})">{ylabel}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        value = lo + frac * (hi - lo)
        y = _TOP + _PANEL_H - frac * _PANEL_H
        out.append(f'<text x="{x0 - 6}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{value:.3g}</text>')
    for e in sorted({first, last}):
        x = x0 + (e - first) / span * _PANEL_W
        out.append(f'<text x="{x:.1f}" y="{_TOP + _PANEL_H + 15}" text-anchor="middle" font-size="10">{e}</text>')
    for name, series, color in (("train", train, _TRAIN_COLOR), ("val", val, _VAL_COLOR)):
        pts = " ".join(point(e, v) for e, v in zip(epochs, series))
        out.append(f'<polyline class="{name}" fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
    out.append("</g>")
    return out


def render_history_svg(history: TrainHistory) -> str:
    if not history.rows:
        raise ValueError("cannot plot an empty history")
    epochs = [r.epoch for r in history.rows]
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    parts += _panel(_LEFT, "Accuracy", "accuracy", [r.train_acc for r in history.rows],
                    [r.val_acc for r in history.rows], epochs)
    parts += _panel(_LEFT + _PANEL_W + _GAP, "Loss", "loss", [r.train_loss for r in history.rows],
                    [r.val_loss for r in history.rows], epochs)
    # legend uses <line>, so the only polylines are the four data series
    lx, ly = _W - 150, _H - 20
    for i, (name, color) in enumerate((("train", _TRAIN_COLOR), ("validation", _VAL_COLOR))):
        x = lx + i * 75
        parts.append(f'<line x1="{x}" y1="{ly}" x2="{x + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{x + 24}" y="{ly + 4}" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def export_history(history: TrainHistory, csv_path: str | Path | None, svg_path: str | Path | None) -> None:
    """Write the history as CSV and/or as the two-panel SVG chart."""
    if not history.rows:
        raise ValueError("cannot export an empty history")
    if csv_path is not None:
        Path(csv_path).write_text(format_history_csv(history), encoding="utf-8")
    if svg_path is not None:
        Path(svg_path).write_text(render_history_svg(history), encoding="utf-8")
