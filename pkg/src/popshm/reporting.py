"""Run manifests, atomic file output, CSV writers and the dependency-free
SVG scatter emitter used by the command-line front end."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


def write_atomic(path: str | Path, text: str) -> None:
    """Write via a sibling temp file and rename, so concurrent runs never
    interleave partial artifacts."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_of_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def sha256_of_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """Reproducibility record: one per command invocation."""

    command: str
    config_digest: str
    seed: int
    version: str = __version__
    outputs: list[str] = field(default_factory=list)
    wall_time_s: float = 0.0

    def write(self, path: str | Path) -> None:
        doc = {
            "command": self.command,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "version": self.version,
            "outputs": sorted(self.outputs),
            "wall_time_s": round(self.wall_time_s, 3),
        }
        write_atomic(path, json.dumps(doc, indent=2) + "\n")


class StopWatch:
    def __init__(self):
        self.start = time.monotonic()

    def elapsed(self) -> float:
        return time.monotonic() - self.start


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            repr(v) if isinstance(v, float) else str(v) for v in row))
    write_atomic(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# SVG scatter
# ---------------------------------------------------------------------------

_PALETTE = ("#348ABD", "#E24A33", "#8EBA42", "#988ED5", "#FBC15E",
            "#777777", "#56B4E9", "#D55E00")

_WIDTH, _HEIGHT, _MARGIN = 640, 480, 56


def _scale(values, lo, hi, out_lo, out_hi):
    if hi == lo:
        return [(out_lo + out_hi) / 2.0 for _ in values]
    return [out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo) for v in values]


def svg_scatter(series, path: str | Path, *, title: str = "",
                x_label: str = "feature 1", y_label: str = "feature 2") -> None:
    """Emit a deterministic SVG scatter plot.

    ``series`` is a list of (xs, ys, label, marker) with marker 'circle'
    (e.g. source training data) or 'cross' (e.g. mapped target data);
    colours key off the label.
    """
    all_x = [float(v) for xs, _, _, _ in series for v in xs]
    all_y = [float(v) for _, ys, _, _ in series for v in ys]
    if not all_x:
        all_x, all_y = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    labels = []
    for _, _, label, _ in series:
        if label not in labels:
            labels.append(label)
    colour = {label: _PALETTE[i % len(_PALETTE)] for i, label in enumerate(labels)}

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        # axes
        f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<text x="{_WIDTH / 2}" y="{_HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>',
        f'<text x="16" y="{_HEIGHT / 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_HEIGHT / 2})">{y_label}</text>',
        f'<text x="{_MARGIN}" y="{_HEIGHT - _MARGIN + 16}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="10">{x_lo:.4g}</text>',
        f'<text x="{_WIDTH - _MARGIN}" y="{_HEIGHT - _MARGIN + 16}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="10">{x_hi:.4g}</text>',
        f'<text x="{_MARGIN - 6}" y="{_HEIGHT - _MARGIN}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_lo:.4g}</text>',
        f'<text x="{_MARGIN - 6}" y="{_MARGIN + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_hi:.4g}</text>',
    ]
    for xs, ys, label, marker in series:
        px = _scale([float(v) for v in xs], x_lo, x_hi, _MARGIN, _WIDTH - _MARGIN)
        py = _scale([float(v) for v in ys], y_lo, y_hi, _HEIGHT - _MARGIN, _MARGIN)
        c = colour[label]
        for x, y in zip(px, py):
            if marker == "cross":
                parts.append(
                    f'<path d="M {x - 3:.2f} {y - 3:.2f} L {x + 3:.2f} {y + 3:.2f} '
                    f'M {x - 3:.2f} {y + 3:.2f} L {x + 3:.2f} {y - 3:.2f}" '
                    f'stroke="{c}" stroke-width="1.2"/>')
            else:
                parts.append(
                    f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{c}" '
                    f'fill-opacity="0.7"/>')
    # legend
    for i, label in enumerate(labels):
        y = _MARGIN + 16 * i
        parts.append(
            f'<circle cx="{_WIDTH - _MARGIN + 12}" cy="{y}" r="4" '
            f'fill="{colour[label]}"/>')
        parts.append(
            f'<text x="{_WIDTH - _MARGIN + 20}" y="{y + 4}" '
            f'font-family="sans-serif" font-size="10">{label}</text>')
    parts.append("</svg>")
    write_atomic(path, "\n".join(parts) + "\n")
