"""Deterministic SVG overlays: side-by-side image panels with match lines,
detection boxes (red), and ground-truth boxes (green)."""

from __future__ import annotations

PANEL_GAP = 16.0
MARGIN = 8.0


def _fmt(v: float) -> str:
    return f"{float(v):.2f}"


def emit_overlay_svg(left_size, right_size, match_lines=(), detections=(),
                     ground_truth=()) -> str:
    """Build an SVG document for one image pair.

    left_size/right_size: (width, height) of the two panels.  match_lines:
    ((x, y) in left, (x, y) in right) pairs.  detections/ground_truth: boxes
    (x0, y0, x1, y1) drawn on the left panel.  Exactly one <line> element is
    emitted per match.
    """
    lw, lh = float(left_size[0]), float(left_size[1])
    rw, rh = float(right_size[0]), float(right_size[1])
    ox = lw + PANEL_GAP  # x offset of the right panel
    width = lw + PANEL_GAP + rw + 2 * MARGIN
    height = max(lh, rh) + 2 * MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="{_fmt(-MARGIN)} {_fmt(-MARGIN)} '
        f'{_fmt(width)} {_fmt(height)}">',
        f'<rect class="panel" x="0" y="0" width="{_fmt(lw)}" height="{_fmt(lh)}" '
        'fill="none" stroke="#888"/>',
        f'<rect class="panel" x="{_fmt(ox)}" y="0" width="{_fmt(rw)}" height="{_fmt(rh)}" '
        'fill="none" stroke="#888"/>',
    ]
    for (sx, sy), (tx, ty) in match_lines:
        parts.append(
            f'<line x1="{_fmt(sx)}" y1="{_fmt(sy)}" x2="{_fmt(tx + ox)}" y2="{_fmt(ty)}" '
            'stroke="#2a6fd6" stroke-width="0.8"/>'
        )
    for x0, y0, x1, y1 in ground_truth:
        parts.append(
            f'<rect class="gt" x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" '
            f'height="{_fmt(y1 - y0)}" fill="none" stroke="#1f9d3a" stroke-width="1.2"/>'
        )
    for x0, y0, x1, y1 in detections:
        parts.append(
            f'<rect class="det" x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" '
            f'height="{_fmt(y1 - y0)}" fill="none" stroke="#d62a2a" stroke-width="1.2"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
