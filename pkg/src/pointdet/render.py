"""Bird's-eye-view SVG rendering of a frame with ground-truth and predicted boxes."""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

from .geometry import Box3D, box_corners_bev
from .pointcloud import PointCloud

GT_STYLE = 'fill="none" stroke="#1a9850" stroke-width="1.5"'
PRED_STYLE = 'fill="none" stroke="#2166ac" stroke-width="1.2" stroke-dasharray="4 2"'


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def render_bev_svg(
    pc: Optional[PointCloud],
    gt_boxes: Sequence[Box3D] = (),
    pred_boxes: Sequence[Box3D] = (),
    extent: Tuple[float, float, float, float] = (-55.0, 55.0, -55.0, 55.0),
    px_per_m: float = 8.0,
) -> str:
    """Render points and boxes seen from above; +X points right, +Y up.

    Each box gets a tick from its center to the middle of its front edge.
    """
    xmin, xmax, ymin, ymax = extent
    margin = 20.0
    width = (xmax - xmin) * px_per_m + 2 * margin
    height = (ymax - ymin) * px_per_m + 2 * margin

    def tx(x):
        return (x - xmin) * px_per_m + margin

    def ty(y):
        return (ymax - y) * px_per_m + margin

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f'<rect x="0" y="0" width="{_fmt(width)}" height="{_fmt(height)}" fill="white"/>',
        '<g id="axes" stroke="#999999" stroke-width="0.8">',
        f'<line x1="{_fmt(tx(xmin))}" y1="{_fmt(ty(0))}" x2="{_fmt(tx(xmax))}" y2="{_fmt(ty(0))}"/>',
        f'<line x1="{_fmt(tx(0))}" y1="{_fmt(ty(ymin))}" x2="{_fmt(tx(0))}" y2="{_fmt(ty(ymax))}"/>',
        '</g>',
        f'<text x="{_fmt(tx(xmax) - 12)}" y="{_fmt(ty(0) - 4)}" font-size="10" fill="#666666">x</text>',
        f'<text x="{_fmt(tx(0) + 4)}" y="{_fmt(ty(ymax) + 10)}" font-size="10" fill="#666666">y</text>',
    ]
    if pc is not None and pc.count:
        xs, ys = pc.x, pc.y
        keep = (xs >= xmin) & (xs <= xmax) & (ys >= ymin) & (ys <= ymax)
        cmds = " ".join(f"M{_fmt(tx(x))} {_fmt(ty(y))}h0" for x, y in zip(xs[keep], ys[keep]))
        out.append(f'<path id="points" d="{cmds}" stroke="#444444" stroke-width="1.2" '
                   'stroke-linecap="round"/>')
    for name, boxes, style in (("gt", gt_boxes, GT_STYLE), ("pred", pred_boxes, PRED_STYLE)):
        out.append(f'<g id="{name}">')
        for b in boxes:
            pts = " ".join(f"{_fmt(tx(x))},{_fmt(ty(y))}" for x, y in box_corners_bev(b))
            fx = b.cx + 0.5 * b.l * math.cos(b.yaw)
            fy = b.cy + 0.5 * b.l * math.sin(b.yaw)
            out.append(f'<polygon points="{pts}" {style}/>')
            out.append(f'<line class="heading" x1="{_fmt(tx(b.cx))}" y1="{_fmt(ty(b.cy))}" '
                       f'x2="{_fmt(tx(fx))}" y2="{_fmt(ty(fy))}" {style}/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
