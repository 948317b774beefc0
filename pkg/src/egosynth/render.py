"""Top-down SVG plots of court-projected camera trajectories."""

from xml.sax.saxutils import escape

import numpy as np

from . import geometry as geo

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")
SCALE = 40.0  # pixels per meter
MARGIN = 20.0


def _xy(point, court_length):
    # baseline at the bottom of the image
    x, y = point
    return MARGIN + SCALE * x, MARGIN + SCALE * (court_length - y)


def _court(params):
    w, L = params.court_width, params.court_length
    bx, by = _xy(params.basket[:2], L)
    ox, oy = _xy((0.0, L), L)
    parts = [
        f'<rect class="court" x="{ox:.2f}" y="{oy:.2f}" width="{SCALE * w:.2f}" height="{SCALE * L:.2f}" '
        'fill="#f7f1e3" stroke="#333" stroke-width="2"/>',
        f'<circle class="basket" cx="{bx:.2f}" cy="{by:.2f}" r="{0.23 * SCALE:.2f}" fill="none" stroke="#e67e22" stroke-width="3"/>',
    ]
    return parts


def render_svg(sequences, params, scatter=False, title=None):
    """SVG document for ``sequences`` drawn over the half court in ``params``.

    Trajectory mode draws one polyline per sequence with distinct start/end
    markers.  Scatter mode plots only first (blue) and last (yellow) camera
    centers of every sequence.
    """
    L = params.court_length
    width = 2 * MARGIN + SCALE * params.court_width
    height = 2 * MARGIN + SCALE * L
    body = _court(params)
    if title:
        body.append(f'<title>{escape(title)}</title>')

    if scatter:
        starts, ends = [], []
        for seq in sequences:
            sx, sy = _xy(geo.court_projection(seq.configs[0]), L)
            ex, ey = _xy(geo.court_projection(seq.configs[-1]), L)
            starts.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="2.5"/>')
            ends.append(f'<circle cx="{ex:.2f}" cy="{ey:.2f}" r="2.5"/>')
        body.append('<g class="start" fill="#1f5fd6" fill-opacity="0.7">' + "".join(starts) + "</g>")
        body.append('<g class="end" fill="#f2c200" fill-opacity="0.8">' + "".join(ends) + "</g>")
    else:
        for i, seq in enumerate(sequences):
            color = PALETTE[i % len(PALETTE)]
            pts = np.array([_xy(geo.court_projection(c), L) for c in seq.configs])
            cls = f"seq seq-{i}"
            group = [f'<g class="{cls}" data-id="{escape(seq.id)}">']
            if np.allclose(pts, pts[0]):
                group.append(f'<circle class="point" cx="{pts[0, 0]:.2f}" cy="{pts[0, 1]:.2f}" r="5" fill="{color}"/>')
            else:
                coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
                group.append(
                    f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2" stroke-linejoin="round"/>'
                )
                group.append(
                    f'<circle class="start" cx="{pts[0, 0]:.2f}" cy="{pts[0, 1]:.2f}" r="5" fill="white" stroke="{color}" stroke-width="2"/>'
                )
                group.append(
                    f'<rect class="end" x="{pts[-1, 0] - 4:.2f}" y="{pts[-1, 1] - 4:.2f}" width="8" height="8" fill="{color}"/>'
                )
            group.append("</g>")
            body.append("".join(group))

    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.2f} {height:.2f}">'
    )
    return "\n".join([head] + body + ["</svg>"]) + "\n"
