"""Deterministic SVG emission for overhead trajectory views and line
plots.  Every coordinate goes through one fixed-precision formatter, so
identical inputs give identical bytes; no fonts, gradients or scripts.
"""

import numpy as np

from .errors import InvalidArgument
from .goals import Box, Circle

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#17becf", "#8c564b", "#e377c2")

_GREY = "#888888"
_INK = "#222222"


def fmt(v):
    """Fixed 3-decimal rendering; folds -0.000 into 0.000."""
    s = f"{float(v):.3f}"
    return "0.000" if s == "-0.000" else s


def _points(pts):
    return " ".join(f"{fmt(x)},{fmt(y)}" for x, y in pts)


class _Frame:
    """World (x, z) -> pixel mapping with z pointing up."""

    def __init__(self, lo, hi, size, pad=0.06):
        span = max(hi[0] - lo[0], hi[1] - lo[1], 1e-6)
        margin = span * pad
        self.scale = size / (span + 2 * margin)
        # center the content inside the square viewport on both axes
        self.x0 = lo[0] - margin - (span - (hi[0] - lo[0])) / 2.0
        self.z1 = hi[1] + margin + (span - (hi[1] - lo[1])) / 2.0
        self.size = size

    def map(self, xz):
        x = (xz[0] - self.x0) * self.scale
        y = (self.z1 - xz[1]) * self.scale
        return x, y


def _ground_rows(traj):
    g = traj.ground() if hasattr(traj, "ground") else np.asarray(traj)
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != 2:
        raise InvalidArgument(f"trajectory must map to (2, M), got {g.shape}")
    return g


def _bbox(grounds, keys, obstacles):
    pts = [g for g in grounds]
    if keys is not None and len(keys):
        pts.append(keys.locations.T)
    box = np.concatenate(pts, axis=1) if pts else np.zeros((2, 1))
    lo = box.min(axis=1)
    hi = box.max(axis=1)
    for ob in obstacles or ():
        if isinstance(ob, Circle):
            c, r = np.asarray(ob.center), ob.radius
            lo = np.minimum(lo, c - r)
            hi = np.maximum(hi, c + r)
        elif isinstance(ob, Box):
            lo = np.minimum(lo, ob.lo)
            hi = np.maximum(hi, ob.hi)
        else:
            raise InvalidArgument(f"cannot draw obstacle {type(ob).__name__}")
    return lo, hi


def _draw_obstacle(out, fr, ob):
    if isinstance(ob, Circle):
        cx, cy = fr.map(ob.center)
        r = ob.radius * fr.scale
        out.append(f'<circle cx="{fmt(cx)}" cy="{fmt(cy)}" r="{fmt(r)}" '
                   f'fill="#f2d4d4" stroke="{_GREY}" stroke-width="1"/>')
        d = r / np.sqrt(2.0)
        for sx in (1.0, -1.0):
            out.append(f'<line x1="{fmt(cx - d)}" y1="{fmt(cy - sx * d)}" '
                       f'x2="{fmt(cx + d)}" y2="{fmt(cy + sx * d)}" '
                       f'stroke="{_GREY}" stroke-width="1"/>')
    else:
        x0, y1 = fr.map(ob.lo)
        x1, y0 = fr.map(ob.hi)
        w, h = x1 - x0, y1 - y0
        out.append(f'<rect x="{fmt(x0)}" y="{fmt(y0)}" width="{fmt(w)}" '
                   f'height="{fmt(h)}" fill="#f2d4d4" stroke="{_GREY}" '
                   f'stroke-width="1"/>')
        out.append(f'<line x1="{fmt(x0)}" y1="{fmt(y0)}" x2="{fmt(x1)}" '
                   f'y2="{fmt(y1)}" stroke="{_GREY}" stroke-width="1"/>')
        out.append(f'<line x1="{fmt(x0)}" y1="{fmt(y1)}" x2="{fmt(x1)}" '
                   f'y2="{fmt(y0)}" stroke="{_GREY}" stroke-width="1"/>')


def overhead_plot(trajectories, keys=None, obstacles=None, size=480,
                  title=None):
    """Top-down view: one polyline per trajectory, keyframes as double
    circles, obstacles as crossed regions.  Returns the SVG text."""
    grounds = [_ground_rows(t) for t in trajectories]
    if not grounds and (keys is None or not len(keys)):
        raise InvalidArgument("nothing to draw")
    fr = _Frame(*_bbox(grounds, keys, obstacles), size=size)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
           f'height="{size}" viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="#ffffff"/>']
    for ob in obstacles or ():
        _draw_obstacle(out, fr, ob)
    for i, g in enumerate(grounds):
        color = PALETTE[i % len(PALETTE)]
        pts = [fr.map(g[:, j]) for j in range(g.shape[1])]
        out.append(f'<polyline points="{_points(pts)}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        sx, sy = pts[0]
        out.append(f'<circle cx="{fmt(sx)}" cy="{fmt(sy)}" r="3" '
                   f'fill="{color}"/>')  # start marker
    if keys is not None:
        for loc in keys.locations:
            kx, ky = fr.map(loc)
            out.append(f'<circle cx="{fmt(kx)}" cy="{fmt(ky)}" r="7" '
                       f'fill="none" stroke="{_INK}" stroke-width="1.5"/>')
            out.append(f'<circle cx="{fmt(kx)}" cy="{fmt(ky)}" r="2.5" '
                       f'fill="{_INK}"/>')
    if title:
        out.append(f'<text x="10" y="18" font-family="monospace" '
                   f'font-size="13" fill="{_INK}">{title}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_plot(x, series, size=(560, 360), title=None):
    """Simple axes + one polyline per (label, ys) pair, legend in draw
    order.  Returns the SVG text."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise InvalidArgument("x must be 1-D with at least 2 points")
    if not series:
        raise InvalidArgument("no series to plot")
    ys = []
    for label, y in series:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != x.shape:
            raise InvalidArgument(
                f"series {label!r} has shape {y.shape}, x has {x.shape}")
        ys.append((label, y))

    w, h = size
    ml, mr, mt, mb = 52, 14, 28, 34
    all_y = np.concatenate([y for _, y in ys])
    ylo, yhi = float(all_y.min()), float(all_y.max())
    if yhi - ylo < 1e-12:
        yhi = ylo + 1.0
    xlo, xhi = float(x[0]), float(x[-1])

    def px(v):
        return ml + (v - xlo) / (xhi - xlo) * (w - ml - mr)

    def py(v):
        return h - mb - (v - ylo) / (yhi - ylo) * (h - mt - mb)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" '
           f'height="{h}" viewBox="0 0 {w} {h}">',
           f'<rect width="{w}" height="{h}" fill="#ffffff"/>',
           f'<line x1="{ml}" y1="{h - mb}" x2="{w - mr}" y2="{h - mb}" '
           f'stroke="{_INK}" stroke-width="1"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h - mb}" '
           f'stroke="{_INK}" stroke-width="1"/>']
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        xv = xlo + frac * (xhi - xlo)
        yv = ylo + frac * (yhi - ylo)
        out.append(f'<text x="{fmt(px(xv))}" y="{h - mb + 16}" '
                   f'font-family="monospace" font-size="10" fill="{_INK}" '
                   f'text-anchor="middle">{fmt(xv)}</text>')
        out.append(f'<text x="{ml - 6}" y="{fmt(py(yv) + 3)}" '
                   f'font-family="monospace" font-size="10" fill="{_INK}" '
                   f'text-anchor="end">{fmt(yv)}</text>')
    for i, (label, y) in enumerate(ys):
        color = PALETTE[i % len(PALETTE)]
        pts = [(px(xv), py(yv)) for xv, yv in zip(x, y)]
        out.append(f'<polyline points="{_points(pts)}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 * i
        out.append(f'<line x1="{w - mr - 120}" y1="{ly}" '
                   f'x2="{w - mr - 100}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{w - mr - 94}" y="{ly + 4}" '
                   f'font-family="monospace" font-size="11" '
                   f'fill="{_INK}">{label}</text>')
    if title:
        out.append(f'<text x="{ml}" y="16" font-family="monospace" '
                   f'font-size="13" fill="{_INK}">{title}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
