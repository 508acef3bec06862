"""Surface primitives used by the procedural object generators.

Each primitive offers area-weighted random sampling (for the physics point
set) and a deterministic parametric grid (for rendering, where every 4 mm
image cell must be covered).
"""
from __future__ import annotations

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _ring(radius, z, spacing, phase=0.0):
    n = max(1, int(np.ceil(2 * np.pi * radius / spacing)))
    phi = phase + 2 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(phi), radius * np.sin(phi), np.full(n, z)], axis=1)


class Disk:
    """Horizontal annulus r_in <= r <= r_out at height z."""

    def __init__(self, r_out, z, r_in=0.0):
        self.r_out, self.z, self.r_in = r_out, z, r_in

    def area(self):
        return np.pi * (self.r_out ** 2 - self.r_in ** 2)

    def sample(self, rng, n):
        r = np.sqrt(rng.uniform(self.r_in ** 2, self.r_out ** 2, n))
        phi = rng.uniform(0, 2 * np.pi, n)
        return np.stack([r * np.cos(phi), r * np.sin(phi), np.full(n, self.z)], axis=1)

    def grid(self, spacing):
        pts = [] if self.r_in > 0 else [np.array([[0.0, 0.0, self.z]])]
        n_rings = max(1, int(np.ceil((self.r_out - self.r_in) / spacing)))
        for i in range(n_rings + 1):
            r = self.r_in + (self.r_out - self.r_in) * i / n_rings
            if r > 0:
                pts.append(_ring(r, self.z, spacing, phase=0.5 * i))
        return np.concatenate(pts)


class Frustum:
    """Lateral surface of a truncated cone (a cylinder when r0 == r1)."""

    def __init__(self, r0, r1, z0, z1):
        self.r0, self.r1, self.z0, self.z1 = r0, r1, z0, z1

    def slant(self):
        return np.hypot(self.r1 - self.r0, self.z1 - self.z0)

    def area(self):
        return np.pi * (self.r0 + self.r1) * self.slant()

    def sample(self, rng, n):
        a, b = self.r0, self.r1 - self.r0
        v = rng.uniform(0, 1, n) * (a + 0.5 * b)
        if abs(b) < 1e-12:
            u = v / a
        else:
            u = (-a + np.sqrt(a * a + 2 * b * v)) / b
        r = a + b * u
        z = self.z0 + (self.z1 - self.z0) * u
        phi = rng.uniform(0, 2 * np.pi, n)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)

    def grid(self, spacing):
        n = max(1, int(np.ceil(self.slant() / spacing)))
        rows = []
        for i in range(n + 1):
            u = i / n
            rows.append(_ring(self.r0 + (self.r1 - self.r0) * u,
                              self.z0 + (self.z1 - self.z0) * u, spacing, phase=0.5 * i))
        return np.concatenate(rows)


class Rect:
    """Planar rectangle origin + s*e1 + t*e2, s, t in [0, 1]."""

    def __init__(self, origin, e1, e2):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.e1 = np.asarray(e1, dtype=np.float64)
        self.e2 = np.asarray(e2, dtype=np.float64)

    def area(self):
        return float(np.linalg.norm(np.cross(self.e1, self.e2)))

    def sample(self, rng, n):
        s = rng.uniform(0, 1, (n, 1))
        t = rng.uniform(0, 1, (n, 1))
        return self.origin + s * self.e1 + t * self.e2

    def grid(self, spacing):
        n1 = max(1, int(np.ceil(np.linalg.norm(self.e1) / spacing)))
        n2 = max(1, int(np.ceil(np.linalg.norm(self.e2) / spacing)))
        s, t = np.meshgrid(np.linspace(0, 1, n1 + 1), np.linspace(0, 1, n2 + 1), indexing="ij")
        return self.origin + s.reshape(-1, 1) * self.e1 + t.reshape(-1, 1) * self.e2


def box_faces(lo, hi):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    dx, dy, dz = hi - lo
    ex, ey, ez = np.array([dx, 0, 0]), np.array([0, dy, 0]), np.array([0, 0, dz])
    return [
        Rect(lo, ex, ey), Rect(lo + ez, ex, ey),
        Rect(lo, ex, ez), Rect(lo + ey, ex, ez),
        Rect(lo, ey, ez), Rect(lo + ex, ey, ez),
    ]


class SpheroidZone:
    """Spheroid x^2/a^2 + y^2/a^2 + z^2/c^2 = 1 restricted to polar angle [t0, t1]."""

    def __init__(self, a, c, t0=0.0, t1=np.pi / 2):
        self.a, self.c, self.t0, self.t1 = a, c, t0, t1

    def _density(self, t):
        return self.a * np.sin(t) * np.sqrt((self.a * np.cos(t)) ** 2 + (self.c * np.sin(t)) ** 2)

    def area(self):
        t = np.linspace(self.t0, self.t1, 2001)
        return float(2 * np.pi * _trapezoid(self._density(t), t))

    def _points(self, t, phi):
        return np.stack([self.a * np.sin(t) * np.cos(phi), self.a * np.sin(t) * np.sin(phi),
                         self.c * np.cos(t)], axis=1)

    def sample(self, rng, n):
        t_grid = np.linspace(self.t0, self.t1, 512)
        dmax = self._density(t_grid).max() * 1.05
        out = []
        while sum(len(o) for o in out) < n:
            t = rng.uniform(self.t0, self.t1, 2 * n + 16)
            keep = rng.uniform(0, dmax, t.shape[0]) < self._density(t)
            out.append(t[keep])
        t = np.concatenate(out)[:n]
        return self._points(t, rng.uniform(0, 2 * np.pi, n))

    def grid(self, spacing):
        t_fine = np.linspace(self.t0, self.t1, 4001)
        step = np.hypot(self.a * np.cos(t_fine), self.c * np.sin(t_fine))
        arc = np.concatenate([[0.0], np.cumsum(0.5 * (step[1:] + step[:-1]) * np.diff(t_fine))])
        n = max(1, int(np.ceil(arc[-1] / spacing)))
        ts = np.interp(np.linspace(0, arc[-1], n + 1), arc, t_fine)
        rows = []
        for i, t in enumerate(ts):
            ring = _ring(max(self.a * np.sin(t), 1e-9), self.c * np.cos(t), spacing, phase=0.5 * i)
            rows.append(ring)
        return np.concatenate(rows)


def sample_surface(parts, n, rng):
    """Area-weighted sampling over labeled primitives ``[(prim, label), ...]``."""
    areas = np.array([p.area() for p, _ in parts])
    counts = rng.multinomial(n, areas / areas.sum())
    pts, labels = [], []
    for (prim, label), c in zip(parts, counts):
        if c:
            pts.append(prim.sample(rng, int(c)))
            labels.append(np.full(int(c), int(label)))
    return np.concatenate(pts), np.concatenate(labels)


def grid_surface(parts, spacing):
    pts, labels = [], []
    for prim, label in parts:
        g = prim.grid(spacing)
        pts.append(g)
        labels.append(np.full(len(g), int(label)))
    return np.concatenate(pts), np.concatenate(labels)
