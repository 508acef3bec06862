"""Labeled point clouds and ASCII PLY export."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np


class Part(enum.IntEnum):
    FIXED = 0
    MOVABLE = 1
    TABLE = 2
    GRIPPER_ASSISTANT = 3
    GRIPPER_PRIMARY = 4


OBJECT_PARTS = (Part.FIXED, Part.MOVABLE)


@dataclass
class LabeledCloud:
    points: np.ndarray
    labels: np.ndarray
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.points.shape[0]:
            raise ValueError("one label per point required")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("cloud coordinates must be finite")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if self.scores.shape[0] != self.points.shape[0]:
                raise ValueError("one score per point required")
            if np.any(self.scores < 0.0) or np.any(self.scores > 1.0):
                raise ValueError("scores must lie in [0, 1]")

    def __len__(self):
        return self.points.shape[0]

    def object_mask(self):
        return np.isin(self.labels, [int(p) for p in OBJECT_PARTS])

    def with_points(self, points):
        return LabeledCloud(points, self.labels.copy(),
                            None if self.scores is None else self.scores.copy())


def write_ply(path, points, ints=None, floats=None, colors=None):
    """Write an ASCII PLY. ``ints``/``floats`` map property name -> per-vertex array."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ints = ints or {}
    floats = floats or {}
    lines = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
             "property float x", "property float y", "property float z"]
    for name in floats:
        lines.append(f"property float {name}")
    for name in ints:
        lines.append(f"property int {name}")
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    cols = [np.asarray(v) for v in floats.values()]
    icols = [np.asarray(v, dtype=np.int64) for v in ints.values()]
    for i, p in enumerate(points):
        row = [f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}"]
        row += [f"{c[i]:.6f}" for c in cols]
        row += [str(int(c[i])) for c in icols]
        if colors is not None:
            row += [str(int(v)) for v in colors[i]]
        lines.append(" ".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ply(path):
    """Minimal reader for the ASCII files written by :func:`write_ply`."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    end = lines.index("end_header")
    names = [ln.split()[-1] for ln in lines[:end] if ln.startswith("property")]
    n = int(next(ln for ln in lines if ln.startswith("element vertex")).split()[-1])
    rows = np.array([[float(v) for v in ln.split()] for ln in lines[end + 1:end + 1 + n]])
    rows = rows.reshape(n, len(names))
    return {name: rows[:, i] for i, name in enumerate(names)}


def score_colors(scores):
    """Blue (0) to red (1) ramp."""
    s = np.clip(np.asarray(scores, dtype=np.float64), 0.0, 1.0)
    return np.stack([255 * s, 40 * np.ones_like(s), 255 * (1.0 - s)], axis=1).astype(np.uint8)
