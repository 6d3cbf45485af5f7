"""Reproducible i.i.d. uniform point clouds on the torus.

Sub-stream derivation
---------------------
Every cloud is drawn from its own PCG64 generator seeded by::

    numpy.random.SeedSequence(entropy=seed, spawn_key=(tag_code, trial_index, n))

with ``tag_code = 0`` for the ``X`` stream and ``1`` for ``Y``.  Points are the
first ``n`` rows of ``Generator.random((n, 2))``.  The key tuple fully
determines the cloud, so trials can be generated in any order or in parallel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .torus import TorusPoint

STREAM_CODES = {"X": 0, "Y": 1}


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    seed: int
    stream_tag: str
    trial_index: int

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ValueError(f"a point cloud needs shape (n, 2) with n >= 1, got {pts.shape}")
        if not (np.all(pts >= 0.0) and np.all(pts < 1.0)):
            raise ValueError("cloud coordinates must lie in [0, 1)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.n

    def as_points(self) -> list[TorusPoint]:
        return [TorusPoint(float(a), float(b)) for a, b in self.points]


def stream_generator(seed: int, stream_tag: str, trial_index: int, n: int) -> np.random.Generator:
    if stream_tag not in STREAM_CODES:
        raise ValueError(f"stream tag must be 'X' or 'Y', got {stream_tag!r}")
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(STREAM_CODES[stream_tag], int(trial_index), int(n))
    )
    return np.random.Generator(np.random.PCG64(ss))


def sample_uniform(n: int, seed: int, stream_tag: str = "X", trial_index: int = 0) -> PointCloud:
    """Draw ``n`` i.i.d. uniform torus points from the keyed sub-stream."""
    if n < 1:
        raise ValueError(f"need n >= 1 points, got {n}")
    rng = stream_generator(seed, stream_tag, trial_index, n)
    return PointCloud(rng.random((n, 2)), int(seed), stream_tag, int(trial_index))


def write_cloud_csv(cloud: PointCloud, fh) -> None:
    """Metadata header and row, then an ``x1,x2`` header and one row per point."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["n", "seed", "tag", "trial"])
    w.writerow([cloud.n, cloud.seed, cloud.stream_tag, cloud.trial_index])
    w.writerow(["x1", "x2"])
    for a, b in cloud.points:
        w.writerow([f"{a:.17g}", f"{b:.17g}"])


def read_cloud_csv(fh) -> PointCloud:
    r = csv.reader(fh)
    next(r)
    n, seed, tag, trial = next(r)
    next(r)
    pts = np.array([[float(a), float(b)] for a, b in r])
    if pts.shape[0] != int(n):
        raise ValueError(f"cloud header says n={n}, found {pts.shape[0]} rows")
    return PointCloud(pts, int(seed), tag, int(trial))
