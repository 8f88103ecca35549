"""Coverage-grid targets, the two detection losses with gradients, and the box decoder.

A coverage grid splits the image into ``stride``-pixel cells. Each cell holds a
coverage value and the absolute pixel corners (x1, y1, x2, y2) of the object
it belongs to. Arrays are row-major: ``coverage[row, col]``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BBox2D, iou_matrix

GRID_FORMAT_VERSION = 1
DEFAULT_STRIDE = 16
DEFAULT_WEIGHTS = (1.0, 2.0)


class GridConfigError(ValueError):
    pass


class GridShapeError(ValueError):
    pass


@dataclass(eq=False)
class CoverageGrid:
    stride: int
    coverage: np.ndarray  # (gh, gw) in [0, 1]
    boxes: np.ndarray  # (gh, gw, 4) absolute pixels

    def __post_init__(self):
        self.coverage = np.asarray(self.coverage, dtype=np.float64)
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        if self.coverage.ndim != 2 or self.boxes.shape != self.coverage.shape + (4,):
            raise GridShapeError(f"coverage {self.coverage.shape} and boxes {self.boxes.shape} do not match")
        if self.stride <= 0:
            raise GridConfigError(f"stride must be positive, got {self.stride}")
        if not np.all((self.coverage >= 0) & (self.coverage <= 1)):
            raise ValueError("coverage values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.coverage.shape

    @classmethod
    def zeros(cls, gh: int, gw: int, stride: int = DEFAULT_STRIDE) -> CoverageGrid:
        return cls(stride, np.zeros((gh, gw)), np.zeros((gh, gw, 4)))

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        gh, gw = self.shape
        return (np.arange(gw) + 0.5) * self.stride, (np.arange(gh) + 0.5) * self.stride

    def copy(self) -> CoverageGrid:
        return CoverageGrid(self.stride, self.coverage.copy(), self.boxes.copy())


def encode_coverage(annotations: Sequence, stride: int = DEFAULT_STRIDE,
                    image_size: tuple[int, int] = (512, 512)) -> CoverageGrid:
    """Ground-truth grid: a cell is covered when its center lies in [x1, x2) x [y1, y2) of a box.

    Cells inside several boxes take the smallest-area box. Ignored annotations
    (``ignore=True``) are skipped.
    """
    w, h = image_size
    if stride <= 0 or w % stride or h % stride:
        raise GridConfigError(f"stride {stride} must divide the image size {w}x{h}")
    grid = CoverageGrid.zeros(h // stride, w // stride, stride)
    xs, ys = grid.cell_centers()
    best = np.full(grid.shape, np.inf)
    for a in annotations:
        if getattr(a, "ignore", False):
            continue
        b = a.bbox if hasattr(a, "bbox") else a
        inside = ((ys >= b.y1) & (ys < b.y2))[:, None] & ((xs >= b.x1) & (xs < b.x2))[None, :]
        take = inside & (b.area < best)
        best[take] = b.area
        grid.coverage[take] = 1.0
        grid.boxes[take] = (b.x1, b.y1, b.x2, b.y2)
    return grid


def _stack(grids: Sequence[CoverageGrid], what: str) -> np.ndarray:
    return np.stack([getattr(g, what) for g in grids])


@dataclass
class LossBatch:
    truth: list[CoverageGrid]
    pred: list[CoverageGrid]
    weights: tuple[float, float] = DEFAULT_WEIGHTS

    def __post_init__(self):
        if len(self.truth) < 1 or len(self.truth) != len(self.pred):
            raise GridShapeError(f"batch needs N >= 1 matching grids, got {len(self.truth)} vs {len(self.pred)}")
        for t, p in zip(self.truth, self.pred):
            if t.shape != p.shape:
                raise GridShapeError(f"grid shapes differ: {t.shape} vs {p.shape}")

    @property
    def n(self) -> int:
        return len(self.truth)


def coverage_loss(batch: LossBatch) -> tuple[float, np.ndarray]:
    """Batch-averaged half squared error over all cells; gradient w.r.t. predicted coverage (N, gh, gw)."""
    diff = _stack(batch.pred, "coverage") - _stack(batch.truth, "coverage")
    value = float(np.sum(diff * diff) / (2 * batch.n))
    return value, diff / batch.n


def bbox_loss(batch: LossBatch) -> tuple[float, np.ndarray]:
    """Half batch-averaged L1 corner error over cells with truth coverage 1; subgradient (N, gh, gw, 4)."""
    active = (_stack(batch.truth, "coverage") == 1.0)[..., None]
    diff = (_stack(batch.pred, "boxes") - _stack(batch.truth, "boxes")) * active
    value = float(np.sum(np.abs(diff)) / (2 * batch.n))
    return value, np.sign(diff) / (2 * batch.n)


def total_loss(batch: LossBatch) -> float:
    w_cov, w_box = batch.weights
    if w_cov < 0 or w_box < 0:
        raise ValueError(f"loss weights must be nonnegative, got {batch.weights}")
    return w_cov * coverage_loss(batch)[0] + w_box * bbox_loss(batch)[0]


@dataclass(frozen=True)
class Detection:
    bbox: BBox2D
    confidence: float

    def __post_init__(self):
        if not 0 <= self.confidence <= 1:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class DecodeConfig:
    threshold: float = 0.6
    cluster_iou: float = 0.5
    min_cluster: int = 2

    def __post_init__(self):
        if not 0 < self.threshold < 1 or not 0 < self.cluster_iou < 1 or self.min_cluster < 1:
            raise ValueError(f"invalid decode parameters {self}")


def decode_detections(grid: CoverageGrid, threshold: float = 0.6, cluster_iou: float = 0.5,
                      min_cluster: int = 2) -> list[Detection]:
    """Threshold the coverage map and greedily cluster the per-cell boxes.

    Candidates are processed by descending coverage (row-major index breaks
    ties). Each unassigned candidate seeds a cluster that absorbs every
    unassigned candidate whose box overlaps the seed's with IoU >= cluster_iou.
    A cluster yields its coverage-weighted mean box with the mean coverage as
    confidence; clusters under ``min_cluster`` members are dropped.
    """
    DecodeConfig(threshold, cluster_iou, min_cluster)
    cov = grid.coverage.ravel()
    boxes = grid.boxes.reshape(-1, 4)
    cand = np.nonzero(cov >= threshold)[0]
    if cand.size == 0:
        return []
    cand = cand[np.lexsort((cand, -cov[cand]))]
    cb, cc = boxes[cand], cov[cand]
    overlap = iou_matrix(cb, cb)
    free = np.ones(cand.size, dtype=bool)
    found = []
    for s in range(cand.size):
        if not free[s]:
            continue
        members = free & (overlap[s] >= cluster_iou)
        members[s] = True
        free &= ~members
        if members.sum() < min_cluster:
            continue
        wts = cc[members]
        x1, y1, x2, y2 = (wts[:, None] * cb[members]).sum(axis=0) / wts.sum()
        if not (x1 < x2 and y1 < y2):
            continue
        found.append((float(wts.mean()), s, BBox2D(float(x1), float(y1), float(x2), float(y2))))
    found.sort(key=lambda f: (-f[0], f[1]))
    return [Detection(b, min(1.0, c)) for c, _, b in found]


def save_grid(grid: CoverageGrid, path) -> None:
    """Write a grid as an ``.npz`` archive (NumPy ``.npy`` members with shape headers)."""
    buf = io.BytesIO()
    np.savez(buf, version=np.array(GRID_FORMAT_VERSION, dtype=np.int32), stride=np.array(grid.stride, dtype=np.int32),
             coverage=grid.coverage.astype(np.float32), boxes=grid.boxes.astype(np.float32))
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_grid(path) -> CoverageGrid:
    with np.load(path) as z:
        version = int(z["version"])
        if version != GRID_FORMAT_VERSION:
            raise GridConfigError(f"unsupported coverage grid format version {version}")
        return CoverageGrid(int(z["stride"]), z["coverage"].astype(np.float64), z["boxes"].astype(np.float64))
