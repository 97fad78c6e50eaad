"""SLIC superpixels and their centers as object-prior point prompts."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np
from skimage.color import rgb2lab
from skimage.measure import label as connected_label

from .errors import InvalidParameterError
from .structures import Point, as_image

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SuperpixelParams:
    n_segments: int = 1024
    compactness: float = 10.0
    max_iterations: int = 10
    seed: int = 0

    def validate(self, height: int, width: int) -> None:
        if self.n_segments < 1:
            raise InvalidParameterError(f"n_segments must be positive, got {self.n_segments}")
        if self.n_segments > height * width:
            raise InvalidParameterError(
                f"n_segments={self.n_segments} exceeds pixel count {height * width}"
            )
        if not self.compactness > 0:
            raise InvalidParameterError(f"compactness must be > 0, got {self.compactness}")
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")


@dataclass
class SuperpixelResult:
    labels: np.ndarray  # (H, W) int, values in [0, n_clusters)
    centers: np.ndarray  # (n_clusters, 2) sub-pixel (x, y)
    iterations_run: int
    step: float

    @property
    def n_clusters(self) -> int:
        return int(self.centers.shape[0])


def grid_shape(height: int, width: int, n_segments: int):
    """Rows and columns of the regular seed grid for ``n_segments`` clusters."""
    step = math.sqrt(height * width / n_segments)
    rows = min(height, max(1, int(round(height / step))))
    cols = min(width, max(1, int(round(n_segments / rows))))
    return rows, cols


def initial_seeds(height: int, width: int, n_segments: int):
    """Regular-grid seeds as ``(n, 2)`` integer ``(y, x)`` plus their cell bounds.

    Bounds are ``(n, 4)`` rows of ``(y_lo, y_hi, x_lo, x_hi)``, inclusive.
    """
    rows, cols = grid_shape(height, width, n_segments)
    ys = np.floor((np.arange(rows) + 0.5) * height / rows).astype(np.int64)
    xs = np.floor((np.arange(cols) + 0.5) * width / cols).astype(np.int64)
    y_edges = np.floor(np.arange(rows + 1) * height / rows).astype(np.int64)
    x_edges = np.floor(np.arange(cols + 1) * width / cols).astype(np.int64)
    yy, xx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    yy, xx = yy.ravel(), xx.ravel()
    seeds = np.stack([ys[yy], xs[xx]], axis=1)
    bounds = np.stack([y_edges[yy], y_edges[yy + 1] - 1, x_edges[xx], x_edges[xx + 1] - 1], axis=1)
    return seeds, bounds


def _gradient_magnitude(lab: np.ndarray) -> np.ndarray:
    padded = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return (dx ** 2).sum(axis=2) + (dy ** 2).sum(axis=2)


def _perturb_seeds(seeds: np.ndarray, bounds: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Move each seed to the lowest-gradient pixel of its 3x3 neighbourhood.

    Candidates are clipped to the seed's own grid cell so that two seeds can
    never land on the same pixel.
    """
    # (0, 0) first so ties keep the seed in place
    offsets = np.array([(0, 0)] + [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)])
    cand = seeds[:, None, :] + offsets[None, :, :]
    cand[..., 0] = np.clip(cand[..., 0], bounds[:, 0:1], bounds[:, 1:2])
    cand[..., 1] = np.clip(cand[..., 1], bounds[:, 2:3], bounds[:, 3:4])
    g = grad[cand[..., 0], cand[..., 1]]
    best = np.argmin(g, axis=1)
    return cand[np.arange(len(seeds)), best]


def _assign(lab, centers_lab, centers_yx, step, compactness):
    """One SLIC assignment pass restricted to a 2S x 2S window per center.

    Returns per-pixel labels; ties go to the lower center index. Pixels that
    no window reaches fall back to the spatially nearest center.
    """
    h, w = lab.shape[:2]
    k = len(centers_yx)
    half = int(math.ceil(step))
    span = np.arange(-half, half + 1)
    cy = np.rint(centers_yx[:, 0]).astype(np.int64)
    cx = np.rint(centers_yx[:, 1]).astype(np.int64)
    py = cy[:, None, None] + span[None, :, None]  # (k, n, 1)
    px = cx[:, None, None] + span[None, None, :]  # (k, 1, n)
    valid = (
        (py >= 0) & (py < h) & (px >= 0) & (px < w)
        & (np.abs(py - centers_yx[:, 0, None, None]) <= step)
        & (np.abs(px - centers_yx[:, 1, None, None]) <= step)
    )
    py_b, px_b = np.broadcast_arrays(py, px)
    kk = np.broadcast_to(np.arange(k)[:, None, None], valid.shape)
    ys, xs, ks = py_b[valid], px_b[valid], kk[valid]

    dc = ((lab[ys, xs] - centers_lab[ks]) ** 2).sum(axis=1)
    ds = (ys - centers_yx[ks, 0]) ** 2 + (xs - centers_yx[ks, 1]) ** 2
    dist = dc + ds * (compactness / step) ** 2

    pix = ys * w + xs
    best = np.full(h * w, np.inf)
    np.minimum.at(best, pix, dist)
    win = dist == best[pix]
    labels = np.full(h * w, k, dtype=np.int64)
    # equal distances resolve to the lower center index
    np.minimum.at(labels, pix[win], ks[win])
    labels[labels == k] = -1

    missing = np.flatnonzero(labels < 0)
    if missing.size:
        my, mx = np.divmod(missing, w)
        d2 = (my[:, None] - centers_yx[None, :, 0]) ** 2 + (mx[:, None] - centers_yx[None, :, 1]) ** 2
        labels[missing] = np.argmin(d2, axis=1)
    return labels.reshape(h, w)


def _cluster_means(lab, labels, k):
    h, w = labels.shape
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    yy, xx = np.indices((h, w))
    sums = np.stack(
        [np.bincount(flat, weights=v.ravel(), minlength=k) for v in (*np.moveaxis(lab, 2, 0), yy, xx)],
        axis=1,
    )
    return counts, sums


def _adjacency(comp: np.ndarray, n: int) -> np.ndarray:
    """Unique directed pairs ``(a, b)`` of 4-adjacent distinct components."""
    a = np.concatenate([comp[:, :-1].ravel(), comp[:-1, :].ravel()])
    b = np.concatenate([comp[:, 1:].ravel(), comp[1:, :].ravel()])
    keep = a != b
    a, b = a[keep], b[keep]
    keys = np.unique(np.concatenate([a * n + b, b * n + a]))
    return np.stack(np.divmod(keys, n), axis=1)


def enforce_connectivity(labels: np.ndarray, min_size: float) -> np.ndarray:
    """Split every label into 4-connected pieces; merge small pieces away.

    Each piece smaller than ``min_size`` pixels is absorbed into its largest
    adjacent piece (ties: lowest index), repeated until no small piece has a
    neighbour. Output labels are consecutive integers in raster order of
    first appearance.
    """
    h, w = labels.shape
    comp = connected_label(labels, background=-1, connectivity=1) - 1

    while True:
        _, comp = np.unique(comp.ravel(), return_inverse=True)
        comp = comp.reshape(h, w)
        n = int(comp.max()) + 1
        sizes = np.bincount(comp.ravel(), minlength=n)
        small = sizes < min_size
        if n == 1 or not small.any():
            break
        pairs = _adjacency(comp, n)
        pairs = pairs[small[pairs[:, 0]]]
        if len(pairs) == 0:
            break
        # best neighbour per small piece: largest size, then lowest index
        order = np.lexsort((pairs[:, 1], -sizes[pairs[:, 1]], pairs[:, 0]))
        pairs = pairs[order]
        first = np.ones(len(pairs), dtype=bool)
        first[1:] = pairs[1:, 0] != pairs[:-1, 0]
        src, dst = pairs[first, 0], pairs[first, 1]

        parent = np.arange(n)
        parent[src] = dst
        # mutual choices form 2-cycles; the better-ranked piece stays a root
        mutual = parent[parent[src]] == src
        rank_src = (sizes[src], -src)
        rank_dst = (sizes[dst], -dst)
        src_wins = (rank_src[0] > rank_dst[0]) | ((rank_src[0] == rank_dst[0]) & (rank_src[1] > rank_dst[1]))
        parent[src[mutual & src_wins]] = src[mutual & src_wins]
        while True:
            nxt = parent[parent]
            if np.array_equal(nxt, parent):
                break
            parent = nxt
        comp = parent[comp]

    _, first_idx, inverse = np.unique(comp.ravel(), return_index=True, return_inverse=True)
    rank = np.empty(len(first_idx), dtype=np.int64)
    rank[np.argsort(first_idx, kind="stable")] = np.arange(len(first_idx))
    return rank[inverse].reshape(h, w)


def compute_superpixels(image, params: SuperpixelParams = SuperpixelParams()) -> SuperpixelResult:
    """Cluster an RGB image into compact superpixels with SLIC.

    Clustering runs in CIELAB space over a joint color + position distance
    ``d_lab^2 + (d_xy / S)^2 * m^2`` with grid step ``S = sqrt(HW / K)``.
    Iteration stops after ``max_iterations`` or once the mean center
    displacement drops below one pixel. The result is deterministic.
    """
    img = as_image(image)
    h, w = img.shape[:2]
    params.validate(h, w)

    lab = rgb2lab(img).astype(np.float64)
    step = math.sqrt(h * w / params.n_segments)
    seeds, bounds = initial_seeds(h, w, params.n_segments)
    seeds = _perturb_seeds(seeds, bounds, _gradient_magnitude(lab))
    centers_yx = seeds.astype(np.float64)
    centers_lab = lab[seeds[:, 0], seeds[:, 1]]

    iterations = 0
    labels = None
    for iterations in range(1, params.max_iterations + 1):
        labels = _assign(lab, centers_lab, centers_yx, step, params.compactness)
        counts, sums = _cluster_means(lab, labels, len(centers_yx))
        alive = counts > 0
        means = sums[alive] / counts[alive, None]
        shift = np.hypot(means[:, 3] - centers_yx[alive, 0], means[:, 4] - centers_yx[alive, 1])
        # empty clusters are dropped; the remaining labels are re-indexed on the next pass
        centers_lab, centers_yx = means[:, :3], means[:, 3:]
        if shift.mean() < 1.0:
            break

    labels = _assign(lab, centers_lab, centers_yx, step, params.compactness)
    labels = enforce_connectivity(labels, min_size=step * step / 4.0)

    n = int(labels.max()) + 1
    counts = np.bincount(labels.ravel(), minlength=n)
    yy, xx = np.indices((h, w))
    cy = np.bincount(labels.ravel(), weights=yy.ravel(), minlength=n) / counts
    cx = np.bincount(labels.ravel(), weights=xx.ravel(), minlength=n) / counts
    logger.debug("SLIC: %d clusters after %d iterations", n, iterations)
    return SuperpixelResult(labels=labels, centers=np.stack([cx, cy], axis=1),
                            iterations_run=iterations, step=step)


def centers_as_prompts(result: SuperpixelResult) -> List[Point]:
    """Round superpixel centers to pixel coordinates, sorted row-major."""
    if result.n_clusters == 0:
        return []
    h, w = result.labels.shape
    xs = np.clip(np.floor(result.centers[:, 0] + 0.5), 0, w - 1).astype(int)
    ys = np.clip(np.floor(result.centers[:, 1] + 0.5), 0, h - 1).astype(int)
    order = np.lexsort((xs, ys))
    return [Point(int(xs[i]), int(ys[i])) for i in order]


def grid_prompts(height: int, width: int, side: int) -> List[Point]:
    """Regular ``side x side`` point grid at cell centers, row-major."""
    ys = np.floor((np.arange(side) + 0.5) * height / side).astype(int)
    xs = np.floor((np.arange(side) + 0.5) * width / side).astype(int)
    return [Point(int(x), int(y)) for y in ys for x in xs]
