"""Core data structures shared by every stage of the counter."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

from .errors import InvalidInputError


def as_image(pixels) -> np.ndarray:
    """Validate and normalise an image to an ``H x W x 3`` uint8 array.

    Grayscale inputs are replicated to three channels, an alpha channel is
    dropped. Float inputs in ``[0, 1]`` are rescaled to ``[0, 255]``.
    """
    arr = np.asarray(pixels)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise InvalidInputError(f"expected an HxWx3 image, got shape {arr.shape}")
    arr = arr[:, :, :3]
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"zero-area image of shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.floating) and arr.size and float(arr.max()) <= 1.0:
            arr = arr * 255.0
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(arr)


class Point(NamedTuple):
    x: float
    y: float


class Box(NamedTuple):
    """Axis-aligned box in pixel coordinates, ``x1``/``y1`` exclusive."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def center(self) -> Point:
        return Point((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)


Prompt = Union[Point, Box]


def prompt_in_bounds(prompt: Prompt, height: int, width: int) -> bool:
    if isinstance(prompt, Box):
        return (0 <= prompt.x0 < prompt.x1 <= width) and (0 <= prompt.y0 < prompt.y1 <= height)
    return 0 <= prompt.x < width and 0 <= prompt.y < height


@dataclass(eq=False)
class MaskProposal:
    """One binary instance mask.

    The mask is stored as its tight bounding-box crop; ``bitmap`` expands it to
    the full ``H x W`` frame on demand. ``bbox`` is ``(x0, y0, x1, y1)`` with
    exclusive upper bounds. ``tile`` is ``None`` for masks decoded on the full
    image and ``(row, col)`` for masks remapped from a multi-scale tile.
    """

    crop: np.ndarray
    offset: Tuple[int, int]  # (y0, x0) of the crop
    image_size: Tuple[int, int]  # (H, W)
    confidence: float = 0.0
    tile: Optional[Tuple[int, int]] = None
    similarity: Optional[float] = None
    error: Optional[str] = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_bitmap(cls, bitmap: np.ndarray, confidence: float = 0.0, **kwargs) -> "MaskProposal":
        bitmap = np.asarray(bitmap).astype(bool)
        rows = np.flatnonzero(bitmap.any(axis=1))
        if rows.size == 0:
            return cls.empty(bitmap.shape, confidence=confidence, **kwargs)
        cols = np.flatnonzero(bitmap.any(axis=0))
        y0, y1, x0, x1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
        return cls(
            crop=np.ascontiguousarray(bitmap[y0:y1, x0:x1]),
            offset=(int(y0), int(x0)),
            image_size=(int(bitmap.shape[0]), int(bitmap.shape[1])),
            confidence=float(confidence),
            **kwargs,
        )

    @classmethod
    def empty(cls, image_size, confidence: float = 0.0, **kwargs) -> "MaskProposal":
        return cls(
            crop=np.zeros((0, 0), dtype=bool),
            offset=(0, 0),
            image_size=(int(image_size[0]), int(image_size[1])),
            confidence=float(confidence),
            **kwargs,
        )

    @cached_property
    def area(self) -> int:
        return int(np.count_nonzero(self.crop))

    @property
    def degenerate(self) -> bool:
        return self.area == 0

    @property
    def bbox(self) -> Tuple[int, int, int, int]:
        if self.degenerate:
            return (0, 0, 0, 0)
        y0, x0 = self.offset
        h, w = self.crop.shape
        return (x0, y0, x0 + w, y0 + h)

    @property
    def bitmap(self) -> np.ndarray:
        full = np.zeros(self.image_size, dtype=bool)
        if not self.degenerate:
            y0, x0 = self.offset
            h, w = self.crop.shape
            full[y0:y0 + h, x0:x0 + w] = self.crop
        return full

    @property
    def origin_scale(self) -> str:
        return "full" if self.tile is None else f"tile({self.tile[0]},{self.tile[1]})"

    @cached_property
    def centroid(self) -> Tuple[float, float]:
        """``(x, y)`` centroid of the set pixels."""
        ys, xs = np.nonzero(self.crop)
        return (float(xs.mean() + self.offset[1]), float(ys.mean() + self.offset[0]))

    @cached_property
    def digest(self) -> bytes:
        """Key identifying the exact pixel set; equal masks share a digest."""
        if self.degenerate:
            return b""
        return np.asarray(self.bbox, dtype=np.int64).tobytes() + np.packbits(self.crop).tobytes()


def mask_intersection(a: MaskProposal, b: MaskProposal) -> int:
    if a.degenerate or b.degenerate:
        return 0
    ax0, ay0, ax1, ay1 = a.bbox
    bx0, by0, bx1, by1 = b.bbox
    x0, y0 = max(ax0, bx0), max(ay0, by0)
    x1, y1 = min(ax1, bx1), min(ay1, by1)
    if x0 >= x1 or y0 >= y1:
        return 0
    ca = a.crop[y0 - ay0:y1 - ay0, x0 - ax0:x1 - ax0]
    cb = b.crop[y0 - by0:y1 - by0, x0 - bx0:x1 - bx0]
    return int(np.count_nonzero(ca & cb))


def mask_iou(a: MaskProposal, b: MaskProposal) -> float:
    inter = mask_intersection(a, b)
    if inter == 0:
        return 0.0
    return inter / float(a.area + b.area - inter)


@dataclass
class FeatureMap:
    """Patch-grid features ``(g_h, g_w, d)`` covering an ``H x W`` image."""

    grid: np.ndarray
    image_size: Tuple[int, int]

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 3:
            raise InvalidInputError(f"feature grid must be 3-D, got {self.grid.shape}")
        if not np.all(np.isfinite(self.grid)):
            raise InvalidInputError("feature grid contains non-finite values")

    @property
    def grid_size(self) -> Tuple[int, int]:
        return self.grid.shape[0], self.grid.shape[1]

    @property
    def dim(self) -> int:
        return self.grid.shape[2]


def area_weights(n_pixels: int, n_cells: int) -> np.ndarray:
    """Overlap matrix ``(n_cells, n_pixels)`` between unit pixels and grid cells.

    Entry ``[c, p]`` is the length of ``[p, p+1)`` inside cell ``c`` divided by
    the cell length, so summing a row against a 0/1 mask gives the covered
    fraction of the cell along this axis.
    """
    edges = np.arange(n_cells + 1, dtype=np.float64) * (n_pixels / n_cells)
    lo = np.maximum(np.arange(n_pixels)[None, :], edges[:-1, None])
    hi = np.minimum(np.arange(n_pixels)[None, :] + 1.0, edges[1:, None])
    return np.clip(hi - lo, 0.0, None) / (n_pixels / n_cells)


def downsample_area(values: np.ndarray, grid_size: Tuple[int, int]) -> np.ndarray:
    """Area-average an ``H x W`` or ``H x W x C`` array onto a coarser grid."""
    values = np.asarray(values, dtype=np.float64)
    ay = area_weights(values.shape[0], grid_size[0])
    ax = area_weights(values.shape[1], grid_size[1])
    if values.ndim == 2:
        return ay @ values @ ax.T
    return np.einsum("gh,hwc,kw->gkc", ay, values, ax, optimize=True)
