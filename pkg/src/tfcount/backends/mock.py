"""Deterministic stand-ins for the segmenter and the semantic encoder.

The mock segmenter treats every 4-connected region of one exact color as an
object: a point prompt returns the region under it, a box prompt the region
covering most of the box. Regions smaller than ``min_point_area`` cannot be
resolved from a point prompt (they decode empty), which models the failure of
a promptable segmenter on tiny objects. Box prompts are not subject to the
limit.

The mock semantic encoder maps each pixel to its nearest palette color and
emits a one-hot class vector (zero for background) plus a small fixed jitter,
area-pooled to the patch grid. Its segmenter counterpart only knows
foreground vs. background, so distractor classes look identical to targets.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage
from skimage.measure import label as connected_label

from ..structures import Box, FeatureMap, MaskProposal, Point, as_image, downsample_area, prompt_in_bounds
from ..synthetic import PALETTE
from .base import (
    EmbeddedImage,
    SegmenterBackend,
    SegmenterInfo,
    SemanticEncoderBackend,
    SemanticInfo,
    image_digest,
)

JITTER_DIMS = 2

# point-prompt resolution limit relative to the huge backbone
_VARIANT_AREA_SCALE = {"vit_h": 1.0, "vit_b": 1.5}


def _jitter(grid: Tuple[int, int], amplitude: float) -> np.ndarray:
    gy, gx = np.meshgrid(np.arange(grid[0]), np.arange(grid[1]), indexing="ij")
    return amplitude * np.stack([np.sin(1.7 * gy + 0.3 * gx), np.cos(0.9 * gx - 1.3 * gy)], axis=-1)


@dataclass
class _Regions:
    labels: np.ndarray  # (H, W) int, 0..n-1
    sizes: np.ndarray
    slices: list
    background: int


class MockSegmenter(SegmenterBackend):
    def __init__(self, variant: str = "vit_h", min_point_area: int = 30, feature_grid: int = 64,
                 jitter: float = 0.02):
        self.info = SegmenterInfo(name="mock", variant=variant, input_resolution=0, prompt_batch=1 << 30)
        self.min_point_area = int(round(min_point_area * _VARIANT_AREA_SCALE.get(variant, 1.0)))
        self.feature_grid = feature_grid
        self.jitter = jitter

    def encode(self, image) -> EmbeddedImage:
        img = as_image(image)
        key = (img[..., 0].astype(np.int64) << 16) | (img[..., 1].astype(np.int64) << 8) | img[..., 2]
        labels = connected_label(key, background=-1, connectivity=1) - 1
        sizes = np.bincount(labels.ravel())
        slices = ndimage.find_objects(labels + 1)
        regions = _Regions(labels, sizes, slices, int(np.argmax(sizes)))
        return EmbeddedImage(image_size=img.shape[:2], digest=image_digest(img), state=regions)

    def _region_mask(self, regions: _Regions, idx: int, shape) -> MaskProposal:
        sl = regions.slices[idx]
        crop = regions.labels[sl] == idx
        mask = MaskProposal(crop=crop, offset=(sl[0].start, sl[1].start), image_size=shape)
        # fill ratio of the bounding box stands in for the predicted quality
        mask.confidence = float(mask.area) / crop.size
        return mask

    def decode(self, emb: EmbeddedImage, prompts: Sequence) -> List[MaskProposal]:
        regions: _Regions = emb.state
        h, w = emb.image_size
        out = []
        for p in prompts:
            if not prompt_in_bounds(p, h, w):
                out.append(MaskProposal.empty((h, w), error=f"prompt out of bounds: {tuple(p)}"))
                continue
            if isinstance(p, Box):
                y0, y1 = int(np.floor(p.y0)), int(np.ceil(p.y1))
                x0, x1 = int(np.floor(p.x0)), int(np.ceil(p.x1))
                idx = int(np.argmax(np.bincount(regions.labels[y0:y1, x0:x1].ravel())))
            else:
                idx = int(regions.labels[int(p.y), int(p.x)])
                if regions.sizes[idx] < self.min_point_area:
                    out.append(MaskProposal.empty((h, w)))
                    continue
            out.append(self._region_mask(regions, idx, (h, w)))
        return out

    def image_features(self, emb: EmbeddedImage) -> FeatureMap:
        regions: _Regions = emb.state
        fg = (regions.labels != regions.background).astype(np.float64)
        grid = (self.feature_grid, self.feature_grid)
        pooled = downsample_area(fg, grid)[..., None]
        feats = np.concatenate([pooled, _jitter(grid, self.jitter)], axis=-1)
        return FeatureMap(feats, emb.image_size)


class MockSemanticEncoder(SemanticEncoderBackend):
    def __init__(self, grid: Tuple[int, int] = (37, 37), palette=PALETTE, jitter: float = 0.02,
                 name: str = "mock"):
        self.palette = np.asarray(palette, dtype=np.float64)
        self.jitter = jitter
        self.info = SemanticInfo(name=name, grid=tuple(grid), dim=len(palette) - 1 + JITTER_DIMS)

    def classify(self, image) -> np.ndarray:
        """Per-pixel palette index (0 = background)."""
        img = as_image(image).astype(np.float64)
        colors, inverse = np.unique(img.reshape(-1, 3), axis=0, return_inverse=True)
        d = ((colors[:, None, :] - self.palette[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d, axis=1)[inverse.ravel()].reshape(img.shape[:2])

    def embed(self, image) -> FeatureMap:
        cls = self.classify(image)
        onehot = np.zeros(cls.shape + (len(self.palette) - 1,))
        fg = cls > 0
        onehot[fg, cls[fg] - 1] = 1.0
        pooled = downsample_area(onehot, self.info.grid)
        feats = np.concatenate([pooled, _jitter(self.info.grid, self.jitter)], axis=-1)
        return FeatureMap(feats, cls.shape)
