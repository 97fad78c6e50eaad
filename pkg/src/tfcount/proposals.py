"""Reference and candidate mask generation, multi-scale tiling, and deduplication."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np

from .backends.base import EmbeddedImage, SegmenterBackend, decode
from .errors import InvalidInputError, InvalidParameterError, ReferenceFailureError
from .structures import Box, MaskProposal, Point, as_image, mask_iou, prompt_in_bounds

logger = logging.getLogger(__name__)


@dataclass
class ReferenceSpec:
    """Exemplar boxes or points in original-image coordinates."""

    format: str  # "box" | "point"
    items: List

    def __post_init__(self):
        if self.format not in ("box", "point"):
            raise InvalidInputError(f"reference format must be 'box' or 'point', got {self.format!r}")
        cls = Box if self.format == "box" else Point
        self.items = [cls(*it) for it in self.items]

    @property
    def n_ref(self) -> int:
        return len(self.items)

    def validate(self, height: int, width: int) -> "ReferenceSpec":
        if self.n_ref < 1:
            raise InvalidInputError("at least one reference is required")
        for it in self.items:
            if not prompt_in_bounds(it, height, width):
                raise InvalidInputError(f"reference {tuple(it)} outside {width}x{height} image")
        return self


@dataclass
class ProposalSet:
    reference_masks: List[MaskProposal]
    candidate_masks: List[MaskProposal]
    image_size: Tuple[int, int]
    background_removed: bool = False


def generate_reference_masks(backend: SegmenterBackend, emb: EmbeddedImage, refs: ReferenceSpec) -> List[MaskProposal]:
    """Decode one mask per reference, in reference order.

    Degenerate entries are kept (flagged by zero area) with a warning. Raises
    :class:`ReferenceFailureError` when every reference decodes empty.
    """
    masks = decode(backend, emb, refs.items)
    bad = [i for i, m in enumerate(masks) if m.degenerate]
    for i in bad:
        logger.warning("reference %d %s produced an empty mask%s", i, tuple(refs.items[i]),
                       f" ({masks[i].error})" if masks[i].error else "")
    if len(bad) == len(masks):
        raise ReferenceFailureError("all reference prompts decoded to empty masks")
    return masks


def generate_candidates(backend: SegmenterBackend, emb: EmbeddedImage, prompts: Sequence[Point]) -> List[MaskProposal]:
    return [m for m in decode(backend, emb, list(prompts)) if not m.degenerate]


@dataclass(frozen=True)
class TileTransform:
    """Affine map between an upscaled tile and its region of the original image.

    Continuous coordinates: ``x_orig = x0 + x_tile * sx``, ``y_orig = y0 + y_tile * sy``.
    """

    region: Tuple[int, int, int, int]  # (y0, y1, x0, x1) in the original image
    image_size: Tuple[int, int]  # (H, W), also the tile's upscaled size
    index: Tuple[int, int] = (0, 0)

    @property
    def scale(self) -> Tuple[float, float]:
        y0, y1, x0, x1 = self.region
        h, w = self.image_size
        return ((x1 - x0) / w, (y1 - y0) / h)

    def to_original(self, x: float, y: float) -> Tuple[float, float]:
        sx, sy = self.scale
        return (self.region[2] + x * sx, self.region[0] + y * sy)

    def to_tile(self, x: float, y: float) -> Tuple[float, float]:
        sx, sy = self.scale
        return ((x - self.region[2]) / sx, (y - self.region[0]) / sy)

    @property
    def is_identity(self) -> bool:
        return self.region == (0, self.image_size[0], 0, self.image_size[1])

    def interior_edges(self) -> Tuple[bool, bool, bool, bool]:
        """Whether the (top, bottom, left, right) tile borders are cuts inside the image."""
        y0, y1, x0, x1 = self.region
        h, w = self.image_size
        return (y0 > 0, y1 < h, x0 > 0, x1 < w)


@dataclass
class Tile:
    image: np.ndarray
    transform: TileTransform


def _nearest_index(n_src: int, n_dst: int) -> np.ndarray:
    """Source index sampled at each destination pixel center."""
    idx = np.floor((np.arange(n_dst) + 0.5) * n_src / n_dst).astype(np.int64)
    return np.clip(idx, 0, n_src - 1)


def tile_regions(height: int, width: int, n_p: int) -> List[Tuple[int, int, int, int]]:
    """``n_p x n_p`` exact partition; the last row/column absorbs the remainder."""
    ys = [i * (height // n_p) for i in range(n_p)] + [height]
    xs = [j * (width // n_p) for j in range(n_p)] + [width]
    return [(ys[i], ys[i + 1], xs[j], xs[j + 1]) for i in range(n_p) for j in range(n_p)]


def multiscale_expand(image, n_p: int) -> List[Tile]:
    """Cut the image into ``n_p x n_p`` tiles, each resized back to ``H x W``.

    Resizing is nearest-neighbour so tiles contain only original pixel values.
    """
    img = as_image(image)
    h, w = img.shape[:2]
    if n_p < 1 or n_p > min(h, w):
        raise InvalidParameterError(f"n_p={n_p} must be in [1, {min(h, w)}]")
    tiles = []
    for k, (y0, y1, x0, x1) in enumerate(tile_regions(h, w, n_p)):
        region = img[y0:y1, x0:x1]
        up = region[_nearest_index(y1 - y0, h)][:, _nearest_index(x1 - x0, w)]
        tiles.append(Tile(np.ascontiguousarray(up), TileTransform((y0, y1, x0, x1), (h, w), divmod(k, n_p))))
    return tiles


def crop_to_tile(mask: MaskProposal, transform: TileTransform) -> MaskProposal:
    """Forward-map an original-frame mask into tile coordinates (nearest)."""
    y0, y1, x0, x1 = transform.region
    h, w = transform.image_size
    region = mask.bitmap[y0:y1, x0:x1]
    up = region[_nearest_index(y1 - y0, h)][:, _nearest_index(x1 - x0, w)]
    return MaskProposal.from_bitmap(up, confidence=mask.confidence, tile=transform.index)


def remap_to_original(mask: MaskProposal, transform: TileTransform) -> MaskProposal:
    """Resample a tile-frame mask into the original frame, clipped to the tile's region."""
    h, w = transform.image_size
    if mask.degenerate:
        return replace(mask, crop=np.zeros((0, 0), bool), offset=(0, 0), image_size=(h, w),
                       tile=transform.index, meta=dict(mask.meta))
    y0, y1, x0, x1 = transform.region
    # original pixel u samples tile pixel floor((u - y0 + 0.5) * H / (y1 - y0))
    rows = _nearest_index(h, y1 - y0)
    cols = _nearest_index(w, x1 - x0)
    my0, mx0 = mask.offset
    mh, mw = mask.crop.shape
    r_sel = np.flatnonzero((rows >= my0) & (rows < my0 + mh))
    c_sel = np.flatnonzero((cols >= mx0) & (cols < mx0 + mw))
    out = np.zeros((h, w), dtype=bool)
    if r_sel.size and c_sel.size:
        sub = mask.crop[np.ix_(rows[r_sel] - my0, cols[c_sel] - mx0)]
        out[np.ix_(r_sel + y0, c_sel + x0)] = sub
    remapped = MaskProposal.from_bitmap(out, confidence=mask.confidence, tile=transform.index,
                                        meta=dict(mask.meta))
    return remapped


def touches_interior_edge(mask: MaskProposal, transform: TileTransform) -> bool:
    """True if a tile-frame mask reaches a tile border that cuts through the image."""
    if mask.degenerate:
        return False
    bx0, by0, bx1, by1 = mask.bbox
    h, w = transform.image_size
    top, bottom, left, right = transform.interior_edges()
    return (top and by0 == 0) or (bottom and by1 == h) or (left and bx0 == 0) or (right and bx1 == w)


def _boxes(masks: Sequence[MaskProposal]) -> np.ndarray:
    return np.array([m.bbox for m in masks], dtype=np.int64).reshape(-1, 4)


def _overlapping(boxes: np.ndarray, box) -> np.ndarray:
    return (
        (boxes[:, 0] < box[2]) & (boxes[:, 2] > box[0]) & (boxes[:, 1] < box[3]) & (boxes[:, 3] > box[1])
    )


def dedup_masks(masks: Sequence[MaskProposal], iou_threshold: float) -> List[MaskProposal]:
    """Greedy mask NMS: keep the higher-confidence member of every pair with IoU >= threshold.

    Ties in confidence go to the earlier mask. Survivors keep input order.
    """
    masks = list(masks)
    if not masks:
        return []
    # exact duplicates first; cheap and by far the most common case
    best = {}
    for i, m in enumerate(masks):
        j = best.get(m.digest)
        if j is None or m.confidence > masks[j].confidence:
            best[m.digest] = i
    unique = sorted(best.values())
    conf = np.array([masks[i].confidence for i in unique])
    order = [unique[k] for k in np.argsort(-conf, kind="stable")]
    boxes = _boxes([masks[i] for i in order])
    suppressed = np.zeros(len(order), dtype=bool)
    keep = []
    for a in range(len(order)):
        if suppressed[a]:
            continue
        keep.append(order[a])
        near = np.flatnonzero(_overlapping(boxes, boxes[a]) & ~suppressed)
        for b in near[near > a]:
            if mask_iou(masks[order[a]], masks[order[b]]) >= iou_threshold:
                suppressed[b] = True
    return [masks[i] for i in sorted(keep)]


def filter_and_dedup(pset: ProposalSet, iou_threshold: float = 0.8) -> ProposalSet:
    """Drop the background mask, reference duplicates, and mutual duplicates.

    The largest-area candidate is taken as background; it is removed together
    with every candidate duplicating it. This happens once per set, so the
    operation is idempotent.
    """
    cands = [m for m in pset.candidate_masks if not m.degenerate]
    removed = pset.background_removed
    if cands and not removed:
        areas = np.array([m.area for m in cands])
        bg = cands[int(np.argmax(areas))]
        cands = [m for m in cands if m is not bg and mask_iou(m, bg) < iou_threshold]
        removed = True

    refs = [r for r in pset.reference_masks if not r.degenerate]
    if refs and cands:
        boxes = _boxes(cands)
        drop = np.zeros(len(cands), dtype=bool)
        for r in refs:
            for i in np.flatnonzero(_overlapping(boxes, r.bbox) & ~drop):
                if mask_iou(cands[i], r) >= iou_threshold:
                    drop[i] = True
        cands = [m for m, d in zip(cands, drop) if not d]

    cands = dedup_masks(cands, iou_threshold)
    return ProposalSet(pset.reference_masks, cands, pset.image_size, background_removed=removed)
