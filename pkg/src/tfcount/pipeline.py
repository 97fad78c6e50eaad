"""End-to-end counter: prompts -> proposals -> filtering -> features -> matching."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backends import build_segmenter, build_semantic
from .backends.base import EmbeddedImage, SegmenterBackend, SemanticEncoderBackend
from .config import MatchingConfig, RunConfig
from .errors import ReferenceFailureError
from .matching import (
    CountResult,
    Prototype,
    ScoredProposal,
    build_prototype,
    match_and_count,
    pool_mask_feature,
    prototype_from_features,
)
from .proposals import (
    ProposalSet,
    ReferenceSpec,
    filter_and_dedup,
    generate_candidates,
    generate_reference_masks,
    multiscale_expand,
    remap_to_original,
    touches_interior_edge,
)
from .structures import Box, FeatureMap, MaskProposal, Point, as_image
from .superpixel import SuperpixelParams, SuperpixelResult, centers_as_prompts, compute_superpixels, grid_prompts

logger = logging.getLogger(__name__)


@dataclass
class PreparedImage:
    """Everything up to (but excluding) similarity thresholding.

    Threshold and TPU sweeps reuse one prepared image per sample.
    """

    image_size: Tuple[int, int]
    proposals: ProposalSet
    features: np.ndarray  # (N, d) pooled candidate features
    prototype: Prototype
    n_counted_refs: int
    n_raw_candidates: int
    superpixels: List[SuperpixelResult] = field(default_factory=list)


def _collapse_exact(masks: Sequence[MaskProposal]) -> List[MaskProposal]:
    best: Dict[bytes, MaskProposal] = {}
    for m in masks:
        cur = best.get(m.digest)
        if cur is None or m.confidence > cur.confidence:
            best[m.digest] = m
    return list(best.values())


class Counter:
    """Training-free exemplar counter over a promptable segmenter.

    Backends default to those named in ``config``; pass instances to share
    them across counters or to inject test doubles.
    """

    def __init__(self, config: Optional[RunConfig] = None,
                 segmenter: Optional[SegmenterBackend] = None,
                 semantic: Optional[SemanticEncoderBackend] = None):
        self.config = (config or RunConfig()).validate()
        self.segmenter = segmenter or build_segmenter(self.config)
        if semantic is None and self.config.semantic.model != "segmenter":
            semantic = build_semantic(self.config)
        self.semantic = semantic if self.config.semantic.model != "segmenter" else None

    # -- stages ----------------------------------------------------------

    def prompts_for(self, image: np.ndarray) -> Tuple[List[Point], Optional[SuperpixelResult]]:
        h, w = image.shape[:2]
        if self.config.prompts.mode == "grid":
            side = min(self.config.prompts.grid_side, h, w)
            return grid_prompts(h, w, side), None
        sp = self.config.superpixel
        params = SuperpixelParams(min(sp.n_segments, h * w), sp.compactness, sp.max_iterations, self.config.seed)
        result = compute_superpixels(image, params)
        return centers_as_prompts(result), result

    def propose(self, image: np.ndarray, emb: EmbeddedImage):
        """Candidate masks in the original frame from the full image and, if enabled, its tiles."""
        prompts, sp = self.prompts_for(image)
        superpixels = [sp] if sp is not None else []
        cands = _collapse_exact(generate_candidates(self.segmenter, emb, prompts))
        ms = self.config.multiscale
        if ms.enabled and ms.n_p > 1:
            for tile in multiscale_expand(image, ms.n_p):
                t_emb = self.segmenter.encode(tile.image)
                t_prompts, t_sp = self.prompts_for(tile.image)
                if t_sp is not None:
                    superpixels.append(t_sp)
                t_masks = _collapse_exact(generate_candidates(self.segmenter, t_emb, t_prompts))
                if ms.drop_truncated:
                    t_masks = [m for m in t_masks if not touches_interior_edge(m, tile.transform)]
                remapped = [remap_to_original(m, tile.transform) for m in t_masks]
                cands.extend(m for m in remapped if not m.degenerate)
        return cands, superpixels

    def feature_map(self, image: np.ndarray, emb: EmbeddedImage) -> FeatureMap:
        if self.semantic is None:
            return self.segmenter.image_features(emb)
        return self.semantic.embed(image)

    def prepare(self, image, refs: Optional[ReferenceSpec] = None,
                prototype: Optional[Prototype] = None) -> PreparedImage:
        """Run every stage that does not depend on the matching thresholds.

        Give either in-image ``refs`` (counted toward the total) or a
        precomputed cross-image ``prototype`` (not counted).
        """
        if (refs is None) == (prototype is None):
            raise ValueError("pass exactly one of refs or prototype")
        img = as_image(image)
        h, w = img.shape[:2]
        emb = self.segmenter.encode(img)

        ref_masks: List[MaskProposal] = []
        if refs is not None:
            refs.validate(h, w)
            ref_masks = generate_reference_masks(self.segmenter, emb, refs)

        cands, superpixels = self.propose(img, emb)
        n_raw = len(cands)
        pset = filter_and_dedup(ProposalSet(ref_masks, cands, (h, w)), self.config.dedup.iou_threshold)

        fm = self.feature_map(img, emb)
        interp = self.config.matching.mask_interp
        if refs is not None:
            prototype = build_prototype(fm, ref_masks, interp)
        feats = np.stack([pool_mask_feature(fm, m, interp) for m in pset.candidate_masks]) \
            if pset.candidate_masks else np.zeros((0, fm.dim))
        return PreparedImage(
            image_size=(h, w),
            proposals=pset,
            features=feats,
            prototype=prototype,
            n_counted_refs=refs.n_ref if refs is not None else 0,
            n_raw_candidates=n_raw,
            superpixels=superpixels,
        )

    def select(self, prepared: PreparedImage, matching: Optional[MatchingConfig] = None) -> CountResult:
        m = matching or self.config.matching
        scored = [ScoredProposal(p, f) for p, f in zip(prepared.proposals.candidate_masks, prepared.features)]
        return match_and_count(prepared.prototype, scored, m.theta, m.delta, m.tpu_rounds,
                               prepared.n_counted_refs, prepared.proposals.reference_masks)

    def count(self, image, refs: ReferenceSpec) -> CountResult:
        return self.select(self.prepare(image, refs=refs))

    def count_with_prototype(self, image, prototype: Prototype) -> CountResult:
        return self.select(self.prepare(image, prototype=prototype))

    def exemplar_prototype(self, exemplars: Sequence[Tuple[np.ndarray, Box]]) -> Prototype:
        """Prototype pooled from exemplar boxes living in other images.

        Each distinct source image is encoded once; the prototype's
        ``n_ref`` is the number of exemplars that produced a usable mask.
        """
        by_image: Dict[int, Tuple[np.ndarray, List[Box]]] = {}
        for img, box in exemplars:
            by_image.setdefault(id(img), (img, []))[1].append(Box(*box))
        feats = []
        interp = self.config.matching.mask_interp
        for img, boxes in by_image.values():
            img = as_image(img)
            emb = self.segmenter.encode(img)
            masks = [m for m in self.segmenter.decode(emb, boxes) if not m.degenerate]
            if not masks:
                continue
            fm = self.feature_map(img, emb)
            feats.extend(pool_mask_feature(fm, m, interp) for m in masks)
        if not feats:
            raise ReferenceFailureError("no exemplar produced a usable mask")
        return prototype_from_features(np.stack(feats))
