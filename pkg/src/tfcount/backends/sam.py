"""Segment Anything adapter over a serialized checkpoint.

Requires the ``segment_anything`` package (``pip install tfcount[sam]``).
The checkpoint file is an external input; nothing is downloaded.
"""
from __future__ import annotations

import logging
import math
import threading
from typing import List, Sequence

import numpy as np

from ..errors import BackendLoadError
from ..structures import Box, FeatureMap, MaskProposal, as_image, prompt_in_bounds
from .base import EmbeddedImage, SegmenterBackend, SegmenterInfo, image_digest

logger = logging.getLogger(__name__)

SAM_RESOLUTION = 1024
SAM_PATCH = 16


class SamSegmenter(SegmenterBackend):
    """Promptable segmenter backed by ``segment_anything.SamPredictor``.

    With ``multimask_output`` the decoder emits three candidates per prompt;
    the one with the highest predicted IoU is kept.
    """

    def __init__(self, variant: str = "vit_h", weights_path=None, device: str = "cpu",
                 points_per_batch: int = 64, model=None):
        try:
            import torch  # noqa: F401
            from segment_anything import SamPredictor, sam_model_registry
        except ImportError as exc:
            raise BackendLoadError(f"segment_anything is not installed: {exc}") from exc
        if model is None:
            if weights_path is None:
                raise BackendLoadError("segmenter.weights_path is required for the sam backend")
            if variant not in sam_model_registry:
                raise BackendLoadError(f"unknown SAM variant {variant!r}")
            try:
                model = sam_model_registry[variant](checkpoint=weights_path)
            except (OSError, RuntimeError) as exc:
                raise BackendLoadError(f"cannot load SAM weights from {weights_path}: {exc}") from exc
        model.to(device).eval()
        self.device = device
        self.predictor = SamPredictor(model)
        self.points_per_batch = points_per_batch
        self._lock = threading.Lock()
        self.info = SegmenterInfo(name="sam", variant=variant, input_resolution=SAM_RESOLUTION,
                                  prompt_batch=points_per_batch)

    def encode(self, image) -> EmbeddedImage:
        img = as_image(image)
        with self._lock:
            self.predictor.set_image(img)
            state = {
                "features": self.predictor.features,
                "original_size": self.predictor.original_size,
                "input_size": self.predictor.input_size,
            }
            self.predictor.reset_image()
        return EmbeddedImage(image_size=img.shape[:2], digest=image_digest(img), state=state)

    def _restore(self, emb: EmbeddedImage):
        p = self.predictor
        p.features = emb.state["features"]
        p.original_size = emb.state["original_size"]
        p.input_size = emb.state["input_size"]
        p.is_image_set = True

    def _run(self, points=None, boxes=None):
        import torch

        p = self.predictor
        size = p.original_size
        if points is not None:
            coords = p.transform.apply_coords(np.asarray(points, dtype=np.float64), size)
            coords = torch.as_tensor(coords, dtype=torch.float, device=self.device)[:, None, :]
            labels = torch.ones(coords.shape[:2], dtype=torch.int, device=self.device)
            masks, iou, _ = p.predict_torch(coords, labels, multimask_output=True)
        else:
            tb = p.transform.apply_boxes(np.asarray(boxes, dtype=np.float64), size)
            tb = torch.as_tensor(tb, dtype=torch.float, device=self.device)
            masks, iou, _ = p.predict_torch(None, None, boxes=tb, multimask_output=True)
        best = iou.argmax(dim=1)
        idx = torch.arange(len(best))
        return masks[idx, best].cpu().numpy(), iou[idx, best].float().cpu().numpy()

    def decode(self, emb: EmbeddedImage, prompts: Sequence) -> List[MaskProposal]:
        h, w = emb.image_size
        out: List[MaskProposal] = [None] * len(prompts)
        groups = {"point": [], "box": []}
        for i, pr in enumerate(prompts):
            if not prompt_in_bounds(pr, h, w):
                out[i] = MaskProposal.empty((h, w), error=f"prompt out of bounds: {tuple(pr)}")
            else:
                groups["box" if isinstance(pr, Box) else "point"].append(i)
        with self._lock:
            self._restore(emb)
            try:
                for kind, ids in groups.items():
                    for start in range(0, len(ids), self.points_per_batch):
                        batch = ids[start:start + self.points_per_batch]
                        geom = [tuple(prompts[i]) for i in batch]
                        if kind == "point":
                            masks, scores = self._run(points=geom)
                        else:
                            masks, scores = self._run(boxes=geom)
                        for i, m, s in zip(batch, masks, scores):
                            out[i] = MaskProposal.from_bitmap(m, confidence=float(s))
            finally:
                self.predictor.reset_image()
        return out

    def image_features(self, emb: EmbeddedImage) -> FeatureMap:
        feats = emb.state["features"][0].float().cpu().numpy()  # (C, 64, 64), padded square
        ih, iw = emb.state["input_size"]
        gh = max(1, math.ceil(ih / SAM_PATCH))
        gw = max(1, math.ceil(iw / SAM_PATCH))
        return FeatureMap(np.moveaxis(feats[:, :gh, :gw], 0, -1), emb.image_size)
