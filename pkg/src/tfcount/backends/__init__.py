"""Segmenter and semantic-encoder backends plus config-driven factories."""
from __future__ import annotations

from typing import Optional

from ..config import RunConfig, resolve_weights
from .base import (
    EmbeddedImage,
    SegmenterBackend,
    SegmenterInfo,
    SemanticEncoderBackend,
    SemanticInfo,
    decode,
    embed_semantic,
    encode,
    image_digest,
)
from .mock import MockSegmenter, MockSemanticEncoder
from .semantic import ENCODERS

__all__ = [
    "EmbeddedImage",
    "SegmenterBackend",
    "SegmenterInfo",
    "SemanticEncoderBackend",
    "SemanticInfo",
    "MockSegmenter",
    "MockSemanticEncoder",
    "ENCODERS",
    "build_segmenter",
    "build_semantic",
    "decode",
    "embed_semantic",
    "encode",
    "image_digest",
]


def build_segmenter(cfg: RunConfig) -> SegmenterBackend:
    s = cfg.segmenter
    if s.backend == "mock":
        return MockSegmenter(variant=s.variant, min_point_area=s.min_point_area)
    from .sam import SamSegmenter

    return SamSegmenter(variant=s.variant, weights_path=resolve_weights(s.weights_path),
                        device=s.device, points_per_batch=s.points_per_batch)


def build_semantic(cfg: RunConfig) -> Optional[SemanticEncoderBackend]:
    """Semantic encoder for ``cfg``, or ``None`` when segmenter features are used."""
    s = cfg.semantic
    if s.model == "segmenter":
        return None
    if s.model == "mock":
        return MockSemanticEncoder()
    if s.backend == "mock":
        return MockSemanticEncoder(grid=ENCODERS[s.model].grid, name=f"mock-{s.model}")
    from .semantic import HFSemanticEncoder

    return HFSemanticEncoder(s.model, weights_path=resolve_weights(s.weights_path), device=s.device)
