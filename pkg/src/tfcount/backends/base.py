"""Model-facing interfaces: a promptable segmenter and a semantic patch encoder."""
from __future__ import annotations

import abc
import hashlib
from dataclasses import dataclass, field
from typing import Any, List, Sequence, Tuple

import numpy as np

from ..structures import FeatureMap, MaskProposal, Prompt


def image_digest(image: np.ndarray) -> str:
    h = hashlib.sha1()
    h.update(np.asarray(image.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(image).tobytes())
    return h.hexdigest()


@dataclass
class EmbeddedImage:
    """Encoder output for one image, reusable across any number of decodes."""

    image_size: Tuple[int, int]
    digest: str
    state: Any = field(repr=False, default=None)


@dataclass(frozen=True)
class SegmenterInfo:
    name: str
    variant: str
    input_resolution: int
    prompt_batch: int


@dataclass(frozen=True)
class SemanticInfo:
    name: str
    grid: Tuple[int, int]
    dim: int


class SegmenterBackend(abc.ABC):
    info: SegmenterInfo

    @abc.abstractmethod
    def encode(self, image: np.ndarray) -> EmbeddedImage:
        ...

    @abc.abstractmethod
    def decode(self, emb: EmbeddedImage, prompts: Sequence[Prompt]) -> List[MaskProposal]:
        """One mask per prompt, in prompt order.

        Out-of-bounds prompts yield an empty mask with ``error`` set; prompts
        the model cannot resolve yield an empty (degenerate) mask.
        """

    @abc.abstractmethod
    def image_features(self, emb: EmbeddedImage) -> FeatureMap:
        """The segmenter's own encoder features, used when no semantic encoder is enabled."""


class SemanticEncoderBackend(abc.ABC):
    info: SemanticInfo

    @abc.abstractmethod
    def embed(self, image: np.ndarray) -> FeatureMap:
        ...


def encode(backend: SegmenterBackend, image: np.ndarray) -> EmbeddedImage:
    return backend.encode(image)


def decode(backend: SegmenterBackend, emb: EmbeddedImage, prompts: Sequence[Prompt]) -> List[MaskProposal]:
    if len(prompts) == 0:
        return []
    return backend.decode(emb, prompts)


def embed_semantic(backend: SemanticEncoderBackend, image: np.ndarray) -> FeatureMap:
    return backend.embed(image)
