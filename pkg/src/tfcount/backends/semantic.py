"""Semantic patch encoders (CLIP, DINO, DINOv2) loaded with ``transformers``.

Weights are read from a local directory in the Hugging Face format
(``config.json`` + weights); nothing is fetched from the network.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import BackendLoadError
from ..structures import FeatureMap, as_image
from .base import SemanticEncoderBackend, SemanticInfo

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


@dataclass(frozen=True)
class EncoderSpec:
    resolution: int
    patch: int
    mean: Tuple[float, float, float]
    std: Tuple[float, float, float]
    loader: str

    @property
    def grid(self) -> Tuple[int, int]:
        n = self.resolution // self.patch
        return (n, n)


# patch grids: CLIP 16x16, DINO 28x28, DINOv2 37x37
ENCODERS = {
    "clip": EncoderSpec(224, 14, CLIP_MEAN, CLIP_STD, "clip"),
    "dino": EncoderSpec(224, 8, IMAGENET_MEAN, IMAGENET_STD, "vit"),
    "dinov2": EncoderSpec(518, 14, IMAGENET_MEAN, IMAGENET_STD, "auto"),
}


def _load(spec: EncoderSpec, weights_path):
    try:
        import transformers
    except ImportError as exc:
        raise BackendLoadError(f"transformers is not installed: {exc}") from exc
    cls = {
        "clip": transformers.CLIPVisionModel,
        "vit": transformers.ViTModel,
        "auto": transformers.AutoModel,
    }[spec.loader]
    try:
        kwargs = {"add_pooling_layer": False} if spec.loader == "vit" else {}
        return cls.from_pretrained(weights_path, local_files_only=True, **kwargs)
    except (OSError, ValueError) as exc:
        raise BackendLoadError(f"cannot load semantic encoder from {weights_path}: {exc}") from exc


class HFSemanticEncoder(SemanticEncoderBackend):
    """Patch-token features from a ViT, reshaped to the encoder's square grid.

    The image is resized (bilinear) to the encoder's square input resolution,
    so grid cells cover the full image in normalised coordinates.
    """

    def __init__(self, model_name: str = "dinov2", weights_path=None, device: str = "cpu", model=None):
        if model_name not in ENCODERS:
            raise BackendLoadError(f"unknown semantic model {model_name!r}")
        self.spec = ENCODERS[model_name]
        if model is None:
            if weights_path is None:
                raise BackendLoadError("semantic.weights_path is required for the hf backend")
            model = _load(self.spec, weights_path)
        self.model = model.to(device).eval()
        self.device = device
        self._lock = threading.Lock()
        dim = int(getattr(model.config, "hidden_size", 0))
        self.info = SemanticInfo(name=model_name, grid=self.spec.grid, dim=dim)

    def _preprocess(self, img: np.ndarray):
        import torch
        import torch.nn.functional as F

        t = torch.from_numpy(img).permute(2, 0, 1)[None].float() / 255.0
        r = self.spec.resolution
        t = F.interpolate(t, size=(r, r), mode="bilinear", align_corners=False, antialias=True)
        mean = torch.tensor(self.spec.mean).view(1, 3, 1, 1)
        std = torch.tensor(self.spec.std).view(1, 3, 1, 1)
        return ((t - mean) / std).to(self.device)

    def embed(self, image) -> FeatureMap:
        import torch

        img = as_image(image)
        gh, gw = self.spec.grid
        with self._lock, torch.no_grad():
            out = self.model(pixel_values=self._preprocess(img))
        tokens = out.last_hidden_state[0]
        # drop the class token and any register tokens in front of the patches
        patches = tokens[-gh * gw:].float().cpu().numpy()
        return FeatureMap(patches.reshape(gh, gw, -1), img.shape[:2])
