"""Overlay and debug rendering."""
from __future__ import annotations

import colorsys
import json
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .matching import CountResult
from .structures import Box, MaskProposal, Point, as_image
from .superpixel import SuperpixelResult


def distinct_colors(n: int, seed: int = 0) -> np.ndarray:
    """``n`` well-separated RGB colors (golden-ratio hue walk)."""
    hues = (seed * 0.1 + np.arange(n) * 0.618033988749895) % 1.0
    return np.array([[int(255 * c) for c in colorsys.hsv_to_rgb(h, 0.85, 0.95)] for h in hues], dtype=np.uint8)


def _draw_box(draw: ImageDraw.ImageDraw, box: Box, width: int = 2):
    x0, y0, x1, y1 = box
    # black outer, white inner, so it reads on any background
    draw.rectangle([x0 - 1, y0 - 1, x1, y1], outline=(0, 0, 0), width=width)
    draw.rectangle([x0 + 1, y0 + 1, x1 - 2, y1 - 2], outline=(255, 255, 255), width=1)


def _draw_point(draw: ImageDraw.ImageDraw, p: Point, r: int = 4):
    draw.ellipse([p.x - r - 1, p.y - r - 1, p.x + r + 1, p.y + r + 1], fill=(0, 0, 0))
    draw.ellipse([p.x - r + 1, p.y - r + 1, p.x + r - 1, p.y + r - 1], fill=(255, 255, 255))


def _stamp_count(img: Image.Image, text: str):
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
    tw, th = right - left, bottom - top
    pad = 3
    x = img.width - tw - 2 * pad - 2
    y = img.height - th - 2 * pad - 2
    draw.rectangle([x, y, x + tw + 2 * pad, y + th + 2 * pad], fill=(0, 0, 0))
    draw.text((x + pad - left, y + pad - top), text, fill=(255, 255, 255), font=font)


def render_overlay(image, result: CountResult, references: Sequence = (), alpha: float = 0.5) -> np.ndarray:
    """Selected masks in distinct colors, references outlined, count in the bottom-right corner."""
    img = as_image(image).astype(np.float64)
    masks = [s.proposal for s in result.selected]
    colors = distinct_colors(len(masks))
    for m, c in zip(masks, colors):
        y0, x0 = m.offset
        h, w = m.crop.shape
        region = img[y0:y0 + h, x0:x0 + w]
        region[m.crop] = (1 - alpha) * region[m.crop] + alpha * c
    out = Image.fromarray(np.clip(np.rint(img), 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(out)
    for ref in references:
        if len(ref) == 4:
            _draw_box(draw, Box(*ref))
        else:
            _draw_point(draw, Point(*ref))
    _stamp_count(out, str(result.count))
    return np.asarray(out)


def save_png(array: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path)
    return path


def label_map_image(labels: np.ndarray) -> Image.Image:
    """Superpixel labels as a palette PNG with random colors."""
    n = int(labels.max()) + 1
    if n <= 256:
        img = Image.fromarray(labels.astype(np.uint8), mode="P")
        pal = np.random.default_rng(0).integers(0, 256, size=(256, 3), dtype=np.uint8)
        img.putpalette(pal.ravel().tolist())
        return img
    # more than a palette holds: store the label id in 16 bits
    return Image.fromarray(labels.astype(np.uint16))


def boundary_overlay(image, labels: np.ndarray) -> np.ndarray:
    img = as_image(image).copy()
    edge = np.zeros(labels.shape, dtype=bool)
    edge[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    edge[1:, :] |= labels[1:, :] != labels[:-1, :]
    img[edge] = (255, 255, 0)
    return img


def proposals_overlay(image, masks: Sequence[MaskProposal], alpha: float = 0.45) -> np.ndarray:
    """Every raw proposal tinted in its own color (overlaps blend)."""
    img = as_image(image).astype(np.float64)
    for m, c in zip(masks, distinct_colors(len(masks), seed=1)):
        y0, x0 = m.offset
        h, w = m.crop.shape
        region = img[y0:y0 + h, x0:x0 + w]
        region[m.crop] = (1 - alpha) * region[m.crop] + alpha * c
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_debug(out_dir, image, superpixels: Sequence[SuperpixelResult], proposals: Sequence[MaskProposal],
                prompts: Optional[List[Point]] = None) -> List[Path]:
    """Superpixel label maps, boundary overlays, raw proposals (PNG plus a packed ``.npz``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k, sp in enumerate(superpixels):
        tag = "full" if k == 0 else f"tile{k - 1}"
        p = out / f"superpixels_{tag}.png"
        label_map_image(sp.labels).save(p)
        written.append(p)
        if k == 0:
            written.append(save_png(boundary_overlay(image, sp.labels), out / "superpixel_boundaries.png"))
    written.append(save_png(proposals_overlay(image, proposals), out / "proposals.png"))
    npz = out / "proposals.npz"
    np.savez_compressed(
        npz,
        bitmaps=np.packbits(np.stack([m.bitmap for m in proposals]), axis=-1) if proposals
        else np.zeros((0, 0, 0), np.uint8),
        confidence=np.array([m.confidence for m in proposals]),
        tile=np.array([m.tile if m.tile is not None else (-1, -1) for m in proposals]).reshape(-1, 2),
        image_size=np.array(as_image(image).shape[:2]),
    )
    written.append(npz)
    meta = {"n_proposals": len(proposals), "n_superpixel_maps": len(superpixels),
            "n_clusters": [sp.n_clusters for sp in superpixels]}
    if prompts is not None:
        meta["prompts"] = [[float(p.x), float(p.y)] for p in prompts]
    (out / "debug.json").write_text(json.dumps(meta, indent=2))
    written.append(out / "debug.json")
    return written
