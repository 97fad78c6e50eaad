"""Synthetic counting scenes with exact ground truth.

Scenes are flat-colored disks and squares on a uniform background. Each class
owns one palette color, so the mock backends can recover shapes and classes
from pixels alone and every count is exactly known.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .structures import Box, Point

# index 0 is the background; indices 1.. are object classes
PALETTE: Tuple[Tuple[int, int, int], ...] = (
    (34, 92, 52),
    (226, 84, 62),
    (64, 112, 232),
    (240, 212, 64),
    (172, 72, 204),
    (64, 214, 214),
)


@dataclass(frozen=True)
class Shape:
    kind: str  # "disk" | "square"
    cls: int
    cx: int
    cy: int
    radius: int

    def bitmap(self, height: int, width: int) -> np.ndarray:
        yy, xx = np.ogrid[:height, :width]
        if self.kind == "disk":
            return (xx - self.cx) ** 2 + (yy - self.cy) ** 2 <= self.radius ** 2
        return (np.abs(xx - self.cx) <= self.radius) & (np.abs(yy - self.cy) <= self.radius)

    @property
    def box(self) -> Box:
        r = self.radius
        return Box(self.cx - r, self.cy - r, self.cx + r + 1, self.cy + r + 1)

    @property
    def center(self) -> Point:
        return Point(self.cx, self.cy)


@dataclass
class Scene:
    height: int
    width: int
    shapes: List[Shape]
    target_class: int = 1
    n_refs: int = 3
    palette: Sequence[Tuple[int, int, int]] = PALETTE
    name: str = "scene"

    @property
    def targets(self) -> List[Shape]:
        return [s for s in self.shapes if s.cls == self.target_class]

    @property
    def references(self) -> List[Shape]:
        return self.targets[: self.n_refs]

    @property
    def count(self) -> int:
        return len(self.targets)

    def reference_boxes(self) -> List[Box]:
        return [s.box for s in self.references]

    def reference_points(self) -> List[Point]:
        return [s.center for s in self.references]

    def render(self) -> np.ndarray:
        img = np.empty((self.height, self.width, 3), dtype=np.uint8)
        img[:] = self.palette[0]
        for s in self.shapes:
            img[s.bitmap(self.height, self.width)] = self.palette[s.cls]
        return img


def _place(rng, height, width, radius, placed, gap, avoid_lines):
    margin = radius + 1
    for _ in range(400):
        cx = int(rng.integers(margin, width - margin))
        cy = int(rng.integers(margin, height - margin))
        if any(abs(cy - y) <= radius + 1 for y in avoid_lines[0]) or any(
            abs(cx - x) <= radius + 1 for x in avoid_lines[1]
        ):
            continue
        ok = True
        for s in placed:
            # squares reach sqrt(2)*r from the center
            if np.hypot(cx - s.cx, cy - s.cy) < 1.42 * (radius + s.radius) + gap:
                ok = False
                break
        if ok:
            return cx, cy
    return None


def generate_scene(
    rng: np.random.Generator,
    height: int = 192,
    width: int = 192,
    n_targets: int = 10,
    n_distractors: int = 5,
    radius: Tuple[int, int] = (5, 8),
    distractor_radius: Optional[Tuple[int, int]] = None,
    target_kind: Optional[str] = None,
    n_refs: int = 3,
    ref_radius: Optional[Tuple[int, int]] = None,
    gap: int = 3,
    avoid_tile_lines: int = 0,
    name: str = "scene",
    target_class: Optional[int] = None,
) -> Scene:
    """Random non-overlapping scene with one target class and one distractor class.

    ``avoid_tile_lines`` keeps shapes off the interior cut lines of an
    ``n x n`` tiling. ``ref_radius`` overrides the size of the first
    ``n_refs`` targets. Shapes that cannot be placed are skipped, so the
    returned scene may hold fewer shapes than requested; ``Scene.count`` is
    always exact. A fixed ``target_class`` keeps the category shared across
    scenes (cross-image exemplars).
    """
    target_cls, distractor_cls = (int(c) for c in rng.choice(np.arange(1, len(PALETTE)), 2, replace=False))
    if target_class is not None:
        if not 1 <= target_class < len(PALETTE):
            raise ValueError(f"target_class must be in [1, {len(PALETTE) - 1}]")
        if distractor_cls == target_class:
            distractor_cls = target_cls
        target_cls = int(target_class)
    target_kind = target_kind or str(rng.choice(["disk", "square"]))
    other_kind = "square" if target_kind == "disk" else "disk"
    distractor_radius = distractor_radius or radius
    lines = ([], [])
    if avoid_tile_lines > 1:
        lines = (
            [height * i // avoid_tile_lines for i in range(1, avoid_tile_lines)],
            [width * i // avoid_tile_lines for i in range(1, avoid_tile_lines)],
        )

    placed: List[Shape] = []
    plan = [(target_cls, target_kind, ref_radius or radius)] * min(n_refs, n_targets)
    plan += [(target_cls, target_kind, radius)] * max(0, n_targets - n_refs)
    plan += [(distractor_cls, str(rng.choice([other_kind, target_kind])), distractor_radius)] * n_distractors
    for cls, kind, (rlo, rhi) in plan:
        r = int(rng.integers(rlo, rhi + 1))
        pos = _place(rng, height, width, r, placed, gap, lines)
        if pos is not None:
            placed.append(Shape(kind, cls, pos[0], pos[1], r))
    return Scene(height, width, placed, target_class=target_cls, n_refs=n_refs, name=name)


def generate_corpus(seed: int, n_scenes: int, **kwargs) -> List[Scene]:
    """Deterministic corpus; target counts drawn from ``count_range``."""
    count_range = kwargs.pop("count_range", (5, 60))
    distractor_range = kwargs.pop("distractor_range", (0, 10))
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n_scenes):
        n_t = int(rng.integers(count_range[0], count_range[1] + 1))
        n_d = int(rng.integers(distractor_range[0], distractor_range[1] + 1))
        scenes.append(generate_scene(rng, n_targets=n_t, n_distractors=n_d, name=f"scene_{i:04d}", **kwargs))
    return scenes


def tiny_object_corpus(seed: int, n_scenes: int, size: int = 160) -> List[Scene]:
    """Scenes of tiny targets plus larger distractors of another class.

    Targets (radius 2) fall below the mock segmenter's point-prompt resolution
    at full scale; references are drawn larger so box prompts resolve them.
    """
    return generate_corpus(
        seed, n_scenes, height=size, width=size, radius=(2, 2), ref_radius=(5, 6),
        distractor_radius=(5, 7), target_kind="disk", count_range=(8, 20),
        distractor_range=(3, 8), gap=4, avoid_tile_lines=2,
    )
