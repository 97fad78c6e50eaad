"""FSC-147 and CARPK ingestion, plus writers that lay out synthetic scenes in the same formats."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import IngestionError
from .proposals import ReferenceSpec
from .structures import Box, Point, as_image
from .synthetic import Scene

logger = logging.getLogger(__name__)

FSC147_TEST_SIZE = 1190
CARPK_TEST_SIZE = 459
CARPK_EXEMPLARS = 12

FSC147_ANNOTATIONS = "annotation_FSC147_384.json"
FSC147_SPLITS = "Train_Test_Val_FSC_147.json"
FSC147_IMAGES = "images_384_VarV2"
FSC147_CLASSES = "ImageClasses_FSC147.txt"


@dataclass
class AnnotatedSample:
    sample_id: str
    image_path: Optional[str]
    boxes: List[Box]
    gt_count: int
    split: str = "test"
    category: Optional[str] = None
    image: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def points(self) -> List[Point]:
        """Exemplar center points (the point-reference format)."""
        return [b.center for b in self.boxes]

    def load_image(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        try:
            with Image.open(self.image_path) as im:
                return as_image(np.asarray(im.convert("RGB")))
        except OSError as exc:
            raise IngestionError(f"cannot read image {self.image_path}: {exc}") from exc

    def references(self, fmt: str = "box") -> Optional[ReferenceSpec]:
        if not self.boxes:
            return None
        return ReferenceSpec(fmt, self.boxes if fmt == "box" else self.points)


@dataclass(frozen=True)
class Exemplar:
    """A reference box in some other (training) image."""

    exemplar_id: str
    image_path: str
    box: Box


def _read_json(path: Path):
    if not path.is_file():
        raise IngestionError(f"missing file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestionError(f"malformed JSON in {path}: {exc}") from exc


def _check_root(root) -> Path:
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root does not exist: {root}")
    if not any(root.iterdir()):
        raise IngestionError(f"dataset root is empty: {root}")
    return root


def _fsc_box(corners, sample_id: str) -> Box:
    # four corners [[x1, y1], [x1, y2], [x2, y2], [x2, y1]]
    try:
        pts = np.asarray(corners, dtype=np.float64).reshape(-1, 2)
    except (TypeError, ValueError):
        raise IngestionError(f"{sample_id}: malformed exemplar box {corners!r}") from None
    if len(pts) < 2:
        raise IngestionError(f"{sample_id}: exemplar box needs at least two corners")
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    if x1 <= x0 or y1 <= y0:
        raise IngestionError(f"{sample_id}: degenerate exemplar box {corners!r}")
    return Box(float(x0), float(y0), float(x1), float(y1))


def load_fsc147(root, split: str = "test", limit: Optional[int] = None,
                check_images: bool = True) -> List[AnnotatedSample]:
    """Read one split of FSC-147 in its released layout.

    The ground-truth count is the number of annotated points. Exemplar boxes
    are clipped to the image when the record carries ``H``/``W`` or the image
    is readable.
    """
    root = _check_root(root)
    annotations = _read_json(root / FSC147_ANNOTATIONS)
    splits = _read_json(root / FSC147_SPLITS)
    if split not in splits:
        raise IngestionError(f"split {split!r} not in {root / FSC147_SPLITS}")
    classes: Dict[str, str] = {}
    cls_file = root / FSC147_CLASSES
    if cls_file.is_file():
        for line in cls_file.read_text().splitlines():
            parts = line.split("\t") if "\t" in line else line.split(None, 1)
            if len(parts) == 2:
                classes[parts[0].strip()] = parts[1].strip()

    ids = list(splits[split])
    if limit is not None:
        ids = ids[:limit]
    elif split == "test" and len(ids) != FSC147_TEST_SIZE:
        logger.warning("FSC-147 test split has %d images (expected %d)", len(ids), FSC147_TEST_SIZE)

    samples = []
    for sid in ids:
        rec = annotations.get(sid)
        if rec is None:
            raise IngestionError(f"{sid}: no annotation record")
        if "box_examples_coordinates" not in rec or "points" not in rec:
            raise IngestionError(f"{sid}: record lacks box_examples_coordinates/points")
        boxes = [_fsc_box(c, sid) for c in rec["box_examples_coordinates"]]
        if not boxes:
            raise IngestionError(f"{sid}: record has no exemplar boxes")
        gt = len(rec["points"])
        if gt < len(boxes):
            raise IngestionError(f"{sid}: {gt} points but {len(boxes)} exemplars")
        path = root / FSC147_IMAGES / sid
        if check_images and not path.is_file():
            raise IngestionError(f"{sid}: image not found at {path}")
        if "H" in rec and "W" in rec:
            h, w = int(rec["H"]), int(rec["W"])
            boxes = [Box(max(0.0, b.x0), max(0.0, b.y0), min(float(w), b.x1), min(float(h), b.y1)) for b in boxes]
        samples.append(AnnotatedSample(sid, str(path), boxes, gt, split, classes.get(sid)))
    return samples


def _carpk_root(root) -> Path:
    root = _check_root(root)
    for cand in (root, root / "data", root / "CARPK_devkit" / "data"):
        if (cand / "ImageSets").is_dir():
            return cand
    raise IngestionError(f"no ImageSets directory under {root}")


def _carpk_boxes(path: Path, sample_id: str) -> List[Box]:
    if not path.is_file():
        raise IngestionError(f"{sample_id}: annotation not found at {path}")
    boxes = []
    for n, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        parts = line.split()
        try:
            x0, y0, x1, y1 = (float(v) for v in parts[:4])
        except ValueError:
            raise IngestionError(f"{sample_id}: malformed box on line {n + 1} of {path}") from None
        boxes.append(Box(x0, y0, x1, y1))
    return boxes


def _carpk_ids(root: Path, split: str) -> List[str]:
    f = root / "ImageSets" / f"{split}.txt"
    if not f.is_file():
        raise IngestionError(f"missing split file: {f}")
    return [line.strip() for line in f.read_text().splitlines() if line.strip()]


def _carpk_image(root: Path, sid: str) -> Path:
    for ext in (".png", ".jpg"):
        p = root / "Images" / f"{sid}{ext}"
        if p.is_file():
            return p
    raise IngestionError(f"{sid}: image not found under {root / 'Images'}")


def load_carpk(root, split: str = "test", n_exemplars: int = CARPK_EXEMPLARS, seed: int = 0,
               limit: Optional[int] = None) -> Tuple[List[AnnotatedSample], List[Exemplar]]:
    """Read CARPK test samples plus ``n_exemplars`` boxes sampled from the train split.

    Test samples carry no in-image exemplars; the shared exemplars are drawn
    uniformly (seeded) from all training boxes and identified as
    ``<image id>#<box index>``.
    """
    root = _carpk_root(root)
    ids = _carpk_ids(root, split)
    if limit is not None:
        ids = ids[:limit]
    elif split == "test" and len(ids) != CARPK_TEST_SIZE:
        logger.warning("CARPK test split has %d images (expected %d)", len(ids), CARPK_TEST_SIZE)
    samples = []
    for sid in ids:
        boxes = _carpk_boxes(root / "Annotations" / f"{sid}.txt", sid)
        samples.append(AnnotatedSample(sid, str(_carpk_image(root, sid)), [], len(boxes), split, "car"))

    pool = []
    for tid in _carpk_ids(root, "train"):
        for k, b in enumerate(_carpk_boxes(root / "Annotations" / f"{tid}.txt", tid)):
            pool.append((tid, k, b))
    if len(pool) < n_exemplars:
        raise IngestionError(f"only {len(pool)} training boxes available, need {n_exemplars}")
    rng = np.random.default_rng(seed)
    picks = sorted(rng.choice(len(pool), size=n_exemplars, replace=False).tolist())
    exemplars = [Exemplar(f"{pool[i][0]}#{pool[i][1]}", str(_carpk_image(root, pool[i][0])), pool[i][2])
                 for i in picks]
    return samples, exemplars


def scenes_to_samples(scenes: Sequence[Scene]) -> List[AnnotatedSample]:
    """In-memory samples for synthetic scenes (no files involved)."""
    return [AnnotatedSample(s.name, None, s.reference_boxes(), s.count, "test", "synthetic", image=s.render())
            for s in scenes]


def write_fsc147(root, scenes: Sequence[Scene], split: str = "test") -> Path:
    """Lay out synthetic scenes as an FSC-147-style dataset."""
    root = Path(root)
    (root / FSC147_IMAGES).mkdir(parents=True, exist_ok=True)
    annotations, names = {}, []
    for s in scenes:
        name = f"{s.name}.png"
        Image.fromarray(s.render()).save(root / FSC147_IMAGES / name)
        corners = [[[b.x0, b.y0], [b.x0, b.y1], [b.x1, b.y1], [b.x1, b.y0]] for b in s.reference_boxes()]
        annotations[name] = {
            "box_examples_coordinates": corners,
            "points": [[float(t.cx), float(t.cy)] for t in s.targets],
            "H": s.height,
            "W": s.width,
        }
        names.append(name)
    (root / FSC147_ANNOTATIONS).write_text(json.dumps(annotations))
    (root / FSC147_SPLITS).write_text(json.dumps({"train": [], "val": [], split: names}))
    (root / FSC147_CLASSES).write_text("".join(f"{n}\tsynthetic\n" for n in names))
    return root


def write_carpk(root, train: Sequence[Scene], test: Sequence[Scene]) -> Path:
    """Lay out synthetic scenes as a CARPK-style dataset (boxes of target-class shapes)."""
    root = Path(root)
    for d in ("Images", "Annotations", "ImageSets"):
        (root / d).mkdir(parents=True, exist_ok=True)
    for split, scenes in (("train", train), ("test", test)):
        for s in scenes:
            Image.fromarray(s.render()).save(root / "Images" / f"{s.name}.png")
            lines = [f"{int(b.x0)} {int(b.y0)} {int(b.x1)} {int(b.y1)} 1" for b in (t.box for t in s.targets)]
            (root / "Annotations" / f"{s.name}.txt").write_text("\n".join(lines) + "\n")
        (root / "ImageSets" / f"{split}.txt").write_text("".join(f"{s.name}\n" for s in scenes))
    return root
