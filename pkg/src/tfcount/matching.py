"""Region-of-mask features, prototype matching, transductive updating, and counting."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidParameterError, ReferenceFailureError
from .structures import FeatureMap, MaskProposal, area_weights


def mask_grid_weights(mask: MaskProposal, grid_size: Tuple[int, int], interp: str = "soft") -> np.ndarray:
    """Resample a full-resolution mask onto the feature grid.

    ``soft``: fraction of each cell covered by the mask (area-weighted).
    ``hard``: the mask value at each cell center (nearest neighbour).
    """
    gh, gw = grid_size
    h, w = mask.image_size
    out = np.zeros((gh, gw))
    if mask.degenerate:
        return out
    y0, x0 = mask.offset
    mh, mw = mask.crop.shape
    if interp == "soft":
        ay = area_weights(h, gh)[:, y0:y0 + mh]
        ax = area_weights(w, gw)[:, x0:x0 + mw]
        return ay @ mask.crop.astype(np.float64) @ ax.T
    if interp != "hard":
        raise InvalidParameterError(f"unknown mask interpolation {interp!r}")
    cy = np.floor((np.arange(gh) + 0.5) * h / gh).astype(int) - y0
    cx = np.floor((np.arange(gw) + 0.5) * w / gw).astype(int) - x0
    ry = (cy >= 0) & (cy < mh)
    rx = (cx >= 0) & (cx < mw)
    out[np.ix_(ry, rx)] = mask.crop[np.ix_(cy[ry], cx[rx])]
    return out


def pool_mask_feature(fm: FeatureMap, mask: MaskProposal, interp: str = "soft") -> np.ndarray:
    """Masked average of the feature grid under ``mask``.

    Falls back to the cell containing the mask centroid when the resampled
    mask carries no weight (possible for tiny masks in ``hard`` mode); an
    empty mask pools to the zero vector.
    """
    wts = mask_grid_weights(mask, fm.grid_size, interp)
    total = wts.sum()
    if total > 0:
        return np.tensordot(wts, fm.grid, axes=([0, 1], [0, 1])) / total
    if mask.degenerate:
        return np.zeros(fm.dim)
    cx, cy = mask.centroid
    h, w = mask.image_size
    gh, gw = fm.grid_size
    i = min(gh - 1, int((cy + 0.5) * gh / h))
    j = min(gw - 1, int((cx + 0.5) * gw / w))
    return fm.grid[i, j].copy()


@dataclass
class Prototype:
    vector: np.ndarray
    n_ref: int
    support_count: float
    update_round: int = 0


@dataclass
class ScoredProposal:
    proposal: MaskProposal
    feature: np.ndarray
    similarity: float = -1.0


@dataclass
class CountResult:
    count: int
    n_ref: int
    theta: float
    selected: List[ScoredProposal]
    scored: List[ScoredProposal]
    reference_masks: List[MaskProposal] = field(default_factory=list)
    prototype: Optional[Prototype] = None


def build_prototype(fm: FeatureMap, ref_masks: Sequence[MaskProposal], interp: str = "soft") -> Prototype:
    """Unweighted mean of the pooled features of the non-degenerate references."""
    usable = [m for m in ref_masks if not m.degenerate]
    if not usable:
        raise ReferenceFailureError("no non-degenerate reference mask to build a prototype from")
    feats = np.stack([pool_mask_feature(fm, m, interp) for m in usable])
    return prototype_from_features(feats)


def prototype_from_features(features: np.ndarray) -> Prototype:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    vec = features.mean(axis=0)
    if not np.any(vec) or not np.all(np.isfinite(vec)):
        raise ReferenceFailureError("reference prototype is zero or non-finite")
    return Prototype(vector=vec, n_ref=len(features), support_count=float(len(features)))


def cosine_similarities(vector: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Cosine of each row of ``features`` against ``vector``; zero-norm rows score -1."""
    features = np.atleast_2d(features)
    if features.shape[0] == 0:
        return np.zeros(0)
    norms = np.linalg.norm(features, axis=1)
    pnorm = np.linalg.norm(vector)
    out = np.full(len(features), -1.0)
    ok = (norms > 0) & (pnorm > 0)
    out[ok] = (features[ok] @ vector) / (norms[ok] * pnorm)
    return np.clip(out, -1.0, 1.0)


def score_proposals(proto: Prototype, scored: Sequence[ScoredProposal]) -> List[ScoredProposal]:
    if not scored:
        return []
    sims = cosine_similarities(proto.vector, np.stack([s.feature for s in scored]))
    return [replace(s, similarity=float(v)) for s, v in zip(scored, sims)]


def transductive_update(proto: Prototype, scored: Sequence[ScoredProposal], delta: float) -> Prototype:
    """Fold confident candidates into the prototype.

    ``new = (n_ref * P + sum_{S_i > delta} F_i) / (n_ref + #{S_i > delta})``
    """
    picked = [s.feature for s in scored if s.similarity > delta]
    if not picked:
        return replace(proto, update_round=proto.update_round + 1)
    k = len(picked)
    total = proto.n_ref * proto.vector + np.sum(picked, axis=0)
    return Prototype(
        vector=total / (proto.n_ref + k),
        n_ref=proto.n_ref,
        support_count=proto.support_count + k,
        update_round=proto.update_round + 1,
    )


def count(scored: Sequence[ScoredProposal], theta: float, n_ref: int,
          reference_masks: Sequence[MaskProposal] = ()) -> CountResult:
    """``n_ref`` plus the number of candidates scoring strictly above ``theta``."""
    selected = [s for s in scored if s.similarity > theta]
    return CountResult(
        count=int(n_ref) + len(selected),
        n_ref=int(n_ref),
        theta=float(theta),
        selected=selected,
        scored=list(scored),
        reference_masks=list(reference_masks),
    )


def match_and_count(proto: Prototype, scored: Sequence[ScoredProposal], theta: float, delta: float,
                    rounds: int, n_counted_refs: int,
                    reference_masks: Sequence[MaskProposal] = ()) -> CountResult:
    """Score, run ``rounds`` of transductive updating with rescoring, then count."""
    scored = score_proposals(proto, scored)
    for _ in range(rounds):
        proto = transductive_update(proto, scored, delta)
        scored = score_proposals(proto, scored)
    result = count(scored, theta, n_counted_refs, reference_masks)
    result.prototype = proto
    return result
