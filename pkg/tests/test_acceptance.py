"""Desk-scale acceptance suite.

Each test is one acceptance criterion; the terminal summary prints a
PASS/FAIL/SKIP line per criterion (see ``conftest.py``). Run alone with::

    pytest tests/test_acceptance.py -v
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from oracles import pooled_feature_loop, tpu_direct
from tfcount.config import mock_config
from tfcount.datasets import load_fsc147, scenes_to_samples
from tfcount.eval import COMPONENTS, apply_components, compute_metrics, parse_components, run_eval, run_sweep
from tfcount.matching import (
    Prototype,
    ScoredProposal,
    count,
    pool_mask_feature,
    score_proposals,
    transductive_update,
)
from tfcount.proposals import TileTransform, crop_to_tile, remap_to_original, tile_regions
from tfcount.structures import FeatureMap, MaskProposal, mask_iou
from tfcount.superpixel import SuperpixelParams, compute_superpixels, initial_seeds
from tfcount.synthetic import generate_corpus, tiny_object_corpus

FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def _rect(h, w, x0, y0, x1, y1):
    m = np.zeros((h, w), bool)
    m[y0:y1, x0:x1] = True
    return m


# -- end to end ---------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion("mock end-to-end exactness: 50 scenes, MAE = RMSE = 0, < 60 s")
def test_mock_end_to_end_exact():
    scenes = generate_corpus(2024, 50, count_range=(5, 60))
    assert all(s.n_refs == 3 for s in scenes)
    assert {s.targets[0].kind for s in scenes} == {"disk", "square"}
    samples = scenes_to_samples(scenes)
    t0 = time.perf_counter()
    rep = run_eval(samples, mock_config(workers=1))
    elapsed = time.perf_counter() - t0
    print(f"mock corpus: MAE={rep.mae} RMSE={rep.rmse} in {elapsed:.1f}s")
    assert [r.y for r in rep.per_sample] == [s.count for s in scenes]
    assert rep.mae == 0 and rep.rmse == 0
    assert elapsed < 60


# -- matching oracles ---------------------------------------------------------

@pytest.mark.criterion("TPU oracle: 1000 instances, rel. error <= 1e-9, convexity and no-op bounds")
def test_tpu_oracle():
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 16))
        n_ref = int(rng.integers(1, 13))
        proto = Prototype(rng.normal(size=d) * rng.uniform(0.1, 10), n_ref, float(n_ref))
        feats = rng.normal(size=(int(rng.integers(0, 40)), d)) * rng.uniform(0.1, 10)
        if len(feats) and rng.random() < 0.3:
            feats[: len(feats) // 2] += proto.vector  # make some candidates similar
        delta = float(rng.uniform(-1, 1))
        items = score_proposals(proto, [ScoredProposal(MaskProposal.empty((2, 2)), f) for f in feats])
        out = transductive_update(proto, items, delta)
        want, k = tpu_direct(proto.vector, n_ref, feats, delta)
        rel = np.max(np.abs(out.vector - want)) / max(np.max(np.abs(want)), 1e-300)
        worst = max(worst, rel)
        assert rel <= 1e-9
        assert out.support_count == n_ref + k
        # convex combination of the prototype and the selected features
        sel = np.vstack([proto.vector] + [s.feature for s in items if s.similarity > delta])
        assert np.all(out.vector >= sel.min(0) - 1e-12) and np.all(out.vector <= sel.max(0) + 1e-12)
        # no-op when nothing clears delta
        if len(items):
            top = max(s.similarity for s in items)
            assert np.array_equal(transductive_update(proto, items, top).vector, proto.vector)
        assert np.array_equal(transductive_update(proto, items, 1.0).vector, proto.vector)
    print(f"TPU worst relative error {worst:.2e}")


@pytest.mark.criterion("pooling oracle: 1000 mask/feature pairs to 1e-6 incl. single-cell and sub-cell")
def test_pooling_oracle():
    rng = np.random.default_rng(5)
    kinds = {"random": 0, "single_cell": 0, "sub_cell": 0, "rect": 0}
    worst = 0.0
    for i in range(1000):
        h, w = (int(v) for v in rng.integers(6, 48, 2))
        gh, gw = (int(v) for v in rng.integers(1, min(h, w, 12) + 1, 2))
        grid = rng.normal(size=(gh, gw, int(rng.integers(1, 8))))
        kind = ("random", "single_cell", "sub_cell", "rect")[i % 4]
        if kind == "random":
            bm = rng.random((h, w)) < rng.uniform(0.02, 0.7)
            if not bm.any():
                bm[rng.integers(h), rng.integers(w)] = True
        elif kind == "single_cell":
            # exactly the pixels of one cell when the grid divides evenly,
            # otherwise the pixels whose centers fall inside that cell
            i0, j0 = int(rng.integers(gh)), int(rng.integers(gw))
            yy, xx = np.indices((h, w)) + 0.5
            bm = ((yy * gh / h).astype(int) == i0) & ((xx * gw / w).astype(int) == j0)
        elif kind == "sub_cell":
            y, x = int(rng.integers(h)), int(rng.integers(w))
            bm = _rect(h, w, x, y, min(w, x + int(rng.integers(1, 3))), min(h, y + int(rng.integers(1, 3))))
        else:
            x0, y0 = int(rng.integers(w)), int(rng.integers(h))
            bm = _rect(h, w, x0, y0, int(rng.integers(x0 + 1, w + 1)), int(rng.integers(y0 + 1, h + 1)))
        kinds[kind] += 1
        got = pool_mask_feature(FeatureMap(grid, (h, w)), MaskProposal.from_bitmap(bm))
        want = pooled_feature_loop(grid, bm)
        err = np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-12))
        worst = max(worst, float(np.max(np.abs(got - want))))
        assert np.allclose(got, want, rtol=1e-6, atol=1e-12), (kind, err)
    print(f"pooling cases {kinds}, worst abs error {worst:.2e}")


# -- superpixels --------------------------------------------------------------

@pytest.mark.criterion("SLIC: totality, 4-connectivity, determinism, constant-image drift <= S/2, two halves +-1")
def test_slic_properties():
    corpus = [s.render() for s in generate_corpus(31, 10, count_range=(5, 40))]
    params = SuperpixelParams()
    for img in corpus:
        res = compute_superpixels(img, params)
        labels = res.labels
        assert labels.shape == img.shape[:2] and labels.min() == 0
        assert set(np.unique(labels)) == set(range(res.n_clusters))
        for k in range(res.n_clusters):
            assert ndimage.label(labels == k, structure=FOUR)[1] == 1
        again = compute_superpixels(img, params)
        assert np.array_equal(again.labels, labels) and np.array_equal(again.centers, res.centers)

    for h, w, k in ((96, 80, 30), (64, 64, 16), (120, 90, 100), (50, 200, 40)):
        res = compute_superpixels(np.full((h, w, 3), 140, np.uint8), SuperpixelParams(n_segments=k))
        seeds, _ = initial_seeds(h, w, k)
        assert res.n_clusters == len(seeds)
        for x, y in res.centers:
            drift = np.min(np.max(np.abs(seeds - np.array([y, x])), axis=1))
            assert drift <= res.step / 2

    halves = np.zeros((32, 32, 3), np.uint8)
    halves[:, :16] = (200, 40, 40)
    halves[:, 16:] = (40, 40, 200)
    res = compute_superpixels(halves, SuperpixelParams(n_segments=2))
    for row in res.labels:
        change = np.flatnonzero(np.diff(row) != 0)
        # 2-means oracle boundary column: 16
        assert len(change) == 1 and abs(int(change[0]) + 1 - 16) <= 1


# -- counting -----------------------------------------------------------------

@pytest.mark.criterion("count monotonicity: 100 score sets x 20 thetas non-increasing, theta = 1 gives n_ref")
def test_count_monotone():
    rng = np.random.default_rng(9)
    thetas = np.linspace(-1.0, 1.0, 20)
    for _ in range(100):
        n = int(rng.integers(0, 60))
        sims = np.clip(rng.uniform(-1.2, 1.2, n), -1, 1)
        sims[rng.random(n) < 0.1] = 1.0
        items = [ScoredProposal(MaskProposal.empty((2, 2)), np.ones(2), float(s)) for s in sims]
        n_ref = int(rng.integers(1, 13))
        counts = [count(items, float(t), n_ref).count for t in thetas]
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert counts[-1] == n_ref


# -- multiscale ---------------------------------------------------------------

@pytest.mark.criterion("multiscale: tile partition exact, remap round-trip IoU >= 0.95 on 500 masks")
def test_multiscale_geometry():
    rng = np.random.default_rng(13)
    for _ in range(200):
        h, w = (int(v) for v in rng.integers(3, 400, 2))
        n_p = int(rng.integers(1, min(h, w, 3) + 1))
        cover = np.zeros((h, w), np.int32)
        for y0, y1, x0, x1 in tile_regions(h, w, n_p):
            cover[y0:y1, x0:x1] += 1
        assert np.all(cover == 1)

    worst = 1.0
    for i in range(500):
        n_p = (1, 2, 3)[i % 3]
        h, w = (int(v) for v in rng.integers(max(24, 8 * n_p), 300, 2))
        regions = tile_regions(h, w, n_p)
        idx = int(rng.integers(len(regions)))
        y0, y1, x0, x1 = regions[idx]
        bw = int(rng.integers(8, x1 - x0 + 1))
        bh = int(rng.integers(8, y1 - y0 + 1))
        mx, my = int(rng.integers(x0, x1 - bw + 1)), int(rng.integers(y0, y1 - bh + 1))
        if i % 2:
            yy, xx = np.indices((h, w))
            bm = ((xx - mx - bw / 2 + 0.5) / (bw / 2)) ** 2 + ((yy - my - bh / 2 + 0.5) / (bh / 2)) ** 2 <= 1
        else:
            bm = _rect(h, w, mx, my, mx + bw, my + bh)
        orig = MaskProposal.from_bitmap(bm)
        t = TileTransform((y0, y1, x0, x1), (h, w), divmod(idx, n_p))
        back = remap_to_original(crop_to_tile(orig, t), t)
        iou = mask_iou(orig, back)
        worst = min(worst, iou)
        assert iou >= 0.95, (h, w, n_p, bw, bh, iou)
    print(f"multiscale worst round-trip IoU {worst:.4f}")


# -- metrics ------------------------------------------------------------------

FIXED_PAIRS = [(12, 10), (0, 3), (4, 0), (57, 60), (33, 33), (8, 15), (120, 101), (5, 5), (19, 22), (41, 38),
               (7, 0), (90, 96), (14, 14), (26, 31), (63, 59), (2, 9), (48, 48), (75, 70), (11, 13), (300, 277)]
# by hand: sum |e| = 103, sum e^2 = 1199 over 20 pairs
FIXED_MAE = 5.15
FIXED_RMSE = 7.742738533619742


@pytest.mark.criterion("metrics: 20 fixed pairs exact, RMSE >= MAE on 1000 random sets")
def test_metrics():
    mae, rmse = compute_metrics(FIXED_PAIRS)
    assert mae == FIXED_MAE and rmse == FIXED_RMSE
    assert rmse == math.sqrt(1199 / 20)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        pairs = list(zip(rng.integers(0, 3000, n).tolist(), rng.integers(0, 3000, n).tolist()))
        mae, rmse = compute_metrics(pairs)
        assert rmse >= mae >= 0


# -- ablation -----------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion("ablation: all 16 component toggles run, all-off MAE > all-on MAE")
def test_ablation_matrix():
    samples = scenes_to_samples(tiny_object_corpus(3, 6))
    labels = [format(i, "04b") for i in range(16)]
    reps = run_sweep(samples, "components", labels, mock_config())
    assert len(reps) == 16
    by = {lab: r for lab, r in zip(labels, reps)}
    for lab, r in by.items():
        print(f"{dict(zip(COMPONENTS, lab))}: MAE={r.mae:.2f} RMSE={r.rmse:.2f}")
        assert len(r.per_sample) == len(samples)
    assert by["0000"].mae > by["1111"].mae
    # the all-on cell is the default pipeline
    assert apply_components(mock_config(), parse_components("1111")) == mock_config()


# -- real backends ------------------------------------------------------------

WEIGHTS_DIR = os.environ.get("TFCOUNT_WEIGHTS_DIR")
FSC_ROOT = os.environ.get("TFCOUNT_FSC147_ROOT")
SAM_B = os.environ.get("TFCOUNT_SAM_VIT_B", "sam_vit_b_01ec64.pth")
DINOV2 = os.environ.get("TFCOUNT_DINOV2", "dinov2-base")


def _hardware_ready():
    if not (WEIGHTS_DIR and FSC_ROOT):
        return False
    return (Path(WEIGHTS_DIR) / SAM_B).is_file() and (Path(WEIGHTS_DIR) / DINOV2).is_dir()


@pytest.mark.hardware
@pytest.mark.criterion("real-backend smoke (hardware-gated): 20 FSC-147 images, full < baseline MAE")
@pytest.mark.skipif(not _hardware_ready(), reason="set TFCOUNT_WEIGHTS_DIR and TFCOUNT_FSC147_ROOT")
def test_real_backend_smoke():
    import torch

    device = "cuda" if torch.cuda.is_available() else "cpu"
    cfg = mock_config().with_overrides({
        "segmenter.backend": "sam", "segmenter.variant": "vit_b", "segmenter.weights_path": SAM_B,
        "segmenter.device": device, "semantic.backend": "hf", "semantic.model": "dinov2",
        "semantic.weights_path": DINOV2, "semantic.device": device,
    })
    samples = load_fsc147(FSC_ROOT, "test", limit=20)
    t0 = time.perf_counter()
    full = run_eval(samples, cfg, label="full")
    base = run_eval(samples, apply_components(cfg, parse_components("0000")), label="baseline")
    elapsed = time.perf_counter() - t0
    print(f"full MAE={full.mae:.2f} RMSE={full.rmse:.2f}; baseline MAE={base.mae:.2f} RMSE={base.rmse:.2f}")
    assert full.mae < base.mae
    assert elapsed <= 30 * 60
