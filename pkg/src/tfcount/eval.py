"""Batch evaluation: MAE/RMSE, structured reports, resumable runs, and parameter sweeps."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .config import RunConfig
from .datasets import AnnotatedSample, Exemplar
from .errors import ConfigError, InvalidInputError
from .matching import Prototype
from .pipeline import Counter, PreparedImage
from .structures import as_image

logger = logging.getLogger(__name__)

COMPONENTS = ("superpixel", "semantic", "tpu", "multiscale")
SWEEP_AXES = ("theta", "delta", "tpu_rounds", "components", "backbone", "semantic")
# axes that only change the thresholding stage; prepared images are reused
_MATCHING_AXES = {"theta": "theta", "delta": "delta", "tpu_rounds": "tpu_rounds"}


def compute_metrics(pairs: Iterable[Tuple[float, float]]) -> Tuple[float, float]:
    """(MAE, RMSE) over ``(y, y_hat)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("cannot compute metrics over zero samples")
    errs = [float(y) - float(yh) for y, yh in pairs]
    n = len(errs)
    mae = math.fsum(abs(e) for e in errs) / n
    rmse = math.sqrt(math.fsum(e * e for e in errs) / n)
    # equal in exact arithmetic when all errors match; don't let rounding flip the order
    return mae, max(rmse, mae)


@dataclass
class SampleResult:
    sample_id: str
    y: int
    y_hat: int
    runtime_s: float = 0.0

    @property
    def abs_error(self) -> int:
        return abs(self.y - self.y_hat)


@dataclass
class EvalReport:
    config: Dict[str, Any]
    per_sample: List[SampleResult]
    label: str = ""
    exemplars: List[str] = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def mae(self) -> float:
        return compute_metrics((r.y, r.y_hat) for r in self.per_sample)[0]

    @property
    def rmse(self) -> float:
        return compute_metrics((r.y, r.y_hat) for r in self.per_sample)[1]

    def body(self) -> Dict[str, Any]:
        """Deterministic part of the report (no timings)."""
        mae, rmse = compute_metrics((r.y, r.y_hat) for r in self.per_sample)
        return {
            "label": self.label,
            "config": self.config,
            "exemplars": list(self.exemplars),
            "per_sample": [{"id": r.sample_id, "y": r.y, "y_hat": r.y_hat, "abs_error": r.abs_error}
                           for r in self.per_sample],
            "mae": mae,
            "rmse": rmse,
        }

    def to_dict(self) -> Dict[str, Any]:
        d = self.body()
        d["runtime_s"] = {"total": self.runtime_s,
                          "per_sample": {r.sample_id: r.runtime_s for r in self.per_sample}}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        times = d.get("runtime_s", {}).get("per_sample", {})
        rows = [SampleResult(r["id"], r["y"], r["y_hat"], times.get(r["id"], 0.0)) for r in d["per_sample"]]
        return cls(d["config"], rows, d.get("label", ""), d.get("exemplars", []),
                   d.get("runtime_s", {}).get("total", 0.0))


def config_hash(config: RunConfig, extra: Any = None) -> str:
    """Hash of everything that affects predicted counts (workers excluded)."""
    d = config.to_dict()
    d.pop("workers", None)
    blob = json.dumps({"config": d, "extra": extra}, sort_keys=True)
    return hashlib.sha1(blob.encode()).hexdigest()[:16]


def _read_progress(path: Optional[Path], key: str) -> Dict[str, SampleResult]:
    done: Dict[str, SampleResult] = {}
    if path is None or not path.is_file():
        return done
    for line in path.read_text().splitlines():
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            continue  # a torn final line from an interrupted run
        if rec.get("config_hash") == key:
            done[rec["id"]] = SampleResult(rec["id"], rec["y"], rec["y_hat"], rec.get("runtime_s", 0.0))
    return done


def _load_rgb(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return as_image(np.asarray(im.convert("RGB")))


def exemplar_prototype(counter: Counter, exemplars: Sequence[Exemplar]) -> Prototype:
    cache: Dict[str, np.ndarray] = {}
    pairs = []
    for ex in exemplars:
        if ex.image_path not in cache:
            cache[ex.image_path] = _load_rgb(ex.image_path)
        pairs.append((cache[ex.image_path], ex.box))
    return counter.exemplar_prototype(pairs)


class Evaluator:
    """Runs a counter over samples with a bounded worker pool.

    Samples without in-image exemplars are counted against a prototype pooled
    once from ``exemplars`` (cross-image references, as for CARPK).
    """

    def __init__(self, config: RunConfig, counter: Optional[Counter] = None,
                 exemplars: Sequence[Exemplar] = ()):
        self.config = config.validate()
        self.counter = counter or Counter(config)
        self.exemplars = list(exemplars)
        self._prototype: Optional[Prototype] = None

    @property
    def prototype(self) -> Optional[Prototype]:
        if self._prototype is None and self.exemplars:
            self._prototype = exemplar_prototype(self.counter, self.exemplars)
        return self._prototype

    def prepare(self, sample: AnnotatedSample) -> PreparedImage:
        image = sample.load_image()
        refs = sample.references(self.config.ref_format)
        if refs is not None:
            return self.counter.prepare(image, refs=refs)
        if self.prototype is None:
            raise InvalidInputError(f"{sample.sample_id}: no in-image exemplars and no shared exemplars given")
        return self.counter.prepare(image, prototype=self.prototype)

    def count(self, sample: AnnotatedSample) -> SampleResult:
        t0 = time.perf_counter()
        result = self.counter.select(self.prepare(sample))
        return SampleResult(sample.sample_id, int(sample.gt_count), int(result.count), time.perf_counter() - t0)

    def _map(self, fn: Callable, items: Sequence) -> List:
        if self.config.workers <= 1 or len(items) <= 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, items))

    def run(self, samples: Sequence[AnnotatedSample], label: str = "",
            progress_path=None) -> EvalReport:
        """Evaluate ``samples``; with ``progress_path`` finished samples are skipped on rerun."""
        ids = [s.sample_id for s in samples]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate sample ids")
        t0 = time.perf_counter()
        key = config_hash(self.config, [e.exemplar_id for e in self.exemplars])
        progress = Path(progress_path) if progress_path else None
        done = _read_progress(progress, key)
        todo = [s for s in samples if s.sample_id not in done]
        if done:
            logger.info("resuming: %d of %d samples already done", len(samples) - len(todo), len(samples))
        if self.exemplars and todo:
            _ = self.prototype  # build once before the pool starts

        fh, lock = None, threading.Lock()
        if progress is not None:
            progress.parent.mkdir(parents=True, exist_ok=True)
            fh = progress.open("a")

        def work(sample):
            r = self.count(sample)
            if fh is not None:
                rec = {"config_hash": key, "id": r.sample_id, "y": r.y, "y_hat": r.y_hat, "runtime_s": r.runtime_s}
                with lock:
                    fh.write(json.dumps(rec) + "\n")
                    fh.flush()
            return r

        try:
            for r in self._map(work, todo):
                done[r.sample_id] = r
        finally:
            if fh is not None:
                fh.close()
        rows = [done[i] for i in ids]
        return EvalReport(self.config.to_dict(), rows, label, [e.exemplar_id for e in self.exemplars],
                          time.perf_counter() - t0)


def run_eval(samples: Sequence[AnnotatedSample], config: RunConfig, counter: Optional[Counter] = None,
             exemplars: Sequence[Exemplar] = (), label: str = "", progress_path=None) -> EvalReport:
    return Evaluator(config, counter, exemplars).run(samples, label, progress_path)


def parse_components(value) -> Dict[str, bool]:
    """Component toggles from a 4-character bit string (SP, semantic, TPU, MS), a name list, or a dict.

    ``"1010"`` / ``"superpixel+tpu"`` / ``{"superpixel": True, ...}``; ``"none"`` and ``"all"`` work too.
    """
    if isinstance(value, dict):
        unknown = set(value) - set(COMPONENTS)
        if unknown:
            raise ConfigError(f"unknown component(s): {sorted(unknown)}")
        return {c: bool(value.get(c, False)) for c in COMPONENTS}
    s = str(value).strip().lower()
    if s == "all":
        return {c: True for c in COMPONENTS}
    if s in ("none", ""):
        return {c: False for c in COMPONENTS}
    if len(s) == 4 and set(s) <= {"0", "1"}:
        return {c: b == "1" for c, b in zip(COMPONENTS, s)}
    aliases = {"sp": "superpixel", "sem": "semantic", "ms": "multiscale"}
    names = [aliases.get(p, p) for p in s.replace(",", "+").split("+") if p]
    unknown = set(names) - set(COMPONENTS)
    if unknown:
        raise ConfigError(f"unknown component(s): {sorted(unknown)}")
    return {c: c in names for c in COMPONENTS}


def components_label(toggles: Dict[str, bool]) -> str:
    return "".join("1" if toggles[c] else "0" for c in COMPONENTS)


def apply_components(config: RunConfig, toggles: Dict[str, bool]) -> RunConfig:
    """Map component toggles onto config keys.

    Off states: grid prompts instead of superpixel centers; segmenter
    features instead of the semantic encoder; zero TPU rounds; single scale.
    On states keep the configured values (at least one TPU round).
    """
    semantic_model = config.semantic.model
    if semantic_model == "segmenter":
        semantic_model = "dinov2"
    return config.with_overrides({
        "prompts.mode": "superpixel" if toggles["superpixel"] else "grid",
        "semantic.model": semantic_model if toggles["semantic"] else "segmenter",
        "matching.tpu_rounds": max(1, config.matching.tpu_rounds) if toggles["tpu"] else 0,
        "multiscale.enabled": bool(toggles["multiscale"]),
    })


def sweep_configs(axis: str, values: Sequence, config: RunConfig) -> List[Tuple[str, RunConfig]]:
    """One ``(label, config)`` per sweep value."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = []
    for v in values:
        if axis in _MATCHING_AXES:
            key = f"matching.{_MATCHING_AXES[axis]}"
            out.append((f"{axis}={v}", config.with_overrides({key: v})))
        elif axis == "components":
            toggles = parse_components(v)
            out.append((f"components={components_label(toggles)}", apply_components(config, toggles)))
        elif axis == "backbone":
            out.append((f"backbone={v}", config.with_overrides({"segmenter.variant": v})))
        else:
            out.append((f"semantic={v}", config.with_overrides({"semantic.model": v})))
    return out


def run_sweep(samples: Sequence[AnnotatedSample], axis: str, values: Sequence, config: RunConfig,
              exemplars: Sequence[Exemplar] = (),
              counter_factory: Callable[[RunConfig], Counter] = Counter) -> List[EvalReport]:
    """One report per value along ``axis``.

    Threshold-type axes (theta, delta, tpu_rounds) prepare every sample once
    and only redo matching; other axes rebuild the pipeline per value.
    """
    cells = sweep_configs(axis, values, config)
    if axis not in _MATCHING_AXES:
        return [run_eval(samples, cfg, counter_factory(cfg), exemplars, label) for label, cfg in cells]

    ev = Evaluator(config, counter_factory(config), exemplars)
    t0 = time.perf_counter()
    prepared = ev._map(lambda s: (s, ev.prepare(s)), list(samples))
    t_prep = time.perf_counter() - t0
    reports = []
    for label, cfg in cells:
        rows = []
        t1 = time.perf_counter()
        for s, prep in prepared:
            res = ev.counter.select(prep, cfg.matching)
            rows.append(SampleResult(s.sample_id, int(s.gt_count), int(res.count)))
        reports.append(EvalReport(cfg.to_dict(), rows, label, [e.exemplar_id for e in ev.exemplars],
                                  t_prep + time.perf_counter() - t1))
    return reports


def summary_table(reports: Sequence[EvalReport]) -> str:
    lines = [f"{'setting':<28} {'MAE':>9} {'RMSE':>9} {'n':>5}"]
    for r in reports:
        lines.append(f"{r.label:<28} {r.mae:>9.3f} {r.rmse:>9.3f} {len(r.per_sample):>5}")
    return "\n".join(lines)
