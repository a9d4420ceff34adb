"""Structure-level metrics and corpus evaluation."""

from __future__ import annotations

import json
import os
import statistics
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .datagen import read_corpus_spec, read_manifest
from .errors import GridsynthError, ShapeError
from .extrapolation import PartialImage, complete, read_mask
from .grid import Cell, GridImage, build_similarity_tensor, load_png, pairwise_distances
from .program import Program, execute, read_program
from .synthesis import SynthesisConfig, eligible_cells, greedy_synthesize, objective


@dataclass(frozen=True)
class StructureReport:
    cover_precision: float | None
    cover_recall: float | None
    cover_f1: float | None
    objective_pred: float
    objective_true: float | None
    covered_pixel_accuracy: float
    runtime_ms: int


def prf(pred: set, truth: set) -> tuple[float, float, float]:
    hit = len(pred & truth)
    precision = hit / len(pred) if pred else 0.0
    recall = hit / len(truth) if truth else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def compare_covers(pred: Program, truth: Program) -> tuple[float, float, float]:
    """Precision, recall and F1 of the predicted cover union against the truth's."""
    if pred.grid_n != truth.grid_n:
        raise ShapeError(f"grid sizes differ: N={pred.grid_n} vs N={truth.grid_n}")
    return prf(set(pred.cover_union()), set(truth.cover_union()))


def covered_pixel_counts(pred_img: GridImage, truth_img: GridImage, cells, tol: int = 0) -> tuple[int, int]:
    if pred_img.pixels.shape != truth_img.pixels.shape or pred_img.cell_m != truth_img.cell_m:
        raise ShapeError(f"image shapes differ: {pred_img.pixels.shape} vs {truth_img.pixels.shape}")
    good = total = 0
    for cell in cells:
        a = pred_img.block(cell).astype(np.int16)
        b = truth_img.block(cell).astype(np.int16)
        ok = np.all(np.abs(a - b) <= tol, axis=-1)
        good += int(ok.sum())
        total += ok.size
    return good, total


def covered_pixel_accuracy(pred_img: GridImage, truth_img: GridImage, cells, tol: int = 0) -> float:
    """Fraction of pixels in ``cells`` whose channels all agree within ``tol``.

    An empty cell set scores 1.0.
    """
    good, total = covered_pixel_counts(pred_img, truth_img, cells, tol)
    return good / total if total else 1.0


def visible_owner(truth: Program) -> np.ndarray:
    """Index of the pair that last writes each cell, -1 for background."""
    owner = np.full((truth.grid_n, truth.grid_n), -1, dtype=int)
    for h, (s, _) in enumerate(truth.pairs):
        for t, u in s.cells():
            owner[t - 1, u - 1] = h
    return owner


def calibrate_eps(img: GridImage, classes: np.ndarray, cfg: SynthesisConfig) -> float:
    """Pick eps separating same-class from different-class cell pairs.

    ``classes`` is an (N, N) array of hashable labels.  When the classes are
    separable the midpoint of the gap is returned; otherwise the threshold
    with the fewest misclassified pairs.
    """
    dist = pairwise_distances(img, cfg.distance)
    flat = np.asarray(classes, dtype=object).reshape(-1)
    iu = np.triu_indices(len(flat), 1)
    d = dist[iu]
    same = np.array([flat[i] == flat[j] for i, j in zip(*iu)], dtype=bool)
    if not same.any():
        return float(d.min() / 2) if len(d) else cfg.eps
    if same.all():
        return float(d.max())
    intra, inter = d[same].max(), d[~same].min()
    if intra < inter:
        return float((intra + inter) / 2)
    thresholds = np.unique(d)
    errors = [np.sum(same & (d > th)) + np.sum(~same & (d <= th)) for th in thresholds]
    return float(thresholds[int(np.argmin(errors))])


def noise_free_classes(img: GridImage) -> np.ndarray:
    out = np.empty((img.grid_n, img.grid_n), dtype=object)
    for t, u in img.cells():
        out[t - 1, u - 1] = img.block((t, u)).tobytes()
    return out


def property_classes(truth: Program, properties) -> np.ndarray:
    owner = visible_owner(truth)
    out = np.empty(owner.shape, dtype=object)
    for idx, h in np.ndenumerate(owner):
        out[idx] = "background" if h < 0 else tuple(properties[h])
    return out


def _cover_cells(program: Program) -> list[Cell]:
    return sorted(program.cover_union())


def evaluate_synth(full: GridImage, cfg: SynthesisConfig, truth: Program | None, background, tol: int) -> dict:
    start = time.perf_counter()
    bx = build_similarity_tensor(full, cfg.eps, cfg.distance, threads=cfg.threads)
    scored = greedy_synthesize(full, cfg, bx=bx)
    runtime_ms = int(round((time.perf_counter() - start) * 1000))
    rendering = execute(scored.program, background, source=full)
    record = {"program_pairs": len(scored.program)}
    if truth is not None:
        p, r, f1 = compare_covers(scored.program, truth)
        elig = eligible_cells(full, None, cfg.background)
        obj_true = objective(truth, bx, cfg.lam, elig)
        cells = _cover_cells(truth)
    else:
        p = r = f1 = obj_true = None
        cells = _cover_cells(scored.program)
    acc = covered_pixel_accuracy(rendering.image, full, cells, tol)
    report = StructureReport(p, r, f1, scored.objective, obj_true, acc, runtime_ms)
    record.update(asdict(report))
    return record


def evaluate_complete(
    partial: PartialImage,
    full: GridImage | None,
    cfg: SynthesisConfig,
    truth: Program | None,
    tol: int,
    backward: bool = False,
) -> dict:
    start = time.perf_counter()
    result = complete(partial, cfg, backward=backward)
    runtime_ms = int(round((time.perf_counter() - start) * 1000))
    unknown = ~partial.known_mask
    record = {"program_pairs": len(result.program)}
    known_cells = [(t + 1, u + 1) for t, u in zip(*np.nonzero(partial.known_mask))]
    good, total = covered_pixel_counts(result.image, partial.image, known_cells, 0)
    record["known_cells_intact"] = good == total
    if truth is not None:
        p, r, f1 = compare_covers(result.program, truth)
        obj_true = None
        cells = [c for c in _cover_cells(truth) if unknown[c[0] - 1, c[1] - 1]]
    else:
        p = r = f1 = obj_true = None
        cells = [(t + 1, u + 1) for t, u in zip(*np.nonzero(unknown))]
    if full is not None:
        good, total = covered_pixel_counts(result.image, full, cells, tol)
    else:
        good = total = 0
    record["pixels_matched"] = good
    record["pixels_scored"] = total
    acc = good / total if total else 1.0
    report = StructureReport(p, r, f1, result.partial_program.objective, obj_true, acc, runtime_ms)
    record.update(asdict(report))
    return record


_AGG_FIELDS = (
    "cover_precision",
    "cover_recall",
    "cover_f1",
    "objective_pred",
    "objective_true",
    "covered_pixel_accuracy",
    "runtime_ms",
)


def aggregate(records: list[dict]) -> dict:
    ordered = sorted(records, key=lambda r: str(r.get("instance")))
    out = {"count": len(ordered)}
    for key in _AGG_FIELDS:
        values = sorted(r[key] for r in ordered if r.get(key) is not None)
        if values:
            out[key] = {"mean": statistics.fmean(values), "median": statistics.median(values)}
    if any("pixels_scored" in r for r in ordered):
        matched = sum(r.get("pixels_matched", 0) for r in ordered)
        scored = sum(r.get("pixels_scored", 0) for r in ordered)
        out["pooled_pixel_accuracy"] = matched / scored if scored else 1.0
        out["known_cells_intact"] = all(r.get("known_cells_intact", True) for r in ordered)
    return out


def _corpus_entries(corpus: Path) -> list[dict]:
    if (corpus / "manifest.jsonl").exists():
        return read_manifest(corpus)
    entries = []
    for png in sorted(corpus.glob("*.png")):
        mask = png.with_suffix(".mask")
        entries.append({"index": png.stem, "full": png.name, "mask": mask.name if mask.exists() else None})
    if not entries:
        raise GridsynthError(f"{corpus}: no manifest.jsonl and no PNG files")
    return entries


def evaluate_corpus(
    corpus_dir: str | os.PathLike,
    cfg: SynthesisConfig,
    mode: str = "synth",
    grid_n: int | None = None,
    cell_m: int | None = None,
    tol: int | None = None,
    calibrate: bool = False,
    backward: bool = False,
    records_path: str | os.PathLike | None = None,
) -> dict:
    """Evaluate every instance of a corpus and aggregate the results.

    Generated corpora carry their grid size, background and noise setting in
    ``spec.json``; for plain image directories ``grid_n`` and ``cell_m`` are
    required and cover metrics are omitted.
    """
    if mode not in ("synth", "complete"):
        raise ValueError(f"mode must be 'synth' or 'complete', got {mode!r}")
    corpus = Path(corpus_dir)
    spec = read_corpus_spec(corpus)
    if spec is not None:
        grid_n = grid_n or spec.grid_n
        cell_m = cell_m or spec.cell_m
        background = spec.background
        if cfg.background is None:
            cfg = replace(cfg, background=spec.background)
        if tol is None:
            tol = 8 if spec.noise else 0
    else:
        background = cfg.background or (0, 0, 0)
        tol = 0 if tol is None else tol
    if grid_n is None or cell_m is None:
        raise GridsynthError(f"{corpus}: grid size unknown; pass grid_n and cell_m")

    records = []
    for entry in _corpus_entries(corpus):
        name = entry["index"]
        try:
            full = load_png(corpus / entry["full"], grid_n, cell_m)
            truth = read_program(corpus / entry["program"]) if entry.get("program") else None
            inst_cfg = cfg
            if calibrate and truth is not None:
                if spec is not None and spec.noise and entry.get("properties"):
                    classes = property_classes(truth, entry["properties"])
                else:
                    classes = noise_free_classes(full)
                inst_cfg = replace(cfg, eps=calibrate_eps(full, classes, cfg))
            if mode == "synth":
                rec = evaluate_synth(full, inst_cfg, truth, background, tol)
            else:
                if not entry.get("mask"):
                    raise GridsynthError("no mask file")
                mask = read_mask(corpus / entry["mask"])
                partial = PartialImage.from_full(full, mask)
                rec = evaluate_complete(partial, full, inst_cfg, truth, tol, backward=backward)
        except (OSError, GridsynthError, ValueError, KeyError) as exc:
            raise GridsynthError(f"instance {name}: {exc}") from exc
        rec = {"instance": name, "eps": inst_cfg.eps, **rec}
        records.append(rec)

    if records_path is not None:
        with open(records_path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return {"mode": mode, "instances": records, "aggregate": aggregate(records)}
