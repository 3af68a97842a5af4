"""Per-frame shape retrieval by linear scan over the database."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .contour import (
    Contour2D,
    ScoringConfig,
    msd,
    msd_batch,
    penalty,
    resample_equidistant,
    score_from_parts,
)


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    frame_index: int
    record_id: int
    score_l: float
    msd_value: float
    penalty_value: float
    elapsed: float


@dataclass(frozen=True)
class ScoringIndex:
    """Database contours resampled to ``n`` points plus per-record penalties."""

    contours: np.ndarray
    penalties: np.ndarray
    n: int

    @classmethod
    def build(cls, db, cfg: ScoringConfig):
        if len(db.records) == 0:
            raise RetrievalError("database is empty")
        key = (cfg.n, cfg.penalty_guard)
        cached = db._index_cache.get(key)
        if cached is not None:
            return cached
        contours = np.stack([resample_equidistant(r.projected_contour, cfg.n).points for r in db.records])
        pens = np.array([penalty(r.constraint_points, cfg.penalty_guard) for r in db.records])
        index = cls(contours, pens, cfg.n)
        db._index_cache[key] = index
        return index


def prepare_target(target, n):
    c = target if isinstance(target, Contour2D) else Contour2D(target)
    return resample_equidistant(c, n)


def best_match(target, db, cfg: ScoringConfig = ScoringConfig(), frame_index=0, index=None) -> MatchResult:
    """Record with the largest objective; ties go to the smallest record id."""
    t0 = time.perf_counter()
    if len(db.records) == 0:
        raise RetrievalError("database is empty")
    index = index or ScoringIndex.build(db, cfg)
    tgt = prepare_target(target, cfg.n)
    msds = msd_batch(tgt.points, index.contours)
    scores = score_from_parts(msds, index.penalties, cfg)
    k = int(np.argmax(scores))  # first maximum -> smallest id
    return MatchResult(
        frame_index, k, float(scores[k]), float(msds[k]), float(index.penalties[k]),
        time.perf_counter() - t0,
    )


def track_sequence(frames, db, cfg: ScoringConfig = ScoringConfig()):
    """Independent best match for every frame, in order.

    ``frames`` may hold contours or zero-argument callables that load one;
    a frame that fails to load aborts with its index.
    """
    frames = list(frames)
    if not frames:
        raise RetrievalError("no frames to track")
    index = ScoringIndex.build(db, cfg)
    results = []
    for i, frame in enumerate(frames):
        t0 = time.perf_counter()
        try:
            contour = frame() if callable(frame) else frame
            res = best_match(contour, db, cfg, frame_index=i, index=index)
        except (OSError, ValueError) as exc:
            raise RetrievalError(f"frame {i}: {exc}") from exc
        results.append(MatchResult(i, res.record_id, res.score_l, res.msd_value,
                                   res.penalty_value, time.perf_counter() - t0))
    return results


def id_jumps(results):
    """Number of frame-to-frame changes in the selected record."""
    ids = [r.record_id for r in results]
    return sum(a != b for a, b in zip(ids, ids[1:]))


def validate_overlay(result: MatchResult, db, target, cfg: ScoringConfig = ScoringConfig()):
    """Selected contour beside the target, with their MSD, for external overlay rendering."""
    tgt = prepare_target(target, cfg.n)
    selected = resample_equidistant(db.records[result.record_id].projected_contour, cfg.n)
    return {
        "frame": result.frame_index,
        "record_id": result.record_id,
        "msd": msd(tgt, selected),
        "target": tgt.points.copy(),
        "selected": selected.points.copy(),
    }


RESULT_FIELDS = ["frame", "record_id", "score", "msd", "penalty", "ms_elapsed"]


def write_results(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in results:
            w.writerow([r.frame_index, r.record_id, repr(r.score_l), repr(r.msd_value),
                        repr(r.penalty_value), f"{1e3 * r.elapsed:.3f}"])


def read_results(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0].keys()) != RESULT_FIELDS:
        raise RetrievalError(f"{path}: unexpected columns")
    return [
        MatchResult(int(r["frame"]), int(r["record_id"]), float(r["score"]), float(r["msd"]),
                    float(r["penalty"]), float(r["ms_elapsed"]) / 1e3)
        for r in rows
    ]
