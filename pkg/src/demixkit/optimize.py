"""Search blend weights that maximize mean SDR on a validation set.

Backend outputs are precomputed (and optionally cached as WAVs) before any
search runs; scoring a weight vector is then just a blend plus an SDR per
record, so exhaustive grids stay cheap.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backends import StemSet
from .ensemble import StageEntry, WeightVector, blend_weighted, evaluate_entry
from .metrics import DEFAULT_EPSILON, sdr
from .waveform import FLOAT32, Waveform, load_wav, save_wav

__all__ = [
    "WeightSearchProblem",
    "score_weights",
    "grid_search",
    "coordinate_ascent",
    "integer_grid",
    "precompute_estimates",
]


@dataclass
class WeightSearchProblem:
    """Precomputed per-record, per-backend estimates of one stem plus truth."""

    stem: str
    estimates: list[list[Waveform]]
    references: list[Waveform]
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.estimates:
            raise ValueError("need at least one record")
        if len(self.references) != len(self.estimates):
            raise ValueError("one reference per record required")
        n = len(self.estimates[0])
        for rec in self.estimates:
            if len(rec) != n:
                raise ValueError("every record needs the same backend count")

    @property
    def n_backends(self) -> int:
        return len(self.estimates[0])


def score_weights(problem: WeightSearchProblem, weights) -> float:
    """Mean SDR over records of the blend defined by `weights`."""
    wv = weights if isinstance(weights, WeightVector) else WeightVector(tuple(weights))
    if len(wv) != problem.n_backends:
        raise ValueError(f"{problem.n_backends} backends but {len(wv)} weights")
    scores = [
        sdr(ref, blend_weighted(rec, wv), problem.epsilon)
        for rec, ref in zip(problem.estimates, problem.references)
    ]
    return float(np.mean(scores))


def integer_grid(n_backends: int, lo: int = 0, hi: int = 20) -> list[list[float]]:
    """Per-dimension integer candidate values, the default search lattice."""
    return [[float(v) for v in range(lo, hi + 1)] for _ in range(n_backends)]


def _direction_key(vec: tuple[float, ...]) -> tuple[float, ...]:
    total = sum(vec)
    return tuple(round(v / total, 12) for v in vec)


def grid_search(
    problem: WeightSearchProblem, grid: list[list[float]]
) -> tuple[WeightVector, float, list[tuple[tuple[float, ...], float]]]:
    """Exhaustive search over normalized-distinct grid points.

    Returns (best weights, best score, full score table). Ties go to the
    lexicographically smallest weight vector; vectors that normalize to an
    already-seen direction are evaluated once.
    """
    if len(grid) != problem.n_backends:
        raise ValueError(f"{problem.n_backends} backends but grid has {len(grid)} dimensions")
    best_vec: tuple[float, ...] | None = None
    best_score = -np.inf
    table: list[tuple[tuple[float, ...], float]] = []
    seen: set[tuple[float, ...]] = set()
    for vec in itertools.product(*grid):
        vec = tuple(float(v) for v in vec)
        if any(v < 0 for v in vec) or sum(vec) <= 0:
            continue
        key = _direction_key(vec)
        if key in seen:
            continue
        seen.add(key)
        score = score_weights(problem, vec)
        table.append((vec, score))
        if score > best_score:
            best_score = score
            best_vec = vec
    if best_vec is None:
        raise ValueError("grid contains no vector with a positive weight sum")
    return WeightVector(best_vec), best_score, table


def coordinate_ascent(
    problem: WeightSearchProblem,
    init,
    step_schedule: tuple[float, ...] = (4.0, 2.0, 1.0, 0.5),
    max_rounds: int = 100,
) -> tuple[WeightVector, float]:
    """Greedy single-coordinate +/-step moves; never returns worse than init."""
    wv = init if isinstance(init, WeightVector) else WeightVector(tuple(init))
    current = list(wv.weights)
    current_score = score_weights(problem, current)
    for step in step_schedule:
        for _ in range(max_rounds):
            improved = False
            for i in range(len(current)):
                for delta in (step, -step):
                    cand = list(current)
                    cand[i] = cand[i] + delta
                    if cand[i] < 0 or sum(cand) <= 0:
                        continue
                    cand_score = score_weights(problem, cand)
                    if cand_score > current_score:
                        current, current_score = cand, cand_score
                        improved = True
            if not improved:
                break
    return WeightVector(tuple(current)), current_score


# ---------------------------------------------------------------------------
# Precomputation and disk cache
# ---------------------------------------------------------------------------


def precompute_estimates(
    tracks: list[tuple[str, Waveform, Waveform]],
    entries: list[StageEntry],
    stem: str,
    cache_dir: str | Path | None = None,
    epsilon: float = DEFAULT_EPSILON,
    jobs: int = 1,
    bind_truth: list[StemSet] | None = None,
) -> WeightSearchProblem:
    """Run every backend once per track and assemble a WeightSearchProblem.

    `tracks` holds (record_id, mixture, reference-for-stem). With a cache
    directory, per-record per-backend WAVs are reused across runs; the index
    document pins the stem and counts so a stale cache is rejected.
    """
    index = {"stem": stem, "n_backends": len(entries), "records": [rid for rid, _, _ in tracks]}
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        index_path = cache / "index.json"
        if index_path.is_file() and json.loads(index_path.read_text()) != index:
            raise ValueError(f"cache at {cache} was built for a different problem; clear it")

    estimates: list[list[Waveform]] = []
    references: list[Waveform] = []
    for t, (rid, mixture, reference) in enumerate(tracks):
        per_backend: list[Waveform] = []
        for b, entry in enumerate(entries):
            path = cache / rid / f"backend_{b:02d}.wav" if cache is not None else None
            if path is not None and path.is_file():
                per_backend.append(load_wav(path))
                continue
            run_entry = entry
            if bind_truth is not None and entry.spec.kind == "oracle" and entry.spec.truth is None:
                run_entry = replace(entry, spec=replace(entry.spec, truth=bind_truth[t]))
            out = evaluate_entry(run_entry, mixture, jobs)[stem]
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                save_wav(out, path, FLOAT32)
                out = load_wav(path)  # score what the cache will replay
            per_backend.append(out)
        estimates.append(per_backend)
        references.append(reference)
    if cache is not None:
        (cache / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    return WeightSearchProblem(stem=stem, estimates=estimates, references=references, epsilon=epsilon)
