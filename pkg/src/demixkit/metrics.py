"""Signal-to-distortion ratio scoring and dataset-level aggregation.

Per stem: SDR = 10*log10((sum s^2 + eps) / (sum e^2 + eps)) with e = s - s_hat,
summed over all channels and samples. A record scores the arithmetic mean of
its stems; a dataset scores the arithmetic mean of its record means. The
epsilon guard keeps perfect estimates finite and makes an all-zero estimate
score exactly 0 dB.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .waveform import Waveform, mix_linear

# a StemSet or any plain mapping of stem name -> Waveform
StemsLike = Any

__all__ = [
    "DEFAULT_EPSILON",
    "SdrReport",
    "RecordScore",
    "sdr",
    "sdr_record",
    "sdr_dataset",
    "instrumental_reference",
    "format_report",
    "report_rows",
    "save_report",
    "load_report",
]

DEFAULT_EPSILON = 1e-9


def _energy(samples: np.ndarray) -> float:
    # np.sum is pairwise: deterministic and accurate for long signals
    return float(np.sum(np.square(samples)))


def sdr(
    reference: Waveform,
    estimate: Waveform,
    epsilon: float = DEFAULT_EPSILON,
    strict: bool = False,
) -> float:
    """SDR in dB of `estimate` against `reference`.

    With epsilon = 0 and a perfect estimate the ratio is undefined; strict
    mode returns the +inf sentinel, otherwise this raises.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if reference.sample_rate != estimate.sample_rate:
        raise ValueError(
            f"sample rates differ: {reference.sample_rate} vs {estimate.sample_rate}"
        )
    if reference.samples.shape != estimate.samples.shape:
        raise ValueError(
            f"shapes differ: {reference.samples.shape} vs {estimate.samples.shape}"
        )
    err = reference.samples - estimate.samples
    num = _energy(reference.samples) + epsilon
    den = _energy(err) + epsilon
    if den == 0.0:
        if strict:
            return math.inf
        raise ValueError("zero error energy with epsilon=0; no finite SDR exists")
    return 10.0 * math.log10(num / den)


def sdr_record(
    references: StemsLike,
    estimates: StemsLike,
    epsilon: float = DEFAULT_EPSILON,
    strict: bool = False,
) -> tuple[dict[str, float], float]:
    """Score every stem of one record; returns (per-stem dB, record mean dB)."""
    ref_map = _as_stem_map(references)
    est_map = _as_stem_map(estimates)
    missing = sorted(set(ref_map) - set(est_map))
    if missing:
        raise ValueError(f"estimates missing stems: {missing}")
    extra = sorted(set(est_map) - set(ref_map))
    if extra:
        warnings.warn(f"ignoring extra estimate stems: {extra}", stacklevel=2)
    per_stem = {
        stem: sdr(ref_map[stem], est_map[stem], epsilon, strict) for stem in sorted(ref_map)
    }
    return per_stem, float(np.mean(list(per_stem.values())))


def _as_stem_map(stems) -> dict[str, Waveform]:
    if hasattr(stems, "stems"):
        return dict(stems.stems)
    return dict(stems)


@dataclass
class RecordScore:
    """One record's per-stem dB values and their mean."""

    per_stem: dict[str, float]
    mean: float


@dataclass
class SdrReport:
    """Per-stem, per-record, and dataset-aggregate SDR values.

    `total` is the mean of the record means; `per_stem` holds per-stem column
    means, which is a different statistic when records vary. Both are kept.
    """

    per_stem: dict[str, float]
    per_record: dict[str, RecordScore]
    total: float
    epsilon: float
    n_records: int
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        for rid, rec in self.per_record.items():
            for stem, value in rec.per_stem.items():
                if not math.isfinite(value):
                    raise ValueError(f"non-finite SDR for record {rid!r} stem {stem!r}")

    def to_dict(self) -> dict:
        return {
            "per_stem": dict(self.per_stem),
            "per_record": {
                rid: {"per_stem": dict(r.per_stem), "mean": r.mean}
                for rid, r in self.per_record.items()
            },
            "total": self.total,
            "epsilon": self.epsilon,
            "n_records": self.n_records,
            "notes": list(self.notes),
        }

    @staticmethod
    def from_dict(d: dict) -> "SdrReport":
        return SdrReport(
            per_stem=dict(d["per_stem"]),
            per_record={
                rid: RecordScore(dict(r["per_stem"]), float(r["mean"]))
                for rid, r in d["per_record"].items()
            },
            total=float(d["total"]),
            epsilon=float(d["epsilon"]),
            n_records=int(d["n_records"]),
            notes=list(d.get("notes", [])),
        )


def sdr_dataset(
    pairs: list[tuple[StemsLike, StemsLike]],
    epsilon: float = DEFAULT_EPSILON,
    ids: list[str] | None = None,
) -> SdrReport:
    """Score a list of (references, estimates) record pairs into an SdrReport."""
    if not pairs:
        raise ValueError("sdr_dataset needs at least one record")
    if ids is None:
        width = max(4, len(str(len(pairs) - 1)))
        ids = [f"record_{i:0{width}d}" for i in range(len(pairs))]
    if len(ids) != len(pairs):
        raise ValueError(f"{len(pairs)} pairs but {len(ids)} ids")

    keys = sorted(_as_stem_map(pairs[0][0]))
    per_record: dict[str, RecordScore] = {}
    for rid, (refs, ests) in zip(ids, pairs):
        if sorted(_as_stem_map(refs)) != keys:
            raise ValueError(f"record {rid!r} has stem keys inconsistent with the first record")
        stems, mean = sdr_record(refs, ests, epsilon)
        per_record[rid] = RecordScore(stems, mean)

    per_stem = {
        stem: float(np.mean([r.per_stem[stem] for r in per_record.values()])) for stem in keys
    }
    total = float(np.mean([r.mean for r in per_record.values()]))
    return SdrReport(
        per_stem=per_stem,
        per_record=per_record,
        total=total,
        epsilon=epsilon,
        n_records=len(pairs),
    )


def instrumental_reference(mixture: Waveform, vocals_ref: Waveform) -> Waveform:
    """Ground truth for the instrumental column: mixture minus true vocals."""
    return mix_linear([mixture, vocals_ref], [1.0, -1.0])


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------


def format_report(report: SdrReport) -> str:
    """Human-readable table, dB values shown with two decimals."""
    stems = list(report.per_stem)
    name_w = max([len("record")] + [len(r) for r in report.per_record])
    header = ["record".ljust(name_w)] + [s.rjust(max(8, len(s))) for s in stems] + ["    mean"]
    lines = ["  ".join(header)]
    lines.append("-" * len(lines[0]))
    for rid, rec in report.per_record.items():
        cells = [rid.ljust(name_w)]
        for s in stems:
            width = max(8, len(s))
            val = rec.per_stem.get(s)
            cells.append(("-" if val is None else f"{val:.2f}").rjust(width))
        cells.append(f"{rec.mean:8.2f}")
        lines.append("  ".join(cells))
    lines.append("-" * len(lines[0]))
    cells = ["MEAN".ljust(name_w)]
    for s in stems:
        cells.append(f"{report.per_stem[s]:.2f}".rjust(max(8, len(s))))
    cells.append(f"{report.total:8.2f}")
    lines.append("  ".join(cells))
    lines.append(f"records: {report.n_records}   epsilon: {report.epsilon:g}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)


def report_rows(report: SdrReport) -> list[tuple[str, str, float]]:
    """Flat (record_id, stem, dB) rows for delimited export; record means use
    stem name 'record_mean', dataset aggregates use record id 'ALL'."""
    rows: list[tuple[str, str, float]] = []
    for rid, rec in report.per_record.items():
        for stem, value in rec.per_stem.items():
            rows.append((rid, stem, value))
        rows.append((rid, "record_mean", rec.mean))
    for stem, value in report.per_stem.items():
        rows.append(("ALL", stem, value))
    rows.append(("ALL", "total", report.total))
    return rows


def save_report(report: SdrReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def load_report(path: str | Path) -> SdrReport:
    return SdrReport.from_dict(json.loads(Path(path).read_text()))
