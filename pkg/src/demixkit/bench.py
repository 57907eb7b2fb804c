"""Dataset scanning, synthetic benchmark generation, submission scoring, and
sorted leaderboards.

Dataset layout: <root>/<track_id>/{mixture.wav, <stem>.wav ...}; predictions
mirror it minus the mixture. The leaderboard store is an append-only JSONL
file guarded by an advisory lock.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from filelock import FileLock

from .backends import StemSet
from .metrics import (
    DEFAULT_EPSILON,
    RecordScore,
    SdrReport,
    instrumental_reference,
    sdr,
)
from .waveform import FLOAT32, WavError, Waveform, load_wav, save_wav, wav_info

__all__ = [
    "DatasetRecord",
    "DatasetError",
    "LeaderboardEntry",
    "LeaderboardError",
    "scan_dataset",
    "load_record_stems",
    "make_synthetic_dataset",
    "evaluate_submission",
    "entry_from_report",
    "leaderboard_update",
    "leaderboard_view",
    "valid_sort_keys",
]

MIXTURE_NAME = "mixture"


class DatasetError(Exception):
    """Dataset layout or consistency problem."""


class LeaderboardError(Exception):
    """Leaderboard store problem (corrupt line, unknown sort key, ...)."""


@dataclass(frozen=True)
class DatasetRecord:
    """One on-disk track: mixture plus ground-truth stems."""

    id: str
    mixture_path: Path
    stem_paths: dict[str, Path]
    duration_s: float
    sample_rate: int

    @property
    def stems(self) -> tuple[str, ...]:
        return tuple(sorted(self.stem_paths))


def scan_dataset(
    root: str | Path, stems: list[str] | None = None, strict: bool = False
) -> list[DatasetRecord]:
    """Collect records from subdirectories of `root`, lexicographic order.

    With strict=True any missing file or shape inconsistency raises; otherwise
    the offending record is skipped with a warning naming the reason.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    records: list[DatasetRecord] = []
    expected = list(stems) if stems else None
    for track_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            records.append(_scan_record(track_dir, expected))
            if expected is None:
                expected = list(records[-1].stems)
        except (DatasetError, WavError) as exc:
            if strict:
                raise
            warnings.warn(f"skipping {track_dir.name}: {exc}", stacklevel=2)
    return records


def _scan_record(track_dir: Path, stems: list[str] | None) -> DatasetRecord:
    mixture = track_dir / f"{MIXTURE_NAME}.wav"
    if not mixture.is_file():
        raise DatasetError(f"{track_dir.name}: missing {MIXTURE_NAME}.wav")
    if stems is None:
        stems = sorted(
            p.stem for p in track_dir.glob("*.wav") if p.stem != MIXTURE_NAME
        )
        if not stems:
            raise DatasetError(f"{track_dir.name}: no stem files next to the mixture")
    rate, channels, length, _ = wav_info(mixture)
    stem_paths = {}
    for stem in stems:
        path = track_dir / f"{stem}.wav"
        if not path.is_file():
            raise DatasetError(f"{track_dir.name}: missing {stem}.wav")
        s_rate, s_ch, s_len, _ = wav_info(path)
        if (s_rate, s_ch, s_len) != (rate, channels, length):
            raise DatasetError(
                f"{track_dir.name}: {stem}.wav is {s_len} samples {s_ch}ch @{s_rate} Hz, "
                f"mixture is {length} samples {channels}ch @{rate} Hz"
            )
        stem_paths[stem] = path
    return DatasetRecord(
        id=track_dir.name,
        mixture_path=mixture,
        stem_paths=stem_paths,
        duration_s=length / rate,
        sample_rate=rate,
    )


def load_record_stems(record: DatasetRecord) -> StemSet:
    return StemSet({stem: load_wav(path) for stem, path in record.stem_paths.items()})


# ---------------------------------------------------------------------------
# Synthetic dataset generation
# ---------------------------------------------------------------------------


def make_synthetic_dataset(
    out_dir: str | Path,
    pools: dict[str, str | Path],
    n_tracks: int,
    duration_s: float,
    seed: int,
    sample_rate: int = 44100,
    channels: int = 2,
) -> Path:
    """Generate records by pairing seeded-random samples from per-stem pools.

    Each source is trimmed (random start) or looped with a 50 ms equal-power
    crossfade to the exact duration and peak-normalized to 0.7; the mixture is
    the stem sum, peak-normalized to 0.9 with the same gain applied to every
    stem so mixture == sum(stems) holds exactly. Byte-deterministic per seed.
    """
    if n_tracks <= 0:
        raise ValueError(f"n_tracks must be positive, got {n_tracks}")
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool_files = {}
    for stem, pool in pools.items():
        files = sorted(Path(pool).glob("*.wav"))
        if not files:
            raise DatasetError(f"pool for stem {stem!r} is empty: {pool}")
        pool_files[stem] = files

    rng = np.random.default_rng(seed)
    target_len = round(duration_s * sample_rate)
    width = max(3, len(str(n_tracks - 1)))
    for t in range(n_tracks):
        track_dir = out_dir / f"track_{t:0{width}d}"
        track_dir.mkdir(exist_ok=True)
        prepped = {}
        for stem in sorted(pool_files):
            files = pool_files[stem]
            src = load_wav(files[int(rng.integers(len(files)))])
            if src.sample_rate != sample_rate:
                raise DatasetError(
                    f"pool file for {stem!r} is at {src.sample_rate} Hz, dataset wants "
                    f"{sample_rate} Hz (resampling is out of scope)"
                )
            data = _fit_channels(src.samples, channels)
            data = _fit_duration(data, target_len, sample_rate, rng)
            peak = float(np.max(np.abs(data)))
            if peak > 0:
                data = data * (0.7 / peak)
            prepped[stem] = data
        mix = np.zeros((channels, target_len))
        for data in prepped.values():
            mix += data
        peak = float(np.max(np.abs(mix)))
        gain = 0.9 / peak if peak > 0 else 1.0
        # cast stems to float32 first and sum those, so the stored mixture
        # equals the stored stem sum to within one float32 rounding
        final32 = {s: (gain * d).astype(np.float32) for s, d in prepped.items()}
        mix32 = np.zeros((channels, target_len))
        for d in final32.values():
            mix32 += d.astype(np.float64)
        for stem, data in final32.items():
            save_wav(Waveform(data.astype(np.float64), sample_rate), track_dir / f"{stem}.wav", FLOAT32)
        save_wav(Waveform(mix32, sample_rate), track_dir / f"{MIXTURE_NAME}.wav", FLOAT32)
    return out_dir


def _fit_channels(data: np.ndarray, channels: int) -> np.ndarray:
    if data.shape[0] == channels:
        return data
    if data.shape[0] == 1:
        return np.repeat(data, channels, axis=0)
    raise DatasetError(f"pool source has {data.shape[0]} channels, dataset wants {channels}")


def _fit_duration(
    data: np.ndarray, target_len: int, sample_rate: int, rng: np.random.Generator
) -> np.ndarray:
    n = data.shape[1]
    if n == 0:
        raise DatasetError("pool source is empty")
    if n < target_len:
        fade = min(round(0.05 * sample_rate), n // 2)  # each loop pass must grow the signal
        data = _loop_crossfaded(data, target_len, fade)
        n = data.shape[1]
    if n == target_len:
        return data
    start = int(rng.integers(n - target_len + 1))
    return data[:, start : start + target_len]


def _loop_crossfaded(data: np.ndarray, target_len: int, fade: int) -> np.ndarray:
    out = data
    if fade > 0:
        theta = np.linspace(0.0, np.pi / 2.0, fade)
        fade_out, fade_in = np.cos(theta), np.sin(theta)
    while out.shape[1] < target_len:
        if fade == 0:
            out = np.concatenate([out, data], axis=1)
            continue
        seam = out[:, -fade:] * fade_out + data[:, :fade] * fade_in
        out = np.concatenate([out[:, :-fade], seam, data[:, fade:]], axis=1)
    return out


# ---------------------------------------------------------------------------
# Submission evaluation
# ---------------------------------------------------------------------------


def evaluate_submission(
    records: list[DatasetRecord],
    predictions: str | Path,
    epsilon: float = DEFAULT_EPSILON,
    on_missing: str = "error",
    pad: bool = False,
    jobs: int = 1,
) -> SdrReport:
    """Score a prediction directory against the dataset ground truth.

    Per-record stem SDRs are averaged into record means, and record means into
    the total. Datasets with a vocals stem also get a derived 'instrumental'
    column (reference mixture - true vocals, estimate mixture - predicted
    vocals) which never enters the record means. on_missing='zero' scores an
    absent prediction against silence (exactly 0 dB) and flags it.
    """
    if not records:
        raise DatasetError("no records to evaluate")
    if on_missing not in ("error", "zero"):
        raise ValueError(f"on_missing must be error|zero, got {on_missing!r}")
    predictions = Path(predictions)
    notes: list[str] = []

    def score_record(record: DatasetRecord) -> tuple[str, RecordScore, list[str]]:
        rec_notes: list[str] = []
        refs = {stem: load_wav(path) for stem, path in record.stem_paths.items()}
        track_dir = predictions / record.id
        per_stem: dict[str, float] = {}
        ests: dict[str, Waveform] = {}
        for stem in sorted(refs):
            ref = refs[stem]
            path = track_dir / f"{stem}.wav"
            if not path.is_file():
                if on_missing == "error":
                    raise DatasetError(f"{record.id}: missing prediction {path}")
                est = Waveform.silence(ref.channels, ref.length, ref.sample_rate)
                rec_notes.append(f"{record.id}/{stem}: missing prediction scored as silence")
            else:
                est = load_wav(path)
                est, padded = _conform(est, ref, pad)
                if padded:
                    rec_notes.append(f"{record.id}/{stem}: prediction length adjusted to reference")
            ests[stem] = est
            per_stem[stem] = sdr(ref, est, epsilon)
        mean = float(np.mean(list(per_stem.values())))
        if "vocals" in refs and "instrumental" not in refs:
            mixture = load_wav(record.mixture_path)
            ref_instr = instrumental_reference(mixture, refs["vocals"])
            est_instr = instrumental_reference(mixture, ests["vocals"])
            per_stem["instrumental"] = sdr(ref_instr, est_instr, epsilon)
        return record.id, RecordScore(per_stem, mean), rec_notes

    ordered = sorted(records, key=lambda r: r.id)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(score_record, ordered))
    else:
        results = [score_record(r) for r in ordered]

    per_record: dict[str, RecordScore] = {}
    for rid, score, rec_notes in results:
        per_record[rid] = score
        notes.extend(rec_notes)
    stems = sorted({s for r in per_record.values() for s in r.per_stem})
    per_stem = {
        stem: float(np.mean([r.per_stem[stem] for r in per_record.values() if stem in r.per_stem]))
        for stem in stems
    }
    total = float(np.mean([r.mean for r in per_record.values()]))
    return SdrReport(
        per_stem=per_stem,
        per_record=per_record,
        total=total,
        epsilon=epsilon,
        n_records=len(records),
        notes=notes,
    )


def _conform(est: Waveform, ref: Waveform, pad: bool) -> tuple[Waveform, bool]:
    if est.samples.shape == ref.samples.shape:
        return est, False
    if not pad:
        raise DatasetError(
            f"prediction shape {est.samples.shape} does not match reference "
            f"{ref.samples.shape} (pass pad=True to zero-pad/crop)"
        )
    if est.channels != ref.channels:
        raise DatasetError(f"prediction has {est.channels} channels, reference {ref.channels}")
    data = np.zeros_like(ref.samples)
    n = min(est.length, ref.length)
    data[:, :n] = est.samples[:, :n]
    return Waveform(data, ref.sample_rate), True


# ---------------------------------------------------------------------------
# Leaderboard store
# ---------------------------------------------------------------------------


@dataclass
class LeaderboardEntry:
    """One submission row: per-stem dB plus derived columns."""

    name: str
    per_stem: dict[str, float]
    total: float
    instrumental: float | None = None
    submitted_at: str = ""
    notes: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValueError("entry name must be nonempty")
        values = list(self.per_stem.values()) + [self.total]
        if self.instrumental is not None:
            values.append(self.instrumental)
        if not all(np.isfinite(v) for v in values):
            raise ValueError(f"entry {self.name!r} has non-finite scores")
        if not self.submitted_at:
            self.submitted_at = datetime.now(timezone.utc).isoformat()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "per_stem": dict(self.per_stem),
            "total": self.total,
            "instrumental": self.instrumental,
            "submitted_at": self.submitted_at,
            "notes": self.notes,
        }

    @staticmethod
    def from_dict(d: dict) -> "LeaderboardEntry":
        return LeaderboardEntry(
            name=d["name"],
            per_stem={k: float(v) for k, v in d["per_stem"].items()},
            total=float(d["total"]),
            instrumental=None if d.get("instrumental") is None else float(d["instrumental"]),
            submitted_at=d.get("submitted_at", ""),
            notes=d.get("notes", ""),
        )


def entry_from_report(name: str, report: SdrReport, notes: str = "") -> LeaderboardEntry:
    per_stem = {s: v for s, v in report.per_stem.items() if s != "instrumental"}
    return LeaderboardEntry(
        name=name,
        per_stem=per_stem,
        total=report.total,
        instrumental=report.per_stem.get("instrumental"),
        notes=notes,
    )


def _read_store(store: Path) -> list[LeaderboardEntry]:
    entries = []
    if not store.is_file():
        return entries
    for lineno, line in enumerate(store.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entries.append(LeaderboardEntry.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise LeaderboardError(f"{store}:{lineno}: corrupt leaderboard line ({exc})") from exc
    return entries


def leaderboard_update(store: str | Path, entry: LeaderboardEntry) -> None:
    """Append one entry; refuses to touch a store it cannot fully parse."""
    store = Path(store)
    store.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(store) + ".lock"):
        _read_store(store)  # corrupt store: raise before writing, preserve the file
        with store.open("a") as fh:
            fh.write(json.dumps(entry.to_dict()) + "\n")


def valid_sort_keys(entries: list[LeaderboardEntry]) -> list[str]:
    stems = sorted({s for e in entries for s in e.per_stem})
    keys = stems + ["total"]
    if any(e.instrumental is not None for e in entries):
        keys.append("instrum")
    return keys


def leaderboard_view(store: str | Path, sort_key: str = "total") -> list[LeaderboardEntry]:
    """Entries sorted descending by `sort_key`; ties go to earlier submissions."""
    entries = _read_store(Path(store))
    if not entries:
        return []
    if sort_key == "instrumental":
        sort_key = "instrum"
    keys = valid_sort_keys(entries)
    if sort_key not in keys:
        raise LeaderboardError(f"unknown sort key {sort_key!r}; valid keys: {keys}")

    def value(e: LeaderboardEntry) -> float:
        if sort_key == "total":
            return e.total
        if sort_key == "instrum":
            return e.instrumental if e.instrumental is not None else -np.inf
        return e.per_stem.get(sort_key, -np.inf)

    return sorted(entries, key=lambda e: (-value(e), e.submitted_at))
