"""Separation backends and the wrappers the pipelines apply around them.

A backend is anything that maps a mixture to named stems: an external model
process, or one of the deterministic synthetic separators used for testing
(ground-truth oracle with controlled noise, complementary band split,
passthrough). Wrappers add chunked overlapped inference, shift averaging,
polarity-inversion TTA, and checkpoint averaging on top of any backend.
"""

from __future__ import annotations

import hashlib
import math
import struct
import subprocess
import tempfile
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .waveform import (
    FLOAT32,
    Waveform,
    accumulate_windowed,
    load_wav,
    mix_linear,
    plan_chunks,
    polarity_invert,
    save_wav,
    slice_chunk,
    weight_reciprocal,
)

__all__ = [
    "StemSet",
    "SeparatorSpec",
    "BackendError",
    "register_backend_kind",
    "backend_kinds",
    "separate",
    "complement_output",
    "chunked_separate",
    "tta_polarity",
    "tta_polarity_set",
    "average_checkpoints",
]

DEFAULT_TIMEOUT_S = 600.0


class BackendError(Exception):
    """A backend failed to produce usable stems; carries captured diagnostics."""

    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True, eq=False)
class StemSet:
    """Named stems sharing one sample rate and shape."""

    stems: dict[str, Waveform]

    def __post_init__(self):
        if not self.stems:
            raise ValueError("StemSet must hold at least one stem")
        first = next(iter(self.stems.values()))
        for name, w in self.stems.items():
            if w.sample_rate != first.sample_rate or w.samples.shape != first.samples.shape:
                raise ValueError(f"stem {name!r} shape/rate inconsistent with the others")
        object.__setattr__(self, "stems", dict(self.stems))

    def __getitem__(self, stem: str) -> Waveform:
        return self.stems[stem]

    def __contains__(self, stem: str) -> bool:
        return stem in self.stems

    def keys(self):
        return self.stems.keys()

    def items(self):
        return self.stems.items()

    @property
    def sample_rate(self) -> int:
        return next(iter(self.stems.values())).sample_rate

    @property
    def length(self) -> int:
        return next(iter(self.stems.values())).length

    @property
    def channels(self) -> int:
        return next(iter(self.stems.values())).channels


@dataclass(frozen=True, eq=False)
class SeparatorSpec:
    """Declarative description of one backend.

    kind 'external' runs `command` with {input} and {output_dir} placeholders
    and reads one <stem>.wav per produced stem from the output directory.
    kind 'oracle' returns ground truth (from `truth` or `truth_dir`) plus
    seeded noise at `noise_snr_db`. kind 'linear_band' splits into two
    complementary bands around `split_hz`. kind 'passthrough' echoes the
    mixture under every produced stem name.

    output_mode 'complement' declares that the backend predicts the opposite
    of its stems; the final output is then mixture minus the raw prediction.
    """

    kind: str
    produced_stems: tuple[str, ...] = ("mix",)
    output_mode: str = "direct"
    command: tuple[str, ...] = ()
    timeout_s: float = DEFAULT_TIMEOUT_S
    expected_channels: int | None = None
    check_deterministic: bool = False
    noise_snr_db: float = math.inf
    seed: int = 0
    truth: StemSet | None = None
    truth_dir: str | Path | None = None
    split_hz: float = 1000.0
    checkpoint_tag: str | None = None

    def __post_init__(self):
        if not self.produced_stems:
            raise ValueError("a separator must declare at least one produced stem")
        if self.output_mode not in ("direct", "complement"):
            raise ValueError(f"output_mode must be direct|complement, got {self.output_mode!r}")
        object.__setattr__(self, "produced_stems", tuple(self.produced_stems))
        object.__setattr__(self, "command", tuple(self.command))
        if self.kind == "external":
            joined = " ".join(self.command)
            if not self.command:
                raise ValueError("external backend needs a command")
            if "{input}" not in joined or "{output_dir}" not in joined:
                raise ValueError("external command must use {input} and {output_dir}")
        if self.kind == "linear_band" and len(self.produced_stems) != 2:
            raise ValueError("linear_band produces exactly two stems")


# ---------------------------------------------------------------------------
# Backend kind registry
# ---------------------------------------------------------------------------

Runner = Callable[[SeparatorSpec, Waveform, int], dict[str, Waveform]]
_KIND_RUNNERS: dict[str, Runner] = {}


def register_backend_kind(kind: str, runner: Runner) -> None:
    """Register a custom backend kind: runner(spec, mixture, offset) -> stems."""
    _KIND_RUNNERS[kind] = runner


def backend_kinds() -> list[str]:
    return sorted(_KIND_RUNNERS)


def _run_passthrough(spec: SeparatorSpec, mixture: Waveform, offset: int) -> dict[str, Waveform]:
    return {stem: mixture for stem in spec.produced_stems}


def _resolve_truth(spec: SeparatorSpec, mixture: Waveform) -> StemSet:
    if spec.truth is not None:
        truth = spec.truth
    elif spec.truth_dir is not None:
        root = Path(spec.truth_dir)
        stems = {}
        for stem in spec.produced_stems:
            path = root / f"{stem}.wav"
            if not path.is_file():
                raise BackendError(f"oracle ground truth missing: {path}")
            stems[stem] = load_wav(path)
        truth = StemSet(stems)
    else:
        raise BackendError("oracle backend has no ground truth bound (truth or truth_dir)")
    for stem in spec.produced_stems:
        if stem not in truth:
            raise BackendError(f"oracle ground truth lacks stem {stem!r}")
    if truth.sample_rate != mixture.sample_rate or truth.channels != mixture.channels:
        raise BackendError(
            f"oracle truth rate/channels ({truth.sample_rate}/{truth.channels}) do not "
            f"match the input ({mixture.sample_rate}/{mixture.channels})"
        )
    return truth


def _aligned_segment(src: Waveform, offset: int, length: int) -> np.ndarray:
    out = np.zeros((src.channels, length))
    lo = max(0, offset)
    hi = min(src.length, offset + length)
    if hi > lo:
        out[:, lo - offset : hi - offset] = src.samples[:, lo:hi]
    return out

def _noise_rng(spec: SeparatorSpec, stem: str, samples: np.ndarray) -> np.random.Generator:
    # seeded by backend seed, stem, and input content: same input gives the
    # same noise, a different (e.g. inverted) input gives independent noise
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<q", spec.seed))
    h.update(stem.encode())
    h.update(samples.tobytes())
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


def _run_oracle(spec: SeparatorSpec, mixture: Waveform, offset: int) -> dict[str, Waveform]:
    truth = _resolve_truth(spec, mixture)
    n = mixture.length
    segments = {stem: _aligned_segment(truth[stem], offset, n) for stem in spec.produced_stems}

    # a real separator fed an inverted mixture returns inverted stems; detect
    # polarity by correlating the input with the aligned ground truth
    reference = np.zeros_like(mixture.samples)
    for seg in segments.values():
        reference += seg
    sign = -1.0 if float(np.sum(mixture.samples * reference)) < 0 else 1.0

    out = {}
    for stem in spec.produced_stems:
        seg = segments[stem]
        target = sign * seg
        if math.isfinite(spec.noise_snr_db):
            rng = _noise_rng(spec, stem, mixture.samples)
            g = rng.standard_normal(seg.shape)
            seg_energy = float(np.sum(np.square(seg)))
            g_energy = float(np.sum(np.square(g)))
            if seg_energy > 0 and g_energy > 0:
                scale = math.sqrt(seg_energy / (10.0 ** (spec.noise_snr_db / 10.0)) / g_energy)
                target = target + scale * g
        if spec.output_mode == "complement":
            target = mixture.samples - target
        out[stem] = Waveform(target, mixture.sample_rate)
    return out


def _run_linear_band(spec: SeparatorSpec, mixture: Waveform, offset: int) -> dict[str, Waveform]:
    k = max(1, round(mixture.sample_rate / spec.split_hz))
    if k % 2 == 0:
        k += 1
    kernel = np.full(k, 1.0 / k)
    low = np.stack([np.convolve(ch, kernel, mode="same") for ch in mixture.samples])
    high = mixture.samples - low
    low_name, high_name = spec.produced_stems
    return {
        low_name: Waveform(low, mixture.sample_rate),
        high_name: Waveform(high, mixture.sample_rate),
    }


def _run_external(spec: SeparatorSpec, mixture: Waveform, offset: int) -> dict[str, Waveform]:
    with tempfile.TemporaryDirectory(prefix="demixkit-") as td:
        in_path = Path(td) / "input.wav"
        out_dir = Path(td) / "stems"
        out_dir.mkdir()
        save_wav(mixture, in_path, FLOAT32)
        cmd = [
            tok.replace("{input}", str(in_path)).replace("{output_dir}", str(out_dir))
            for tok in spec.command
        ]
        try:
            proc = subprocess.run(
                cmd, capture_output=True, timeout=spec.timeout_s, check=False
            )
        except subprocess.TimeoutExpired as exc:
            raise BackendError(
                f"backend command timed out after {spec.timeout_s:g}s: {' '.join(cmd)}",
                diagnostics=_decode(exc.stderr),
            ) from exc
        except OSError as exc:
            raise BackendError(f"could not launch backend command {cmd[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            raise BackendError(
                f"backend command exited with status {proc.returncode}: {' '.join(cmd)}",
                diagnostics=_decode(proc.stderr) or _decode(proc.stdout),
            )
        out = {}
        for stem in spec.produced_stems:
            path = out_dir / f"{stem}.wav"
            if not path.is_file():
                present = sorted(p.name for p in out_dir.iterdir())
                raise BackendError(
                    f"backend wrote no {stem}.wav (output dir holds {present})",
                    diagnostics=_decode(proc.stderr),
                )
            w = load_wav(path)
            if w.length != mixture.length or w.sample_rate != mixture.sample_rate:
                raise BackendError(
                    f"backend output {stem}.wav has {w.length} samples at {w.sample_rate} Hz, "
                    f"expected {mixture.length} at {mixture.sample_rate} Hz"
                )
            out[stem] = w
        return out


def _decode(raw) -> str:
    if raw is None:
        return ""
    return raw.decode(errors="replace").strip()


register_backend_kind("passthrough", _run_passthrough)
register_backend_kind("oracle", _run_oracle)
register_backend_kind("linear_band", _run_linear_band)
register_backend_kind("external", _run_external)


# ---------------------------------------------------------------------------
# Single-shot separation
# ---------------------------------------------------------------------------


def separate(spec: SeparatorSpec, mixture: Waveform, offset: int = 0) -> StemSet:
    """Run one backend on one signal; deterministic given (spec, mixture).

    `offset` tells content-aware backends (the oracle) where this signal sits
    inside the original track; file and synthetic backends ignore it.
    Complement-mode outputs are returned as mixture minus the raw prediction.
    """
    runner = _KIND_RUNNERS.get(spec.kind)
    if runner is None:
        raise ValueError(f"unknown backend kind {spec.kind!r}; known: {backend_kinds()}")

    work = mixture
    mono_adapted = False
    if spec.expected_channels is not None and mixture.channels != spec.expected_channels:
        if mixture.channels == 1 and spec.expected_channels == 2:
            work = Waveform(np.vstack([mixture.samples, mixture.samples]), mixture.sample_rate)
            mono_adapted = True
        else:
            raise BackendError(
                f"backend expects {spec.expected_channels} channels, input has {mixture.channels}"
            )

    raw = runner(spec, work, offset)
    if set(raw) != set(spec.produced_stems):
        raise BackendError(
            f"backend produced stems {sorted(raw)}, declared {sorted(spec.produced_stems)}"
        )
    if spec.check_deterministic:
        again = runner(spec, work, offset)
        for stem in spec.produced_stems:
            if not np.array_equal(raw[stem].samples, again[stem].samples):
                raise BackendError(f"backend is nondeterministic on stem {stem!r}")

    out = {}
    for stem in spec.produced_stems:
        w = raw[stem]
        if mono_adapted:
            w = Waveform(np.mean(w.samples, axis=0, keepdims=True), w.sample_rate)
        if w.samples.shape != mixture.samples.shape or w.sample_rate != mixture.sample_rate:
            raise BackendError(
                f"backend output {stem!r} shape {w.samples.shape} does not match input "
                f"{mixture.samples.shape}"
            )
        if spec.output_mode == "complement":
            w = complement_output(mixture, w)
        out[stem] = w
    return StemSet(out)


def complement_output(mixture: Waveform, predicted: Waveform) -> Waveform:
    """Everything-but-the-prediction: mixture minus predicted, sample-wise."""
    return mix_linear([mixture, predicted], [1.0, -1.0])


# ---------------------------------------------------------------------------
# Chunked inference with shift averaging
# ---------------------------------------------------------------------------


def _shift_offsets(shifts: int, max_shift: int) -> list[int]:
    # deterministic, evenly spaced in [0, max_shift); shifts=1 means no shift
    return [int(i * max_shift / shifts) for i in range(shifts)]


def _imap_bounded(fn, items, jobs: int):
    """Map preserving order with at most `jobs` evaluations in flight."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        pending: deque = deque()
        submitted = 0
        while submitted < len(items) and len(pending) < jobs:
            pending.append(pool.submit(fn, items[submitted]))
            submitted += 1
        while pending:
            fut = pending.popleft()
            if submitted < len(items):
                pending.append(pool.submit(fn, items[submitted]))
                submitted += 1
            yield fut.result()


def chunked_separate(
    spec: SeparatorSpec,
    mixture: Waveform,
    chunk_len: int | None,
    overlap: float = 0.0,
    shifts: int = 1,
    max_shift: int | None = None,
    jobs: int = 1,
) -> StemSet:
    """Separate via overlapped chunks, averaging over forward time shifts.

    Each shift pads the input front by that many samples, separates every
    planned chunk, overlap-adds with the renormalized triangular window, and
    realigns; the per-stem outputs of all shifts are averaged. chunk_len None
    or >= the signal length (at zero shift) degenerates to a single plain
    separate() call.
    """
    if shifts < 1:
        raise ValueError(f"shifts must be >= 1, got {shifts}")
    rate = mixture.sample_rate
    if max_shift is None:
        max_shift = rate // 2
    if max_shift < 0:
        raise ValueError(f"max_shift must be nonnegative, got {max_shift}")
    if chunk_len is not None and chunk_len <= 0:
        raise ValueError(f"chunk_len must be positive, got {chunk_len}")

    length = mixture.length
    if length == 0:
        return separate(spec, mixture)

    totals: dict[str, np.ndarray] = {}
    for s in _shift_offsets(shifts, max_shift):
        if s == 0 and (chunk_len is None or chunk_len >= length):
            shift_arrays = {stem: w.samples for stem, w in separate(spec, mixture).items()}
        else:
            padded = (
                mixture
                if s == 0
                else Waveform(np.pad(mixture.samples, ((0, 0), (s, 0))), rate)
            )
            eff_chunk = chunk_len if chunk_len is not None else padded.length
            plan = plan_chunks(padded.length, eff_chunk, overlap)
            inv = weight_reciprocal(plan, padded.length)

            def run_chunk(off: int, _padded=padded, _s=s, _chunk=eff_chunk):
                piece = slice_chunk(_padded, off, _chunk)
                return off, separate(spec, piece, offset=off - _s)

            accs: dict[str, np.ndarray] = {}
            for off, piece_set in _imap_bounded(run_chunk, plan.offsets, jobs):
                for stem, piece in piece_set.items():
                    acc = accs.setdefault(
                        stem, np.zeros((mixture.channels, padded.length))
                    )
                    accumulate_windowed(acc, off, piece.samples, plan.window)
            shift_arrays = {}
            for stem, acc in accs.items():
                acc *= inv
                shift_arrays[stem] = acc[:, s : s + length]
        if shifts == 1:
            return StemSet(
                {stem: Waveform(arr, rate) for stem, arr in shift_arrays.items()}
            )
        for stem, arr in shift_arrays.items():
            if stem in totals:
                totals[stem] += arr
            else:
                totals[stem] = arr.copy()

    return StemSet(
        {stem: Waveform(arr / shifts, rate) for stem, arr in totals.items()}
    )


def tta_polarity_set(
    spec: SeparatorSpec,
    mixture: Waveform,
    chunk_len: int | None = None,
    overlap: float = 0.0,
    shifts: int = 1,
    max_shift: int | None = None,
    jobs: int = 1,
) -> StemSet:
    """Polarity-inversion TTA over all produced stems: 0.5*f(x) + 0.5*(-f(-x))."""
    plain = chunked_separate(spec, mixture, chunk_len, overlap, shifts, max_shift, jobs)
    flipped = chunked_separate(
        spec, polarity_invert(mixture), chunk_len, overlap, shifts, max_shift, jobs
    )
    return StemSet(
        {
            stem: mix_linear([plain[stem], flipped[stem]], [0.5, -0.5])
            for stem in plain.keys()
        }
    )


def tta_polarity(
    spec: SeparatorSpec,
    mixture: Waveform,
    stem: str,
    chunk_len: int | None = None,
    overlap: float = 0.0,
    shifts: int = 1,
    max_shift: int | None = None,
    jobs: int = 1,
) -> Waveform:
    """Polarity-inversion TTA restricted to one stem."""
    if stem not in spec.produced_stems:
        raise ValueError(f"backend does not produce stem {stem!r}")
    return tta_polarity_set(spec, mixture, chunk_len, overlap, shifts, max_shift, jobs)[stem]


def average_checkpoints(
    specs: list[SeparatorSpec],
    mixture: Waveform,
    stem: str,
    chunk_len: int | None = None,
    overlap: float = 0.0,
    shifts: int = 1,
    max_shift: int | None = None,
    jobs: int = 1,
) -> Waveform:
    """Unweighted mean of several checkpoints' outputs for one stem."""
    if not specs:
        raise ValueError("average_checkpoints needs at least one spec")
    outs = []
    for spec in specs:
        if stem not in spec.produced_stems:
            raise ValueError(f"a checkpoint does not produce stem {stem!r}")
        outs.append(chunked_separate(spec, mixture, chunk_len, overlap, shifts, max_shift, jobs)[stem])
    return mix_linear(outs, [1.0 / len(outs)] * len(outs))
