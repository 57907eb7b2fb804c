"""Waveform container, RIFF/WAVE file I/O, and chunked overlap-add machinery.

Audio is held as a 2-D float64 array of shape (channels, samples) with
amplitudes nominally in [-1, 1]. Supported file encodings are 16-bit and
24-bit integer PCM and 32-bit IEEE float; integer samples map to float by
dividing by 2^(bits-1), so in-range values round-trip losslessly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Waveform",
    "ChunkPlan",
    "WavError",
    "MalformedWavError",
    "UnsupportedWavError",
    "TruncatedWavError",
    "load_wav",
    "save_wav",
    "wav_info",
    "polarity_invert",
    "mix_linear",
    "plan_chunks",
    "slice_chunk",
    "window_weight_sums",
    "weight_reciprocal",
    "accumulate_windowed",
    "overlap_add",
]

PCM16 = "pcm16"
PCM24 = "pcm24"
FLOAT32 = "float32"
ENCODINGS = (PCM16, PCM24, FLOAT32)

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base class for WAV file problems."""


class MalformedWavError(WavError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(WavError):
    """Well-formed WAV, but an encoding this library does not read."""


class TruncatedWavError(WavError):
    """The data chunk declares more bytes than the file contains."""


@dataclass(frozen=True, eq=False)
class Waveform:
    """Multichannel sampled audio: float64 samples of shape (channels, length)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"samples must be (channels, length), got shape {arr.shape}")
        # any NaN/Inf poisons the sum; finite audio can never overflow it
        if arr.size and not np.isfinite(np.sum(arr)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.length / self.sample_rate

    @staticmethod
    def silence(channels: int, length: int, sample_rate: int) -> "Waveform":
        return Waveform(np.zeros((channels, length)), sample_rate)


def _require_same_shape(a: Waveform, b: Waveform, what: str = "waveforms") -> None:
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"{what} differ in sample rate: {a.sample_rate} vs {b.sample_rate}")
    if a.samples.shape != b.samples.shape:
        raise ValueError(f"{what} differ in shape: {a.samples.shape} vs {b.samples.shape}")


def polarity_invert(w: Waveform) -> Waveform:
    """Flip the sign of every sample. Involutive: invert(invert(w)) == w."""
    return Waveform(-w.samples, w.sample_rate)


def mix_linear(ws: list[Waveform] | tuple[Waveform, ...], coeffs) -> Waveform:
    """Linear combination sum_i coeffs[i] * ws[i], sample-wise.

    All inputs must share sample rate, channel count, and length.
    """
    if len(ws) == 0:
        raise ValueError("mix_linear needs at least one waveform")
    if len(coeffs) != len(ws):
        raise ValueError(f"got {len(ws)} waveforms but {len(coeffs)} coefficients")
    first = ws[0]
    for w in ws[1:]:
        _require_same_shape(first, w, "mix_linear inputs")
    out = np.zeros_like(first.samples)
    for c, w in zip(coeffs, ws):
        out += float(c) * w.samples
    return Waveform(out, first.sample_rate)


# ---------------------------------------------------------------------------
# WAV file I/O
# ---------------------------------------------------------------------------


def _parse_wav(data: bytes, path, *, need_samples: bool):
    """Walk the RIFF chunks and return (rate, channels, n_frames, encoding, samples)."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: missing RIFF/WAVE signature")

    fmt = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body_start = pos + 8
        if cid == b"fmt ":
            if size < 16 or body_start + 16 > len(data):
                raise MalformedWavError(f"{path}: fmt chunk too small")
            tag, n_ch, rate, _byte_rate, _block, bits = struct.unpack_from(
                "<HHIIHH", data, body_start
            )
            if tag == _WAVE_FORMAT_EXTENSIBLE:
                # actual format lives in the first two bytes of the SubFormat GUID
                if size < 40 or body_start + 26 > len(data):
                    raise MalformedWavError(f"{path}: extensible fmt chunk too small")
                (tag,) = struct.unpack_from("<H", data, body_start + 24)
            fmt = (tag, n_ch, rate, bits)
        elif cid == b"data":
            if fmt is None:
                raise MalformedWavError(f"{path}: data chunk before fmt chunk")
            tag, n_ch, rate, bits = fmt
            if n_ch < 1:
                raise MalformedWavError(f"{path}: channel count {n_ch}")
            if rate <= 0:
                raise MalformedWavError(f"{path}: sample rate {rate}")
            if tag == _WAVE_FORMAT_PCM and bits == 16:
                encoding = PCM16
            elif tag == _WAVE_FORMAT_PCM and bits == 24:
                encoding = PCM24
            elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
                encoding = FLOAT32
            else:
                raise UnsupportedWavError(
                    f"{path}: format tag {tag} at {bits} bits is not supported "
                    "(need 16/24-bit PCM or 32-bit float)"
                )
            if body_start + size > len(data):
                raise TruncatedWavError(
                    f"{path}: data chunk declares {size} bytes, "
                    f"file only holds {len(data) - body_start}"
                )
            frame_size = n_ch * (bits // 8)
            if size % frame_size != 0:
                raise MalformedWavError(f"{path}: data chunk is not frame aligned")
            n_frames = size // frame_size
            samples = None
            if need_samples:
                body = data[body_start : body_start + size]
                samples = _decode_samples(body, encoding, n_ch)
            return rate, n_ch, n_frames, encoding, samples
        # chunk bodies are padded to even length
        pos = body_start + size + (size & 1)
    raise MalformedWavError(f"{path}: no data chunk found")


def _decode_samples(body: bytes, encoding: str, n_ch: int) -> np.ndarray:
    if encoding == PCM16:
        flat = np.frombuffer(body, dtype="<i2").astype(np.float64) / 32768.0
    elif encoding == PCM24:
        raw = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
        vals = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        vals = (vals ^ 0x800000) - 0x800000  # sign extend
        flat = vals.astype(np.float64) / 8388608.0
    elif encoding == FLOAT32:
        flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
    else:  # pragma: no cover - guarded by caller
        raise UnsupportedWavError(encoding)
    return np.ascontiguousarray(flat.reshape(-1, n_ch).T)


def load_wav(path: str | Path) -> Waveform:
    """Read a 16/24-bit PCM or 32-bit float WAV file.

    Integer samples are scaled by 1/2^(bits-1). Raises MalformedWavError,
    UnsupportedWavError, or TruncatedWavError for the respective defects.
    """
    path = Path(path)
    data = path.read_bytes()
    rate, n_ch, n_frames, _encoding, samples = _parse_wav(data, path, need_samples=True)
    if n_frames == 0:
        samples = np.zeros((n_ch, 0))
    return Waveform(samples, rate)


def wav_info(path: str | Path) -> tuple[int, int, int, str]:
    """Header-only probe: (sample_rate, channels, length, encoding)."""
    path = Path(path)
    data = path.read_bytes()
    rate, n_ch, n_frames, encoding, _ = _parse_wav(data, path, need_samples=False)
    return rate, n_ch, n_frames, encoding


def save_wav(w: Waveform, path: str | Path, encoding: str = FLOAT32) -> int:
    """Write a WAV file; returns the number of samples clipped to [-1, 1].

    float32 round-trips exactly for float32-representable data; integer
    encodings clip out-of-range samples (the returned count) and quantize.
    """
    if encoding not in ENCODINGS:
        raise ValueError(f"encoding must be one of {ENCODINGS}, got {encoding!r}")
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"parent directory does not exist: {path.parent}")

    interleaved = np.ascontiguousarray(w.samples.T)
    clipped = 0
    if encoding == FLOAT32:
        body = interleaved.astype("<f4").tobytes()
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        clipped = int(np.count_nonzero((interleaved < -1.0) | (interleaved > 1.0)))
        full_scale = 32768.0 if encoding == PCM16 else 8388608.0
        q = np.rint(interleaved * full_scale)
        q = np.clip(q, -full_scale, full_scale - 1).astype("<i4")
        if encoding == PCM16:
            body = q.astype("<i2").tobytes()
            tag, bits = _WAVE_FORMAT_PCM, 16
        else:
            body = q.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
            tag, bits = _WAVE_FORMAT_PCM, 24

    n_ch = w.channels
    block_align = n_ch * (bits // 8)
    pad = b"\x00" if len(body) % 2 else b""  # RIFF chunks are even-aligned
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(body) + len(pad)),
            b"WAVE",
            b"fmt ",
            struct.pack(
                "<IHHIIHH",
                16,
                tag,
                n_ch,
                w.sample_rate,
                w.sample_rate * block_align,
                block_align,
                bits,
            ),
            b"data",
            struct.pack("<I", len(body)),
        ]
    )
    path.write_bytes(header + body + pad)
    return clipped


# ---------------------------------------------------------------------------
# Chunking and weighted overlap-add
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChunkPlan:
    """Chunk schedule for one signal: offsets plus the raw blending window.

    The stored window is strictly positive; overlap_add renormalizes it per
    output sample so the effective weights always sum to one, edges included.
    """

    chunk_len: int
    hop: int
    offsets: tuple[int, ...]
    window: np.ndarray


def _triangular_window(n: int) -> np.ndarray:
    # symmetric integer triangle, strictly positive at both ends
    idx = np.arange(1, n + 1, dtype=np.float64)
    w = np.minimum(idx, n + 1 - idx)
    w /= w.max()
    w.setflags(write=False)
    return w


def plan_chunks(length: int, chunk_len: int, overlap: float) -> ChunkPlan:
    """Plan chunk offsets with hop = max(1, round(chunk_len * (1 - overlap))).

    Offsets run 0, hop, 2*hop, ... while strictly below `length`; the final
    chunk is zero-padded past the end of the signal.
    """
    if chunk_len <= 0:
        raise ValueError(f"chunk_len must be positive, got {chunk_len}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    if length < 0:
        raise ValueError(f"length must be nonnegative, got {length}")
    hop = max(1, round(chunk_len * (1.0 - overlap)))
    offsets = tuple(range(0, length, hop))
    return ChunkPlan(chunk_len=chunk_len, hop=hop, offsets=offsets, window=_triangular_window(chunk_len))


def slice_chunk(w: Waveform, offset: int, chunk_len: int) -> Waveform:
    """Extract w[offset : offset+chunk_len], zero-padded outside the signal."""
    if 0 <= offset and offset + chunk_len <= w.length:
        return Waveform(w.samples[:, offset : offset + chunk_len], w.sample_rate)
    out = np.zeros((w.channels, chunk_len))
    lo = max(0, offset)
    hi = min(w.length, offset + chunk_len)
    if hi > lo:
        out[:, lo - offset : hi - offset] = w.samples[:, lo:hi]
    return Waveform(out, w.sample_rate)


def window_weight_sums(plan: ChunkPlan, total_len: int) -> np.ndarray:
    """Raw window mass landing on each output sample; the OLA normalizer."""
    sums = np.zeros(total_len)
    for off in plan.offsets:
        hi = min(total_len, off + plan.chunk_len)
        if hi > off:
            sums[off:hi] += plan.window[: hi - off]
    return sums


def accumulate_windowed(acc: np.ndarray, offset: int, samples: np.ndarray, window: np.ndarray) -> None:
    """Add window-weighted samples into an accumulator at `offset` (clipped)."""
    total_len = acc.shape[1]
    hi = min(total_len, offset + samples.shape[1])
    if hi <= offset:
        return
    n = hi - offset
    acc[:, offset:hi] += window[:n] * samples[:, :n]


def weight_reciprocal(plan: ChunkPlan, total_len: int) -> np.ndarray:
    """1 / window mass per output sample (0 where nothing lands)."""
    sums = window_weight_sums(plan, total_len)
    sums[sums == 0] = np.inf  # uncovered samples invert to exactly 0
    return 1.0 / sums


def overlap_add(
    pieces: list[tuple[int, Waveform]], plan: ChunkPlan, total_len: int
) -> Waveform:
    """Rebuild a signal of `total_len` samples from windowed chunks.

    Pieces must carry exactly the plan's offsets, each chunk_len samples long.
    If every piece equals the matching slice of one source signal, the output
    reproduces that source (the per-sample renormalized window sums to one).
    """
    if not pieces:
        raise ValueError("overlap_add needs at least one piece")
    got = tuple(sorted(off for off, _ in pieces))
    if got != tuple(sorted(plan.offsets)):
        raise ValueError(f"piece offsets {got} do not match plan offsets {plan.offsets}")
    first = pieces[0][1]
    acc = np.zeros((first.channels, total_len))
    for off, piece in pieces:
        if piece.length != plan.chunk_len:
            raise ValueError(
                f"piece at offset {off} has {piece.length} samples, expected {plan.chunk_len}"
            )
        _require_same_shape(first, piece, "overlap_add pieces")
        accumulate_windowed(acc, off, piece.samples, plan.window)
    acc *= weight_reciprocal(plan, total_len)
    return Waveform(acc, first.sample_rate)
