"""Two-stage ensemble demixing: vocals-first blending, then instrument bars.

Stage one blends several vocal estimates with a normalized weight vector and
subtracts the blend from the mixture to get the instrumental. Stage two runs
multi-stem backends on the instrumental with polarity TTA, blends per-stem
"bars", and maps bars to final stems through the fixed reconstruction:

    bass  = (instr - bar_other - bar_drums + 2*bar_bass)  / 3
    drums = (instr - bar_other - bar_bass  + 2*bar_drums) / 3
    other = (2*instr - bar_bass - bar_drums + bar_other)  / 3

The reconstruction is intentionally literal: the returned stems sum to
mixture + (instr - bar_other)/3, so the mixture is conserved only when
bar_other equals instr (for bars that sum to instr, that means vanishing
bass and drums bars). An opt-in flag replaces `other` with
instr - bass - drums for strict conservation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .backends import SeparatorSpec, StemSet, chunked_separate, tta_polarity_set
from .waveform import Waveform, mix_linear

__all__ = [
    "WeightVector",
    "ChunkParams",
    "StageEntry",
    "PipelineConfig",
    "blend_weighted",
    "evaluate_entry",
    "vocal_stage",
    "instrument_bars",
    "reconstruct_final",
    "run_mdx_pipeline",
    "run_cdx_pipeline",
    "run_pipeline",
    "bind_oracle_truth",
]

MDX_INSTRUMENT_STEMS = ("bass", "drums", "other")


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative blend weights with a positive sum; scale does not matter."""

    weights: tuple[float, ...]

    def __post_init__(self):
        ws = tuple(float(w) for w in self.weights)
        if not ws:
            raise ValueError("weight vector is empty")
        if any(w < 0 for w in ws):
            raise ValueError(f"weights must be nonnegative, got {ws}")
        if sum(ws) <= 0:
            raise ValueError("at least one weight must be positive")
        object.__setattr__(self, "weights", ws)

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self):
        return iter(self.weights)

    def normalized(self) -> tuple[float, ...]:
        total = sum(self.weights)
        return tuple(w / total for w in self.weights)


@dataclass(frozen=True)
class ChunkParams:
    """Chunked-inference settings; seconds=None means one whole-signal call."""

    seconds: float | None = 10.0
    overlap: float = 0.25
    shifts: int = 1
    max_shift_seconds: float = 0.5

    def chunk_len(self, sample_rate: int) -> int | None:
        if self.seconds is None:
            return None
        return max(1, round(self.seconds * sample_rate))

    def max_shift(self, sample_rate: int) -> int:
        return max(0, round(self.max_shift_seconds * sample_rate))


@dataclass(frozen=True)
class StageEntry:
    """One backend slot in a pipeline stage."""

    spec: SeparatorSpec
    chunk: ChunkParams = field(default_factory=ChunkParams)
    tta: bool = False
    name: str = ""


@dataclass(frozen=True)
class PipelineConfig:
    """Declarative ensemble pipeline: backends, weights, TTA, chunking.

    mode 'mdx' runs vocal stage + instrument bars + reconstruction over a
    four-stem vocabulary; mode 'cdx' runs vocal stage + equal-weight
    checkpoint averaging over the residual; mode 'plain' just merges the
    outputs of the listed backends.
    """

    mode: str
    stems: tuple[str, ...]
    vocal_stem: str | None = None
    vocal_stage: tuple[StageEntry, ...] = ()
    vocal_weights: WeightVector | None = None
    instrument_stage: tuple[StageEntry, ...] = ()
    instrument_weights: dict[str, WeightVector] | None = None
    plain_stage: tuple[StageEntry, ...] = ()
    reconstruction: bool = True
    conserve_other: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stems", tuple(self.stems))
        object.__setattr__(self, "vocal_stage", tuple(self.vocal_stage))
        object.__setattr__(self, "instrument_stage", tuple(self.instrument_stage))
        object.__setattr__(self, "plain_stage", tuple(self.plain_stage))
        if self.mode not in ("mdx", "cdx", "plain"):
            raise ValueError(f"mode must be mdx|cdx|plain, got {self.mode!r}")
        if self.mode == "plain":
            if not self.plain_stage:
                raise ValueError("plain mode needs at least one backend")
            return
        if self.vocal_stem is None or self.vocal_stem not in self.stems:
            raise ValueError(f"vocal_stem {self.vocal_stem!r} must be one of {self.stems}")
        if not self.vocal_stage:
            raise ValueError("need at least one vocal-stage backend")
        if self.vocal_weights is None or len(self.vocal_weights) != len(self.vocal_stage):
            raise ValueError("vocal weights must match the vocal backend count")
        for entry in self.vocal_stage:
            if self.vocal_stem not in entry.spec.produced_stems:
                raise ValueError(
                    f"vocal backend {entry.name or entry.spec.kind!r} does not produce "
                    f"{self.vocal_stem!r}"
                )
        instrument_stems = self.instrument_stems()
        if self.mode == "mdx":
            if not self.instrument_stage:
                raise ValueError("mdx mode needs instrument-stage backends")
            if self.instrument_weights is None:
                raise ValueError("mdx mode needs per-stem instrument weights")
            for stem in instrument_stems:
                wv = self.instrument_weights.get(stem)
                if wv is None or len(wv) != len(self.instrument_stage):
                    raise ValueError(
                        f"instrument weights for {stem!r} must match the backend count"
                    )
            for entry in self.instrument_stage:
                missing = [s for s in instrument_stems if s not in entry.spec.produced_stems]
                if missing:
                    raise ValueError(
                        f"instrument backend {entry.name or entry.spec.kind!r} lacks stems "
                        f"{missing}"
                    )
            if self.reconstruction and set(instrument_stems) != set(MDX_INSTRUMENT_STEMS):
                raise ValueError(
                    f"reconstruction requires instrument stems {MDX_INSTRUMENT_STEMS}, "
                    f"got {instrument_stems}"
                )
        if self.mode == "cdx":
            if not self.instrument_stage:
                raise ValueError("cdx mode needs residual-stage backends")
            for stem in instrument_stems:
                if not any(stem in e.spec.produced_stems for e in self.instrument_stage):
                    raise ValueError(f"no residual backend produces stem {stem!r}")

    def instrument_stems(self) -> tuple[str, ...]:
        return tuple(s for s in self.stems if s != self.vocal_stem)


def blend_weighted(estimates: list[Waveform], weights) -> Waveform:
    """Normalized weighted mean: sum(w_i * est_i) / sum(w_i)."""
    wv = weights if isinstance(weights, WeightVector) else WeightVector(tuple(weights))
    if len(estimates) != len(wv):
        raise ValueError(f"{len(estimates)} estimates but {len(wv)} weights")
    return mix_linear(estimates, wv.normalized())


def evaluate_entry(entry: StageEntry, mixture: Waveform, jobs: int = 1) -> StemSet:
    """Run one stage slot: chunked separation, polarity TTA if flagged."""
    rate = mixture.sample_rate
    chunk_len = entry.chunk.chunk_len(rate)
    args = (chunk_len, entry.chunk.overlap, entry.chunk.shifts, entry.chunk.max_shift(rate), jobs)
    if entry.tta:
        return tta_polarity_set(entry.spec, mixture, *args)
    return chunked_separate(entry.spec, mixture, *args)


def vocal_stage(cfg: PipelineConfig, mixture: Waveform, jobs: int = 1) -> tuple[Waveform, Waveform]:
    """Blend the vocal estimates, then split: returns (vocals, mixture - vocals)."""
    stem = cfg.vocal_stem
    estimates = [evaluate_entry(entry, mixture, jobs)[stem] for entry in cfg.vocal_stage]
    vocals = blend_weighted(estimates, cfg.vocal_weights)
    instr = mix_linear([mixture, vocals], [1.0, -1.0])
    return vocals, instr


def instrument_bars(
    cfg: PipelineConfig, instr: Waveform, jobs: int = 1
) -> dict[str, Waveform]:
    """Per-stem weighted blends of the instrument backends, each run with TTA."""
    stems = cfg.instrument_stems()
    outputs = [
        tta_polarity_set(
            entry.spec,
            instr,
            entry.chunk.chunk_len(instr.sample_rate),
            entry.chunk.overlap,
            entry.chunk.shifts,
            entry.chunk.max_shift(instr.sample_rate),
            jobs,
        )
        for entry in cfg.instrument_stage
    ]
    bars = {}
    for stem in stems:
        bars[stem] = blend_weighted([out[stem] for out in outputs], cfg.instrument_weights[stem])
    return bars


def reconstruct_final(
    instr: Waveform, bar_bass: Waveform, bar_drums: Waveform, bar_other: Waveform
) -> tuple[Waveform, Waveform, Waveform]:
    """Map the three bars and the instrumental to final (bass, drums, other)."""
    third = 1.0 / 3.0
    bass = mix_linear([instr, bar_other, bar_drums, bar_bass], [third, -third, -third, 2 * third])
    drums = mix_linear([instr, bar_other, bar_bass, bar_drums], [third, -third, -third, 2 * third])
    other = mix_linear([instr, bar_bass, bar_drums, bar_other], [2 * third, -third, -third, third])
    return bass, drums, other


def run_mdx_pipeline(cfg: PipelineConfig, mixture: Waveform, jobs: int = 1) -> StemSet:
    """Vocals-first four-stem ensemble: vocal blend, bars, reconstruction."""
    vocals, instr = vocal_stage(cfg, mixture, jobs)
    bars = instrument_bars(cfg, instr, jobs)
    out = {cfg.vocal_stem: vocals}
    if cfg.reconstruction:
        bass, drums, other = reconstruct_final(instr, bars["bass"], bars["drums"], bars["other"])
        if cfg.conserve_other:
            other = mix_linear([instr, bass, drums], [1.0, -1.0, -1.0])
        out.update({"bass": bass, "drums": drums, "other": other})
    else:
        out.update(bars)
    return StemSet(out)


def run_cdx_pipeline(cfg: PipelineConfig, mixture: Waveform, jobs: int = 1) -> StemSet:
    """Dialog-first three-stem ensemble with equal-weight checkpoint averaging."""
    dialog, residual = vocal_stage(cfg, mixture, jobs)
    out = {cfg.vocal_stem: dialog}
    for stem in cfg.instrument_stems():
        contributors = [
            evaluate_entry(entry, residual, jobs)[stem]
            for entry in cfg.instrument_stage
            if stem in entry.spec.produced_stems
        ]
        out[stem] = mix_linear(contributors, [1.0 / len(contributors)] * len(contributors))
    return StemSet(out)


def run_plain(cfg: PipelineConfig, mixture: Waveform, jobs: int = 1) -> StemSet:
    """No ensembling: merge the produced stems of every listed backend."""
    out: dict[str, Waveform] = {}
    for entry in cfg.plain_stage:
        result = evaluate_entry(entry, mixture, jobs)
        for stem, w in result.items():
            out[stem] = w
    return StemSet(out)


def run_pipeline(cfg: PipelineConfig, mixture: Waveform, jobs: int = 1) -> StemSet:
    if cfg.mode == "mdx":
        return run_mdx_pipeline(cfg, mixture, jobs)
    if cfg.mode == "cdx":
        return run_cdx_pipeline(cfg, mixture, jobs)
    return run_plain(cfg, mixture, jobs)


def bind_oracle_truth(cfg: PipelineConfig, truth: StemSet) -> PipelineConfig:
    """Attach ground truth to every unbound oracle backend (test pipelines)."""

    def bind_entries(entries: tuple[StageEntry, ...]) -> tuple[StageEntry, ...]:
        bound = []
        for entry in entries:
            spec = entry.spec
            if spec.kind == "oracle" and spec.truth is None and spec.truth_dir is None:
                entry = replace(entry, spec=replace(spec, truth=truth))
            bound.append(entry)
        return tuple(bound)

    return replace(
        cfg,
        vocal_stage=bind_entries(cfg.vocal_stage),
        instrument_stage=bind_entries(cfg.instrument_stage),
        plain_stage=bind_entries(cfg.plain_stage),
    )
