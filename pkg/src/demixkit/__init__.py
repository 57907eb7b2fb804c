"""Ensemble music demixing pipelines with an SDR benchmark harness."""

from .backends import (
    BackendError,
    SeparatorSpec,
    StemSet,
    average_checkpoints,
    chunked_separate,
    complement_output,
    separate,
    tta_polarity,
)
from .bench import (
    DatasetRecord,
    LeaderboardEntry,
    evaluate_submission,
    leaderboard_update,
    leaderboard_view,
    make_synthetic_dataset,
    scan_dataset,
)
from .config import load_config, load_preset, preset_names, save_config
from .ensemble import (
    ChunkParams,
    PipelineConfig,
    StageEntry,
    WeightVector,
    blend_weighted,
    instrument_bars,
    reconstruct_final,
    run_cdx_pipeline,
    run_mdx_pipeline,
    run_pipeline,
    vocal_stage,
)
from .metrics import SdrReport, instrumental_reference, sdr, sdr_dataset, sdr_record
from .optimize import WeightSearchProblem, coordinate_ascent, grid_search, score_weights
from .waveform import (
    ChunkPlan,
    Waveform,
    load_wav,
    mix_linear,
    overlap_add,
    plan_chunks,
    polarity_invert,
    save_wav,
)

__version__ = "0.1.0"
