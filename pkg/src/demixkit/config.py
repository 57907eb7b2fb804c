"""YAML (de)serialization of pipeline configs and the shipped presets.

Schema (top level): mode, stems, vocal_stem, vocal_stage {backends, weights},
instrument_stage {backends, weights}, backends (plain mode), reconstruction,
conserve_other. Each backend entry: name, kind, produces, output, command,
chunk {seconds, overlap, shifts, max_shift_seconds}, tta, plus kind-specific
fields (noise_snr_db/seed/truth_dir, split_hz, timeout_s, expected_channels,
check_deterministic, checkpoint).
"""

from __future__ import annotations

import math
import os
from importlib import resources
from pathlib import Path

import yaml

from .backends import SeparatorSpec
from .ensemble import ChunkParams, PipelineConfig, StageEntry, WeightVector

__all__ = [
    "ConfigError",
    "load_config",
    "save_config",
    "config_from_dict",
    "config_to_dict",
    "load_preset",
    "preset_names",
    "resolve_config",
]


class ConfigError(Exception):
    """Malformed or inconsistent pipeline configuration."""


_BACKEND_KEYS = {
    "name",
    "kind",
    "produces",
    "output",
    "command",
    "chunk",
    "tta",
    "noise_snr_db",
    "seed",
    "truth_dir",
    "split_hz",
    "timeout_s",
    "expected_channels",
    "check_deterministic",
    "checkpoint",
}
_CHUNK_KEYS = {"seconds", "overlap", "shifts", "max_shift_seconds"}
_TOP_KEYS = {
    "mode",
    "stems",
    "vocal_stem",
    "vocal_stage",
    "instrument_stage",
    "backends",
    "reconstruction",
    "conserve_other",
}


def _reject_unknown(d: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")


def _entry_from_dict(d: dict, where: str) -> StageEntry:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: backend entry must be a mapping")
    _reject_unknown(d, _BACKEND_KEYS, where)
    if "kind" not in d:
        raise ConfigError(f"{where}: backend entry needs a 'kind'")
    chunk_d = d.get("chunk", {}) or {}
    _reject_unknown(chunk_d, _CHUNK_KEYS, f"{where}.chunk")
    chunk = ChunkParams(
        seconds=chunk_d.get("seconds", 10.0),
        overlap=float(chunk_d.get("overlap", 0.25)),
        shifts=int(chunk_d.get("shifts", 1)),
        max_shift_seconds=float(chunk_d.get("max_shift_seconds", 0.5)),
    )
    snr = d.get("noise_snr_db", math.inf)
    try:
        spec = SeparatorSpec(
            kind=d["kind"],
            produced_stems=tuple(d.get("produces", ("mix",))),
            output_mode=d.get("output", "direct"),
            command=tuple(d.get("command", ())),
            timeout_s=float(d.get("timeout_s", 600.0)),
            expected_channels=d.get("expected_channels"),
            check_deterministic=bool(d.get("check_deterministic", False)),
            noise_snr_db=math.inf if snr in (None, ".inf", "inf") else float(snr),
            seed=int(d.get("seed", 0)),
            truth_dir=d.get("truth_dir"),
            split_hz=float(d.get("split_hz", 1000.0)),
            checkpoint_tag=d.get("checkpoint"),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return StageEntry(spec=spec, chunk=chunk, tta=bool(d.get("tta", False)), name=d.get("name", ""))


def _entry_to_dict(entry: StageEntry) -> dict:
    spec = entry.spec
    d: dict = {"kind": spec.kind, "produces": list(spec.produced_stems)}
    if entry.name:
        d["name"] = entry.name
    if spec.output_mode != "direct":
        d["output"] = spec.output_mode
    if spec.command:
        d["command"] = list(spec.command)
    if spec.kind == "oracle":
        if math.isfinite(spec.noise_snr_db):
            d["noise_snr_db"] = spec.noise_snr_db
        d["seed"] = spec.seed
        if spec.truth_dir is not None:
            d["truth_dir"] = str(spec.truth_dir)
    if spec.kind == "linear_band":
        d["split_hz"] = spec.split_hz
    if spec.kind == "external":
        d["timeout_s"] = spec.timeout_s
        if spec.expected_channels is not None:
            d["expected_channels"] = spec.expected_channels
        if spec.check_deterministic:
            d["check_deterministic"] = True
    if spec.checkpoint_tag:
        d["checkpoint"] = spec.checkpoint_tag
    if entry.tta:
        d["tta"] = True
    d["chunk"] = {
        "seconds": entry.chunk.seconds,
        "overlap": entry.chunk.overlap,
        "shifts": entry.chunk.shifts,
        "max_shift_seconds": entry.chunk.max_shift_seconds,
    }
    return d


def config_from_dict(d: dict) -> PipelineConfig:
    if not isinstance(d, dict):
        raise ConfigError("config document must be a mapping")
    _reject_unknown(d, _TOP_KEYS, "config")
    mode = d.get("mode", "mdx")
    stems = tuple(d.get("stems", ()))
    try:
        if mode == "plain":
            entries = tuple(
                _entry_from_dict(e, f"backends[{i}]") for i, e in enumerate(d.get("backends", []))
            )
            return PipelineConfig(mode="plain", stems=stems, plain_stage=entries)

        vocal = d.get("vocal_stage") or {}
        _reject_unknown(vocal, {"backends", "weights"}, "vocal_stage")
        vocal_entries = tuple(
            _entry_from_dict(e, f"vocal_stage.backends[{i}]")
            for i, e in enumerate(vocal.get("backends", []))
        )
        vocal_weights = (
            WeightVector(tuple(vocal["weights"])) if vocal.get("weights") else None
        )

        instr = d.get("instrument_stage") or {}
        _reject_unknown(instr, {"backends", "weights"}, "instrument_stage")
        instr_entries = tuple(
            _entry_from_dict(e, f"instrument_stage.backends[{i}]")
            for i, e in enumerate(instr.get("backends", []))
        )
        instr_weights = None
        if instr.get("weights"):
            instr_weights = {
                stem: WeightVector(tuple(ws)) for stem, ws in instr["weights"].items()
            }
        return PipelineConfig(
            mode=mode,
            stems=stems,
            vocal_stem=d.get("vocal_stem"),
            vocal_stage=vocal_entries,
            vocal_weights=vocal_weights,
            instrument_stage=instr_entries,
            instrument_weights=instr_weights,
            reconstruction=bool(d.get("reconstruction", True)),
            conserve_other=bool(d.get("conserve_other", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: PipelineConfig) -> dict:
    d: dict = {"mode": cfg.mode, "stems": list(cfg.stems)}
    if cfg.mode == "plain":
        d["backends"] = [_entry_to_dict(e) for e in cfg.plain_stage]
        return d
    d["vocal_stem"] = cfg.vocal_stem
    d["vocal_stage"] = {
        "backends": [_entry_to_dict(e) for e in cfg.vocal_stage],
        "weights": list(cfg.vocal_weights.weights),
    }
    instr: dict = {"backends": [_entry_to_dict(e) for e in cfg.instrument_stage]}
    if cfg.instrument_weights is not None:
        instr["weights"] = {s: list(w.weights) for s, w in cfg.instrument_weights.items()}
    d["instrument_stage"] = instr
    d["reconstruction"] = cfg.reconstruction
    d["conserve_other"] = cfg.conserve_other
    return d


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return config_from_dict(doc)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))


def preset_names() -> list[str]:
    files = resources.files("demixkit").joinpath("presets")
    return sorted(p.name[: -len(".yaml")] for p in files.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> PipelineConfig:
    path = resources.files("demixkit").joinpath("presets", f"{name}.yaml")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return config_from_dict(yaml.safe_load(path.read_text()))


CONFIG_DIR_ENV = "DEMIXKIT_CONFIG_DIR"


def resolve_config(config: str | None, preset: str | None) -> PipelineConfig:
    """Load from --config or --preset; exactly one must be given.

    A relative --config path that does not exist is also tried under
    $DEMIXKIT_CONFIG_DIR, so shared pipeline configs can live in one place.
    """
    if (config is None) == (preset is None):
        raise ConfigError("pass exactly one of --config PATH or --preset NAME")
    if config is not None:
        path = Path(config)
        env_dir = os.environ.get(CONFIG_DIR_ENV)
        if not path.is_file() and not path.is_absolute() and env_dir:
            fallback = Path(env_dir) / path
            if fallback.is_file():
                return load_config(fallback)
        return load_config(path)
    return load_preset(preset)
