"""Command-line entry point.

Subcommands: separate, evaluate, make-dataset, leaderboard, optimize-weights,
backends. Exit codes: 0 success, 1 usage/config/layout error, 2 partial batch
failure (some tracks failed; they are listed on stderr).
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .backends import BackendError, StemSet, backend_kinds
from .bench import (
    DatasetError,
    LeaderboardError,
    entry_from_report,
    evaluate_submission,
    leaderboard_update,
    leaderboard_view,
    make_synthetic_dataset,
    scan_dataset,
)
from .config import ConfigError, preset_names, resolve_config
from .ensemble import PipelineConfig, bind_oracle_truth, run_pipeline
from .metrics import SdrReport, format_report, load_report, report_rows, save_report
from .waveform import FLOAT32, WavError, load_wav, save_wav


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demixkit",
        description="Ensemble music demixing pipelines and SDR benchmarking.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("separate", help="run a separation pipeline on a WAV or dataset")
    p.add_argument("input", type=Path, help="input WAV file or dataset directory")
    p.add_argument("output", type=Path, help="output directory for stem WAVs")
    p.add_argument("--config", type=Path, help="pipeline config YAML")
    p.add_argument("--preset", help=f"shipped preset ({', '.join(preset_names())})")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--seed", type=int, help="override oracle-backend noise seeds")
    p.add_argument(
        "--encoding", default=FLOAT32, choices=["pcm16", "pcm24", "float32"],
        help="output WAV encoding",
    )
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="score a prediction directory against a dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("predictions", type=Path)
    p.add_argument("--report", type=Path, help="write report.json/.tsv/.png at this path")
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument(
        "--lenient", action="store_true",
        help="score missing predictions as silence and pad length mismatches",
    )
    p.add_argument("--no-figure", action="store_true", help="skip the report chart")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("make-dataset", help="generate a synthetic benchmark dataset")
    p.add_argument("output", type=Path)
    p.add_argument("--vocal-pool", type=Path, help="directory of vocal source WAVs")
    p.add_argument("--instr-pool", type=Path, help="directory of instrumental source WAVs")
    p.add_argument(
        "--pool", action="append", default=[], metavar="STEM=DIR",
        help="extra stem pool (repeatable)",
    )
    p.add_argument("--tracks", type=int, default=100)
    p.add_argument("--duration", type=float, default=60.0, help="seconds per track")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=int, default=44100)
    p.add_argument("--channels", type=int, default=2)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("leaderboard", help="view or append to a leaderboard store")
    p.add_argument("store", type=Path)
    p.add_argument("--sort", default="total", help="bass|drums|other|vocals|instrum|total|...")
    p.add_argument("--submit", type=Path, metavar="REPORT_JSON", help="append this report")
    p.add_argument("--name", help="submission name (required with --submit)")
    p.add_argument("--notes", default="")
    p.add_argument("--figure", type=Path, help="render the ranked chart to this file")
    p.set_defaults(func=cmd_leaderboard)

    p = sub.add_parser("optimize-weights", help="search blend weights on a validation set")
    p.add_argument("dataset", type=Path, help="dataset with ground-truth stems")
    p.add_argument("--config", type=Path)
    p.add_argument("--preset")
    p.add_argument("--stage", default="vocal", choices=["vocal", "instrument"])
    p.add_argument("--stem", help="stem to optimize (default: the stage's natural stem)")
    p.add_argument("--grid", default="0:8", help="integer range LO:HI or comma list per dimension")
    p.add_argument("--method", default="grid", choices=["grid", "ascent"])
    p.add_argument("--cache", type=Path, help="cache directory for backend outputs")
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument("--report", type=Path, help="write results .json/.tsv/.png at this path")
    p.add_argument("--top", type=int, default=10, help="rows of the ranked table to print")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_optimize_weights)

    p = sub.add_parser("backends", help="list backend kinds and validate a config")
    p.add_argument("--config", type=Path)
    p.add_argument("--preset")
    p.set_defaults(func=cmd_backends)

    return parser


# ---------------------------------------------------------------------------
# separate
# ---------------------------------------------------------------------------


def _override_seeds(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    counter = [0]

    def bump(entries):
        out = []
        for entry in entries:
            if entry.spec.kind == "oracle":
                entry = replace(entry, spec=replace(entry.spec, seed=seed + counter[0]))
                counter[0] += 1
            out.append(entry)
        return tuple(out)

    return replace(
        cfg,
        vocal_stage=bump(cfg.vocal_stage),
        instrument_stage=bump(cfg.instrument_stage),
        plain_stage=bump(cfg.plain_stage),
    )


def _needs_truth(cfg: PipelineConfig) -> bool:
    entries = cfg.vocal_stage + cfg.instrument_stage + cfg.plain_stage
    return any(
        e.spec.kind == "oracle" and e.spec.truth is None and e.spec.truth_dir is None
        for e in entries
    )


def _input_tracks(input_path: Path) -> list[tuple[str, Path, Path | None]]:
    """(track_id, mixture path, track dir or None for a bare file)."""
    if input_path.is_file():
        return [(input_path.stem, input_path, None)]
    if not input_path.is_dir():
        raise DatasetError(f"input does not exist: {input_path}")
    tracks = []
    for track_dir in sorted(p for p in input_path.iterdir() if p.is_dir()):
        mixture = track_dir / "mixture.wav"
        if mixture.is_file():
            tracks.append((track_dir.name, mixture, track_dir))
    if not tracks:
        raise DatasetError(f"no track folders with mixture.wav under {input_path}")
    return tracks


def cmd_separate(args) -> int:
    cfg = resolve_config(args.config, args.preset)
    if args.seed is not None:
        cfg = _override_seeds(cfg, args.seed)
    tracks = _input_tracks(args.input)
    batch = args.input.is_dir()
    args.output.mkdir(parents=True, exist_ok=True)
    needs_truth = _needs_truth(cfg)

    def run_track(track) -> tuple[str, str | None]:
        tid, mixture_path, track_dir = track
        try:
            mixture = load_wav(mixture_path)
            track_cfg = cfg
            if needs_truth:
                if track_dir is None:
                    raise ConfigError(
                        "oracle backends need ground-truth stems; separate a dataset "
                        "directory or set truth_dir in the config"
                    )
                stems = {
                    p.stem: load_wav(p)
                    for p in sorted(track_dir.glob("*.wav"))
                    if p.stem != "mixture"
                }
                if not stems:
                    raise ConfigError(f"{tid}: no ground-truth stems for the oracle backends")
                track_cfg = bind_oracle_truth(cfg, StemSet(stems))
            result = run_pipeline(track_cfg, mixture, jobs=1 if batch else args.jobs)
            out_dir = args.output / tid if batch else args.output
            out_dir.mkdir(parents=True, exist_ok=True)
            for stem, w in result.items():
                save_wav(w, out_dir / f"{stem}.wav", args.encoding)
            return tid, None
        except (BackendError, WavError, DatasetError, ConfigError, ValueError) as exc:
            return tid, str(exc)

    if batch and args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_track, tracks))
    else:
        results = [run_track(t) for t in tracks]

    failures = [(tid, msg) for tid, msg in results if msg is not None]
    for tid, msg in failures:
        print(f"failed: {tid}: {msg}", file=sys.stderr)
    print(f"separated {len(results) - len(failures)}/{len(results)} tracks into {args.output}")
    return 2 if failures else 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _write_tsv(report: SdrReport, path: Path) -> None:
    lines = ["record_id\tstem\tsdr_db"]
    lines += [f"{rid}\t{stem}\t{value!r}" for rid, stem, value in report_rows(report)]
    path.write_text("\n".join(lines) + "\n")


def _write_report_files(report: SdrReport, path: Path, figure: bool) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.with_suffix("") if path.suffix else path
    save_report(report, base.with_suffix(".json"))
    _write_tsv(report, base.with_suffix(".tsv"))
    if figure:
        from .figures import save_report_figure

        save_report_figure(report, base.with_suffix(".png"))


def cmd_evaluate(args) -> int:
    records = scan_dataset(args.dataset, strict=not args.lenient)
    report = evaluate_submission(
        records,
        args.predictions,
        epsilon=args.epsilon,
        on_missing="zero" if args.lenient else "error",
        pad=args.lenient,
        jobs=args.jobs,
    )
    print(format_report(report))
    if args.report is not None:
        _write_report_files(report, args.report, figure=not args.no_figure)
        print(f"report written to {args.report.with_suffix('.json')}")
    return 0


# ---------------------------------------------------------------------------
# make-dataset
# ---------------------------------------------------------------------------


def cmd_make_dataset(args) -> int:
    pools: dict[str, Path] = {}
    if args.vocal_pool is not None:
        pools["vocals"] = args.vocal_pool
    if args.instr_pool is not None:
        pools["instrumental"] = args.instr_pool
    for item in args.pool:
        stem, sep, pool_dir = item.partition("=")
        if not sep or not stem or not pool_dir:
            raise ConfigError(f"--pool expects STEM=DIR, got {item!r}")
        pools[stem] = Path(pool_dir)
    if not pools:
        raise ConfigError("no pools given; use --vocal-pool/--instr-pool or --pool STEM=DIR")
    out = make_synthetic_dataset(
        args.output,
        pools,
        n_tracks=args.tracks,
        duration_s=args.duration,
        seed=args.seed,
        sample_rate=args.rate,
        channels=args.channels,
    )
    print(f"wrote {args.tracks} tracks ({sorted(pools)}) to {out}")
    return 0


# ---------------------------------------------------------------------------
# leaderboard
# ---------------------------------------------------------------------------


def cmd_leaderboard(args) -> int:
    if args.submit is not None:
        if not args.name:
            raise ConfigError("--submit requires --name")
        report = load_report(args.submit)
        entry = entry_from_report(args.name, report, notes=args.notes)
        leaderboard_update(args.store, entry)
        print(f"submitted {args.name!r} (total {entry.total:.2f} dB)")
        return 0

    entries = leaderboard_view(args.store, args.sort)
    stems = sorted({s for e in entries for s in e.per_stem})
    header = ["rank", "name"] + stems + ["instrum", "total", "submitted_at"]
    print("\t".join(header))
    for rank, e in enumerate(entries, start=1):
        row = [str(rank), e.name]
        row += [f"{e.per_stem[s]:.2f}" if s in e.per_stem else "-" for s in stems]
        row.append(f"{e.instrumental:.2f}" if e.instrumental is not None else "-")
        row.append(f"{e.total:.2f}")
        row.append(e.submitted_at)
        print("\t".join(row))
    if args.figure is not None and entries:
        from .figures import save_leaderboard_figure

        save_leaderboard_figure(entries, args.sort, args.figure)
        print(f"chart written to {args.figure}")
    return 0


# ---------------------------------------------------------------------------
# optimize-weights
# ---------------------------------------------------------------------------


def _parse_grid_values(text: str) -> list[float]:
    if ":" in text:
        lo, _, hi = text.partition(":")
        return [float(v) for v in range(int(lo), int(hi) + 1)]
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_optimize_weights(args) -> int:
    from .optimize import coordinate_ascent, grid_search, precompute_estimates

    cfg = resolve_config(args.config, args.preset)
    if cfg.mode == "plain":
        raise ConfigError("optimize-weights needs a staged (mdx/cdx) config")
    entries = list(cfg.vocal_stage if args.stage == "vocal" else cfg.instrument_stage)
    stem = args.stem or (cfg.vocal_stem if args.stage == "vocal" else None)
    if stem is None:
        raise ConfigError("--stem is required for the instrument stage")
    for entry in entries:
        if stem not in entry.spec.produced_stems:
            raise ConfigError(
                f"backend {entry.name or entry.spec.kind!r} does not produce {stem!r}"
            )

    records = scan_dataset(args.dataset, strict=True)
    if not records:
        raise DatasetError(f"no records under {args.dataset}")
    tracks = []
    truths = []
    for record in records:
        mixture = load_wav(record.mixture_path)
        stems = {s: load_wav(p) for s, p in record.stem_paths.items()}
        if stem not in stems:
            raise DatasetError(f"{record.id}: dataset has no ground truth for stem {stem!r}")
        tracks.append((record.id, mixture, stems[stem]))
        truths.append(StemSet(stems))

    problem = precompute_estimates(
        tracks, entries, stem,
        cache_dir=args.cache, epsilon=args.epsilon, jobs=args.jobs, bind_truth=truths,
    )

    if args.method == "grid":
        values = _parse_grid_values(args.grid)
        best, best_score, table = grid_search(problem, [values] * len(entries))
    else:
        init = [1.0] * len(entries)
        best, best_score = coordinate_ascent(problem, init)
        table = [(best.weights, best_score)]

    names = [e.name or f"backend_{i}" for i, e in enumerate(entries)]
    print(f"stem {stem!r}, backends: {', '.join(names)}")
    print(f"best weights: {'/'.join(f'{w:g}' for w in best.weights)}  ({best_score:.3f} dB)")
    ranked = sorted(table, key=lambda row: -row[1])
    for vec, score in ranked[: args.top]:
        print("  " + "/".join(f"{w:g}" for w in vec) + f"\t{score:.3f}")

    if args.report is not None:
        args.report.parent.mkdir(parents=True, exist_ok=True)
        base = args.report.with_suffix("") if args.report.suffix else args.report
        import json

        base.with_suffix(".json").write_text(
            json.dumps(
                {
                    "stem": stem,
                    "backends": names,
                    "best_weights": list(best.weights),
                    "best_score_db": best_score,
                    "table": [{"weights": list(v), "score_db": s} for v, s in ranked],
                },
                indent=2,
            )
            + "\n"
        )
        tsv = ["weights\tscore_db"] + [
            "/".join(f"{w:g}" for w in vec) + f"\t{score!r}" for vec, score in ranked
        ]
        base.with_suffix(".tsv").write_text("\n".join(tsv) + "\n")
        from .figures import save_weight_search_figure

        save_weight_search_figure(table, base.with_suffix(".png"), stem)
        print(f"results written to {base.with_suffix('.json')}")
    return 0


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------


def cmd_backends(args) -> int:
    print("backend kinds: " + ", ".join(backend_kinds()))
    if args.config is None and args.preset is None:
        print("presets: " + ", ".join(preset_names()))
        return 0
    cfg = resolve_config(args.config, args.preset)
    entries = cfg.vocal_stage + cfg.instrument_stage + cfg.plain_stage
    print(f"config ok: mode={cfg.mode}, stems={list(cfg.stems)}, {len(entries)} backends")
    for entry in entries:
        line = f"  {entry.name or '(unnamed)'}: kind={entry.spec.kind}"
        if entry.spec.kind == "external":
            exe = entry.spec.command[0]
            found = shutil.which(exe)
            line += f", command={exe!r} ({'found' if found else 'NOT FOUND on PATH'})"
        print(line)
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits: keep 0 for --help, 1 for usage errors
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, LeaderboardError, WavError, BackendError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
