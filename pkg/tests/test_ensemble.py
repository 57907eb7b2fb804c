import numpy as np
import pytest

from demixkit.backends import SeparatorSpec, StemSet
from demixkit.ensemble import (
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
from demixkit.metrics import sdr
from demixkit.waveform import Waveform

from conftest import noise_wave, random_truth, truth_mixture

WHOLE = ChunkParams(seconds=None)
MDX_STEMS = ("vocals", "bass", "drums", "other")


def oracle_entry(truth, stems, snr=np.inf, seed=0, tta=False, mode="direct"):
    spec = SeparatorSpec(
        kind="oracle",
        produced_stems=tuple(stems),
        output_mode=mode,
        noise_snr_db=snr,
        seed=seed,
        truth=truth,
    )
    return StageEntry(spec=spec, chunk=WHOLE, tta=tta)


def mdx_config(vocal_entries, vocal_weights, instr_entries, instr_weights=None):
    n = len(instr_entries)
    if instr_weights is None:
        instr_weights = {s: WeightVector((1.0,) * n) for s in ("bass", "drums", "other")}
    return PipelineConfig(
        mode="mdx",
        stems=MDX_STEMS,
        vocal_stem="vocals",
        vocal_stage=tuple(vocal_entries),
        vocal_weights=WeightVector(tuple(vocal_weights)),
        instrument_stage=tuple(instr_entries),
        instrument_weights=instr_weights,
    )


class TestWeightVector:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            WeightVector((1.0, -0.5))

    def test_rejects_all_zero(self):
        with pytest.raises(ValueError):
            WeightVector((0.0, 0.0))

    def test_normalized_sums_to_one(self):
        assert sum(WeightVector((10, 4, 2)).normalized()) == pytest.approx(1.0)


class TestBlendWeighted:
    def test_weighted_constants(self):
        ws = [Waveform(np.full((1, 6), v), 44100) for v in (1.0, 0.5, 0.0)]
        out = blend_weighted(ws, (10, 4, 2))
        np.testing.assert_allclose(out.samples, 0.75)

    def test_identical_inputs_fixed_point(self, rng):
        w = noise_wave(rng, 0.02)
        out = blend_weighted([w, w, w], (5, 1, 3))
        np.testing.assert_allclose(out.samples, w.samples, atol=1e-12)

    def test_degenerate_weight_selects_input(self, rng):
        a, b = noise_wave(rng, 0.02), noise_wave(rng, 0.02)
        out = blend_weighted([a, b], (1, 0))
        np.testing.assert_array_equal(out.samples, a.samples)

    def test_weight_scale_invariance_bit_identical(self, rng):
        ws = [noise_wave(rng, 0.02) for _ in range(3)]
        a = blend_weighted(ws, (1, 2, 3))
        b = blend_weighted(ws, (3, 6, 9))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_convex_hull(self, rng):
        ws = [noise_wave(rng, 0.02) for _ in range(3)]
        out = blend_weighted(ws, (2, 5, 1))
        stack = np.stack([w.samples for w in ws])
        assert (out.samples >= stack.min(axis=0) - 1e-12).all()
        assert (out.samples <= stack.max(axis=0) + 1e-12).all()

    def test_count_mismatch(self, rng):
        with pytest.raises(ValueError):
            blend_weighted([noise_wave(rng, 0.01)], (1, 1))


class TestVocalStage:
    def test_exact_oracle(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=0.2)
        mixture = truth_mixture(truth)
        cfg = mdx_config(
            [oracle_entry(truth, ["vocals"])], [1.0],
            [oracle_entry(truth, ["bass", "drums", "other"])],
        )
        vocals, instr = vocal_stage(cfg, mixture)
        np.testing.assert_array_equal(vocals.samples, truth["vocals"].samples)
        np.testing.assert_allclose(
            instr.samples, mixture.samples - truth["vocals"].samples, atol=1e-15
        )

    def test_vocals_plus_instr_is_mixture(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=0.2)
        mixture = truth_mixture(truth)
        cfg = mdx_config(
            [
                oracle_entry(truth, ["vocals"], snr=6.0, seed=1),
                oracle_entry(truth, ["vocals"], snr=9.0, seed=2, mode="complement"),
            ],
            [3, 2],
            [oracle_entry(truth, ["bass", "drums", "other"])],
        )
        vocals, instr = vocal_stage(cfg, mixture)
        np.testing.assert_allclose(vocals.samples + instr.samples, mixture.samples, atol=1e-12)

    def test_blend_beats_each_backend(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=1.0)
        mixture = truth_mixture(truth)
        entries = [
            oracle_entry(truth, ["vocals"], snr=10.0, seed=s) for s in (11, 22, 33)
        ]
        cfg = mdx_config(entries, [12, 8, 3], [oracle_entry(truth, ["bass", "drums", "other"])])
        vocals, _ = vocal_stage(cfg, mixture)
        blended = sdr(truth["vocals"], vocals)
        singles = [
            sdr(truth["vocals"], vocal_stage(mdx_config([e], [1.0], cfg.instrument_stage), mixture)[0])
            for e in entries
        ]
        assert blended > max(singles)


class TestInstrumentBars:
    def test_single_backend_bars_equal_its_stems(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=0.2)
        instr = truth_mixture(truth)
        cfg = mdx_config(
            [oracle_entry(truth, ["vocals"])], [1.0],
            [oracle_entry(truth, ["bass", "drums", "other"])],
        )
        bars = instrument_bars(cfg, instr)
        for stem in ("bass", "drums", "other"):
            np.testing.assert_allclose(bars[stem].samples, truth[stem].samples, atol=1e-12)

    def test_identical_backends_any_weights(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=0.2)
        instr = truth_mixture(truth)
        e = oracle_entry(truth, ["bass", "drums", "other"], snr=8.0, seed=5)
        weights = {s: WeightVector((19, 4, 8)) for s in ("bass", "drums", "other")}
        cfg = mdx_config([oracle_entry(truth, ["vocals"])], [1.0], [e, e, e], weights)
        bars = instrument_bars(cfg, instr)
        single = mdx_config([oracle_entry(truth, ["vocals"])], [1.0], [e])
        bars_single = instrument_bars(single, instr)
        for stem in ("bass", "drums", "other"):
            np.testing.assert_allclose(bars[stem].samples, bars_single[stem].samples, atol=1e-12)

    def test_two_backends_halve_error_energy(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=1.0)
        instr = truth_mixture(truth)
        e1 = oracle_entry(truth, ["bass", "drums", "other"], snr=10.0, seed=1)
        e2 = oracle_entry(truth, ["bass", "drums", "other"], snr=10.0, seed=2)
        weights = {s: WeightVector((1, 1)) for s in ("bass", "drums", "other")}
        vocal = [oracle_entry(truth, ["vocals"])]
        pair = instrument_bars(mdx_config(vocal, [1.0], [e1, e2], weights), instr)
        solo = instrument_bars(mdx_config(vocal, [1.0], [e1]), instr)
        err_pair = np.sum((pair["bass"].samples - truth["bass"].samples) ** 2)
        err_solo = np.sum((solo["bass"].samples - truth["bass"].samples) ** 2)
        assert 0.3 < err_pair / err_solo < 0.7


class TestReconstruction:
    def test_enforced_bar_sum_identities(self, rng):
        instr = noise_wave(rng, 0.2)
        bar_bass = noise_wave(rng, 0.2)
        bar_drums = noise_wave(rng, 0.2)
        bar_other = Waveform(
            instr.samples - bar_bass.samples - bar_drums.samples, instr.sample_rate
        )
        bass, drums, other = reconstruct_final(instr, bar_bass, bar_drums, bar_other)
        assert np.max(np.abs(bass.samples - bar_bass.samples)) < 1e-6
        assert np.max(np.abs(drums.samples - bar_drums.samples)) < 1e-6
        expected_other = bar_other.samples + (bar_bass.samples + bar_drums.samples) / 3.0
        assert np.max(np.abs(other.samples - expected_other)) < 1e-6

    def test_zero_bars_substitution(self, rng):
        x = noise_wave(rng, 0.1)
        zero = Waveform(np.zeros_like(x.samples), x.sample_rate)
        bass, drums, other = reconstruct_final(x, zero, zero, zero)
        np.testing.assert_allclose(bass.samples, x.samples / 3, atol=1e-12)
        np.testing.assert_allclose(drums.samples, x.samples / 3, atol=1e-12)
        np.testing.assert_allclose(other.samples, 2 * x.samples / 3, atol=1e-12)

    def test_all_zero(self):
        zero = Waveform(np.zeros((2, 50)), 44100)
        for w in reconstruct_final(zero, zero, zero, zero):
            assert not w.samples.any()

    def test_general_stem_sum_identity(self, rng):
        # without any bar-sum constraint: sum of reconstructed stems minus
        # the instrumental equals (instr - bar_other) / 3
        instr, b, d, o = (noise_wave(rng, 0.1) for _ in range(4))
        bass, drums, other = reconstruct_final(instr, b, d, o)
        total = bass.samples + drums.samples + other.samples
        expected_dev = (instr.samples - o.samples) / 3.0
        np.testing.assert_allclose(total - instr.samples, expected_dev, atol=1e-12)


class TestMdxPipeline:
    def test_exact_recovery_on_conserving_record(self, rng):
        # silent bass and drums make the literal reconstruction exact
        silent = Waveform(np.zeros((2, 8820)), 44100)
        truth = StemSet(
            {
                "vocals": noise_wave(rng, 0.2),
                "bass": silent,
                "drums": silent,
                "other": noise_wave(rng, 0.2),
            }
        )
        mixture = truth_mixture(truth)
        cfg = mdx_config(
            [oracle_entry(truth, ["vocals"])], [1.0],
            [oracle_entry(truth, ["bass", "drums", "other"])],
        )
        out = run_mdx_pipeline(cfg, mixture)
        for stem in MDX_STEMS:
            assert np.max(np.abs(out[stem].samples - truth[stem].samples)) < 1e-6

    def test_stem_sum_deviation_matches_bars(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=0.3)
        mixture = truth_mixture(truth)
        cfg = mdx_config(
            [oracle_entry(truth, ["vocals"], snr=12.0, seed=4)], [1.0],
            [
                oracle_entry(truth, ["bass", "drums", "other"], snr=10.0, seed=5),
                oracle_entry(truth, ["bass", "drums", "other"], snr=8.0, seed=6),
            ],
            {s: WeightVector((3, 2)) for s in ("bass", "drums", "other")},
        )
        out = run_mdx_pipeline(cfg, mixture)
        _, instr = vocal_stage(cfg, mixture)
        bars = instrument_bars(cfg, instr)
        total = sum(out[s].samples for s in MDX_STEMS)
        deviation = (instr.samples - bars["other"].samples) / 3.0
        np.testing.assert_allclose(total - mixture.samples, deviation, atol=1e-9)

    def test_conserve_other_flag(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=0.2)
        mixture = truth_mixture(truth)
        cfg = mdx_config(
            [oracle_entry(truth, ["vocals"], snr=10.0, seed=1)], [1.0],
            [oracle_entry(truth, ["bass", "drums", "other"], snr=10.0, seed=2)],
        )
        from dataclasses import replace

        out = run_mdx_pipeline(replace(cfg, conserve_other=True), mixture)
        total = sum(out[s].samples for s in MDX_STEMS)
        np.testing.assert_allclose(total, mixture.samples, atol=1e-9)

    def test_passthrough_smoke(self, rng):
        mixture = noise_wave(rng, 0.2)
        vocal = StageEntry(
            spec=SeparatorSpec(kind="passthrough", produced_stems=("vocals",)), chunk=WHOLE
        )
        instr = StageEntry(
            spec=SeparatorSpec(kind="passthrough", produced_stems=("bass", "drums", "other")),
            chunk=WHOLE,
        )
        cfg = mdx_config([vocal], [1.0], [instr])
        out = run_mdx_pipeline(cfg, mixture)
        assert set(out.keys()) == set(MDX_STEMS)
        assert out.length == mixture.length and out.sample_rate == mixture.sample_rate


class TestCdxPipeline:
    CDX_STEMS = ("dialog", "music", "sfx")

    def cdx_config(self, vocal_entries, weights, residual_entries):
        return PipelineConfig(
            mode="cdx",
            stems=self.CDX_STEMS,
            vocal_stem="dialog",
            vocal_stage=tuple(vocal_entries),
            vocal_weights=WeightVector(tuple(weights)),
            instrument_stage=tuple(residual_entries),
        )

    def test_exact_recovery(self, rng):
        truth = random_truth(rng, self.CDX_STEMS, seconds=0.2)
        mixture = truth_mixture(truth)
        cfg = self.cdx_config(
            [oracle_entry(truth, ["dialog"])], [10, 4, 2][:1],
            [oracle_entry(truth, ["music", "sfx"])],
        )
        out = run_cdx_pipeline(cfg, mixture)
        for stem in self.CDX_STEMS:
            assert np.max(np.abs(out[stem].samples - truth[stem].samples)) < 1e-6

    def test_band_residual_conserves_mixture(self, rng):
        truth = random_truth(rng, self.CDX_STEMS, seconds=0.2)
        mixture = truth_mixture(truth)
        band = StageEntry(
            spec=SeparatorSpec(kind="linear_band", produced_stems=("music", "sfx")),
            chunk=WHOLE,
        )
        cfg = self.cdx_config([oracle_entry(truth, ["dialog"])], [1.0], [band])
        out = run_cdx_pipeline(cfg, mixture)
        total = out["dialog"].samples + out["music"].samples + out["sfx"].samples
        np.testing.assert_allclose(total, mixture.samples, atol=1e-9)

    def test_single_checkpoint_identity(self, rng):
        truth = random_truth(rng, self.CDX_STEMS, seconds=0.2)
        mixture = truth_mixture(truth)
        ckpt = oracle_entry(truth, ["music", "sfx"], snr=9.0, seed=3)
        cfg = self.cdx_config([oracle_entry(truth, ["dialog"])], [1.0], [ckpt])
        out = run_cdx_pipeline(cfg, mixture)
        _, residual = vocal_stage(cfg, mixture)
        from demixkit.ensemble import evaluate_entry

        direct = evaluate_entry(ckpt, residual)
        np.testing.assert_array_equal(out["music"].samples, direct["music"].samples)


class TestConfigValidation:
    def test_weight_count_mismatch(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=0.05)
        with pytest.raises(ValueError, match="weights"):
            mdx_config(
                [oracle_entry(truth, ["vocals"])], [1.0, 2.0],
                [oracle_entry(truth, ["bass", "drums", "other"])],
            )

    def test_vocal_backend_must_produce_vocal_stem(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=0.05)
        with pytest.raises(ValueError, match="produce"):
            mdx_config(
                [oracle_entry(truth, ["bass"])], [1.0],
                [oracle_entry(truth, ["bass", "drums", "other"])],
            )

    def test_instrument_backend_missing_stem(self, rng):
        truth = random_truth(rng, MDX_STEMS, seconds=0.05)
        with pytest.raises(ValueError, match="lacks"):
            mdx_config(
                [oracle_entry(truth, ["vocals"])], [1.0],
                [oracle_entry(truth, ["bass", "drums"])],
            )

    def test_run_pipeline_dispatch(self, rng):
        mixture = noise_wave(rng, 0.05)
        cfg = PipelineConfig(
            mode="plain",
            stems=("mix",),
            plain_stage=(StageEntry(spec=SeparatorSpec(kind="passthrough"), chunk=WHOLE),),
        )
        out = run_pipeline(cfg, mixture)
        np.testing.assert_array_equal(out["mix"].samples, mixture.samples)
