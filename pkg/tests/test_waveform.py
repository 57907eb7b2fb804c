import struct

import numpy as np
import pytest

from demixkit.waveform import (
    FLOAT32,
    PCM16,
    PCM24,
    MalformedWavError,
    TruncatedWavError,
    UnsupportedWavError,
    Waveform,
    load_wav,
    mix_linear,
    overlap_add,
    plan_chunks,
    polarity_invert,
    save_wav,
    slice_chunk,
    wav_info,
    window_weight_sums,
)


def wav_bytes(tag, channels, rate, bits, body):
    block = channels * bits // 8
    return b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(body)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, tag, channels, rate, rate * block, block, bits),
            b"data",
            struct.pack("<I", len(body)),
            body,
        ]
    )


class TestWaveform:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Waveform(np.array([[0.0, np.nan]]), 44100)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            Waveform(np.zeros((1, 4)), 0)

    def test_mono_promoted_to_2d(self):
        w = Waveform(np.zeros(5), 8000)
        assert w.channels == 1 and w.length == 5


class TestWavIo:
    def test_pcm16_scaling(self, tmp_path):
        body = struct.pack("<3h", 0, 16384, -16384)
        path = tmp_path / "a.wav"
        path.write_bytes(wav_bytes(1, 1, 44100, 16, body))
        w = load_wav(path)
        assert w.sample_rate == 44100
        np.testing.assert_allclose(w.samples[0], [0.0, 0.5, -0.5], atol=1 / 32768)

    def test_one_minute_stereo_sample_count(self, tmp_path):
        w = Waveform(np.zeros((2, 60 * 44100)), 44100)
        path = tmp_path / "m.wav"
        save_wav(w, path, FLOAT32)
        back = load_wav(path)
        assert back.length == 2_646_000
        assert back.channels == 2

    def test_float32_roundtrip_bit_identical(self, rng, tmp_path):
        data = rng.standard_normal((2, 1000)).astype(np.float32).astype(np.float64)
        w = Waveform(data, 48000)
        path = tmp_path / "f.wav"
        assert save_wav(w, path, FLOAT32) == 0
        back = load_wav(path)
        assert back.sample_rate == 48000
        assert np.array_equal(back.samples, w.samples)

    def test_pcm16_roundtrip_tolerance(self, rng, tmp_path):
        w = Waveform(0.9 * rng.standard_normal((2, 500)).clip(-1, 1), 44100)
        path = tmp_path / "p16.wav"
        save_wav(w, path, PCM16)
        back = load_wav(path)
        assert np.max(np.abs(back.samples - w.samples)) <= 1 / 32768

    def test_pcm24_roundtrip_tolerance(self, rng, tmp_path):
        w = Waveform(0.9 * rng.standard_normal((1, 500)).clip(-1, 1), 44100)
        path = tmp_path / "p24.wav"
        save_wav(w, path, PCM24)
        back = load_wav(path)
        assert np.max(np.abs(back.samples - w.samples)) <= 1 / 8388608

    def test_pcm24_odd_body_is_pad_aligned(self, rng, tmp_path):
        # mono 24-bit with an odd sample count gives an odd data chunk
        w = Waveform(0.5 * rng.standard_normal((1, 333)), 44100)
        path = tmp_path / "odd.wav"
        save_wav(w, path, PCM24)
        assert path.stat().st_size % 2 == 0
        assert load_wav(path).length == 333

    def test_clip_count_on_overrange(self, tmp_path):
        w = Waveform(np.array([[0.0, 1.5, -0.25]]), 44100)
        path = tmp_path / "clip.wav"
        assert save_wav(w, path, PCM16) == 1
        back = load_wav(path)
        assert back.samples[0, 1] == pytest.approx(1.0, abs=1 / 32768)

    def test_empty_waveform_roundtrip(self, tmp_path):
        w = Waveform(np.zeros((2, 0)), 44100)
        path = tmp_path / "empty.wav"
        save_wav(w, path, FLOAT32)
        back = load_wav(path)
        assert back.length == 0 and back.channels == 2

    def test_wav_info_header_only(self, tmp_path):
        w = Waveform(np.zeros((2, 123)), 22050)
        path = tmp_path / "i.wav"
        save_wav(w, path, PCM24)
        assert wav_info(path) == (22050, 2, 123, PCM24)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"NOTRIFFDATA" + b"\x00" * 64)
        with pytest.raises(MalformedWavError):
            load_wav(path)

    def test_unsupported_encoding(self, tmp_path):
        path = tmp_path / "u8.wav"
        path.write_bytes(wav_bytes(1, 1, 8000, 8, b"\x80\x80"))
        with pytest.raises(UnsupportedWavError):
            load_wav(path)

    def test_truncated_data_chunk(self, tmp_path):
        good = wav_bytes(1, 1, 8000, 16, struct.pack("<4h", 1, 2, 3, 4))
        path = tmp_path / "t.wav"
        path.write_bytes(good[:-3])
        with pytest.raises(TruncatedWavError):
            load_wav(path)

    def test_save_into_missing_dir(self, tmp_path):
        w = Waveform(np.zeros((1, 4)), 8000)
        with pytest.raises(FileNotFoundError):
            save_wav(w, tmp_path / "nope" / "x.wav")


class TestAlgebra:
    def test_invert_values(self):
        w = Waveform(np.array([[1.0, -0.5, 0.0]]), 44100)
        np.testing.assert_array_equal(polarity_invert(w).samples, [[-1.0, 0.5, 0.0]])

    def test_invert_involution(self, rng):
        w = Waveform(rng.standard_normal((2, 400)), 44100)
        np.testing.assert_array_equal(polarity_invert(polarity_invert(w)).samples, w.samples)

    def test_invert_silence(self):
        w = Waveform(np.zeros((2, 10)), 44100)
        assert not polarity_invert(w).samples.any()

    def test_mix_cancellation(self, rng):
        w = Waveform(rng.standard_normal((2, 64)), 44100)
        out = mix_linear([w, w], [1.0, -1.0])
        assert not out.samples.any()

    def test_mix_normalized_weights(self):
        ws = [Waveform(np.full((1, 8), v), 44100) for v in (1.0, 0.5, 0.0)]
        out = mix_linear(ws, [10 / 16, 4 / 16, 2 / 16])
        np.testing.assert_allclose(out.samples, 0.75)

    def test_mix_identity(self, rng):
        w = Waveform(rng.standard_normal((2, 64)), 44100)
        np.testing.assert_array_equal(mix_linear([w], [1.0]).samples, w.samples)

    def test_invert_commutes_with_mix(self, rng):
        ws = [Waveform(rng.standard_normal((2, 64)), 44100) for _ in range(3)]
        coeffs = [0.5, -1.25, 2.0]
        a = polarity_invert(mix_linear(ws, coeffs))
        b = mix_linear([polarity_invert(w) for w in ws], coeffs)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_mix_shape_mismatch(self, rng):
        a = Waveform(np.zeros((2, 10)), 44100)
        b = Waveform(np.zeros((2, 11)), 44100)
        with pytest.raises(ValueError):
            mix_linear([a, b], [1.0, 1.0])
        with pytest.raises(ValueError):
            mix_linear([], [])


class TestChunkPlanning:
    def test_single_whole_chunk(self):
        plan = plan_chunks(100, 100, 0.0)
        assert plan.hop == 100
        assert plan.offsets == (0,)

    def test_hop_and_offsets(self):
        plan = plan_chunks(100, 50, 0.6)
        assert plan.hop == 20
        assert plan.offsets == (0, 20, 40, 60, 80)

    def test_weight_sums_uniform(self):
        # brute-force oracle: add raw window contributions at every index
        plan = plan_chunks(100, 50, 0.6)
        expected = np.zeros(100)
        for off in plan.offsets:
            for i in range(plan.chunk_len):
                if off + i < 100:
                    expected[off + i] += plan.window[i]
        sums = window_weight_sums(plan, 100)
        np.testing.assert_allclose(sums, expected, rtol=0, atol=1e-12)
        assert (sums > 0).all()

    def test_short_signal_single_padded_chunk(self, rng):
        plan = plan_chunks(10, 50, 0.5)
        assert plan.offsets == (0,)
        w = Waveform(rng.standard_normal((1, 10)), 8000)
        piece = slice_chunk(w, 0, 50)
        assert piece.length == 50
        out = overlap_add([(0, piece)], plan, 10)
        np.testing.assert_allclose(out.samples, w.samples, atol=1e-12)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            plan_chunks(10, 0, 0.0)
        with pytest.raises(ValueError):
            plan_chunks(10, 4, 1.0)


class TestOverlapAdd:
    def test_reconstruction_60s(self, rng):
        rate = 44100
        w = Waveform(rng.standard_normal((2, 60 * rate)), rate)
        plan = plan_chunks(w.length, 10 * rate, 0.6)
        pieces = [(off, slice_chunk(w, off, plan.chunk_len)) for off in plan.offsets]
        out = overlap_add(pieces, plan, w.length)
        assert np.max(np.abs(out.samples - w.samples)) < 1e-6

    def test_identity_single_chunk(self, rng):
        w = Waveform(rng.standard_normal((2, 500)), 44100)
        plan = plan_chunks(500, 500, 0.0)
        out = overlap_add([(0, w)], plan, 500)
        np.testing.assert_allclose(out.samples, w.samples, atol=1e-12)

    def test_zero_pieces_zero_output(self):
        plan = plan_chunks(100, 40, 0.5)
        pieces = [(off, Waveform(np.zeros((1, 40)), 8000)) for off in plan.offsets]
        assert not overlap_add(pieces, plan, 100).samples.any()

    def test_misaligned_pieces_rejected(self, rng):
        plan = plan_chunks(100, 40, 0.5)
        pieces = [(off + 1, Waveform(np.zeros((1, 40)), 8000)) for off in plan.offsets]
        with pytest.raises(ValueError):
            overlap_add(pieces, plan, 100)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_slice_then_ola_identity_random_configs(self, seed):
        rng = np.random.default_rng(seed)
        length = int(rng.integers(50, 4000))
        chunk = int(rng.integers(16, 700))
        overlap = float(rng.uniform(0.0, 0.9))
        w = Waveform(rng.standard_normal((2, length)), 44100)
        plan = plan_chunks(length, chunk, overlap)
        pieces = [(off, slice_chunk(w, off, chunk)) for off in plan.offsets]
        out = overlap_add(pieces, plan, length)
        assert np.max(np.abs(out.samples - w.samples)) < 1e-9

    @pytest.mark.parametrize("seed", [10, 11, 12])
    def test_partition_of_unity_after_normalization(self, seed):
        rng = np.random.default_rng(seed)
        length = int(rng.integers(30, 3000))
        chunk = int(rng.integers(8, 500))
        overlap = float(rng.uniform(0.0, 0.95))
        plan = plan_chunks(length, chunk, overlap)
        ones = [(off, Waveform(np.ones((1, chunk)), 8000)) for off in plan.offsets]
        out = overlap_add(ones, plan, length)
        np.testing.assert_allclose(out.samples, 1.0, rtol=0, atol=1e-9)
