import numpy as np
import pytest

from demixkit.backends import StemSet
from demixkit.waveform import FLOAT32, Waveform, save_wav


def noise_wave(rng, seconds, rate=44100, channels=2, amp=0.3) -> Waveform:
    n = round(seconds * rate)
    return Waveform(amp * rng.standard_normal((channels, n)), rate)


def tone_wave(freq, seconds, rate=44100, channels=2, amp=0.5) -> Waveform:
    t = np.arange(round(seconds * rate)) / rate
    ch = amp * np.sin(2 * np.pi * freq * t)
    return Waveform(np.tile(ch, (channels, 1)), rate)


def add_noise_at_snr(rng, w: Waveform, snr_db: float) -> Waveform:
    """w plus gaussian noise scaled so signal/noise energy is exactly the SNR."""
    g = rng.standard_normal(w.samples.shape)
    scale = np.sqrt(np.sum(w.samples**2) / (10 ** (snr_db / 10.0)) / np.sum(g**2))
    return Waveform(w.samples + scale * g, w.sample_rate)


def random_truth(rng, stems, seconds=1.0, rate=44100, channels=2, amp=0.25) -> StemSet:
    return StemSet({s: noise_wave(rng, seconds, rate, channels, amp) for s in stems})


def truth_mixture(truth: StemSet) -> Waveform:
    total = np.zeros_like(next(iter(truth.items()))[1].samples)
    for _, w in truth.items():
        total = total + w.samples
    return Waveform(total, truth.sample_rate)


def write_pool(pool_dir, rng, n_files=3, seconds=1.5, rate=44100, channels=1):
    pool_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_files):
        w = noise_wave(rng, seconds, rate, channels, amp=0.4)
        save_wav(w, pool_dir / f"src_{i}.wav", FLOAT32)
    return pool_dir


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
