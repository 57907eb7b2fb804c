"""Published benchmark score snapshots, shipped as fixtures.

These are leaderboard numbers for pretrained neural separators and contest
ensembles on the public MVSep quality-checker benchmarks and the SDX23
hidden test sets. They exist for documentation and for leaderboard fixture
tests; nothing in this package can recompute them, since they require the
original model checkpoints and non-public test audio.
"""

__all__ = [
    "SYNTH_SINGLE_MODELS",
    "MULTISONG_VOCAL_MODELS",
    "MULTISONG_INSTRUMENT_MODELS",
    "FINAL_ENSEMBLE_SCORES",
]

# Synth MVSep benchmark, single models: (name, SDR instrumental, SDR vocals).
SYNTH_SINGLE_MODELS = [
    ("Our MDX23 (ZFTurbo) model", 11.11, 11.40),
    ("MDX-Net Kim_Vocal_1 (FFT 7680)", 10.83, 11.15),
    ("MDX-Net UVR-MDX-NET Inst 3 (FFT 6144)", 10.61, 11.01),
    ("MDX-B (best vocals model, MDX21)", 10.45, 10.88),
    ("Demucs4 HT htdemucs_ft (shifts 1, overlap 0.75)", 9.96, 10.26),
    ("Demucs4 HT htdemucs_ft (repository default)", 9.94, 10.23),
    ("Demucs3 (MDX21 winner)", 9.48, 9.78),
    ("UVR initial vocal model (Agg 0.9)", 9.12, 9.44),
    ("Danna Sep", 8.30, 8.59),
    ("Demucs2", 8.24, 8.53),
    ("Unmix XL", 8.16, 8.45),
    ("Byte Dance library", 7.69, 7.98),
    ("Spleeter (4 stems)", 7.02, 7.31),
]

# Multisong MVSep benchmark, vocals/instrumental columns.
MULTISONG_VOCAL_MODELS = [
    ("MDX23 (ZFTurbo) contest model", 15.82, 9.56),
    ("MDX Kim_Vocal_1 (FFT 7680)", 15.70, 9.36),
    ("MDX UVR-MDX-NET_Main_427 (FFT 6144)", 15.61, 9.32),
    ("MDX UVR-MDX-NET Inst HQ 2 (FFT 6144)", 15.22, 9.11),
    ("Demucs4 HT demucs_ft (shifts 1, overlap 0.95)", 14.73, 8.42),
    ("Demucs3 demucs_mmi", 14.54, 8.24),
    ("Demucs4 HT htdemucs", 14.49, 8.18),
    ("Demucs4 HT htdemucs_6s", 14.48, 8.17),
    ("Demucs3 Model B (MDX21 winner)", 14.44, 8.13),
    ("UVR 0_HP2-4BAND-3090_4band_arch-500m_1", 13.59, 7.28),
    ("Unmix XL", 12.97, 6.66),
    ("Demucs2", 12.90, 6.60),
    ("Spleeter (2 stems)", 12.05, 5.81),
]

# Multisong MVSep benchmark, bass/drums/other columns (None = not reported).
MULTISONG_INSTRUMENT_MODELS = [
    ("MDX23 (ZFTurbo) contest model", 12.50, 11.70, 6.63),
    ("Demucs4 HT htdemucs_ft (shifts 10, overlap 0.95)", 12.24, 11.41, 5.84),
    ("Demucs4 HT htdemucs_ft (shifts 1, overlap 0.95)", 12.24, 11.40, 5.84),
    ("Demucs4 HT htdemucs_ft (shifts 1, overlap 0.25)", 12.05, 11.24, 5.74),
    ("Demucs4 HT htdemucs", 11.74, 10.90, 5.57),
    ("Demucs4 HT htdemucs_6s", 11.42, 10.59, None),
    ("Demucs3 hdemucs_mmi (shifts 4, overlap 0.75)", 11.25, 10.76, 5.50),
    ("Demucs3 Model B (MDX21 winner)", 10.69, 10.27, 5.35),
    ("Demucs2", 9.01, 8.24, 3.84),
    ("Unmix XL", 8.45, 7.92, 4.41),
    ("Spleeter (4 stems)", 7.32, 6.89, 3.49),
]

# Final contest ensemble, per dataset: bass/drums/other/vocals plus the
# published mean. Note the Multisong mean (10.11) is not the arithmetic mean
# of its four stem columns (10.1625); both statistics are reported by
# demixkit.metrics, and neither value is recomputable here.
FINAL_ENSEMBLE_SCORES = {
    "multisong_mvsep": {
        "bass": 12.68,
        "drums": 11.68,
        "other": 6.67,
        "vocals": 9.62,
        "mean": 10.11,
    },
    "mdx23_public_test": {
        "bass": 9.87,
        "drums": 9.52,
        "other": 7.43,
        "vocals": 10.81,
        "mean": 9.41,
    },
    "mdx23_private_test": {
        "bass": 9.94,
        "drums": 9.53,
        "other": 7.05,
        "vocals": 10.51,
        "mean": 9.25,
    },
}
