import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nars.dsp import delay_signal, frac_delay_kernel
from nars.errors import ConfigurationError, DataError, DomainError, FramingError, NoSourceError
from nars.frontend import (
    AzimuthGrid,
    BandGainProfile,
    FilterBankSpec,
    MicArrayGeometry,
    MixtureWeights,
    SubbandState,
    aec_process,
    apply_spectral_mask,
    azimuth_error_deg,
    band_gain,
    beamform_das,
    circular_array,
    das_weights,
    dynamic_mix,
    erle_db,
    fb_analyze,
    fb_synthesize,
    make_aec,
    snr_mixture_weights,
    srp_localize,
    steering_delays,
)
from nars.scene import si_snr, synth_noise

FS = 16000.0
BANK = FilterBankSpec(m_bands=64, hop=32, fs=FS)


def round_trip_db(spec, x):
    y = fb_synthesize(spec, fb_analyze(spec, x))[: len(x)]
    return 10 * np.log10(np.sum((y - x) ** 2) / np.sum(x**2))


# === filter bank ===


def test_bank_spec_validation():
    with pytest.raises(ConfigurationError):
        FilterBankSpec(m_bands=64, hop=48, fs=FS)  # undersampled
    with pytest.raises(ConfigurationError):
        FilterBankSpec(m_bands=60, hop=32, fs=FS)  # hop does not divide m_bands
    with pytest.raises(ConfigurationError):
        FilterBankSpec(m_bands=64, hop=32, fs=-1.0)


def test_bank_round_trip_white_noise():
    x = np.random.default_rng(0).standard_normal(16000)
    assert round_trip_db(BANK, x) < -40.0


def test_bank_round_trip_tone():
    t = np.arange(16000) / FS
    x = np.sin(2 * np.pi * 440.0 * t)
    assert round_trip_db(BANK, x) < -40.0


def test_bank_round_trip_speech_shaped():
    x = synth_noise("babble_surrogate", 1.0, FS, seed=2)
    assert round_trip_db(BANK, x) < -40.0


def test_bank_other_geometry_round_trips():
    spec = FilterBankSpec(m_bands=32, hop=8, fs=FS)  # 4x oversampled
    x = np.random.default_rng(1).standard_normal(8000)
    assert round_trip_db(spec, x) < -40.0


def test_bank_impulse_parseval_exact():
    # square-COLA normalization makes the impulse energy identity exact
    x = np.zeros(4096)
    x[2048] = 1.0
    state = fb_analyze(BANK, x)
    expect = BANK.m_bands / BANK.hop * np.sum(BANK.prototype**2)
    assert np.sum(np.abs(state.bands) ** 2) == pytest.approx(expect, rel=1e-12)


def test_bank_analysis_shift_invariance():
    # delaying by q*hop shifts frames by q, values untouched
    rng = np.random.default_rng(3)
    x = rng.standard_normal(6000)
    q = BANK.m_bands // BANK.hop * 3
    shifted = np.concatenate([np.zeros(q * BANK.hop), x])
    a = fb_analyze(BANK, x).bands
    b = fb_analyze(BANK, shifted).bands
    assert np.array_equal(a[:, : a.shape[1] - q], b[:, q : a.shape[1]])


def test_bank_band_centers():
    # a tone at band center m lands in band m (and its conjugate mirror)
    m = 5
    f = m * FS / BANK.m_bands
    t = np.arange(16000) / FS
    state = fb_analyze(BANK, np.sin(2 * np.pi * f * t))
    power = np.mean(np.abs(state.bands) ** 2, axis=1)
    top2 = set(np.argsort(power)[-2:])
    assert top2 == {m, BANK.m_bands - m}


def test_analyze_input_validation():
    with pytest.raises(FramingError):
        fb_analyze(BANK, np.zeros((2, 4000)))
    with pytest.raises(FramingError):
        fb_analyze(BANK, np.zeros(16))


def test_synthesize_band_mismatch():
    state = fb_analyze(BANK, np.random.default_rng(0).standard_normal(4000))
    other = FilterBankSpec(m_bands=32, hop=16, fs=FS)
    with pytest.raises(ConfigurationError):
        fb_synthesize(other, state)


# === subband AEC ===


def synthetic_states(n_frames=1500, m_bands=16, seed=0, path=(0.8, 0.3)):
    """Far-end subbands and a mic that is a known per-band FIR of them."""
    rng = np.random.default_rng(seed)
    far = rng.standard_normal((m_bands, n_frames)) + 1j * rng.standard_normal((m_bands, n_frames))
    mic = np.zeros_like(far)
    for lag, g in enumerate(path):
        mic[:, lag:] += g * far[:, : n_frames - lag]
    fstate = SubbandState(bands=far, frame_index=n_frames, n_samples=n_frames * 8)
    mstate = SubbandState(bands=mic, frame_index=n_frames, n_samples=n_frames * 8)
    return fstate, mstate


def test_aec_converges_on_subband_fir():
    far, mic = synthetic_states()
    res, state = aec_process(make_aec(16, 4, mu=0.5), far, mic)
    assert erle_db(mic, res, tail_frames=200) > 40.0
    # identified taps match the planted path
    assert state.weights[:, 0] == pytest.approx(0.8, abs=1e-2)
    assert state.weights[:, 1] == pytest.approx(0.3, abs=1e-2)


def test_aec_mu_zero_freezes_weights():
    far, mic = synthetic_states(n_frames=100)
    st0 = make_aec(16, 4, mu=0.0)
    res, st1 = aec_process(st0, far, mic)
    assert np.array_equal(st1.weights, st0.weights)
    assert np.array_equal(res.bands, mic.bands)


def test_aec_does_not_mutate_input_state():
    far, mic = synthetic_states(n_frames=50)
    st0 = make_aec(16, 4, mu=0.5)
    before = st0.weights.copy()
    aec_process(st0, far, mic)
    assert np.array_equal(st0.weights, before)


def test_aec_streaming_matches_batch():
    far, mic = synthetic_states(n_frames=300)
    res_a, _ = aec_process(make_aec(16, 4, mu=0.5), far, mic)
    state = make_aec(16, 4, mu=0.5)
    chunks = []
    for lo in range(0, 300, 75):
        f = SubbandState(bands=far.bands[:, lo : lo + 75], frame_index=lo + 75, n_samples=0)
        m = SubbandState(bands=mic.bands[:, lo : lo + 75], frame_index=lo + 75, n_samples=0)
        out, state = aec_process(state, f, m)
        chunks.append(out.bands)
    assert np.allclose(np.concatenate(chunks, axis=1), res_a.bands, atol=1e-12)


def test_aec_validation():
    far, mic = synthetic_states(n_frames=40)
    with pytest.raises(ConfigurationError):
        aec_process(make_aec(8, 4), far, mic)  # band count mismatch
    short = SubbandState(bands=mic.bands[:, :20], frame_index=20, n_samples=0)
    with pytest.raises(FramingError):
        aec_process(make_aec(16, 4), far, short)
    bad = SubbandState(bands=mic.bands * np.nan, frame_index=40, n_samples=0)
    with pytest.raises(DataError):
        aec_process(make_aec(16, 4), far, bad)
    with pytest.raises(DomainError):
        make_aec(16, 4, mu=2.5)


@settings(max_examples=15, deadline=None)
@given(mu=st.floats(0.05, 1.9), seed=st.integers(0, 100))
def test_aec_weights_bounded_property(mu, seed):
    far, mic = synthetic_states(n_frames=400, seed=seed)
    _, state = aec_process(make_aec(16, 4, mu=mu), far, mic)
    assert np.all(np.isfinite(state.weights))
    assert np.max(np.abs(state.weights)) < 1e3


def test_erle_definition():
    mic = SubbandState(bands=np.ones((8, 10), dtype=complex), frame_index=10, n_samples=0)
    res = SubbandState(bands=np.full((8, 10), 0.1, dtype=complex), frame_index=10, n_samples=0)
    assert erle_db(mic, res) == pytest.approx(20.0, abs=1e-9)
    silent = SubbandState(bands=np.zeros((8, 10), dtype=complex), frame_index=10, n_samples=0)
    assert erle_db(mic, silent) == np.inf


# === beamforming and localization ===


def plane_wave_mics(geom, sig, az_deg, noise_rms=0.0, seed=0):
    """Propagate a far-field signal across the array, optional white noise."""
    delays = steering_delays(geom, az_deg)  # compensation (s) = arrival negated
    rng = np.random.default_rng(seed)
    mics = np.stack([delay_signal(sig, -d * geom.fs) for d in delays])
    if noise_rms:
        mics = mics + noise_rms * rng.standard_normal(mics.shape)
    return mics


def test_steering_delays_zero_mean():
    geom = circular_array(8, 0.05, fs=FS)
    d = steering_delays(geom, 123.0)
    assert np.sum(d) == pytest.approx(0.0, abs=1e-15)
    assert np.max(np.abs(d)) <= 0.05 / geom.c + 1e-12


def test_das_aligns_plane_wave():
    geom = circular_array(8, 0.05, fs=FS)
    t = np.arange(4000) / FS
    sig = np.sin(2 * np.pi * 800.0 * t)
    mics = plane_wave_mics(geom, sig, 75.0)
    y = beamform_das(geom, das_weights(geom, 75.0), mics)
    mid = slice(200, -200)
    assert si_snr(sig[mid], y[mid]) > 30.0


def test_das_rejects_off_steer():
    geom = circular_array(8, 0.05, fs=FS)
    sig = _bandlimit(synth_noise("white", 0.25, FS, seed=6), 3000.0)
    mics = plane_wave_mics(geom, sig, 0.0)
    on = beamform_das(geom, das_weights(geom, 0.0), mics)
    off = beamform_das(geom, das_weights(geom, 180.0), mics)
    assert np.mean(on**2) > 2.0 * np.mean(off**2)


def test_array_gain_four_mics():
    # uncorrelated in-band noise: SNR gain near 10 log10 n_mics
    geom = circular_array(4, 0.05, fs=FS)
    sig = _bandlimit(synth_noise("white", 1.0, FS, seed=7), 3000.0)
    az = 37.0
    clean = plane_wave_mics(geom, sig, az)
    rng = np.random.default_rng(8)
    noise = np.stack([_bandlimit(rng.standard_normal(clean.shape[1]), 3000.0) for _ in range(4)])
    w = das_weights(geom, az)
    snr_in = np.mean(clean[0] ** 2) / np.mean(noise[0] ** 2)
    s_out = beamform_das(geom, w, clean)
    n_out = beamform_das(geom, w, noise)
    gain = 10 * np.log10((np.mean(s_out**2) / np.mean(n_out**2)) / snr_in)
    assert gain == pytest.approx(10 * np.log10(4), abs=0.5)


def _bandlimit(x, f_hi):
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(len(x), 1 / FS)
    spec[f > f_hi] = 0.0
    return np.fft.irfft(spec, n=len(x))


def test_srp_finds_plane_wave_azimuth():
    geom = circular_array(8, 0.05, fs=FS)
    sig = _bandlimit(synth_noise("white", 0.3, FS, seed=9), 3000.0)
    mics = plane_wave_mics(geom, sig, 211.0, noise_rms=0.05, seed=10)
    az, power = srp_localize(geom, mics)
    assert azimuth_error_deg(az, 211.0) < 1.0
    assert power.shape == (AzimuthGrid().n_points,)


def test_srp_validation():
    geom = circular_array(8, 0.05, fs=FS)
    with pytest.raises(NoSourceError):
        srp_localize(geom, np.zeros((8, 1000)))
    solo = MicArrayGeometry(positions=np.zeros((1, 3)), fs=FS)
    with pytest.raises(ConfigurationError):
        srp_localize(solo, np.ones((1, 1000)))


def test_azimuth_error_wraps():
    assert azimuth_error_deg(359.0, 1.0) == pytest.approx(2.0)
    assert azimuth_error_deg(0.0, 180.0) == pytest.approx(180.0)
    assert azimuth_error_deg(90.0, 90.0) == 0.0


# === masking, band gains, mixing ===


def test_ideal_mask_recovers_tone():
    # tone in two conjugate bands + white noise: the ideal binary mask
    # buys well over 10 dB of SI-SNR
    m = 6
    f = m * FS / BANK.m_bands
    t = np.arange(16000) / FS
    tone = np.sin(2 * np.pi * f * t)
    noise = 0.3 * synth_noise("white", 1.0, FS, seed=11)
    mix = tone + noise
    state = fb_analyze(BANK, mix)
    mask = np.zeros_like(state.bands, dtype=float)
    mask[m] = mask[BANK.m_bands - m] = 1.0
    masked = fb_synthesize(BANK, apply_spectral_mask(state, mask))[: len(mix)]
    plain = fb_synthesize(BANK, state)[: len(mix)]
    sl = slice(2000, -2000)
    assert si_snr(tone[sl], masked[sl]) - si_snr(tone[sl], plain[sl]) > 10.0


def test_mask_validation():
    state = fb_analyze(BANK, np.random.default_rng(0).standard_normal(4000))
    with pytest.raises(FramingError):
        apply_spectral_mask(state, np.ones((16, 3)))
    with pytest.raises(DomainError):
        apply_spectral_mask(state, np.full_like(state.bands, -0.1, dtype=float))


def test_band_gain_formula_point():
    prof = BandGainProfile(
        noise_var=np.ones(4), state_feat=0.0, prefs=np.ones(4),
        g_min=0.05, g_max=4.0, noise_ref=1.0,
    )
    assert band_gain(prof) == pytest.approx(0.5)


def test_band_gain_monotone_in_noise():
    noise = np.linspace(0.1, 10.0, 16)
    prof = BandGainProfile(
        noise_var=noise, state_feat=0.0, prefs=np.ones(16),
        g_min=0.05, g_max=4.0, noise_ref=1.0,
    )
    g = band_gain(prof)
    assert np.all(np.diff(g) <= 1e-12)
    assert np.all((g >= 0.05) & (g <= 4.0))


def test_band_gain_validation():
    with pytest.raises(DomainError):
        BandGainProfile(noise_var=np.ones(4), state_feat=0.0, prefs=np.full(4, 9.0),
                        g_min=0.05, g_max=4.0, noise_ref=1.0)
    with pytest.raises(DomainError):
        BandGainProfile(noise_var=-np.ones(4), state_feat=0.0, prefs=np.ones(4),
                        g_min=0.05, g_max=4.0, noise_ref=1.0)


def test_dynamic_mix_identity_on_one_hot():
    ch = np.random.default_rng(12).standard_normal((3, 50))
    alpha = np.zeros((3, 50))
    alpha[1] = 1.0
    assert np.array_equal(dynamic_mix(MixtureWeights(alpha=alpha), ch), ch[1])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 200))
def test_dynamic_mix_convex_hull_property(seed):
    rng = np.random.default_rng(seed)
    ch = np.repeat(rng.standard_normal((4, 1)), 30, axis=1)  # per-channel constants
    w = rng.random((4, 30))
    w /= w.sum(axis=0)
    y = dynamic_mix(MixtureWeights(alpha=w), ch)
    assert np.all(y <= ch.max(axis=0) + 1e-12)
    assert np.all(y >= ch.min(axis=0) - 1e-12)


def test_mixture_weights_validation():
    with pytest.raises(DomainError):
        MixtureWeights(alpha=np.full((2, 10), 0.7))  # columns sum to 1.4
    with pytest.raises(DomainError):
        MixtureWeights(alpha=np.array([[1.5], [-0.5]]))  # negative entry


def test_dynamic_mix_shape_mismatch():
    w = MixtureWeights(alpha=np.full((2, 10), 0.5))
    with pytest.raises(FramingError):
        dynamic_mix(w, np.zeros((2, 11)))


def test_snr_mixture_prefers_clean_channel():
    rng = np.random.default_rng(13)
    clean = synth_noise("babble_surrogate", 0.5, FS, seed=14)
    ch = np.stack([clean + 0.05 * rng.standard_normal(len(clean)),
                   clean + 1.0 * rng.standard_normal(len(clean))])
    w = snr_mixture_weights(ch, noise_power=np.array([0.05**2, 1.0]))
    mixed = dynamic_mix(w, ch)
    assert si_snr(clean, mixed) >= si_snr(clean, ch[1])
    assert np.mean(w.alpha[0]) > 0.8  # leans hard on the clean channel


# === fractional delays ===


def test_integer_delay_is_exact_shift():
    x = np.random.default_rng(15).standard_normal(200)
    y = delay_signal(x, 3.0)
    assert np.allclose(y[3:], x[:-3], atol=1e-12)


def test_fractional_delay_of_tone():
    t = np.arange(2000) / FS
    f = 500.0
    x = np.sin(2 * np.pi * f * t)
    y = delay_signal(x, 0.5)
    expect = np.sin(2 * np.pi * f * (t - 0.5 / FS))
    assert np.max(np.abs(y[50:-50] - expect[50:-50])) < 1e-3


def test_frac_delay_kernel_dc_gain():
    for mu in (0.0, 0.25, 0.5, 0.9):
        assert np.sum(frac_delay_kernel(mu)) == pytest.approx(1.0, abs=1e-3)
