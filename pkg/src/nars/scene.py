"""Synthetic acoustic scenes: box-room impulse responses, noise surrogates,
SNR-exact mixing, and the evaluation metrics used across the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import FRAC_DELAY_HALF_WIDTH, FRAC_DELAY_TAPS, frac_delay_kernel, kernel_offsets
from .errors import DomainError

NOISE_KINDS = ("white", "pink", "street_surrogate", "car_surrogate", "babble_surrogate")

SI_SNR_CAP_DB = 60.0


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room; one frequency-independent amplitude reflection for all walls."""

    dims: tuple[float, float, float]
    reflection: float
    max_order: int
    c: float = 343.0
    fs: float = 16000.0

    def __post_init__(self):
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise DomainError("room dims must be three positive lengths")
        if not 0.0 <= self.reflection < 1.0:
            raise DomainError("reflection coefficient must lie in [0, 1)")
        if self.max_order < 0:
            raise DomainError("max_order must be nonnegative")
        if self.c <= 0 or self.fs <= 0:
            raise DomainError("c and fs must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    room: RoomSpec
    source_pos: tuple[float, float, float]
    mic_positions: tuple[tuple[float, float, float], ...]
    noise_kind: str
    snr_db: float
    seed: int
    duration: float = 1.0
    # optional loudspeaker playing a known far-end signal (echo path)
    echo_pos: tuple[float, float, float] | None = None
    echo_level_db: float = 0.0

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise DomainError(f"unknown noise kind {self.noise_kind!r}")
        if self.duration <= 0:
            raise DomainError("duration must be positive")
        if len(self.mic_positions) < 1:
            raise DomainError("at least one microphone required")


@dataclass
class Metrics:
    scenario_id: str
    si_snr_db: float
    snr_gain_db: float
    rtf: float
    doa_err_deg: float = float("nan")

    def row(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "si_snr_db": f"{self.si_snr_db:.6f}",
            "snr_gain_db": f"{self.snr_gain_db:.6f}",
            "rtf": f"{self.rtf:.6f}",
            "doa_err_deg": f"{self.doa_err_deg:.6f}",
        }


# === image-source impulse responses ===


def _axis_images(pos: float, length: float, max_order: int):
    """Per-axis image coordinates with their wall-bounce counts."""
    out = []
    for l in range(-max_order, max_order + 1):
        for u in (0, 1):
            bounces = abs(l - u) + abs(l)
            if bounces > max_order:
                continue
            out.append(((1 - 2 * u) * pos + 2 * l * length, bounces))
    return out


def image_source_rir(room: RoomSpec, src: tuple, mic: tuple) -> np.ndarray:
    """FIR room response by the image-source method.

    Each image contributes reflection^bounces / (4 pi d) at delay d/c,
    spread over the shared 8-tap fractional-delay kernel. Source and mic
    must lie strictly inside the room.
    """
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    for p, name in ((src, "source"), (mic, "microphone")):
        if not np.all((p > 0) & (p < np.asarray(room.dims))):
            raise DomainError(f"{name} position must lie strictly inside the room")
    if float(np.linalg.norm(src - mic)) < 1e-9:
        raise DomainError("microphone coincides with the source")

    axes = [_axis_images(src[k], room.dims[k], room.max_order) for k in range(3)]
    images = []
    for x, bx in axes[0]:
        for y, by in axes[1]:
            if bx + by > room.max_order:
                continue
            for z, bz in axes[2]:
                b = bx + by + bz
                if b > room.max_order:
                    continue
                d = float(np.linalg.norm(np.array([x, y, z]) - mic))
                images.append((d, b))

    max_delay = max(d for d, _ in images) * room.fs / room.c
    n = int(np.ceil(max_delay)) + FRAC_DELAY_TAPS + 1
    rir = np.zeros(n)
    offs = kernel_offsets()
    for d, bounces in images:
        amp = room.reflection**bounces / (4 * np.pi * d)
        delay = d * room.fs / room.c
        n_int = int(np.floor(delay))
        kernel = frac_delay_kernel(delay - n_int)
        idx = n_int + offs
        ok = (idx >= 0) & (idx < n)
        rir[idx[ok]] += amp * kernel[ok]
    return rir


def direct_path_delay_samples(room: RoomSpec, src: tuple, mic: tuple) -> float:
    d = float(np.linalg.norm(np.asarray(src, float) - np.asarray(mic, float)))
    return d * room.fs / room.c


CAUSALITY_HALF_WIDTH = FRAC_DELAY_HALF_WIDTH


# === noise surrogates ===


def _shape_white(white: np.ndarray, fs: float, mag) -> np.ndarray:
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(len(white), 1.0 / fs)
    spec *= mag(f)
    out = np.fft.irfft(spec, n=len(white))
    rms = np.sqrt(np.mean(out**2))
    return out / rms


def noise_shape_db(kind: str, f: np.ndarray) -> np.ndarray:
    """Declared long-term magnitude shape (dB, arbitrary offset) per kind."""
    mag = _SHAPES[kind](np.asarray(f, dtype=np.float64))
    return 20 * np.log10(np.maximum(mag, 1e-12))


def _white_shape(f):
    return np.ones_like(f)


def _pink_shape(f):
    shaped = 1.0 / np.sqrt(np.maximum(f, 20.0))
    shaped[f == 0] = 0.0
    return shaped


def _car_shape(f):
    # -12 dB/oct power rolloff above a 50 Hz corner
    shaped = 1.0 / (1.0 + (f / 50.0) ** 2)
    shaped[f == 0] = 0.0
    return shaped


def _speech_shape(f):
    # broad peak near 400 Hz, gentle rolloff above
    fsafe = np.maximum(f, 1e-6)
    shaped = (fsafe / np.sqrt(fsafe**2 + 200.0**2)) * (1.0 + (fsafe / 500.0) ** 2) ** -0.75
    shaped[f == 0] = 0.0
    return shaped


_SHAPES = {
    "white": _white_shape,
    "pink": _pink_shape,
    "street_surrogate": _pink_shape,  # street traffic is modeled as pink
    "car_surrogate": _car_shape,
    "babble_surrogate": _speech_shape,
}


def synth_noise(kind: str, duration: float, fs: float, seed) -> np.ndarray:
    """Unit-RMS noise of the declared spectral shape, deterministic in seed.

    babble_surrogate sums eight speech-shaped streams, each with an
    independent-phase 4 Hz amplitude modulation.
    """
    if kind not in NOISE_KINDS:
        raise DomainError(f"unknown noise kind {kind!r}")
    if duration <= 0 or fs <= 0:
        raise DomainError("duration and fs must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    if kind == "white":
        out = rng.standard_normal(n)
        return out / np.sqrt(np.mean(out**2))
    if kind == "babble_surrogate":
        t = np.arange(n) / fs
        acc = np.zeros(n)
        for _ in range(8):
            voice = _shape_white(rng.standard_normal(n), fs, _SHAPES[kind])
            phase = rng.uniform(0, 2 * np.pi)
            acc += voice * (1.0 + 0.5 * np.sin(2 * np.pi * 4.0 * t + phase))
        return acc / np.sqrt(np.mean(acc**2))
    return _shape_white(rng.standard_normal(n), fs, _SHAPES[kind])


def octave_band_power_db(x: np.ndarray, fs: float, f_lo: float = 62.5) -> tuple[np.ndarray, np.ndarray]:
    """Mean power per octave band (dB), bands [f, 2f) upward from f_lo."""
    spec = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(len(x), 1.0 / fs)
    centers, powers = [], []
    lo = f_lo
    while lo * 2 <= fs / 2:
        sel = (f >= lo) & (f < 2 * lo)
        if np.any(sel):
            centers.append(np.sqrt(lo * 2 * lo))
            powers.append(10 * np.log10(np.mean(spec[sel])))
        lo *= 2
    return np.asarray(centers), np.asarray(powers)


# === mixing and metrics ===


def mix_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> tuple[np.ndarray, float]:
    """Scale noise so clean/noise power ratio is exactly snr_db; returns (mix, gain)."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise DomainError("clean and noise must have equal shape")
    p_c = float(np.mean(clean**2))
    p_n = float(np.mean(noise**2))
    if p_c <= 0 or p_n <= 0:
        raise DomainError("mix_at_snr needs nonzero-power clean and noise")
    gain = float(np.sqrt(p_c / (p_n * 10.0 ** (snr_db / 10.0))))
    return clean + gain * noise, gain


def si_snr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Scale-invariant SNR in dB, capped at +60.

    Zero-mean signals are projected: the component of the estimate along the
    reference counts as target, the rest as distortion.
    """
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise DomainError("reference and estimate must have equal shape")
    ref = ref - ref.mean()
    est = est - est.mean()
    denom = float(np.dot(ref, ref))
    if denom <= 0:
        raise DomainError("si_snr needs a nonzero reference")
    target = (np.dot(est, ref) / denom) * ref
    resid = est - target
    p_t = float(np.dot(target, target))
    p_r = float(np.dot(resid, resid))
    if p_r <= p_t * 10.0 ** (-SI_SNR_CAP_DB / 10.0):
        return SI_SNR_CAP_DB
    if p_t == 0.0:
        return -SI_SNR_CAP_DB
    return min(SI_SNR_CAP_DB, float(10.0 * np.log10(p_t / p_r)))


def measure_rtf(processing_seconds: float, audio_seconds: float) -> float:
    """Real-time factor: processing time over audio duration."""
    if audio_seconds <= 0:
        raise DomainError("audio duration must be positive")
    if processing_seconds < 0:
        raise DomainError("processing time cannot be negative")
    return processing_seconds / audio_seconds


# === scene rendering (shared by localization, env, and the CLI) ===


def scene_rng(seed: int, scene_index: int) -> np.random.Generator:
    """Per-scene substream: independent of every other scene index."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(scene_index)]))


@dataclass
class RenderedScene:
    mics: np.ndarray  # (n_mics, n_samples)
    clean_ref: np.ndarray  # dry source aligned to the array centroid
    far_end: np.ndarray | None  # echo reference when the scenario has one
    fs: float
    true_azimuth_deg: float


def _convolve_rir(signal: np.ndarray, rir: np.ndarray, n: int) -> np.ndarray:
    return np.convolve(signal, rir)[:n]


def render_scene(cfg: ScenarioConfig, *, clean: np.ndarray | None = None) -> RenderedScene:
    """Mic signals for a scenario: reverberant source + per-mic noise (+ echo).

    The clean source defaults to a speech-shaped surrogate drawn from the
    scenario's seeded substream. Noise is mixed so the first mic sits at the
    requested SNR. The returned clean reference is the dry source delayed to
    the array centroid (direct path), for scale-invariant scoring.
    """
    room = cfg.room
    n = int(round(cfg.duration * room.fs))
    ss = np.random.SeedSequence(cfg.seed)
    kids = ss.spawn(4)
    if clean is None:
        clean = synth_noise("babble_surrogate", cfg.duration, room.fs, kids[0])
    clean = np.asarray(clean, dtype=np.float64)[:n]

    mics = np.zeros((len(cfg.mic_positions), n))
    for m, pos in enumerate(cfg.mic_positions):
        rir = image_source_rir(room, cfg.source_pos, pos)
        mics[m] = _convolve_rir(clean, rir, n)

    far = None
    if cfg.echo_pos is not None:
        far = synth_noise("white", cfg.duration, room.fs, kids[1])
        level = 10.0 ** (cfg.echo_level_db / 20.0)
        ref_power = np.sqrt(np.mean(mics[0] ** 2))
        for m, pos in enumerate(cfg.mic_positions):
            rir = image_source_rir(room, cfg.echo_pos, pos)
            echo = _convolve_rir(far, rir, n)
            e_rms = np.sqrt(np.mean(echo**2)) or 1.0
            mics[m] += echo * (level * ref_power / e_rms)

    noise_rng = np.random.default_rng(kids[2])
    for m in range(mics.shape[0]):
        noise = synth_noise(cfg.noise_kind, cfg.duration, room.fs, noise_rng.integers(2**63))
        if m == 0:
            _, gain = mix_at_snr(mics[0], noise, cfg.snr_db)
        mics[m] += gain * noise

    centroid = np.mean(np.asarray(cfg.mic_positions, dtype=np.float64), axis=0)
    src = np.asarray(cfg.source_pos, dtype=np.float64)
    d = float(np.linalg.norm(src - centroid))
    delay = d * room.fs / room.c
    shift = int(round(delay))
    clean_ref = np.zeros(n)
    clean_ref[shift:] = clean[: n - shift] / (4 * np.pi * d)
    rel = src - centroid
    true_az = float(np.degrees(np.arctan2(rel[1], rel[0])) % 360.0)
    return RenderedScene(mics, clean_ref, far, room.fs, true_az)
