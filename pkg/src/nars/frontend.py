"""Adaptive multi-microphone front end.

Oversampled complex-modulated DFT filter bank, per-band NLMS echo
cancellation, delay-and-sum beamforming with fractional steering delays,
steered-response-power localization, spectral masking, per-band gains, and
dynamic channel mixing.

Band m of the analysis bank is the prototype modulated by exp(i 2 pi m j / M)
and decimated by the hop L: x_m(k) = sum_j h(j) x(kL - j) exp(i 2 pi m j / M).
The prototype is pointwise-normalized so sum_k h^2(n - kL) = 1/M exactly;
synthesis is the scaled adjoint, leaving only stopband-level alias leakage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dsp import FRAC_DELAY_TAPS, delay_signal
from .errors import ConfigurationError, DataError, DomainError, FramingError, NoSourceError

# === filter bank ===


def _design_prototype(m_bands: int, hop: int, taps_per_band: int) -> np.ndarray:
    n = m_bands * taps_per_band
    j = np.arange(n)
    center = (n - 1) / 2
    h = np.sinc((j - center) / m_bands) * np.kaiser(n, 9.0)
    # exact square-COLA at the hop: sum_k h^2(n - kL) == 1/M for every n
    fold = np.zeros(hop)
    for phase in range(hop):
        fold[phase] = np.sum(h[phase::hop] ** 2)
    h /= np.sqrt(m_bands * fold[j % hop])
    return h


def _dual_window(h: np.ndarray, m_bands: int, hop: int) -> np.ndarray:
    """Canonical dual of the analysis prototype.

    Per residue class r mod hop, the minimum-norm g with
    sum_k g(r + kL) h(r + kL + qM) = delta_q / M. These biorthogonality
    conditions make analysis -> synthesis an exact identity, so round-trip
    error is set by float precision rather than prototype stopband.
    """
    P = len(h)
    M, L = m_bands, hop
    if M % L:
        raise ConfigurationError("dual design requires hop to divide m_bands")
    rho = M // L
    K = P // L
    q_max = (P - 1) // M  # |q| beyond this cannot overlap
    g = np.zeros(P)
    for r in range(L):
        u = h[r::L]
        rows = []
        rhs = []
        for q in range(-q_max, q_max + 1):
            row = np.zeros(K)
            shift = rho * q
            src = np.arange(K) + shift
            ok = (src >= 0) & (src < K)
            row[ok] = u[src[ok]]
            rows.append(row)
            rhs.append(1.0 / M if q == 0 else 0.0)
        sol, *_ = np.linalg.lstsq(np.asarray(rows), np.asarray(rhs), rcond=None)
        g[r::L] = sol
    return g


@dataclass(frozen=True)
class FilterBankSpec:
    m_bands: int
    hop: int
    fs: float
    prototype: np.ndarray = field(repr=False, default=None)
    dual: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.m_bands < 2 or self.hop < 1:
            raise ConfigurationError("need m_bands >= 2 and hop >= 1")
        if self.m_bands < 2 * self.hop:
            raise ConfigurationError("oversampled bank requires m_bands >= 2 * hop")
        if self.m_bands % self.hop:
            raise ConfigurationError("hop must divide m_bands")
        if self.fs <= 0:
            raise ConfigurationError("fs must be positive")
        if self.prototype is None:
            object.__setattr__(self, "prototype", _design_prototype(self.m_bands, self.hop, 8))
        if len(self.prototype) % self.m_bands:
            raise ConfigurationError("prototype length must be a multiple of m_bands")
        if self.dual is None:
            object.__setattr__(self, "dual", _dual_window(self.prototype, self.m_bands, self.hop))
        if self.dual.shape != self.prototype.shape:
            raise ConfigurationError("dual window must match the prototype length")

    @property
    def n_taps(self) -> int:
        return len(self.prototype)


@dataclass
class SubbandState:
    """Analysis output: complex frames, shape (m_bands, n_frames)."""

    bands: np.ndarray
    frame_index: int
    n_samples: int


def fb_analyze(spec: FilterBankSpec, x: np.ndarray) -> SubbandState:
    """Split a mono stream into M decimated complex subband signals."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise FramingError("analysis expects a mono sample stream")
    if len(x) < spec.n_taps:
        raise FramingError("stream shorter than one prototype span")
    P, M, L = spec.n_taps, spec.m_bands, spec.hop
    n_frames = (len(x) + P - 2) // L + 1
    xp = np.zeros(P - 1 + n_frames * L + P)
    xp[P - 1 : P - 1 + len(x)] = x
    # frame k holds x[kL - j] for j = 0..P-1, i.e. a reversed window ending at kL
    windows = np.lib.stride_tricks.sliding_window_view(xp, P)[:: L][:n_frames]
    frames = windows[:, ::-1] * spec.prototype[None, :]
    folded = frames.reshape(n_frames, P // M, M).sum(axis=1)
    bands = M * np.fft.ifft(folded, axis=1).T
    return SubbandState(bands=bands, frame_index=n_frames, n_samples=len(x))


def fb_synthesize(spec: FilterBankSpec, state: SubbandState) -> np.ndarray:
    """Rebuild the time signal from subband frames (scaled adjoint of analysis)."""
    P, M, L = spec.n_taps, spec.m_bands, spec.hop
    bands = state.bands
    if bands.shape[0] != M:
        raise ConfigurationError("band count does not match the bank")
    n_frames = bands.shape[1]
    reps = P // M
    chunks = np.tile(np.fft.fft(bands.T, axis=1) / M, (1, reps)) * spec.dual[None, :]
    acc = np.zeros(P - 1 + n_frames * L + P, dtype=np.complex128)
    for k in range(n_frames):
        # same reversed-window geometry as analysis
        start = k * L
        acc[start : start + P] += chunks[k, ::-1]
    out = M * acc[P - 1 : P - 1 + state.n_samples].real
    return out


# === per-band NLMS echo canceller ===


@dataclass
class SubbandAecState:
    weights: np.ndarray  # (m_bands, n_taps) complex
    far_hist: np.ndarray  # (m_bands, n_taps) complex, newest first
    mu: float
    eps_reg: float

    def __post_init__(self):
        if not 0.0 <= self.mu <= 2.0:
            raise DomainError("step size mu must lie in [0, 2]")
        if self.eps_reg <= 0:
            raise DomainError("eps_reg must be positive")


def make_aec(m_bands: int, n_taps: int, mu: float = 0.5, eps_reg: float = 1e-6) -> SubbandAecState:
    return SubbandAecState(
        weights=np.zeros((m_bands, n_taps), dtype=np.complex128),
        far_hist=np.zeros((m_bands, n_taps), dtype=np.complex128),
        mu=mu,
        eps_reg=eps_reg,
    )


def aec_process(
    state: SubbandAecState, far: SubbandState, mic: SubbandState
) -> tuple[SubbandState, SubbandAecState]:
    """Cancel the far-end echo from the mic subbands, frame by frame.

    Per band: estimate = W . far_history, error = mic - estimate, then the
    normalized update W += mu * conj(far_hist) * error / (||far_hist||^2 +
    eps_reg). Returns the echo-reduced subbands and the updated state; the
    input state is not mutated.
    """
    if far.bands.shape[0] != mic.bands.shape[0] or far.bands.shape[0] != state.weights.shape[0]:
        raise ConfigurationError("far, mic, and state band counts must match")
    if far.bands.shape[1] != mic.bands.shape[1]:
        raise FramingError("far-end and mic frames are not aligned")
    if not (np.all(np.isfinite(far.bands)) and np.all(np.isfinite(mic.bands))):
        raise DataError("non-finite subband samples")
    w = state.weights.copy()
    hist = state.far_hist.copy()
    mu, eps = state.mu, state.eps_reg
    n_frames = mic.bands.shape[1]
    out = np.empty_like(mic.bands)
    for k in range(n_frames):
        hist[:, 1:] = hist[:, :-1]
        hist[:, 0] = far.bands[:, k]
        est = np.einsum("bt,bt->b", w, hist)
        err = mic.bands[:, k] - est
        out[:, k] = err
        if mu != 0.0:
            norm = np.einsum("bt,bt->b", hist, np.conj(hist)).real + eps
            w += mu * np.conj(hist) * (err / norm)[:, None]
    new_state = SubbandAecState(weights=w, far_hist=hist, mu=mu, eps_reg=eps)
    return SubbandState(bands=out, frame_index=mic.frame_index, n_samples=mic.n_samples), new_state


def erle_db(mic: SubbandState, residual: SubbandState, tail_frames: int | None = None) -> float:
    """Echo-return-loss enhancement over the trailing frames."""
    sl = slice(-tail_frames, None) if tail_frames else slice(None)
    p_mic = np.sum(np.abs(mic.bands[:, sl]) ** 2)
    p_res = np.sum(np.abs(residual.bands[:, sl]) ** 2)
    if p_res <= 0:
        return float("inf")
    return float(10 * np.log10(p_mic / p_res))


# === array geometry and delay-and-sum ===


@dataclass(frozen=True)
class MicArrayGeometry:
    positions: np.ndarray  # (n_mics, 3) meters
    fs: float
    c: float = 343.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise DomainError("positions must be (n_mics, 3)")
        object.__setattr__(self, "positions", pos)
        if self.fs <= 0 or self.c <= 0:
            raise DomainError("fs and c must be positive")

    @property
    def n_mics(self) -> int:
        return self.positions.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)


def circular_array(n_mics: int, radius: float, center=(0.0, 0.0, 0.0), fs: float = 16000.0, c: float = 343.0) -> MicArrayGeometry:
    ang = 2 * np.pi * np.arange(n_mics) / n_mics
    pos = np.stack([np.cos(ang) * radius, np.sin(ang) * radius, np.zeros(n_mics)], axis=1)
    return MicArrayGeometry(positions=pos + np.asarray(center, float), fs=fs, c=c)


@dataclass(frozen=True)
class BeamformerWeights:
    gains: np.ndarray  # per-mic real gains, sum to 1
    delays: np.ndarray  # per-mic steering delays, seconds

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=np.float64)
        d = np.asarray(self.delays, dtype=np.float64)
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "delays", d)
        if g.shape != d.shape or g.ndim != 1:
            raise DomainError("gains and delays must be equal-length vectors")
        if abs(g.sum() - 1.0) > 1e-6:
            raise DomainError("beamformer gains must sum to 1")


def steering_delays(geom: MicArrayGeometry, azimuth_deg: float) -> np.ndarray:
    """Plane-wave alignment delays (s) for a far-field source at the azimuth."""
    az = np.radians(azimuth_deg)
    u = np.array([np.cos(az), np.sin(az), 0.0])
    return (geom.positions - geom.centroid) @ u / geom.c


def das_weights(geom: MicArrayGeometry, azimuth_deg: float) -> BeamformerWeights:
    return BeamformerWeights(
        gains=np.full(geom.n_mics, 1.0 / geom.n_mics),
        delays=steering_delays(geom, azimuth_deg),
    )


def beamform_das(geom: MicArrayGeometry, weights: BeamformerWeights, frames: np.ndarray) -> np.ndarray:
    """y(t) = sum_m g_m x_m(t - tau_m), fractional delays via windowed sinc."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] != geom.n_mics:
        raise FramingError("frames must be (n_mics, n_samples)")
    if weights.gains.shape[0] != geom.n_mics:
        raise FramingError("weight count does not match the array")
    n = frames.shape[1]
    delays_samp = weights.delays * geom.fs
    if np.max(np.abs(delays_samp)) + FRAC_DELAY_TAPS >= n:
        raise FramingError("steering delay exceeds the frame padding")
    out = np.zeros(n)
    for g, d, x in zip(weights.gains, delays_samp, frames):
        if g == 0.0:
            continue
        out += g * delay_signal(x, d)
    return out


# === steered-response-power localization ===


@dataclass(frozen=True)
class AzimuthGrid:
    n_points: int = 72
    start_deg: float = 0.0

    def __post_init__(self):
        if self.n_points < 4:
            raise DomainError("azimuth grid needs at least 4 points")

    @property
    def step(self) -> float:
        return 360.0 / self.n_points

    @property
    def angles(self) -> np.ndarray:
        return (self.start_deg + np.arange(self.n_points) * self.step) % 360.0


def srp_localize(
    geom: MicArrayGeometry, frames: np.ndarray, grid: AzimuthGrid = AzimuthGrid()
) -> tuple[float, np.ndarray]:
    """Azimuth estimate by scanning delay-and-sum output power.

    Returns (azimuth_deg, power curve over the grid). The peak is refined by
    parabolic interpolation over its periodic neighbors; exact ties resolve
    to the lowest azimuth index.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if geom.n_mics < 2:
        raise ConfigurationError("localization needs at least two mics")
    if not np.any(frames):
        raise NoSourceError("all-zero frames carry no source to localize")
    power = np.empty(grid.n_points)
    for i, az in enumerate(grid.angles):
        y = beamform_das(geom, das_weights(geom, az), frames)
        power[i] = float(np.mean(y**2))
    i = int(np.argmax(power))  # first maximum = lowest azimuth index on ties
    p_l, p_c, p_r = power[i - 1], power[i], power[(i + 1) % grid.n_points]
    denom = p_l - 2 * p_c + p_r
    offset = 0.0 if denom == 0 else 0.5 * (p_l - p_r) / denom
    offset = float(np.clip(offset, -0.5, 0.5))
    az = (grid.angles[i] + offset * grid.step) % 360.0
    return float(az), power


def azimuth_error_deg(a: float, b: float) -> float:
    """Absolute angular distance on the circle, in [0, 180]."""
    d = abs((a - b + 180.0) % 360.0 - 180.0)
    return float(d)


# === masking, per-band gain, dynamic mixing ===


def apply_spectral_mask(state: SubbandState, mask: np.ndarray) -> SubbandState:
    """Per-band, per-frame gain in [0, 1]; passive by construction."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != state.bands.shape:
        raise FramingError("mask shape must match the subband frames")
    if np.any(mask < 0) or np.any(mask > 1):
        raise DomainError("mask values must lie in [0, 1]")
    return SubbandState(
        bands=state.bands * mask, frame_index=state.frame_index, n_samples=state.n_samples
    )


@dataclass
class BandGainProfile:
    noise_var: np.ndarray  # per-band noise power estimate
    state_feat: float  # scalar listener/affect feature phi(E), >= -1
    prefs: np.ndarray  # per-band preference weight omega_i, within the clamp bounds
    g_min: float = 0.0
    g_max: float = 4.0
    noise_ref: float = 1.0  # configured reference noise power

    def __post_init__(self):
        self.noise_var = np.asarray(self.noise_var, dtype=np.float64)
        self.state_feat = float(self.state_feat)
        self.prefs = np.asarray(self.prefs, dtype=np.float64)
        if self.noise_var.shape != self.prefs.shape:
            raise DomainError("noise_var and prefs must share one shape")
        if np.any(self.noise_var < 0):
            raise DomainError("noise variances must be nonnegative")
        if self.g_min < 0 or self.g_max < self.g_min:
            raise DomainError("need 0 <= g_min <= g_max")
        if np.any(self.prefs < self.g_min) or np.any(self.prefs > self.g_max):
            raise DomainError("preference weights must lie within the clamp bounds")
        if not np.isfinite(self.state_feat) or self.state_feat < -1.0:
            raise DomainError("state feature must be finite and >= -1")
        if self.noise_ref <= 0:
            raise DomainError("noise_ref must be positive")


def band_gain(profile: BandGainProfile) -> np.ndarray:
    """G_i = clamp(omega_i (1 + phi(E)) / (1 + noise_i / noise_ref), g_min, g_max)."""
    raw = profile.prefs * (1.0 + profile.state_feat) / (1.0 + profile.noise_var / profile.noise_ref)
    return np.clip(raw, profile.g_min, profile.g_max)


@dataclass
class MixtureWeights:
    alpha: np.ndarray  # (n_channels, n_frames), rows of each frame on the simplex

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 2:
            raise DomainError("alpha must be (n_channels, n_frames)")
        if np.any(self.alpha < 0):
            raise DomainError("mixture weights must be nonnegative")
        col = self.alpha.sum(axis=0)
        if np.any(np.abs(col - 1.0) > 1e-6):
            raise DomainError("mixture weights must sum to 1 per frame")


def dynamic_mix(weights: MixtureWeights, channels: np.ndarray) -> np.ndarray:
    """Per-frame convex combination y(k) = sum_m alpha_m(k) x_m(k)."""
    channels = np.asarray(channels, dtype=np.float64)
    if channels.shape != weights.alpha.shape:
        raise FramingError("channels and weights must have equal shape")
    return np.sum(channels * weights.alpha, axis=0)


def snr_mixture_weights(
    channels: np.ndarray,
    noise_power: np.ndarray,
    frame: int = 256,
    smoothing: float = 0.98,
) -> MixtureWeights:
    """Weights proportional to a decision-directed a-priori SNR per channel.

    ``noise_power`` is the known/estimated noise power per channel. The SNR
    estimate smooths the previous frame's cleaned power against the current
    posterior SNR (classic decision-directed recursion), then weights are
    renormalized per sample.
    """
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim != 2:
        raise FramingError("channels must be (n_channels, n_samples)")
    noise_power = np.asarray(noise_power, dtype=np.float64)
    if noise_power.shape != (channels.shape[0],):
        raise DomainError("one noise power per channel required")
    if np.any(noise_power <= 0):
        raise DomainError("noise powers must be positive")
    n_ch, n = channels.shape
    n_frames = (n + frame - 1) // frame
    xi = None
    alpha = np.empty((n_ch, n))
    for k in range(n_frames):
        sl = slice(k * frame, min((k + 1) * frame, n))
        p = np.mean(channels[:, sl] ** 2, axis=1)
        gamma = p / noise_power
        inst = np.maximum(gamma - 1.0, 0.0)
        xi = inst if xi is None else smoothing * xi + (1.0 - smoothing) * inst
        w = np.maximum(xi, 1e-8)
        alpha[:, sl] = (w / w.sum())[:, None]
    return MixtureWeights(alpha=alpha)
