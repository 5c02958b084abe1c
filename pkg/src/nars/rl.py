"""Learning-based front-end tuning.

A small diagonal-Gaussian policy (tanh-squashed mean, one hidden tanh layer,
separate value perceptron) trained with clipped-surrogate updates over GAE
advantages, plus a tabular Q-learner for the discrete routing toy. The
environment wraps a rendered scene: actions are bounded deltas on the AEC
step size, two band-gain trims, and the beam steering; each step re-runs the
front end on the next audio chunk and scores it.

All gradients are computed by hand in numpy; a finite-difference check of
the full objective is part of the acceptance gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, NumericalError
from .frontend import (
    AzimuthGrid,
    BandGainProfile,
    FilterBankSpec,
    MicArrayGeometry,
    apply_spectral_mask,
    band_gain,
    beamform_das,
    das_weights,
    fb_analyze,
    fb_synthesize,
    make_aec,
    aec_process,
    srp_localize,
)
from .scene import ScenarioConfig, RenderedScene, render_scene, si_snr

_LOG_2PI = float(np.log(2.0 * np.pi))


# === policy ===


@dataclass
class PolicyParams:
    """Flat parameter vector plus the layout and hyperparameters to use it.

    theta packs, in order: W1 (hidden x obs), b1, W2 (act x hidden), b2,
    log_std (act), Wv1 (v_hidden x obs), bv1, Wv2 (1 x v_hidden), bv2.
    """

    theta: np.ndarray = field(repr=False)
    obs_dim: int
    act_dim: int
    hidden: int = 32
    v_hidden: int = 32
    clip_eps: float = 0.2
    lr: float = 3e-3
    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise DomainError("clip_eps must lie in (0, 1)")
        if self.lr <= 0:
            raise DomainError("learning rate must be positive")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise DomainError("gamma and lam must lie in [0, 1]")
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (theta_size(self.obs_dim, self.act_dim, self.hidden, self.v_hidden),):
            raise DomainError("theta length does not match the declared layout")


def theta_size(obs_dim: int, act_dim: int, hidden: int, v_hidden: int) -> int:
    return (
        hidden * obs_dim + hidden
        + act_dim * hidden + act_dim
        + act_dim
        + v_hidden * obs_dim + v_hidden
        + v_hidden + 1
    )


_BLOCKS = ("W1", "b1", "W2", "b2", "log_std", "Wv1", "bv1", "Wv2", "bv2")


def _unpack(p: PolicyParams) -> dict[str, np.ndarray]:
    shapes = {
        "W1": (p.hidden, p.obs_dim),
        "b1": (p.hidden,),
        "W2": (p.act_dim, p.hidden),
        "b2": (p.act_dim,),
        "log_std": (p.act_dim,),
        "Wv1": (p.v_hidden, p.obs_dim),
        "bv1": (p.v_hidden,),
        "Wv2": (1, p.v_hidden),
        "bv2": (1,),
    }
    out = {}
    i = 0
    for name in _BLOCKS:
        size = int(np.prod(shapes[name]))
        out[name] = p.theta[i : i + size].reshape(shapes[name])
        i += size
    return out


def init_policy(
    obs_dim: int,
    act_dim: int,
    *,
    hidden: int = 32,
    v_hidden: int = 32,
    seed=0,
    clip_eps: float = 0.2,
    lr: float = 3e-3,
    gamma: float = 0.99,
    lam: float = 0.95,
    init_log_std: float = -0.5,
) -> PolicyParams:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1217]))
    theta = np.zeros(theta_size(obs_dim, act_dim, hidden, v_hidden))
    p = PolicyParams(
        theta=theta, obs_dim=obs_dim, act_dim=act_dim, hidden=hidden, v_hidden=v_hidden,
        clip_eps=clip_eps, lr=lr, gamma=gamma, lam=lam,
    )
    blocks = _unpack(p)
    for w, fan_in in (
        (blocks["W1"], obs_dim),
        (blocks["W2"], hidden),
        (blocks["Wv1"], obs_dim),
        (blocks["Wv2"], v_hidden),
    ):
        w[...] = rng.standard_normal(w.shape) / np.sqrt(fan_in)
    blocks["log_std"][...] = init_log_std
    return p


def policy_mean_std(p: PolicyParams, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squashed mean in (-1, 1)^act_dim and the state-independent std."""
    b = _unpack(p)
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    h1 = np.tanh(obs @ b["W1"].T + b["b1"])
    mean = np.tanh(h1 @ b["W2"].T + b["b2"])
    std = np.exp(b["log_std"])
    return mean, np.broadcast_to(std, mean.shape)


def log_prob(p: PolicyParams, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
    mean, std = policy_mean_std(p, obs)
    act = np.atleast_2d(np.asarray(act, dtype=np.float64))
    z = (act - mean) / std
    return np.sum(-0.5 * z**2 - np.log(std) - 0.5 * _LOG_2PI, axis=1)


def sample_actions(p: PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    mean, std = policy_mean_std(p, obs)
    raw = mean + std * rng.standard_normal(mean.shape)
    z = (raw - mean) / std
    logp = np.sum(-0.5 * z**2 - np.log(std) - 0.5 * _LOG_2PI, axis=1)
    return raw, logp


def value(p: PolicyParams, obs: np.ndarray) -> np.ndarray:
    b = _unpack(p)
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    hv = np.tanh(obs @ b["Wv1"].T + b["bv1"])
    return (hv @ b["Wv2"].T + b["bv2"])[:, 0]


# === PPO pieces ===


def ppo_surrogate(ratio, advantage, clip_eps: float):
    """Pessimistic clipped objective min(r A, clip(r, 1-eps, 1+eps) A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    if not 0.0 < clip_eps < 1.0:
        raise DomainError("clip_eps must lie in (0, 1)")
    if np.any(ratio <= 0):
        raise DomainError("probability ratios must be positive")
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    out = np.minimum(ratio * advantage, clipped * advantage)
    return float(out) if out.ndim == 0 else out


@dataclass
class Trajectory:
    obs: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T, act_dim) raw policy samples
    logps: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    values: np.ndarray  # (T,)
    dones: np.ndarray  # (T,) bool
    bootstrap_value: float = 0.0

    def __len__(self):
        return self.rewards.shape[0]


def compute_gae(traj: Trajectory, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Raw generalized-advantage estimates and returns (advantage + value).

    delta_t = r_t + gamma V(s_{t+1}) (1 - done_t) - V(s_t); the recursion
    accumulates (gamma lam)-discounted deltas, resetting across episode ends.
    Normalization happens later, per update batch.
    """
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise DomainError("gamma and lam must lie in [0, 1]")
    T = len(traj)
    if T == 0:
        raise DomainError("empty trajectory")
    next_values = np.append(traj.values[1:], traj.bootstrap_value)
    not_done = 1.0 - traj.dones.astype(np.float64)
    deltas = traj.rewards + gamma * next_values * not_done - traj.values
    adv = np.empty(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        acc = deltas[t] + gamma * lam * not_done[t] * acc
        adv[t] = acc
    return adv, adv + traj.values


def objective_and_grad(
    p: PolicyParams,
    obs: np.ndarray,
    act: np.ndarray,
    old_logp: np.ndarray,
    adv: np.ndarray,
    ret: np.ndarray,
    *,
    vf_coef: float = 0.5,
) -> tuple[float, np.ndarray, dict]:
    """Clipped surrogate minus value loss, with its exact gradient.

    Gradient ascent direction; verified against central finite differences
    in the acceptance gate.
    """
    b = _unpack(p)
    obs = np.asarray(obs, dtype=np.float64)
    act = np.asarray(act, dtype=np.float64)
    N = obs.shape[0]

    z1 = obs @ b["W1"].T + b["b1"]
    h1 = np.tanh(z1)
    z2 = h1 @ b["W2"].T + b["b2"]
    mean = np.tanh(z2)
    std = np.exp(b["log_std"])
    zn = (act - mean) / std
    logp = np.sum(-0.5 * zn**2 - b["log_std"] - 0.5 * _LOG_2PI, axis=1)
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - p.clip_eps, 1.0 + p.clip_eps)
    surr_unclipped = ratio * adv
    surr = np.minimum(surr_unclipped, clipped * adv)
    j_pg = float(np.mean(surr))

    zv1 = obs @ b["Wv1"].T + b["bv1"]
    hv = np.tanh(zv1)
    v = (hv @ b["Wv2"].T + b["bv2"])[:, 0]
    v_err = v - ret
    j = j_pg - vf_coef * float(np.mean(v_err**2))

    # backward pass
    grad = {name: np.zeros_like(arr) for name, arr in b.items()}
    flows = (surr_unclipped <= clipped * adv).astype(np.float64)  # min picks the ratio branch
    g_logp = flows * ratio * adv / N
    d_mean = g_logp[:, None] * zn / std
    grad["log_std"] = np.sum(g_logp[:, None] * (zn**2 - 1.0), axis=0)
    d_z2 = d_mean * (1.0 - mean**2)
    grad["W2"] = d_z2.T @ h1
    grad["b2"] = d_z2.sum(axis=0)
    d_h1 = d_z2 @ b["W2"]
    d_z1 = d_h1 * (1.0 - h1**2)
    grad["W1"] = d_z1.T @ obs
    grad["b1"] = d_z1.sum(axis=0)

    d_v = -vf_coef * 2.0 * v_err / N
    grad["Wv2"] = (d_v[:, None] * hv).sum(axis=0)[None, :]
    grad["bv2"] = np.array([d_v.sum()])
    d_hv = d_v[:, None] * b["Wv2"][0][None, :]
    d_zv1 = d_hv * (1.0 - hv**2)
    grad["Wv1"] = d_zv1.T @ obs
    grad["bv1"] = d_zv1.sum(axis=0)

    flat = np.concatenate([grad[name].ravel() for name in _BLOCKS])
    if not np.all(np.isfinite(flat)):
        bad = [name for name in _BLOCKS if not np.all(np.isfinite(grad[name]))]
        raise NumericalError(f"non-finite gradient in {', '.join(bad)}")
    diag = {
        "mean_ratio": float(np.mean(ratio)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > p.clip_eps)),
        "surrogate": j_pg,
        "value_loss": float(np.mean(v_err**2)),
    }
    return j, flat, diag


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = float(np.std(adv))
    return (adv - np.mean(adv)) / max(std, 1e-8)


def ppo_update(
    p: PolicyParams,
    trajs: list[Trajectory],
    *,
    epochs: int = 4,
    minibatch: int = 64,
    vf_coef: float = 0.5,
    rng: np.random.Generator | None = None,
) -> tuple[PolicyParams, dict]:
    """One update over a batch of trajectories; returns a new PolicyParams.

    Advantages are batch-normalized; minibatches are shuffled from the
    supplied substream; Adam ascends the objective for the given epochs.
    """
    if not trajs:
        raise DomainError("ppo_update needs at least one trajectory")
    rng = rng or np.random.default_rng(0)
    obs = np.concatenate([t.obs for t in trajs])
    act = np.concatenate([t.actions for t in trajs])
    logp = np.concatenate([t.logps for t in trajs])
    advs, rets = [], []
    for t in trajs:
        a, r = compute_gae(t, p.gamma, p.lam)
        advs.append(a)
        rets.append(r)
    adv = normalize_advantages(np.concatenate(advs))
    ret = np.concatenate(rets)

    theta = p.theta.copy()
    new = replace(p, theta=theta)
    m = np.zeros_like(theta)
    s = np.zeros_like(theta)
    t_step = 0
    n = obs.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, minibatch):
            sel = order[lo : lo + minibatch]
            _, g, _ = objective_and_grad(
                new, obs[sel], act[sel], logp[sel], adv[sel], ret[sel], vf_coef=vf_coef
            )
            t_step += 1
            m = 0.9 * m + 0.1 * g
            s = 0.999 * s + 0.001 * g**2
            m_hat = m / (1.0 - 0.9**t_step)
            s_hat = s / (1.0 - 0.999**t_step)
            theta += p.lr * m_hat / (np.sqrt(s_hat) + 1e-8)
    _, _, diag = objective_and_grad(new, obs, act, logp, adv, ret, vf_coef=vf_coef)
    return new, diag


# === tabular Q-learning ===


@dataclass
class QTable:
    q: np.ndarray  # (n_states, n_actions)
    gamma: float

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.q.ndim != 2:
            raise DomainError("Q table must be (n_states, n_actions)")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")

    def greedy(self) -> np.ndarray:
        return np.argmax(self.q, axis=1)


def q_update(table: QTable, s: int, a: int, reward: float, s_next, alpha_lr: float) -> QTable:
    """One-transition backup; ``s_next=None`` marks a terminal transition."""
    n_s, n_a = table.q.shape
    if not (0 <= s < n_s and 0 <= a < n_a):
        raise DomainError("state or action index out of range")
    if s_next is not None and not 0 <= s_next < n_s:
        raise DomainError("next-state index out of range")
    if not 0.0 < alpha_lr <= 1.0:
        raise DomainError("alpha_lr must lie in (0, 1]")
    target = reward if s_next is None else reward + table.gamma * float(np.max(table.q[s_next]))
    table.q[s, a] += alpha_lr * (target - table.q[s, a])
    return table


class ChainRoutingMdp:
    """Four-state routing chain: forward hops pay only on the last link,
    a shortcut pays 0.85 straight to the terminal. With gamma = 0.9 the
    optimal route takes the shortcut at state 0 and forwards elsewhere.
    """

    n_states = 4
    n_actions = 2
    terminal = 3
    FORWARD, SHORTCUT = 0, 1

    def step(self, s: int, a: int) -> tuple[int | None, float]:
        if s == self.terminal:
            raise DomainError("terminal state has no transitions")
        if a == self.FORWARD:
            s_next = s + 1
            reward = 1.0 if s == 2 else 0.0
        elif a == self.SHORTCUT:
            s_next = self.terminal
            reward = 0.85
        else:
            raise DomainError("unknown action")
        return (None if s_next == self.terminal else s_next), reward


def run_q_learning(
    mdp: ChainRoutingMdp,
    n_updates: int,
    *,
    gamma: float = 0.9,
    epsilon: float = 0.3,
    alpha_lr: float | str = "visit",
    seed=0,
    checkpoint_every: int | None = None,
) -> tuple[QTable, list[np.ndarray]]:
    """Epsilon-greedy Q-learning on the routing chain.

    alpha_lr is either a constant step or "visit" for the 1/visit-count
    schedule. On this deterministic MDP a constant alpha_lr = 1 reaches the
    fixed point exactly (each backup is an asynchronous value-iteration
    entry). Optional checkpoints return Q-table snapshots every
    ``checkpoint_every`` updates.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x71]))
    table = QTable(q=np.zeros((mdp.n_states, mdp.n_actions)), gamma=gamma)
    counts = np.zeros((mdp.n_states, mdp.n_actions), dtype=np.int64)
    snaps: list[np.ndarray] = []
    s = int(rng.integers(0, mdp.terminal))
    for i in range(n_updates):
        if rng.random() < epsilon:
            a = int(rng.integers(0, mdp.n_actions))
        else:
            a = int(np.argmax(table.q[s]))
        s_next, reward = mdp.step(s, a)
        counts[s, a] += 1
        alpha = 1.0 / counts[s, a] if alpha_lr == "visit" else float(alpha_lr)
        q_update(table, s, a, reward, s_next, alpha)
        s = int(rng.integers(0, mdp.terminal)) if s_next is None else s_next
        if checkpoint_every and (i + 1) % checkpoint_every == 0:
            snaps.append(table.q.copy())
    return table, snaps


# === tuning environment ===


@dataclass(frozen=True)
class RewardWeights:
    quality: float = 0.8
    latency: float = 0.1
    energy: float = 0.1

    def __post_init__(self):
        w = (self.quality, self.latency, self.energy)
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise DomainError("reward weights must be a simplex")


ACTION_BOUNDS = np.array([0.25, 3.0, 3.0, 45.0])  # d_mu, d_trim_lo_db, d_trim_hi_db, d_steer_deg


@dataclass
class Action:
    """Bounded parameter deltas: (aec mu, low/high band trims dB, steering deg)."""

    deltas: np.ndarray

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if self.deltas.shape != ACTION_BOUNDS.shape:
            raise DomainError(f"action needs {len(ACTION_BOUNDS)} deltas")
        if np.any(np.abs(self.deltas) > ACTION_BOUNDS * (1 + 1e-12)):
            raise DomainError("action deltas exceed the documented bounds")


@dataclass
class EnvState:
    band_log_powers: np.ndarray  # (8,) grouped log10 subband powers
    mu: float
    trim_lo_db: float
    trim_hi_db: float
    steer_deg: float
    srp_confidence: float
    srp_offset: float  # SRP argmax minus steering, wrapped, /180

    def vector(self) -> np.ndarray:
        az = np.radians(self.steer_deg)
        return np.concatenate(
            [
                self.band_log_powers,
                [
                    self.mu,
                    self.trim_lo_db / 12.0,
                    self.trim_hi_db / 12.0,
                    np.sin(az),
                    np.cos(az),
                    self.srp_confidence,
                    self.srp_offset,
                ],
            ]
        )


OBS_DIM = 8 + 7
ACT_DIM = len(ACTION_BOUNDS)

# deterministic latency proxy: modeled operations one realtime budget affords
_OPS_BUDGET_PER_SAMPLE = 4000.0


class TuningEnv:
    """Front-end tuning loop over a rendered scene.

    Chunks advance cyclically; each step applies the action's deltas, runs
    beamformer -> subband AEC -> band gains on the current chunk, and scores
    the result. Every quantity is a deterministic function of the scenario
    seed and the action sequence; the latency term in the reward is a
    modeled compute cost, not a wall clock.
    """

    def __init__(
        self,
        scenario: ScenarioConfig,
        weights: RewardWeights = RewardWeights(),
        *,
        chunk_seconds: float = 0.2,
        horizon: int = 16,
        init_steer_offset_deg: float = 30.0,
        init_mu: float = 0.0,
        m_bands: int = 64,
        aec_taps: int = 4,
    ):
        if horizon < 1:
            raise DomainError("horizon must be at least one step")
        self.scenario = scenario
        self.weights = weights
        self.horizon = horizon
        fs = scenario.room.fs
        self.rendered: RenderedScene = render_scene(scenario)
        self.chunk = int(round(chunk_seconds * fs))
        n = self.rendered.mics.shape[1]
        if self.chunk > n:
            raise DomainError("chunk longer than the rendered scene")
        self.n_chunks = n // self.chunk
        self.geom = MicArrayGeometry(
            positions=np.asarray(scenario.mic_positions, dtype=np.float64),
            fs=fs,
            c=scenario.room.c,
        )
        self.bank = FilterBankSpec(m_bands=m_bands, hop=m_bands // 2, fs=fs)
        self.aec_taps = aec_taps
        self.init_steer = (self.rendered.true_azimuth_deg + init_steer_offset_deg) % 360.0
        self.init_mu = init_mu
        # per-band noise floor from a noise-only render of the same scenario
        noise_cfg = replace(scenario, snr_db=-60.0)
        noise_scene = render_scene(noise_cfg)
        ns = fb_analyze(self.bank, noise_scene.mics[0, : self.chunk])
        self.noise_band_var = np.mean(np.abs(ns.bands) ** 2, axis=1)
        self.noise_ref = float(np.mean(self.noise_band_var)) or 1.0
        self._modeled_rtf = self._latency_proxy()
        self.reset()

    def _latency_proxy(self) -> float:
        n = self.chunk
        m, L, P = self.bank.m_bands, self.bank.hop, self.bank.n_taps
        frames = n / L
        ops = (
            self.geom.n_mics * n * 8.0  # beamformer interpolation
            + 2 * frames * (P + 4 * m * np.log2(m))  # two analyses + synthesis share
            + frames * m * self.aec_taps * 6.0  # NLMS estimate + update
            + 18 * self.geom.n_mics * n  # SRP scan at the observation grid
        )
        return float(ops / (n * _OPS_BUDGET_PER_SAMPLE))

    def reset(self) -> EnvState:
        self.mu = float(self.init_mu)
        self.trim_lo = 0.0
        self.trim_hi = 0.0
        self.steer = float(self.init_steer)
        self.step_count = 0
        self.chunk_idx = 0
        self.state = self._process()[0]
        return self.state

    def _band_gains(self) -> np.ndarray:
        m = self.bank.m_bands
        trims = np.empty(m)
        trims[: m // 2] = 10.0 ** (self.trim_lo / 20.0)
        trims[m // 2 :] = 10.0 ** (self.trim_hi / 20.0)
        profile = BandGainProfile(
            noise_var=self.noise_band_var,
            state_feat=0.0,
            prefs=trims,
            g_min=0.05,
            g_max=4.0,
            noise_ref=self.noise_ref,
        )
        return band_gain(profile)

    def _process(self) -> tuple[EnvState, float]:
        lo = self.chunk_idx * self.chunk
        mics = self.rendered.mics[:, lo : lo + self.chunk]
        y = beamform_das(self.geom, das_weights(self.geom, self.steer), mics)
        y_sub = fb_analyze(self.bank, y)
        if self.rendered.far_end is not None:
            far_sub = fb_analyze(self.bank, self.rendered.far_end[lo : lo + self.chunk])
            aec = make_aec(self.bank.m_bands, self.aec_taps, mu=self.mu)
            y_sub, _ = aec_process(aec, far_sub, y_sub)
        gains = self._band_gains()
        y_sub = apply_spectral_mask(
            y_sub, np.broadcast_to(np.clip(gains, 0.0, 1.0)[:, None], y_sub.bands.shape)
        )
        enhanced = fb_synthesize(self.bank, y_sub)

        ref = self.rendered.clean_ref[lo : lo + self.chunk]
        quality_raw = si_snr(ref, enhanced) - si_snr(ref, mics[0])
        q_hat = (np.clip(quality_raw, -10.0, 30.0) + 10.0) / 40.0

        sub = mics[:, : min(self.chunk, 2048)]
        az, curve = srp_localize(self.geom, sub, AzimuthGrid(n_points=18))
        conf = float(np.clip(curve.max() / max(curve.mean(), 1e-300) - 1.0, 0.0, 3.0) / 3.0)
        offset = float(((az - self.steer + 180.0) % 360.0 - 180.0) / 180.0)

        powers = np.abs(y_sub.bands) ** 2
        groups = powers.reshape(8, -1, powers.shape[1]).mean(axis=(1, 2))
        logp = np.clip((np.log10(groups + 1e-300) + 12.0) / 12.0, -1.0, 2.0)
        state = EnvState(
            band_log_powers=logp,
            mu=self.mu,
            trim_lo_db=self.trim_lo,
            trim_hi_db=self.trim_hi,
            steer_deg=self.steer,
            srp_confidence=conf,
            srp_offset=offset,
        )
        return state, float(q_hat)

    def step(self, action: Action) -> tuple[EnvState, float, bool]:
        if self.step_count >= self.horizon:
            raise DomainError("episode is done; reset the env")
        d = action.deltas
        self.mu = float(np.clip(self.mu + d[0], 0.0, 1.0))
        self.trim_lo = float(np.clip(self.trim_lo + d[1], -12.0, 12.0))
        self.trim_hi = float(np.clip(self.trim_hi + d[2], -12.0, 12.0))
        self.steer = float((self.steer + d[3]) % 360.0)
        self.state, q_hat = self._process()
        latency = min(self._modeled_rtf, 1.0)
        energy = min(float(np.linalg.norm(d / ACTION_BOUNDS) / np.sqrt(len(d))), 1.0)
        reward = (
            self.weights.quality * q_hat
            - self.weights.latency * latency
            - self.weights.energy * energy
        )
        self.step_count += 1
        self.chunk_idx = (self.chunk_idx + 1) % self.n_chunks
        return self.state, float(reward), self.step_count >= self.horizon


def env_step(env: TuningEnv, action: Action) -> tuple[EnvState, float, bool]:
    """Advance the tuning loop one action; see TuningEnv.step."""
    return env.step(action)


# === training loop ===


def clipped_action(raw: np.ndarray) -> Action:
    return Action(deltas=np.clip(raw, -1.0, 1.0) * ACTION_BOUNDS)


def _rollout(env: TuningEnv, p: PolicyParams, rng: np.random.Generator) -> Trajectory:
    obs_l, act_l, logp_l, rew_l, val_l, done_l = [], [], [], [], [], []
    state = env.reset()
    for _ in range(env.horizon):
        o = state.vector()
        raw, logp = sample_actions(p, o[None, :], rng)
        state, reward, done = env.step(clipped_action(raw[0]))
        obs_l.append(o)
        act_l.append(raw[0])
        logp_l.append(logp[0])
        rew_l.append(reward)
        val_l.append(value(p, o[None, :])[0])
        done_l.append(done)
        if done:
            break
    return Trajectory(
        obs=np.asarray(obs_l),
        actions=np.asarray(act_l),
        logps=np.asarray(logp_l),
        rewards=np.asarray(rew_l),
        values=np.asarray(val_l),
        dones=np.asarray(done_l, dtype=bool),
        bootstrap_value=0.0,
    )


def train_tuning_policy(
    scenarios: list[ScenarioConfig],
    policy: PolicyParams,
    budget: int,
    *,
    seed=0,
    weights: RewardWeights = RewardWeights(),
    horizon: int = 16,
    chunk_seconds: float = 0.2,
    episodes_per_update: int = 4,
    epochs: int = 4,
    minibatch: int = 64,
    env_kwargs: dict | None = None,
) -> tuple[PolicyParams, list[dict]]:
    """PPO over the tuning envs; returns the policy and per-episode curve rows.

    The root seed feeds named substreams (rollout, minibatch shuffle) so a
    rerun with the same seed reproduces the learning curve bit for bit.
    """
    if not scenarios:
        raise DomainError("need at least one scenario")
    if budget < max(1000, horizon):
        raise DomainError("training budget below one episode (and the 1e3 floor)")
    envs = [
        TuningEnv(s, weights, chunk_seconds=chunk_seconds, horizon=horizon, **(env_kwargs or {}))
        for s in scenarios
    ]
    ss = np.random.SeedSequence([int(seed), 0x5EED])
    rollout_rng, shuffle_rng = (np.random.default_rng(k) for k in ss.spawn(2))
    rows: list[dict] = []
    steps = 0
    episode = 0
    env_idx = 0
    while steps < budget:
        trajs = []
        for _ in range(episodes_per_update):
            env = envs[env_idx % len(envs)]
            env_idx += 1
            t = _rollout(env, policy, rollout_rng)
            trajs.append(t)
            steps += len(t)
        policy, diag = ppo_update(
            policy, trajs, epochs=epochs, minibatch=minibatch, rng=shuffle_rng
        )
        for t in trajs:
            rows.append(
                {
                    "episode": episode,
                    "mean_reward": f"{float(np.mean(t.rewards)):.6f}",
                    "clip_fraction": f"{diag['clip_fraction']:.6f}",
                    "mean_ratio": f"{diag['mean_ratio']:.6f}",
                }
            )
            episode += 1
    return policy, rows
